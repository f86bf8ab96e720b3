#include "multimix/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

cv::Mat to_mat(const Tensor& image) {
    cv::Mat m(image.height, image.width, CV_64F);
    std::copy(image.data.begin(), image.data.begin() + image.plane(), m.ptr<double>());
    return m;
}

Tensor from_mat(const cv::Mat& m) {
    Tensor t(1, m.rows, m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const double* row = m.ptr<double>(y);
        std::copy(row, row + m.cols, t.data.begin() + static_cast<std::ptrdiff_t>(y) * m.cols);
    }
    return t;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& m) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception& e) {
        throw IoError("cannot write '" + path.string() + "': " + e.what());
    }
    if (!ok) throw IoError("cannot write '" + path.string() + "'");
}

}  // namespace

GrayImage read_gray(const std::filesystem::path& path) {
    cv::Mat raw;
    try {
        raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    } catch (const cv::Exception& e) {
        throw LoadError("cannot decode '" + path.string() + "': " + e.what());
    }
    if (raw.empty()) throw LoadError("cannot decode '" + path.string() + "'");
    if (raw.channels() == 3) cv::cvtColor(raw, raw, cv::COLOR_BGR2GRAY);
    else if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2GRAY);
    GrayImage out;
    double scale = 0.0;
    switch (raw.depth()) {
        case CV_8U: out.bit_depth = 8; scale = 1.0 / 255.0; break;
        case CV_16U: out.bit_depth = 16; scale = 1.0 / 65535.0; break;
        default: throw LoadError("'" + path.string() + "' is not an 8- or 16-bit grayscale image");
    }
    cv::Mat f;
    raw.convertTo(f, CV_64F, scale);
    out.pixels = from_mat(f);
    return out;
}

void write_gray8(const std::filesystem::path& path, const Tensor& image) {
    cv::Mat m(image.height, image.width, CV_8U);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            m.at<std::uint8_t>(y, x) =
                static_cast<std::uint8_t>(std::lround(std::clamp(image.at(0, y, x), 0.0, 1.0) * 255.0));
    write_or_throw(path, m);
}

void write_gray16(const std::filesystem::path& path, const Tensor& image) {
    cv::Mat m(image.height, image.width, CV_16U);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            m.at<std::uint16_t>(y, x) =
                static_cast<std::uint16_t>(std::lround(std::clamp(image.at(0, y, x), 0.0, 1.0) * 65535.0));
    write_or_throw(path, m);
}

void write_rgb8(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.channels != 3) throw InputError("write_rgb8 expects three channels");
    cv::Mat m(rgb.height, rgb.width, CV_8UC3);
    for (int y = 0; y < rgb.height; ++y)
        for (int x = 0; x < rgb.width; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)  // OpenCV stores BGR
                px[2 - c] = static_cast<std::uint8_t>(std::lround(std::clamp(rgb.at(c, y, x), 0.0, 1.0) * 255.0));
        }
    write_or_throw(path, m);
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    cv::Mat out;
    cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    return from_mat(out);
}

Tensor resize_nearest(const Tensor& image, int height, int width) {
    if (image.height == height && image.width == width) return image;
    cv::Mat out;
    cv::resize(to_mat(image), out, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
    return from_mat(out);
}

}  // namespace multimix
