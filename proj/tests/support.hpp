#pragma once

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <unistd.h>

#include "multimix/config.hpp"
#include "multimix/rng.hpp"
#include "multimix/tensor.hpp"

namespace testing {

using namespace multimix;

inline Tensor random_tensor(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
    Tensor t(c, h, w);
    for (double& v : t.data) v = uniform(rng, lo, hi);
    return t;
}

inline Tensor random_mask(std::mt19937_64& rng, int h, int w, double p = 0.3) {
    Tensor t = make_image(h, w);
    for (double& v : t.data) v = uniform01(rng) < p ? 1.0 : 0.0;
    return t;
}

inline ModelConfig tiny_model(int size = 16, int depth = 2, int base = 2) {
    ModelConfig m;
    m.input_height = size;
    m.input_width = size;
    m.depth = depth;
    m.base_channels = base;
    return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("multimix_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

}  // namespace testing
