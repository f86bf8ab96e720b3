#include "multimix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

void check_labels(std::span<const int> pred, std::span<const int> truth) {
    if (pred.size() != truth.size()) throw InputError("prediction and reference lengths differ");
    if (pred.empty()) throw InputError("metric over an empty label set");
}

void check_masks(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw InputError("mask shapes differ");
}

bool fg(double v) { return v >= 0.5; }

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void dt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = 0;
    int first = -1;
    for (int q = 0; q < n; ++q)
        if (f[q] < kInf) {
            first = q;
            break;
        }
    if (first < 0) {
        std::fill(d, d + n, kInf);
        return;
    }
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = first + 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        double s;
        while (true) {
            const int p = v[k];
            s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // k == 0 and the new parabola dominates everywhere
            v[0] = q;
            z[0] = -kInf;
            z[1] = kInf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        const double dq = q - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace

double accuracy(std::span<const int> pred, std::span<const int> truth) {
    check_labels(pred, truth);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

F1Result f1_class(std::span<const int> pred, std::span<const int> truth, int positive) {
    check_labels(pred, truth);
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == positive, t = truth[i] == positive;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    if (precision + recall == 0.0) return {0.0, true};
    return {2.0 * precision * recall / (precision + recall), false};
}

Tensor binarize(const Tensor& map, double threshold) {
    Tensor out = map;
    for (double& v : out.data) v = v >= threshold ? 1.0 : 0.0;
    return out;
}

double dice_score(const Tensor& pred, const Tensor& truth) {
    check_masks(pred, truth);
    double inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = fg(pred.data[i]), t = fg(truth.data[i]);
        inter += p && t;
        a += p;
        b += t;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * inter / (a + b);
}

Tensor squared_distance_transform(const Tensor& mask) {
    const int h = mask.height, w = mask.width;
    Tensor d(1, h, w);
    std::vector<double> col(h), out(std::max(h, w));
    std::vector<int> v;
    std::vector<double> z;
    for (int i = 0; i < h * w; ++i) d.data[i] = fg(mask.data[i]) ? 0.0 : kInf;
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) col[y] = d.data[y * w + x];
        dt_1d(col.data(), out.data(), h, v, z);
        for (int y = 0; y < h; ++y) d.data[y * w + x] = out[y];
    }
    std::vector<double> row(w);
    for (int y = 0; y < h; ++y) {
        std::copy(d.data.begin() + y * w, d.data.begin() + (y + 1) * w, row.begin());
        dt_1d(row.data(), out.data(), w, v, z);
        std::copy(out.begin(), out.begin() + w, d.data.begin() + y * w);
    }
    return d;
}

double avg_hausdorff(const Tensor& pred, const Tensor& truth) {
    check_masks(pred, truth);
    std::size_t na = 0, nb = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        na += fg(pred.data[i]);
        nb += fg(truth.data[i]);
    }
    if (na == 0 && nb == 0) return 0.0;
    if (na == 0 || nb == 0) return std::hypot(static_cast<double>(pred.height), static_cast<double>(pred.width));
    const Tensor to_a = squared_distance_transform(pred);
    const Tensor to_b = squared_distance_transform(truth);
    double sum_ab = 0.0, sum_ba = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        if (fg(pred.data[i])) sum_ab += std::sqrt(to_b.data[i]);
        if (fg(truth.data[i])) sum_ba += std::sqrt(to_a.data[i]);
    }
    return 0.5 * (sum_ab / static_cast<double>(na) + sum_ba / static_cast<double>(nb));
}

std::array<double, kSsimWindow> ssim_gaussian_taps() {
    std::array<double, kSsimWindow> g{};
    double sum = 0.0;
    const int r = kSsimWindow / 2;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - r;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

double ssim(const Tensor& a, const Tensor& b) {
    check_masks(a, b);
    const int h = a.height, w = a.width;
    if (h < kSsimWindow || w < kSsimWindow) throw InputError("ssim: image smaller than the 11x11 window");
    const auto g = ssim_gaussian_taps();
    const int oh = h - kSsimWindow + 1, ow = w - kSsimWindow + 1;

    // Valid-mode separable filtering of x, y, x^2, y^2, xy.
    auto filter = [&](auto&& value) {
        std::vector<double> horiz(static_cast<std::size_t>(h) * ow, 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < kSsimWindow; ++k) s += g[k] * value(y * w + x + k);
                horiz[static_cast<std::size_t>(y) * ow + x] = s;
            }
        std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                double s = 0.0;
                for (int k = 0; k < kSsimWindow; ++k) s += g[k] * horiz[static_cast<std::size_t>(y + k) * ow + x];
                out[static_cast<std::size_t>(y) * ow + x] = s;
            }
        return out;
    };
    const auto& xa = a.data;
    const auto& xb = b.data;
    const auto mu_a = filter([&](int i) { return xa[i]; });
    const auto mu_b = filter([&](int i) { return xb[i]; });
    const auto ea2 = filter([&](int i) { return xa[i] * xa[i]; });
    const auto eb2 = filter([&](int i) { return xb[i] * xb[i]; });
    const auto eab = filter([&](int i) { return xa[i] * xb[i]; });

    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = ea2[i] - mu_a[i] * mu_a[i];
        const double vb = eb2[i] - mu_b[i] * mu_b[i];
        const double cov = eab[i] - mu_a[i] * mu_b[i];
        total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

namespace {

std::string fmt3(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : "---"; }
std::string fmt_full(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : "---"; }

}  // namespace

std::string MetricsReport::csv_header() { return "Acc,F1-N,F1-P,DS,HD,SSIM"; }

std::string MetricsReport::to_csv_row() const {
    return fmt3(acc) + "," + fmt3(f1_normal) + "," + fmt3(f1_pneumonia) + "," + fmt3(dice) + "," + fmt3(ahd) + "," +
           fmt3(ssim);
}

std::string MetricsReport::to_record() const {
    std::ostringstream os;
    os << "domain=" << domain << " n_samples=" << n_samples << " n_classified=" << n_classified
       << " n_segmented=" << n_segmented << " acc=" << fmt_full(acc) << " f1_n=" << fmt_full(f1_normal)
       << " f1_p=" << fmt_full(f1_pneumonia) << " ds=" << fmt_full(dice) << " hd=" << fmt_full(ahd)
       << " ssim=" << fmt_full(ssim) << " hd_units=pixels seg_threshold=0.5 ssim_input=binarized";
    return os.str();
}

}  // namespace multimix
