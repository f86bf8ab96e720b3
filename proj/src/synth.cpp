#include "multimix/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "multimix/errors.hpp"
#include "multimix/image_io.hpp"
#include "multimix/rng.hpp"

namespace multimix {

namespace {

constexpr double kShiftGamma = 0.6;
constexpr double kShiftAspectX = 1.25;
constexpr double kShiftAspectY = 0.8;

bool inside(const SynthEllipse& e, double y, double x) {
    const double dy = (y - e.cy) / e.ry;
    const double dx = (x - e.cx) / e.rx;
    return dy * dy + dx * dx <= 1.0;
}

double gaussian(std::mt19937_64& rng) {
    // Box-Muller on the keyed engine so the stream is portable across
    // standard library implementations.
    const double u1 = std::max(uniform01(rng), 1e-300);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string sample_id(std::size_t index, bool shifted) {
    return fmt::format("{}{:05d}", shifted ? "x" : "s", index);
}

}  // namespace

void SynthConfig::validate() const {
    if (n < 1) throw ConfigError("synth n must be >= 1");
    if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
        throw ConfigError("positive_fraction must lie in [0, 1], got " + std::to_string(positive_fraction));
    if (image_size < 16) throw ConfigError("image_size must be >= 16");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
    if (!(clutter >= 0.0)) throw ConfigError("clutter must be >= 0");
}

std::string SynthSample::metadata_json() const {
    nlohmann::json j;
    j["id"] = id;
    j["class_label"] = class_label;
    j["blob_count"] = blobs.size();
    j["shifted"] = shifted;
    auto& lj = j["lungs"] = nlohmann::json::array();
    for (const auto& e : lungs)
        lj.push_back({{"cy", e.cy}, {"cx", e.cx}, {"ry", e.ry}, {"rx", e.rx}, {"intensity", e.intensity}});
    auto& bj = j["blobs"] = nlohmann::json::array();
    for (const auto& b : blobs)
        bj.push_back({{"cy", b.cy}, {"cx", b.cx}, {"radius", b.radius}, {"intensity", b.intensity}});
    return j.dump();
}

std::vector<bool> synth_positive_flags(const SynthConfig& cfg) {
    cfg.validate();
    const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n) * cfg.positive_fraction));
    std::vector<std::size_t> perm(cfg.n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto rng = make_rng({cfg.seed, static_cast<std::uint64_t>(RngStream::synth), 0xF1A65ULL});
    for (std::size_t i = perm.size(); i > 1; --i) {
        const auto j = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)), i - 1);
        std::swap(perm[i - 1], perm[j]);
    }
    std::vector<bool> flags(cfg.n, false);
    for (std::size_t k = 0; k < n_pos; ++k) flags[perm[k]] = true;
    return flags;
}

SynthSample render_synthetic(const SynthConfig& cfg, std::size_t index, bool positive, bool shifted) {
    const int s = cfg.image_size;
    const double S = s;
    auto rng = make_rng({cfg.seed, static_cast<std::uint64_t>(RngStream::synth), index, shifted ? 1ULL : 0ULL});

    SynthSample out;
    out.id = sample_id(index, shifted);
    out.shifted = shifted;
    out.class_label = positive ? 1 : 0;

    const double cy = S * uniform(rng, 0.46, 0.54);
    const double gap = S * uniform(rng, 0.14, 0.19);
    const double mid = S * uniform(rng, 0.47, 0.53);
    for (int side = 0; side < 2; ++side) {
        SynthEllipse e;
        e.cx = mid + (side == 0 ? -gap : gap) + S * uniform(rng, -0.02, 0.02);
        e.cy = cy + S * uniform(rng, -0.03, 0.03);
        e.rx = S * uniform(rng, 0.10, 0.14);
        e.ry = S * uniform(rng, 0.24, 0.32);
        if (shifted) {
            e.rx *= kShiftAspectX;
            e.ry *= kShiftAspectY;
        }
        e.intensity = uniform(rng, 0.35, 0.6);
        out.lungs.push_back(e);
    }

    if (positive) {
        const int k = 3 + static_cast<int>(uniform01(rng) * 6.0);  // 3..8
        while (static_cast<int>(out.blobs.size()) < k) {
            const auto& e = out.lungs[uniform01(rng) < 0.5 ? 0 : 1];
            SynthBlob b;
            b.cy = e.cy + e.ry * uniform(rng, -0.8, 0.8);
            b.cx = e.cx + e.rx * uniform(rng, -0.8, 0.8);
            b.radius = S * uniform(rng, 0.02, 0.04);
            b.intensity = uniform(rng, 0.3, 0.5);
            if (inside(e, b.cy, b.cx)) out.blobs.push_back(b);
        }
    }

    struct Arc {
        double cy, cx, r, intensity;
    };
    std::vector<Arc> arcs;
    double spine = 0.0;
    if (cfg.clutter > 0.0) {
        spine = cfg.clutter * uniform(rng, 0.3, 0.5);
        const int n_arcs = 4 + static_cast<int>(uniform01(rng) * 3.0);
        for (int a = 0; a < n_arcs; ++a)
            arcs.push_back({S * uniform(rng, 0.1, 0.8), mid + S * uniform(rng, -0.1, 0.1), S * uniform(rng, 0.3, 0.45),
                            cfg.clutter * uniform(rng, 0.15, 0.3)});
    }

    out.image = make_image(s, s);
    out.mask = make_image(s, s);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double py = y + 0.5, px = x + 0.5;
            double v = 0.0;
            bool fg = false;
            for (const auto& e : out.lungs) {
                if (inside(e, py, px)) {
                    fg = true;
                    // Gentle vertical shading keeps the lung field from being flat.
                    v = std::max(v, e.intensity * (0.85 + 0.3 * (py - (e.cy - e.ry)) / (2.0 * e.ry)));
                }
            }
            for (const auto& b : out.blobs) {
                const double d2 = (py - b.cy) * (py - b.cy) + (px - b.cx) * (px - b.cx);
                v += b.intensity * std::exp(-d2 / (2.0 * b.radius * b.radius));
            }
            if (spine > 0.0 && std::abs(px - mid) < S * 0.035) v = std::max(v, spine);
            for (const auto& a : arcs) {
                const double d = std::hypot(py - a.cy, px - a.cx) - a.r;
                if (std::abs(d) < S * 0.012) v += a.intensity;
            }
            v += cfg.noise_sigma * gaussian(rng);
            v = std::clamp(v, 0.0, 1.0);
            if (shifted) v = std::pow(v, kShiftGamma);
            out.image.at(0, y, x) = v;
            out.mask.at(0, y, x) = fg ? 1.0 : 0.0;
        }
    }
    return out;
}

void synth_generate(const std::filesystem::path& out_dir, const SynthConfig& cfg) {
    cfg.validate();
    const auto flags = synth_positive_flags(cfg);
    for (bool shifted : {false, true}) {
        const auto dir = shifted ? out_dir / "shifted" : out_dir;
        std::error_code ec;
        std::filesystem::create_directories(dir / "images", ec);
        std::filesystem::create_directories(dir / "masks", ec);
        if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
        std::ofstream manifest(dir / "manifest.csv");
        std::ofstream meta(dir / "metadata.jsonl");
        if (!manifest || !meta) throw IoError("cannot write into '" + dir.string() + "'");
        manifest << "id,image_path,class_label,mask_path\n";
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const auto sample = render_synthetic(cfg, i, flags[i], shifted);
            const auto img_rel = "images/" + sample.id + ".png";
            const auto mask_rel = "masks/" + sample.id + ".png";
            write_gray8(dir / img_rel, sample.image);
            write_gray8(dir / mask_rel, sample.mask);
            manifest << sample.id << ',' << img_rel << ',' << sample.class_label << ',' << mask_rel << '\n';
            meta << sample.metadata_json() << '\n';
        }
        manifest.flush();
        meta.flush();
        if (!manifest || !meta) throw IoError("failed writing manifest in '" + dir.string() + "'");
    }
}

}  // namespace multimix
