#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "multimix/tensor.hpp"

namespace multimix {

struct SynthConfig {
    std::size_t n = 100;
    double positive_fraction = 0.5;
    int image_size = 256;
    std::uint64_t seed = 0;
    double noise_sigma = 0.03;
    // Bright structures outside the lungs (a spine band and rib-like arcs)
    // that are not part of the mask. 0 disables them.
    double clutter = 0.0;

    void validate() const;
};

struct SynthEllipse {
    double cy = 0, cx = 0, ry = 0, rx = 0, intensity = 0;
};

struct SynthBlob {
    double cy = 0, cx = 0, radius = 0, intensity = 0;
};

struct SynthSample {
    std::string id;
    Tensor image;
    Tensor mask;  // union of the two ellipses
    int class_label = 0;
    std::vector<SynthEllipse> lungs;
    std::vector<SynthBlob> blobs;
    bool shifted = false;

    std::string metadata_json() const;
};

// Indices of the round(n * positive_fraction) positive samples.
std::vector<bool> synth_positive_flags(const SynthConfig& cfg);

// In-memory rendering of sample `index`; the shifted domain applies a global
// gamma shift and changes the ellipse aspect ratio.
SynthSample render_synthetic(const SynthConfig& cfg, std::size_t index, bool positive, bool shifted);

// Writes images/, masks/, manifest.csv and metadata.jsonl into out_dir, and
// the same layout for the shifted domain under out_dir/shifted.
void synth_generate(const std::filesystem::path& out_dir, const SynthConfig& cfg);

}  // namespace multimix
