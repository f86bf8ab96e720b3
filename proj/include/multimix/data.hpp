#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "multimix/augment.hpp"
#include "multimix/config.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

inline constexpr const char* kManifestHeader = "id,image_path,class_label,mask_path";

struct SampleDescriptor {
    std::string id;
    std::filesystem::path image_path;  // resolved against the manifest directory
    std::optional<int> class_label;
    std::optional<std::filesystem::path> mask_path;
    std::size_t line = 0;
};

// class_label: 0 = normal, 1 = pneumonia.
struct Sample {
    std::string id;
    Tensor image;
    std::optional<int> class_label;
    std::optional<Tensor> mask;
};

std::vector<SampleDescriptor> parse_manifest(const std::filesystem::path& path);

// Bilinear resize + bit-depth rescale; masks nearest + re-binarized at 0.5.
Sample load_and_standardize(const SampleDescriptor& d, int height = 256, int width = 256);
std::vector<Sample> load_dataset(const std::filesystem::path& manifest, int height, int width);

// Index views over one sample vector. Unlabeled pools hide labels at the view
// level: the samples keep them so evaluation can still use them.
struct Splits {
    std::vector<std::size_t> class_labeled;
    std::vector<std::size_t> class_unlabeled;
    std::vector<std::size_t> seg_labeled;
    std::vector<std::size_t> seg_unlabeled;

    bool operator==(const Splits&) const = default;
};

// Deterministic in spec.split_seed; class-labeled selection is stratified.
// Samples with neither label join both unlabeled pools.
Splits split_labeled(const std::vector<Sample>& samples, const SplitSpec& spec);

struct BatchBundle {
    Batch class_labeled;
    std::vector<int> class_labels;
    Batch class_unlabeled_weak;
    Batch class_unlabeled_strong;  // index-aligned with the weak views
    Batch seg_labeled;
    Batch seg_masks;
    Batch seg_unlabeled;

    // Sample indices per stream, in stream order.
    std::vector<std::size_t> class_labeled_ids;
    std::vector<std::size_t> class_unlabeled_ids;
    std::vector<std::size_t> seg_labeled_ids;
    std::vector<std::size_t> seg_unlabeled_ids;
};

// Streams to materialize; skipped streams are left empty.
struct StreamMask {
    bool class_labeled = true;
    bool class_unlabeled = true;
    bool seg_labeled = true;
    bool seg_unlabeled = true;
};

// One epoch of four-stream bundles. The largest pool is traversed without
// replacement (wrapping to fill the final bundle); every smaller non-empty
// pool is sampled with replacement. Bundles are built on demand and are a
// pure function of (seed, epoch, step).
class BatchComposer {
public:
    BatchComposer(const std::vector<Sample>& samples, const Splits& splits, int batch_size, std::uint64_t seed,
                  int epoch, AugPolicy policy = {}, StreamMask mask = {});

    std::size_t steps() const { return steps_; }
    BatchBundle bundle(std::size_t step) const;

private:
    std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, const std::vector<std::size_t>& perm,
                                  bool traverse, std::size_t step, std::uint64_t pool_id) const;

    const std::vector<Sample>& samples_;
    Splits splits_;
    int batch_size_;
    std::uint64_t seed_;
    int epoch_;
    AugPolicy policy_;
    StreamMask mask_;
    std::size_t steps_ = 0;
    std::size_t largest_ = 0;
    std::vector<std::vector<std::size_t>> perms_;
};

}  // namespace multimix
