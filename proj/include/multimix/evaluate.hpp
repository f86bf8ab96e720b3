#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "multimix/data.hpp"
#include "multimix/metrics.hpp"
#include "multimix/model.hpp"

namespace multimix {

struct SamplePrediction {
    std::string id;
    std::optional<int> predicted_class;
    Tensor seg_probs;  // empty without a decoder
};

// Inference mode, no augmentation. Classification metrics cover samples with
// a class label, segmentation metrics those with a mask; heads the model
// lacks leave their fields absent.
MetricsReport evaluate(const Network& net, const ParameterSet& params, const std::vector<Sample>& samples,
                       const std::string& domain = "in", std::vector<SamplePrediction>* predictions = nullptr);

// Loads the checkpoint and the manifest at the checkpoint's input size.
MetricsReport evaluate_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                  const std::string& domain = "in");

}  // namespace multimix
