#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "multimix/config.hpp"
#include "multimix/layers.hpp"
#include "multimix/params.hpp"
#include "multimix/tensor.hpp"

namespace multimix {

enum class Mode { train, infer };

// One row per sample.
using Logits = Eigen::MatrixXd;

struct PredictionBundle {
    Logits class_logits;  // 0 rows when the classifier is disabled
    Batch seg_probs;      // empty when the decoder is disabled
    Batch saliency;       // empty when the classifier is disabled
};

struct Encoded {
    std::vector<Batch> skips;  // one batch per encoder stage, shallowest first
    Batch bottleneck;
};

// Forward caches for one sample. Kept separate per head so a training step
// only pays for the heads its losses use.
struct UnitTrace {
    Tensor input;
    nn::InstanceNormCache norm;
    std::vector<double> dropout;  // empty in inference mode
};

struct StageTrace {
    UnitTrace first;
    UnitTrace second;
};

struct EncoderTrace {
    std::vector<StageTrace> stages;
    std::vector<std::vector<int>> pool_argmax;
    StageTrace bottleneck_stage;
    std::vector<Tensor> skips;
    Tensor bottleneck;
};

struct ClassifierTrace {
    bool halved = false;
    Tensor pooled;
    std::vector<double> features;
};

struct DecoderTrace {
    std::vector<StageTrace> stages;  // indexed by encoder level
    Tensor head_input;
};

struct SampleTrace {
    EncoderTrace encoder;
    bool classified = false;
    ClassifierTrace classifier;
    std::vector<double> logits;
    bool decoded = false;
    Tensor saliency;       // empty unless the bridge ran
    Tensor bridge_pooled;  // 2 x h_b x w_b bridge input
    DecoderTrace decoder;
    Tensor seg_probs;
};

// Deterministic fan-in uniform initialization with zero biases.
ParameterSet build_model(const ModelConfig& config, std::uint64_t seed);

// |gradient| scaled so the per-image maximum is 1; an all-zero map stays zero.
Tensor normalize_saliency(const Tensor& gradient);

// Saliency for any classifier exposing
//   std::vector<double> logits(const Tensor&) const
//   Tensor input_gradient(const Tensor&, int class_index) const
// using the argmax (predicted) class.
template <class Classifier>
Batch compute_saliency_with(const Classifier& classifier, const Batch& images) {
    Batch out;
    out.reserve(images.size());
    for (const auto& image : images) {
        const auto logits = classifier.logits(image);
        int best = 0;
        for (int k = 1; k < static_cast<int>(logits.size()); ++k)
            if (logits[k] > logits[best]) best = k;
        out.push_back(normalize_saliency(classifier.input_gradient(image, best)));
    }
    return out;
}

// The shared encoder-decoder with classification branch and saliency bridge.
// Stateless apart from its configuration; a ParameterSet passed to const
// methods is only read.
class Network {
public:
    explicit Network(ModelConfig config);

    const ModelConfig& config() const { return config_; }

    // Throws VersionError when names or shapes differ from what the config implies.
    void check_params(const ParameterSet& params) const;

    Encoded encode(const ParameterSet& params, const Batch& images, Mode mode = Mode::infer,
                   std::uint64_t dropout_seed = 0) const;
    Logits classify(const ParameterSet& params, const Batch& bottleneck) const;
    Batch compute_saliency(const ParameterSet& params, const Batch& images) const;
    Batch bridge_inject(const ParameterSet& params, const Batch& saliency, const Batch& images,
                        const Batch& bottleneck) const;
    Batch decode(const ParameterSet& params, const std::vector<Batch>& skips, const Batch& injected) const;
    PredictionBundle forward_multitask(const ParameterSet& params, const Batch& images, Mode mode,
                                       std::uint64_t dropout_seed = 0) const;

    struct Heads {
        bool classify = true;
        bool decode = true;
    };

    // Training path. dropout_rng == nullptr means inference mode. When the
    // bridge runs and `saliency` is null the map is recomputed from `params`
    // in inference mode; either way it is treated as a constant.
    SampleTrace forward_sample(const ParameterSet& params, const Tensor& image, std::mt19937_64* dropout_rng,
                               Heads heads, const Tensor* saliency = nullptr) const;

    // Accumulates parameter gradients. dlogits may be empty and dseg_probs
    // null for heads that carry no loss.
    void backward_sample(const ParameterSet& params, const SampleTrace& trace, std::span<const double> dlogits,
                         const Tensor* dseg_probs, ParameterSet& grads) const;

    std::vector<double> logits(const ParameterSet& params, const Tensor& image) const;
    // d logit[class_index] / d image, inference mode.
    Tensor input_gradient(const ParameterSet& params, const Tensor& image, int class_index) const;
    Tensor saliency_sample(const ParameterSet& params, const Tensor& image) const;

private:
    void check_image(const Tensor& image) const;
    Tensor run_unit(const ParameterSet& params, const std::string& prefix, const Tensor& x,
                    std::mt19937_64* rng, UnitTrace& trace) const;
    Tensor run_stage(const ParameterSet& params, const std::string& prefix, const Tensor& x,
                     std::mt19937_64* rng, StageTrace& trace) const;
    Tensor unit_backward(const ParameterSet& params, const std::string& prefix, const UnitTrace& trace,
                         Tensor dy, ParameterSet* grads, bool want_dx) const;
    Tensor stage_backward(const ParameterSet& params, const std::string& prefix, const StageTrace& trace,
                          Tensor dy, ParameterSet* grads, bool want_dx) const;

    EncoderTrace encode_sample(const ParameterSet& params, const Tensor& image, std::mt19937_64* rng) const;
    Tensor encoder_backward(const ParameterSet& params, const EncoderTrace& trace, Tensor dbottleneck,
                            const std::vector<Tensor>& dskips, ParameterSet* grads, bool want_dx) const;

    std::vector<double> classify_sample(const ParameterSet& params, const Tensor& bottleneck,
                                        ClassifierTrace& trace) const;
    Tensor classifier_backward(const ParameterSet& params, const ClassifierTrace& trace,
                               std::span<const double> dlogits, ParameterSet* grads) const;

    Tensor bridge_input(const Tensor& saliency, const Tensor& image) const;
    Tensor bridge_sample(const ParameterSet& params, const Tensor& pooled, const Tensor& bottleneck) const;

    Tensor decode_sample(const ParameterSet& params, const std::vector<Tensor>& skips, const Tensor& injected,
                         std::mt19937_64* rng, DecoderTrace& trace) const;

    ModelConfig config_;
};

}  // namespace multimix
