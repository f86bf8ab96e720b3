#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace multimix {

struct ModelConfig {
    int input_height = 256;
    int input_width = 256;
    int input_channels = 1;
    int num_classes = 2;
    int depth = 4;
    int base_channels = 32;
    double lrelu_slope = 0.2;
    double dropout_rate = 0.25;
    bool bridge_enabled = true;
    bool classifier_enabled = true;
    bool decoder_enabled = true;

    // Throws ConfigError naming the first violated invariant.
    void validate() const;

    int bottleneck_height() const { return input_height >> depth; }
    int bottleneck_width() const { return input_width >> depth; }
    int stage_channels(int stage) const { return base_channels << stage; }
    int bottleneck_channels() const { return base_channels << depth; }

    bool operator==(const ModelConfig&) const = default;
};

enum class UnsupDenominator { kept, batch };

struct LossConfig {
    double t = 0.7;
    double lambda_u = 0.25;
    // Unset means "resolve from the split": 5.0 for <= 50 labeled masks, else 1.0.
    std::optional<double> alpha;
    double beta = 0.01;
    double kl_epsilon = 1e-7;
    double dice_smooth = 1.0;
    UnsupDenominator unsup_denominator = UnsupDenominator::kept;

    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

// nullopt counts mean "full" (every labeled sample of that pool).
struct SplitSpec {
    std::optional<std::size_t> n_class_labeled;
    std::optional<std::size_t> n_seg_labeled;
    std::uint64_t split_seed = 0;

    bool operator==(const SplitSpec&) const = default;
};

double resolve_alpha(const LossConfig& loss, const SplitSpec& split);

struct AugOp {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;

    bool operator==(const AugOp&) const = default;
};

struct WeakAugConfig {
    double hflip_prob = 0.5;
    double rotation_deg = 10.0;
    double shift_frac = 0.1;

    bool operator==(const WeakAugConfig&) const = default;
};

struct StrongAugConfig {
    int ops_per_image = 2;
    std::vector<AugOp> pool = {
        {"rotate", -30.0, 30.0},   {"shear", -15.0, 15.0}, {"brightness", -0.3, 0.3},
        {"contrast", 0.5, 1.8},    {"gamma", 0.5, 2.0},    {"noise", 0.0, 0.05},
        {"blur", 0.0, 1.5},
    };
    double cutout_max_area = 0.25;

    bool operator==(const StrongAugConfig&) const = default;
};

struct AugPolicy {
    WeakAugConfig weak;
    StrongAugConfig strong;

    void validate() const;
    bool operator==(const AugPolicy&) const = default;
};

struct DataConfig {
    std::string train_manifest;
    std::string val_manifest;
    std::string test_manifest;
    std::string cross_manifest;

    bool operator==(const DataConfig&) const = default;
};

struct TrainConfig {
    double initial_lr = 1e-4;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 8;
    int epochs = 50;
    int batch_size = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int repeats = 5;
    std::string checkpoint_dir = "checkpoints";
    ModelConfig model;
    LossConfig loss;
    SplitSpec split;
    AugPolicy augment;
    DataConfig data;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// Strict JSON round-trip: unknown keys and wrong types are ConfigErrors.
std::string to_json_string(const ModelConfig& cfg);
std::string to_json_string(const TrainConfig& cfg, int indent = 2);
ModelConfig parse_model_config(const std::string& json_text);
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

// Sets one dotted key (e.g. "loss.t") from a textual value. The value is read
// as a JSON literal when it parses as one, otherwise as a string.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);
void apply_override(TrainConfig& cfg, const std::string& assignment);  // "key=value"

}  // namespace multimix
