#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "multimix/checkpoint.hpp"
#include "multimix/config.hpp"
#include "multimix/data.hpp"
#include "multimix/losses.hpp"
#include "multimix/metrics.hpp"
#include "multimix/model.hpp"
#include "multimix/optim.hpp"

namespace multimix {

double lr_schedule(int epoch, const TrainConfig& cfg);

// Which streams and loss terms a configuration actually uses.
StreamMask active_streams(const TrainConfig& cfg);

struct StepOutput {
    LossBreakdown breakdown;
    ParameterSet grads;
};

// Forward caches above this many bytes per step are rebuilt for the backward
// pass instead of retained. Results are identical either way.
inline constexpr std::size_t kDefaultTraceBudget = std::size_t{1} << 30;

// Loss and parameter gradients for one bundle without touching params.
// `step_key` keys the dropout streams.
StepOutput compute_step(const Network& net, const ParameterSet& params, const BatchBundle& bundle,
                        const TrainConfig& cfg, double alpha, std::uint64_t step_key,
                        std::size_t trace_budget = kDefaultTraceBudget);

// compute_step followed by one Adam update at rate lr. Throws
// DivergenceError on a non-finite loss or parameter.
LossBreakdown train_step(const Network& net, ParameterSet& params, AdamState& adam, const BatchBundle& bundle,
                         const TrainConfig& cfg, double alpha, double lr, std::uint64_t step_key);

struct StepRecord {
    int epoch = 0;
    std::size_t step = 0;
    std::uint64_t global_step = 0;
    double lr = 0.0;
    LossBreakdown breakdown;

    std::string to_json() const;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double mean_total = 0.0;
    std::optional<MetricsReport> validation;
    double selection_score = 0.0;
    bool best = false;

    std::string to_json() const;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<double> lr_trace;  // one entry per epoch
};

struct TrainData {
    std::vector<Sample> train;
    std::vector<Sample> val;  // empty: select on the labeled training views
};

struct TrainOptions {
    // Empty: nothing is written to disk.
    std::filesystem::path out_dir;
    std::optional<std::filesystem::path> resume_from;
    // Stop after this many completed epochs (simulates an interruption).
    std::optional<int> stop_after;
    bool validate_each_epoch = true;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ParameterSet params;
    TrainHistory history;
    std::optional<std::filesystem::path> last_checkpoint;
    std::optional<std::filesystem::path> best_checkpoint;
};

// out_dir receives history.jsonl (deterministic), timing.jsonl (wall clock),
// last.ckpt after every epoch and best.ckpt on improvement.
TrainResult train(const TrainConfig& cfg, const TrainData& data, const TrainOptions& options = {});

// Seeds cfg.seed + r for r in [0, repeats); run r writes into out_dir/repeat_r.
std::vector<TrainResult> train_repeats(const TrainConfig& cfg, const TrainData& data,
                                       const std::filesystem::path& out_dir);

enum class Variant { unet, enc, encssl, umtl, umtls, multimix };

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);  // UsageError on unknown names

// Expresses a baseline as model/loss flags on top of the base config.
TrainConfig apply_variant(const TrainConfig& base, Variant v);

struct GridRecord {
    std::string model;
    std::string n_class_labeled;  // count or "full"
    std::string n_seg_labeled;
    int repeat = 0;
    std::uint64_t seed = 0;
    bool ok = true;
    std::string error;
    std::optional<MetricsReport> in_domain;
    std::optional<MetricsReport> cross_domain;

    std::string to_json() const;
    static GridRecord from_json(const std::string& line);
};

struct GridData {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    std::vector<Sample> cross;  // may be empty
};

// Cross product variants x cells x repeats. Failed cells are recorded and the
// grid continues. Records are appended to out_dir/records.jsonl as they finish.
std::vector<GridRecord> run_grid(const TrainConfig& base, const GridData& data, const std::vector<SplitSpec>& cells,
                                 const std::vector<Variant>& variants, const std::filesystem::path& out_dir);

}  // namespace multimix
