#include "multimix/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "multimix/errors.hpp"
#include "multimix/evaluate.hpp"
#include "multimix/rng.hpp"

namespace multimix {

using nlohmann::json;

namespace {

std::size_t tensor_bytes(const Tensor& t) { return t.data.size() * sizeof(double); }

std::size_t unit_bytes(const UnitTrace& u) {
    return tensor_bytes(u.input) + tensor_bytes(u.norm.normalized) + u.norm.inv_std.size() * sizeof(double) +
           u.dropout.size() * sizeof(double);
}

std::size_t stage_bytes(const StageTrace& s) { return unit_bytes(s.first) + unit_bytes(s.second); }

std::size_t trace_bytes(const SampleTrace& t) {
    std::size_t n = stage_bytes(t.encoder.bottleneck_stage) + tensor_bytes(t.encoder.bottleneck);
    for (const auto& s : t.encoder.stages) n += stage_bytes(s);
    for (const auto& s : t.encoder.skips) n += tensor_bytes(s);
    for (const auto& a : t.encoder.pool_argmax) n += a.size() * sizeof(int);
    for (const auto& s : t.decoder.stages) n += stage_bytes(s);
    n += tensor_bytes(t.decoder.head_input) + tensor_bytes(t.seg_probs) + tensor_bytes(t.saliency) +
         tensor_bytes(t.classifier.pooled);
    return n;
}

// Forward/backward over one stream with optional cache retention.
class StreamPass {
public:
    StreamPass(const Network& net, const ParameterSet& params, std::uint64_t seed, std::uint64_t step_key,
               std::uint64_t stream, Network::Heads heads, std::size_t peers, std::size_t budget)
        : net_(net), params_(params), seed_(seed), step_key_(step_key), stream_(stream), heads_(heads),
          peers_(peers), budget_(budget) {}

    const SampleTrace& forward(const Tensor& image, std::size_t j) {
        Tensor sal;
        if (heads_.decode && net_.config().bridge_enabled) sal = net_.saliency_sample(params_, image);
        SampleTrace t = run(image, j, sal.empty() ? nullptr : &sal);
        if (traces_.empty()) store_ = trace_bytes(t) * peers_ <= budget_;
        images_.push_back(&image);
        keys_.push_back(j);
        saliency_.push_back(std::move(sal));
        traces_.push_back(std::move(t));
        last_ = traces_.size() - 1;
        return traces_[last_];
    }

    // Call after forward(image, j) so an unretained cache can be dropped.
    void release_if_needed() {
        if (!store_) traces_[last_] = SampleTrace{};
    }

    // `entry` counts forward() calls, which differs from the sample slot
    // when samples were skipped.
    void backward(std::size_t entry, std::span<const double> dlogits, const Tensor* dseg, ParameterSet& grads) {
        if (store_) {
            net_.backward_sample(params_, traces_[entry], dlogits, dseg, grads);
        } else {
            const SampleTrace t =
                run(*images_[entry], keys_[entry], saliency_[entry].empty() ? nullptr : &saliency_[entry]);
            net_.backward_sample(params_, t, dlogits, dseg, grads);
        }
    }

private:
    SampleTrace run(const Tensor& image, std::size_t j, const Tensor* sal) const {
        auto rng = make_rng({seed_, static_cast<std::uint64_t>(RngStream::dropout), step_key_, stream_, j});
        return net_.forward_sample(params_, image, &rng, heads_, sal);
    }

    const Network& net_;
    const ParameterSet& params_;
    std::uint64_t seed_, step_key_, stream_;
    Network::Heads heads_;
    std::size_t peers_;
    std::size_t budget_;
    bool store_ = true;
    std::size_t last_ = 0;
    std::vector<const Tensor*> images_;
    std::vector<std::size_t> keys_;
    std::vector<Tensor> saliency_;
    std::vector<SampleTrace> traces_;
};

std::vector<double> row_of(const Logits& m, Eigen::Index i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
    return r;
}

json report_json(const MetricsReport& r) {
    json j;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    j["acc"] = opt(r.acc);
    j["f1_normal"] = opt(r.f1_normal);
    j["f1_pneumonia"] = opt(r.f1_pneumonia);
    j["dice"] = opt(r.dice);
    j["ahd"] = opt(r.ahd);
    j["ssim"] = opt(r.ssim);
    j["n_samples"] = r.n_samples;
    j["n_classified"] = r.n_classified;
    j["n_segmented"] = r.n_segmented;
    j["domain"] = r.domain;
    return j;
}

MetricsReport report_from_json(const json& j) {
    MetricsReport r;
    auto opt = [&](const char* k) -> std::optional<double> {
        if (!j.contains(k) || j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<double>();
    };
    r.acc = opt("acc");
    r.f1_normal = opt("f1_normal");
    r.f1_pneumonia = opt("f1_pneumonia");
    r.dice = opt("dice");
    r.ahd = opt("ahd");
    r.ssim = opt("ssim");
    r.n_samples = j.value("n_samples", std::size_t{0});
    r.n_classified = j.value("n_classified", std::size_t{0});
    r.n_segmented = j.value("n_segmented", std::size_t{0});
    r.domain = j.value("domain", std::string("in"));
    return r;
}

// Labeled training views with hidden labels removed, for model selection
// when no validation manifest is given.
std::vector<Sample> labeled_views(const std::vector<Sample>& samples, const Splits& splits) {
    std::vector<bool> keep_class(samples.size(), false), keep_mask(samples.size(), false);
    for (auto i : splits.class_labeled) keep_class[i] = true;
    for (auto i : splits.seg_labeled) keep_mask[i] = true;
    std::vector<Sample> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!keep_class[i] && !keep_mask[i]) continue;
        Sample s;
        s.id = samples[i].id;
        s.image = samples[i].image;
        if (keep_class[i]) s.class_label = samples[i].class_label;
        if (keep_mask[i]) s.mask = samples[i].mask;
        out.push_back(std::move(s));
    }
    return out;
}

double selection_score(const ModelConfig& m, const MetricsReport& r, double mean_total) {
    if (m.decoder_enabled && r.dice) return *r.dice;
    if (m.classifier_enabled && r.acc) return *r.acc;
    return -mean_total;
}

std::string count_name(const std::optional<std::size_t>& n) { return n ? std::to_string(*n) : "full"; }

// Shortest round-trip decimal of v as mantissa * 10^exponent.
bool decimal_parts(double v, std::uint64_t& mantissa, int& exponent) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
    const std::string text(buf, res.ptr);
    const auto e = text.find('e');
    std::string digits;
    for (char c : text.substr(0, e))
        if (c >= '0' && c <= '9') digits += c;
    if (digits.size() > 18) return false;
    mantissa = std::stoull(digits);
    exponent = std::stoi(text.substr(e + 1)) - static_cast<int>(digits.size()) + 1;
    return true;
}

// initial * factor^k, computed on the decimal values the user wrote and
// rounded once, so 1e-4 decayed twice by 0.1 is exactly 1e-6.
double decayed(double initial, double factor, int k) {
    std::uint64_t m1 = 0, m2 = 0;
    int e1 = 0, e2 = 0;
    if (initial > 0 && factor > 0 && decimal_parts(initial, m1, e1) && decimal_parts(factor, m2, e2)) {
        std::uint64_t m = m1;
        int e = e1;
        bool fits = true;
        for (int i = 0; i < k && fits; ++i) {
            fits = m <= std::numeric_limits<std::uint64_t>::max() / m2;
            m *= m2;
            e += e2;
        }
        if (fits) {
            const std::string text = fmt::format("{}e{}", m, e);
            double out = 0.0;
            std::from_chars(text.data(), text.data() + text.size(), out);
            return out;
        }
    }
    double lr = initial;
    for (int i = 0; i < k; ++i) lr *= factor;
    return lr;
}

}  // namespace

double lr_schedule(int epoch, const TrainConfig& cfg) {
    return decayed(cfg.initial_lr, cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

StreamMask active_streams(const TrainConfig& cfg) {
    const auto& m = cfg.model;
    return {m.classifier_enabled, m.classifier_enabled && cfg.loss.lambda_u > 0.0, m.decoder_enabled,
            m.decoder_enabled && cfg.loss.beta > 0.0};
}

StepOutput compute_step(const Network& net, const ParameterSet& params, const BatchBundle& b, const TrainConfig& cfg,
                        double alpha, std::uint64_t step_key, std::size_t trace_budget) {
    const auto& mc = net.config();
    const StreamMask use = active_streams(cfg);
    StepOutput out;
    out.grads = params.zeros_like();
    LossBreakdown& bd = out.breakdown;
    double l_c = 0.0, l_s = 0.0;

    if (mc.classifier_enabled) {
        const int C = mc.num_classes;
        const auto n_l = use.class_labeled ? b.class_labeled.size() : 0;
        const auto n_u = use.class_unlabeled ? b.class_unlabeled_strong.size() : 0;
        Logits weak(static_cast<Eigen::Index>(n_u), C), strong(static_cast<Eigen::Index>(n_u), C),
            labeled(static_cast<Eigen::Index>(n_l), C);
        for (std::size_t j = 0; j < n_u; ++j) {
            const auto z = net.logits(params, b.class_unlabeled_weak[j]);
            for (int k = 0; k < C; ++k) weak(static_cast<Eigen::Index>(j), k) = z[k];
        }
        const Logits probs_weak = softmax_rows(weak);
        const auto pseudo = pseudo_label_select(probs_weak, cfg.loss.t);

        const std::size_t peers = n_l + pseudo.kept();
        StreamPass pass_l(net, params, cfg.seed, step_key, 0, {true, false}, peers, trace_budget);
        StreamPass pass_s(net, params, cfg.seed, step_key, 1, {true, false}, peers, trace_budget);
        for (std::size_t j = 0; j < n_l; ++j) {
            const auto& t = pass_l.forward(b.class_labeled[j], j);
            for (int k = 0; k < C; ++k) labeled(static_cast<Eigen::Index>(j), k) = t.logits[k];
            pass_l.release_if_needed();
        }
        std::vector<std::size_t> strong_slot(n_u, 0);
        std::size_t next = 0;
        for (std::size_t j = 0; j < n_u; ++j) {
            if (!pseudo.keep[j]) {
                // Rejected samples carry no loss or gradient; their logits
                // are not needed for the masked term.
                strong.row(static_cast<Eigen::Index>(j)).setZero();
                continue;
            }
            const auto& t = pass_s.forward(b.class_unlabeled_strong[j], j);
            for (int k = 0; k < C; ++k) strong(static_cast<Eigen::Index>(j), k) = t.logits[k];
            pass_s.release_if_needed();
            strong_slot[j] = next++;
        }
        std::vector<int> labels(b.class_labels.begin(), b.class_labels.begin() + static_cast<std::ptrdiff_t>(n_l));
        const auto cls = classification_loss(labeled, labels, strong, probs_weak, cfg.loss);
        bd.l_c_sup = cls.supervised;
        bd.l_c_unsup = cls.unsupervised;
        bd.pseudo_label_keep_fraction = n_u ? cls.keep_fraction : 0.0;
        l_c = cls.value;
        for (std::size_t j = 0; j < n_l; ++j) {
            const auto g = row_of(cls.grad_labeled, static_cast<Eigen::Index>(j));
            pass_l.backward(j, g, nullptr, out.grads);
        }
        for (std::size_t j = 0; j < n_u; ++j) {
            if (!pseudo.keep[j]) continue;
            const auto g = row_of(cls.grad_strong, static_cast<Eigen::Index>(j));
            pass_s.backward(strong_slot[j], g, nullptr, out.grads);
        }
    }

    if (mc.decoder_enabled) {
        const auto n_l = use.seg_labeled ? b.seg_labeled.size() : 0;
        const auto n_u = use.seg_unlabeled ? b.seg_unlabeled.size() : 0;
        StreamPass pass_l(net, params, cfg.seed, step_key, 2, {false, true}, n_l + n_u, trace_budget);
        StreamPass pass_u(net, params, cfg.seed, step_key, 3, {false, true}, n_l + n_u, trace_budget);
        Batch pred_l, pred_u, masks;
        for (std::size_t j = 0; j < n_l; ++j) {
            pred_l.push_back(pass_l.forward(b.seg_labeled[j], j).seg_probs);
            pass_l.release_if_needed();
            masks.push_back(b.seg_masks[j]);
        }
        for (std::size_t j = 0; j < n_u; ++j) {
            pred_u.push_back(pass_u.forward(b.seg_unlabeled[j], j).seg_probs);
            pass_u.release_if_needed();
        }
        const auto seg = segmentation_loss(pred_l, masks, pred_u, alpha, cfg.loss);
        bd.l_s_sup = seg.supervised;
        bd.l_s_unsup = seg.unsupervised;
        l_s = seg.value;
        for (std::size_t j = 0; j < n_l; ++j) pass_l.backward(j, {}, &seg.grad_labeled[j], out.grads);
        if (cfg.loss.beta > 0.0)
            for (std::size_t j = 0; j < n_u; ++j) pass_u.backward(j, {}, &seg.grad_unlabeled[j], out.grads);
    }

    bd.total = l_c + l_s;
    bd.total = total_loss(l_c, l_s, bd);
    return out;
}

LossBreakdown train_step(const Network& net, ParameterSet& params, AdamState& adam, const BatchBundle& bundle,
                         const TrainConfig& cfg, double alpha, double lr, std::uint64_t step_key) {
    StepOutput s = compute_step(net, params, bundle, cfg, alpha, step_key);
    if (!s.grads.all_finite()) throw DivergenceError("non-finite gradient", s.breakdown.to_json());
    adam_update(params, s.grads, adam, lr, {cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});
    if (!params.all_finite()) throw DivergenceError("non-finite parameter after update", s.breakdown.to_json());
    return s.breakdown;
}

std::string StepRecord::to_json() const {
    json j = json::parse(breakdown.to_json());
    json head{{"type", "step"}, {"epoch", epoch}, {"step", step}, {"global_step", global_step}, {"lr", lr}};
    head.update(j);
    return head.dump();
}

std::string EpochRecord::to_json() const {
    json j{{"type", "epoch"},
           {"epoch", epoch},
           {"lr", lr},
           {"mean_total", mean_total},
           {"selection_score", selection_score},
           {"best", best}};
    j["validation"] = validation ? report_json(*validation) : json(nullptr);
    return j.dump();
}

TrainResult train(const TrainConfig& cfg, const TrainData& data, const TrainOptions& options) {
    cfg.validate();
    const Network net(cfg.model);
    const Splits splits = split_labeled(data.train, cfg.split);
    SplitSpec resolved = cfg.split;
    resolved.n_seg_labeled = splits.seg_labeled.size();
    const double alpha = resolve_alpha(cfg.loss, resolved);
    const std::vector<Sample> fallback_val = data.val.empty() ? labeled_views(data.train, splits) : std::vector<Sample>{};
    const std::vector<Sample>& val = data.val.empty() ? fallback_val : data.val;

    TrainResult result;
    result.params = build_model(cfg.model, cfg.seed);
    AdamState adam = AdamState::like(result.params);
    int start_epoch = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    int best_epoch = -1;

    const bool to_disk = !options.out_dir.empty();
    const auto history_path = options.out_dir / "history.jsonl";
    const auto timing_path = options.out_dir / "timing.jsonl";
    const auto last_path = options.out_dir / "last.ckpt";
    const auto best_path = options.out_dir / "best.ckpt";

    if (options.resume_from) {
        Checkpoint ck = load_checkpoint(*options.resume_from);
        if (!(ck.model == cfg.model)) throw VersionError("checkpoint model config differs from the run config");
        if (ck.seed != cfg.seed) throw VersionError("checkpoint seed differs from the run config");
        result.params = std::move(ck.params);
        adam = ck.optimizer ? std::move(*ck.optimizer) : AdamState::like(result.params);
        start_epoch = static_cast<int>(ck.epoch);
        const json meta = json::parse(ck.metadata, nullptr, false);
        if (meta.is_object() && meta.contains("best_epoch")) {
            best_epoch = meta.at("best_epoch").get<int>();
            if (!meta.at("best_score").is_null()) best_score = meta.at("best_score").get<double>();
        }
    }

    if (to_disk) {
        std::error_code ec;
        std::filesystem::create_directories(options.out_dir, ec);
        if (ec) throw IoError("cannot create '" + options.out_dir.string() + "': " + ec.message());
        // Keep only history that precedes the resume point.
        std::vector<std::string> kept_history, kept_timing;
        if (start_epoch > 0) {
            for (const auto& [path, sink] : {std::pair{history_path, &kept_history}, std::pair{timing_path, &kept_timing}}) {
                std::ifstream in(path);
                std::string line;
                while (std::getline(in, line)) {
                    const json j = json::parse(line, nullptr, false);
                    if (j.is_object() && j.value("epoch", start_epoch) < start_epoch) sink->push_back(line);
                }
            }
        }
        std::ofstream h(history_path, std::ios::trunc), t(timing_path, std::ios::trunc);
        if (!h || !t) throw IoError("cannot write history into '" + options.out_dir.string() + "'");
        for (const auto& l : kept_history) h << l << '\n';
        for (const auto& l : kept_timing) t << l << '\n';
    }

    auto save = [&](const std::filesystem::path& path, int epochs_done, std::uint64_t step) {
        Checkpoint ck;
        ck.model = cfg.model;
        ck.params = result.params;
        ck.optimizer = adam;
        ck.step = step;
        ck.epoch = static_cast<std::uint64_t>(epochs_done);
        ck.seed = cfg.seed;
        json meta{{"best_epoch", best_epoch},
                  {"best_score", std::isfinite(best_score) ? json(best_score) : json(nullptr)},
                  {"alpha", alpha},
                  {"train_config", json::parse(to_json_string(cfg, -1))}};
        ck.metadata = meta.dump();
        save_checkpoint(path, ck);
    };

    const std::size_t steps_per_epoch =
        BatchComposer(data.train, splits, cfg.batch_size, cfg.seed, 0, cfg.augment, {false, false, false, false}).steps();
    const int end_epoch = options.stop_after ? std::min(cfg.epochs, *options.stop_after) : cfg.epochs;
    const StreamMask mask = active_streams(cfg);

    if (to_disk && cfg.epochs == 0) {
        save(last_path, 0, 0);
        result.last_checkpoint = last_path;
    }

    for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_schedule(epoch, cfg);
        const BatchComposer composer(data.train, splits, cfg.batch_size, cfg.seed, epoch, cfg.augment, mask);
        std::ofstream history;
        if (to_disk) history.open(history_path, std::ios::app);
        double sum_total = 0.0;
        for (std::size_t step = 0; step < composer.steps(); ++step) {
            const std::uint64_t global = static_cast<std::uint64_t>(epoch) * steps_per_epoch + step;
            StepRecord rec{epoch, step, global, lr, {}};
            try {
                rec.breakdown = train_step(net, result.params, adam, composer.bundle(step), cfg, alpha, lr, global);
            } catch (const DivergenceError&) {
                if (to_disk) history.flush();
                throw;
            }
            sum_total += rec.breakdown.total;
            if (to_disk) history << rec.to_json() << '\n';
            result.history.steps.push_back(rec);
        }

        EpochRecord er;
        er.epoch = epoch;
        er.lr = lr;
        er.mean_total = composer.steps() ? sum_total / static_cast<double>(composer.steps()) : 0.0;
        if (options.validate_each_epoch && !val.empty()) {
            er.validation = evaluate(net, result.params, val, "in");
            er.selection_score = selection_score(cfg.model, *er.validation, er.mean_total);
        } else {
            er.selection_score = -er.mean_total;
        }
        if (er.selection_score > best_score) {
            best_score = er.selection_score;
            best_epoch = epoch;
            er.best = true;
        }
        result.history.epochs.push_back(er);
        result.history.lr_trace.push_back(lr);

        if (to_disk) {
            history << er.to_json() << '\n';
            history.flush();
            if (!history) throw IoError("failed writing '" + history_path.string() + "'");
            const std::uint64_t next_step = static_cast<std::uint64_t>(epoch + 1) * steps_per_epoch;
            if (er.best) {
                save(best_path, epoch + 1, next_step);
                result.best_checkpoint = best_path;
            }
            save(last_path, epoch + 1, next_step);
            result.last_checkpoint = last_path;
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::ofstream(timing_path, std::ios::app) << json{{"epoch", epoch}, {"seconds", secs}}.dump() << '\n';
        }
        if (options.on_epoch) options.on_epoch(er);
    }
    if (to_disk && std::filesystem::exists(best_path)) result.best_checkpoint = best_path;
    if (to_disk && std::filesystem::exists(last_path)) result.last_checkpoint = last_path;
    return result;
}

std::vector<TrainResult> train_repeats(const TrainConfig& cfg, const TrainData& data,
                                       const std::filesystem::path& out_dir) {
    std::vector<TrainResult> out;
    for (int r = 0; r < cfg.repeats; ++r) {
        TrainConfig c = cfg;
        c.seed = cfg.seed + static_cast<std::uint64_t>(r);
        TrainOptions opt;
        if (!out_dir.empty()) opt.out_dir = out_dir / fmt::format("repeat_{}", r);
        out.push_back(train(c, data, opt));
    }
    return out;
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::unet,  Variant::enc,   Variant::encssl,
                                           Variant::umtl,  Variant::umtls, Variant::multimix};
    return v;
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::unet: return "U-Net";
        case Variant::enc: return "Enc";
        case Variant::encssl: return "EncSSL";
        case Variant::umtl: return "UMTL";
        case Variant::umtls: return "UMTLS";
        case Variant::multimix: return "MultiMix";
    }
    return "?";
}

Variant parse_variant(const std::string& name) {
    auto lower = [](std::string s) {
        std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
        return s;
    };
    for (Variant v : all_variants())
        if (lower(variant_name(v)) == lower(name)) return v;
    if (lower(name) == "unet") return Variant::unet;
    throw UsageError("unknown model variant '" + name + "'");
}

TrainConfig apply_variant(const TrainConfig& base, Variant v) {
    TrainConfig c = base;
    auto& m = c.model;
    auto& l = c.loss;
    switch (v) {
        case Variant::unet:
            m.classifier_enabled = false, m.decoder_enabled = true, m.bridge_enabled = false;
            l.lambda_u = 0.0, l.beta = 0.0;
            break;
        case Variant::enc:
            m.classifier_enabled = true, m.decoder_enabled = false, m.bridge_enabled = false;
            l.lambda_u = 0.0, l.beta = 0.0;
            break;
        case Variant::encssl:
            m.classifier_enabled = true, m.decoder_enabled = false, m.bridge_enabled = false;
            l.beta = 0.0;
            break;
        case Variant::umtl:
            m.classifier_enabled = true, m.decoder_enabled = true, m.bridge_enabled = false;
            l.lambda_u = 0.0, l.beta = 0.0;
            break;
        case Variant::umtls:
            m.classifier_enabled = true, m.decoder_enabled = true, m.bridge_enabled = true;
            l.lambda_u = 0.0, l.beta = 0.0;
            break;
        case Variant::multimix:
            m.classifier_enabled = true, m.decoder_enabled = true, m.bridge_enabled = true;
            break;
    }
    return c;
}

std::string GridRecord::to_json() const {
    json j{{"model", model},   {"n_class_labeled", n_class_labeled}, {"n_seg_labeled", n_seg_labeled},
           {"repeat", repeat}, {"seed", seed},                       {"ok", ok},
           {"error", error}};
    j["in_domain"] = in_domain ? report_json(*in_domain) : json(nullptr);
    j["cross_domain"] = cross_domain ? report_json(*cross_domain) : json(nullptr);
    return j.dump();
}

GridRecord GridRecord::from_json(const std::string& line) {
    const json j = json::parse(line, nullptr, false);
    if (!j.is_object()) throw ParseError("grid record is not a JSON object", 0);
    try {
        GridRecord r;
        r.model = j.at("model").get<std::string>();
        r.n_class_labeled = j.at("n_class_labeled").get<std::string>();
        r.n_seg_labeled = j.at("n_seg_labeled").get<std::string>();
        r.repeat = j.at("repeat").get<int>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.ok = j.at("ok").get<bool>();
        r.error = j.value("error", std::string());
        if (!j.at("in_domain").is_null()) r.in_domain = report_from_json(j.at("in_domain"));
        if (!j.at("cross_domain").is_null()) r.cross_domain = report_from_json(j.at("cross_domain"));
        return r;
    } catch (const json::exception& e) {
        throw ParseError(std::string("grid record: ") + e.what(), 0);
    }
}

std::vector<GridRecord> run_grid(const TrainConfig& base, const GridData& data, const std::vector<SplitSpec>& cells,
                                 const std::vector<Variant>& variants, const std::filesystem::path& out_dir) {
    std::vector<GridRecord> out;
    std::ofstream records;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        records.open(out_dir / "records.jsonl", std::ios::trunc);
        if (!records) throw IoError("cannot write '" + (out_dir / "records.jsonl").string() + "'");
    }
    for (Variant v : variants) {
        for (const auto& cell : cells) {
            for (int r = 0; r < base.repeats; ++r) {
                GridRecord rec;
                rec.model = variant_name(v);
                rec.n_class_labeled = count_name(cell.n_class_labeled);
                rec.n_seg_labeled = count_name(cell.n_seg_labeled);
                rec.repeat = r;
                rec.seed = base.seed + static_cast<std::uint64_t>(r);
                try {
                    TrainConfig c = apply_variant(base, v);
                    c.split = cell;
                    c.seed = rec.seed;
                    TrainOptions opt;
                    if (!out_dir.empty())
                        opt.out_dir = out_dir / rec.model /
                                      fmt::format("c{}_s{}", rec.n_class_labeled, rec.n_seg_labeled) /
                                      fmt::format("repeat_{}", r);
                    TrainResult res = train(c, {data.train, data.val}, opt);
                    const Network net(c.model);
                    const ParameterSet& params =
                        res.best_checkpoint ? load_checkpoint(*res.best_checkpoint).params : res.params;
                    rec.in_domain = evaluate(net, params, data.test, "in");
                    if (!data.cross.empty()) rec.cross_domain = evaluate(net, params, data.cross, "cross");
                } catch (const std::exception& e) {
                    rec.ok = false;
                    rec.error = e.what();
                }
                if (records.is_open()) {
                    records << rec.to_json() << '\n';
                    records.flush();
                }
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

}  // namespace multimix
