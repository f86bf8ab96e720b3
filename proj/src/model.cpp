#include "multimix/model.hpp"

#include <algorithm>
#include <cmath>

#include "multimix/errors.hpp"
#include "multimix/rng.hpp"

namespace multimix {

namespace {

std::string enc_prefix(int stage) { return "enc." + std::to_string(stage); }
std::string dec_prefix(int level) { return "dec." + std::to_string(level); }
const std::string kBottleneck = "enc.bottleneck";
const std::string kFc = "cls.fc";
const std::string kProj = "bridge.proj";
const std::string kHead = "dec.head";

struct ConvSpec {
    std::string name;
    ParamGroup group;
    int in;
    int out;
    int kernel;
};

// Canonical parameter order; also the checkpoint order.
std::vector<ConvSpec> layer_plan(const ModelConfig& c) {
    std::vector<ConvSpec> plan;
    int in = c.input_channels;
    for (int i = 0; i < c.depth; ++i) {
        const int out = c.stage_channels(i);
        plan.push_back({enc_prefix(i) + ".conv0", ParamGroup::encoder, in, out, 3});
        plan.push_back({enc_prefix(i) + ".conv1", ParamGroup::encoder, out, out, 3});
        in = out;
    }
    plan.push_back({kBottleneck + ".conv0", ParamGroup::encoder, in, c.bottleneck_channels(), 3});
    plan.push_back({kBottleneck + ".conv1", ParamGroup::encoder, c.bottleneck_channels(), c.bottleneck_channels(), 3});
    if (c.classifier_enabled) plan.push_back({kFc, ParamGroup::classifier, c.bottleneck_channels(), c.num_classes, 1});
    if (c.bridge_enabled) plan.push_back({kProj, ParamGroup::bridge, 2, c.bottleneck_channels(), 1});
    if (c.decoder_enabled) {
        for (int i = c.depth - 1; i >= 0; --i) {
            const int out = c.stage_channels(i);
            plan.push_back({dec_prefix(i) + ".conv0", ParamGroup::decoder, c.stage_channels(i + 1) + out, out, 3});
            plan.push_back({dec_prefix(i) + ".conv1", ParamGroup::decoder, out, out, 3});
        }
        plan.push_back({kHead, ParamGroup::decoder, c.stage_channels(0), 1, 1});
    }
    return plan;
}

std::vector<int> weight_shape(const ConvSpec& s) {
    if (s.name == kFc) return {s.out, s.in};
    return {s.out, s.in, s.kernel, s.kernel};
}

void add_to(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

std::span<double> grad_span(ParameterSet* grads, const std::string& name) {
    return grads ? grads->values(name) : std::span<double>{};
}

}  // namespace

ParameterSet build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ParameterSet params;
    auto rng = make_rng({seed, static_cast<std::uint64_t>(RngStream::init)});
    for (const auto& spec : layer_plan(config)) {
        auto& w = params.add(spec.name + ".weight", spec.group, weight_shape(spec));
        params.add(spec.name + ".bias", spec.group, {spec.out});
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in) * spec.kernel * spec.kernel);
        for (double& v : w.values) v = uniform(rng, -bound, bound);
    }
    return params;
}

Tensor normalize_saliency(const Tensor& gradient) {
    Tensor out = gradient;
    double peak = 0.0;
    for (double& v : out.data) {
        v = std::abs(v);
        peak = std::max(peak, v);
    }
    if (peak > 0.0)
        for (double& v : out.data) v /= peak;
    return out;
}

Network::Network(ModelConfig config) : config_(std::move(config)) { config_.validate(); }

void Network::check_params(const ParameterSet& params) const {
    const auto plan = layer_plan(config_);
    if (params.size() != plan.size() * 2)
        throw VersionError("parameter count " + std::to_string(params.size()) + " does not match configuration (" +
                           std::to_string(plan.size() * 2) + ")");
    for (const auto& spec : plan) {
        for (const char* suffix : {".weight", ".bias"}) {
            const std::string name = spec.name + suffix;
            if (!params.contains(name)) throw VersionError("missing parameter '" + name + "'");
            const auto expected = std::string(suffix) == ".weight" ? weight_shape(spec) : std::vector<int>{spec.out};
            if (params.get(name).shape != expected) throw VersionError("shape mismatch for parameter '" + name + "'");
        }
    }
}

void Network::check_image(const Tensor& image) const {
    if (image.channels != config_.input_channels || image.height != config_.input_height ||
        image.width != config_.input_width)
        throw InputError("image shape " + std::to_string(image.channels) + "x" + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " does not match model input " +
                         std::to_string(config_.input_channels) + "x" + std::to_string(config_.input_height) + "x" +
                         std::to_string(config_.input_width));
}

// conv -> instance norm -> leaky ReLU -> dropout
Tensor Network::run_unit(const ParameterSet& params, const std::string& prefix, const Tensor& x,
                         std::mt19937_64* rng, UnitTrace& trace) const {
    const auto& w = params.get(prefix + ".weight");
    trace.input = x;
    Tensor z = nn::conv2d(x, w.values, params.values(prefix + ".bias"), w.shape[0], w.shape[2]);
    Tensor y = nn::instance_norm(z, trace.norm);
    nn::leaky_relu_inplace(y, config_.lrelu_slope);
    trace.dropout.clear();
    if (rng && config_.dropout_rate > 0.0) {
        trace.dropout = nn::dropout_mask(y.size(), config_.dropout_rate, *rng);
        nn::multiply_inplace(y, trace.dropout);
    }
    return y;
}

Tensor Network::run_stage(const ParameterSet& params, const std::string& prefix, const Tensor& x,
                          std::mt19937_64* rng, StageTrace& trace) const {
    Tensor h = run_unit(params, prefix + ".conv0", x, rng, trace.first);
    return run_unit(params, prefix + ".conv1", h, rng, trace.second);
}

Tensor Network::unit_backward(const ParameterSet& params, const std::string& prefix, const UnitTrace& trace,
                              Tensor dy, ParameterSet* grads, bool want_dx) const {
    if (!trace.dropout.empty()) nn::multiply_inplace(dy, trace.dropout);
    nn::leaky_relu_backward_inplace(dy, trace.norm.normalized, config_.lrelu_slope);
    const Tensor dz = nn::instance_norm_backward(dy, trace.norm);
    const auto& w = params.get(prefix + ".weight");
    Tensor dx;
    nn::conv2d_backward(trace.input, dz, w.values, w.shape[2], grad_span(grads, prefix + ".weight"),
                        grad_span(grads, prefix + ".bias"), want_dx ? &dx : nullptr);
    return dx;
}

Tensor Network::stage_backward(const ParameterSet& params, const std::string& prefix, const StageTrace& trace,
                               Tensor dy, ParameterSet* grads, bool want_dx) const {
    Tensor dh = unit_backward(params, prefix + ".conv1", trace.second, std::move(dy), grads, true);
    return unit_backward(params, prefix + ".conv0", trace.first, std::move(dh), grads, want_dx);
}

EncoderTrace Network::encode_sample(const ParameterSet& params, const Tensor& image, std::mt19937_64* rng) const {
    check_image(image);
    EncoderTrace t;
    t.stages.resize(config_.depth);
    t.pool_argmax.resize(config_.depth);
    Tensor x = image;
    for (int i = 0; i < config_.depth; ++i) {
        Tensor s = run_stage(params, enc_prefix(i), x, rng, t.stages[i]);
        x = nn::max_pool2(s, t.pool_argmax[i]);
        t.skips.push_back(std::move(s));
    }
    t.bottleneck = run_stage(params, kBottleneck, x, rng, t.bottleneck_stage);
    return t;
}

Tensor Network::encoder_backward(const ParameterSet& params, const EncoderTrace& trace, Tensor dbottleneck,
                                 const std::vector<Tensor>& dskips, ParameterSet* grads, bool want_dx) const {
    Tensor d = stage_backward(params, kBottleneck, trace.bottleneck_stage, std::move(dbottleneck), grads, true);
    for (int i = config_.depth - 1; i >= 0; --i) {
        const Tensor& skip = trace.skips[i];
        Tensor ds = nn::max_pool2_backward(d, trace.pool_argmax[i], skip.height, skip.width);
        if (!dskips.empty()) add_to(ds, dskips[i]);
        d = stage_backward(params, enc_prefix(i), trace.stages[i], std::move(ds), grads, i > 0 || want_dx);
    }
    return d;
}

// avg-pool by 2 (when possible) -> global average -> fully connected
std::vector<double> Network::classify_sample(const ParameterSet& params, const Tensor& bottleneck,
                                             ClassifierTrace& trace) const {
    if (!config_.classifier_enabled) throw UnsupportedOperation("classify: classifier is disabled");
    trace.halved = bottleneck.height % 2 == 0 && bottleneck.width % 2 == 0;
    trace.pooled = trace.halved ? nn::avg_pool(bottleneck, 2) : bottleneck;
    const int c = trace.pooled.channels;
    trace.features.assign(c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (double v : trace.pooled.channel(ch)) s += v;
        trace.features[ch] = s / trace.pooled.plane();
    }
    const auto w = params.values(kFc + ".weight");
    const auto b = params.values(kFc + ".bias");
    std::vector<double> logits(config_.num_classes);
    for (int k = 0; k < config_.num_classes; ++k) {
        double z = b[k];
        for (int ch = 0; ch < c; ++ch) z += w[k * c + ch] * trace.features[ch];
        logits[k] = z;
    }
    return logits;
}

Tensor Network::classifier_backward(const ParameterSet& params, const ClassifierTrace& trace,
                                    std::span<const double> dlogits, ParameterSet* grads) const {
    const int c = static_cast<int>(trace.features.size());
    const auto w = params.values(kFc + ".weight");
    std::vector<double> dfeat(c, 0.0);
    auto dw = grad_span(grads, kFc + ".weight");
    auto db = grad_span(grads, kFc + ".bias");
    for (int k = 0; k < config_.num_classes; ++k) {
        const double g = dlogits[k];
        if (!db.empty()) db[k] += g;
        for (int ch = 0; ch < c; ++ch) {
            dfeat[ch] += w[k * c + ch] * g;
            if (!dw.empty()) dw[k * c + ch] += g * trace.features[ch];
        }
    }
    Tensor dpooled(c, trace.pooled.height, trace.pooled.width);
    for (int ch = 0; ch < c; ++ch) {
        const double g = dfeat[ch] / dpooled.plane();
        for (double& v : dpooled.channel(ch)) v = g;
    }
    return trace.halved ? nn::avg_pool_backward(dpooled, 2) : dpooled;
}

Tensor Network::bridge_input(const Tensor& saliency, const Tensor& image) const {
    return nn::avg_pool(nn::concat_channels(saliency, image), 1 << config_.depth);
}

Tensor Network::bridge_sample(const ParameterSet& params, const Tensor& pooled, const Tensor& bottleneck) const {
    Tensor out = nn::conv2d(pooled, params.values(kProj + ".weight"), params.values(kProj + ".bias"),
                            config_.bottleneck_channels(), 1);
    add_to(out, bottleneck);
    return out;
}

// Nearest upsample -> concat skip -> conv stage, per level; 1x1 head + logistic.
Tensor Network::decode_sample(const ParameterSet& params, const std::vector<Tensor>& skips, const Tensor& injected,
                              std::mt19937_64* rng, DecoderTrace& trace) const {
    if (!config_.decoder_enabled) throw UnsupportedOperation("decode: decoder is disabled");
    trace.stages.assign(config_.depth, {});
    Tensor x = injected;
    for (int i = config_.depth - 1; i >= 0; --i) {
        Tensor cat = nn::concat_channels(nn::upsample_nearest2(x), skips[i]);
        x = run_stage(params, dec_prefix(i), cat, rng, trace.stages[i]);
    }
    trace.head_input = x;
    Tensor z = nn::conv2d(x, params.values(kHead + ".weight"), params.values(kHead + ".bias"), 1, 1);
    for (double& v : z.data) v = nn::sigmoid(v);
    return z;
}

SampleTrace Network::forward_sample(const ParameterSet& params, const Tensor& image, std::mt19937_64* dropout_rng,
                                    Heads heads, const Tensor* saliency) const {
    SampleTrace t;
    t.encoder = encode_sample(params, image, dropout_rng);
    if (heads.classify) {
        t.logits = classify_sample(params, t.encoder.bottleneck, t.classifier);
        t.classified = true;
    }
    if (heads.decode) {
        Tensor injected;
        if (config_.bridge_enabled) {
            t.saliency = saliency ? *saliency : saliency_sample(params, image);
            t.bridge_pooled = bridge_input(t.saliency, image);
            injected = bridge_sample(params, t.bridge_pooled, t.encoder.bottleneck);
        } else {
            injected = t.encoder.bottleneck;
        }
        t.seg_probs = decode_sample(params, t.encoder.skips, injected, dropout_rng, t.decoder);
        t.decoded = true;
    }
    return t;
}

void Network::backward_sample(const ParameterSet& params, const SampleTrace& trace, std::span<const double> dlogits,
                              const Tensor* dseg_probs, ParameterSet& grads) const {
    const EncoderTrace& enc = trace.encoder;
    Tensor dbottleneck(enc.bottleneck.channels, enc.bottleneck.height, enc.bottleneck.width);
    std::vector<Tensor> dskips;
    bool any = false;

    if (trace.decoded && dseg_probs) {
        // sigmoid, then 1x1 head
        Tensor dz = *dseg_probs;
        for (std::size_t i = 0; i < dz.data.size(); ++i) {
            const double p = trace.seg_probs.data[i];
            dz.data[i] *= p * (1.0 - p);
        }
        Tensor dx;
        nn::conv2d_backward(trace.decoder.head_input, dz, params.values(kHead + ".weight"), 1,
                            grads.values(kHead + ".weight"), grads.values(kHead + ".bias"), &dx);
        dskips.resize(config_.depth);
        for (int i = 0; i < config_.depth; ++i) {
            Tensor dcat = stage_backward(params, dec_prefix(i), trace.decoder.stages[i], std::move(dx), &grads, true);
            auto [dup, dskip] = nn::split_channels(dcat, config_.stage_channels(i + 1));
            dskips[i] = std::move(dskip);
            dx = nn::upsample_nearest2_backward(dup);
        }
        if (config_.bridge_enabled) {
            // Saliency is a constant: only the projection receives gradient.
            nn::conv2d_backward(trace.bridge_pooled, dx, params.values(kProj + ".weight"), 1,
                                grads.values(kProj + ".weight"), grads.values(kProj + ".bias"), nullptr);
        }
        add_to(dbottleneck, dx);
        any = true;
    }
    if (trace.classified && !dlogits.empty()) {
        add_to(dbottleneck, classifier_backward(params, trace.classifier, dlogits, &grads));
        any = true;
    }
    if (!any) return;
    encoder_backward(params, enc, std::move(dbottleneck), dskips, &grads, false);
}

std::vector<double> Network::logits(const ParameterSet& params, const Tensor& image) const {
    if (!config_.classifier_enabled) throw UnsupportedOperation("classify: classifier is disabled");
    const EncoderTrace enc = encode_sample(params, image, nullptr);
    ClassifierTrace ct;
    return classify_sample(params, enc.bottleneck, ct);
}

Tensor Network::input_gradient(const ParameterSet& params, const Tensor& image, int class_index) const {
    if (!config_.classifier_enabled) throw UnsupportedOperation("compute_saliency: classifier is disabled");
    const EncoderTrace enc = encode_sample(params, image, nullptr);
    ClassifierTrace ct;
    classify_sample(params, enc.bottleneck, ct);
    std::vector<double> dlogits(config_.num_classes, 0.0);
    dlogits.at(class_index) = 1.0;
    Tensor db = classifier_backward(params, ct, dlogits, nullptr);
    return encoder_backward(params, enc, std::move(db), {}, nullptr, true);
}

namespace {

struct NetworkClassifier {
    const Network& net;
    const ParameterSet& params;
    std::vector<double> logits(const Tensor& image) const { return net.logits(params, image); }
    Tensor input_gradient(const Tensor& image, int k) const { return net.input_gradient(params, image, k); }
};

}  // namespace

Tensor Network::saliency_sample(const ParameterSet& params, const Tensor& image) const {
    return compute_saliency_with(NetworkClassifier{*this, params}, Batch{image}).front();
}

Encoded Network::encode(const ParameterSet& params, const Batch& images, Mode mode, std::uint64_t dropout_seed) const {
    Encoded out;
    out.skips.assign(config_.depth, {});
    for (std::size_t n = 0; n < images.size(); ++n) {
        std::mt19937_64 rng;
        if (mode == Mode::train) rng = make_rng({dropout_seed, static_cast<std::uint64_t>(RngStream::dropout), n});
        EncoderTrace t = encode_sample(params, images[n], mode == Mode::train ? &rng : nullptr);
        for (int i = 0; i < config_.depth; ++i) out.skips[i].push_back(std::move(t.skips[i]));
        out.bottleneck.push_back(std::move(t.bottleneck));
    }
    return out;
}

Logits Network::classify(const ParameterSet& params, const Batch& bottleneck) const {
    if (!config_.classifier_enabled) throw UnsupportedOperation("classify: classifier is disabled");
    Logits out(static_cast<Eigen::Index>(bottleneck.size()), config_.num_classes);
    for (std::size_t n = 0; n < bottleneck.size(); ++n) {
        const auto& b = bottleneck[n];
        if (b.channels != config_.bottleneck_channels() || b.height != config_.bottleneck_height() ||
            b.width != config_.bottleneck_width())
            throw InputError("classify: bottleneck shape does not match configuration");
        ClassifierTrace ct;
        const auto z = classify_sample(params, b, ct);
        for (int k = 0; k < config_.num_classes; ++k) out(static_cast<Eigen::Index>(n), k) = z[k];
    }
    return out;
}

Batch Network::compute_saliency(const ParameterSet& params, const Batch& images) const {
    if (!config_.classifier_enabled) throw UnsupportedOperation("compute_saliency: classifier is disabled");
    return compute_saliency_with(NetworkClassifier{*this, params}, images);
}

Batch Network::bridge_inject(const ParameterSet& params, const Batch& saliency, const Batch& images,
                             const Batch& bottleneck) const {
    if (!config_.bridge_enabled) throw UnsupportedOperation("bridge_inject: bridge is disabled");
    if (saliency.size() != images.size() || images.size() != bottleneck.size())
        throw InputError("bridge_inject: batch sizes differ");
    Batch out;
    for (std::size_t n = 0; n < images.size(); ++n) {
        check_image(images[n]);
        if (!saliency[n].same_shape(images[n])) throw InputError("bridge_inject: saliency/image shape mismatch");
        out.push_back(bridge_sample(params, bridge_input(saliency[n], images[n]), bottleneck[n]));
    }
    return out;
}

Batch Network::decode(const ParameterSet& params, const std::vector<Batch>& skips, const Batch& injected) const {
    if (!config_.decoder_enabled) throw UnsupportedOperation("decode: decoder is disabled");
    if (static_cast<int>(skips.size()) != config_.depth) throw InputError("decode: expected one skip batch per stage");
    Batch out;
    for (std::size_t n = 0; n < injected.size(); ++n) {
        std::vector<Tensor> s;
        for (int i = 0; i < config_.depth; ++i) s.push_back(skips[i].at(n));
        DecoderTrace dt;
        out.push_back(decode_sample(params, s, injected[n], nullptr, dt));
    }
    return out;
}

PredictionBundle Network::forward_multitask(const ParameterSet& params, const Batch& images, Mode mode,
                                            std::uint64_t dropout_seed) const {
    PredictionBundle out;
    if (config_.classifier_enabled) out.class_logits.resize(static_cast<Eigen::Index>(images.size()), config_.num_classes);
    for (std::size_t n = 0; n < images.size(); ++n) {
        std::mt19937_64 rng;
        if (mode == Mode::train) rng = make_rng({dropout_seed, static_cast<std::uint64_t>(RngStream::dropout), n});
        std::mt19937_64* r = mode == Mode::train ? &rng : nullptr;
        Tensor saliency;
        if (config_.classifier_enabled) saliency = saliency_sample(params, images[n]);
        SampleTrace t = forward_sample(params, images[n], r, {config_.classifier_enabled, config_.decoder_enabled},
                                       config_.bridge_enabled ? &saliency : nullptr);
        if (config_.classifier_enabled) {
            for (int k = 0; k < config_.num_classes; ++k) out.class_logits(static_cast<Eigen::Index>(n), k) = t.logits[k];
            out.saliency.push_back(std::move(saliency));
        }
        if (config_.decoder_enabled) out.seg_probs.push_back(std::move(t.seg_probs));
    }
    return out;
}

}  // namespace multimix
