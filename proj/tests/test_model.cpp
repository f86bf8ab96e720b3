#include <doctest.h>

#include <cmath>
#include <vector>

#include "multimix/checkpoint.hpp"
#include "multimix/errors.hpp"
#include "multimix/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace multimix;
using testing::random_tensor;
using testing::tiny_model;

namespace {

struct ConstantSurrogate {
    std::vector<double> logits(const Tensor&) const { return {1.0, 0.0}; }
    Tensor input_gradient(const Tensor& x, int) const { return Tensor(x.channels, x.height, x.width); }
};

void perturb_groups(ParameterSet& p, std::initializer_list<ParamGroup> groups, std::uint64_t seed) {
    auto rng = make_rng({seed});
    for (auto& a : p.arrays())
        for (ParamGroup g : groups)
            if (a.group == g)
                for (double& v : a.values) v += uniform(rng, -0.5, 0.5);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) { return a.same_shape(b) && a.data == b.data; }

// Scalar probe of both heads used by the gradient checks.
struct Probe {
    Tensor seg_weight;
    std::vector<double> logit_weight;

    double value(const SampleTrace& t) const {
        double s = 0;
        for (std::size_t i = 0; i < t.logits.size(); ++i) s += logit_weight[i] * t.logits[i];
        for (std::size_t i = 0; i < t.seg_probs.data.size(); ++i) s += seg_weight.data[i] * t.seg_probs.data[i];
        return s;
    }
};

}  // namespace

TEST_CASE("model config invariants") {
    ModelConfig m;
    CHECK_NOTHROW(m.validate());
    CHECK(m.bottleneck_height() == 16);
    CHECK(m.bottleneck_width() == 16);
    CHECK(m.bottleneck_channels() == 32 * 16);

    auto bad = [](auto edit) {
        ModelConfig c;
        edit(c);
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(build_model(c, 1), ConfigError);
    };
    bad([](ModelConfig& c) { c.input_height = 250; });
    bad([](ModelConfig& c) { c.num_classes = 1; });
    bad([](ModelConfig& c) { c.base_channels = 0; });
    bad([](ModelConfig& c) { c.dropout_rate = 1.0; });
    bad([](ModelConfig& c) { c.classifier_enabled = c.decoder_enabled = false, c.bridge_enabled = false; });
    try {
        ModelConfig c;
        c.input_width = 100;
        c.validate();
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("divisible") != std::string::npos);
    }
}

TEST_CASE("build_model is a deterministic function of config and seed") {
    const ModelConfig m = tiny_model(32, 3, 4);
    const auto a = build_model(m, 7), b = build_model(m, 7), c = build_model(m, 8);
    CHECK(a == b);
    CHECK(a.digest() == b.digest());
    CHECK(a.digest() != c.digest());
    CHECK(a.all_finite());
    for (const auto& arr : a.arrays())
        if (arr.name.ends_with(".bias")) {
            for (double v : arr.values) CHECK(v == 0.0);
        }
    CHECK(a.contains("enc.2.conv1.weight"));
    CHECK(a.contains("cls.fc.weight"));
    CHECK(a.contains("bridge.proj.weight"));
    CHECK(a.contains("dec.0.conv1.weight"));
    CHECK(a.get("enc.bottleneck.conv1.weight").shape == std::vector<int>{32, 32, 3, 3});
}

TEST_CASE("shape law at a 256x256 input") {
    ModelConfig m;
    m.base_channels = 2;  // channel plan scaled down; spatial sizes as configured
    const Network net(m);
    const auto params = build_model(m, 1);
    auto rng = make_rng({31});
    const Batch images{random_tensor(rng, 1, 256, 256)};
    const auto enc = net.encode(params, images);
    REQUIRE(enc.skips.size() == 4);
    CHECK(enc.bottleneck[0].height == 16);
    CHECK(enc.bottleneck[0].width == 16);
    CHECK(enc.bottleneck[0].channels == 2 * 16);
    for (int i = 0; i < 4; ++i) {
        CHECK(enc.skips[i][0].height == (256 >> i));
        CHECK(enc.skips[i][0].channels == (2 << i));
    }
    const auto bundle = net.forward_multitask(params, images, Mode::infer);
    CHECK(bundle.class_logits.rows() == 1);
    CHECK(bundle.class_logits.cols() == 2);
    CHECK(bundle.seg_probs[0].height == 256);
    CHECK(bundle.seg_probs[0].width == 256);
    CHECK(bundle.saliency[0].height == 256);
    CHECK(bundle.saliency[0].width == 256);

    const SampleTrace t = net.forward_sample(params, images[0], nullptr, {true, true});
    CHECK(t.bridge_pooled.height == 16);
    CHECK(t.bridge_pooled.channels == 2);
}

TEST_CASE("encode over a batch, zero input, and shape errors") {
    const ModelConfig m = tiny_model(16, 2, 2);
    const Network net(m);
    auto params = build_model(m, 2);
    auto rng = make_rng({32});
    Batch images;
    for (int i = 0; i < 10; ++i) images.push_back(random_tensor(rng, 1, 16, 16));
    const auto enc = net.encode(params, images);
    CHECK(enc.bottleneck.size() == 10);
    CHECK(enc.skips.size() == 2);
    CHECK(enc.bottleneck[0].height == 4);

    const auto zero = net.forward_multitask(params, {make_image(16, 16)}, Mode::infer);
    CHECK(zero.class_logits.allFinite());
    CHECK(all_finite(zero.seg_probs[0]));
    CHECK(all_finite(zero.saliency[0]));

    CHECK_THROWS_AS(net.encode(params, {make_image(16, 8)}), InputError);
    CHECK_THROWS_AS(net.forward_multitask(params, {Tensor(2, 16, 16)}, Mode::infer), InputError);
}

TEST_CASE("classifier output depends on encoder and classifier weights only") {
    const ModelConfig m = tiny_model(16, 2, 3);
    const Network net(m);
    const auto params = build_model(m, 3);
    auto rng = make_rng({33});
    const Batch images{random_tensor(rng, 1, 16, 16), random_tensor(rng, 1, 16, 16)};
    const auto base = net.forward_multitask(params, images, Mode::infer);

    auto changed = params;
    perturb_groups(changed, {ParamGroup::decoder, ParamGroup::bridge}, 5);
    const auto other = net.forward_multitask(changed, images, Mode::infer);
    CHECK(other.class_logits == base.class_logits);  // bitwise
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(bitwise_equal(other.saliency[i], base.saliency[i]));
        CHECK_FALSE(bitwise_equal(other.seg_probs[i], base.seg_probs[i]));
    }

    auto zero_fc = params;
    for (double& v : zero_fc.values("cls.fc.weight")) v = 0.0;
    const auto z = net.classify(zero_fc, net.encode(zero_fc, images).bottleneck);
    CHECK(z.isZero(0.0));
    const Logits p = (z.array().exp().colwise() / z.array().exp().rowwise().sum()).matrix();
    CHECK(p(0, 0) == 0.5);
}

TEST_CASE("saliency matches the analytic map of a linear surrogate") {
    auto rng = make_rng({34});
    for (int trial = 0; trial < 10; ++trial) {
        testing::LinearSurrogate lin{random_tensor(rng, 1, 12, 12, -1.0, 1.0)};
        const Tensor x = random_tensor(rng, 1, 12, 12);

        // input_gradient agrees with central differences of the logit
        const int k = lin.logits(x)[0] >= lin.logits(x)[1] ? 0 : 1;
        Tensor xp = x;
        for (std::size_t i = 0; i < x.data.size(); i += 7) {
            const double h = 1e-5;
            xp.data[i] = x.data[i] + h;
            const double fp = lin.logits(xp)[k];
            xp.data[i] = x.data[i] - h;
            const double fm = lin.logits(xp)[k];
            xp.data[i] = x.data[i];
            CHECK(testing::rel_err((fp - fm) / (2 * h), lin.input_gradient(x, k).data[i]) <= 1e-6);
        }

        const Tensor s = compute_saliency_with(lin, Batch{x})[0];
        double wmax = 0;
        for (double v : lin.w.data) wmax = std::max(wmax, std::abs(v));
        for (std::size_t i = 0; i < s.data.size(); ++i)
            CHECK(testing::rel_err(s.data[i], std::abs(lin.w.data[i]) / wmax) <= 1e-6);
    }
    const Tensor zero = compute_saliency_with(ConstantSurrogate{}, Batch{make_image(8, 8, 0.3)})[0];
    for (double v : zero.data) CHECK(v == 0.0);
}

TEST_CASE("network input gradient matches finite differences and saliency is normalized") {
    const ModelConfig m = tiny_model(8, 1, 2);
    const Network net(m);
    const auto params = build_model(m, 4);
    auto rng = make_rng({35});
    const Tensor x = random_tensor(rng, 1, 8, 8);
    const auto z = net.logits(params, x);
    const int k = z[0] >= z[1] ? 0 : 1;
    const Tensor g = net.input_gradient(params, x, k);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        Tensor xp = x, xm = x;
        xp.data[i] += 1e-5;
        xm.data[i] -= 1e-5;
        const double fd = (net.logits(params, xp)[k] - net.logits(params, xm)[k]) / 2e-5;
        num += (fd - g.data[i]) * (fd - g.data[i]);
        den += fd * fd;
    }
    CHECK(std::sqrt(num / den) <= 1e-5);

    const Tensor s = net.compute_saliency(params, {x})[0];
    double mx = 0;
    for (double v : s.data) {
        CHECK(v >= 0.0);
        mx = std::max(mx, v);
    }
    CHECK(mx == 1.0);
}

TEST_CASE("bridge with zero inputs and zero projection is the identity") {
    const ModelConfig m = tiny_model(16, 2, 2);
    const Network net(m);
    auto params = build_model(m, 6);
    for (double& v : params.values("bridge.proj.weight")) v = 0.0;
    auto rng = make_rng({36});
    const Batch images{random_tensor(rng, 1, 16, 16)};
    const auto enc = net.encode(params, images);
    const Batch zeros{make_image(16, 16)};
    const auto out = net.bridge_inject(params, zeros, zeros, enc.bottleneck);
    CHECK(bitwise_equal(out[0], enc.bottleneck[0]));

    auto params2 = build_model(m, 6);
    const auto moved = net.bridge_inject(params2, net.compute_saliency(params2, images), images, enc.bottleneck);
    CHECK(moved[0].same_shape(enc.bottleneck[0]));
    CHECK_FALSE(bitwise_equal(moved[0], enc.bottleneck[0]));
}

TEST_CASE("decode range, plain U-Net identity and inference determinism") {
    ModelConfig m = tiny_model(16, 2, 2);
    m.bridge_enabled = false;
    const Network net(m);
    const auto params = build_model(m, 7);
    auto rng = make_rng({37});
    const Batch images{random_tensor(rng, 1, 16, 16), random_tensor(rng, 1, 16, 16)};
    const auto enc = net.encode(params, images);
    const auto seg = net.decode(params, enc.skips, enc.bottleneck);
    const auto bundle = net.forward_multitask(params, images, Mode::infer);
    for (std::size_t i = 0; i < images.size(); ++i) {
        CHECK(bitwise_equal(seg[i], bundle.seg_probs[i]));
        CHECK(seg[i].height == 16);
        for (double v : seg[i].data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    const auto again = net.forward_multitask(params, images, Mode::infer);
    CHECK(again.class_logits == bundle.class_logits);
    CHECK(bitwise_equal(again.seg_probs[1], bundle.seg_probs[1]));

    const auto train_a = net.forward_multitask(params, images, Mode::train, 99);
    const auto train_b = net.forward_multitask(params, images, Mode::train, 99);
    const auto train_c = net.forward_multitask(params, images, Mode::train, 100);
    CHECK(train_a.class_logits == train_b.class_logits);
    CHECK(train_a.class_logits != train_c.class_logits);
}

TEST_CASE("disabled heads raise unsupported-operation errors") {
    auto rng = make_rng({38});
    const Batch images{random_tensor(rng, 1, 16, 16)};

    ModelConfig unet = tiny_model(16, 2, 2);
    unet.classifier_enabled = false;
    unet.bridge_enabled = false;
    const Network u(unet);
    const auto pu = build_model(unet, 1);
    CHECK_FALSE(pu.contains("cls.fc.weight"));
    CHECK_THROWS_AS(u.classify(pu, u.encode(pu, images).bottleneck), UnsupportedOperation);
    CHECK_THROWS_AS(u.compute_saliency(pu, images), UnsupportedOperation);
    const auto bu = u.forward_multitask(pu, images, Mode::infer);
    CHECK(bu.class_logits.rows() == 0);
    CHECK(bu.saliency.empty());
    CHECK(bu.seg_probs.size() == 1);

    ModelConfig enc = tiny_model(16, 2, 2);
    enc.decoder_enabled = false;
    enc.bridge_enabled = false;
    const Network e(enc);
    const auto pe = build_model(enc, 1);
    const auto encoded = e.encode(pe, images);
    CHECK_THROWS_AS(e.decode(pe, encoded.skips, encoded.bottleneck), UnsupportedOperation);
    CHECK_THROWS_AS(e.bridge_inject(pe, images, images, encoded.bottleneck), UnsupportedOperation);
    CHECK(e.forward_multitask(pe, images, Mode::infer).seg_probs.empty());

    ModelConfig bridge_only = tiny_model(16, 2, 2);
    bridge_only.classifier_enabled = false;
    CHECK_THROWS_AS(bridge_only.validate(), ConfigError);
}

TEST_CASE("UMTLS and MultiMix share one forward pass") {
    const ModelConfig m = tiny_model(16, 2, 2);
    const Network net(m);
    const auto params = build_model(m, 9);
    auto rng = make_rng({39});
    const Batch images{random_tensor(rng, 1, 16, 16)};
    const auto a = net.forward_multitask(params, images, Mode::infer);
    const auto b = Network(m).forward_multitask(params, images, Mode::infer);
    CHECK(a.class_logits == b.class_logits);
    CHECK(bitwise_equal(a.seg_probs[0], b.seg_probs[0]));
    CHECK(bitwise_equal(a.saliency[0], b.saliency[0]));
}

TEST_CASE("parameter gradients match finite differences in train mode") {
    for (bool bridge : {false, true}) {
        CAPTURE(bridge);
        ModelConfig m = tiny_model(8, 2, 2);
        m.bridge_enabled = bridge;
        const Network net(m);
        const auto params = build_model(m, 10);
        auto rng = make_rng({40});
        const Tensor x = random_tensor(rng, 1, 8, 8);
        const Probe probe{random_tensor(rng, 1, 8, 8, -1.0, 1.0), {0.7, -1.3}};
        const Tensor saliency = bridge ? net.saliency_sample(params, x) : Tensor{};
        const Tensor* sal = bridge ? &saliency : nullptr;

        auto forward = [&](const ParameterSet& p) {
            auto dr = make_rng({77});
            return net.forward_sample(p, x, &dr, {true, true}, sal);
        };
        const SampleTrace t = forward(params);
        ParameterSet grads = params.zeros_like();
        net.backward_sample(params, t, probe.logit_weight, &probe.seg_weight, grads);

        double num = 0, den = 0;
        auto sample_rng = make_rng({41});
        for (const auto& arr : params.arrays()) {
            for (int s = 0; s < 6; ++s) {
                const std::size_t i = std::min(arr.values.size() - 1,
                                               static_cast<std::size_t>(uniform01(sample_rng) * arr.values.size()));
                auto p = params;
                const double h = 1e-5;
                p.values(arr.name)[i] += h;
                const double fp = probe.value(forward(p));
                p.values(arr.name)[i] -= 2 * h;
                const double fm = probe.value(forward(p));
                const double fd = (fp - fm) / (2 * h);
                const double an = grads.values(arr.name)[i];
                num += (fd - an) * (fd - an);
                den += fd * fd;
            }
        }
        CHECK(std::sqrt(num / den) <= 1e-4);
    }
}

TEST_CASE("saliency is a constant of the training gradient") {
    const ModelConfig m = tiny_model(8, 2, 2);
    const Network net(m);
    const auto params = build_model(m, 11);
    auto rng = make_rng({42});
    const Tensor x = random_tensor(rng, 1, 8, 8);
    const Tensor dseg = random_tensor(rng, 1, 8, 8, -1.0, 1.0);

    // Reference: saliency rebuilt from a frozen copy of the parameters.
    const ParameterSet frozen = params;
    const Tensor sal = net.saliency_sample(frozen, x);
    auto r1 = make_rng({5});
    auto r2 = make_rng({5});
    const SampleTrace with_frozen = net.forward_sample(params, x, &r1, {false, true}, &sal);
    const SampleTrace recomputed = net.forward_sample(params, x, &r2, {false, true});
    ParameterSet g1 = params.zeros_like(), g2 = params.zeros_like();
    net.backward_sample(params, with_frozen, {}, &dseg, g1);
    net.backward_sample(params, recomputed, {}, &dseg, g2);

    double num = 0, den = 0;
    for (const auto& arr : params.arrays()) {
        if (arr.group != ParamGroup::encoder) continue;
        const auto a = g1.values(arr.name), b = g2.values(arr.name);
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += a[i] * a[i];
        }
    }
    CHECK(den > 0);
    CHECK(std::sqrt(num / den) <= 1e-6);
    // No gradient reaches the classifier through the saliency path.
    for (double v : g2.values("cls.fc.weight")) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip") {
    const testing::TempDir dir("ckpt");
    const ModelConfig m = tiny_model(16, 2, 2);
    const Network net(m);
    Checkpoint ck;
    ck.model = m;
    ck.params = build_model(m, 12);
    ck.optimizer = AdamState::like(ck.params);
    ck.optimizer->t = 3;
    ck.optimizer->m.arrays()[0].values[0] = 0.25;
    ck.step = 17;
    ck.epoch = 2;
    ck.seed = 12;
    ck.metadata = R"({"note":"x"})";
    save_checkpoint(dir / "a.ckpt", ck);
    const Checkpoint back = load_checkpoint(dir / "a.ckpt");
    CHECK(back.params == ck.params);
    CHECK(back.params.digest() == ck.params.digest());
    CHECK(back.model == m);
    CHECK(back.step == 17);
    CHECK(back.epoch == 2);
    CHECK(back.metadata == ck.metadata);
    REQUIRE(back.optimizer);
    CHECK(*back.optimizer == *ck.optimizer);

    auto rng = make_rng({43});
    const Batch images{random_tensor(rng, 1, 16, 16)};
    const auto before = net.forward_multitask(ck.params, images, Mode::infer);
    const auto after = net.forward_multitask(back.params, images, Mode::infer);
    CHECK(before.class_logits == after.class_logits);
    CHECK(bitwise_equal(before.seg_probs[0], after.seg_probs[0]));

    save_checkpoint(dir / "b.ckpt", back);
    CHECK(file_digest(dir / "a.ckpt") == file_digest(dir / "b.ckpt"));

    SUBCASE("32-bit storage") {
        Checkpoint f = ck;
        f.dtype = DType::f32;
        save_checkpoint(dir / "f.ckpt", f);
        const auto fb = load_checkpoint(dir / "f.ckpt");
        CHECK(fb.dtype == DType::f32);
        const auto& v = fb.params.arrays()[0].values;
        CHECK(v[0] == static_cast<double>(static_cast<float>(ck.params.arrays()[0].values[0])));
    }
    SUBCASE("corrupt and mismatched files") {
        auto bytes = testing::read_file(dir / "a.ckpt");
        testing::write_file(dir / "trunc.ckpt", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), LoadError);
        testing::write_file(dir / "junk.ckpt", "not a checkpoint");
        CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), LoadError);
        auto versioned = bytes;
        versioned[8] = 9;
        testing::write_file(dir / "v.ckpt", versioned);
        CHECK_THROWS_AS(load_checkpoint(dir / "v.ckpt"), VersionError);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), LoadError);

        ModelConfig other = m;
        other.base_channels = 3;
        CHECK_THROWS_AS(Network(other).check_params(ck.params), VersionError);
    }
}
