// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "multimix/checkpoint.hpp"
#include "multimix/cli.hpp"
#include "multimix/evaluate.hpp"
#include "multimix/losses.hpp"
#include "multimix/metrics.hpp"
#include "multimix/model.hpp"
#include "multimix/synth.hpp"
#include "multimix/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace multimix;
using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Accumulates named sub-checks into one outcome.
class Verdict {
public:
    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass_ = false;
            if (!failures_.empty()) failures_ += "; ";
            failures_ += what;
        }
    }
    void note(const std::string& s) {
        if (!notes_.empty()) notes_ += ", ";
        notes_ += s;
    }
    Outcome outcome() const { return {pass_, pass_ ? notes_ : notes_ + " | failed: " + failures_}; }

private:
    bool pass_ = true;
    std::string notes_, failures_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<Sample> synth_samples(std::size_t n, int size, std::uint64_t seed, bool shifted = false) {
    SynthConfig cfg;
    cfg.n = n;
    cfg.image_size = size;
    cfg.seed = seed;
    const auto flags = synth_positive_flags(cfg);
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        SynthSample s = render_synthetic(cfg, i, flags[i], shifted);
        out.push_back(Sample{s.id, std::move(s.image), s.class_label, std::move(s.mask)});
    }
    return out;
}

ModelConfig small_model(int size, int depth, int base) {
    ModelConfig m;
    m.input_height = size;
    m.input_width = size;
    m.depth = depth;
    m.base_channels = base;
    return m;
}

TrainOptions to_dir(const fs::path& dir) {
    TrainOptions o;
    o.out_dir = dir;
    return o;
}

// 1. Analytic loss gradients against central differences.
Outcome gradient_suite() {
    constexpr int kInstances = 25;
    constexpr double kTol = 1e-4, h = 1e-5;
    std::map<std::string, double> worst;
    std::map<std::string, int> checked;
    auto record = [&](const std::string& name, double err) {
        worst[name] = std::max(worst[name], err);
        ++checked[name];
    };
    auto rng = make_rng({1001});
    for (int trial = 0; trial < kInstances; ++trial) {
        const int rows = 2 + trial % 5, cols = 2 + trial % 3;
        std::vector<int> labels;
        for (int i = 0; i < rows; ++i) labels.push_back(static_cast<int>(uniform01(rng) * cols));
        const Logits x = random_logits(rng, rows, cols);
        record("cross_entropy", grad_rel_err(flat(cross_entropy(x, labels).grad), fd_logits(x, [&](const Logits& z) {
                                                 return cross_entropy(z, labels).value;
                                             }, h)));

        // Threshold low enough that most instances keep some strong rows.
        LossConfig cfg;
        cfg.t = 0.5;
        const int nu = 3 + trial % 4;
        const Logits strong = random_logits(rng, nu, cols);
        const Logits weak = softmax_rows(random_logits(rng, nu, cols, 4.0));
        const auto r = classification_loss(x, labels, strong, weak, cfg);
        double err = grad_rel_err(flat(r.grad_labeled), fd_logits(x, [&](const Logits& z) {
                                      return classification_loss(z, labels, strong, weak, cfg).value;
                                  }, h));
        if (r.keep_fraction > 0)
            err = std::max(err, grad_rel_err(flat(r.grad_strong), fd_logits(strong, [&](const Logits& z) {
                                                 return classification_loss(x, labels, z, weak, cfg).value;
                                             }, h)));
        record("classification_loss", err);

        const int side = 3 + trial % 4;
        Batch pl, target, pu;
        for (int i = 0; i < 2 + trial % 2; ++i) {
            pl.push_back(random_tensor(rng, 1, side, side, 0.05, 0.95));
            target.push_back(random_mask(rng, side, side, 0.5));
        }
        for (int i = 0; i < 2 + trial % 3; ++i) pu.push_back(random_tensor(rng, 1, side, side, 0.05, 0.95));
        record("dice_loss", grad_rel_err(flat(dice_loss(pl, target).grad),
                                         fd_maps(pl, [&](const Batch& z) { return dice_loss(z, target).value; }, h)));
        record("kl_consistency",
               grad_rel_err(flat(kl_consistency(pl, pu).grad),
                            fd_maps(pu, [&](const Batch& z) { return kl_consistency(pl, z).value; }, h)));

        const LossConfig sc;
        const double alpha = trial % 2 ? 5.0 : 1.0;
        const auto seg = segmentation_loss(pl, target, pu, alpha, sc);
        const Tensor frozen = batch_mean_map(pl);
        record("segmentation_loss",
               std::max(grad_rel_err(flat(seg.grad_unlabeled), fd_maps(pu, [&](const Batch& z) {
                                         return segmentation_loss(pl, target, z, alpha, sc).value;
                                     }, h)),
                        grad_rel_err(flat(seg.grad_labeled), fd_maps(pl, [&](const Batch& z) {
                                         return alpha * dice_loss(z, target).value +
                                                sc.beta * kl_consistency_to_mean(frozen, pu, sc.kl_epsilon).value;
                                     }, h))));
    }
    Verdict v;
    for (const auto& [name, err] : worst) {
        v.note(fmt::format("{} {:.1e} ({})", name, err, checked[name]));
        v.require(err <= kTol && checked[name] >= 20, name);
    }
    v.note(fmt::format("tol {:.0e}", kTol));
    return v.outcome();
}

// 2. Metrics against brute-force loops.
Outcome metric_oracles() {
    constexpr double kTol = 1e-9, kSsimTol = 1e-6;
    auto rng = make_rng({1002});
    double e_dice = 0, e_ahd = 0, e_f1 = 0, e_acc = 0, e_ssim = 0;
    for (int trial = 0; trial < 120; ++trial) {
        const double p = 0.02 + 0.5 * uniform01(rng);
        const Tensor a = random_mask(rng, 16, 16, p), b = random_mask(rng, 16, 16, p);
        e_dice = std::max(e_dice, std::abs(dice_score(a, b) - dice_oracle(a, b)));
        e_ahd = std::max(e_ahd, std::abs(avg_hausdorff(a, b) - ahd_oracle(a, b)));

        std::vector<int> pred, truth;
        for (int i = 0; i < 256; ++i) {
            pred.push_back(a.data[i] >= 0.5);
            truth.push_back(b.data[i] >= 0.5);
        }
        e_acc = std::max(e_acc, std::abs(accuracy(pred, truth) - accuracy_oracle(pred, truth)));
        for (int c = 0; c < 2; ++c)
            e_f1 = std::max(e_f1, std::abs(f1_class(pred, truth, c).score - f1_oracle(pred, truth, c)));
    }
    for (int trial = 0; trial < 120; ++trial) {
        Tensor a, b;
        if (trial % 4 == 0) {
            a = random_tensor(rng, 1, 32, 32);
            b = random_tensor(rng, 1, 32, 32);
        } else {
            a = random_mask(rng, 32, 32, 0.4);
            b = a;
            for (double& v : b.data)
                if (uniform01(rng) < 0.2) v = 1.0 - v;
        }
        e_ssim = std::max(e_ssim, std::abs(ssim(a, b) - ssim_oracle(a, b)));
    }
    Verdict v;
    v.note(fmt::format("dice {:.1e}, ahd {:.1e}, f1 {:.1e}, acc {:.1e} on 120 16x16 (tol {:.0e})", e_dice, e_ahd, e_f1,
                       e_acc, kTol));
    v.note(fmt::format("ssim {:.1e} on 120 32x32 (tol {:.0e})", e_ssim, kSsimTol));
    v.require(e_dice <= kTol, "dice");
    v.require(e_ahd <= kTol, "ahd");
    v.require(e_f1 <= kTol, "f1");
    v.require(e_acc <= kTol, "accuracy");
    v.require(e_ssim <= kSsimTol, "ssim");
    return v.outcome();
}

// 3. Classification loss identities.
Outcome classification_identities(const fs::path& work) {
    Verdict v;
    auto rng = make_rng({1003});
    int exact = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int rows = 1 + trial % 7, nu = trial % 5;
        std::vector<int> labels;
        for (int i = 0; i < rows; ++i) labels.push_back(static_cast<int>(uniform01(rng) * 2));
        const Logits x = random_logits(rng, rows, 2), strong = random_logits(rng, nu, 2);
        const Logits weak = softmax_rows(random_logits(rng, nu, 2, 5.0));
        LossConfig cfg;
        cfg.lambda_u = 0.0;
        cfg.t = 0.3;
        const auto r = classification_loss(x, labels, strong, weak, cfg);
        const auto ce = cross_entropy(x, labels);
        exact += r.value == ce.value && r.grad_labeled == ce.grad && (r.grad_strong.size() == 0 || r.grad_strong.isZero(0.0));
    }
    v.note(fmt::format("lambda=0 equals CE bitwise on {}/200", exact));
    v.require(exact == 200, "lambda=0 identity");

    // A freshly initialized model never reaches 0.999 confidence: nothing is
    // kept and the unsupervised term is exactly zero for a whole epoch.
    TrainConfig cfg;
    cfg.model = small_model(32, 2, 8);
    cfg.epochs = 1;
    cfg.batch_size = 10;
    cfg.loss.t = 0.999;
    cfg.split.n_class_labeled = 10;
    cfg.split.n_seg_labeled = 5;
    cfg.repeats = 1;
    const auto res = train(cfg, {synth_samples(60, 32, 31), {}}, to_dir(work / "c3"));
    std::size_t zero_steps = 0;
    for (const auto& s : res.history.steps)
        zero_steps += s.breakdown.l_c_unsup == 0.0 && s.breakdown.pseudo_label_keep_fraction == 0.0;
    v.note(fmt::format("t=0.999: unsupervised term and keep fraction 0 on {}/{} steps", zero_steps,
                       res.history.steps.size()));
    v.require(!res.history.steps.empty() && zero_steps == res.history.steps.size(), "t=0.999 epoch");
    return v.outcome();
}

// 4. Segmentation loss identities.
Outcome segmentation_identities() {
    Verdict v;
    auto rng = make_rng({1004});
    int exact = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int side = 4 + trial % 5;
        Batch pl, target, pu;
        for (int i = 0; i < 1 + trial % 3; ++i) {
            pl.push_back(random_tensor(rng, 1, side, side));
            target.push_back(random_mask(rng, side, side, 0.4));
        }
        for (int i = 0; i < trial % 4; ++i) pu.push_back(random_tensor(rng, 1, side, side));
        LossConfig cfg;
        cfg.beta = 0.0;
        const double alpha = trial % 2 ? 5.0 : 1.0;
        exact += segmentation_loss(pl, target, pu, alpha, cfg).value == alpha * dice_loss(pl, target).value;
    }
    v.note(fmt::format("beta=0 equals alpha*dice bitwise on {}/200", exact));
    v.require(exact == 200, "beta=0 identity");

    double min_kl = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 1000; ++trial) {
        Batch a, b;
        for (int i = 0; i < 1 + trial % 4; ++i) a.push_back(random_tensor(rng, 1, 6, 6));
        for (int i = 0; i < 1 + trial % 3; ++i) b.push_back(random_tensor(rng, 1, 6, 6));
        min_kl = std::min(min_kl, kl_consistency(a, b).value);
    }
    v.note(fmt::format("min KL over 1000 pairs {:.2e}", min_kl));
    v.require(min_kl >= 0.0, "kl >= 0");

    double max_same = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Batch a;
        for (int i = 0; i < 2 + trial % 3; ++i) a.push_back(random_tensor(rng, 1, 6, 6));
        Batch b(a.rbegin(), a.rend());
        max_same = std::max({max_same, std::abs(kl_consistency(a, a).value), std::abs(kl_consistency(a, b).value)});
    }
    v.note(fmt::format("KL at identical means {:.1e}", max_same));
    v.require(max_same <= 1e-15, "kl at identical means");
    return v.outcome();
}

// 5. Architecture invariants.
Outcome architecture_invariants(const fs::path& work) {
    Verdict v;
    auto rng = make_rng({1005});
    {
        const ModelConfig m = small_model(256, 4, 2);
        const Network net(m);
        const auto params = build_model(m, 1);
        const Batch images{random_tensor(rng, 1, 256, 256)};
        const auto enc = net.encode(params, images);
        bool ok = enc.skips.size() == 4 && enc.bottleneck[0].height == 16 && enc.bottleneck[0].width == 16 &&
                  enc.bottleneck[0].channels == 32;
        for (int i = 0; i < 4 && ok; ++i) ok = enc.skips[i][0].height == (256 >> i) && enc.skips[i][0].channels == (2 << i);
        const auto out = net.forward_multitask(params, images, Mode::infer);
        ok = ok && out.class_logits.rows() == 1 && out.class_logits.cols() == 2 && out.seg_probs[0].height == 256 &&
             out.seg_probs[0].width == 256 && out.saliency[0].height == 256;
        v.note("shape law at 256x256 depth 4");
        v.require(ok, "shape law");
    }
    {
        const ModelConfig m = small_model(32, 2, 4);
        const Network net(m);
        const auto params = build_model(m, 2);
        const Batch images{random_tensor(rng, 1, 32, 32), random_tensor(rng, 1, 32, 32)};
        const auto base = net.forward_multitask(params, images, Mode::infer);
        auto changed = params;
        for (auto& a : changed.arrays())
            if (a.group == ParamGroup::decoder || a.group == ParamGroup::bridge)
                for (double& x : a.values) x += uniform(rng, -0.5, 0.5);
        const auto other = net.forward_multitask(changed, images, Mode::infer);
        bool independent = other.class_logits == base.class_logits;
        bool decoder_moved = false;
        for (std::size_t i = 0; i < images.size(); ++i) {
            independent = independent && other.saliency[i].data == base.saliency[i].data;
            decoder_moved = decoder_moved || other.seg_probs[i].data != base.seg_probs[i].data;
        }
        v.note("classifier bitwise independent of decoder/bridge");
        v.require(independent && decoder_moved, "dataflow independence");

        double worst = 0;
        for (int trial = 0; trial < 20; ++trial) {
            LinearSurrogate lin{random_tensor(rng, 1, 16, 16, -1.0, 1.0)};
            const Tensor s = compute_saliency_with(lin, Batch{random_tensor(rng, 1, 16, 16)})[0];
            double wmax = 0;
            for (double w : lin.w.data) wmax = std::max(wmax, std::abs(w));
            for (std::size_t i = 0; i < s.data.size(); ++i)
                worst = std::max(worst, rel_err(s.data[i], std::abs(lin.w.data[i]) / wmax));
        }
        v.note(fmt::format("linear saliency rel err {:.1e} (tol 1e-6)", worst));
        v.require(worst <= 1e-6, "saliency oracle");

        auto zeroed = params;
        for (double& x : zeroed.values("bridge.proj.weight")) x = 0.0;
        const auto enc = net.encode(zeroed, images);
        const Batch zeros{make_image(32, 32), make_image(32, 32)};
        const auto injected = net.bridge_inject(zeroed, zeros, zeros, enc.bottleneck);
        v.note("bridge additive identity");
        v.require(injected[0].data == enc.bottleneck[0].data && injected[1].data == enc.bottleneck[1].data,
                  "bridge identity");

        Checkpoint ck;
        ck.model = m;
        ck.params = params;
        ck.optimizer = AdamState::like(params);
        save_checkpoint(work / "c5.ckpt", ck);
        const Checkpoint back = load_checkpoint(work / "c5.ckpt");
        const auto after = net.forward_multitask(back.params, images, Mode::infer);
        bool same = back.params == params && after.class_logits == base.class_logits;
        for (std::size_t i = 0; i < images.size(); ++i) same = same && after.seg_probs[i].data == base.seg_probs[i].data;
        v.note("checkpoint round trip bitwise");
        v.require(same, "checkpoint round trip");
    }
    return v.outcome();
}

// 6. Learning-rate schedule.
Outcome schedule() {
    TrainConfig c;
    Verdict v;
    const double l0 = lr_schedule(0, c), l8 = lr_schedule(8, c), l16 = lr_schedule(16, c);
    v.note(fmt::format("lr(0)={:g} lr(8)={:g} lr(16)={:g}", l0, l8, l16));
    v.require(l0 == 1e-4 && l8 == 1e-5 && l16 == 1e-6, "exact values");
    return v.outcome();
}

// 7. Overfit an 8-sample fully labeled set.
Outcome overfit(const fs::path& work) {
    constexpr double kMinutes = 10.0;
    TrainConfig cfg;
    cfg.model = small_model(64, 2, 8);
    cfg.epochs = 200;
    cfg.batch_size = 2;
    cfg.initial_lr = 3e-3;
    cfg.lr_decay_every = 1000;
    cfg.seed = 7;
    cfg.repeats = 1;
    const auto samples = synth_samples(8, 64, 71);
    const auto t0 = std::chrono::steady_clock::now();
    int reached = -1;
    double best_dice = 0, best_acc = 0;
    TrainOptions opt = to_dir(work / "c7");
    opt.on_epoch = [&](const EpochRecord& e) {
        if (!e.validation) return;
        best_dice = std::max(best_dice, *e.validation->dice);
        best_acc = std::max(best_acc, *e.validation->acc);
        if (reached < 0 && *e.validation->dice >= 0.95 && *e.validation->acc == 1.0) reached = e.epoch + 1;
    };
    // The training set doubles as the validation set, so each epoch record
    // carries training Dice and accuracy in inference mode.
    try {
        TrainConfig run = cfg;
        run.epochs = 200;
        for (int chunk = 0; chunk < 200 && reached < 0; chunk += 10) {
            opt.stop_after = chunk + 10;
            if (chunk > 0) opt.resume_from = work / "c7" / "last.ckpt";
            train(run, {samples, samples}, opt);
        }
    } catch (const std::exception& e) {
        return {false, std::string("training failed: ") + e.what()};
    }
    const double minutes = seconds_since(t0) / 60.0;
    Verdict v;
    v.note(reached > 0 ? fmt::format("Dice >= 0.95 and accuracy 1.0 at epoch {}", reached)
                       : fmt::format("best Dice {:.3f}, best accuracy {:.3f} in 200 epochs", best_dice, best_acc));
    v.note(fmt::format("{:.1f} min (limit {:.0f})", minutes, kMinutes));
    v.require(reached > 0 && reached <= 200, "overfit target");
    v.require(minutes <= kMinutes, "time limit");
    return v.outcome();
}

// 8. Semi-supervised direction of effect over 5 seeds.
Outcome direction_of_effect(const fs::path& work) {
    constexpr double kMargin = 0.02, kMinutes = 60.0;
    TrainConfig base;
    base.model = small_model(32, 2, 8);
    base.epochs = 50;
    base.batch_size = 10;
    base.initial_lr = 3e-3;
    base.lr_decay_every = 1000;
    base.repeats = 5;
    base.seed = 0;
    base.split.n_class_labeled = 20;
    base.split.n_seg_labeled = 10;
    GridData data{synth_samples(220, 32, 11), synth_samples(20, 32, 12), synth_samples(100, 32, 13), {}};
    const auto t0 = std::chrono::steady_clock::now();
    const auto records = run_grid(base, data, {base.split},
                                  {Variant::multimix, Variant::umtl, Variant::encssl, Variant::enc}, work / "c8");
    const double minutes = seconds_since(t0) / 60.0;

    std::map<std::string, std::vector<double>> dice, acc;
    std::size_t failed = 0;
    for (const auto& r : records) {
        if (!r.ok || !r.in_domain) {
            ++failed;
            continue;
        }
        if (r.in_domain->dice) dice[r.model].push_back(*r.in_domain->dice);
        if (r.in_domain->acc) acc[r.model].push_back(*r.in_domain->acc);
    }
    auto mean = [](const std::vector<double>& xs) {
        double s = 0;
        for (double x : xs) s += x;
        return xs.empty() ? std::nan("") : s / static_cast<double>(xs.size());
    };
    const double d_mm = mean(dice["MultiMix"]), d_umtl = mean(dice["UMTL"]);
    const double a_ssl = mean(acc["EncSSL"]), a_enc = mean(acc["Enc"]);
    Verdict v;
    v.note(fmt::format("Dice MultiMix {:.4f} vs UMTL {:.4f} (diff {:+.4f}, need >= {})", d_mm, d_umtl, d_mm - d_umtl,
                       kMargin));
    v.note(fmt::format("Acc EncSSL {:.4f} vs Enc {:.4f} (diff {:+.4f}, need >= {})", a_ssl, a_enc, a_ssl - a_enc,
                       kMargin));
    v.note(fmt::format("{} runs, {} failed, {:.1f} min (limit {:.0f})", records.size(), failed, minutes, kMinutes));
    v.require(failed == 0, "failed runs");
    v.require(d_mm - d_umtl >= kMargin, "segmentation gain");
    v.require(a_ssl - a_enc >= kMargin, "classification gain");
    v.require(minutes <= kMinutes, "time limit");
    return v.outcome();
}

// 9. Cross-domain evaluation through the command-line protocol.
Outcome cross_domain(const fs::path& work) {
    const fs::path dir = work / "c9";
    std::ostringstream out, err;
    auto cli = [&](std::vector<std::string> args) {
        args.insert(args.begin(), "multimix");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    };
    Verdict v;
    if (cli({"synth", "--out", (dir / "train").string(), "--n", "40", "--size", "32", "--seed", "91"}) != 0 ||
        cli({"synth", "--out", (dir / "test").string(), "--n", "40", "--size", "32", "--seed", "92"}) != 0)
        return {false, "synth failed: " + err.str()};
    TrainConfig cfg;
    cfg.model = small_model(32, 2, 8);
    cfg.epochs = 15;
    cfg.batch_size = 4;
    cfg.initial_lr = 3e-3;
    cfg.lr_decay_every = 1000;
    cfg.repeats = 1;
    cfg.data.train_manifest = "train/manifest.csv";
    write_file(dir / "config.json", to_json_string(cfg));
    if (cli({"train", "--config", (dir / "config.json").string(), "--out", (dir / "run").string()}) != 0)
        return {false, "train failed: " + err.str()};
    if (cli({"eval", "--checkpoint", (dir / "run" / "last.ckpt").string(), "--manifest",
             (dir / "test" / "manifest.csv").string(), "--cross-manifest",
             (dir / "test" / "shifted" / "manifest.csv").string(), "--out", (dir / "eval").string()}) != 0)
        return {false, "eval failed: " + err.str()};

    std::map<std::string, double> dice;
    std::istringstream csv(read_file(dir / "eval" / "metrics.csv"));
    std::string line, header;
    std::getline(csv, header);
    while (std::getline(csv, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        if (f.size() == 7) dice[f[0]] = std::stod(f[4]);
    }
    v.note(fmt::format("header '{}'", header));
    v.require(header == "domain,Acc,F1-N,F1-P,DS,HD,SSIM", "column order");
    v.require(dice.count("in") && dice.count("cross"), "tagged in/cross rows");
    if (dice.count("in") && dice.count("cross")) {
        v.note(fmt::format("Dice in {:.3f} vs cross {:.3f}", dice["in"], dice["cross"]));
        v.require(dice["cross"] < dice["in"], "cross-domain degradation");
    }
    return v.outcome();
}

// 10. Bitwise reproducibility of full training runs.
Outcome determinism(const fs::path& work) {
    TrainConfig cfg;
    cfg.model = small_model(32, 2, 4);
    cfg.epochs = 3;
    cfg.batch_size = 5;
    cfg.initial_lr = 1e-3;
    cfg.seed = 3;
    cfg.repeats = 1;
    cfg.loss.t = 0.5;
    cfg.split.n_class_labeled = 8;
    cfg.split.n_seg_labeled = 5;
    const TrainData data{synth_samples(30, 32, 101), synth_samples(8, 32, 102)};
    train(cfg, data, to_dir(work / "c10a"));
    train(cfg, data, to_dir(work / "c10b"));
    Verdict v;
    const bool history = read_file(work / "c10a" / "history.jsonl") == read_file(work / "c10b" / "history.jsonl");
    const auto last_a = file_digest(work / "c10a" / "last.ckpt"), last_b = file_digest(work / "c10b" / "last.ckpt");
    const bool best = file_digest(work / "c10a" / "best.ckpt") == file_digest(work / "c10b" / "best.ckpt");
    v.note(fmt::format("history identical: {}, last.ckpt {} / {}, best.ckpt identical: {}", history,
                       last_a.substr(0, 12), last_b.substr(0, 12), best));
    v.require(history, "history");
    v.require(last_a == last_b, "last checkpoint");
    v.require(best, "best checkpoint");
    return v.outcome();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MultiMix acceptance criteria"};
    std::vector<int> only;
    std::string work_arg;
    bool keep = false;
    app.add_option("--only", only, "Run only these criteria (1-10)");
    app.add_option("--work", work_arg, "Working directory (default: a fresh temporary directory)");
    app.add_flag("--keep", keep, "Keep the working directory");
    CLI11_PARSE(app, argc, argv);

    std::optional<TempDir> temp;
    fs::path work;
    if (work_arg.empty()) {
        temp.emplace("acceptance");
        work = temp->path();
    } else {
        work = work_arg;
        fs::create_directories(work);
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient suite", gradient_suite},
        {"metric oracles", metric_oracles},
        {"classification loss identities", [&] { return classification_identities(work); }},
        {"segmentation loss identities", segmentation_identities},
        {"architecture invariants", [&] { return architecture_invariants(work); }},
        {"learning-rate schedule", schedule},
        {"overfit 8 samples", [&] { return overfit(work); }},
        {"direction of effect", [&] { return direction_of_effect(work); }},
        {"cross-domain protocol", [&] { return cross_domain(work); }},
        {"determinism", [&] { return determinism(work); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << fmt::format("{} {:>2} {}: {} [{:.1f} s]", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                                 o.detail, seconds_since(t0))
                  << std::endl;
    }
    if (keep && temp) std::cout << "working directory: " << work.string() << " (removed on exit)" << std::endl;
    return failed == 0 ? 0 : 1;
}
