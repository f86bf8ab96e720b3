#include "multimix/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "multimix/checkpoint.hpp"
#include "multimix/errors.hpp"
#include "multimix/evaluate.hpp"
#include "multimix/image_io.hpp"
#include "multimix/report.hpp"
#include "multimix/synth.hpp"
#include "multimix/train.hpp"

namespace multimix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;
};

std::string absolute_from(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    const fs::path path(p);
    return (path.is_absolute() ? path : fs::absolute(base / path)).lexically_normal().string();
}

std::optional<std::uint64_t> env_seed() {
    const char* env = std::getenv("MULTIMIX_SEED");
    if (!env || !*env) return std::nullopt;
    try {
        std::size_t used = 0;
        const auto seed = std::stoull(env, &used);
        if (used == std::string(env).size() && env[0] != '-') return seed;
    } catch (const std::exception&) {
    }
    throw UsageError(fmt::format("MULTIMIX_SEED must be a non-negative integer, got '{}'", env));
}

// Config file, then MULTIMIX_SEED, then --override (highest). Manifest paths
// are resolved against the config file's directory.
TrainConfig resolve_config(const Common& c, bool required) {
    TrainConfig cfg;
    fs::path base = fs::current_path();
    if (!c.config.empty()) {
        cfg = load_train_config(c.config);
        base = fs::absolute(c.config).parent_path();
    } else if (required) {
        throw UsageError("--config is required");
    }
    cfg.seed = env_seed().value_or(cfg.seed);
    for (const auto& o : c.overrides) apply_override(cfg, o);
    for (auto* p : {&cfg.data.train_manifest, &cfg.data.val_manifest, &cfg.data.test_manifest,
                    &cfg.data.cross_manifest})
        *p = absolute_from(base, *p);
    cfg.validate();
    return cfg;
}

fs::path prepare_out(const std::string& out) {
    const fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out + "': " + ec.message());
    return dir;
}

void echo_config(const fs::path& dir, const std::string& text) {
    std::ofstream f(dir / "effective_config.json", std::ios::trunc);
    f << text << '\n';
    f.flush();
    if (!f) throw IoError("cannot write '" + (dir / "effective_config.json").string() + "'");
}

std::vector<Sample> load_optional(const std::string& manifest, const ModelConfig& m) {
    if (manifest.empty()) return {};
    return load_dataset(manifest, m.input_height, m.input_width);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    f << text;
    f.flush();
    if (!f) throw IoError("cannot write '" + path.string() + "'");
}

std::optional<std::size_t> parse_count(const std::string& s) {
    if (s == "full") return std::nullopt;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used);
        if (used == s.size()) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw UsageError("label count must be an integer or 'full', got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

int write_overlays(const Network& net, const ParameterSet& params, const std::vector<Sample>& samples, int limit,
                   const fs::path& dir) {
    if (limit <= 0 || !net.config().decoder_enabled) return 0;
    fs::create_directories(dir);
    int written = 0;
    for (const auto& s : samples) {
        if (written >= limit) break;
        if (!s.mask) continue;
        std::vector<SamplePrediction> pred;
        evaluate(net, params, {s}, "in", &pred);
        write_rgb8(dir / (s.id + ".png"), render_overlay(s.image, *s.mask, binarize(pred.front().seg_probs)));
        ++written;
    }
    return written;
}

int cmd_train(const Common& c, const std::string& resume, bool all_repeats, std::ostream& out) {
    const TrainConfig cfg = resolve_config(c, true);
    const fs::path dir = prepare_out(c.out);
    echo_config(dir, to_json_string(cfg));
    if (cfg.data.train_manifest.empty()) throw ConfigError("data.train_manifest is required for training");
    TrainData data{load_dataset(cfg.data.train_manifest, cfg.model.input_height, cfg.model.input_width),
                   load_optional(cfg.data.val_manifest, cfg.model)};
    if (all_repeats) {
        const auto runs = train_repeats(cfg, data, dir);
        for (std::size_t r = 0; r < runs.size(); ++r)
            out << fmt::format("repeat {}: {} epochs, last checkpoint {}\n", r, runs[r].history.epochs.size(),
                               runs[r].last_checkpoint ? runs[r].last_checkpoint->string() : "-");
        return 0;
    }
    TrainOptions opt;
    opt.out_dir = dir;
    if (!resume.empty()) opt.resume_from = resume;
    opt.on_epoch = [&](const EpochRecord& e) {
        out << fmt::format("epoch {} lr={:g} loss={:.6f} score={:.4f}{}\n", e.epoch, e.lr, e.mean_total,
                           e.selection_score, e.best ? " *" : "");
        out.flush();
    };
    const auto res = train(cfg, data, opt);
    out << "last checkpoint: " << (res.last_checkpoint ? res.last_checkpoint->string() : "-") << '\n';
    out << "best checkpoint: " << (res.best_checkpoint ? res.best_checkpoint->string() : "-") << '\n';
    return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, std::string manifest, std::string cross, int overlays,
             std::ostream& out) {
    if (!c.config.empty() || !c.overrides.empty()) {
        const TrainConfig cfg = resolve_config(c, false);
        if (manifest.empty()) manifest = cfg.data.test_manifest;
        if (cross.empty()) cross = cfg.data.cross_manifest;
    }
    if (manifest.empty()) throw UsageError("eval needs --manifest (or data.test_manifest in --config)");
    const fs::path dir = prepare_out(c.out);
    echo_config(dir, json{{"checkpoint", absolute_from(fs::current_path(), checkpoint)},
                          {"manifest", absolute_from(fs::current_path(), manifest)},
                          {"cross_manifest", absolute_from(fs::current_path(), cross)},
                          {"overlays", overlays}}
                         .dump(2));
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Network net(ck.model);
    std::string csv = "domain," + MetricsReport::csv_header() + "\n", records;
    auto run = [&](const std::string& path, const std::string& domain) {
        const auto samples = load_dataset(path, ck.model.input_height, ck.model.input_width);
        const auto report = evaluate(net, ck.params, samples, domain);
        csv += domain + "," + report.to_csv_row() + "\n";
        records += report.to_record() + "\n";
        out << report.to_record() << '\n';
        write_overlays(net, ck.params, samples, overlays, dir / ("overlays_" + domain));
    };
    run(manifest, "in");
    if (!cross.empty()) run(cross, "cross");
    write_text(dir / "metrics.csv", csv);
    write_text(dir / "metrics.txt", records);
    return 0;
}

int cmd_synth(const Common& c, const SynthConfig& sc, bool explicit_seed, std::ostream& out) {
    SynthConfig cfg = sc;
    if (!explicit_seed) cfg.seed = env_seed().value_or(cfg.seed);
    cfg.validate();
    const fs::path dir = prepare_out(c.out);
    echo_config(dir, json{{"n", cfg.n},
                          {"positive_fraction", cfg.positive_fraction},
                          {"image_size", cfg.image_size},
                          {"seed", cfg.seed},
                          {"noise_sigma", cfg.noise_sigma},
                          {"clutter", cfg.clutter}}
                         .dump(2));
    synth_generate(dir, cfg);
    out << fmt::format("wrote {} samples (plus shifted domain) to {}\n", cfg.n, dir.string());
    return 0;
}

int cmd_grid(const Common& c, const std::string& variants_arg, const std::string& cells_arg, std::ostream& out) {
    const TrainConfig cfg = resolve_config(c, true);
    std::vector<Variant> variants;
    if (variants_arg.empty()) variants = all_variants();
    else
        for (const auto& v : split_list(variants_arg, ',')) variants.push_back(parse_variant(v));
    std::vector<SplitSpec> cells;
    if (cells_arg.empty()) cells.push_back(cfg.split);
    for (const auto& cell : split_list(cells_arg, ',')) {
        const auto parts = split_list(cell, ':');
        if (parts.size() != 2) throw UsageError("grid cells are N_CLASS:N_SEG, got '" + cell + "'");
        cells.push_back({parse_count(parts[0]), parse_count(parts[1]), cfg.split.split_seed});
    }
    const fs::path dir = prepare_out(c.out);
    json echo = json::parse(to_json_string(cfg));
    echo["grid"] = {{"variants", json::array()}, {"cells", json::array()}};
    for (auto v : variants) echo["grid"]["variants"].push_back(variant_name(v));
    for (const auto& cell : cells)
        echo["grid"]["cells"].push_back(
            {cell.n_class_labeled ? json(*cell.n_class_labeled) : json("full"),
             cell.n_seg_labeled ? json(*cell.n_seg_labeled) : json("full")});
    echo_config(dir, echo.dump(2));
    if (cfg.data.train_manifest.empty() || cfg.data.test_manifest.empty())
        throw ConfigError("grid needs data.train_manifest and data.test_manifest");
    GridData data{load_optional(cfg.data.train_manifest, cfg.model), load_optional(cfg.data.val_manifest, cfg.model),
                  load_optional(cfg.data.test_manifest, cfg.model), load_optional(cfg.data.cross_manifest, cfg.model)};
    const auto records = run_grid(cfg, data, cells, variants, dir);
    std::size_t failed = 0;
    for (const auto& r : records) {
        if (!r.ok) {
            ++failed;
            out << fmt::format("FAILED {} ({}, {}) repeat {}: {}\n", r.model, r.n_class_labeled, r.n_seg_labeled,
                               r.repeat, r.error);
        }
    }
    out << fmt::format("{} records, {} failed, written to {}\n", records.size(), failed,
                       (dir / "records.jsonl").string());
    return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& runs, const std::string& checkpoint,
               const std::string& manifest, int overlays, std::ostream& out) {
    const fs::path dir = prepare_out(c.out);
    json echo{{"runs", json::array()}, {"checkpoint", checkpoint}, {"manifest", manifest}, {"overlays", overlays}};
    for (const auto& r : runs) echo["runs"].push_back(absolute_from(fs::current_path(), r));
    echo_config(dir, echo.dump(2));
    std::vector<fs::path> paths(runs.begin(), runs.end());
    const ReportBundle report = aggregate(load_records(paths));
    write_report(report, dir);
    out << scores_csv(report);
    if (!checkpoint.empty()) {
        if (manifest.empty()) throw UsageError("--checkpoint needs --manifest for overlays");
        const Checkpoint ck = load_checkpoint(checkpoint);
        const Network net(ck.model);
        const auto samples = load_dataset(manifest, ck.model.input_height, ck.model.input_width);
        const int n = write_overlays(net, ck.params, samples, overlays, dir / "overlays");
        out << fmt::format("{} overlays written\n", n);
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"MultiMix: semi-supervised joint classification and segmentation", "multimix"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Experiment config (JSON)");
        sub->add_option("--override", common.overrides, "KEY=VALUE override, repeatable")->take_all();
        sub->add_option("--out", common.out, "Output directory");
    };

    auto* train_cmd = app.add_subcommand("train", "Train one model");
    add_common(train_cmd);
    std::string resume;
    bool all_repeats = false;
    train_cmd->add_option("--resume", resume, "Resume from a checkpoint");
    train_cmd->add_flag("--all-repeats", all_repeats, "Run every repeat (seeds seed+0..seed+repeats-1)");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string checkpoint, manifest, cross;
    int overlays = 0;
    eval_cmd->add_option("--config", common.config, "Experiment config (JSON)");
    eval_cmd->add_option("--override", common.overrides, "KEY=VALUE override, repeatable")->take_all();
    eval_cmd->add_option("--out", common.out, "Output directory");
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--manifest", manifest, "In-domain manifest");
    eval_cmd->add_option("--cross-manifest", cross, "Cross-domain manifest");
    eval_cmd->add_option("--overlays", overlays, "Number of boundary overlays to write per domain");

    auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic dataset");
    SynthConfig sc;
    synth_cmd->add_option("--out", common.out, "Output directory")->required();
    synth_cmd->add_option("--n", sc.n, "Number of samples")->required();
    synth_cmd->add_option("--seed", sc.seed, "Seed");
    synth_cmd->add_option("--positive-fraction", sc.positive_fraction, "Fraction of positive samples");
    synth_cmd->add_option("--size", sc.image_size, "Image side in pixels");
    synth_cmd->add_option("--noise", sc.noise_sigma, "Pixel noise standard deviation");
    synth_cmd->add_option("--clutter", sc.clutter, "Strength of non-lung structures (0 = none)");

    auto* grid_cmd = app.add_subcommand("grid", "Run the variant x label-count grid");
    add_common(grid_cmd);
    std::string variants_arg, cells_arg;
    grid_cmd->add_option("--variants", variants_arg, "Comma list of U-Net,Enc,EncSSL,UMTL,UMTLS,MultiMix");
    grid_cmd->add_option("--cells", cells_arg, "Comma list of N_CLASS:N_SEG label counts (integer or full)");

    auto* report_cmd = app.add_subcommand("report", "Aggregate grid runs into tables, box plots and overlays");
    std::vector<std::string> runs;
    std::string rep_ckpt, rep_manifest;
    int rep_overlays = 8;
    report_cmd->add_option("runs", runs, "Grid output directories or records.jsonl files")->required();
    report_cmd->add_option("--out", common.out, "Output directory");
    report_cmd->add_option("--checkpoint", rep_ckpt, "Checkpoint for boundary overlays");
    report_cmd->add_option("--manifest", rep_manifest, "Manifest for boundary overlays");
    report_cmd->add_option("--overlays", rep_overlays, "Number of overlays");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    auto default_out = [&](const char* dir) {
        if (common.out.empty()) common.out = dir;
    };
    try {
        if (*train_cmd) {
            default_out("run");
            return cmd_train(common, resume, all_repeats, out);
        }
        if (*eval_cmd) {
            default_out("eval");
            return cmd_eval(common, checkpoint, manifest, cross, overlays, out);
        }
        if (*synth_cmd) return cmd_synth(common, sc, synth_cmd->count("--seed") > 0, out);
        if (*grid_cmd) {
            default_out("grid");
            return cmd_grid(common, variants_arg, cells_arg, out);
        }
        if (*report_cmd) {
            default_out("report");
            return cmd_report(common, runs, rep_ckpt, rep_manifest, rep_overlays, out);
        }
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << "\nbreakdown: " << e.breakdown() << '\n';
        return e.exit_code();
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    }
    return 2;
}

}  // namespace multimix
