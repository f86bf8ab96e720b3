#include "multimix/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "multimix/errors.hpp"

namespace multimix {

namespace {

using CellKey = std::tuple<std::string, std::string, std::string>;  // model, n_c, n_s

std::optional<double> mean_of(std::vector<double> v) {
    if (v.empty()) return std::nullopt;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports, const std::string& domain) {
    MetricsReport m;
    m.domain = domain;
    std::vector<double> acc, f1n, f1p, dice, ahd, ssim_v;
    for (const auto& r : reports) {
        if (r.acc) acc.push_back(*r.acc);
        if (r.f1_normal) f1n.push_back(*r.f1_normal);
        if (r.f1_pneumonia) f1p.push_back(*r.f1_pneumonia);
        if (r.dice) dice.push_back(*r.dice);
        if (r.ahd) ahd.push_back(*r.ahd);
        if (r.ssim) ssim_v.push_back(*r.ssim);
        m.n_samples = std::max(m.n_samples, r.n_samples);
        m.n_classified = std::max(m.n_classified, r.n_classified);
        m.n_segmented = std::max(m.n_segmented, r.n_segmented);
    }
    m.acc = mean_of(acc);
    m.f1_normal = mean_of(f1n);
    m.f1_pneumonia = mean_of(f1p);
    m.dice = mean_of(dice);
    m.ahd = mean_of(ahd);
    m.ssim = mean_of(ssim_v);
    return m;
}

std::vector<std::string> csv_fields(const std::string& row) {
    std::vector<std::string> out;
    std::stringstream ss(row);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

}  // namespace

Quartiles nearest_rank_quartiles(std::vector<double> values) {
    if (values.empty()) throw InputError("quartiles of an empty sample");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    auto rank = [&](double p) {
        const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-12));
        return values[std::clamp<std::size_t>(k, 1, n) - 1];
    };
    return {values.front(), rank(0.25), rank(0.5), rank(0.75), values.back(), n};
}

std::vector<GridRecord> load_records(const std::vector<std::filesystem::path>& runs) {
    std::vector<GridRecord> out;
    for (const auto& run : runs) {
        const auto file = std::filesystem::is_directory(run) ? run / "records.jsonl" : run;
        std::ifstream in(file);
        if (!in) throw LoadError("cannot read grid records '" + file.string() + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                out.push_back(GridRecord::from_json(line));
            } catch (const ParseError& e) {
                throw ParseError(file.string() + ": " + e.what(), lineno);
            }
        }
    }
    if (out.empty()) throw InputError("no completed runs to report");
    return out;
}

ReportBundle aggregate(const std::vector<GridRecord>& records) {
    std::map<CellKey, std::vector<const GridRecord*>> groups;
    for (const auto& r : records) groups[{r.model, r.n_class_labeled, r.n_seg_labeled}].push_back(&r);

    std::map<std::string, std::set<std::pair<std::string, std::string>>> cells_by_model;
    std::set<std::pair<std::string, std::string>> all_cells;
    std::set<std::size_t> repeat_counts;
    for (const auto& [key, group] : groups) {
        const auto& [model, nc, ns] = key;
        cells_by_model[model].insert({nc, ns});
        all_cells.insert({nc, ns});
        repeat_counts.insert(group.size());
    }
    std::vector<std::string> mismatches;
    for (const auto& [model, cells] : cells_by_model)
        for (const auto& c : all_cells)
            if (!cells.count(c))
                mismatches.push_back(fmt::format("{} lacks cell ({}, {})", model, c.first, c.second));
    if (repeat_counts.size() > 1)
        for (const auto& [key, group] : groups)
            mismatches.push_back(fmt::format("{} ({}, {}) has {} repeats", std::get<0>(key), std::get<1>(key),
                                             std::get<2>(key), group.size()));
    if (!mismatches.empty()) {
        std::string msg = "inconsistent grid cells:";
        for (const auto& m : mismatches) msg += "\n  " + m;
        throw InputError(msg);
    }

    ReportBundle out;
    for (const auto& [key, group] : groups) {
        ScoreRow row;
        std::tie(row.model, row.n_class_labeled, row.n_seg_labeled) = key;
        std::vector<MetricsReport> in, cross;
        std::vector<double> dice_in, dice_cross;
        // Sort by repeat so the result does not depend on record order.
        auto sorted = group;
        std::sort(sorted.begin(), sorted.end(), [](const GridRecord* a, const GridRecord* b) {
            return std::tie(a->repeat, a->seed) < std::tie(b->repeat, b->seed);
        });
        for (const GridRecord* r : sorted) {
            ++row.runs;
            if (!r->ok) {
                ++row.failed;
                out.failures.push_back(fmt::format("{} ({}, {}) repeat {}: {}", r->model, r->n_class_labeled,
                                                   r->n_seg_labeled, r->repeat, r->error));
                continue;
            }
            if (r->in_domain) {
                in.push_back(*r->in_domain);
                if (r->in_domain->dice) dice_in.push_back(*r->in_domain->dice);
            }
            if (r->cross_domain) {
                cross.push_back(*r->cross_domain);
                if (r->cross_domain->dice) dice_cross.push_back(*r->cross_domain->dice);
            }
        }
        row.in_domain = mean_report(in, "in");
        if (!cross.empty()) row.cross_domain = mean_report(cross, "cross");
        if (!dice_in.empty())
            out.boxes.push_back({row.model, row.n_class_labeled, row.n_seg_labeled, "in", nearest_rank_quartiles(dice_in)});
        if (!dice_cross.empty())
            out.boxes.push_back(
                {row.model, row.n_class_labeled, row.n_seg_labeled, "cross", nearest_rank_quartiles(dice_cross)});
        out.scores.push_back(std::move(row));
    }
    return out;
}

std::string scores_csv(const ReportBundle& report) {
    std::string header = "model,n_class_labeled,n_seg_labeled,runs,failed";
    for (const char* domain : {"in", "cross"})
        for (const auto& col : csv_fields(MetricsReport::csv_header())) header += fmt::format(",{}_{}", domain, col);
    std::string out = header + "\n";
    MetricsReport absent;
    for (const auto& r : report.scores) {
        out += fmt::format("{},{},{},{},{},{},{}\n", r.model, r.n_class_labeled, r.n_seg_labeled, r.runs, r.failed,
                           r.in_domain.to_csv_row(), r.cross_domain ? r.cross_domain->to_csv_row() : absent.to_csv_row());
    }
    return out;
}

std::string boxplot_csv(const ReportBundle& report) {
    std::string out = "model,n_class_labeled,n_seg_labeled,domain,n,min,q1,median,q3,max\n";
    for (const auto& b : report.boxes)
        out += fmt::format("{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", b.model, b.n_class_labeled,
                           b.n_seg_labeled, b.domain, b.dice.n, b.dice.min, b.dice.q1, b.dice.median, b.dice.q3,
                           b.dice.max);
    return out;
}

void write_report(const ReportBundle& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto put = [&](const char* name, const std::string& text) {
        std::ofstream f(out_dir / name, std::ios::trunc);
        f << text;
        f.flush();
        if (!f) throw IoError("cannot write '" + (out_dir / name).string() + "'");
    };
    put("scores.csv", scores_csv(report));
    put("boxplot.csv", boxplot_csv(report));
    std::string failures;
    for (const auto& f : report.failures) failures += f + "\n";
    put("failures.txt", failures);
}

Tensor boundary(const Tensor& mask) {
    Tensor b = make_image(mask.height, mask.width);
    auto fg = [&](int y, int x) {
        return y >= 0 && x >= 0 && y < mask.height && x < mask.width && mask.at(0, y, x) >= 0.5;
    };
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) b.at(0, y, x) = 1.0;
    return b;
}

Tensor render_overlay(const Tensor& image, const Tensor& reference, const Tensor& predicted) {
    if (!image.same_shape(reference) || !image.same_shape(predicted))
        throw InputError("overlay inputs must share one single-channel shape");
    const Tensor ref = boundary(reference);
    const Tensor pred = boundary(predicted);
    Tensor rgb(3, image.height, image.width);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const bool g = ref.at(0, y, x) > 0.0, r = pred.at(0, y, x) > 0.0;
            const double v = image.at(0, y, x);
            rgb.at(0, y, x) = r ? 1.0 : (g ? 0.0 : v);
            rgb.at(1, y, x) = g ? 1.0 : (r ? 0.0 : v);
            rgb.at(2, y, x) = (g || r) ? 0.0 : v;
        }
    }
    return rgb;
}

}  // namespace multimix
