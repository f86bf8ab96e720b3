#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "multimix/metrics.hpp"
#include "multimix/tensor.hpp"
#include "multimix/train.hpp"

namespace multimix {

struct Quartiles {
    double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
    std::size_t n = 0;
};

// Nearest-rank: Q_p = x_(ceil(p n)) of the sorted sample. Empty input is an InputError.
Quartiles nearest_rank_quartiles(std::vector<double> values);

struct ScoreRow {
    std::string model;
    std::string n_class_labeled;
    std::string n_seg_labeled;
    std::size_t runs = 0;
    std::size_t failed = 0;
    MetricsReport in_domain;
    std::optional<MetricsReport> cross_domain;
};

struct BoxRecord {
    std::string model;
    std::string n_class_labeled;
    std::string n_seg_labeled;
    std::string domain;
    Quartiles dice;
};

struct ReportBundle {
    std::vector<ScoreRow> scores;
    std::vector<BoxRecord> boxes;
    std::vector<std::string> failures;
};

// Reads records.jsonl from each run directory (or a records file directly).
std::vector<GridRecord> load_records(const std::vector<std::filesystem::path>& runs);

// Means over repeats per (model, cell). Independent of record order. Throws
// InputError listing mismatches when models cover different cells or cells
// have different repeat counts.
ReportBundle aggregate(const std::vector<GridRecord>& records);

std::string scores_csv(const ReportBundle& report);
std::string boxplot_csv(const ReportBundle& report);
void write_report(const ReportBundle& report, const std::filesystem::path& out_dir);

// Foreground pixels with at least one background 4-neighbour (outside the
// image counts as background).
Tensor boundary(const Tensor& mask);

// RGB overlay: reference boundary green, predicted boundary red, shared
// boundary pixels yellow; every other pixel repeats the input image.
Tensor render_overlay(const Tensor& image, const Tensor& reference, const Tensor& predicted);

}  // namespace multimix
