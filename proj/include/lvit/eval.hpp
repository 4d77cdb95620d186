#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lvit/config.hpp"
#include "lvit/errors.hpp"
#include "lvit/io_util.hpp"

namespace lvit {

/// K x K tally; rows are true classes, columns predicted classes.
struct ConfusionMatrix {
    std::size_t k = 0;
    std::vector<std::uint64_t> counts;  // row-major k*k
    std::vector<std::string> label_names;

    explicit ConfusionMatrix(std::size_t k_ = 0, std::vector<std::string> names = {})
        : k(k_), counts(k_ * k_, 0), label_names(std::move(names)) {
        if (label_names.empty()) {
            for (std::size_t i = 0; i < k; ++i) label_names.push_back("class" + std::to_string(i));
        }
        if (label_names.size() != k) {
            throw ContractError("confusion matrix with " + std::to_string(k) + " classes got " +
                                std::to_string(label_names.size()) + " label names");
        }
    }

    std::uint64_t& at(std::size_t t, std::size_t p) { return counts[t * k + p]; }
    std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * k + p]; }

    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (std::uint64_t c : counts) s += c;
        return s;
    }
    std::uint64_t trace() const {
        std::uint64_t s = 0;
        for (std::size_t i = 0; i < k; ++i) s += at(i, i);
        return s;
    }
    std::uint64_t row_sum(std::size_t t) const {
        std::uint64_t s = 0;
        for (std::size_t p = 0; p < k; ++p) s += at(t, p);
        return s;
    }
    std::uint64_t col_sum(std::size_t p) const {
        std::uint64_t s = 0;
        for (std::size_t t = 0; t < k; ++t) s += at(t, p);
        return s;
    }
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& truth,
                                 const std::vector<std::size_t>& predicted, std::size_t k,
                                 std::vector<std::string> label_names = {}) {
    if (truth.size() != predicted.size()) {
        throw ContractError("confusion got " + std::to_string(truth.size()) + " true labels and " +
                            std::to_string(predicted.size()) + " predictions");
    }
    ConfusionMatrix cm(k, std::move(label_names));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= k || predicted[i] >= k) {
            throw ContractError("label pair (" + std::to_string(truth[i]) + "," +
                                std::to_string(predicted[i]) + ") out of range at sample " +
                                std::to_string(i));
        }
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double accuracy = 0.0;  // diagonal over row sum; identical to recall
};

/// Per-class precision/recall/F1/accuracy with the zero-denominator-means-0
/// policy.
inline ClassMetrics class_metrics(const ConfusionMatrix& cm, std::size_t c) {
    if (c >= cm.k) throw ContractError("class index " + std::to_string(c) + " out of range");
    const double tp = static_cast<double>(cm.at(c, c));
    const double col = static_cast<double>(cm.col_sum(c));
    const double row = static_cast<double>(cm.row_sum(c));
    ClassMetrics m;
    m.precision = col > 0.0 ? tp / col : 0.0;
    m.recall = row > 0.0 ? tp / row : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    m.accuracy = row > 0.0 ? tp / row : 0.0;
    return m;
}

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;  // unweighted mean of per-class f1
    double overall_accuracy = 0.0;
};

inline MetricsReport macro_metrics(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ContractError("metrics of an empty confusion matrix");
    MetricsReport r;
    for (std::size_t c = 0; c < cm.k; ++c) {
        const ClassMetrics m = class_metrics(cm, c);
        r.per_class.push_back(m);
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
    }
    const auto kd = static_cast<double>(cm.k);
    r.macro_precision /= kd;
    r.macro_recall /= kd;
    r.macro_f1 /= kd;
    r.overall_accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    return r;
}

// Reference headline metrics of the published 10-class model (percent),
// kept as documentation values, not test expectations.
inline constexpr double kReferenceRecallPct = 97.42;
inline constexpr double kReferencePrecisionPct = 97.49;
inline constexpr double kReferenceF1Pct = 97.45;
inline constexpr double kReferenceOverallPct = 97.75;

// --- CSV ---------------------------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

inline std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// Header row `label,<names...>`, then one row per true class with counts.
inline std::string confusion_to_csv(const ConfusionMatrix& cm) {
    std::string out = "label";
    for (const std::string& n : cm.label_names) out += "," + detail::csv_field(n);
    out += '\n';
    for (std::size_t t = 0; t < cm.k; ++t) {
        out += detail::csv_field(cm.label_names[t]);
        for (std::size_t p = 0; p < cm.k; ++p) out += "," + std::to_string(cm.at(t, p));
        out += '\n';
    }
    return out;
}

inline ConfusionMatrix confusion_from_csv(const std::string& csv) {
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t nl = csv.find('\n', pos);
        if (nl == std::string::npos) nl = csv.size();
        const std::string line = csv.substr(pos, nl - pos);
        pos = nl + 1;
        if (!line.empty()) rows.push_back(detail::csv_split(line));
    }
    if (rows.size() < 2) throw FormatError("confusion CSV has no data rows");
    const std::size_t k = rows.size() - 1;
    std::vector<std::string> names(rows[0].begin() + 1, rows[0].end());
    if (names.size() != k) throw FormatError("confusion CSV header does not match row count");
    ConfusionMatrix cm(k, std::move(names));
    for (std::size_t t = 0; t < k; ++t) {
        const auto& row = rows[t + 1];
        if (row.size() != k + 1) throw FormatError("confusion CSV row " + std::to_string(t + 1) +
                                                   " has " + std::to_string(row.size()) +
                                                   " fields, expected " + std::to_string(k + 1));
        for (std::size_t p = 0; p < k; ++p) {
            cm.at(t, p) = parse_u64("confusion cell", row[p + 1]);
        }
    }
    return cm;
}

// --- heatmap -------------------------------------------------------------

enum class HeatmapMode { kRowNormalized, kCounts };

/// Renders the matrix as a P6 portable pixmap (32x32-pixel cells, white to
/// deep blue ramp) and writes the numeric matrix as a sidecar CSV.
/// Row-normalized mode shades each row by its per-class proportion,
/// counts mode by the global max count.
inline void render_heatmap(const ConfusionMatrix& cm, const std::filesystem::path& image_path,
                           const std::filesystem::path& csv_path,
                           HeatmapMode mode = HeatmapMode::kRowNormalized) {
    constexpr std::size_t kCell = 32;
    const std::size_t side = cm.k * kCell;
    std::string ppm = "P6\n" + std::to_string(side) + " " + std::to_string(side) + "\n255\n";
    ppm.reserve(ppm.size() + side * side * 3);

    std::vector<double> shade(cm.k * cm.k, 0.0);
    if (mode == HeatmapMode::kRowNormalized) {
        for (std::size_t t = 0; t < cm.k; ++t) {
            const double row = static_cast<double>(cm.row_sum(t));
            for (std::size_t p = 0; p < cm.k; ++p) {
                shade[t * cm.k + p] = row > 0.0 ? static_cast<double>(cm.at(t, p)) / row : 0.0;
            }
        }
    } else {
        std::uint64_t mx = 0;
        for (std::uint64_t c : cm.counts) mx = std::max(mx, c);
        for (std::size_t i = 0; i < cm.counts.size(); ++i) {
            shade[i] = mx > 0 ? static_cast<double>(cm.counts[i]) / static_cast<double>(mx) : 0.0;
        }
    }

    constexpr double kDeep[3] = {8.0, 48.0, 107.0};  // full-intensity blue
    for (std::size_t py = 0; py < side; ++py) {
        const std::size_t t = py / kCell;
        for (std::size_t px = 0; px < side; ++px) {
            const std::size_t p = px / kCell;
            const double v = shade[t * cm.k + p];
            for (int ch = 0; ch < 3; ++ch) {
                const double col = 255.0 + v * (kDeep[ch] - 255.0);
                ppm.push_back(static_cast<char>(std::lround(col)));
            }
        }
    }
    write_file_atomic(image_path, ppm);
    write_file_atomic(csv_path, confusion_to_csv(cm));
}

// --- plain-text report -----------------------------------------------------

inline std::string format_metrics_text(const ConfusionMatrix& cm, const MetricsReport& r) {
    std::size_t w = 8;
    for (const std::string& n : cm.label_names) w = std::max(w, n.size());
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-*s  %10s %10s %10s %10s\n", static_cast<int>(w), "class",
                  "precision", "recall", "f1", "accuracy");
    out += buf;
    for (std::size_t c = 0; c < cm.k; ++c) {
        const ClassMetrics& m = r.per_class[c];
        std::snprintf(buf, sizeof(buf), "%-*s  %10.6f %10.6f %10.6f %10.6f\n", static_cast<int>(w),
                      cm.label_names[c].c_str(), m.precision, m.recall, m.f1, m.accuracy);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "%-*s  %10.6f %10.6f %10.6f\n", static_cast<int>(w), "macro",
                  r.macro_precision, r.macro_recall, r.macro_f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "overall_accuracy %.6f\n", r.overall_accuracy);
    out += buf;
    return out;
}

// --- comparison table -------------------------------------------------------

/// One method's per-class accuracy percentages. Rows quoted from published
/// sources carry their printed average, which for some sources is a
/// sample-weighted overall rate rather than the unweighted class mean; the
/// emitter reports it verbatim when present.
struct ComparisonRow {
    std::string method;
    std::vector<double> class_acc;  // percent, canonical class order
    std::optional<double> reported_average;
};

struct ComparisonTable {
    std::vector<std::string> class_names;
    std::vector<ComparisonRow> rows;
};

inline double class_mean(const ComparisonRow& row) {
    if (row.class_acc.empty()) throw ContractError("comparison row with no class values");
    double s = 0.0;
    for (double v : row.class_acc) s += v;
    return s / static_cast<double>(row.class_acc.size());
}

inline double row_average(const ComparisonRow& row) {
    return row.reported_average ? *row.reported_average : class_mean(row);
}

inline ComparisonTable make_comparison_table(std::vector<std::string> class_names,
                                             std::vector<ComparisonRow> rows) {
    for (const ComparisonRow& row : rows) {
        if (row.class_acc.size() != class_names.size()) {
            throw ContractError("method " + row.method + " supplies " +
                                std::to_string(row.class_acc.size()) + " class values, expected " +
                                std::to_string(class_names.size()));
        }
    }
    return {std::move(class_names), std::move(rows)};
}

inline std::string format_comparison_csv(const ComparisonTable& table) {
    std::string out = "method";
    for (const std::string& n : table.class_names) out += "," + detail::csv_field(n);
    out += ",Average\n";
    char buf[32];
    for (const ComparisonRow& row : table.rows) {
        out += detail::csv_field(row.method);
        for (double v : row.class_acc) {
            std::snprintf(buf, sizeof(buf), ",%.2f", v);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.2f", row_average(row));
        out += buf;
        out += '\n';
    }
    return out;
}

inline std::string format_comparison_text(const ComparisonTable& table) {
    std::size_t w = 6;
    for (const ComparisonRow& row : table.rows) w = std::max(w, row.method.size());
    char buf[64];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(w), "method");
    out += buf;
    for (const std::string& n : table.class_names) {
        std::snprintf(buf, sizeof(buf), " %9s", n.c_str());
        out += buf;
    }
    out += "   Average\n";
    for (const ComparisonRow& row : table.rows) {
        std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(w), row.method.c_str());
        out += buf;
        for (double v : row.class_acc) {
            std::snprintf(buf, sizeof(buf), " %9.2f", v);
            out += buf;
        }
        std::snprintf(buf, sizeof(buf), " %9.2f\n", row_average(row));
        out += buf;
    }
    return out;
}

/// The published 10-class comparison grid, kept as reference documentation
/// data. Printed averages are quoted as-is (for several methods they are
/// overall rates, not class means).
inline ComparisonTable reference_comparison_table() {
    std::vector<std::string> classes = {"ZSU23/4", "2S1", "BMP2", "BTR70", "T72",
                                        "BTR60",   "D7",  "T62",  "BRDM2", "ZIL131"};
    std::vector<ComparisonRow> rows = {
        {"CDSPP",
         {97.81, 88.69, 96.94, 80.58, 94.87, 85.74, 97.08, 98.18, 95.99, 94.87},
         91.01},
        {"CNN-SVM",
         {96.35, 82.12, 96.94, 78.46, 89.74, 100.00, 95.99, 97.08, 89.78, 90.11},
         91.66},
        {"Autoencoder",
         {87.34, 90.39, 88.96, 90.05, 89.10, 69.85, 96.08, 77.15, 92.12, 95.15},
         87.62},
        {"EDR-Autoencoder",
         {94.53, 93.80, 92.86, 87.90, 91.79, 79.55, 98.91, 99.64, 96.72, 94.14},
         91.29},
        {"MKSFF-CNN",
         {97.81, 93.80, 94.36, 99.49, 100.00, 98.46, 99.27, 95.24, 97.45, 99.27},
         97.44},
        {"LViT",
         {89.73, 98.89, 98.47, 99.27, 98.47, 95.97, 100.00, 97.06, 100.00, 89.71},
         97.75},
    };
    return make_comparison_table(std::move(classes), std::move(rows));
}

}  // namespace lvit
