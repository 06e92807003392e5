#pragma once

#include <string>
#include <vector>

namespace heartbert {

// Per-class one-vs-rest counts and the scores derived from them.
// `degenerate` marks a zero denominator (class absent from labels and/or
// predictions); the affected score is reported as 0.
struct ClassMetrics {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;
};

struct EvalReport {
    int n_classes = 0;
    long long total = 0;
    std::vector<std::vector<long long>> confusion;  // confusion[label][prediction]
    double accuracy = 0.0;
    // In single-label classification the pooled (micro) counts obey
    // TP + FP = TP + FN = N, so micro precision, recall, and F1 all collapse
    // to the one division trace/N — the same number as accuracy.
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f1 = 0.0;
    // Unweighted means over classes.
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
};

EvalReport evaluate_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                int n_classes);

// Fixed-width text table. `class_names` may be empty (classes are then shown
// by index) or must have exactly n_classes entries.
std::string render_report(const EvalReport& report, const std::string& task,
                          const std::vector<std::string>& class_names = {});

// Machine-readable twin of the table (deterministic key order).
std::string report_json(const EvalReport& report, const std::string& task,
                        const std::vector<std::string>& class_names = {},
                        const std::vector<std::string>& provenance = {});

// Writes the table (with `#> ` provenance lines) to `path` and the JSON
// document to `path`.json.
void save_report(const EvalReport& report, const std::string& task, const std::string& path,
                 const std::vector<std::string>& class_names = {},
                 const std::vector<std::string>& provenance = {});

}  // namespace heartbert
