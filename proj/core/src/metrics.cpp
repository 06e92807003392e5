#include "heartbert/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "heartbert/errors.hpp"
#include "json.hpp"

namespace heartbert {

namespace {

std::string class_label(const std::vector<std::string>& names, int c) {
    return names.empty() ? "class " + std::to_string(c) : names[static_cast<size_t>(c)];
}

void check_names(const std::vector<std::string>& names, int n_classes) {
    if (!names.empty() && names.size() != static_cast<size_t>(n_classes)) {
        fail(ErrorKind::Parameter, "class name list does not match the class count");
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

EvalReport evaluate_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                int n_classes) {
    if (n_classes < 2) fail(ErrorKind::Parameter, "evaluation needs at least two classes");
    if (labels.size() != predictions.size()) {
        fail(ErrorKind::Data, "labels and predictions differ in length");
    }
    if (labels.empty()) fail(ErrorKind::Data, "nothing to evaluate");

    EvalReport report;
    report.n_classes = n_classes;
    report.total = static_cast<long long>(labels.size());
    report.confusion.assign(static_cast<size_t>(n_classes),
                            std::vector<long long>(static_cast<size_t>(n_classes), 0));
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes) {
            fail(ErrorKind::Data, "label out of range at index " + std::to_string(i));
        }
        if (predictions[i] < 0 || predictions[i] >= n_classes) {
            fail(ErrorKind::Data, "prediction out of range at index " + std::to_string(i));
        }
        ++report.confusion[static_cast<size_t>(labels[i])][static_cast<size_t>(predictions[i])];
    }

    long long trace = 0;
    for (int c = 0; c < n_classes; ++c) trace += report.confusion[c][c];
    const double micro = static_cast<double>(trace) / static_cast<double>(report.total);
    report.accuracy = micro;
    report.micro_precision = micro;
    report.micro_recall = micro;
    report.micro_f1 = micro;

    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        ClassMetrics m;
        m.tp = report.confusion[c][c];
        for (int other = 0; other < n_classes; ++other) {
            if (other == c) continue;
            m.fp += report.confusion[other][c];
            m.fn += report.confusion[c][other];
        }
        if (m.tp + m.fp > 0) {
            m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
        } else {
            m.degenerate = true;
        }
        if (m.tp + m.fn > 0) {
            m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
        } else {
            m.degenerate = true;
        }
        if (m.precision + m.recall > 0.0) {
            m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        } else {
            m.degenerate = true;
        }
        macro_p += m.precision;
        macro_r += m.recall;
        macro_f += m.f1;
        report.per_class.push_back(m);
    }
    report.macro_precision = macro_p / n_classes;
    report.macro_recall = macro_r / n_classes;
    report.macro_f1 = macro_f / n_classes;
    return report;
}

std::string render_report(const EvalReport& report, const std::string& task,
                          const std::vector<std::string>& class_names) {
    check_names(class_names, report.n_classes);
    std::ostringstream out;
    out << "task: " << task << "\n";
    out << "examples: " << report.total << "   classes: " << report.n_classes << "\n";
    out << "accuracy: " << fmt(report.accuracy) << "\n";
    out << "micro  precision " << fmt(report.micro_precision) << "  recall "
        << fmt(report.micro_recall) << "  f1 " << fmt(report.micro_f1) << "\n";
    out << "macro  precision " << fmt(report.macro_precision) << "  recall "
        << fmt(report.macro_recall) << "  f1 " << fmt(report.macro_f1) << "\n";

    size_t width = 12;
    for (int c = 0; c < report.n_classes; ++c) {
        width = std::max(width, class_label(class_names, c).size() + 2);
    }
    out << "\nconfusion (rows: reference, columns: prediction)\n";
    out << std::string(width, ' ');
    for (int c = 0; c < report.n_classes; ++c) {
        std::string name = class_label(class_names, c);
        out << name << std::string(width - name.size(), ' ');
    }
    out << "\n";
    for (int r = 0; r < report.n_classes; ++r) {
        std::string name = class_label(class_names, r);
        out << name << std::string(width - name.size(), ' ');
        for (int c = 0; c < report.n_classes; ++c) {
            std::string cell = std::to_string(report.confusion[r][c]);
            out << cell << std::string(width - cell.size(), ' ');
        }
        out << "\n";
    }

    out << "\nper class\n";
    for (int c = 0; c < report.n_classes; ++c) {
        const auto& m = report.per_class[static_cast<size_t>(c)];
        out << "  " << class_label(class_names, c) << ": precision " << fmt(m.precision)
            << "  recall " << fmt(m.recall) << "  f1 " << fmt(m.f1);
        if (m.degenerate) out << "  (degenerate: class missing from labels or predictions)";
        out << "\n";
    }
    return out.str();
}

std::string report_json(const EvalReport& report, const std::string& task,
                        const std::vector<std::string>& class_names,
                        const std::vector<std::string>& provenance) {
    check_names(class_names, report.n_classes);
    nlohmann::json j;
    j["task"] = task;
    j["n_classes"] = report.n_classes;
    j["total"] = report.total;
    j["confusion"] = report.confusion;
    j["accuracy"] = report.accuracy;
    j["micro"] = {{"precision", report.micro_precision},
                  {"recall", report.micro_recall},
                  {"f1", report.micro_f1}};
    j["macro"] = {{"precision", report.macro_precision},
                  {"recall", report.macro_recall},
                  {"f1", report.macro_f1}};
    auto& per = j["per_class"] = nlohmann::json::array();
    for (int c = 0; c < report.n_classes; ++c) {
        const auto& m = report.per_class[static_cast<size_t>(c)];
        per.push_back({{"class", c},
                       {"name", class_label(class_names, c)},
                       {"tp", m.tp},
                       {"fp", m.fp},
                       {"fn", m.fn},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"degenerate", m.degenerate}});
    }
    if (!provenance.empty()) j["provenance"] = provenance;
    return j.dump(2) + "\n";
}

void save_report(const EvalReport& report, const std::string& task, const std::string& path,
                 const std::vector<std::string>& class_names,
                 const std::vector<std::string>& provenance) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Parameter, "cannot open " + path + " for writing");
    for (const auto& line : provenance) out << "#> " << line << "\n";
    out << render_report(report, task, class_names);
    if (!out) fail(ErrorKind::Parameter, "write failed for " + path);

    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) fail(ErrorKind::Parameter, "cannot open " + path + ".json for writing");
    js << report_json(report, task, class_names, provenance);
    if (!js) fail(ErrorKind::Parameter, "write failed for " + path + ".json");
}

}  // namespace heartbert
