#include "reconad/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "reconad/error.hpp"

namespace reconad {

namespace {

double ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

ConfusionCounts confusion_counts(std::span<const SampleLabel> predicted, std::span<const SampleLabel> truth,
                                 SampleLabel positive_class) {
    if (predicted.size() != truth.size()) {
        throw ShapeError("predicted (" + std::to_string(predicted.size()) + ") and true (" +
                         std::to_string(truth.size()) + ") labels differ in length");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool actual = truth[i] == positive_class;
        const bool called = predicted[i] == positive_class;
        if (actual && called) ++c.tp;
        else if (!actual && !called) ++c.tn;
        else if (!actual && called) ++c.fp;
        else ++c.fn;
    }
    return c;
}

double f1_score(double precision, double recall) {
    return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

BinaryMetrics binary_metrics(const ConfusionCounts& c) {
    BinaryMetrics m;
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.tn + c.fp);
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const SampleLabel> labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores and labels differ in length");
    const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), SampleLabel::NOK));
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw DomainError("ROC needs both OK and NOK samples");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] == SampleLabel::NOK ? tp : fp)++;
            ++i;
        }
        const RocPoint p{ratio(fp, neg), ratio(tp, pos), s};
        const RocPoint& prev = roc.points.back();
        roc.auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2;
        roc.points.push_back(p);
    }
    return roc;
}

EvaluationReport build_report(std::string combination_id, std::string species, std::span<const double> scores,
                              std::span<const SampleLabel> labels, const DecisionThreshold& threshold,
                              SampleLabel positive_class) {
    EvaluationReport r;
    r.combination_id = std::move(combination_id);
    r.species = std::move(species);
    r.threshold = threshold;
    const auto predicted = classify(scores, threshold.value);
    r.counts = confusion_counts(predicted, labels, positive_class);
    r.metrics = binary_metrics(r.counts);
    r.auc = roc_auc(scores, labels).auc;
    return r;
}

std::string format_metric(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

std::string report_csv_row(const EvaluationReport& r) {
    std::ostringstream out;
    out << r.combination_id << ',' << r.species << ',' << format_double(r.auc) << ',' << format_double(r.metrics.f1)
        << ',' << format_double(r.metrics.precision) << ',' << format_double(r.metrics.recall) << ','
        << format_double(r.metrics.specificity) << ',' << format_double(r.threshold.value) << ',' << r.counts.tp << ','
        << r.counts.tn << ',' << r.counts.fp << ',' << r.counts.fn;
    return out.str();
}

void write_report_csv(const std::filesystem::path& path, std::span<const EvaluationReport> reports) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // write then rename so a crash never leaves a half-written report behind
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) throw LoadError("cannot write " + path.string());
        out << kReportHeader << '\n';
        for (const auto& r : reports) out << report_csv_row(r) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

std::vector<EvaluationReport> read_report_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read report " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader) throw ParseError(path.string() + ": unexpected header");
    std::vector<EvaluationReport> out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 12) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 12 columns");
        try {
            EvaluationReport r;
            r.combination_id = cells[0];
            r.species = cells[1];
            r.auc = std::stod(cells[2]);
            r.metrics.f1 = std::stod(cells[3]);
            r.metrics.precision = std::stod(cells[4]);
            r.metrics.recall = std::stod(cells[5]);
            r.metrics.specificity = std::stod(cells[6]);
            r.threshold.value = std::stod(cells[7]);
            r.counts = {std::stoul(cells[8]), std::stoul(cells[9]), std::stoul(cells[10]), std::stoul(cells[11])};
            out.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
        }
    }
    return out;
}

}  // namespace reconad
