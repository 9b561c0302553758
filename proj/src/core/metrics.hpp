#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace modalfuse {

// Positive class is cancer (label 1).
struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    bool operator==(const ConfusionMatrix&) const = default;
};

struct EvaluationReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double mean_loss = 0.0;
    ConfusionMatrix confusion;
    std::uint64_t n = 0;
};

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions);

// Zero denominators yield 0 rather than NaN. mean_loss is left at 0.
EvaluationReport compute_metrics(const ConfusionMatrix& m);

// Single-line JSON record with keys accuracy, precision, recall, f1,
// mean_loss, n, tp, fp, fn, tn.
std::string to_record(const EvaluationReport& report);
EvaluationReport report_from_record(const std::string& record);

}  // namespace modalfuse
