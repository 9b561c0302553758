#include "metrics.hpp"

#include <nlohmann/json.hpp>

#include "common.hpp"

namespace modalfuse {

ConfusionMatrix confusion(std::span<const int> labels, std::span<const int> predictions)
{
    if (labels.size() != predictions.size())
        fail(ErrorCode::invalid_argument, "confusion: " + std::to_string(labels.size()) + " labels vs " +
                                              std::to_string(predictions.size()) + " predictions");
    if (labels.empty()) fail(ErrorCode::invalid_argument, "confusion: empty input");

    ConfusionMatrix m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        const int p = predictions[i];
        if ((y != 0 && y != 1) || (p != 0 && p != 1))
            fail(ErrorCode::invalid_argument, "confusion: labels must be 0 or 1");
        if (y == 1)
            (p == 1 ? m.tp : m.fn) += 1;
        else
            (p == 1 ? m.fp : m.tn) += 1;
    }
    return m;
}

EvaluationReport compute_metrics(const ConfusionMatrix& m)
{
    const auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };

    EvaluationReport r;
    r.confusion = m;
    r.n = m.total();
    r.accuracy = ratio(m.tp + m.tn, r.n);
    r.precision = ratio(m.tp, m.tp + m.fp);
    r.recall = ratio(m.tp, m.tp + m.fn);
    const double denom = r.precision + r.recall;
    r.f1 = denom > 0 ? 2.0 * r.precision * r.recall / denom : 0.0;
    return r;
}

std::string to_record(const EvaluationReport& report)
{
    nlohmann::ordered_json j;
    j["accuracy"] = report.accuracy;
    j["precision"] = report.precision;
    j["recall"] = report.recall;
    j["f1"] = report.f1;
    j["mean_loss"] = report.mean_loss;
    j["n"] = report.n;
    j["tp"] = report.confusion.tp;
    j["fp"] = report.confusion.fp;
    j["fn"] = report.confusion.fn;
    j["tn"] = report.confusion.tn;
    return j.dump();
}

EvaluationReport report_from_record(const std::string& record)
{
    try {
        const auto j = nlohmann::json::parse(record);
        EvaluationReport r;
        r.accuracy = j.at("accuracy").get<double>();
        r.precision = j.at("precision").get<double>();
        r.recall = j.at("recall").get<double>();
        r.f1 = j.at("f1").get<double>();
        r.mean_loss = j.at("mean_loss").get<double>();
        r.n = j.at("n").get<std::uint64_t>();
        r.confusion = {j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(),
                       j.at("fn").get<std::uint64_t>(), j.at("tn").get<std::uint64_t>()};
        return r;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::data, std::string("malformed evaluation record: ") + e.what());
    }
}

}  // namespace modalfuse
