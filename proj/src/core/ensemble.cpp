#include "ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <mpfr.h>
#include <nlohmann/json.hpp>

#include "rng.hpp"

namespace modalfuse {

double EnsembleWeights::sum() const
{
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i)
        if (present[i]) s += values[i];
    return s;
}

namespace {

// Each weight is acc / sum correctly rounded, with the sum held exactly, so the
// result only depends on the ratios between accuracies.
EnsembleWeights normalize(const std::map<Modality, double>& val_accuracy)
{
    for (const auto& [m, acc] : val_accuracy)
        if (!(acc > 0.0) || !std::isfinite(acc))
            fail(ErrorCode::invalid_argument, "derive_weights: validation accuracy for " + std::string(to_string(m)) +
                                                  " must be positive, got " + std::to_string(acc));

    // Wide enough to hold any sum of three finite doubles without rounding.
    constexpr mpfr_prec_t kExactBits = 2200;
    mpfr_t total, q;
    mpfr_init2(total, kExactBits);
    mpfr_init2(q, 53);
    mpfr_set_zero(total, 1);
    for (const auto& [m, acc] : val_accuracy) mpfr_add_d(total, total, acc, MPFR_RNDN);

    EnsembleWeights w;
    w.present = {false, false, false};
    for (const auto& [m, acc] : val_accuracy) {
        const auto i = static_cast<std::size_t>(index_of(m));
        mpfr_d_div(q, acc, total, MPFR_RNDN);
        w.values[i] = mpfr_get_d(q, MPFR_RNDN);
        w.present[i] = true;
    }
    mpfr_clear(q);
    mpfr_clear(total);
    return w;
}

}  // namespace

EnsembleWeights derive_weights(const std::map<Modality, double>& val_accuracy)
{
    for (auto m : kAllModalities)
        if (!val_accuracy.count(m))
            fail(ErrorCode::incomplete_modalities,
                 "derive_weights: missing validation accuracy for " + std::string(to_string(m)));
    return normalize(val_accuracy);
}

EnsembleWeights derive_partial_weights(const std::map<Modality, double>& val_accuracy)
{
    if (val_accuracy.empty()) fail(ErrorCode::incomplete_modalities, "derive_weights: no modalities available");
    return normalize(val_accuracy);
}

std::string_view to_string(FusionMode mode) { return mode == FusionMode::hard ? "hard" : "soft"; }

std::optional<FusionMode> parse_fusion_mode(std::string_view s)
{
    if (s == "soft") return FusionMode::soft;
    if (s == "hard") return FusionMode::hard;
    return std::nullopt;
}

std::string_view to_string(PairingStrategy s)
{
    return s == PairingStrategy::by_group_id ? "by_group_id" : "synthetic_by_label";
}

std::optional<PairingStrategy> parse_pairing(std::string_view s)
{
    if (s == "by_group_id") return PairingStrategy::by_group_id;
    if (s == "synthetic_by_label") return PairingStrategy::synthetic_by_label;
    return std::nullopt;
}

FusedPrediction fuse(const std::map<Modality, ScoreVector>& scores, const EnsembleWeights& weights, FusionMode mode,
                     bool allow_partial)
{
    std::vector<Modality> used;
    for (auto m : kAllModalities) {
        const bool available = scores.count(m) && weights.has(m);
        if (available) {
            used.push_back(m);
        } else if (!allow_partial) {
            fail(ErrorCode::incomplete_modalities,
                 "incomplete modality set: missing " + std::string(to_string(m)));
        }
    }
    if (used.empty()) fail(ErrorCode::incomplete_modalities, "incomplete modality set: no modality available");

    double total = 0.0;
    for (auto m : used) {
        const double w = weights[m];
        if (!(w >= 0.0) || !std::isfinite(w))
            fail(ErrorCode::invalid_argument, "fuse: weights must be finite and non-negative");
        for (int c = 0; c < 2; ++c) {
            const double s = scores.at(m)[c];
            if (!(s >= 0.0 && s <= 1.0))
                fail(ErrorCode::invalid_argument, "fuse: scores must lie in [0,1] (" + std::string(to_string(m)) + ")");
        }
        total += w;
    }
    if (!(total > 0.0)) fail(ErrorCode::invalid_argument, "fuse: weights of available modalities sum to zero");

    const bool degraded = used.size() < kAllModalities.size();
    FusedPrediction out;
    out.degraded = degraded;
    for (auto m : used) {
        const auto& s = scores.at(m);
        out.per_modality_scores[m] = s;
        const double w = degraded ? weights[m] / total : weights[m];
        const ScoreVector contribution =
            mode == FusionMode::hard ? ScoreVector{one_hot(predicted_label(s))} : s;
        for (std::size_t c = 0; c < 2; ++c) out.weighted_scores.per_class[c] += w * contribution.per_class[c];
    }
    out.label = predicted_label(out.weighted_scores);
    return out;
}

MultimodalManifest build_multimodal_manifest(const std::map<Modality, DatasetManifest>& manifests,
                                             const PairingConfig& pairing, bool allow_partial)
{
    std::vector<Modality> modalities;
    for (auto m : kAllModalities) {
        auto it = manifests.find(m);
        if (it != manifests.end() && !it->second.empty()) {
            if (it->second.modality != m)
                fail(ErrorCode::invalid_argument, "multimodal pairing: manifest for " + std::string(to_string(m)) +
                                                      " holds " + std::string(to_string(it->second.modality)) +
                                                      " records");
            modalities.push_back(m);
        } else if (!allow_partial) {
            fail(ErrorCode::incomplete_modalities, "multimodal pairing: missing or empty manifest for " +
                                                       std::string(to_string(m)));
        }
    }
    if (modalities.empty()) fail(ErrorCode::incomplete_modalities, "multimodal pairing: no manifests supplied");

    MultimodalManifest out;
    out.pairing = pairing;
    char id[32];

    if (pairing.strategy == PairingStrategy::by_group_id) {
        // group -> modality -> first record (manifest order)
        std::map<std::string, std::map<Modality, const RecordRef*>> groups;
        for (auto m : modalities)
            for (const auto& r : manifests.at(m).records)
                if (r.group_id) groups[*r.group_id].try_emplace(m, &r);

        for (const auto& [group, refs] : groups) {
            if (refs.size() != modalities.size()) continue;
            const Label label = refs.begin()->second->label;
            const bool consistent = std::all_of(refs.begin(), refs.end(),
                                                [&](const auto& kv) { return kv.second->label == label; });
            if (!consistent) {
                out.warnings.push_back("group " + group + " skipped: labels disagree across modalities");
                continue;
            }
            MultimodalSample sample;
            sample.sample_id = group;
            sample.label = label;
            for (const auto& [m, ref] : refs) sample.images[m] = *ref;
            out.samples.push_back(std::move(sample));
        }
        if (out.samples.empty())
            fail(ErrorCode::data, "multimodal pairing: no group id is common to all modalities");
        return out;
    }

    Rng rng(pairing.seed);
    for (Label label : {Label::normal, Label::cancer}) {
        std::map<Modality, std::vector<const RecordRef*>> pools;
        std::size_t n = SIZE_MAX;
        std::size_t longest = 0;
        for (auto m : modalities) {
            auto& pool = pools[m];
            for (const auto& r : manifests.at(m).records)
                if (r.label == label) pool.push_back(&r);
            rng.shuffle(pool);
            n = std::min(n, pool.size());
            longest = std::max(longest, pool.size());
        }
        if (n < longest)
            out.warnings.push_back("synthetic pairing exhausted class '" + std::string(to_string(label)) + "': " +
                                   std::to_string(longest - n) + " record(s) per larger modality left unpaired");
        for (std::size_t k = 0; k < n; ++k) {
            MultimodalSample sample;
            std::snprintf(id, sizeof id, "%s-%04zu", std::string(to_string(label)).c_str(), k + 1);
            sample.sample_id = id;
            sample.label = label;
            for (auto m : modalities) sample.images[m] = *pools[m][k];
            out.samples.push_back(std::move(sample));
        }
    }
    return out;
}

EnsembleEvaluation evaluate_ensemble(const std::vector<MultimodalSample>& samples, const ModelSet& models,
                                     const EnsembleWeights& weights, FusionMode mode, bool allow_partial)
{
    if (samples.empty()) fail(ErrorCode::invalid_argument, "evaluate_ensemble: empty sample list");
    for (const auto& [m, model] : models) {
        if (!model) fail(ErrorCode::invalid_argument, "evaluate_ensemble: null model for " + std::string(to_string(m)));
        if (model->network.modality() != m)
            fail(ErrorCode::invalid_argument, "model/modality mismatch: slot " + std::string(to_string(m)) +
                                                  " holds a " + std::string(to_string(model->network.modality())) +
                                                  " model");
    }

    EnsembleEvaluation result;
    std::vector<int> labels, predictions;
    std::vector<ScoreVector> fused_scores;
    std::vector<OneHot> targets;
    for (const auto& sample : samples) {
        std::map<Modality, ScoreVector> scores;
        for (const auto& [m, model] : models) {
            auto it = sample.images.find(m);
            if (it == sample.images.end()) continue;
            if (it->second.modality != m)
                fail(ErrorCode::invalid_argument, "sample " + sample.sample_id + " has a mismatched " +
                                                      std::string(to_string(m)) + " image");
            scores[m] = model->network.score(load_record(it->second).pixels);
        }
        auto fused = fuse(scores, weights, mode, allow_partial);
        labels.push_back(index_of(sample.label));
        predictions.push_back(index_of(fused.label));
        fused_scores.push_back(fused.weighted_scores);
        targets.push_back(one_hot(sample.label));
        result.predictions.emplace_back(sample.sample_id, std::move(fused));
    }
    result.report = compute_metrics(confusion(labels, predictions));
    result.report.mean_loss = categorical_cross_entropy(fused_scores, targets);
    return result;
}

std::string fusion_record_header()
{
    return "#sample_id\tclinical_normal\tclinical_cancer\tradiological_normal\tradiological_cancer\t"
           "histopathological_normal\thistopathological_cancer\tweighted_normal\tweighted_cancer\tlabel";
}

std::string fusion_record(const std::string& sample_id, const FusedPrediction& fused)
{
    std::ostringstream out;
    out.precision(6);
    out << std::fixed << sample_id;
    for (auto m : kAllModalities) {
        auto it = fused.per_modality_scores.find(m);
        if (it == fused.per_modality_scores.end())
            out << "\tNA\tNA";
        else
            out << '\t' << it->second.normal() << '\t' << it->second.cancer();
    }
    out << '\t' << fused.weighted_scores.normal() << '\t' << fused.weighted_scores.cancer() << '\t'
        << index_of(fused.label);
    return out.str();
}

void write_ensemble_weights(const EnsembleArtifact& artifact, const std::filesystem::path& path)
{
    std::string out;
    for (auto m : kAllModalities) {
        if (!artifact.weights.has(m)) continue;
        nlohmann::ordered_json j;
        j["modality"] = to_string(m);
        j["val_accuracy"] = artifact.val_accuracy.at(m);
        j["weight"] = artifact.weights[m];
        out += j.dump() + "\n";
    }
    nlohmann::ordered_json tail;
    tail["pairing"] = to_string(artifact.pairing.strategy);
    tail["seed"] = artifact.pairing.seed;
    tail["fusion"] = to_string(artifact.mode);
    tail["degraded"] = !artifact.weights.complete();
    out += tail.dump() + "\n";
    write_file_atomic(path, out);
}

EnsembleArtifact read_ensemble_weights(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) fail(ErrorCode::missing_artifact, "missing artifact file: " + path.string());
    EnsembleArtifact artifact;
    artifact.weights.present = {false, false, false};
    std::istringstream in(read_text_file(path));
    std::string line;
    bool saw_tail = false;
    try {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            if (j.contains("modality")) {
                auto m = parse_modality(j.at("modality").get<std::string>());
                if (!m) fail(ErrorCode::corrupt_artifact, "corrupt artifact: unknown modality in " + path.string());
                const auto i = static_cast<std::size_t>(index_of(*m));
                artifact.weights.values[i] = j.at("weight").get<double>();
                artifact.weights.present[i] = true;
                artifact.val_accuracy[*m] = j.at("val_accuracy").get<double>();
            } else {
                auto strategy = parse_pairing(j.at("pairing").get<std::string>());
                auto mode = parse_fusion_mode(j.at("fusion").get<std::string>());
                if (!strategy || !mode)
                    fail(ErrorCode::corrupt_artifact, "corrupt artifact: unknown pairing or fusion in " + path.string());
                artifact.pairing = {*strategy, j.at("seed").get<std::uint64_t>()};
                artifact.mode = *mode;
                saw_tail = true;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + path.string() + ": " + e.what());
    }
    if (!saw_tail || artifact.val_accuracy.empty())
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + path.string() + " is incomplete");
    return artifact;
}

}  // namespace modalfuse
