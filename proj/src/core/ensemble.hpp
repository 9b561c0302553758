#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "training.hpp"

namespace modalfuse {

// Per-modality fusion weights indexed by Modality. Absent modalities (partial
// ensembles only) carry weight 0 and present=false.
struct EnsembleWeights {
    std::array<double, 3> values{};
    std::array<bool, 3> present{true, true, true};

    double operator[](Modality m) const { return values[static_cast<std::size_t>(index_of(m))]; }
    bool has(Modality m) const { return present[static_cast<std::size_t>(index_of(m))]; }
    bool complete() const { return present[0] && present[1] && present[2]; }
    double sum() const;
};

// w_m = acc_m / sum(acc). All three modalities required, each accuracy > 0.
// The sum is exact and each quotient correctly rounded, so permuting the
// inputs permutes the outputs and scaling them by k (when k*acc is exact)
// leaves the outputs unchanged, bit for bit.
EnsembleWeights derive_weights(const std::map<Modality, double>& val_accuracy);

// Renormalizes over whichever modalities are present (at least one).
EnsembleWeights derive_partial_weights(const std::map<Modality, double>& val_accuracy);

enum class FusionMode { soft, hard };

std::string_view to_string(FusionMode mode);
std::optional<FusionMode> parse_fusion_mode(std::string_view s);

struct FusedPrediction {
    std::map<Modality, ScoreVector> per_modality_scores;
    ScoreVector weighted_scores;
    Label label = Label::normal;
    bool degraded = false;
};

// weighted[c] = sum_m w_m * score_m[c]; label = argmax, ties -> normal.
// In hard mode each modality contributes the one-hot of its argmax label.
// Missing modalities are an error unless allow_partial is set, in which case
// weights are renormalized over the available ones and the result is marked
// degraded.
FusedPrediction fuse(const std::map<Modality, ScoreVector>& scores, const EnsembleWeights& weights,
                     FusionMode mode = FusionMode::soft, bool allow_partial = false);

struct MultimodalSample {
    std::string sample_id;
    std::map<Modality, RecordRef> images;
    Label label = Label::normal;
};

enum class PairingStrategy { by_group_id, synthetic_by_label };

std::string_view to_string(PairingStrategy s);
std::optional<PairingStrategy> parse_pairing(std::string_view s);

struct PairingConfig {
    PairingStrategy strategy = PairingStrategy::synthetic_by_label;
    std::uint64_t seed = 0;
};

struct MultimodalManifest {
    PairingConfig pairing;
    std::vector<MultimodalSample> samples;
    std::vector<std::string> warnings;
};

// by_group_id: inner join on group id (first record per group and modality,
// groups whose labels disagree are skipped with a warning).
// synthetic_by_label: per label, each modality's records are shuffled with the
// seeded generator and matched index-wise; each record is used at most once.
// With allow_partial, pairing runs over whichever modalities are supplied.
MultimodalManifest build_multimodal_manifest(const std::map<Modality, DatasetManifest>& manifests,
                                             const PairingConfig& pairing, bool allow_partial = false);

struct EnsembleEvaluation {
    EvaluationReport report;
    std::vector<std::pair<std::string, FusedPrediction>> predictions;
};

using ModelSet = std::map<Modality, const TrainedModel*>;

EnsembleEvaluation evaluate_ensemble(const std::vector<MultimodalSample>& samples, const ModelSet& models,
                                     const EnsembleWeights& weights, FusionMode mode = FusionMode::soft,
                                     bool allow_partial = false);

// Tab-separated: sample_id, six per-modality scores (normal, cancer per
// modality), two weighted scores, label. Missing modalities print NA.
std::string fusion_record(const std::string& sample_id, const FusedPrediction& fused);
std::string fusion_record_header();

struct EnsembleArtifact {
    EnsembleWeights weights;
    std::map<Modality, double> val_accuracy;
    PairingConfig pairing;
    FusionMode mode = FusionMode::soft;
};

// One JSON record per modality {modality, val_accuracy, weight}, then one
// record with the pairing strategy, seed, fusion mode and degraded flag.
void write_ensemble_weights(const EnsembleArtifact& artifact, const std::filesystem::path& path);
EnsembleArtifact read_ensemble_weights(const std::filesystem::path& path);

}  // namespace modalfuse
