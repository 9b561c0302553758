#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "augmentation.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"

namespace modalfuse {

struct TrainConfig {
    Modality modality = Modality::clinical;
    int batch_size = 32;
    int epochs = 25;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double dropout_rate = 0.5;
    std::uint64_t seed = 0;
    bool freeze_backbone = true;

    Activation output_activation = Activation::sigmoid;
    bool normalize_loss = true;
    std::string backbone = ConvStackExtractor::kName;
    std::string backbone_weights;  // optional tensor blob with pretrained backbone parameters
    AugmentationPolicy augmentation = policy_for(Modality::clinical);

    static TrainConfig defaults_for(Modality modality);
};

void validate(const TrainConfig& config);
std::string canonical_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& json);
// Digest over the canonical config and the model's modality.
std::string config_digest(Modality modality, const TrainConfig& config);

struct EpochLog {
    int epoch = 0;
    EvaluationReport train;
    EvaluationReport validation;
};

std::string to_record(const EpochLog& log);

struct ModelMetadata {
    Modality modality = Modality::clinical;
    EvaluationReport validation;
    EvaluationReport train;
    int epoch_selected = 0;
    TrainConfig config;
    std::string config_digest;
};

struct TrainedModel {
    Network network;
    ModelMetadata metadata;

    double val_accuracy() const { return metadata.validation.accuracy; }
};

// Backbone (seeded, optionally loaded from config.backbone_weights) plus the
// modality's head.
Network make_network(const TrainConfig& config);

struct TrainResult {
    TrainedModel model;
    std::vector<EpochLog> epochs;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains on already-decoded records. Validation records are never augmented.
TrainResult train_on_records(const std::vector<ImageRecord>& train, const std::vector<ImageRecord>& validation,
                             const TrainConfig& config, Network network, const EpochCallback& on_epoch = {});

// Loads the split's images and trains with make_network(config).
TrainResult train_modality(const DatasetSplit& split, const TrainConfig& config, const EpochCallback& on_epoch = {});

std::vector<ImageRecord> load_records(const DatasetManifest& manifest);

// Inference with argmax labels (ties -> normal) and mean loss.
EvaluationReport evaluate_records(const Network& network, const std::vector<ImageRecord>& records,
                                  bool normalize_loss = true);
EvaluationReport evaluate_model(const TrainedModel& model, const DatasetManifest& manifest);

// Writes model.weights, metadata and (when epochs is given) epochs.log.
// Returns the written paths.
std::vector<std::filesystem::path> save_model(const TrainedModel& model, const std::filesystem::path& dir,
                                              const std::vector<EpochLog>* epochs = nullptr);
TrainedModel load_model(const std::filesystem::path& dir);

void save_backbone_weights(const FeatureExtractor& extractor, const std::filesystem::path& path);
void load_backbone_weights(FeatureExtractor& extractor, const std::filesystem::path& path);

}  // namespace modalfuse
