#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "ensemble.hpp"
#include "training.hpp"

namespace modalfuse {

// Experiment configuration read from a flat "key = value" text file ('#'
// starts a comment). Recognized keys:
//
//   seed, dataset.root, output.dir, split.ratio
//   pairing.strategy, pairing.seed, fusion.mode
//   backbone.name, backbone.weights
//   head.output_activation, head.loss_normalize
//   train.<field> and train.<modality>.<field> with <field> one of
//     batch_size, epochs, learning_rate, adam_beta1, adam_beta2,
//     dropout_rate, seed, freeze_backbone
//   augment.<modality>.{h_flip,v_flip,rotation_deg}
//
// Unknown keys are rejected.
class ExperimentConfig {
public:
    ExperimentConfig();

    static ExperimentConfig parse(const std::string& text, const std::string& source = "<config>");
    static ExperimentConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);

    // Checks that referenced paths exist.
    void validate_paths() const;

    std::uint64_t seed() const { return seed_; }
    void set_seed(std::uint64_t seed) { seed_ = seed; }
    const std::string& dataset_root() const { return dataset_root_; }
    const std::string& output_dir() const { return output_dir_; }
    double split_ratio() const { return split_ratio_; }
    FusionMode fusion_mode() const { return fusion_mode_; }

    std::uint64_t split_seed(Modality m) const;
    PairingConfig pairing() const;
    TrainConfig train_config(Modality m) const;

private:
    struct TrainOverrides {
        std::optional<int> batch_size, epochs;
        std::optional<double> learning_rate, adam_beta1, adam_beta2, dropout_rate;
        std::optional<std::uint64_t> seed;
        std::optional<bool> freeze_backbone;
    };

    void set_train_field(TrainOverrides& target, const std::string& field, const std::string& value,
                         const std::string& key);

    std::uint64_t seed_ = 0;
    std::string dataset_root_;
    std::string output_dir_ = "modalfuse-out";
    double split_ratio_ = 0.9;
    PairingStrategy pairing_strategy_ = PairingStrategy::synthetic_by_label;
    std::optional<std::uint64_t> pairing_seed_;
    FusionMode fusion_mode_ = FusionMode::soft;
    std::string backbone_name_ = ConvStackExtractor::kName;
    std::string backbone_weights_;
    Activation output_activation_ = Activation::sigmoid;
    bool loss_normalize_ = true;
    TrainOverrides train_defaults_;
    std::map<Modality, TrainOverrides> train_overrides_;
    std::map<Modality, AugmentationPolicy> augment_;
};

}  // namespace modalfuse
