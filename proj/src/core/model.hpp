#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "raster.hpp"
#include "rng.hpp"

namespace modalfuse {

enum class Activation { relu, sigmoid, softmax };

std::string_view to_string(Activation a);
std::optional<Activation> parse_activation(std::string_view s);

struct LayerSpec {
    enum class Kind { dense, dropout };

    Kind kind = Kind::dense;
    int width = 0;
    Activation activation = Activation::relu;
    double rate = 0.0;

    static LayerSpec dense(int width, Activation activation) { return {Kind::dense, width, activation, 0.0}; }
    static LayerSpec dropout(double rate) { return {Kind::dropout, 0, Activation::relu, rate}; }

    bool operator==(const LayerSpec&) const = default;
};

// Ordered layer stack; the last layer is always dense(2, sigmoid|softmax).
struct HeadSpec {
    std::vector<LayerSpec> layers;

    bool operator==(const HeadSpec&) const = default;
};

HeadSpec build_head(Modality modality, double dropout_rate, Activation output = Activation::sigmoid);
void validate(const HeadSpec& spec);
std::size_t parameter_count(const HeadSpec& spec, std::size_t input_dim);
std::string describe(const HeadSpec& spec);

// (score_normal, score_cancer), each in [0,1]. Not constrained to sum to 1.
struct ScoreVector {
    std::array<double, 2> per_class{};

    double normal() const { return per_class[0]; }
    double cancer() const { return per_class[1]; }
    double operator[](int c) const { return per_class[static_cast<std::size_t>(c)]; }
    bool operator==(const ScoreVector&) const = default;
};

using OneHot = std::array<double, 2>;

inline OneHot one_hot(Label label)
{
    return label == Label::cancer ? OneHot{0.0, 1.0} : OneHot{1.0, 0.0};
}

// argmax over the two classes, ties resolved to normal.
Label predicted_label(const ScoreVector& s);

inline constexpr double kLossEpsilon = 1e-7;

// Scores are clipped to [eps, 1-eps]; with normalize=true they are then
// divided by their sum before the log.
double sample_cross_entropy(const ScoreVector& s, const OneHot& y, bool normalize = true);
// dL/dscore for one sample; zero on clipped components.
std::array<double, 2> sample_cross_entropy_grad(const ScoreVector& s, const OneHot& y, bool normalize = true);
// Batch mean.
double categorical_cross_entropy(std::span<const ScoreVector> scores, std::span<const OneHot> labels,
                                 bool normalize = true);

// Per-image record of intermediate values needed by backward passes.
struct ExtractorTrace {
    std::vector<std::vector<double>> layer_outputs;
    std::vector<double> input;
    int input_height = 0;
    int input_width = 0;
};

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    virtual std::string name() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual std::unique_ptr<FeatureExtractor> clone() const = 0;

    virtual std::span<double> parameters() = 0;
    virtual std::span<const double> parameters() const = 0;

    virtual std::vector<double> extract(const Image& image, ExtractorTrace* trace = nullptr) const = 0;
    // Accumulates dL/dparams into grad_params given dL/dfeatures.
    virtual void backward(const ExtractorTrace& trace, std::span<const double> grad_features,
                          std::span<double> grad_params) const = 0;

    bool pretrained = false;
    bool frozen = true;
};

// Stack of 3x3 stride-2 convolutions with ReLU followed by global average
// pooling. Default channels {3, 8, 16, 32, 64} give a 64-dim output.
class ConvStackExtractor final : public FeatureExtractor {
public:
    static constexpr const char* kName = "conv_stack";

    explicit ConvStackExtractor(std::uint64_t seed, std::vector<int> channels = {3, 8, 16, 32, 64});

    std::string name() const override { return kName; }
    std::size_t output_dim() const override { return static_cast<std::size_t>(channels_.back()); }
    std::unique_ptr<FeatureExtractor> clone() const override;

    std::span<double> parameters() override { return params_; }
    std::span<const double> parameters() const override { return params_; }

    std::vector<double> extract(const Image& image, ExtractorTrace* trace = nullptr) const override;
    void backward(const ExtractorTrace& trace, std::span<const double> grad_features,
                  std::span<double> grad_params) const override;

    const std::vector<int>& channels() const { return channels_; }

private:
    std::vector<int> channels_;
    std::vector<std::size_t> offsets_;  // weight offset per layer; bias follows weights
    std::vector<double> params_;
};

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, std::uint64_t seed);

struct HeadTrace {
    std::vector<double> input;
    // Output of each layer (post-activation, post-dropout).
    std::vector<std::vector<double>> outputs;
    // Dropout keep-scale per unit (0 or 1/(1-rate)) for dropout layers.
    std::vector<std::vector<double>> dropout_scale;
};

class ClassifierHead {
public:
    ClassifierHead() = default;
    ClassifierHead(HeadSpec spec, std::size_t input_dim, std::uint64_t seed);

    const HeadSpec& spec() const { return spec_; }
    std::size_t input_dim() const { return input_dim_; }
    std::span<double> parameters() { return params_; }
    std::span<const double> parameters() const { return params_; }

    // Training mode when dropout_rng is non-null.
    ScoreVector forward(std::span<const double> features, HeadTrace* trace = nullptr, Rng* dropout_rng = nullptr) const;

    // Accumulates dL/dparams; writes dL/dfeatures when grad_features is non-empty.
    void backward(const HeadTrace& trace, const std::array<double, 2>& grad_scores, std::span<double> grad_params,
                  std::span<double> grad_features) const;

private:
    HeadSpec spec_;
    std::size_t input_dim_ = 0;
    std::vector<std::size_t> offsets_;  // per layer; meaningful for dense layers only
    std::vector<double> params_;
};

// Backbone + head for one modality.
class Network {
public:
    Network(Modality modality, std::unique_ptr<FeatureExtractor> backbone, ClassifierHead head);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    Modality modality() const { return modality_; }
    Resolution input_resolution() const { return target_resolution(modality_); }
    const FeatureExtractor& backbone() const { return *backbone_; }
    FeatureExtractor& backbone() { return *backbone_; }
    const ClassifierHead& head() const { return head_; }
    ClassifierHead& head() { return head_; }

    // Inference mode (no dropout); deterministic.
    std::vector<ScoreVector> forward(std::span<const Image> batch) const;
    ScoreVector score(const Image& image) const;
    ScoreVector score_features(std::span<const double> features) const { return head_.forward(features); }

    void check_resolution(const Image& image) const;

private:
    Modality modality_;
    std::unique_ptr<FeatureExtractor> backbone_;
    ClassifierHead head_;
};

// Free-function form of Network::forward for callers holding the parts.
std::vector<ScoreVector> forward(const FeatureExtractor& extractor, const ClassifierHead& head, Resolution expected,
                                 std::span<const Image> batch);

struct Gradients {
    std::vector<double> head;
    std::vector<double> backbone;  // empty when the backbone is frozen
};

// Training-mode forward/backward for one sample; accumulates gradients and
// returns the sample loss.
double accumulate_gradients(const Network& net, const Image& image, const OneHot& target, Rng& dropout_rng,
                            bool normalize_loss, Gradients& grads);

// Head-only variant over precomputed features.
double accumulate_head_gradients(const ClassifierHead& head, std::span<const double> features, const OneHot& target,
                                 Rng* dropout_rng, bool normalize_loss, std::span<double> grad_head);

// Named double tensors with a trailing checksum.
using TensorMap = std::map<std::string, std::vector<double>>;
std::string encode_tensors(const TensorMap& tensors);
TensorMap decode_tensors(std::string_view blob, const std::string& source);

}  // namespace modalfuse
