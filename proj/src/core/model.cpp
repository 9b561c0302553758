#include "model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace modalfuse {

std::string_view to_string(Activation a)
{
    switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
    }
    return "unknown";
}

std::optional<Activation> parse_activation(std::string_view s)
{
    for (auto a : {Activation::relu, Activation::sigmoid, Activation::softmax})
        if (to_string(a) == s) return a;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Heads

HeadSpec build_head(Modality modality, double dropout_rate, Activation output)
{
    HeadSpec spec;
    auto& l = spec.layers;
    l.push_back(LayerSpec::dense(128, Activation::relu));
    switch (modality) {
    case Modality::clinical:
        l.push_back(LayerSpec::dropout(dropout_rate));
        l.push_back(LayerSpec::dense(32, Activation::relu));
        break;
    case Modality::radiological:
        l.push_back(LayerSpec::dropout(dropout_rate));
        l.push_back(LayerSpec::dense(64, Activation::relu));
        break;
    case Modality::histopathological:
        break;
    }
    l.push_back(LayerSpec::dense(2, output));
    validate(spec);
    return spec;
}

void validate(const HeadSpec& spec)
{
    if (spec.layers.empty()) fail(ErrorCode::invalid_argument, "head: no layers");
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& layer = spec.layers[i];
        const bool last = i + 1 == spec.layers.size();
        if (layer.kind == LayerSpec::Kind::dropout) {
            if (!(layer.rate >= 0.0 && layer.rate < 1.0))
                fail(ErrorCode::invalid_argument, "head: dropout rate must lie in [0,1)");
            if (last) fail(ErrorCode::invalid_argument, "head: final layer must be dense");
            continue;
        }
        if (layer.width <= 0) fail(ErrorCode::invalid_argument, "head: dense width must be positive");
        if (last) {
            if (layer.width != 2 || layer.activation == Activation::relu)
                fail(ErrorCode::invalid_argument, "head: final layer must be dense(2, sigmoid|softmax)");
        } else if (layer.activation != Activation::relu) {
            fail(ErrorCode::invalid_argument, "head: hidden dense layers use relu");
        }
    }
}

std::size_t parameter_count(const HeadSpec& spec, std::size_t input_dim)
{
    std::size_t count = 0;
    std::size_t fan_in = input_dim;
    for (const auto& layer : spec.layers) {
        if (layer.kind != LayerSpec::Kind::dense) continue;
        const auto width = static_cast<std::size_t>(layer.width);
        count += fan_in * width + width;
        fan_in = width;
    }
    return count;
}

std::string describe(const HeadSpec& spec)
{
    std::ostringstream out;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& layer = spec.layers[i];
        if (i) out << " -> ";
        if (layer.kind == LayerSpec::Kind::dense)
            out << "dense(" << layer.width << ", " << to_string(layer.activation) << ")";
        else
            out << "dropout(" << layer.rate << ")";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Loss

Label predicted_label(const ScoreVector& s) { return s.cancer() > s.normal() ? Label::cancer : Label::normal; }

namespace {

double clip(double p) { return std::clamp(p, kLossEpsilon, 1.0 - kLossEpsilon); }

}  // namespace

double sample_cross_entropy(const ScoreVector& s, const OneHot& y, bool normalize)
{
    const double c0 = clip(s[0]);
    const double c1 = clip(s[1]);
    const double denom = normalize ? c0 + c1 : 1.0;
    return -(y[0] * std::log(c0 / denom) + y[1] * std::log(c1 / denom));
}

std::array<double, 2> sample_cross_entropy_grad(const ScoreVector& s, const OneHot& y, bool normalize)
{
    const std::array<double, 2> c{clip(s[0]), clip(s[1])};
    const double y_sum = y[0] + y[1];
    std::array<double, 2> g{};
    for (int k = 0; k < 2; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        if (c[kk] != s[k]) continue;  // clipped: flat
        g[kk] = -y[kk] / c[kk] + (normalize ? y_sum / (c[0] + c[1]) : 0.0);
    }
    return g;
}

double categorical_cross_entropy(std::span<const ScoreVector> scores, std::span<const OneHot> labels, bool normalize)
{
    if (scores.size() != labels.size())
        fail(ErrorCode::invalid_argument, "cross entropy: " + std::to_string(scores.size()) + " scores vs " +
                                              std::to_string(labels.size()) + " labels");
    if (scores.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) total += sample_cross_entropy(scores[i], labels[i], normalize);
    return total / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Convolutional feature extractor

namespace {

void glorot_fill(std::span<double> weights, std::size_t fan_in, std::size_t fan_out, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& w : weights) w = rng.uniform(-limit, limit);
}

// He-uniform; keeps ReLU activations from shrinking through the stack.
void he_fill(std::span<double> weights, std::size_t fan_in, Rng& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& w : weights) w = rng.uniform(-limit, limit);
}

int conv_out(int n) { return (n - 1) / 2 + 1; }

}  // namespace

ConvStackExtractor::ConvStackExtractor(std::uint64_t seed, std::vector<int> channels) : channels_(std::move(channels))
{
    if (channels_.size() < 2 || channels_.front() != 3)
        fail(ErrorCode::invalid_argument, "conv stack: channels must start at 3 and have at least one layer");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < channels_.size(); ++l) {
        if (channels_[l + 1] <= 0) fail(ErrorCode::invalid_argument, "conv stack: channel counts must be positive");
        offsets_.push_back(total);
        total += static_cast<std::size_t>(channels_[l + 1]) * channels_[l] * 9 + channels_[l + 1];
    }
    params_.assign(total, 0.0);
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < channels_.size(); ++l) {
        const auto ci = static_cast<std::size_t>(channels_[l]);
        const auto co = static_cast<std::size_t>(channels_[l + 1]);
        he_fill(std::span(params_).subspan(offsets_[l], co * ci * 9), ci * 9, rng);
    }
}

std::unique_ptr<FeatureExtractor> ConvStackExtractor::clone() const
{
    return std::make_unique<ConvStackExtractor>(*this);
}

std::vector<double> ConvStackExtractor::extract(const Image& image, ExtractorTrace* trace) const
{
    if (image.channels() != 3) fail(ErrorCode::invalid_argument, "conv stack: expected a 3-channel image");
    int h = image.height();
    int w = image.width();

    std::vector<double> in(static_cast<std::size_t>(3) * h * w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) in[(static_cast<std::size_t>(c) * h + y) * w + x] = image.at(y, x, c);

    if (trace) {
        trace->input = in;
        trace->input_height = h;
        trace->input_width = w;
        trace->layer_outputs.clear();
    }

    for (std::size_t l = 0; l + 1 < channels_.size(); ++l) {
        const int ci = channels_[l];
        const int co = channels_[l + 1];
        const int ho = conv_out(h);
        const int wo = conv_out(w);
        const double* weights = params_.data() + offsets_[l];
        const double* bias = weights + static_cast<std::size_t>(co) * ci * 9;

        std::vector<double> out(static_cast<std::size_t>(co) * ho * wo);
        for (int o = 0; o < co; ++o) {
            double* dst = out.data() + static_cast<std::size_t>(o) * ho * wo;
            std::fill(dst, dst + static_cast<std::size_t>(ho) * wo, bias[o]);
            for (int i = 0; i < ci; ++i) {
                const double* src = in.data() + static_cast<std::size_t>(i) * h * w;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const double k = weights[((static_cast<std::size_t>(o) * ci + i) * 3 + ky) * 3 + kx];
                        for (int yo = 0; yo < ho; ++yo) {
                            const int yi = 2 * yo + ky - 1;
                            if (yi < 0 || yi >= h) continue;
                            const double* row = src + static_cast<std::size_t>(yi) * w;
                            double* out_row = dst + static_cast<std::size_t>(yo) * wo;
                            for (int xo = 0; xo < wo; ++xo) {
                                const int xi = 2 * xo + kx - 1;
                                if (xi < 0 || xi >= w) continue;
                                out_row[xo] += k * row[xi];
                            }
                        }
                    }
                }
            }
        }
        for (auto& v : out) v = std::max(v, 0.0);
        in = std::move(out);
        h = ho;
        w = wo;
        if (trace) trace->layer_outputs.push_back(in);
    }

    const int c_last = channels_.back();
    const auto plane = static_cast<std::size_t>(h) * w;
    std::vector<double> features(static_cast<std::size_t>(c_last));
    for (int c = 0; c < c_last; ++c) {
        double sum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) sum += in[c * plane + p];
        features[static_cast<std::size_t>(c)] = sum / static_cast<double>(plane);
    }
    return features;
}

void ConvStackExtractor::backward(const ExtractorTrace& trace, std::span<const double> grad_features,
                                  std::span<double> grad_params) const
{
    const std::size_t layers = channels_.size() - 1;
    if (trace.layer_outputs.size() != layers) fail(ErrorCode::invalid_argument, "conv stack: trace mismatch");

    std::vector<int> heights{trace.input_height};
    std::vector<int> widths{trace.input_width};
    for (std::size_t l = 0; l < layers; ++l) {
        heights.push_back(conv_out(heights.back()));
        widths.push_back(conv_out(widths.back()));
    }

    // Gradient w.r.t. the last layer's post-ReLU output.
    const auto plane = static_cast<std::size_t>(heights.back()) * widths.back();
    std::vector<double> grad(static_cast<std::size_t>(channels_.back()) * plane);
    for (std::size_t c = 0; c < static_cast<std::size_t>(channels_.back()); ++c)
        for (std::size_t p = 0; p < plane; ++p) grad[c * plane + p] = grad_features[c] / static_cast<double>(plane);

    for (std::size_t l = layers; l-- > 0;) {
        const int ci = channels_[l];
        const int co = channels_[l + 1];
        const int h = heights[l];
        const int w = widths[l];
        const int ho = heights[l + 1];
        const int wo = widths[l + 1];
        const auto& out = trace.layer_outputs[l];
        const auto& in = l == 0 ? trace.input : trace.layer_outputs[l - 1];
        const double* weights = params_.data() + offsets_[l];
        double* gw = grad_params.data() + offsets_[l];
        double* gb = gw + static_cast<std::size_t>(co) * ci * 9;

        for (std::size_t k = 0; k < grad.size(); ++k)
            if (out[k] <= 0.0) grad[k] = 0.0;

        std::vector<double> grad_in;
        if (l > 0) grad_in.assign(static_cast<std::size_t>(ci) * h * w, 0.0);

        for (int o = 0; o < co; ++o) {
            const double* g = grad.data() + static_cast<std::size_t>(o) * ho * wo;
            double bias_sum = 0.0;
            for (std::size_t p = 0; p < static_cast<std::size_t>(ho) * wo; ++p) bias_sum += g[p];
            gb[o] += bias_sum;
            for (int i = 0; i < ci; ++i) {
                const double* src = in.data() + static_cast<std::size_t>(i) * h * w;
                double* gsrc = l > 0 ? grad_in.data() + static_cast<std::size_t>(i) * h * w : nullptr;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const std::size_t widx = ((static_cast<std::size_t>(o) * ci + i) * 3 + ky) * 3 + kx;
                        const double k = weights[widx];
                        double acc = 0.0;
                        for (int yo = 0; yo < ho; ++yo) {
                            const int yi = 2 * yo + ky - 1;
                            if (yi < 0 || yi >= h) continue;
                            for (int xo = 0; xo < wo; ++xo) {
                                const int xi = 2 * xo + kx - 1;
                                if (xi < 0 || xi >= w) continue;
                                const double go = g[static_cast<std::size_t>(yo) * wo + xo];
                                const std::size_t si = static_cast<std::size_t>(yi) * w + xi;
                                acc += go * src[si];
                                if (gsrc) gsrc[si] += go * k;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        grad = std::move(grad_in);
    }
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, std::uint64_t seed)
{
    if (name == ConvStackExtractor::kName) return std::make_unique<ConvStackExtractor>(seed);
    fail(ErrorCode::config, "unknown backbone '" + name + "'");
}

// ---------------------------------------------------------------------------
// Classifier head

ClassifierHead::ClassifierHead(HeadSpec spec, std::size_t input_dim, std::uint64_t seed)
    : spec_(std::move(spec)), input_dim_(input_dim)
{
    validate(spec_);
    if (input_dim_ == 0) fail(ErrorCode::invalid_argument, "head: input dimension must be positive");
    params_.assign(parameter_count(spec_, input_dim_), 0.0);
    Rng rng(seed);
    std::size_t offset = 0;
    std::size_t fan_in = input_dim_;
    for (const auto& layer : spec_.layers) {
        offsets_.push_back(offset);
        if (layer.kind != LayerSpec::Kind::dense) continue;
        const auto width = static_cast<std::size_t>(layer.width);
        glorot_fill(std::span(params_).subspan(offset, fan_in * width), fan_in, width, rng);
        offset += fan_in * width + width;
        fan_in = width;
    }
}

ScoreVector ClassifierHead::forward(std::span<const double> features, HeadTrace* trace, Rng* dropout_rng) const
{
    if (features.size() != input_dim_)
        fail(ErrorCode::invalid_argument, "head: expected " + std::to_string(input_dim_) + " features, got " +
                                              std::to_string(features.size()));
    std::vector<double> x(features.begin(), features.end());
    if (trace) {
        trace->input = x;
        trace->outputs.clear();
        trace->dropout_scale.clear();
    }

    bool overflow = false;
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
        const auto& layer = spec_.layers[l];
        std::vector<double> scale;
        if (layer.kind == LayerSpec::Kind::dropout) {
            if (dropout_rng && layer.rate > 0.0) {
                scale.resize(x.size());
                const double keep = 1.0 / (1.0 - layer.rate);
                for (std::size_t k = 0; k < x.size(); ++k) {
                    scale[k] = dropout_rng->bernoulli(layer.rate) ? 0.0 : keep;
                    x[k] *= scale[k];
                }
            } else {
                scale.assign(x.size(), 1.0);
            }
        } else {
            const auto width = static_cast<std::size_t>(layer.width);
            const double* weights = params_.data() + offsets_[l];
            const double* bias = weights + width * x.size();
            std::vector<double> z(width);
            for (std::size_t o = 0; o < width; ++o) {
                double sum = bias[o];
                const double* row = weights + o * x.size();
                for (std::size_t k = 0; k < x.size(); ++k) sum += row[k] * x[k];
                z[o] = sum;
                overflow |= !std::isfinite(sum);
            }
            switch (layer.activation) {
            case Activation::relu:
                for (auto& v : z) v = std::max(v, 0.0);
                break;
            case Activation::sigmoid:
                for (auto& v : z) v = 1.0 / (1.0 + std::exp(-v));
                break;
            case Activation::softmax: {
                const double m = *std::max_element(z.begin(), z.end());
                double sum = 0.0;
                for (auto& v : z) sum += (v = std::exp(v - m));
                for (auto& v : z) v /= sum;
                break;
            }
            }
            x = std::move(z);
        }
        if (trace) {
            trace->outputs.push_back(x);
            trace->dropout_scale.push_back(std::move(scale));
        }
    }
    // Saturated activations would hide an overflowed logit; report it instead.
    if (overflow) return ScoreVector{{std::nan(""), std::nan("")}};
    return ScoreVector{{x[0], x[1]}};
}

void ClassifierHead::backward(const HeadTrace& trace, const std::array<double, 2>& grad_scores,
                              std::span<double> grad_params, std::span<double> grad_features) const
{
    std::vector<double> g(grad_scores.begin(), grad_scores.end());
    for (std::size_t l = spec_.layers.size(); l-- > 0;) {
        const auto& layer = spec_.layers[l];
        const auto& out = trace.outputs[l];
        if (layer.kind == LayerSpec::Kind::dropout) {
            for (std::size_t k = 0; k < g.size(); ++k) g[k] *= trace.dropout_scale[l][k];
            continue;
        }
        const auto& in = l == 0 ? trace.input : trace.outputs[l - 1];
        const auto width = static_cast<std::size_t>(layer.width);

        std::vector<double> dz(width);
        switch (layer.activation) {
        case Activation::relu:
            for (std::size_t o = 0; o < width; ++o) dz[o] = out[o] > 0.0 ? g[o] : 0.0;
            break;
        case Activation::sigmoid:
            for (std::size_t o = 0; o < width; ++o) dz[o] = g[o] * out[o] * (1.0 - out[o]);
            break;
        case Activation::softmax: {
            double dot = 0.0;
            for (std::size_t o = 0; o < width; ++o) dot += g[o] * out[o];
            for (std::size_t o = 0; o < width; ++o) dz[o] = out[o] * (g[o] - dot);
            break;
        }
        }

        const double* weights = params_.data() + offsets_[l];
        double* gw = grad_params.data() + offsets_[l];
        double* gb = gw + width * in.size();
        std::vector<double> g_in(in.size(), 0.0);
        for (std::size_t o = 0; o < width; ++o) {
            gb[o] += dz[o];
            if (dz[o] == 0.0) continue;
            const double* row = weights + o * in.size();
            double* grow = gw + o * in.size();
            for (std::size_t k = 0; k < in.size(); ++k) {
                grow[k] += dz[o] * in[k];
                g_in[k] += dz[o] * row[k];
            }
        }
        g = std::move(g_in);
    }
    if (!grad_features.empty()) std::copy(g.begin(), g.end(), grad_features.begin());
}

// ---------------------------------------------------------------------------
// Network

Network::Network(Modality modality, std::unique_ptr<FeatureExtractor> backbone, ClassifierHead head)
    : modality_(modality), backbone_(std::move(backbone)), head_(std::move(head))
{
    if (!backbone_) fail(ErrorCode::invalid_argument, "network: missing backbone");
    if (backbone_->output_dim() != head_.input_dim())
        fail(ErrorCode::invalid_argument, "network: backbone output " + std::to_string(backbone_->output_dim()) +
                                              " does not match head input " + std::to_string(head_.input_dim()));
}

Network::Network(const Network& other)
    : modality_(other.modality_), backbone_(other.backbone_->clone()), head_(other.head_)
{
}

Network& Network::operator=(const Network& other)
{
    if (this != &other) {
        modality_ = other.modality_;
        backbone_ = other.backbone_->clone();
        head_ = other.head_;
    }
    return *this;
}

void Network::check_resolution(const Image& image) const
{
    const auto expected = input_resolution();
    if (image.height() != expected.height || image.width() != expected.width)
        fail(ErrorCode::invalid_argument,
             "resolution mismatch for " + std::string(to_string(modality_)) + ": expected " +
                 std::to_string(expected.height) + "x" + std::to_string(expected.width) + ", got " +
                 std::to_string(image.height()) + "x" + std::to_string(image.width()));
}

std::vector<ScoreVector> forward(const FeatureExtractor& extractor, const ClassifierHead& head, Resolution expected,
                                 std::span<const Image> batch)
{
    std::vector<ScoreVector> scores;
    scores.reserve(batch.size());
    for (const auto& image : batch) {
        if (image.height() != expected.height || image.width() != expected.width)
            fail(ErrorCode::invalid_argument,
                 "resolution mismatch: expected " + std::to_string(expected.height) + "x" +
                     std::to_string(expected.width) + ", got " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()));
        scores.push_back(head.forward(extractor.extract(image)));
    }
    return scores;
}

std::vector<ScoreVector> Network::forward(std::span<const Image> batch) const
{
    for (const auto& image : batch) check_resolution(image);
    return modalfuse::forward(*backbone_, head_, input_resolution(), batch);
}

ScoreVector Network::score(const Image& image) const
{
    check_resolution(image);
    return head_.forward(backbone_->extract(image));
}

double accumulate_head_gradients(const ClassifierHead& head, std::span<const double> features, const OneHot& target,
                                 Rng* dropout_rng, bool normalize_loss, std::span<double> grad_head)
{
    HeadTrace trace;
    const auto scores = head.forward(features, &trace, dropout_rng);
    head.backward(trace, sample_cross_entropy_grad(scores, target, normalize_loss), grad_head, {});
    return sample_cross_entropy(scores, target, normalize_loss);
}

double accumulate_gradients(const Network& net, const Image& image, const OneHot& target, Rng& dropout_rng,
                            bool normalize_loss, Gradients& grads)
{
    net.check_resolution(image);
    const bool train_backbone = !grads.backbone.empty();
    ExtractorTrace etrace;
    const auto features = net.backbone().extract(image, train_backbone ? &etrace : nullptr);

    HeadTrace htrace;
    const auto scores = net.head().forward(features, &htrace, &dropout_rng);
    const auto grad_scores = sample_cross_entropy_grad(scores, target, normalize_loss);

    std::vector<double> grad_features(train_backbone ? features.size() : 0);
    net.head().backward(htrace, grad_scores, grads.head, grad_features);
    if (train_backbone) net.backbone().backward(etrace, grad_features, grads.backbone);
    return sample_cross_entropy(scores, target, normalize_loss);
}

// ---------------------------------------------------------------------------
// Tensor blob

namespace {

constexpr char kBlobMagic[8] = {'M', 'F', 'W', 'E', 'I', 'G', 'H', 'T'};
constexpr std::uint32_t kBlobVersion = 1;

template <typename T>
void put(std::string& out, T v)
{
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view blob, std::size_t& pos, const std::string& source)
{
    if (pos + sizeof(T) > blob.size()) fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " is truncated");
    T v;
    std::memcpy(&v, blob.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string encode_tensors(const TensorMap& tensors)
{
    std::string out(kBlobMagic, sizeof kBlobMagic);
    put<std::uint32_t>(out, kBlobVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, values] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint64_t>(out, values.size());
        for (double v : values) put<double>(out, v);
    }
    put<std::uint64_t>(out, fnv1a64(out));
    return out;
}

TensorMap decode_tensors(std::string_view blob, const std::string& source)
{
    if (blob.size() < sizeof kBlobMagic + 16 || std::memcmp(blob.data(), kBlobMagic, sizeof kBlobMagic) != 0)
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " has no weight header");

    std::size_t pos = blob.size() - sizeof(std::uint64_t);
    const auto stored = get<std::uint64_t>(blob, pos, source);
    if (stored != fnv1a64(blob.substr(0, blob.size() - sizeof(std::uint64_t))))
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " checksum mismatch");

    pos = sizeof kBlobMagic;
    const auto version = get<std::uint32_t>(blob, pos, source);
    if (version != kBlobVersion)
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " has unknown version " + std::to_string(version));
    const auto count = get<std::uint32_t>(blob, pos, source);
    TensorMap tensors;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto len = get<std::uint32_t>(blob, pos, source);
        if (pos + len > blob.size()) fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " is truncated");
        std::string name(blob.substr(pos, len));
        pos += len;
        const auto n = get<std::uint64_t>(blob, pos, source);
        if (n > (blob.size() - pos) / sizeof(double))
            fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " is truncated");
        std::vector<double> values(n);
        for (auto& v : values) v = get<double>(blob, pos, source);
        tensors.emplace(std::move(name), std::move(values));
    }
    if (pos != blob.size() - sizeof(std::uint64_t))
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + source + " has trailing bytes");
    return tensors;
}

}  // namespace modalfuse
