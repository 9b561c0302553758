#include "config.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "rng.hpp"

namespace modalfuse {

namespace {

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected)
{
    fail(ErrorCode::config, "config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double as_double(const std::string& key, const std::string& value)
{
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(out))
        bad_value(key, value, "a number");
    return out;
}

template <typename Int>
Int as_int(const std::string& key, const std::string& value)
{
    Int out = 0;
    auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
    return out;
}

bool as_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    bad_value(key, value, "true or false");
}

std::vector<std::string> split_dots(const std::string& key)
{
    std::vector<std::string> parts;
    std::istringstream in(key);
    std::string part;
    while (std::getline(in, part, '.')) parts.push_back(part);
    return parts;
}

[[noreturn]] void unknown_key(const std::string& key) { fail(ErrorCode::config, "unknown config key '" + key + "'"); }

}  // namespace

ExperimentConfig::ExperimentConfig()
{
    for (auto m : kAllModalities) augment_[m] = policy_for(m);
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& source)
{
    ExperimentConfig config;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::config, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        try {
            config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            fail(e.code(), source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return config;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) fail(ErrorCode::config, "config file not found: " + path.string());
    return parse(read_text_file(path), path.string());
}

void ExperimentConfig::set_train_field(TrainOverrides& t, const std::string& field, const std::string& value,
                                       const std::string& key)
{
    if (field == "batch_size") {
        t.batch_size = as_int<int>(key, value);
        if (*t.batch_size <= 0) bad_value(key, value, "a positive integer");
    } else if (field == "epochs") {
        t.epochs = as_int<int>(key, value);
        if (*t.epochs <= 0) bad_value(key, value, "a positive integer");
    } else if (field == "learning_rate") {
        t.learning_rate = as_double(key, value);
        if (*t.learning_rate <= 0) bad_value(key, value, "a positive number");
    } else if (field == "adam_beta1") {
        t.adam_beta1 = as_double(key, value);
        if (!(*t.adam_beta1 > 0 && *t.adam_beta1 < 1)) bad_value(key, value, "a number in (0,1)");
    } else if (field == "adam_beta2") {
        t.adam_beta2 = as_double(key, value);
        if (!(*t.adam_beta2 > 0 && *t.adam_beta2 < 1)) bad_value(key, value, "a number in (0,1)");
    } else if (field == "dropout_rate") {
        t.dropout_rate = as_double(key, value);
        if (!(*t.dropout_rate >= 0 && *t.dropout_rate < 1)) bad_value(key, value, "a number in [0,1)");
    } else if (field == "seed") {
        t.seed = as_int<std::uint64_t>(key, value);
    } else if (field == "freeze_backbone") {
        t.freeze_backbone = as_bool(key, value);
    } else {
        unknown_key(key);
    }
}

void ExperimentConfig::set(const std::string& key, const std::string& value)
{
    const auto parts = split_dots(key);
    if (key == "seed") {
        seed_ = as_int<std::uint64_t>(key, value);
    } else if (key == "dataset.root") {
        dataset_root_ = value;
    } else if (key == "output.dir") {
        if (value.empty()) bad_value(key, value, "a directory path");
        output_dir_ = value;
    } else if (key == "split.ratio") {
        split_ratio_ = as_double(key, value);
        if (!(split_ratio_ > 0 && split_ratio_ < 1)) bad_value(key, value, "a fraction in (0,1)");
    } else if (key == "pairing.strategy") {
        auto s = parse_pairing(value);
        if (!s) bad_value(key, value, "by_group_id or synthetic_by_label");
        pairing_strategy_ = *s;
    } else if (key == "pairing.seed") {
        pairing_seed_ = as_int<std::uint64_t>(key, value);
    } else if (key == "fusion.mode") {
        auto m = parse_fusion_mode(value);
        if (!m) bad_value(key, value, "soft or hard");
        fusion_mode_ = *m;
    } else if (key == "backbone.name") {
        if (value != ConvStackExtractor::kName) bad_value(key, value, "conv_stack");
        backbone_name_ = value;
    } else if (key == "backbone.weights") {
        backbone_weights_ = value;
    } else if (key == "head.output_activation") {
        auto a = parse_activation(value);
        if (!a || *a == Activation::relu) bad_value(key, value, "sigmoid or softmax");
        output_activation_ = *a;
    } else if (key == "head.loss_normalize") {
        loss_normalize_ = as_bool(key, value);
    } else if (parts.size() == 2 && parts[0] == "train") {
        set_train_field(train_defaults_, parts[1], value, key);
    } else if (parts.size() == 3 && parts[0] == "train" && parse_modality(parts[1])) {
        set_train_field(train_overrides_[*parse_modality(parts[1])], parts[2], value, key);
    } else if (parts.size() == 3 && parts[0] == "augment" && parse_modality(parts[1])) {
        auto& policy = augment_[*parse_modality(parts[1])];
        if (parts[2] == "h_flip") {
            policy.horizontal_flip = as_bool(key, value);
        } else if (parts[2] == "v_flip") {
            policy.vertical_flip = as_bool(key, value);
        } else if (parts[2] == "rotation_deg") {
            const double deg = as_double(key, value);
            if (!(deg >= 0 && deg <= kMaxRotationDeg)) bad_value(key, value, "degrees in [0, 11]");
            policy.rotation_deg = deg;
        } else {
            unknown_key(key);
        }
    } else {
        unknown_key(key);
    }
}

void ExperimentConfig::validate_paths() const
{
    if (!dataset_root_.empty() && !std::filesystem::is_directory(dataset_root_))
        fail(ErrorCode::config, "dataset.root does not exist: " + dataset_root_);
    if (!backbone_weights_.empty() && !std::filesystem::exists(backbone_weights_))
        fail(ErrorCode::config, "backbone.weights does not exist: " + backbone_weights_);
}

std::uint64_t ExperimentConfig::split_seed(Modality m) const
{
    return derive_seed(seed_, "split/" + std::string(to_string(m)));
}

PairingConfig ExperimentConfig::pairing() const
{
    return {pairing_strategy_, pairing_seed_.value_or(derive_seed(seed_, "pairing"))};
}

TrainConfig ExperimentConfig::train_config(Modality m) const
{
    TrainConfig c = TrainConfig::defaults_for(m);
    const TrainOverrides empty;
    auto it = train_overrides_.find(m);
    const TrainOverrides& o = it == train_overrides_.end() ? empty : it->second;
    const TrainOverrides& d = train_defaults_;

    c.batch_size = o.batch_size.value_or(d.batch_size.value_or(c.batch_size));
    c.epochs = o.epochs.value_or(d.epochs.value_or(c.epochs));
    c.learning_rate = o.learning_rate.value_or(d.learning_rate.value_or(c.learning_rate));
    c.adam_beta1 = o.adam_beta1.value_or(d.adam_beta1.value_or(c.adam_beta1));
    c.adam_beta2 = o.adam_beta2.value_or(d.adam_beta2.value_or(c.adam_beta2));
    c.dropout_rate = o.dropout_rate.value_or(d.dropout_rate.value_or(c.dropout_rate));
    c.freeze_backbone = o.freeze_backbone.value_or(d.freeze_backbone.value_or(c.freeze_backbone));
    c.seed = o.seed.value_or(d.seed.value_or(derive_seed(seed_, "train/" + std::string(to_string(m)))));
    c.output_activation = output_activation_;
    c.normalize_loss = loss_normalize_;
    c.backbone = backbone_name_;
    c.backbone_weights = backbone_weights_;
    c.augmentation = augment_.at(m);
    return c;
}

}  // namespace modalfuse
