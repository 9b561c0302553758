#include "training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace modalfuse {

namespace {

constexpr const char* kModelFormat = "modalfuse-model/1";
constexpr double kAdamEpsilon = 1e-7;

class Adam {
public:
    Adam(std::size_t n, const TrainConfig& c)
        : lr_(c.learning_rate), beta1_(c.adam_beta1), beta2_(c.adam_beta2), m_(n, 0.0), v_(n, 0.0)
    {
    }

    void step(std::span<double> params, std::span<const double> grad)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kAdamEpsilon);
        }
    }

private:
    double lr_, beta1_, beta2_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

ordered_json report_json(const EvaluationReport& r) { return ordered_json::parse(to_record(r)); }

std::uint64_t pixel_digest(const std::vector<ImageRecord>& records)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : records) {
        auto data = r.pixels.data();
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size_bytes()), h);
    }
    return h;
}

EvaluationReport evaluate_scores(const std::vector<ScoreVector>& scores, const std::vector<ImageRecord>& records,
                                 bool normalize_loss)
{
    std::vector<int> labels, predictions;
    std::vector<OneHot> targets;
    for (std::size_t i = 0; i < records.size(); ++i) {
        labels.push_back(index_of(records[i].ref.label));
        predictions.push_back(index_of(predicted_label(scores[i])));
        targets.push_back(one_hot(records[i].ref.label));
    }
    auto report = compute_metrics(confusion(labels, predictions));
    report.mean_loss = categorical_cross_entropy(scores, targets, normalize_loss);
    return report;
}

bool all_finite(std::span<const double> values)
{
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TrainConfig TrainConfig::defaults_for(Modality modality)
{
    TrainConfig c;
    c.modality = modality;
    c.augmentation = policy_for(modality);
    return c;
}

void validate(const TrainConfig& c)
{
    auto bad = [](const std::string& what) { fail(ErrorCode::config, "invalid train config: " + what); };
    if (c.batch_size <= 0) bad("batch_size must be positive");
    if (c.epochs <= 0) bad("epochs must be positive");
    if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) bad("learning_rate must be positive");
    if (!(c.adam_beta1 > 0.0 && c.adam_beta1 < 1.0)) bad("adam_beta1 must lie in (0,1)");
    if (!(c.adam_beta2 > 0.0 && c.adam_beta2 < 1.0)) bad("adam_beta2 must lie in (0,1)");
    if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) bad("dropout_rate must lie in [0,1)");
    if (c.output_activation == Activation::relu) bad("output activation must be sigmoid or softmax");
    validate(c.augmentation);
}

std::string canonical_json(const TrainConfig& c)
{
    ordered_json j;
    j["modality"] = to_string(c.modality);
    j["batch_size"] = c.batch_size;
    j["epochs"] = c.epochs;
    j["learning_rate"] = c.learning_rate;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["dropout_rate"] = c.dropout_rate;
    j["seed"] = c.seed;
    j["freeze_backbone"] = c.freeze_backbone;
    j["output_activation"] = to_string(c.output_activation);
    j["loss_normalize"] = c.normalize_loss;
    j["backbone"] = c.backbone;
    j["backbone_weights"] = c.backbone_weights;
    j["augment"] = {{"h_flip", c.augmentation.horizontal_flip},
                    {"v_flip", c.augmentation.vertical_flip},
                    {"rotation_deg", c.augmentation.rotation_deg}};
    return j.dump();
}

TrainConfig config_from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        TrainConfig c;
        const auto modality = parse_modality(j.at("modality").get<std::string>());
        const auto activation = parse_activation(j.at("output_activation").get<std::string>());
        if (!modality || !activation) fail(ErrorCode::data, "train config: unknown modality or activation");
        c.modality = *modality;
        c.batch_size = j.at("batch_size").get<int>();
        c.epochs = j.at("epochs").get<int>();
        c.learning_rate = j.at("learning_rate").get<double>();
        c.adam_beta1 = j.at("adam_beta1").get<double>();
        c.adam_beta2 = j.at("adam_beta2").get<double>();
        c.dropout_rate = j.at("dropout_rate").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.freeze_backbone = j.at("freeze_backbone").get<bool>();
        c.output_activation = *activation;
        c.normalize_loss = j.at("loss_normalize").get<bool>();
        c.backbone = j.at("backbone").get<std::string>();
        c.backbone_weights = j.at("backbone_weights").get<std::string>();
        const auto& a = j.at("augment");
        c.augmentation = {a.at("h_flip").get<bool>(), a.at("v_flip").get<bool>(), a.at("rotation_deg").get<double>()};
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::data, std::string("malformed train config: ") + e.what());
    }
}

std::string config_digest(Modality modality, const TrainConfig& config)
{
    return hex64(fnv1a64(std::string(to_string(modality)) + "\n" + canonical_json(config)));
}

std::string to_record(const EpochLog& log)
{
    ordered_json j;
    j["epoch"] = log.epoch;
    j["train"] = report_json(log.train);
    j["validation"] = report_json(log.validation);
    return j.dump();
}

// ---------------------------------------------------------------------------
// Training

Network make_network(const TrainConfig& config)
{
    validate(config);
    auto backbone = make_extractor(config.backbone, derive_seed(config.seed, "init/backbone"));
    if (!config.backbone_weights.empty()) load_backbone_weights(*backbone, config.backbone_weights);
    backbone->frozen = config.freeze_backbone;
    const auto dim = backbone->output_dim();
    ClassifierHead head(build_head(config.modality, config.dropout_rate, config.output_activation), dim,
                        derive_seed(config.seed, "init/head"));
    return Network(config.modality, std::move(backbone), std::move(head));
}

std::vector<ImageRecord> load_records(const DatasetManifest& manifest)
{
    std::vector<ImageRecord> records;
    records.reserve(manifest.size());
    for (const auto& ref : manifest.records) {
        if (ref.modality != manifest.modality)
            fail(ErrorCode::data, "record " + ref.id + " does not belong to modality " +
                                      std::string(to_string(manifest.modality)));
        records.push_back(load_record(ref));
    }
    return records;
}

EvaluationReport evaluate_records(const Network& network, const std::vector<ImageRecord>& records, bool normalize_loss)
{
    if (records.empty()) fail(ErrorCode::invalid_argument, "empty evaluation set");
    std::vector<ScoreVector> scores;
    scores.reserve(records.size());
    for (const auto& r : records) {
        if (r.ref.modality != network.modality())
            fail(ErrorCode::invalid_argument, "modality mismatch: model is " + std::string(to_string(network.modality())) +
                                                  ", record " + r.ref.id + " is " + std::string(to_string(r.ref.modality)));
        scores.push_back(network.score(r.pixels));
    }
    return evaluate_scores(scores, records, normalize_loss);
}

EvaluationReport evaluate_model(const TrainedModel& model, const DatasetManifest& manifest)
{
    if (manifest.modality != model.network.modality())
        fail(ErrorCode::invalid_argument, "modality mismatch: model is " +
                                              std::string(to_string(model.network.modality())) + ", manifest is " +
                                              std::string(to_string(manifest.modality)));
    if (manifest.empty()) fail(ErrorCode::invalid_argument, "empty evaluation set");
    return evaluate_records(model.network, load_records(manifest), model.metadata.config.normalize_loss);
}

TrainResult train_on_records(const std::vector<ImageRecord>& train, const std::vector<ImageRecord>& validation,
                             const TrainConfig& config, Network network, const EpochCallback& on_epoch)
{
    validate(config);
    if (train.empty() || validation.empty())
        fail(ErrorCode::invalid_argument, "training requires non-empty train and validation partitions");
    if (network.modality() != config.modality)
        fail(ErrorCode::invalid_argument, "network modality does not match train config");
    for (const auto* part : {&train, &validation})
        for (const auto& r : *part) {
            if (r.ref.modality != config.modality)
                fail(ErrorCode::invalid_argument, "record " + r.ref.id + " has modality " +
                                                      std::string(to_string(r.ref.modality)) + ", expected " +
                                                      std::string(to_string(config.modality)));
            network.check_resolution(r.pixels);
        }

    network.backbone().frozen = config.freeze_backbone;
    const bool train_backbone = !config.freeze_backbone;

    Rng order_rng(derive_seed(config.seed, "train/order"));
    Rng augment_rng(derive_seed(config.seed, "train/augment"));
    Rng dropout_rng(derive_seed(config.seed, "train/dropout"));

    Adam head_opt(network.head().parameters().size(), config);
    Adam backbone_opt(train_backbone ? network.backbone().parameters().size() : 0, config);

    // Validation pixels must stay byte-identical across epochs.
    const std::uint64_t validation_digest = pixel_digest(validation);

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result{TrainedModel{network, {}}, {}};
    double best_accuracy = -1.0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(order);
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            ++batch_index;
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            Gradients grads;
            grads.head.assign(network.head().parameters().size(), 0.0);
            if (train_backbone) grads.backbone.assign(network.backbone().parameters().size(), 0.0);

            double loss = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const auto& record = train[order[k]];
                const Image augmented = apply_augmentation(record.pixels, config.augmentation, augment_rng);
                loss += accumulate_gradients(network, augmented, one_hot(record.ref.label), dropout_rng,
                                             config.normalize_loss, grads);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            loss *= inv;
            for (auto& g : grads.head) g *= inv;
            for (auto& g : grads.backbone) g *= inv;

            if (!std::isfinite(loss) || !all_finite(grads.head) || !all_finite(grads.backbone))
                fail(ErrorCode::diverged, "training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                                              ", batch " + std::to_string(batch_index));

            head_opt.step(network.head().parameters(), grads.head);
            if (train_backbone) backbone_opt.step(network.backbone().parameters(), grads.backbone);
            if (!all_finite(network.head().parameters()))
                fail(ErrorCode::diverged, "training diverged: non-finite parameters at epoch " +
                                              std::to_string(epoch) + ", batch " + std::to_string(batch_index));
        }

        EpochLog log;
        log.epoch = epoch;
        log.train = evaluate_records(network, train, config.normalize_loss);
        log.validation = evaluate_records(network, validation, config.normalize_loss);
        if (pixel_digest(validation) != validation_digest)
            fail(ErrorCode::invalid_argument, "validation images changed during training");
        if (!std::isfinite(log.train.mean_loss) || !std::isfinite(log.validation.mean_loss))
            fail(ErrorCode::diverged, "training diverged: non-finite evaluation loss at epoch " + std::to_string(epoch));

        if (log.validation.accuracy > best_accuracy) {
            best_accuracy = log.validation.accuracy;
            result.model.network = network;
            result.model.metadata.validation = log.validation;
            result.model.metadata.train = log.train;
            result.model.metadata.epoch_selected = epoch;
        }
        result.epochs.push_back(log);
        if (on_epoch) on_epoch(log);
    }

    result.model.metadata.modality = config.modality;
    result.model.metadata.config = config;
    result.model.metadata.config_digest = config_digest(config.modality, config);
    return result;
}

TrainResult train_modality(const DatasetSplit& split, const TrainConfig& config, const EpochCallback& on_epoch)
{
    if (split.train.modality != config.modality || split.validation.modality != config.modality)
        fail(ErrorCode::invalid_argument, "split modality does not match train config modality");
    if (split.train.empty() || split.validation.empty())
        fail(ErrorCode::invalid_argument, "training requires non-empty train and validation partitions");
    return train_on_records(load_records(split.train), load_records(split.validation), config, make_network(config),
                            on_epoch);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

struct PendingFile {
    fs::path target;
    fs::path temp;
};

void write_all_atomic(const std::vector<std::pair<fs::path, std::string>>& files)
{
    std::vector<PendingFile> pending;
    auto cleanup = [&] {
        std::error_code ec;
        for (const auto& p : pending) fs::remove(p.temp, ec);
    };
    for (const auto& [target, contents] : files) {
        PendingFile p{target, target.parent_path() / ("." + target.filename().string() + ".tmp")};
        std::ofstream out(p.temp, std::ios::binary | std::ios::trunc);
        if (!out) {
            cleanup();
            fail(ErrorCode::io, "cannot write " + p.temp.string());
        }
        pending.push_back(p);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.close();
        if (!out) {
            cleanup();
            fail(ErrorCode::io, "short write to " + p.temp.string());
        }
    }
    for (const auto& p : pending) {
        if (fs::exists(p.target) && !fs::is_regular_file(p.target)) {
            cleanup();
            fail(ErrorCode::io, "cannot replace " + p.target.string() + ": not a regular file");
        }
    }

    // Existing targets are moved aside so a failed commit can be rolled back.
    std::vector<std::pair<fs::path, fs::path>> backups;
    std::vector<fs::path> committed;
    auto rollback = [&] {
        std::error_code ec;
        for (const auto& t : committed) fs::remove(t, ec);
        for (const auto& [target, backup] : backups) fs::rename(backup, target, ec);
        cleanup();
    };
    for (const auto& p : pending) {
        std::error_code ec;
        if (fs::exists(p.target)) {
            const fs::path backup = p.target.parent_path() / ("." + p.target.filename().string() + ".bak");
            fs::rename(p.target, backup, ec);
            if (ec) {
                rollback();
                fail(ErrorCode::io, "cannot replace " + p.target.string() + ": " + ec.message());
            }
            backups.emplace_back(p.target, backup);
        }
        fs::rename(p.temp, p.target, ec);
        if (ec) {
            rollback();
            fail(ErrorCode::io, "cannot rename into " + p.target.string() + ": " + ec.message());
        }
        committed.push_back(p.target);
    }
    std::error_code ec;
    for (const auto& b : backups) fs::remove(b.second, ec);
}

std::string read_artifact_file(const fs::path& path)
{
    if (!fs::exists(path)) fail(ErrorCode::missing_artifact, "missing artifact file: " + path.string());
    return read_text_file(path);
}

}  // namespace

std::vector<fs::path> save_model(const TrainedModel& model, const fs::path& dir, const std::vector<EpochLog>* epochs)
{
    const auto& md = model.metadata;
    const auto& net = model.network;

    TensorMap tensors;
    tensors["backbone"].assign(net.backbone().parameters().begin(), net.backbone().parameters().end());
    tensors["head"].assign(net.head().parameters().begin(), net.head().parameters().end());
    const std::string weights = encode_tensors(tensors);

    ordered_json j;
    j["format"] = kModelFormat;
    j["modality"] = to_string(md.modality);
    j["val_accuracy"] = md.validation.accuracy;
    j["val_precision"] = md.validation.precision;
    j["val_recall"] = md.validation.recall;
    j["val_f1"] = md.validation.f1;
    j["val_loss"] = md.validation.mean_loss;
    j["validation"] = report_json(md.validation);
    j["train"] = report_json(md.train);
    j["epoch_selected"] = md.epoch_selected;
    j["config"] = ordered_json::parse(canonical_json(md.config));
    j["config_digest"] = md.config_digest;
    j["head"] = {{"layers", describe(net.head().spec())},
                 {"input_dim", net.head().input_dim()},
                 {"parameter_count", net.head().parameters().size()}};
    j["backbone"] = {{"name", net.backbone().name()},
                     {"output_dim", net.backbone().output_dim()},
                     {"pretrained", net.backbone().pretrained},
                     {"frozen", net.backbone().frozen}};
    j["weights_digest"] = hex64(fnv1a64(weights));

    std::vector<std::pair<fs::path, std::string>> files{{dir / "model.weights", weights},
                                                        {dir / "metadata", j.dump(2) + "\n"}};
    if (epochs) {
        std::string log;
        for (const auto& e : *epochs) log += to_record(e) + "\n";
        files.emplace_back(dir / "epochs.log", log);
    }

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
    write_all_atomic(files);

    std::vector<fs::path> written;
    for (const auto& f : files) written.push_back(f.first);
    return written;
}

TrainedModel load_model(const fs::path& dir)
{
    const auto metadata_path = dir / "metadata";
    const auto weights_path = dir / "model.weights";
    const std::string metadata_text = read_artifact_file(metadata_path);
    const std::string weights = read_artifact_file(weights_path);

    ordered_json j;
    ModelMetadata md;
    bool pretrained = false;
    std::string weights_digest;
    try {
        j = ordered_json::parse(metadata_text);
        if (j.at("format").get<std::string>() != kModelFormat)
            fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + metadata_path.string() + " has unknown format");
        const auto modality = parse_modality(j.at("modality").get<std::string>());
        if (!modality) fail(ErrorCode::corrupt_artifact, "corrupt artifact: unknown modality in " + metadata_path.string());
        md.modality = *modality;
        md.validation = report_from_record(j.at("validation").dump());
        md.train = report_from_record(j.at("train").dump());
        md.epoch_selected = j.at("epoch_selected").get<int>();
        md.config = config_from_json(j.at("config").dump());
        md.config_digest = j.at("config_digest").get<std::string>();
        pretrained = j.at("backbone").at("pretrained").get<bool>();
        weights_digest = j.at("weights_digest").get<std::string>();
        if (j.at("val_accuracy").get<double>() != md.validation.accuracy)
            fail(ErrorCode::corrupt_artifact, "corrupt artifact: inconsistent val_accuracy in " + metadata_path.string());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + metadata_path.string() + ": " + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::corrupt_artifact) throw;
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + metadata_path.string() + ": " + e.what());
    }

    if (config_digest(md.modality, md.config) != md.config_digest || md.config.modality != md.modality)
        fail(ErrorCode::config_drift, "config drift: " + metadata_path.string() + " does not match its config digest");

    const auto tensors = decode_tensors(weights, weights_path.string());
    if (hex64(fnv1a64(weights)) != weights_digest)
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + weights_path.string() + " does not match metadata");

    TrainConfig build = md.config;
    build.backbone_weights.clear();
    Network net = make_network(build);
    auto assign = [&](const char* name, std::span<double> dst) {
        auto it = tensors.find(name);
        if (it == tensors.end() || it->second.size() != dst.size())
            fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + weights_path.string() + " tensor '" + name +
                                                  "' missing or mis-sized");
        std::copy(it->second.begin(), it->second.end(), dst.begin());
    };
    assign("backbone", net.backbone().parameters());
    assign("head", net.head().parameters());
    net.backbone().pretrained = pretrained;
    net.backbone().frozen = md.config.freeze_backbone;

    return TrainedModel{std::move(net), std::move(md)};
}

void save_backbone_weights(const FeatureExtractor& extractor, const fs::path& path)
{
    TensorMap tensors;
    tensors[extractor.name()].assign(extractor.parameters().begin(), extractor.parameters().end());
    write_file_atomic(path, encode_tensors(tensors));
}

void load_backbone_weights(FeatureExtractor& extractor, const fs::path& path)
{
    if (!fs::exists(path)) fail(ErrorCode::config, "backbone weights not found: " + path.string());
    const auto tensors = decode_tensors(read_text_file(path), path.string());
    auto it = tensors.find(extractor.name());
    if (it == tensors.end() || it->second.size() != extractor.parameters().size())
        fail(ErrorCode::corrupt_artifact, "corrupt artifact: " + path.string() + " has no matching '" +
                                              extractor.name() + "' tensor");
    std::copy(it->second.begin(), it->second.end(), extractor.parameters().begin());
    extractor.pretrained = true;
}

}  // namespace modalfuse
