#include "modalfuse/modalfuse.h"

#include <cstring>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "ensemble.hpp"
#include "imageproc.hpp"
#include "metrics.hpp"
#include "training.hpp"

namespace mf = modalfuse;
namespace fs = std::filesystem;

struct mf_config {
    mf::ExperimentConfig config;
    std::string pairing_name;
};

struct mf_manifest {
    mf::DatasetManifest manifest;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

struct mf_split {
    mf::DatasetSplit split;
    mf_manifest train;
    mf_manifest validation;
};

struct mf_model {
    mf::TrainedModel model;
    std::vector<mf::EpochLog> epochs;
};

struct mf_ensemble {
    std::map<mf::Modality, mf::TrainedModel> models;
    mf::EnsembleArtifact artifact;
    bool allow_partial = false;
    std::optional<mf::EnsembleEvaluation> evaluation;
    std::vector<std::string> warnings;
};

namespace {

thread_local std::string g_last_error;

mf_status to_status(mf::ErrorCode code)
{
    switch (code) {
    case mf::ErrorCode::invalid_argument: return MF_ERR_INVALID_ARGUMENT;
    case mf::ErrorCode::io: return MF_ERR_IO;
    case mf::ErrorCode::config: return MF_ERR_CONFIG;
    case mf::ErrorCode::data: return MF_ERR_DATA;
    case mf::ErrorCode::corrupt_artifact: return MF_ERR_CORRUPT_ARTIFACT;
    case mf::ErrorCode::config_drift: return MF_ERR_CONFIG_DRIFT;
    case mf::ErrorCode::diverged: return MF_ERR_DIVERGED;
    case mf::ErrorCode::missing_artifact: return MF_ERR_MISSING_ARTIFACT;
    case mf::ErrorCode::incomplete_modalities: return MF_ERR_INCOMPLETE_MODALITIES;
    case mf::ErrorCode::unsupported: return MF_ERR_UNSUPPORTED;
    }
    return MF_ERR_INTERNAL;
}

template <typename F>
mf_status guarded(F&& body)
{
    try {
        body();
        return MF_OK;
    } catch (const mf::Error& e) {
        g_last_error = e.what();
        return to_status(e.code());
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return MF_ERR_INTERNAL;
    } catch (const fs::filesystem_error& e) {
        g_last_error = e.what();
        return MF_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MF_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return MF_ERR_INTERNAL;
    }
}

void require(bool ok, const char* what)
{
    if (!ok) mf::fail(mf::ErrorCode::invalid_argument, what);
}

mf::Modality modality_of(mf_modality m)
{
    require(m >= MF_CLINICAL && m <= MF_HISTOPATHOLOGICAL, "invalid modality");
    return static_cast<mf::Modality>(m);
}

mf_report to_c(const mf::EvaluationReport& r)
{
    return {r.accuracy, r.precision, r.recall, r.f1, r.mean_loss,
            r.n, r.confusion.tp, r.confusion.fp, r.confusion.fn, r.confusion.tn};
}

mf::EvaluationReport from_c(const mf_report& r)
{
    mf::EvaluationReport out;
    out.accuracy = r.accuracy;
    out.precision = r.precision;
    out.recall = r.recall;
    out.f1 = r.f1;
    out.mean_loss = r.mean_loss;
    out.n = r.n;
    out.confusion = {r.tp, r.fp, r.fn, r.tn};
    return out;
}

mf_fused to_c(const mf::FusedPrediction& f)
{
    mf_fused out{};
    for (auto m : mf::kAllModalities) {
        const auto i = static_cast<std::size_t>(mf::index_of(m));
        auto it = f.per_modality_scores.find(m);
        out.present[i] = it != f.per_modality_scores.end();
        if (out.present[i]) out.per_modality[i] = {it->second.normal(), it->second.cancer()};
    }
    out.weighted = {f.weighted_scores.normal(), f.weighted_scores.cancer()};
    out.label = mf::index_of(f.label);
    out.degraded = f.degraded ? 1 : 0;
    return out;
}

mf::FusedPrediction from_c(const mf_fused& f)
{
    mf::FusedPrediction out;
    for (auto m : mf::kAllModalities) {
        const auto i = static_cast<std::size_t>(mf::index_of(m));
        if (f.present[i]) out.per_modality_scores[m] = mf::ScoreVector{{f.per_modality[i].normal, f.per_modality[i].cancer}};
    }
    out.weighted_scores = mf::ScoreVector{{f.weighted.normal, f.weighted.cancer}};
    out.label = f.label == 1 ? mf::Label::cancer : mf::Label::normal;
    out.degraded = f.degraded != 0;
    return out;
}

std::size_t copy_out(const std::string& s, char* buf, std::size_t len)
{
    if (buf && len > 0) {
        const std::size_t n = std::min(s.size(), len - 1);
        std::memcpy(buf, s.data(), n);
        buf[n] = '\0';
    }
    return s.size();
}

}  // namespace

extern "C" {

const char* mf_version(void) { return "1.0.0"; }

const char* mf_last_error(void) { return g_last_error.c_str(); }

const char* mf_status_name(mf_status status)
{
    switch (status) {
    case MF_OK: return "ok";
    case MF_ERR_INVALID_ARGUMENT: return "invalid argument";
    case MF_ERR_IO: return "i/o error";
    case MF_ERR_CONFIG: return "config error";
    case MF_ERR_DATA: return "data error";
    case MF_ERR_CORRUPT_ARTIFACT: return "corrupt artifact";
    case MF_ERR_CONFIG_DRIFT: return "config drift";
    case MF_ERR_DIVERGED: return "training diverged";
    case MF_ERR_MISSING_ARTIFACT: return "missing artifact";
    case MF_ERR_INCOMPLETE_MODALITIES: return "incomplete modality set";
    case MF_ERR_UNSUPPORTED: return "unsupported";
    case MF_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* mf_modality_name(mf_modality modality)
{
    switch (modality) {
    case MF_CLINICAL: return "clinical";
    case MF_RADIOLOGICAL: return "radiological";
    case MF_HISTOPATHOLOGICAL: return "histopathological";
    }
    return "unknown";
}

mf_status mf_modality_parse(const char* name, mf_modality* out)
{
    return guarded([&] {
        require(name && out, "mf_modality_parse: null argument");
        auto m = mf::parse_modality(name);
        if (!m) mf::fail(mf::ErrorCode::invalid_argument, std::string("unknown modality '") + name + "'");
        *out = static_cast<mf_modality>(mf::index_of(*m));
    });
}

// ---- config ---------------------------------------------------------------

mf_status mf_config_create(mf_config** out)
{
    return guarded([&] {
        require(out, "mf_config_create: null output");
        *out = new mf_config{};
    });
}

mf_status mf_config_load(const char* path, mf_config** out)
{
    return guarded([&] {
        require(path && out, "mf_config_load: null argument");
        *out = new mf_config{mf::ExperimentConfig::load(path), {}};
    });
}

mf_status mf_config_set(mf_config* config, const char* key, const char* value)
{
    return guarded([&] {
        require(config && key && value, "mf_config_set: null argument");
        config->config.set(key, value);
    });
}

mf_status mf_config_validate_paths(const mf_config* config)
{
    return guarded([&] {
        require(config, "mf_config_validate_paths: null config");
        config->config.validate_paths();
    });
}

const char* mf_config_output_dir(const mf_config* config)
{
    return config ? config->config.output_dir().c_str() : "";
}

const char* mf_config_dataset_root(const mf_config* config)
{
    return config ? config->config.dataset_root().c_str() : "";
}

double mf_config_split_ratio(const mf_config* config) { return config ? config->config.split_ratio() : 0.0; }

uint64_t mf_config_split_seed(const mf_config* config, mf_modality modality)
{
    if (!config || modality < MF_CLINICAL || modality > MF_HISTOPATHOLOGICAL) return 0;
    return config->config.split_seed(static_cast<mf::Modality>(modality));
}

int mf_config_hard_fusion(const mf_config* config)
{
    return config && config->config.fusion_mode() == mf::FusionMode::hard ? 1 : 0;
}

const char* mf_config_pairing_strategy(const mf_config* config)
{
    if (!config) return "";
    auto* mutable_config = const_cast<mf_config*>(config);
    mutable_config->pairing_name = std::string(mf::to_string(config->config.pairing().strategy));
    return mutable_config->pairing_name.c_str();
}

uint64_t mf_config_pairing_seed(const mf_config* config) { return config ? config->config.pairing().seed : 0; }

void mf_config_free(mf_config* config) { delete config; }

// ---- dataset ----------------------------------------------------------------

mf_status mf_manifest_scan(const char* modality_dir, mf_modality modality, mf_manifest** out)
{
    return guarded([&] {
        require(modality_dir && out, "mf_manifest_scan: null argument");
        auto scan = mf::scan_dataset(modality_dir, modality_of(modality));
        *out = new mf_manifest{std::move(scan.manifest), scan.skipped, std::move(scan.warnings)};
    });
}

mf_status mf_manifest_read(const char* path, mf_manifest** out)
{
    return guarded([&] {
        require(path && out, "mf_manifest_read: null argument");
        *out = new mf_manifest{mf::read_manifest(path), 0, {}};
    });
}

mf_status mf_manifest_write(const mf_manifest* manifest, const char* path)
{
    return guarded([&] {
        require(manifest && path, "mf_manifest_write: null argument");
        mf::write_manifest(manifest->manifest, path);
    });
}

size_t mf_manifest_size(const mf_manifest* manifest) { return manifest ? manifest->manifest.size() : 0; }

size_t mf_manifest_class_count(const mf_manifest* manifest, int label)
{
    if (!manifest || (label != 0 && label != 1)) return 0;
    return manifest->manifest.class_count(static_cast<mf::Label>(label));
}

mf_modality mf_manifest_modality(const mf_manifest* manifest)
{
    return manifest ? static_cast<mf_modality>(mf::index_of(manifest->manifest.modality)) : MF_CLINICAL;
}

size_t mf_manifest_skipped(const mf_manifest* manifest) { return manifest ? manifest->skipped : 0; }

size_t mf_manifest_warning_count(const mf_manifest* manifest) { return manifest ? manifest->warnings.size() : 0; }

const char* mf_manifest_warning(const mf_manifest* manifest, size_t index)
{
    if (!manifest || index >= manifest->warnings.size()) return nullptr;
    return manifest->warnings[index].c_str();
}

void mf_manifest_free(mf_manifest* manifest) { delete manifest; }

mf_status mf_split_create(const mf_manifest* manifest, double ratio, uint64_t seed, mf_split** out)
{
    return guarded([&] {
        require(manifest && out, "mf_split_create: null argument");
        auto split = mf::split_dataset(manifest->manifest, ratio, seed);
        auto* handle = new mf_split{};
        handle->train.manifest = split.train;
        handle->validation.manifest = split.validation;
        handle->split = std::move(split);
        *out = handle;
    });
}

mf_status mf_split_write(const mf_split* split, const char* dir)
{
    return guarded([&] {
        require(split && dir, "mf_split_write: null argument");
        mf::write_split(split->split, dir);
    });
}

mf_status mf_split_read(const char* dir, mf_split** out)
{
    return guarded([&] {
        require(dir && out, "mf_split_read: null argument");
        auto split = mf::read_split(dir);
        auto* handle = new mf_split{};
        handle->train.manifest = split.train;
        handle->validation.manifest = split.validation;
        handle->split = std::move(split);
        *out = handle;
    });
}

const mf_manifest* mf_split_train(const mf_split* split) { return split ? &split->train : nullptr; }

const mf_manifest* mf_split_validation(const mf_split* split) { return split ? &split->validation : nullptr; }

void mf_split_free(mf_split* split) { delete split; }

// ---- training ---------------------------------------------------------------

mf_status mf_train(const mf_split* split, const mf_config* config, mf_modality modality, mf_epoch_callback on_epoch,
                   void* user_data, mf_model** out)
{
    return guarded([&] {
        require(split && config && out, "mf_train: null argument");
        const auto m = modality_of(modality);
        auto train_config = config->config.train_config(m);
        mf::EpochCallback callback;
        if (on_epoch) {
            callback = [&](const mf::EpochLog& log) {
                const mf_epoch_log c{log.epoch, to_c(log.train), to_c(log.validation)};
                on_epoch(&c, user_data);
            };
        }
        auto result = mf::train_modality(split->split, train_config, callback);
        *out = new mf_model{std::move(result.model), std::move(result.epochs)};
    });
}

mf_status mf_model_save(const mf_model* model, const char* dir)
{
    return guarded([&] {
        require(model && dir, "mf_model_save: null argument");
        mf::save_model(model->model, dir, model->epochs.empty() ? nullptr : &model->epochs);
    });
}

mf_status mf_model_load(const char* dir, mf_model** out)
{
    return guarded([&] {
        require(dir && out, "mf_model_load: null argument");
        *out = new mf_model{mf::load_model(dir), {}};
    });
}

mf_modality mf_model_modality(const mf_model* model)
{
    return model ? static_cast<mf_modality>(mf::index_of(model->model.network.modality())) : MF_CLINICAL;
}

double mf_model_val_accuracy(const mf_model* model) { return model ? model->model.val_accuracy() : 0.0; }

mf_status mf_model_metadata(const mf_model* model, mf_report* validation, mf_report* train, int* epoch_selected)
{
    return guarded([&] {
        require(model, "mf_model_metadata: null model");
        if (validation) *validation = to_c(model->model.metadata.validation);
        if (train) *train = to_c(model->model.metadata.train);
        if (epoch_selected) *epoch_selected = model->model.metadata.epoch_selected;
    });
}

mf_status mf_model_evaluate(const mf_model* model, const mf_manifest* manifest, mf_report* out)
{
    return guarded([&] {
        require(model && manifest && out, "mf_model_evaluate: null argument");
        *out = to_c(mf::evaluate_model(model->model, manifest->manifest));
    });
}

mf_status mf_model_score_file(const mf_model* model, const char* image_path, mf_scores* out)
{
    return guarded([&] {
        require(model && image_path && out, "mf_model_score_file: null argument");
        const auto& net = model->model.network;
        const auto s = net.score(mf::load_preprocessed(image_path, net.modality()));
        *out = {s.normal(), s.cancer()};
    });
}

void mf_model_free(mf_model* model) { delete model; }

size_t mf_report_record(const mf_report* report, char* buf, size_t len)
{
    if (!report) return copy_out({}, buf, len);
    return copy_out(mf::to_record(from_c(*report)), buf, len);
}

mf_status mf_report_write(const mf_report* report, const char* path)
{
    return guarded([&] {
        require(report && path, "mf_report_write: null argument");
        mf::write_file_atomic(path, mf::to_record(from_c(*report)) + "\n");
    });
}

// ---- fusion -------------------------------------------------------------------

mf_status mf_derive_weights(const double val_accuracy[MF_MODALITY_COUNT], double weights_out[MF_MODALITY_COUNT])
{
    return guarded([&] {
        require(val_accuracy && weights_out, "mf_derive_weights: null argument");
        std::map<mf::Modality, double> acc;
        for (auto m : mf::kAllModalities) acc[m] = val_accuracy[mf::index_of(m)];
        const auto w = mf::derive_weights(acc);
        for (auto m : mf::kAllModalities) weights_out[mf::index_of(m)] = w[m];
    });
}

mf_status mf_fuse(const mf_scores scores[MF_MODALITY_COUNT], const int present[MF_MODALITY_COUNT],
                  const double weights[MF_MODALITY_COUNT], int hard, int allow_partial, mf_fused* out)
{
    return guarded([&] {
        require(scores && weights && out, "mf_fuse: null argument");
        std::map<mf::Modality, mf::ScoreVector> s;
        mf::EnsembleWeights w;
        for (auto m : mf::kAllModalities) {
            const auto i = static_cast<std::size_t>(mf::index_of(m));
            w.values[i] = weights[i];
            if (!present || present[i]) s[m] = mf::ScoreVector{{scores[i].normal, scores[i].cancer}};
        }
        *out = to_c(mf::fuse(s, w, hard ? mf::FusionMode::hard : mf::FusionMode::soft, allow_partial != 0));
    });
}

namespace {

mf_ensemble* make_ensemble(const mf_model* const models[MF_MODALITY_COUNT], int allow_partial)
{
    require(models, "ensemble: null model array");
    auto ensemble = std::make_unique<mf_ensemble>();
    ensemble->allow_partial = allow_partial != 0;
    for (auto m : mf::kAllModalities) {
        const mf_model* model = models[mf::index_of(m)];
        if (!model) {
            if (!ensemble->allow_partial)
                mf::fail(mf::ErrorCode::incomplete_modalities,
                         "incomplete modality set: no " + std::string(mf::to_string(m)) + " model");
            continue;
        }
        if (model->model.network.modality() != m)
            mf::fail(mf::ErrorCode::invalid_argument, "model/modality mismatch: slot " + std::string(mf::to_string(m)) +
                                                          " holds a " +
                                                          std::string(mf::to_string(model->model.network.modality())) +
                                                          " model");
        ensemble->models.emplace(m, model->model);
        ensemble->artifact.val_accuracy[m] = model->model.val_accuracy();
    }
    return ensemble.release();
}

}  // namespace

mf_status mf_ensemble_create(const mf_model* const models[MF_MODALITY_COUNT], int allow_partial, mf_ensemble** out)
{
    return guarded([&] {
        require(out, "mf_ensemble_create: null output");
        std::unique_ptr<mf_ensemble> ensemble(make_ensemble(models, allow_partial));
        ensemble->artifact.weights = ensemble->allow_partial
                                         ? mf::derive_partial_weights(ensemble->artifact.val_accuracy)
                                         : mf::derive_weights(ensemble->artifact.val_accuracy);
        *out = ensemble.release();
    });
}

mf_status mf_ensemble_load(const char* dir, const mf_model* const models[MF_MODALITY_COUNT], int allow_partial,
                           mf_ensemble** out)
{
    return guarded([&] {
        require(dir && out, "mf_ensemble_load: null argument");
        std::unique_ptr<mf_ensemble> ensemble(make_ensemble(models, allow_partial));
        auto stored = mf::read_ensemble_weights(fs::path(dir) / "weights");
        for (const auto& [m, model] : ensemble->models)
            if (!stored.weights.has(m))
                mf::fail(mf::ErrorCode::corrupt_artifact,
                         "ensemble weights have no entry for " + std::string(mf::to_string(m)));
        ensemble->artifact = std::move(stored);
        *out = ensemble.release();
    });
}

mf_status mf_ensemble_set_fusion(mf_ensemble* ensemble, int hard)
{
    return guarded([&] {
        require(ensemble, "mf_ensemble_set_fusion: null ensemble");
        ensemble->artifact.mode = hard ? mf::FusionMode::hard : mf::FusionMode::soft;
    });
}

mf_status mf_ensemble_weights(const mf_ensemble* ensemble, double weights[MF_MODALITY_COUNT],
                              int present[MF_MODALITY_COUNT])
{
    return guarded([&] {
        require(ensemble && weights, "mf_ensemble_weights: null argument");
        for (auto m : mf::kAllModalities) {
            const auto i = mf::index_of(m);
            weights[i] = ensemble->artifact.weights[m];
            if (present) present[i] = ensemble->artifact.weights.has(m) ? 1 : 0;
        }
    });
}

mf_status mf_ensemble_evaluate(mf_ensemble* ensemble, const mf_manifest* const manifests[MF_MODALITY_COUNT],
                               const char* pairing_strategy, uint64_t pairing_seed, mf_report* out)
{
    return guarded([&] {
        require(ensemble && manifests && pairing_strategy && out, "mf_ensemble_evaluate: null argument");
        auto strategy = mf::parse_pairing(pairing_strategy);
        if (!strategy)
            mf::fail(mf::ErrorCode::config, std::string("unknown pairing strategy '") + pairing_strategy + "'");

        std::map<mf::Modality, mf::DatasetManifest> by_modality;
        for (const auto& [m, model] : ensemble->models) {
            const mf_manifest* manifest = manifests[mf::index_of(m)];
            if (!manifest)
                mf::fail(mf::ErrorCode::incomplete_modalities,
                         "incomplete modality set: no " + std::string(mf::to_string(m)) + " manifest");
            by_modality[m] = manifest->manifest;
        }

        const mf::PairingConfig pairing{*strategy, pairing_seed};
        auto paired = mf::build_multimodal_manifest(by_modality, pairing, ensemble->allow_partial);

        mf::ModelSet set;
        for (const auto& [m, model] : ensemble->models) set[m] = &model;
        auto evaluation = mf::evaluate_ensemble(paired.samples, set, ensemble->artifact.weights, ensemble->artifact.mode,
                                                ensemble->allow_partial);
        ensemble->artifact.pairing = pairing;
        ensemble->warnings = std::move(paired.warnings);
        *out = to_c(evaluation.report);
        ensemble->evaluation = std::move(evaluation);
    });
}

size_t mf_ensemble_warning_count(const mf_ensemble* ensemble) { return ensemble ? ensemble->warnings.size() : 0; }

const char* mf_ensemble_warning(const mf_ensemble* ensemble, size_t index)
{
    if (!ensemble || index >= ensemble->warnings.size()) return nullptr;
    return ensemble->warnings[index].c_str();
}

mf_status mf_ensemble_save(const mf_ensemble* ensemble, const char* dir)
{
    return guarded([&] {
        require(ensemble && dir, "mf_ensemble_save: null argument");
        const fs::path root(dir);
        fs::create_directories(root);
        mf::write_ensemble_weights(ensemble->artifact, root / "weights");
        if (ensemble->evaluation) {
            mf::write_file_atomic(root / "report", mf::to_record(ensemble->evaluation->report) + "\n");
            std::string records = mf::fusion_record_header() + "\n";
            for (const auto& [id, fused] : ensemble->evaluation->predictions) records += mf::fusion_record(id, fused) + "\n";
            mf::write_file_atomic(root / "fused.tsv", records);
        }
    });
}

mf_status mf_ensemble_predict_files(const mf_ensemble* ensemble, const char* const paths[MF_MODALITY_COUNT],
                                    mf_fused* out)
{
    return guarded([&] {
        require(ensemble && paths && out, "mf_ensemble_predict_files: null argument");
        std::map<mf::Modality, mf::ScoreVector> scores;
        for (auto m : mf::kAllModalities) {
            const char* path = paths[mf::index_of(m)];
            if (!path) continue;
            auto it = ensemble->models.find(m);
            if (it == ensemble->models.end())
                mf::fail(mf::ErrorCode::missing_artifact, "no " + std::string(mf::to_string(m)) + " model loaded");
            scores[m] = it->second.network.score(mf::load_preprocessed(path, m));
        }
        *out = to_c(mf::fuse(scores, ensemble->artifact.weights, ensemble->artifact.mode, ensemble->allow_partial));
    });
}

void mf_ensemble_free(mf_ensemble* ensemble) { delete ensemble; }

size_t mf_fused_record(const mf_fused* fused, const char* sample_id, char* buf, size_t len)
{
    if (!fused) return copy_out({}, buf, len);
    return copy_out(mf::fusion_record(sample_id ? sample_id : "", from_c(*fused)), buf, len);
}

}  // extern "C"
