// modalfuse command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "modalfuse/modalfuse.h"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kInternal = 1, kInput = 2, kTraining = 3, kMissing = 4 };

struct Failure {
    int exit_code;
    std::string message;
};

int exit_for(mf_status s)
{
    switch (s) {
    case MF_OK: return kOk;
    case MF_ERR_DIVERGED: return kTraining;
    case MF_ERR_MISSING_ARTIFACT:
    case MF_ERR_INCOMPLETE_MODALITIES:
    case MF_ERR_CORRUPT_ARTIFACT: return kMissing;
    case MF_ERR_INTERNAL: return kInternal;
    default: return kInput;
    }
}

void check(mf_status s, const std::string& context = {})
{
    if (s == MF_OK) return;
    std::string msg = mf_last_error();
    if (!context.empty()) msg = context + ": " + msg;
    throw Failure{exit_for(s), msg};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<mf_config, Deleter<mf_config, mf_config_free>>;
using ManifestPtr = std::unique_ptr<mf_manifest, Deleter<mf_manifest, mf_manifest_free>>;
using SplitPtr = std::unique_ptr<mf_split, Deleter<mf_split, mf_split_free>>;
using ModelPtr = std::unique_ptr<mf_model, Deleter<mf_model, mf_model_free>>;
using EnsemblePtr = std::unique_ptr<mf_ensemble, Deleter<mf_ensemble, mf_ensemble_free>>;

const mf_modality kModalities[] = {MF_CLINICAL, MF_RADIOLOGICAL, MF_HISTOPATHOLOGICAL};

struct Common {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
};

ConfigPtr load_config(const Common& common)
{
    mf_config* raw = nullptr;
    std::string path = common.config_path;
    if (path.empty())
        if (const char* env = std::getenv("MODALFUSE_CONFIG"); env && *env) path = env;
    check(path.empty() ? mf_config_create(&raw) : mf_config_load(path.c_str(), &raw));
    ConfigPtr config(raw);
    if (common.seed) check(mf_config_set(raw, "seed", std::to_string(*common.seed).c_str()));
    if (!common.out_dir.empty()) check(mf_config_set(raw, "output.dir", common.out_dir.c_str()));
    for (const auto& kv : common.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Failure{kInput, "--set expects key=value, got '" + kv + "'"};
        check(mf_config_set(raw, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    return config;
}

std::vector<mf_modality> parse_modalities(const std::string& arg)
{
    if (arg == "all") return {std::begin(kModalities), std::end(kModalities)};
    mf_modality m;
    check(mf_modality_parse(arg.c_str(), &m));
    return {m};
}

fs::path out_root(const mf_config* config) { return mf_config_output_dir(config); }
fs::path split_dir(const mf_config* c, mf_modality m) { return out_root(c) / "manifests" / mf_modality_name(m); }
fs::path model_dir(const mf_config* c, mf_modality m) { return out_root(c) / "models" / mf_modality_name(m); }

std::string report_record(const mf_report& r)
{
    std::string buf(mf_report_record(&r, nullptr, 0) + 1, '\0');
    mf_report_record(&r, buf.data(), buf.size());
    buf.pop_back();
    return buf;
}

void print_table_header()
{
    std::printf("%-18s %9s %9s %9s %9s %9s %6s\n", "model", "accuracy", "precision", "recall", "f1", "loss", "n");
}

void print_table_row(const std::string& name, const mf_report& r)
{
    std::printf("%-18s %9.4f %9.4f %9.4f %9.4f %9.4f %6llu\n", name.c_str(), r.accuracy, r.precision, r.recall, r.f1,
                r.mean_loss, static_cast<unsigned long long>(r.n));
}

void write_report(const mf_config* config, const std::string& name, const mf_report& r)
{
    const fs::path dir = out_root(config) / "reports";
    fs::create_directories(dir);
    check(mf_report_write(&r, (dir / (name + ".json")).c_str()), "writing report");
}

// ---- ingest -----------------------------------------------------------------

struct IngestArgs {
    std::string root;
    std::string modality = "all";
    std::optional<double> ratio;
};

int cmd_ingest(const Common& common, const IngestArgs& args)
{
    auto config = load_config(common);
    if (!args.root.empty()) check(mf_config_set(config.get(), "dataset.root", args.root.c_str()));
    if (args.ratio) check(mf_config_set(config.get(), "split.ratio", std::to_string(*args.ratio).c_str()));
    check(mf_config_validate_paths(config.get()));
    const fs::path root = mf_config_dataset_root(config.get());
    if (root.empty()) throw Failure{kInput, "no dataset root given (--root or dataset.root)"};

    for (mf_modality m : parse_modalities(args.modality)) {
        const char* name = mf_modality_name(m);
        mf_manifest* raw = nullptr;
        check(mf_manifest_scan((root / name).c_str(), m, &raw), name);
        ManifestPtr manifest(raw);
        for (size_t i = 0; i < mf_manifest_warning_count(raw); ++i)
            std::cerr << "warning: " << mf_manifest_warning(raw, i) << "\n";

        mf_split* split_raw = nullptr;
        check(mf_split_create(raw, mf_config_split_ratio(config.get()), mf_config_split_seed(config.get(), m),
                              &split_raw),
              name);
        SplitPtr split(split_raw);
        const fs::path dir = split_dir(config.get(), m);
        fs::create_directories(dir);
        check(mf_manifest_write(raw, (dir / "manifest.tsv").c_str()));
        check(mf_split_write(split_raw, dir.c_str()));

        std::printf("%s: %zu records (train %zu / val %zu)\n", name, mf_manifest_size(raw),
                    mf_manifest_size(mf_split_train(split_raw)), mf_manifest_size(mf_split_validation(split_raw)));
        std::printf("  normal %zu, cancer %zu, skipped %zu\n", mf_manifest_class_count(raw, MF_LABEL_NORMAL),
                    mf_manifest_class_count(raw, MF_LABEL_CANCER), mf_manifest_skipped(raw));
    }
    return kOk;
}

// ---- train ------------------------------------------------------------------

struct TrainJob {
    mf_modality modality;
    int exit_code = kOk;
    std::string error;
    mf_report validation{};
    int epoch_selected = 0;
};

std::mutex g_print_mutex;

void on_epoch(const mf_epoch_log* log, void* user)
{
    const auto* job = static_cast<const TrainJob*>(user);
    std::lock_guard lock(g_print_mutex);
    std::printf("[%s] epoch %d: train acc %.4f loss %.4f | val acc %.4f loss %.4f\n", mf_modality_name(job->modality),
                log->epoch, log->train.accuracy, log->train.mean_loss, log->validation.accuracy,
                log->validation.mean_loss);
    std::fflush(stdout);
}

void run_train_job(const mf_config* config, TrainJob& job)
{
    try {
        const fs::path dir = split_dir(config, job.modality);
        if (!fs::exists(dir / "split.json"))
            throw Failure{kInput, "no split files at " + dir.string() + " (run ingest first)"};
        mf_split* raw = nullptr;
        check(mf_split_read(dir.c_str(), &raw));
        SplitPtr split(raw);
        mf_model* model_raw = nullptr;
        const mf_status s = mf_train(raw, config, job.modality, on_epoch, &job, &model_raw);
        if (s != MF_OK) throw Failure{s == MF_ERR_INTERNAL ? kTraining : exit_for(s), mf_last_error()};
        ModelPtr model(model_raw);
        check(mf_model_save(model_raw, model_dir(config, job.modality).c_str()), "saving model");
        check(mf_model_metadata(model_raw, &job.validation, nullptr, &job.epoch_selected));
    } catch (const Failure& f) {
        job.exit_code = f.exit_code;
        job.error = f.message;
    }
}

int cmd_train(const Common& common, const std::string& modality_arg)
{
    auto config = load_config(common);
    check(mf_config_validate_paths(config.get()));
    std::vector<TrainJob> jobs;
    for (mf_modality m : parse_modalities(modality_arg)) jobs.push_back({m});

    if (jobs.size() == 1) {
        run_train_job(config.get(), jobs[0]);
    } else {
        std::vector<std::thread> workers;
        for (auto& job : jobs) workers.emplace_back(run_train_job, config.get(), std::ref(job));
        for (auto& w : workers) w.join();
    }

    int code = kOk;
    print_table_header();
    for (const auto& job : jobs) {
        const char* name = mf_modality_name(job.modality);
        if (job.exit_code != kOk) {
            std::cerr << "error: " << name << ": " << job.error << "\n";
            code = std::max(code, job.exit_code);
            continue;
        }
        print_table_row(name, job.validation);
        write_report(config.get(), std::string("train_") + name, job.validation);
    }
    return code;
}

// ---- evaluate ---------------------------------------------------------------

ModelPtr load_model(const mf_config* config, mf_modality m)
{
    const fs::path dir = model_dir(config, m);
    mf_model* raw = nullptr;
    check(mf_model_load(dir.c_str(), &raw), mf_modality_name(m));
    return ModelPtr(raw);
}

ManifestPtr load_validation(const mf_config* config, mf_modality m)
{
    const fs::path path = split_dir(config, m) / "validation.tsv";
    if (!fs::exists(path)) throw Failure{kInput, "no validation manifest at " + path.string()};
    mf_manifest* raw = nullptr;
    check(mf_manifest_read(path.c_str(), &raw));
    return ManifestPtr(raw);
}

int cmd_evaluate(const Common& common, const std::string& modality_arg, const std::string& manifest_path)
{
    auto config = load_config(common);
    const auto modalities = parse_modalities(modality_arg);
    if (!manifest_path.empty() && modalities.size() != 1)
        throw Failure{kInput, "--manifest needs a single --modality"};

    print_table_header();
    for (mf_modality m : modalities) {
        auto model = load_model(config.get(), m);
        ManifestPtr manifest;
        if (manifest_path.empty()) {
            manifest = load_validation(config.get(), m);
        } else {
            mf_manifest* raw = nullptr;
            check(mf_manifest_read(manifest_path.c_str(), &raw));
            manifest.reset(raw);
        }
        mf_report report{};
        check(mf_model_evaluate(model.get(), manifest.get(), &report), mf_modality_name(m));
        print_table_row(mf_modality_name(m), report);
        write_report(config.get(), std::string("evaluate_") + mf_modality_name(m), report);
    }
    return kOk;
}

// ---- fuse / predict ---------------------------------------------------------

struct ModelSet {
    std::vector<ModelPtr> owned;
    const mf_model* slots[MF_MODALITY_COUNT] = {nullptr, nullptr, nullptr};
    int available = 0;
};

ModelSet load_models(const mf_config* config, bool allow_partial)
{
    ModelSet set;
    for (mf_modality m : kModalities) {
        const fs::path dir = model_dir(config, m);
        if (!fs::exists(dir) && allow_partial) continue;
        if (!fs::exists(dir))
            throw Failure{kMissing, std::string("missing ") + mf_modality_name(m) + " model artifact at " +
                                        dir.string() + " (use --allow-partial to fuse without it)"};
        set.owned.push_back(load_model(config, m));
        set.slots[m] = set.owned.back().get();
        ++set.available;
    }
    if (set.available == 0) throw Failure{kMissing, "no model artifacts under " + (out_root(config) / "models").string()};
    return set;
}

void print_weights(const mf_ensemble* ensemble)
{
    double w[MF_MODALITY_COUNT];
    int present[MF_MODALITY_COUNT];
    check(mf_ensemble_weights(ensemble, w, present));
    std::printf("weights:");
    for (mf_modality m : kModalities)
        if (present[m]) std::printf(" %s %.4f", mf_modality_name(m), w[m]);
    std::printf("\n");
}

struct FuseArgs {
    bool allow_partial = false;
    bool hard = false;
    std::string pairing;
    std::optional<std::uint64_t> pairing_seed;
};

int cmd_fuse(const Common& common, const FuseArgs& args)
{
    auto config = load_config(common);
    if (!args.pairing.empty()) check(mf_config_set(config.get(), "pairing.strategy", args.pairing.c_str()));
    if (args.pairing_seed)
        check(mf_config_set(config.get(), "pairing.seed", std::to_string(*args.pairing_seed).c_str()));
    if (args.hard) check(mf_config_set(config.get(), "fusion.mode", "hard"));

    auto models = load_models(config.get(), args.allow_partial);
    const bool degraded = models.available < MF_MODALITY_COUNT;
    if (degraded) std::printf("*** degraded ensemble: %d of 3 modalities available ***\n", models.available);

    mf_ensemble* raw = nullptr;
    check(mf_ensemble_create(models.slots, args.allow_partial ? 1 : 0, &raw));
    EnsemblePtr ensemble(raw);
    check(mf_ensemble_set_fusion(raw, mf_config_hard_fusion(config.get())));
    print_weights(raw);

    std::vector<ManifestPtr> owned;
    const mf_manifest* manifests[MF_MODALITY_COUNT] = {nullptr, nullptr, nullptr};
    for (mf_modality m : kModalities) {
        if (!models.slots[m]) continue;
        owned.push_back(load_validation(config.get(), m));
        manifests[m] = owned.back().get();
    }
    mf_report report{};
    check(mf_ensemble_evaluate(raw, manifests, mf_config_pairing_strategy(config.get()),
                               mf_config_pairing_seed(config.get()), &report));
    for (size_t i = 0; i < mf_ensemble_warning_count(raw); ++i)
        std::cerr << "warning: " << mf_ensemble_warning(raw, i) << "\n";

    const fs::path dir = out_root(config.get()) / "ensemble";
    check(mf_ensemble_save(raw, dir.c_str()), "saving ensemble");
    write_report(config.get(), "fuse", report);

    print_table_header();
    for (mf_modality m : kModalities)
        if (models.slots[m]) {
            mf_report single{};
            check(mf_model_evaluate(models.slots[m], manifests[m], &single));
            print_table_row(mf_modality_name(m), single);
        }
    print_table_row(degraded ? "ensemble (degraded)" : "ensemble", report);
    return kOk;
}

struct PredictArgs {
    std::string paths[MF_MODALITY_COUNT];
    bool allow_partial = false;
};

int cmd_predict(const Common& common, const PredictArgs& args)
{
    auto config = load_config(common);
    const char* paths[MF_MODALITY_COUNT] = {nullptr, nullptr, nullptr};
    for (mf_modality m : kModalities) {
        if (args.paths[m].empty()) {
            if (!args.allow_partial)
                throw Failure{kInput, std::string("missing --") + mf_modality_name(m) + " image (or pass --allow-partial)"};
            continue;
        }
        paths[m] = args.paths[m].c_str();
    }
    auto models = load_models(config.get(), args.allow_partial);
    for (mf_modality m : kModalities)
        if (paths[m] && !models.slots[m])
            throw Failure{kMissing, std::string("no ") + mf_modality_name(m) + " model artifact"};

    const fs::path ensemble_dir = out_root(config.get()) / "ensemble";
    mf_ensemble* raw = nullptr;
    if (fs::exists(ensemble_dir / "weights"))
        check(mf_ensemble_load(ensemble_dir.c_str(), models.slots, args.allow_partial ? 1 : 0, &raw));
    else
        check(mf_ensemble_create(models.slots, args.allow_partial ? 1 : 0, &raw));
    EnsemblePtr ensemble(raw);

    mf_fused fused{};
    check(mf_ensemble_predict_files(raw, paths, &fused));
    std::string buf(mf_fused_record(&fused, "predict", nullptr, 0) + 1, '\0');
    mf_fused_record(&fused, "predict", buf.data(), buf.size());
    buf.pop_back();
    if (fused.degraded) std::cerr << "degraded: prediction uses a partial modality set\n";
    std::printf("%s\n", buf.c_str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"modalfuse: multimodal image classification with weighted late fusion"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mf_version());

    Common common;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "Config file (default: $MODALFUSE_CONFIG)");
        cmd->add_option("--out", common.out_dir, "Output directory (overrides output.dir)");
        cmd->add_option("--seed", common.seed, "Global seed (overrides seed)");
        cmd->add_option("--set", common.overrides, "Extra config entry key=value (repeatable)");
    };

    IngestArgs ingest;
    auto* ingest_cmd = app.add_subcommand("ingest", "Scan a dataset, write manifests and the train/validation split");
    add_common(ingest_cmd);
    ingest_cmd->add_option("--root", ingest.root, "Dataset root holding <modality>/{cancer,normal}");
    ingest_cmd->add_option("--modality", ingest.modality, "clinical, radiological, histopathological or all");
    ingest_cmd->add_option("--split", ingest.ratio, "Training fraction in (0,1)");

    std::string train_modality = "all";
    auto* train_cmd = app.add_subcommand("train", "Train one modality (or all three concurrently)");
    add_common(train_cmd);
    train_cmd->add_option("--modality", train_modality, "clinical, radiological, histopathological or all");

    std::string eval_modality = "all";
    std::string eval_manifest;
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate trained models on a manifest");
    add_common(eval_cmd);
    eval_cmd->add_option("--modality", eval_modality, "clinical, radiological, histopathological or all");
    eval_cmd->add_option("--manifest", eval_manifest, "Manifest to evaluate (default: validation split)");

    FuseArgs fuse;
    auto* fuse_cmd = app.add_subcommand("fuse", "Derive ensemble weights and evaluate the fused classifier");
    add_common(fuse_cmd);
    fuse_cmd->add_flag("--allow-partial", fuse.allow_partial, "Fuse whichever modality models exist");
    fuse_cmd->add_flag("--hard", fuse.hard, "Fuse argmax votes instead of scores");
    fuse_cmd->add_option("--pairing", fuse.pairing, "by_group_id or synthetic_by_label");
    fuse_cmd->add_option("--pairing-seed", fuse.pairing_seed, "Seed for synthetic pairing");

    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "Fuse one image per modality into a single prediction");
    add_common(predict_cmd);
    predict_cmd->add_option("--clinical", predict.paths[MF_CLINICAL], "Clinical image");
    predict_cmd->add_option("--radiological", predict.paths[MF_RADIOLOGICAL], "Radiological image");
    predict_cmd->add_option("--histopathological", predict.paths[MF_HISTOPATHOLOGICAL], "Histopathological image");
    predict_cmd->add_flag("--allow-partial", predict.allow_partial, "Accept a missing modality");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInput;
    }

    try {
        if (*ingest_cmd) return cmd_ingest(common, ingest);
        if (*train_cmd) return cmd_train(common, train_modality);
        if (*eval_cmd) return cmd_evaluate(common, eval_modality, eval_manifest);
        if (*fuse_cmd) return cmd_fuse(common, fuse);
        if (*predict_cmd) return cmd_predict(common, predict);
    } catch (const Failure& f) {
        std::cerr << "error: " << f.message << "\n";
        return f.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInternal;
    }
    return kOk;
}
