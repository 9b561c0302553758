#include <doctest.h>

#include <algorithm>

#include <nlohmann/json.hpp>

#include "support.hpp"

using namespace modalfuse;
using testing::TempDir;

namespace {

std::vector<ImageRecord> solid_records(Modality m, int per_class, int offset)
{
    const auto res = target_resolution(m);
    std::vector<ImageRecord> out;
    for (int i = 0; i < per_class; ++i)
        for (auto label : {Label::normal, Label::cancer}) {
            const int base = label == Label::normal ? 40 : 200;
            const auto v = static_cast<std::uint8_t>(base + ((i + offset) * 7) % 21);
            ImageRecord r;
            r.ref.modality = m;
            r.ref.label = label;
            r.ref.id = std::string(to_string(label)) + "/" + std::to_string(i + offset);
            r.ref.path = r.ref.id;
            r.pixels = normalize_pixels(testing::solid_image(res.height, res.width, v, v, v));
            out.push_back(std::move(r));
        }
    return out;
}

TrainConfig quick_config(Modality m, int epochs = 3)
{
    auto c = TrainConfig::defaults_for(m);
    c.epochs = epochs;
    c.batch_size = 4;
    c.learning_rate = 0.01;
    c.seed = 42;
    return c;
}

struct Fixture {
    Modality m = Modality::histopathological;
    std::vector<ImageRecord> train = solid_records(m, 6, 0);
    std::vector<ImageRecord> val = solid_records(m, 2, 100);
};

std::vector<double> params_of(std::span<const double> s) { return {s.begin(), s.end()}; }

// Writes stub-scored PNGs; the red channel is the normal score and green the
// cancer score.
DatasetManifest scored_manifest(const fs::path& dir, Modality m,
                                const std::vector<std::tuple<Label, int, int>>& items)
{
    DatasetManifest manifest;
    manifest.modality = m;
    const auto res = target_resolution(m);
    int i = 0;
    for (const auto& [label, r, g] : items) {
        RecordRef ref;
        ref.modality = m;
        ref.label = label;
        ref.id = "s" + std::to_string(i++);
        ref.path = (dir / (ref.id + ".png")).string();
        write_png(testing::solid_image(res.height, res.width, static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), 0),
                  ref.path);
        manifest.records.push_back(ref);
    }
    return manifest;
}

}  // namespace

TEST_SUITE("training")
{
    TEST_CASE_FIXTURE(Fixture, "separable solid images reach perfect validation accuracy")
    {
        const auto cfg = quick_config(m);
        const auto larger = solid_records(m, 30, 0);
        const auto result = train_on_records(larger, val, cfg, make_network(cfg));
        CHECK(result.epochs.size() == 3);
        CHECK(result.model.val_accuracy() == 1.0);
        for (const auto& e : result.epochs) {
            for (double v : {e.train.accuracy, e.train.precision, e.train.recall, e.train.f1, e.validation.accuracy})
                CHECK((v >= 0.0 && v <= 1.0));
            CHECK(e.train.mean_loss >= 0.0);
            CHECK(e.validation.n == val.size());
        }
    }

    TEST_CASE_FIXTURE(Fixture, "one epoch gives one log entry")
    {
        const auto cfg = quick_config(m, 1);
        int callbacks = 0;
        const auto result = train_on_records(train, val, cfg, make_network(cfg), [&](const EpochLog& e) {
            ++callbacks;
            CHECK(e.epoch == 1);
        });
        CHECK(result.epochs.size() == 1);
        CHECK(callbacks == 1);
        CHECK(result.model.metadata.epoch_selected == 1);
    }

    TEST_CASE_FIXTURE(Fixture, "identical inputs and seed reproduce logs and parameters")
    {
        auto cfg = quick_config(Modality::histopathological, 2);
        const auto a = train_on_records(train, val, cfg, make_network(cfg));
        const auto b = train_on_records(train, val, cfg, make_network(cfg));
        REQUIRE(a.epochs.size() == b.epochs.size());
        for (std::size_t i = 0; i < a.epochs.size(); ++i) CHECK(to_record(a.epochs[i]) == to_record(b.epochs[i]));
        CHECK(params_of(a.model.network.head().parameters()) == params_of(b.model.network.head().parameters()));
        CHECK(a.model.val_accuracy() == b.model.val_accuracy());

        cfg.seed = 43;
        const auto c = train_on_records(train, val, cfg, make_network(cfg));
        CHECK(params_of(a.model.network.head().parameters()) != params_of(c.model.network.head().parameters()));
    }

    TEST_CASE_FIXTURE(Fixture, "selected checkpoint has the best validation accuracy, earliest on ties")
    {
        auto cfg = quick_config(m, 4);
        cfg.learning_rate = 1e-3;
        const auto r = train_on_records(train, val, cfg, make_network(cfg));
        double best = -1;
        int first = 0;
        for (const auto& e : r.epochs)
            if (e.validation.accuracy > best) {
                best = e.validation.accuracy;
                first = e.epoch;
            }
        CHECK(r.model.val_accuracy() == best);
        CHECK(r.model.metadata.epoch_selected == first);
        // The returned model scores validation exactly as its selected epoch did.
        CHECK(evaluate_records(r.model.network, val).accuracy == best);
    }

    TEST_CASE_FIXTURE(Fixture, "frozen backbone is untouched; unfrozen backbone moves")
    {
        auto cfg = quick_config(m, 1);
        auto net = make_network(cfg);
        const auto before = params_of(net.backbone().parameters());
        const auto frozen = train_on_records(train, val, cfg, net);
        CHECK(params_of(frozen.model.network.backbone().parameters()) == before);
        CHECK(params_of(frozen.model.network.head().parameters()) != params_of(net.head().parameters()));

        cfg.freeze_backbone = false;
        const auto thawed = train_on_records(train, val, cfg, make_network(cfg));
        CHECK(params_of(thawed.model.network.backbone().parameters()) != before);
    }

    TEST_CASE_FIXTURE(Fixture, "divergence names the epoch and batch")
    {
        auto cfg = quick_config(m, 2);
        cfg.learning_rate = 1e300;
        try {
            train_on_records(train, val, cfg, make_network(cfg));
            FAIL("expected divergence");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::diverged);
            const std::string what = e.what();
            CHECK(what.find("epoch") != std::string::npos);
            CHECK(what.find("batch") != std::string::npos);
        }
    }

    TEST_CASE_FIXTURE(Fixture, "precondition errors")
    {
        const auto cfg = quick_config(m);
        CHECK_THROWS_AS(train_on_records({}, val, cfg, make_network(cfg)), Error);
        CHECK_THROWS_AS(train_on_records(train, {}, cfg, make_network(cfg)), Error);
        auto wrong = solid_records(Modality::radiological, 2, 0);
        CHECK_THROWS_AS(train_on_records(wrong, val, cfg, make_network(cfg)), Error);
        auto bad = cfg;
        bad.batch_size = 0;
        CHECK_THROWS_AS(validate(bad), Error);
    }

    TEST_CASE("config json round-trip and digest sensitivity")
    {
        auto c = quick_config(Modality::clinical);
        c.augmentation.rotation_deg = 5.5;
        const auto back = config_from_json(canonical_json(c));
        CHECK(canonical_json(back) == canonical_json(c));
        CHECK(config_digest(Modality::clinical, c) == config_digest(Modality::clinical, back));
        CHECK(config_digest(Modality::radiological, c) != config_digest(Modality::clinical, c));
        auto d = c;
        d.learning_rate = 0.02;
        CHECK(config_digest(Modality::clinical, d) != config_digest(Modality::clinical, c));
    }
}

TEST_SUITE("persistence")
{
    TEST_CASE_FIXTURE(Fixture, "save/load round-trip is bit-exact")
    {
        TempDir tmp;
        const auto cfg = quick_config(m, 2);
        const auto r = train_on_records(train, val, cfg, make_network(cfg));
        const auto written = save_model(r.model, tmp / "model", &r.epochs);
        CHECK(written.size() == 3);
        const auto loaded = load_model(tmp / "model");
        for (const auto& rec : val) CHECK(loaded.network.score(rec.pixels) == r.model.network.score(rec.pixels));
        CHECK(loaded.val_accuracy() == r.model.val_accuracy());
        CHECK(loaded.metadata.epoch_selected == r.model.metadata.epoch_selected);
        CHECK(loaded.metadata.config_digest == r.model.metadata.config_digest);
        CHECK(canonical_json(loaded.metadata.config) == canonical_json(cfg));

        const auto md = nlohmann::json::parse(testing::read_bytes(tmp / "model/metadata"));
        CHECK(md["val_accuracy"].get<double>() == doctest::Approx(r.model.val_accuracy()).epsilon(1e-6));
        for (const char* key : {"val_precision", "val_recall", "val_f1", "val_loss", "epoch_selected", "config_digest",
                                "modality", "train"})
            CHECK(md.contains(key));

        const auto log = testing::read_bytes(tmp / "model/epochs.log");
        CHECK(std::count(log.begin(), log.end(), '\n') == 2);

        // Saving the same model again reproduces the files byte for byte.
        save_model(r.model, tmp / "again", &r.epochs);
        for (const char* f : {"model.weights", "metadata", "epochs.log"})
            CHECK(testing::read_bytes(tmp / "model" / f) == testing::read_bytes(tmp / "again" / f));
    }

    TEST_CASE_FIXTURE(Fixture, "stored accuracy matches re-evaluation on the saved validation manifest")
    {
        TempDir tmp;
        testing::make_separable_dataset(tmp / "data", m, 8);
        const auto split = split_dataset(scan_dataset(tmp / "data/histopathological", m).manifest, 0.75, 4);
        const auto r = train_modality(split, quick_config(m, 2));
        save_model(r.model, tmp / "model", &r.epochs);
        write_split(split, tmp / "split");
        const auto loaded = load_model(tmp / "model");
        const auto report = evaluate_model(loaded, read_split(tmp / "split").validation);
        CHECK(std::abs(report.accuracy - loaded.val_accuracy()) <= 1e-9);
        CHECK(std::abs(report.mean_loss - loaded.metadata.validation.mean_loss) <= 1e-9);
    }

    TEST_CASE_FIXTURE(Fixture, "failed save leaves an existing artifact unchanged")
    {
        TempDir tmp;
        const auto cfg = quick_config(m, 1);
        const auto r = train_on_records(train, val, cfg, make_network(cfg));
        save_model(r.model, tmp / "model");
        const auto weights = testing::read_bytes(tmp / "model/model.weights");
        const auto metadata = testing::read_bytes(tmp / "model/metadata");

        auto other = r.model;
        other.network.head().parameters()[0] += 1.0;
        fs::create_directories(tmp / "model/epochs.log/blocker");
        CHECK_THROWS_AS(save_model(other, tmp / "model", &r.epochs), Error);
        CHECK(testing::read_bytes(tmp / "model/model.weights") == weights);
        CHECK(testing::read_bytes(tmp / "model/metadata") == metadata);
        std::size_t entries = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(tmp / "model")) ++entries;
        CHECK(entries == 3);

        testing::write_bytes(tmp / "plainfile", "x");
        CHECK_THROWS_AS(save_model(r.model, tmp / "plainfile/model"), Error);
    }

    TEST_CASE_FIXTURE(Fixture, "tampered artifacts are rejected")
    {
        TempDir tmp;
        const auto cfg = quick_config(m, 1);
        const auto r = train_on_records(train, val, cfg, make_network(cfg));
        save_model(r.model, tmp / "model");
        const auto weights = testing::read_bytes(tmp / "model/model.weights");
        const auto metadata = testing::read_bytes(tmp / "model/metadata");

        SUBCASE("truncated weights")
        {
            testing::write_bytes(tmp / "model/model.weights", weights.substr(0, weights.size() / 2));
            CHECK_THROWS_WITH_AS(load_model(tmp / "model"), doctest::Contains("corrupt artifact"), Error);
        }
        SUBCASE("modality edited in metadata")
        {
            auto j = nlohmann::ordered_json::parse(metadata);
            j["modality"] = "clinical";
            testing::write_bytes(tmp / "model/metadata", j.dump(2));
            try {
                load_model(tmp / "model");
                FAIL("expected config drift");
            } catch (const Error& e) {
                CHECK(e.code() == ErrorCode::config_drift);
                CHECK(std::string(e.what()).find("config drift") != std::string::npos);
            }
        }
        SUBCASE("config edited in metadata")
        {
            auto j = nlohmann::ordered_json::parse(metadata);
            j["config"]["learning_rate"] = 0.5;
            testing::write_bytes(tmp / "model/metadata", j.dump(2));
            CHECK_THROWS_WITH_AS(load_model(tmp / "model"), doctest::Contains("config drift"), Error);
        }
        SUBCASE("weights swapped for another model")
        {
            auto cfg2 = cfg;
            cfg2.seed = 99;
            save_model(train_on_records(train, val, cfg2, make_network(cfg2)).model, tmp / "other");
            fs::copy_file(tmp / "other/model.weights", tmp / "model/model.weights", fs::copy_options::overwrite_existing);
            CHECK_THROWS_WITH_AS(load_model(tmp / "model"), doctest::Contains("corrupt artifact"), Error);
        }
        SUBCASE("missing file is named")
        {
            fs::remove(tmp / "model/metadata");
            try {
                load_model(tmp / "model");
                FAIL("expected missing artifact");
            } catch (const Error& e) {
                CHECK(e.code() == ErrorCode::missing_artifact);
                CHECK(std::string(e.what()).find("metadata") != std::string::npos);
            }
        }
    }

    TEST_CASE("backbone weights file loads into a fresh extractor")
    {
        TempDir tmp;
        ConvStackExtractor a(1), b(2);
        save_backbone_weights(a, tmp / "bb.weights");
        load_backbone_weights(b, tmp / "bb.weights");
        CHECK(params_of(a.parameters()) == params_of(b.parameters()));
        CHECK(b.pretrained);

        auto cfg = quick_config(Modality::clinical);
        cfg.backbone_weights = (tmp / "bb.weights").string();
        const auto net = make_network(cfg);
        CHECK(params_of(net.backbone().parameters()) == params_of(a.parameters()));
    }
}

TEST_SUITE("evaluate_model")
{
    TEST_CASE("constant normal output on an all-normal manifest")
    {
        TempDir tmp;
        const auto m = Modality::radiological;
        const auto manifest = scored_manifest(tmp.path(), m, {{Label::normal, 230, 25}, {Label::normal, 230, 25},
                                                              {Label::normal, 230, 25}});
        const auto report = evaluate_model(testing::stub_model(m), manifest);
        CHECK(report.accuracy == 1.0);
        CHECK(report.n == 3);
    }

    TEST_CASE("stub outputs on five records match a hand-built confusion matrix")
    {
        TempDir tmp;
        const auto m = Modality::clinical;
        // label, normal score*255, cancer score*255 -> predicted
        const auto manifest = scored_manifest(tmp.path(), m,
                                              {
                                                  {Label::cancer, 50, 200},   // tp
                                                  {Label::cancer, 200, 50},   // fn
                                                  {Label::normal, 60, 180},   // fp
                                                  {Label::normal, 220, 30},   // tn
                                                  {Label::cancer, 128, 128},  // tie -> normal: fn
                                              });
        const auto report = evaluate_model(testing::stub_model(m), manifest);
        CHECK(report.confusion == ConfusionMatrix{1, 1, 2, 1});
        const auto expected = compute_metrics({1, 1, 2, 1});
        CHECK(report.accuracy == expected.accuracy);
        CHECK(report.precision == expected.precision);
        CHECK(report.recall == expected.recall);
        CHECK(report.f1 == expected.f1);

        double loss = 0;
        const auto stub = testing::stub_model(m);
        for (const auto& ref : manifest.records)
            loss += sample_cross_entropy(stub.network.score(load_preprocessed(ref.path, m)), one_hot(ref.label));
        CHECK(report.mean_loss == doctest::Approx(loss / 5).epsilon(1e-9));
    }

    TEST_CASE("empty manifest and modality mismatch")
    {
        DatasetManifest empty;
        empty.modality = Modality::clinical;
        CHECK_THROWS_WITH_AS(evaluate_model(testing::stub_model(Modality::clinical), empty),
                             doctest::Contains("empty evaluation set"), Error);
        DatasetManifest other;
        other.modality = Modality::radiological;
        other.records.push_back(RecordRef{"a", Modality::radiological, Label::normal, "a.png", {}});
        CHECK_THROWS_WITH_AS(evaluate_model(testing::stub_model(Modality::clinical), other),
                             doctest::Contains("modality mismatch"), Error);
    }
}
