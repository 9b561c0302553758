#include <doctest.h>

#include <cmath>

#include "model.hpp"
#include "rng.hpp"
#include "support.hpp"

using namespace modalfuse;

namespace {

Image random_image(int h, int w, Rng& rng)
{
    Image img(h, w, 3);
    for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
    return img;
}

std::vector<int> dense_widths(const HeadSpec& spec)
{
    std::vector<int> out;
    for (const auto& l : spec.layers)
        if (l.kind == LayerSpec::Kind::dense) out.push_back(l.width);
    return out;
}

int dropout_count(const HeadSpec& spec)
{
    int n = 0;
    for (const auto& l : spec.layers) n += l.kind == LayerSpec::Kind::dropout;
    return n;
}

double batch_loss(const ClassifierHead& head, const std::vector<std::vector<double>>& features,
                  const std::vector<OneHot>& targets, bool normalize)
{
    std::vector<ScoreVector> scores;
    for (const auto& f : features) scores.push_back(head.forward(f));
    return categorical_cross_entropy(scores, targets, normalize);
}

bool close(double analytic, double numeric, double rel)
{
    return std::abs(analytic - numeric) <= rel * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9;
}

// Central-difference check of every head parameter on a 3-sample batch.
void check_head_gradients(Modality m, Activation out, bool normalize, std::uint64_t seed)
{
    Rng rng(seed);
    ConvStackExtractor backbone(seed);
    ClassifierHead head(build_head(m, 0.5, out), backbone.output_dim(), seed + 1);
    std::vector<std::vector<double>> features;
    std::vector<OneHot> targets;
    for (int i = 0; i < 3; ++i) {
        features.push_back(backbone.extract(random_image(24, 24, rng)));
        // Spread the features so hidden units are well away from ReLU kinks.
        for (auto& f : features.back()) f = f * 20.0 + rng.uniform(-1.0, 1.0);
        targets.push_back(one_hot(rng.bernoulli(0.5) ? Label::cancer : Label::normal));
    }

    std::vector<double> grad(head.parameters().size(), 0.0);
    for (int i = 0; i < 3; ++i) accumulate_head_gradients(head, features[i], targets[i], nullptr, normalize, grad);
    for (auto& g : grad) g /= 3.0;

    auto params = head.parameters();
    int bad = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double saved = params[k];
        const double h = 1e-6 * std::max(1.0, std::abs(saved));
        params[k] = saved + h;
        const double up = batch_loss(head, features, targets, normalize);
        params[k] = saved - h;
        const double down = batch_loss(head, features, targets, normalize);
        params[k] = saved;
        const double numeric = (up - down) / (2 * h);
        if (!close(grad[k], numeric, 1e-4)) {
            if (++bad <= 5) MESSAGE("param " << k << ": analytic " << grad[k] << " numeric " << numeric);
        }
    }
    CHECK(bad == 0);
}

}  // namespace

TEST_SUITE("heads")
{
    TEST_CASE("stacks per modality")
    {
        const auto c = build_head(Modality::clinical, 0.5);
        CHECK(dense_widths(c) == std::vector<int>{128, 32, 2});
        CHECK(dropout_count(c) == 1);
        CHECK(c.layers[1].kind == LayerSpec::Kind::dropout);
        CHECK(c.layers[1].rate == 0.5);

        const auto r = build_head(Modality::radiological, 0.3);
        CHECK(dense_widths(r) == std::vector<int>{128, 64, 2});
        CHECK(dropout_count(r) == 1);
        CHECK(r.layers[1].kind == LayerSpec::Kind::dropout);

        const auto h = build_head(Modality::histopathological, 0.5);
        CHECK(dense_widths(h) == std::vector<int>{128, 2});
        CHECK(dropout_count(h) == 0);

        for (const auto& spec : {c, r, h}) {
            CHECK(spec.layers.back().activation == Activation::sigmoid);
            CHECK(spec.layers.front().activation == Activation::relu);
        }
    }

    TEST_CASE("parameter counts")
    {
        CHECK(parameter_count(build_head(Modality::clinical, 0.5), 1024) == 135394);
        CHECK(parameter_count(build_head(Modality::radiological, 0.5), 1024) ==
              1024 * 128 + 128 + 128 * 64 + 64 + 64 * 2 + 2);
        CHECK(parameter_count(build_head(Modality::histopathological, 0.5), 1024) == 1024 * 128 + 128 + 128 * 2 + 2);
        CHECK(parameter_count(build_head(Modality::clinical, 0.5), 64) == 64 * 128 + 128 + 128 * 32 + 32 + 32 * 2 + 2);
    }

    TEST_CASE("invalid specs")
    {
        CHECK_THROWS_AS(validate(HeadSpec{}), Error);
        CHECK_THROWS_AS(validate(HeadSpec{{LayerSpec::dense(3, Activation::sigmoid)}}), Error);
        CHECK_THROWS_AS(validate(HeadSpec{{LayerSpec::dense(0, Activation::relu), LayerSpec::dense(2, Activation::sigmoid)}}),
                        Error);
        CHECK_THROWS_AS(validate(HeadSpec{{LayerSpec::dropout(1.0), LayerSpec::dense(2, Activation::sigmoid)}}), Error);
        CHECK_THROWS_AS(validate(HeadSpec{{LayerSpec::dense(2, Activation::sigmoid), LayerSpec::dropout(0.2)}}), Error);
    }
}

TEST_SUITE("loss")
{
    TEST_CASE("perfect prediction is clipped to about 1e-7")
    {
        const ScoreVector s{{0.0, 1.0}};
        CHECK(sample_cross_entropy(s, {0.0, 1.0}, false) == doctest::Approx(-std::log(1 - 1e-7)).epsilon(1e-12));
        CHECK(sample_cross_entropy(s, {0.0, 1.0}) == doctest::Approx(1e-7).epsilon(1e-3));
    }

    TEST_CASE("uniform scores cost log 2")
    {
        const ScoreVector s{{0.5, 0.5}};
        CHECK(sample_cross_entropy(s, {0.0, 1.0}) == doctest::Approx(0.693147).epsilon(1e-6));
        CHECK(sample_cross_entropy(s, {0.0, 1.0}, false) == doctest::Approx(0.693147).epsilon(1e-6));
    }

    TEST_CASE("batch loss is the mean")
    {
        const std::vector<ScoreVector> s{ScoreVector{{0.2, 0.7}}, ScoreVector{{0.9, 0.4}}};
        const std::vector<OneHot> y{{0.0, 1.0}, {1.0, 0.0}};
        const double a = sample_cross_entropy(s[0], y[0]);
        const double b = sample_cross_entropy(s[1], y[1]);
        CHECK(categorical_cross_entropy(s, y) == doctest::Approx((a + b) / 2));
        CHECK(categorical_cross_entropy(s, y) >= 0.0);
    }

    TEST_CASE("length mismatch")
    {
        const std::vector<ScoreVector> s{ScoreVector{{0.5, 0.5}}};
        const std::vector<OneHot> y{};
        CHECK_THROWS_AS(categorical_cross_entropy(s, y), Error);
    }

    TEST_CASE("argmax ties resolve to normal")
    {
        CHECK(predicted_label(ScoreVector{{0.5, 0.5}}) == Label::normal);
        CHECK(predicted_label(ScoreVector{{0.4, 0.6}}) == Label::cancer);
    }

    TEST_CASE("score gradient matches finite differences")
    {
        Rng rng(5);
        for (int trial = 0; trial < 200; ++trial) {
            const ScoreVector s{{rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)}};
            const OneHot y = one_hot(rng.bernoulli(0.5) ? Label::cancer : Label::normal);
            for (bool normalize : {true, false}) {
                const auto g = sample_cross_entropy_grad(s, y, normalize);
                for (int c = 0; c < 2; ++c) {
                    ScoreVector up = s, down = s;
                    up.per_class[c] += 1e-7;
                    down.per_class[c] -= 1e-7;
                    const double numeric =
                        (sample_cross_entropy(up, y, normalize) - sample_cross_entropy(down, y, normalize)) / 2e-7;
                    CHECK(close(g[c], numeric, 1e-5));
                }
            }
        }
    }
}

TEST_SUITE("gradients")
{
    TEST_CASE("head gradients match central differences")
    {
        for (auto m : kAllModalities) {
            CAPTURE(to_string(m));
            check_head_gradients(m, Activation::sigmoid, true, 100 + index_of(m));
            check_head_gradients(m, Activation::sigmoid, false, 200 + index_of(m));
            check_head_gradients(m, Activation::softmax, true, 300 + index_of(m));
        }
    }

    TEST_CASE("backbone gradients match central differences on sampled parameters")
    {
        Rng rng(17);
        ConvStackExtractor backbone(17);
        ClassifierHead head(build_head(Modality::histopathological, 0.5), backbone.output_dim(), 18);
        std::vector<Image> images;
        std::vector<OneHot> targets;
        for (int i = 0; i < 3; ++i) {
            images.push_back(random_image(16, 16, rng));
            targets.push_back(one_hot(i % 2 ? Label::cancer : Label::normal));
        }
        auto loss = [&] {
            std::vector<ScoreVector> s;
            for (const auto& img : images) s.push_back(head.forward(backbone.extract(img)));
            return categorical_cross_entropy(s, targets);
        };

        std::vector<double> grad(backbone.parameters().size(), 0.0);
        std::vector<double> head_grad(head.parameters().size(), 0.0);
        for (int i = 0; i < 3; ++i) {
            ExtractorTrace et;
            HeadTrace ht;
            const auto f = backbone.extract(images[i], &et);
            const auto s = head.forward(f, &ht);
            std::vector<double> gf(f.size());
            head.backward(ht, sample_cross_entropy_grad(s, targets[i]), head_grad, gf);
            backbone.backward(et, gf, grad);
        }
        for (auto& g : grad) g /= 3.0;

        auto params = backbone.parameters();
        int bad = 0, checked = 0;
        for (int trial = 0; trial < 300; ++trial) {
            const auto k = static_cast<std::size_t>(rng.below(params.size()));
            const double saved = params[k];
            params[k] = saved + 1e-6;
            const double up = loss();
            params[k] = saved - 1e-6;
            const double down = loss();
            params[k] = saved;
            const double numeric = (up - down) / 2e-6;
            ++checked;
            if (!close(grad[k], numeric, 1e-4)) ++bad;
        }
        CHECK(checked == 300);
        // ReLU kinks can land inside the finite-difference step for a handful
        // of samples.
        CHECK(bad <= 3);
    }
}

TEST_SUITE("network")
{
    TEST_CASE("batch forward, determinism and resolution checks")
    {
        auto cfg = TrainConfig::defaults_for(Modality::radiological);
        cfg.seed = 3;
        const auto net = make_network(cfg);
        CHECK(net.backbone().output_dim() == 64);
        CHECK(net.backbone().frozen);

        Rng rng(1);
        std::vector<Image> batch;
        for (int i = 0; i < 32; ++i) batch.push_back(random_image(150, 150, rng));
        const auto scores = net.forward(batch);
        REQUIRE(scores.size() == 32);
        for (const auto& s : scores)
            for (int c = 0; c < 2; ++c) CHECK((s[c] >= 0.0 && s[c] <= 1.0));
        CHECK(net.forward(std::vector<Image>{}).empty());
        CHECK(net.score(batch[3]) == net.score(batch[3]));
        CHECK(net.score(batch[3]) == scores[3]);

        CHECK_THROWS_WITH_AS(net.score(random_image(200, 200, rng)), doctest::Contains("expected 150x150, got 200x200"),
                             Error);
    }

    TEST_CASE("dropout only in training mode")
    {
        ClassifierHead head(build_head(Modality::clinical, 0.5), 64, 2);
        std::vector<double> f(64, 0.3);
        Rng a(1), b(2);
        const auto s1 = head.forward(f, nullptr, &a);
        const auto s2 = head.forward(f, nullptr, &b);
        CHECK(s1 != s2);
        CHECK(head.forward(f) == head.forward(f));
    }

    TEST_CASE("seeded initialization")
    {
        ConvStackExtractor a(9), b(9), c(10);
        CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
        CHECK(!std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
        CHECK_THROWS_AS(make_extractor("densenet121", 1), Error);
    }

    TEST_CASE("tensor blob round-trip and corruption")
    {
        TensorMap t{{"a", {1.0, -2.5, 1e-300}}, {"b", {}}};
        const auto blob = encode_tensors(t);
        CHECK(decode_tensors(blob, "x") == t);
        CHECK_THROWS_WITH_AS(decode_tensors(blob.substr(0, blob.size() - 3), "x"), doctest::Contains("corrupt artifact"),
                             Error);
        auto flipped = blob;
        flipped[20] ^= 1;
        CHECK_THROWS_WITH_AS(decode_tensors(flipped, "x"), doctest::Contains("corrupt artifact"), Error);
    }
}
