#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "actionvlad/classifier.hpp"
#include "actionvlad/synth.hpp"
#include "actionvlad/training.hpp"
#include "oracles.hpp"

using namespace actionvlad;

namespace {

ClassifierModel<double> random_model(std::size_t C, std::size_t dim, std::mt19937_64& rng)
{
    auto m = ClassifierModel<double>::zeros(C, dim, 0.5);
    m.weights = oracle::random_vector(C * dim, rng);
    m.bias = oracle::random_vector(C, rng);
    return m;
}

} // namespace

TEST(ClassifierForward, Cases)
{
    auto zero = ClassifierModel<double>::zeros(3, 4, 0.5);
    const std::vector<double> v{1, 2, 3, 4};
    EXPECT_EQ(classifier_forward<double>(v, zero), (std::vector<double>(3, 0.0)));

    std::mt19937_64 rng(1);
    auto m = random_model(3, 4, rng);
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> e(4, 0.0);
        e[j] = 1;
        auto logits = classifier_forward<double>(e, m);
        for (std::size_t c = 0; c < 3; ++c)
            EXPECT_EQ(logits[c], m.weights[c * 4 + j] + m.bias[c]);
    }
    auto x = oracle::random_vector(4, rng);
    auto logits = classifier_forward<double>(x, m);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = m.bias[c];
        for (std::size_t j = 0; j < 4; ++j)
            s += m.weights[c * 4 + j] * x[j];
        EXPECT_NEAR(logits[c], s, 1e-14);
    }
    EXPECT_THROW(classifier_forward<double>(std::vector<double>(5), m), Error);
}

TEST(CrossEntropy, Cases)
{
    const std::vector<double> uniform(7, 0.3);
    EXPECT_NEAR(softmax_cross_entropy<double>(uniform, 2).loss, std::log(7.0), 1e-14);
    const std::vector<double> peaked{0, 100, 0};
    EXPECT_LT(softmax_cross_entropy<double>(peaked, 1).loss, 1e-9);
    try {
        softmax_cross_entropy<double>(peaked, 3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::label_error);
    }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences)
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        auto z = oracle::random_vector(6, rng, 3.0);
        const std::size_t label = trial % 6;
        auto lg = softmax_cross_entropy<double>(z, label);
        auto numeric = oracle::numeric_gradient_5pt(z, [&] { return softmax_cross_entropy<double>(z, label).loss; });
        EXPECT_LE(oracle::max_relative_error(lg.grad_logits, numeric, 1e-6), 1e-6);
    }
}

TEST(Dropout, IdentityCases)
{
    std::mt19937_64 rng(3);
    auto v = oracle::random_vector(50, rng);
    EXPECT_EQ(apply_dropout<double>(v, 0.5, rng, false), v);
    EXPECT_EQ(apply_dropout<double>(v, 0.0, rng, true), v);
    EXPECT_THROW(apply_dropout<double>(v, 1.0, rng, true), Error);
}

TEST(Dropout, SurvivorFractionAndMean)
{
    std::mt19937_64 rng(4);
    const std::size_t n = 1000000;
    std::vector<double> v(n, 1.0);
    auto out = apply_dropout<double>(v, 0.5, rng, true);
    std::size_t survivors = 0;
    double sum = 0;
    for (double x : out) {
        survivors += x != 0.0;
        EXPECT_TRUE(x == 0.0 || x == 2.0);
        sum += x;
    }
    EXPECT_NEAR(double(survivors) / n, 0.5, 0.002);
    EXPECT_NEAR(sum / n, 1.0, 0.004);
}

TEST(Clip, Cases)
{
    TensorList<double> small{{3.0, 0.0}};
    EXPECT_EQ(clip_gradients(small, 5.0), 3.0);
    EXPECT_EQ(small, (TensorList<double>{{3.0, 0.0}}));
    TensorList<double> big{{6.0}, {8.0}};
    EXPECT_EQ(clip_gradients(big, 5.0), 10.0);
    EXPECT_EQ(big, (TensorList<double>{{3.0}, {4.0}}));
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        TensorList<double> g{oracle::random_vector(10, rng, trial * 0.2), oracle::random_vector(3, rng)};
        const double before = global_norm(g);
        clip_gradients(g, 5.0);
        EXPECT_NEAR(global_norm(g), std::min(before, 5.0), 1e-12);
    }
    EXPECT_THROW(clip_gradients(big, 0.0), Error);
}

TEST(Accumulate, Cases)
{
    TensorList<double> g{{1, 2}, {3}};
    const TensorList<double> one[] = {g};
    EXPECT_EQ(accumulate_gradients<double>(one), g);
    const TensorList<double> two[] = {g, g};
    EXPECT_EQ(accumulate_gradients<double>(two), g);
    EXPECT_THROW(accumulate_gradients<double>(std::span<const TensorList<double>>()), Error);
    std::mt19937_64 rng(6);
    std::vector<TensorList<double>> many;
    for (int m = 0; m < 5; ++m)
        many.push_back({oracle::random_vector(4, rng), oracle::random_vector(2, rng)});
    auto mean = accumulate_gradients<double>(many);
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t e = 0; e < mean[t].size(); ++e) {
            double s = 0;
            for (const auto& g2 : many)
                s += g2[t][e];
            EXPECT_NEAR(mean[t][e], s / 5, 1e-15);
        }
}

TEST(Accumulate, ClipAfterAveraging)
{
    // two micro-batches pointing in opposite directions: averaging first
    // cancels them, clipping first would not change the (zero) mean either,
    // but with unequal magnitudes the two orders differ.
    const TensorList<double> micro[] = {{{10.0}}, {{-2.0}}};
    auto mean = accumulate_gradients<double>(micro);
    clip_gradients(mean, 5.0);
    EXPECT_EQ(mean[0][0], 4.0);  // clip-then-average would give (5 - 2) / 2 = 1.5
}

TEST(Adam, ZeroGradientFirstStepLeavesParams)
{
    std::vector<double> p{1.5, -2.0};
    AdamState<double> st;
    const std::span<double> params[] = {p};
    adam_step<double>(params, {{0.0, 0.0}}, st, {});
    EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, SingleStepHandValue)
{
    std::vector<double> p{0.0};
    AdamState<double> st;
    const std::span<double> params[] = {p};
    adam_step<double>(params, {{1.0}}, st, {0.01, 1e-4});
    EXPECT_NEAR(p[0], -0.01 / (1 + 1e-4), 1e-15);
    EXPECT_NEAR(p[0], -0.009999, 1e-6);
}

TEST(Adam, ConstantGradientStepBound)
{
    // with a constant gradient g, m_hat = g and v_hat = g^2 every step, so the
    // update is exactly lr * |g| / (|g| + eps)
    std::vector<double> p{0.0};
    AdamState<double> st;
    const std::span<double> params[] = {p};
    const double g = 0.3, lr = 0.01, eps = 1e-4;
    double prev = 0;
    for (int t = 0; t < 200; ++t) {
        adam_step<double>(params, {{g}}, st, {lr, eps});
        EXPECT_NEAR(prev - p[0], lr * g / (g + eps), 1e-12);
        prev = p[0];
    }
}

TEST(Adam, MatchesReferenceUpdateOnRandomTensors)
{
    std::mt19937_64 rng(7);
    std::vector<double> w = oracle::random_vector(6, rng), b = oracle::random_vector(2, rng);
    std::vector<double> m(8, 0.0), v(8, 0.0), ref(w);
    ref.insert(ref.end(), b.begin(), b.end());
    AdamState<double> st;
    for (int t = 1; t <= 10; ++t) {
        auto gw = oracle::random_vector(6, rng), gb = oracle::random_vector(2, rng);
        const std::span<double> params[] = {w, b};
        adam_step<double>(params, {gw, gb}, st, {0.05, 1e-4});
        std::vector<double> g(gw);
        g.insert(g.end(), gb.begin(), gb.end());
        for (std::size_t e = 0; e < 8; ++e) {
            m[e] = 0.9 * m[e] + 0.1 * g[e];
            v[e] = 0.999 * v[e] + 0.001 * g[e] * g[e];
            const double mh = m[e] / (1 - std::pow(0.9, t)), vh = v[e] / (1 - std::pow(0.999, t));
            ref[e] -= 0.05 * mh / (std::sqrt(vh) + 1e-4);
        }
        for (std::size_t e = 0; e < 6; ++e)
            EXPECT_NEAR(w[e], ref[e], 1e-14);
        for (std::size_t e = 0; e < 2; ++e)
            EXPECT_NEAR(b[e], ref[6 + e], 1e-14);
    }
}

namespace {

/// Four well separated clusters of VLAD-like unit vectors.
void separable(std::size_t per_class, std::mt19937_64& rng, std::vector<std::vector<double>>& x,
               std::vector<std::size_t>& y)
{
    std::normal_distribution<double> noise(0, 0.05);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<double> v(8, 0.0);
            v[c * 2] = 1;
            for (auto& e : v)
                e += noise(rng);
            x.push_back(v);
            y.push_back(c);
        }
}

} // namespace

TEST(TrainLinear, SeparableReachesFullAccuracy)
{
    std::mt19937_64 rng(8);
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    separable(10, rng, x, y);
    TrainConfig cfg;
    auto r = train_linear(x, y, x, y, 4, cfg, cfg.stage1_lr, 50);
    EXPECT_EQ(r.curve.back().val_accuracy, 1.0);
    EXPECT_EQ(r.curve.size(), 50u);
}

TEST(TrainLinear, ZeroLearningRateKeepsParameters)
{
    std::mt19937_64 rng(9);
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    separable(5, rng, x, y);
    TrainConfig cfg;
    auto r = train_linear(x, y, x, y, 4, cfg, 0.0, 3);
    EXPECT_EQ(r.model, ClassifierModel<double>::zeros(4, 8, 0.5));
}

TEST(TrainLinear, FullBatchLossNeverIncreases)
{
    std::mt19937_64 rng(10);
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    separable(3, rng, x, y);
    TrainConfig cfg;
    cfg.dropout = 0;
    cfg.batch_size = x.size();
    cfg.accumulation_steps = 1;
    cfg.clip_norm = 1e9;
    auto r = train_linear(x, y, x, y, 4, cfg, 1e-3, 40);
    for (std::size_t e = 1; e < r.curve.size(); ++e)
        EXPECT_LE(r.curve[e].train_loss, r.curve[e - 1].train_loss);
}

TEST(TrainLinear, DeterministicBySeed)
{
    std::mt19937_64 rng(11);
    std::vector<std::vector<double>> x;
    std::vector<std::size_t> y;
    separable(6, rng, x, y);
    TrainConfig cfg;
    cfg.seed = 5;
    auto a = train_linear(x, y, x, y, 4, cfg, 0.01, 5);
    auto b = train_linear(x, y, x, y, 4, cfg, 0.01, 5);
    EXPECT_EQ(a.model, b.model);
    for (std::size_t e = 0; e < a.curve.size(); ++e)
        EXPECT_EQ(a.curve[e].train_loss, b.curve[e].train_loss);
    EXPECT_THROW(train_linear({}, {}, x, y, 4, cfg, 0.01, 1), Error);
}

namespace {

struct TinyProblem {
    std::vector<Sample> train;
    Codebook<double> cb;
    ClassifierModel<double> model;
};

TinyProblem tiny(std::mt19937_64& rng)
{
    TinyProblem p;
    for (std::size_t c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) {
            auto f = oracle::random_map(2, 3, 4, rng);
            for (std::size_t n = 0; n < f.count(); ++n)
                f.descriptor(n)[c] += 2.0;
            p.train.push_back({f, c});
        }
    p.cb = oracle::random_codebook(3, 4, 1.0, rng, true);
    p.model = ClassifierModel<double>::zeros(3, 12, 0.5);
    p.model.weights = oracle::random_vector(36, rng, 0.5);
    return p;
}

} // namespace

TEST(VideoGradients, EndToEndMatchesFiniteDifferences)
{
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto f = oracle::random_map(2, 3, 4, rng);
        auto cb = oracle::random_codebook(3, 4, 2.0, rng);
        auto model = random_model(3, 12, rng);
        std::vector<double> mask(12, 1.0);
        const std::size_t label = trial % 3;
        auto g = video_gradients(f, label, cb, model, mask);

        std::vector<double> c(cb.residual_anchors().begin(), cb.residual_anchors().end());
        std::vector<double> a(cb.assign_anchors().begin(), cb.assign_anchors().end());
        auto loss = [&] {
            Codebook<double> b(3, 4, 2.0, c, a);
            auto v = actionvlad_encode(f, b).values;
            return softmax_cross_entropy<double>(classifier_forward<double>(v, model), label).loss;
        };
        EXPECT_LE(oracle::max_relative_error(g.residual_anchors, oracle::numeric_gradient(c, loss)), 1e-4);
        EXPECT_LE(oracle::max_relative_error(g.assign_anchors, oracle::numeric_gradient(a, loss)), 1e-4);
        EXPECT_LE(oracle::max_relative_error(g.weights, oracle::numeric_gradient(model.weights, loss)), 1e-4);
        EXPECT_LE(oracle::max_relative_error(g.bias, oracle::numeric_gradient(model.bias, loss)), 1e-4);
    }
}

TEST(Stage2, ZeroLearningRateKeepsCodebook)
{
    std::mt19937_64 rng(13);
    auto p = tiny(rng);
    TrainConfig cfg;
    cfg.stage2_lr = 0;
    cfg.stage2_epochs = 2;
    auto r = train_stage2(p.train, p.train, p.cb, p.model, cfg);
    EXPECT_EQ(r.codebook, p.cb);
    EXPECT_EQ(r.model.weights, p.model.weights);
}

TEST(Stage2, OneStepMatchesAdamPerTensor)
{
    std::mt19937_64 rng(14);
    auto p = tiny(rng);
    TrainConfig cfg;
    cfg.dropout = 0;
    cfg.stage2_epochs = 1;
    cfg.batch_size = p.train.size();
    cfg.accumulation_steps = 1;
    cfg.stage2_lr = 1e-3;
    cfg.threads = 1;
    auto r = train_stage2(p.train, p.train, p.cb, p.model, cfg);

    // one full-batch step by hand
    std::vector<double> mask(12, 1.0);
    TensorList<double> grads{std::vector<double>(36, 0.0), std::vector<double>(3, 0.0), std::vector<double>(12, 0.0),
                             std::vector<double>(12, 0.0)};
    for (const auto& s : p.train) {
        auto g = video_gradients(s.features, s.label, p.cb, p.model, mask);
        const std::vector<double>* parts[] = {&g.weights, &g.bias, &g.residual_anchors, &g.assign_anchors};
        for (std::size_t t = 0; t < 4; ++t)
            for (std::size_t e = 0; e < grads[t].size(); ++e)
                grads[t][e] += (*parts[t])[e] / double(p.train.size());
    }
    clip_gradients(grads, 5.0);
    auto cb = p.cb;
    auto model = p.model;
    AdamState<double> st;
    const std::span<double> params[] = {model.weights, model.bias, cb.residual_anchors(), cb.assign_anchors()};
    adam_step<double>(params, grads, st, {1e-3, 1e-4});
    EXPECT_LE(oracle::max_abs_diff(r.model.weights, model.weights), 1e-14);
    EXPECT_LE(oracle::max_abs_diff(r.model.bias, model.bias), 1e-14);
    EXPECT_LE(oracle::max_abs_diff(r.codebook.residual_anchors(), cb.residual_anchors()), 1e-14);
    EXPECT_LE(oracle::max_abs_diff(r.codebook.assign_anchors(), cb.assign_anchors()), 1e-14);
    EXPECT_FALSE(r.codebook.anchors_tied());
}

TEST(Stage2, TiedAnchorsStayEqual)
{
    std::mt19937_64 rng(15);
    auto p = tiny(rng);
    TrainConfig cfg;
    cfg.tie_anchors = true;
    cfg.stage2_epochs = 3;
    cfg.stage2_lr = 1e-2;
    auto r = train_stage2(p.train, p.train, p.cb, p.model, cfg);
    EXPECT_TRUE(r.codebook.anchors_tied());
    EXPECT_NE(r.codebook, p.cb);
}

TEST(Stage2, ThreadCountDoesNotChangeResult)
{
    std::mt19937_64 rng(16);
    auto p = tiny(rng);
    TrainConfig cfg;
    cfg.stage2_epochs = 2;
    cfg.threads = 1;
    auto serial = train_stage2(p.train, p.train, p.cb, p.model, cfg);
    cfg.threads = 3;
    auto threaded = train_stage2(p.train, p.train, p.cb, p.model, cfg);
    EXPECT_EQ(serial.codebook, threaded.codebook);
    EXPECT_EQ(serial.model, threaded.model);
}

TEST(Stage2, Rejections)
{
    std::mt19937_64 rng(17);
    auto p = tiny(rng);
    TrainConfig cfg;
    cfg.pooling = Pooling::avg;
    EXPECT_THROW(train_stage2(p.train, p.train, p.cb, p.model, cfg), Error);
    cfg.pooling = Pooling::vlad;
    EXPECT_THROW(train_stage2({}, p.train, p.cb, p.model, cfg), Error);
    auto wrong = ClassifierModel<double>::zeros(3, 10, 0.5);
    EXPECT_THROW(train_stage2(p.train, p.train, p.cb, wrong, cfg), Error);
}

TEST(Stage1, SyntheticAboveChance)
{
    SynthShape shape;
    shape.train_per_class = 8;
    shape.val_per_class = 4;
    auto data = synth_generate(make_shared_subaction_config(shape));
    auto train = data.samples(Split::train), val = data.samples(Split::val);
    std::vector<FeatureMap<double>> maps;
    for (const auto& s : train)
        maps.push_back(s.features);
    auto cb = kmeans_init<double>(sample_descriptors<double>(maps, 5000, 0), shape.dim, 8, 1.0, {});
    TrainConfig cfg;
    cfg.stage1_epochs = 20;
    auto r = train_stage1(train, val, &cb, data.classes, cfg);
    EXPECT_GT(r.curve.back().val_accuracy, 0.1);
}

TEST(Config, ValidateRejectsBadValues)
{
    TrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
             [](TrainConfig& c) { c.alpha = 0; }, [](TrainConfig& c) { c.cells = 0; },
             [](TrainConfig& c) { c.dropout = 1; }, [](TrainConfig& c) { c.clip_norm = 0; },
             [](TrainConfig& c) { c.stage1_lr = -1; }, [](TrainConfig& c) { c.adam_epsilon = 0; },
             [](TrainConfig& c) { c.batch_size = 0; }, [](TrainConfig& c) { c.accumulation_steps = 0; }}) {
        TrainConfig bad;
        mutate(bad);
        EXPECT_THROW(bad.validate(), Error);
    }
    EXPECT_EQ(parse_pooling("max"), Pooling::max);
    EXPECT_THROW(parse_pooling("sum"), Error);
}
