#include <gtest/gtest.h>

#include "actionvlad/aggregation.hpp"
#include "actionvlad/io.hpp"
#include "actionvlad/synth.hpp"
#include "oracles.hpp"

using namespace actionvlad;

TEST(Synth, DefaultConfigShape)
{
    auto cfg = default_synth_config();
    EXPECT_EQ(cfg.classes, 10u);
    EXPECT_EQ(cfg.subactions(), 12u);
    EXPECT_EQ(cfg.frames, 25u);
    EXPECT_EQ(cfg.locations, 9u);
    EXPECT_EQ(cfg.dim, 32u);
    EXPECT_EQ(cfg.sigma, 0.3);
    EXPECT_EQ(cfg.train_per_class, 40u);
    EXPECT_EQ(cfg.val_per_class, 10u);
    for (const auto& ms : cfg.class_subactions)
        EXPECT_EQ(ms.size(), 3u);
    EXPECT_TRUE(cfg.classes_share_subactions());
    EXPECT_NO_THROW(cfg.validate());
}

TEST(Synth, DeterministicAndDisjointSplits)
{
    SynthShape shape;
    shape.train_per_class = 3;
    shape.val_per_class = 2;
    shape.seed = 4;
    auto cfg = make_shared_subaction_config(shape);
    auto a = synth_generate(cfg), b = synth_generate(cfg);
    ASSERT_EQ(a.videos.size(), 50u);
    std::set<std::string> train_ids, val_ids;
    for (std::size_t v = 0; v < a.videos.size(); ++v) {
        EXPECT_EQ(encode_feature_file(a.videos[v].appearance), encode_feature_file(b.videos[v].appearance));
        (a.videos[v].split == Split::train ? train_ids : val_ids).insert(a.videos[v].id);
    }
    EXPECT_EQ(train_ids.size(), 30u);
    EXPECT_EQ(val_ids.size(), 20u);
    for (const auto& id : val_ids)
        EXPECT_FALSE(train_ids.contains(id));
    shape.seed = 5;
    auto c = synth_generate(make_shared_subaction_config(shape));
    EXPECT_NE(c.videos[0].appearance, a.videos[0].appearance);
}

TEST(Synth, DegenerateConfigsRejected)
{
    auto cfg = default_synth_config();
    cfg.classes = 1;
    cfg.class_subactions.resize(1);
    EXPECT_THROW(synth_generate(cfg), Error);
    cfg = default_synth_config();
    cfg.prototypes.resize(1);
    EXPECT_THROW(synth_generate(cfg), Error);
    SynthShape shape;
    shape.subactions = 3;
    EXPECT_THROW(make_shared_subaction_config(shape), Error);
}

TEST(Synth, DisjointNoiselessControlIsSeparableByAveraging)
{
    SynthConfig cfg;
    cfg.classes = 4;
    cfg.dim = 4;
    cfg.frames = 5;
    cfg.locations = 3;
    cfg.sigma = 0;
    cfg.train_per_class = 3;
    cfg.val_per_class = 0;
    for (std::size_t c = 0; c < 4; ++c) {
        std::vector<double> p(4, 0.0);
        p[c] = 1;
        cfg.prototypes.push_back(p);
        cfg.class_subactions.push_back({c});
    }
    EXPECT_FALSE(cfg.classes_share_subactions());
    auto data = synth_generate(cfg);
    for (const auto& v : data.videos) {
        auto avg = average_pool(v.appearance);
        EXPECT_EQ(std::size_t(std::ranges::max_element(avg) - avg.begin()), v.label);
        EXPECT_EQ(avg[v.label], 1.0);
    }
}

TEST(Synth, EqualMeansConfuseAveragingButNotVlad)
{
    // classes 0 and 1 of each square share their expected mean and their
    // component-wise maximum, yet use different corners
    SynthShape shape;
    shape.train_per_class = 400;
    shape.val_per_class = 0;
    shape.sigma = 0.3;
    auto cfg = make_shared_subaction_config(shape);
    const std::size_t groups = shape.subactions / 4;
    auto data = synth_generate(cfg);
    auto cb = build_codebook<double>(
        [&] {
            std::vector<double> a;
            for (std::size_t s = 0; s < 4; ++s)
                a.insert(a.end(), cfg.prototypes[s].begin(), cfg.prototypes[s].end());
            return a;
        }(),
        4, 1.0);
    auto mean_of = [&](std::size_t label, bool vlad) {
        std::vector<double> m;
        std::size_t count = 0;
        for (const auto& v : data.videos) {
            if (v.label != label)
                continue;
            std::vector<double> rep;
            if (vlad) {
                rep = actionvlad_encode(v.appearance, cb).values;
            } else {
                rep.assign(v.appearance.dim(), 0.0);
                for (std::size_t n = 0; n < v.appearance.count(); ++n)
                    for (std::size_t j = 0; j < rep.size(); ++j)
                        rep[j] += v.appearance.descriptor(n)[j] / double(v.appearance.count());
            }
            if (m.empty())
                m.assign(rep.size(), 0.0);
            for (std::size_t j = 0; j < rep.size(); ++j)
                m[j] += rep[j];
            ++count;
        }
        for (double& x : m)
            x /= double(count);
        return m;
    };
    const std::size_t a = 0, b = groups;  // same square, patterns {10,01,00} and {11,00,00}
    auto avg_gap = oracle::norm([&] {
        auto x = mean_of(a, false), y = mean_of(b, false);
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] -= y[j];
        return x;
    }());
    auto vlad_gap = oracle::norm([&] {
        auto x = mean_of(a, true), y = mean_of(b, true);
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] -= y[j];
        return x;
    }());
    // the mean difference shrinks like 1/sqrt(videos); the VLAD one does not
    EXPECT_LT(avg_gap, 0.1);
    EXPECT_GT(vlad_gap, 0.3);
}

TEST(Synth, TwoStreamMotionMatchesFrameSubactions)
{
    SynthShape shape;
    shape.two_stream = true;
    shape.train_per_class = 2;
    shape.val_per_class = 1;
    auto data = synth_generate(make_shared_subaction_config(shape));
    for (const auto& v : data.videos) {
        ASSERT_TRUE(v.motion.has_value());
        EXPECT_EQ(v.motion->frames(), v.appearance.frames());
        EXPECT_EQ(v.frame_subactions.size(), v.appearance.frames());
    }
    EXPECT_EQ(data.samples(Split::val, true).size(), 10u);
}
