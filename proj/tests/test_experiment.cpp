#include <numeric>

#include <gtest/gtest.h>

#include "actionvlad/experiment.hpp"
#include "temp_dir.hpp"

using namespace actionvlad;

namespace {

class Pipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = new test::TempDir;
        GenSynthOptions gen;
        gen.shape.two_stream = true;
        gen.shape.frames = 6;
        gen.shape.locations = 4;
        gen.shape.train_per_class = 6;
        gen.shape.val_per_class = 3;
        gen.out_dir = dir_->path() / "data";
        manifest_ = new fs::path(gen_synth(gen));
        for (bool second : {false, true}) {
            InitCodebookOptions init;
            init.manifest = *manifest_;
            init.cells = 4;
            init.alpha = 1.0;
            init.load.second_stream = second;
            init.out = path(second ? "cb_b.avc" : "cb_a.avc");
            init_codebook(init);
            TrainOptions tr;
            tr.manifest = *manifest_;
            tr.checkpoint = init.out;
            tr.config.stage1_epochs = 5;
            tr.load.second_stream = second;
            tr.out = path(second ? "s1_b.avc" : "s1_a.avc");
            train(tr);
        }
    }
    static void TearDownTestSuite()
    {
        delete manifest_;
        delete dir_;
    }
    static fs::path path(const std::string& name) { return dir_->path() / name; }

    static EvalOptions eval_options(const std::string& checkpoint)
    {
        EvalOptions e;
        e.manifest = *manifest_;
        e.checkpoint = path(checkpoint);
        e.threads = 1;
        return e;
    }

    static test::TempDir* dir_;
    static fs::path* manifest_;
};

test::TempDir* Pipeline::dir_ = nullptr;
fs::path* Pipeline::manifest_ = nullptr;

} // namespace

TEST_F(Pipeline, InitCodebookIsDeterministic)
{
    InitCodebookOptions init;
    init.manifest = *manifest_;
    init.cells = 4;
    init.alpha = 1.0;
    init.out = path("again.avc");
    auto ck = init_codebook(init);
    EXPECT_EQ(ck.codebook->cells(), 4u);
    EXPECT_EQ(ck.codebook->dim(), 32u);
    EXPECT_EQ(read_file_bytes(path("again.avc")), read_file_bytes(path("cb_a.avc")));
}

TEST_F(Pipeline, InitCodebookRejectsTooManyCells)
{
    InitCodebookOptions init;
    init.manifest = *manifest_;
    init.cells = 100000;
    EXPECT_THROW(init_codebook(init), Error);
    init.cells = 4;
    init.load.fusion = Fusion::late;
    EXPECT_THROW(init_codebook(init), Error);
}

TEST_F(Pipeline, EvalUsesValidationWhenThereIsNoTestSplit)
{
    auto r = eval(eval_options("s1_a.avc"));
    EXPECT_EQ(r.split, "val");
    EXPECT_EQ(r.videos, 30u);
    std::size_t trace = 0, total = 0;
    for (std::size_t c = 0; c < r.classes; ++c) {
        trace += r.confusion[c][c];
        total += std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
    }
    EXPECT_EQ(total, 30u);
    EXPECT_EQ(r.accuracy, double(trace) / double(total));
}

TEST_F(Pipeline, LateFusionWithFullWeightEqualsStreamA)
{
    auto single = eval(eval_options("s1_a.avc"));
    auto opt = eval_options("s1_a.avc");
    opt.fusion = Fusion::late;
    opt.checkpoint_b = path("s1_b.avc");
    opt.fusion_weight = 1.0;
    EXPECT_TRUE(eval(opt).same_results(single));
    opt.scores_out = path("late.tsv");
    opt.late_fuse_logits = true;
    auto logits = eval(opt);
    EXPECT_EQ(logits.confusion, single.confusion);
}

TEST_F(Pipeline, MulticropWithOneCropEqualsPlainEval)
{
    auto plain = eval(eval_options("s1_a.avc"));
    auto opt = eval_options("s1_a.avc");
    opt.multicrop = true;
    EXPECT_TRUE(eval(opt).same_results(plain));
}

TEST_F(Pipeline, DuplicatedVideosKeepAccuracy)
{
    auto text = read_text_file(*manifest_);
    write_text_file(manifest_->parent_path() / "twice.tsv", text + text);
    auto opt = eval_options("s1_a.avc");
    auto once = eval(opt);
    opt.manifest = manifest_->parent_path() / "twice.tsv";
    auto twice = eval(opt);
    EXPECT_EQ(twice.videos, 2 * once.videos);
    EXPECT_EQ(twice.accuracy, once.accuracy);
}

TEST_F(Pipeline, ThreadCountDoesNotChangeReport)
{
    auto opt = eval_options("s1_a.avc");
    auto serial = eval(opt);
    opt.threads = 4;
    EXPECT_TRUE(eval(opt).same_results(serial));
}

TEST_F(Pipeline, ExternalScoresFuse)
{
    auto opt = eval_options("s1_a.avc");
    opt.scores_out = path("model.tsv");
    auto base = eval(opt);
    // constant external scores cannot change the ranking
    auto table = parse_score_file(read_text_file(path("model.tsv")));
    std::vector<std::pair<std::string, ScoreVector>> flat;
    for (const auto& [id, s] : table)
        flat.emplace_back(id, ScoreVector{std::vector<double>(s.classes(), 3.0), ScoreKind::raw});
    write_text_file(path("flat.tsv"), format_score_file(flat));
    opt.scores_out.clear();
    opt.external_scores = path("flat.tsv");
    EXPECT_EQ(eval(opt).confusion, base.confusion);
    // missing videos are reported
    write_text_file(path("partial.tsv"), "nobody\t1,2,3,4,5,6,7,8,9,10\n");
    opt.external_scores = path("partial.tsv");
    EXPECT_THROW(eval(opt), Error);
}

TEST_F(Pipeline, Stage2NeedsStage1Checkpoint)
{
    TrainOptions tr;
    tr.manifest = *manifest_;
    tr.stage = 2;
    tr.checkpoint = path("cb_a.avc");
    EXPECT_THROW(train(tr), Error);
    tr.checkpoint.reset();
    EXPECT_THROW(train(tr), Error);
    tr.checkpoint = path("s1_a.avc");
    tr.config.stage2_epochs = 1;
    auto out = train(tr);
    EXPECT_EQ(out.checkpoint.stage, 2);
    EXPECT_EQ(out.curve.size(), 1u);
    EXPECT_EQ(out.curve[0].stage, 2);
}

TEST_F(Pipeline, AveragePoolingNeedsNoCodebook)
{
    TrainOptions tr;
    tr.manifest = *manifest_;
    tr.config.pooling = Pooling::avg;
    tr.config.stage1_epochs = 3;
    tr.out = path("avg.avc");
    tr.metrics = path("avg_metrics.tsv");
    auto out = train(tr);
    EXPECT_FALSE(out.checkpoint.codebook.has_value());
    auto lines = read_text_file(path("avg_metrics.tsv"));
    EXPECT_EQ(std::ranges::count(lines, '\n'), 3);
    EXPECT_EQ(lines.substr(0, 4), "1\t1\t");
    auto opt = eval_options("avg.avc");
    opt.pooling = Pooling::vlad;
    EXPECT_THROW(eval(opt), Error);
    opt.pooling = Pooling::avg;
    EXPECT_NO_THROW(eval(opt));
}

TEST_F(Pipeline, ConcatAndEarlyFusionTrain)
{
    for (auto fusion : {Fusion::concat, Fusion::early}) {
        InitCodebookOptions init;
        init.manifest = *manifest_;
        init.cells = 3;
        init.alpha = 1.0;
        init.load.fusion = fusion;
        init.out = path("fused_cb.avc");
        auto cb = init_codebook(init);
        EXPECT_EQ(cb.codebook->dim(), fusion == Fusion::concat ? 64u : 32u);
        TrainOptions tr;
        tr.manifest = *manifest_;
        tr.checkpoint = init.out;
        tr.load.fusion = fusion;
        tr.config.stage1_epochs = 2;
        tr.out = path("fused.avc");
        train(tr);
        auto r = eval(eval_options("fused.avc"));
        EXPECT_EQ(r.videos, 30u);
        // the codebook belongs to one feature space
        tr.load.fusion = Fusion::none;
        EXPECT_THROW(train(tr), Error);
    }
}

TEST_F(Pipeline, ExportAssignmentsAgreeWithSoftAssign)
{
    ExportAssignmentsOptions ex;
    ex.manifest = *manifest_;
    ex.checkpoint = path("s1_a.avc");
    ex.split = Split::val;
    ex.out = path("assign.txt");
    auto grids = export_assignments(ex);
    ASSERT_EQ(grids.size(), 30u);
    const auto ck = load_checkpoint(path("s1_a.avc"));
    const auto entries = load_manifest(*manifest_).split(Split::val);
    for (std::size_t v = 0; v < grids.size(); ++v) {
        auto f = load_video(entries[v], {});
        for (std::size_t n = 0; n < f.count(); ++n) {
            auto p = soft_assign<double>(f.descriptor(n), *ck.codebook);
            EXPECT_EQ(grids[v].cells[n], std::size_t(std::ranges::max_element(p) - p.begin()));
        }
    }
    auto text = read_text_file(path("assign.txt"));
    EXPECT_EQ(text.substr(0, text.find('\n')), "video\t" + grids[0].id + "\t6\t4");
    ex.binary = true;
    ex.out = path("assign.bin");
    export_assignments(ex);
    auto bytes = read_file_bytes(path("assign.bin"));
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AVA1");
}

TEST_F(Pipeline, ExportAssignmentsSingleCellIsZero)
{
    InitCodebookOptions init;
    init.manifest = *manifest_;
    init.cells = 1;
    init.out = path("k1.avc");
    init_codebook(init);
    ExportAssignmentsOptions ex;
    ex.manifest = *manifest_;
    ex.checkpoint = init.out;
    for (const auto& g : export_assignments(ex))
        for (auto c : g.cells)
            EXPECT_EQ(c, 0u);
}

TEST_F(Pipeline, PlantedDescriptorsMapToTheirAnchors)
{
    Checkpoint ck;
    std::vector<double> anchors{0, 0, 10, 0, 0, 10};
    ck.codebook = build_codebook<double>(anchors, 3, 1e6);
    save_checkpoint(path("planted.avc"), ck);
    const std::vector<std::size_t> planted{2, 0, 1, 1, 2, 0};
    FeatureMap<double> f(2, 3, 2);
    for (std::size_t n = 0; n < 6; ++n)
        std::ranges::copy(std::span<const double>(anchors).subspan(planted[n] * 2, 2), f.descriptor(n).begin());
    write_feature_file(f, path("planted.avf"));
    write_text_file(path("planted.tsv"), "planted.avf\t0\ttest\n");
    ExportAssignmentsOptions ex;
    ex.manifest = path("planted.tsv");
    ex.checkpoint = path("planted.avc");
    auto grids = export_assignments(ex);
    ASSERT_EQ(grids.size(), 1u);
    EXPECT_EQ(grids[0].cells, planted);
}

TEST_F(Pipeline, WordContributionsSumToLogit)
{
    const auto entries = load_manifest(*manifest_).split(Split::val);
    const auto ck = load_checkpoint(path("s1_a.avc"));
    for (std::size_t cls = 0; cls < 3; ++cls) {
        auto wc = word_contributions_for_video(entries[cls].stream_a.front(), path("s1_a.avc"), cls);
        double s = wc.bias;
        for (const auto& w : wc.ranked)
            s += w.score;
        auto logits = score_video(load_video(entries[cls], {}), ck).values;
        EXPECT_NEAR(s, logits[cls], 1e-9);
        EXPECT_NEAR(wc.logit, logits[cls], 1e-12);
        EXPECT_EQ(wc.ranked.size(), 4u);
    }
    EXPECT_THROW(word_contributions_for_video(entries[0].stream_a.front(), path("s1_a.avc"), 10), Error);
}

TEST_F(Pipeline, ConfusionDiffOfReportFiles)
{
    auto opt = eval_options("s1_a.avc");
    opt.report_out = path("a.report");
    eval(opt);
    auto zero = confusion_diff_files(path("a.report"), path("a.report"), path("diff.txt"));
    for (const auto& row : zero)
        for (double v : row)
            EXPECT_EQ(v, 0.0);
    EXPECT_EQ(read_text_file(path("diff.txt")).substr(0, 2), "0\t");
}

TEST_F(Pipeline, FuseScoreFiles)
{
    write_text_file(path("sa.tsv"), "v1\t1,0\nv2\t0.2,0.8\n");
    write_text_file(path("sb.tsv"), "v2\t0,1\nv1\t0,1\n");
    auto rows = fuse_score_files(path("sa.tsv"), path("sb.tsv"), 0.5, false, path("fused.tsv"));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].first, "v1");
    EXPECT_EQ(rows[0].second.values, (std::vector<double>{0.5, 0.5}));
    auto back = parse_score_file(read_text_file(path("fused.tsv")));
    EXPECT_EQ(back.at("v2").values, (std::vector<double>{0.1, 0.9}));
    write_text_file(path("sc.tsv"), "v1\t1,0,0\nv2\t0,1,0\n");
    EXPECT_THROW(fuse_score_files(path("sa.tsv"), path("sc.tsv"), 0.5, false), Error);
    write_text_file(path("bad.tsv"), "v1\t1,x\n");
    EXPECT_THROW(parse_score_file(read_text_file(path("bad.tsv"))), Error);
}
