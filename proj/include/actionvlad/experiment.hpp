#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "actionvlad/aggregation.hpp"
#include "actionvlad/codebook.hpp"
#include "actionvlad/error.hpp"
#include "actionvlad/fusion.hpp"
#include "actionvlad/io.hpp"
#include "actionvlad/parallel.hpp"
#include "actionvlad/report.hpp"
#include "actionvlad/synth.hpp"
#include "actionvlad/training.hpp"

namespace actionvlad {

// --- score files ----------------------------------------------------------
//
// One video per line: video_id<TAB>s_1,...,s_C

using ScoreTable = std::map<std::string, ScoreVector>;

inline ScoreTable parse_score_file(std::string_view text)
{
    ScoreTable table;
    std::size_t line_no = 0;
    std::size_t classes = 0;
    for (auto line : detail::fields(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty() || line.front() == '#')
            continue;
        auto where = "score file line " + std::to_string(line_no) + ": ";
        auto f = detail::fields(line, '\t');
        require(f.size() == 2 && !f[0].empty(), ErrorKind::parse_error, where + "expected video_id<TAB>scores");
        ScoreVector s;
        for (auto cell : detail::fields(f[1], ',')) {
            try {
                s.values.push_back(detail::parse_double(cell));
            } catch (const Error& e) {
                throw Error(ErrorKind::parse_error, where + e.what());
            }
            require(std::isfinite(s.values.back()), ErrorKind::non_finite, where + "non-finite score");
        }
        if (classes == 0)
            classes = s.classes();
        require(s.classes() == classes, ErrorKind::dimension_mismatch, where + "inconsistent class count");
        require(table.emplace(std::string(f[0]), std::move(s)).second, ErrorKind::parse_error,
                where + "duplicate video id '" + std::string(f[0]) + "'");
    }
    return table;
}

inline std::string format_score_file(const std::vector<std::pair<std::string, ScoreVector>>& rows)
{
    std::ostringstream out;
    for (const auto& [id, s] : rows) {
        out << id << '\t';
        for (std::size_t c = 0; c < s.classes(); ++c)
            out << (c ? "," : "") << detail::format_double(s.values[c]);
        out << '\n';
    }
    return out.str();
}

// --- gen-synth ------------------------------------------------------------

struct GenSynthOptions {
    SynthShape shape;
    fs::path out_dir;
};

/// Writes one AVF1 file per video (plus a motion file for two-stream data)
/// and a manifest.tsv; returns the manifest path.
inline fs::path gen_synth(const GenSynthOptions& opt)
{
    auto data = synth_generate(make_shared_subaction_config(opt.shape));
    fs::create_directories(opt.out_dir / "features");
    std::ostringstream manifest;
    for (const auto& v : data.videos) {
        const auto rel = fs::path("features") / (v.id + ".avf");
        write_feature_file(v.appearance, opt.out_dir / rel);
        manifest << rel.generic_string() << '\t' << v.label << '\t' << to_string(v.split);
        if (v.motion) {
            const auto rel_b = fs::path("features") / (v.id + "_motion.avf");
            write_feature_file(*v.motion, opt.out_dir / rel_b);
            manifest << '\t' << rel_b.generic_string();
        }
        manifest << '\n';
    }
    const auto path = opt.out_dir / "manifest.tsv";
    write_text_file(path, manifest.str());
    return path;
}

// --- init-codebook --------------------------------------------------------

struct InitCodebookOptions {
    fs::path manifest;
    std::size_t cells = 64;
    double alpha = 1000.0;
    std::uint64_t seed = 0;
    std::size_t max_iters = 100;
    std::size_t max_samples = 100000;
    LoadOptions load;
    fs::path out;  ///< not written when empty
};

/// k-means over descriptors sampled from the training split, in the
/// feature space that will actually be pooled (after concat/early fusion).
inline Checkpoint init_codebook(const InitCodebookOptions& opt)
{
    require(opt.load.fusion != Fusion::late, ErrorKind::invalid_argument,
            "late fusion trains one model per stream; initialise each stream separately");
    const auto manifest = load_manifest(opt.manifest);
    const auto train = manifest.split(Split::train);
    require(!train.empty(), ErrorKind::invalid_argument, "manifest has no training videos");
    std::vector<FeatureMap<double>> maps;
    for (const auto& e : train)
        maps.push_back(load_video(e, opt.load));
    auto samples = sample_descriptors<double>(maps, opt.max_samples, opt.seed);

    Checkpoint ck;
    ck.stage = 0;
    ck.fusion = opt.load.fusion;
    ck.classes = manifest.classes;
    ck.config.cells = opt.cells;
    ck.config.alpha = opt.alpha;
    ck.config.seed = opt.seed;
    ck.codebook = kmeans_init<double>(samples, maps.front().dim(), opt.cells, opt.alpha, {opt.max_iters, opt.seed});
    if (!opt.out.empty())
        save_checkpoint(opt.out, ck);
    return ck;
}

// --- train ----------------------------------------------------------------

struct TrainOptions {
    fs::path manifest;
    std::optional<fs::path> checkpoint;  ///< required for VLAD pooling
    int stage = 1;
    TrainConfig config;
    LoadOptions load;
    fs::path out;
    fs::path metrics;  ///< not written when empty
};

struct TrainOutcome {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> curve;
};

inline std::string format_metrics(const std::vector<EpochMetrics>& curve)
{
    std::ostringstream out;
    for (const auto& m : curve)
        out << m.epoch << '\t' << m.stage << '\t' << detail::format_double(m.train_loss) << '\t'
            << detail::format_double(m.val_accuracy) << '\n';
    return out.str();
}

inline TrainOutcome train(const TrainOptions& opt)
{
    require(opt.stage == 1 || opt.stage == 2, ErrorKind::invalid_argument, "stage must be 1 or 2");
    require(opt.load.fusion != Fusion::late, ErrorKind::invalid_argument,
            "late fusion trains one model per stream; train each stream separately");
    const auto manifest = load_manifest(opt.manifest);
    const auto train_set = load_samples(manifest.split(Split::train), opt.load);
    const auto val_set = load_samples(manifest.split(Split::val), opt.load);
    require(!train_set.empty(), ErrorKind::invalid_argument, "manifest has no training videos");

    Checkpoint ck;
    if (opt.checkpoint)
        ck = load_checkpoint(*opt.checkpoint);
    TrainConfig cfg = opt.config;
    TrainOutcome outcome;

    if (opt.stage == 2) {
        require(opt.checkpoint && ck.stage >= 1 && ck.classifier && ck.codebook, ErrorKind::invalid_argument,
                "stage 2 needs a checkpoint produced by stage 1");
        require(cfg.pooling == Pooling::vlad && ck.config.pooling == Pooling::vlad, ErrorKind::invalid_argument,
                "stage 2 fine-tunes the codebook and needs VLAD pooling");
    }
    if (cfg.pooling == Pooling::vlad) {
        require(opt.checkpoint && ck.codebook, ErrorKind::invalid_argument,
                "VLAD pooling needs a checkpoint holding a codebook (run init-codebook first)");
        require(ck.fusion == opt.load.fusion, ErrorKind::invalid_argument,
                "checkpoint was built for fusion '" + std::string(to_string(ck.fusion)) + "', not '" +
                    std::string(to_string(opt.load.fusion)) + "'");
        cfg.cells = ck.codebook->cells();
        cfg.alpha = ck.codebook->alpha();
    }
    const std::size_t classes = std::max(manifest.classes, ck.classes);

    if (opt.stage == 1) {
        auto result = train_stage1(train_set, val_set, ck.codebook ? &*ck.codebook : nullptr, classes, cfg);
        ck.classifier = std::move(result.model);
        ck.adam = std::move(result.adam);
        outcome.curve = std::move(result.curve);
    } else {
        auto result = train_stage2(train_set, val_set, *ck.codebook, *ck.classifier, cfg);
        ck.codebook = std::move(result.codebook);
        ck.classifier = std::move(result.model);
        ck.adam = std::move(result.adam);
        outcome.curve = std::move(result.curve);
    }
    if (cfg.pooling != Pooling::vlad)
        ck.codebook.reset();
    ck.stage = opt.stage;
    ck.fusion = opt.load.fusion;
    ck.classes = classes;
    ck.config = cfg;
    if (!opt.out.empty())
        save_checkpoint(opt.out, ck);
    if (!opt.metrics.empty())
        write_text_file(opt.metrics, format_metrics(outcome.curve));
    outcome.checkpoint = std::move(ck);
    return outcome;
}

// --- eval -----------------------------------------------------------------

struct EvalOptions {
    fs::path manifest;
    fs::path checkpoint;
    std::optional<fs::path> checkpoint_b;  ///< second-stream model for late fusion
    std::optional<Split> split;            ///< default: test if present, else val
    std::optional<Pooling> pooling;        ///< must agree with the checkpoint when given
    std::optional<Fusion> fusion;          ///< default: the checkpoint's fusion
    bool multicrop = false;
    double fusion_weight = 0.5;
    bool late_fuse_logits = false;  ///< average raw logits instead of probabilities
    std::optional<fs::path> external_scores;
    double external_weight = 0.5;
    std::size_t threads = 0;
    fs::path report_out;  ///< line-oriented report; not written when empty
    fs::path json_out;
    fs::path scores_out;  ///< per-video fused scores in score-file format
};

/// Scores one video with a trained checkpoint (no dropout).
inline ScoreVector score_video(const FeatureMap<double>& f, const Checkpoint& ck)
{
    require(ck.classifier.has_value(), ErrorKind::invalid_argument, "checkpoint holds no trained classifier");
    const auto* cb = ck.codebook ? &*ck.codebook : nullptr;
    auto descriptor = pool_descriptor(f, ck.config.pooling, cb);
    return {classifier_forward<double>(descriptor, *ck.classifier), ScoreKind::raw};
}

inline ExperimentReport eval(const EvalOptions& opt)
{
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const auto manifest = load_manifest(opt.manifest);
    const auto ck = load_checkpoint(opt.checkpoint);
    require(ck.classifier.has_value(), ErrorKind::invalid_argument, "checkpoint holds no trained classifier");
    require(!opt.pooling || *opt.pooling == ck.config.pooling, ErrorKind::invalid_argument,
            "checkpoint was trained with " + std::string(to_string(ck.config.pooling)) + " pooling");
    const Fusion fusion = opt.fusion.value_or(ck.fusion);
    std::optional<Checkpoint> ck_b;
    if (fusion == Fusion::late) {
        require(opt.checkpoint_b.has_value(), ErrorKind::invalid_argument, "late fusion needs a second checkpoint");
        ck_b = load_checkpoint(*opt.checkpoint_b);
        require(ck_b->classifier && ck_b->classifier->classes == ck.classifier->classes,
                ErrorKind::dimension_mismatch, "stream checkpoints disagree on the class count");
    } else {
        require(fusion == ck.fusion, ErrorKind::invalid_argument,
                "checkpoint was trained for fusion '" + std::string(to_string(ck.fusion)) + "'");
    }
    require(opt.fusion_weight >= 0 && opt.fusion_weight <= 1, ErrorKind::invalid_argument,
            "fusion weight must lie in [0, 1]");

    Split split = opt.split.value_or(manifest.split(Split::test).empty() ? Split::val : Split::test);
    const auto entries = manifest.split(split);
    require(!entries.empty(), ErrorKind::invalid_argument,
            "manifest has no videos in split '" + std::string(to_string(split)) + "'");
    std::optional<ScoreTable> external;
    if (opt.external_scores)
        external = parse_score_file(read_text_file(*opt.external_scores));

    const auto loaded = clock::now();
    std::vector<ScoreVector> scores(entries.size());
    parallel_for(entries.size(), opt.threads, [&](std::size_t v) {
        const auto& e = entries[v];
        ScoreVector s;
        if (fusion == Fusion::late) {
            auto [a, b] = load_pair(e, opt.multicrop);
            auto sa = score_video(a, ck);
            auto sb = score_video(b, *ck_b);
            if (!opt.late_fuse_logits) {
                sa = to_probabilities(sa);
                sb = to_probabilities(sb);
            }
            s = late_fuse(sa, sb, opt.fusion_weight);
        } else {
            s = to_probabilities(score_video(load_video(e, {fusion, opt.multicrop, false}), ck));
        }
        if (external) {
            auto it = external->find(e.id);
            require(it != external->end(), ErrorKind::invalid_argument,
                    "external score file has no entry for video '" + e.id + "'");
            s = score_fuse_external(s, it->second, opt.external_weight);
        }
        scores[v] = std::move(s);
    });
    const auto scored = clock::now();

    std::vector<std::size_t> labels;
    for (const auto& e : entries)
        labels.push_back(e.label);
    auto report = build_report(labels, scores, ck.classifier->classes, std::string(to_string(split)));
    auto seconds = [](auto a, auto b) { return std::chrono::duration<double>(b - a).count(); };
    report.timings = {{"load", seconds(start, loaded)}, {"score", seconds(loaded, scored)}};

    if (!opt.report_out.empty())
        write_text_file(opt.report_out, format_report(report));
    if (!opt.json_out.empty())
        write_text_file(opt.json_out, report_to_json(report).dump(2) + "\n");
    if (!opt.scores_out.empty()) {
        std::vector<std::pair<std::string, ScoreVector>> rows;
        for (std::size_t v = 0; v < entries.size(); ++v)
            rows.emplace_back(entries[v].id, scores[v]);
        write_text_file(opt.scores_out, format_score_file(rows));
    }
    return report;
}

// --- export-assignments ---------------------------------------------------

struct AssignmentGrid {
    std::string id;
    std::size_t frames = 0;
    std::size_t locations = 0;
    std::vector<std::size_t> cells;  ///< frames x locations, frame-major
};

struct ExportAssignmentsOptions {
    fs::path manifest;
    fs::path checkpoint;
    std::optional<Split> split;  ///< all videos when unset
    bool multicrop = false;
    bool binary = false;
    fs::path out;  ///< not written when empty
};

/// Text layout: a "video<TAB>id<TAB>T<TAB>N" line followed by T lines of N
/// space-separated cell indices. Binary layout: "AVA1" | u32 version |
/// u32 videos, then per video u32 id length, id bytes, u32 T, u32 N and
/// T*N u32 cell indices, all little-endian.
inline std::vector<AssignmentGrid> export_assignments(const ExportAssignmentsOptions& opt)
{
    const auto manifest = load_manifest(opt.manifest);
    const auto ck = load_checkpoint(opt.checkpoint);
    require(ck.codebook.has_value(), ErrorKind::invalid_argument, "checkpoint holds no codebook");
    std::vector<AssignmentGrid> grids;
    for (const auto& e : manifest.entries) {
        if (opt.split && e.split != *opt.split)
            continue;
        auto f = load_video(e, {ck.fusion == Fusion::late ? Fusion::none : ck.fusion, opt.multicrop, false});
        grids.push_back({e.id, f.frames(), f.locations(), assignment_map(f, *ck.codebook)});
    }
    if (!opt.out.empty()) {
        if (opt.binary) {
            ByteWriter w;
            w.raw("AVA1");
            w.u32(1);
            w.u32(static_cast<std::uint32_t>(grids.size()));
            for (const auto& g : grids) {
                w.u32(static_cast<std::uint32_t>(g.id.size()));
                w.raw(g.id);
                w.u32(static_cast<std::uint32_t>(g.frames));
                w.u32(static_cast<std::uint32_t>(g.locations));
                for (auto c : g.cells)
                    w.u32(static_cast<std::uint32_t>(c));
            }
            write_file_bytes(opt.out, w.bytes());
        } else {
            std::ostringstream out;
            for (const auto& g : grids) {
                out << "video\t" << g.id << '\t' << g.frames << '\t' << g.locations << '\n';
                for (std::size_t t = 0; t < g.frames; ++t) {
                    for (std::size_t i = 0; i < g.locations; ++i)
                        out << (i ? " " : "") << g.cells[t * g.locations + i];
                    out << '\n';
                }
            }
            write_text_file(opt.out, out.str());
        }
    }
    return grids;
}

// --- word-contributions ---------------------------------------------------

inline WordContributions word_contributions_for_video(const fs::path& video, const fs::path& checkpoint,
                                                      std::size_t cls)
{
    const auto ck = load_checkpoint(checkpoint);
    require(ck.codebook && ck.classifier && ck.config.pooling == Pooling::vlad, ErrorKind::invalid_argument,
            "word contributions need a trained VLAD checkpoint");
    auto f = read_feature_file(video);
    auto v = actionvlad_encode(f, *ck.codebook);
    return word_contributions(v.values, *ck.classifier, cls, ck.codebook->cells());
}

inline std::string format_word_contributions(const WordContributions& wc)
{
    std::ostringstream out;
    out << "logit\t" << detail::format_double(wc.logit) << '\n';
    out << "bias\t" << detail::format_double(wc.bias) << '\n';
    for (std::size_t r = 0; r < wc.ranked.size(); ++r)
        out << "word\t" << r + 1 << '\t' << wc.ranked[r].word << '\t' << detail::format_double(wc.ranked[r].score)
            << '\n';
    return out.str();
}

// --- confusion-diff -------------------------------------------------------

inline std::string format_matrix(const std::vector<std::vector<double>>& m)
{
    std::ostringstream out;
    for (std::size_t r = 0; r < m.size(); ++r) {
        out << r << '\t';
        for (std::size_t c = 0; c < m[r].size(); ++c)
            out << (c ? "," : "") << detail::format_double(m[r][c]);
        out << '\n';
    }
    return out.str();
}

inline std::vector<std::vector<double>> confusion_diff_files(const fs::path& a, const fs::path& b,
                                                             const fs::path& out = {})
{
    auto diff = confusion_diff(parse_report(read_text_file(a)), parse_report(read_text_file(b)));
    if (!out.empty())
        write_text_file(out, format_matrix(diff));
    return diff;
}

// --- fuse-scores ----------------------------------------------------------

/// Fuses two score files video by video: w * a + (1 - w) * b, after per-video
/// min-max normalisation when `normalize` is set (external, uncalibrated
/// scores). Every id in `a` must appear in `b`.
inline std::vector<std::pair<std::string, ScoreVector>> fuse_score_files(const fs::path& a, const fs::path& b,
                                                                         double w, bool normalize,
                                                                         const fs::path& out = {})
{
    const auto ta = parse_score_file(read_text_file(a));
    const auto tb = parse_score_file(read_text_file(b));
    std::vector<std::pair<std::string, ScoreVector>> rows;
    for (const auto& [id, sa] : ta) {
        auto it = tb.find(id);
        require(it != tb.end(), ErrorKind::invalid_argument, "video '" + id + "' missing from second score file");
        rows.emplace_back(id, normalize ? score_fuse_external(sa, it->second, w) : late_fuse(sa, it->second, w));
    }
    if (!out.empty())
        write_text_file(out, format_score_file(rows));
    return rows;
}

} // namespace actionvlad
