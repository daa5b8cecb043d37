// Command-line experiment runner for ActionVLAD pooling.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "actionvlad/actionvlad.hpp"

namespace av = actionvlad;

namespace {

std::optional<av::Split> split_flag(const std::string& name)
{
    if (name.empty() || name == "all")
        return std::nullopt;
    auto s = av::parse_split(name);
    av::require(s.has_value(), av::ErrorKind::invalid_argument, "unknown split '" + name + "'");
    return s;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ActionVLAD: learnable spatio-temporal VLAD pooling for video classification"};
    app.require_subcommand(1);
    app.footer("Errors print 'error<TAB>category<TAB>message' on stderr and exit with a per-category code.\n"
               "AP in reports is the non-interpolated mean of precision at each positive (ties keep input "
               "order);\nmAP averages it over classes, wAP weights each class by its video count.");

    std::string manifest, checkpoint, out, split, pooling = "vlad", fusion = "none";
    std::uint64_t seed = 0;
    bool deterministic = false;
    bool multicrop = false;
    bool stream_b = false;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_flag("--deterministic", deterministic, "run single-threaded");
    };

    // gen-synth
    auto* gen = app.add_subcommand("gen-synth", "write a synthetic shared-sub-action dataset");
    av::GenSynthOptions gen_opt;
    std::string out_dir;
    int streams = 1;
    gen->add_option("--out-dir", out_dir, "output directory")->required();
    gen->add_option("--classes", gen_opt.shape.classes, "number of classes")->capture_default_str();
    gen->add_option("--subactions", gen_opt.shape.subactions, "vocabulary size")->capture_default_str();
    gen->add_option("--frames", gen_opt.shape.frames, "frames per video")->capture_default_str();
    gen->add_option("--locations", gen_opt.shape.locations, "locations per frame")->capture_default_str();
    gen->add_option("--dim", gen_opt.shape.dim, "descriptor dimension")->capture_default_str();
    gen->add_option("--sigma", gen_opt.shape.sigma, "descriptor noise")->capture_default_str();
    gen->add_option("--train-per-class", gen_opt.shape.train_per_class)->capture_default_str();
    gen->add_option("--val-per-class", gen_opt.shape.val_per_class)->capture_default_str();
    gen->add_option("--streams", streams, "1 or 2 (adds a motion stream)")->check(CLI::Range(1, 2));
    add_common(gen);

    // init-codebook
    auto* init = app.add_subcommand("init-codebook", "k-means codebook from the training split");
    av::InitCodebookOptions init_opt;
    init->add_option("--manifest", manifest)->required();
    init->add_option("--k", init_opt.cells, "number of cells")->capture_default_str();
    init->add_option("--alpha", init_opt.alpha, "soft-assignment sharpness")->capture_default_str();
    init->add_option("--max-iters", init_opt.max_iters)->capture_default_str();
    init->add_option("--max-samples", init_opt.max_samples, "descriptor subsample size")->capture_default_str();
    init->add_option("--fusion", fusion, "none, concat or early")->capture_default_str();
    init->add_flag("--multicrop", multicrop, "pool all crops listed per video");
    init->add_flag("--stream-b", stream_b, "use the second stream of a paired manifest");
    init->add_option("--out", out, "checkpoint to write")->required();
    add_common(init);

    // train
    auto* tr = app.add_subcommand("train", "train stage 1 (classifier) or stage 2 (joint fine-tuning)");
    av::TrainOptions train_opt;
    std::string metrics;
    auto& cfg = train_opt.config;
    std::optional<double> lr;
    std::optional<std::size_t> epochs;
    tr->add_option("--manifest", manifest)->required();
    tr->add_option("--checkpoint", checkpoint, "input checkpoint (codebook or stage-1 model)");
    tr->add_option("--stage", train_opt.stage, "1 or 2")->check(CLI::Range(1, 2))->capture_default_str();
    tr->add_option("--pooling", pooling, "vlad, avg or max")->capture_default_str();
    tr->add_option("--fusion", fusion, "none, concat or early")->capture_default_str();
    tr->add_option("--lr", lr, "learning rate (default 0.01 for stage 1, 1e-4 for stage 2)");
    tr->add_option("--epochs", epochs, "epochs (default 60 for stage 1, 30 for stage 2)");
    tr->add_option("--batch", cfg.batch_size, "videos per micro-batch")->capture_default_str();
    tr->add_option("--accum", cfg.accumulation_steps, "micro-batches per update")->capture_default_str();
    tr->add_option("--dropout", cfg.dropout)->capture_default_str();
    tr->add_option("--clip", cfg.clip_norm, "global gradient norm limit")->capture_default_str();
    tr->add_option("--adam-eps", cfg.adam_epsilon)->capture_default_str();
    tr->add_flag("--tie-anchors", cfg.tie_anchors, "keep assignment anchors equal to residual anchors");
    tr->add_flag("--multicrop", multicrop);
    tr->add_flag("--stream-b", stream_b);
    tr->add_option("--out", out, "checkpoint to write")->required();
    tr->add_option("--metrics", metrics, "per-epoch log: epoch, stage, train_loss, val_acc");
    add_common(tr);

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint and write a report");
    av::EvalOptions eval_opt;
    std::string checkpoint_b, external, json_out, scores_out;
    std::string eval_pooling, eval_fusion;
    ev->add_option("--manifest", manifest)->required();
    ev->add_option("--checkpoint", checkpoint)->required();
    ev->add_option("--checkpoint-b", checkpoint_b, "second-stream checkpoint for late fusion");
    ev->add_option("--split", split, "train, val or test (default: test if present, else val)");
    ev->add_option("--pooling", eval_pooling, "must match the checkpoint");
    ev->add_option("--fusion", eval_fusion, "none, concat, early or late (default: as trained)");
    ev->add_option("--fusion-weight", eval_opt.fusion_weight, "late-fusion weight of stream A")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    ev->add_flag("--late-logits", eval_opt.late_fuse_logits, "late-fuse raw logits instead of probabilities");
    ev->add_flag("--multicrop", eval_opt.multicrop, "pool all crops listed per video");
    ev->add_option("--external-scores", external, "score file (video_id<TAB>s_1,...,s_C) to fuse");
    ev->add_option("--external-weight", eval_opt.external_weight, "weight of the model scores")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    ev->add_option("--out", out, "report file (stdout when omitted)");
    ev->add_option("--json", json_out, "also write the report as JSON");
    ev->add_option("--scores-out", scores_out, "write per-video scores");
    add_common(ev);

    // export-assignments
    auto* ex = app.add_subcommand("export-assignments", "per-video maps of the most likely cell");
    av::ExportAssignmentsOptions export_opt;
    ex->add_option("--manifest", manifest)->required();
    ex->add_option("--checkpoint", checkpoint)->required();
    ex->add_option("--split", split, "restrict to one split");
    ex->add_flag("--binary", export_opt.binary, "write the AVA1 binary layout");
    ex->add_flag("--multicrop", export_opt.multicrop);
    ex->add_option("--out", out)->required();
    add_common(ex);

    // word-contributions
    auto* wc = app.add_subcommand("word-contributions", "split a class score into per-cell contributions");
    std::string video;
    std::size_t cls = 0;
    wc->add_option("--video", video, "AVF1 feature file")->required();
    wc->add_option("--checkpoint", checkpoint)->required();
    wc->add_option("--class", cls)->required();
    wc->add_option("--out", out, "output file (stdout when omitted)");
    add_common(wc);

    // confusion-diff
    auto* cd = app.add_subcommand("confusion-diff", "row-normalised confusion of report A minus report B");
    std::string report_a, report_b;
    cd->add_option("--a", report_a)->required();
    cd->add_option("--b", report_b)->required();
    cd->add_option("--out", out, "output file (stdout when omitted)");
    add_common(cd);

    // fuse-scores
    auto* fs = app.add_subcommand("fuse-scores", "weighted average of two score files");
    std::string scores_a, scores_b;
    double weight = 0.5;
    bool normalize = false;
    fs->add_option("--a", scores_a)->required();
    fs->add_option("--b", scores_b)->required();
    fs->add_option("--fusion-weight", weight, "weight of A")->check(CLI::Range(0.0, 1.0))->capture_default_str();
    fs->add_flag("--normalize", normalize, "min-max normalise each video's scores first");
    fs->add_option("--out", out, "output file (stdout when omitted)");
    add_common(fs);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    auto emit = [&](const std::string& text) {
        if (out.empty())
            std::cout << text;
        else
            av::write_text_file(out, text);
    };

    try {
        const std::size_t threads = deterministic ? 1 : 0;
        if (*gen) {
            gen_opt.shape.seed = seed;
            gen_opt.shape.two_stream = streams == 2;
            gen_opt.out_dir = out_dir;
            std::cout << av::gen_synth(gen_opt).string() << '\n';
        } else if (*init) {
            init_opt.manifest = manifest;
            init_opt.seed = seed;
            init_opt.load = {av::parse_fusion(fusion), multicrop, stream_b};
            init_opt.out = out;
            auto ck = av::init_codebook(init_opt);
            std::cout << "codebook\tK=" << ck.codebook->cells() << "\tD=" << ck.codebook->dim() << '\n';
        } else if (*tr) {
            train_opt.manifest = manifest;
            if (!checkpoint.empty())
                train_opt.checkpoint = checkpoint;
            cfg.pooling = av::parse_pooling(pooling);
            cfg.seed = seed;
            cfg.threads = threads;
            if (lr) {
                cfg.stage1_lr = *lr;
                cfg.stage2_lr = *lr;
            }
            if (epochs) {
                cfg.stage1_epochs = *epochs;
                cfg.stage2_epochs = *epochs;
            }
            train_opt.load = {av::parse_fusion(fusion), multicrop, stream_b};
            train_opt.out = out;
            train_opt.metrics = metrics;
            auto outcome = av::train(train_opt);
            std::cout << av::format_metrics(outcome.curve);
        } else if (*ev) {
            eval_opt.manifest = manifest;
            eval_opt.checkpoint = checkpoint;
            if (!checkpoint_b.empty())
                eval_opt.checkpoint_b = checkpoint_b;
            eval_opt.split = split_flag(split);
            if (!eval_pooling.empty())
                eval_opt.pooling = av::parse_pooling(eval_pooling);
            if (!eval_fusion.empty())
                eval_opt.fusion = av::parse_fusion(eval_fusion);
            if (!external.empty())
                eval_opt.external_scores = external;
            eval_opt.threads = threads;
            eval_opt.json_out = json_out;
            eval_opt.scores_out = scores_out;
            emit(av::format_report(av::eval(eval_opt)));
        } else if (*ex) {
            export_opt.manifest = manifest;
            export_opt.checkpoint = checkpoint;
            export_opt.split = split_flag(split);
            export_opt.out = out;
            auto grids = av::export_assignments(export_opt);
            std::cout << "videos\t" << grids.size() << '\n';
        } else if (*wc) {
            emit(av::format_word_contributions(av::word_contributions_for_video(video, checkpoint, cls)));
        } else if (*cd) {
            emit(av::format_matrix(av::confusion_diff_files(report_a, report_b)));
        } else if (*fs) {
            emit(av::format_score_file(av::fuse_score_files(scores_a, scores_b, weight, normalize)));
        }
    } catch (const av::Error& e) {
        std::cerr << "error\t" << av::to_string(e.kind()) << '\t' << e.what() << '\n';
        return av::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error\tinternal\t" << e.what() << '\n';
        return 1;
    }
    return 0;
}
