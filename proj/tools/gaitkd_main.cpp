// gaitkd: part-structured distillation benchmark CLI.
//
// Verbs: gen, train-teacher, train-baseline, distill, eval, gradcheck,
// ablate, dump-embeddings. Every run is deterministic given its config file
// and seeds. Exit codes: 0 success, 2 config, 3 io, 4 numeric, 5 training.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gaitkd/checkpoint.hpp"
#include "gaitkd/config.hpp"
#include "gaitkd/eval_metrics.hpp"
#include "gaitkd/experiments.hpp"
#include "gaitkd/gradient_audit.hpp"
#include "gaitkd/trainer.hpp"

namespace fs = std::filesystem;
using namespace gaitkd;

namespace {

int exit_code(ErrorCode c) {
    switch (c) {
        case ErrorCode::config: return 2;
        case ErrorCode::io: return 3;
        case ErrorCode::training: return 5;
        default: return 4;
    }
}

struct CliArgs {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool has_seed = false;
    int threads = 0;
    std::string checkpoint;
    std::vector<std::string> teacher_ckpts;
    double baseline_rank1 = std::numeric_limits<double>::quiet_NaN();
    int teacher_index = 0;
    int points = 100;
    double eps = 1e-5;
    std::string variants;
};

int resolve_threads(const CliArgs& a) {
    if (a.threads > 0) return a.threads;
    if (const char* env = std::getenv("GAITKD_THREADS")) {
        const int t = std::atoi(env);
        if (t > 0) return t;
    }
    return 1;
}

std::string resolve_out(const CliArgs& a, const RunConfig& rc) {
    std::string out = !a.out.empty() ? a.out
                      : std::getenv("GAITKD_OUT") ? std::string(std::getenv("GAITKD_OUT"))
                                                  : rc.out_dir;
    std::error_code ec;
    fs::create_directories(out, ec);
    require(!ec, ErrorCode::io, "cannot create output directory " + out);
    return out;
}

RunConfig load_config(const CliArgs& a) {
    require(!a.config.empty(), ErrorCode::config, "--config is required for this command");
    RunConfig rc = load_run_config(a.config);
    if (a.has_seed) rc = apply_master_seed(rc, a.seed);
    return rc;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    require(f.good(), ErrorCode::io, "cannot open " + path + " for writing");
    f << content;
    require(f.good(), ErrorCode::io, "write failed for " + path);
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string dataset_csv(const Dataset& ds) {
    std::ostringstream os;
    os << "idx,label,view,split";
    for (std::size_t f = 0; f < ds.feature_dim(); ++f) os << ",f" << f;
    os << "\n";
    auto split_of = [&ds](std::size_t idx) {
        for (auto i : ds.train_idx)
            if (i == idx) return "train";
        for (auto i : ds.gallery_idx)
            if (i == idx) return "gallery";
        return "probe";
    };
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        os << i << ',' << s.label << ',' << s.view << ',' << split_of(i);
        for (std::size_t f = 0; f < ds.feature_dim(); ++f) os << ',' << format_g17(s.raw[f]);
        os << "\n";
    }
    return os.str();
}

std::string manifest_text(const RunConfig& rc, const Dataset& ds) {
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016" PRIx64, config_hash(rc));
    std::ostringstream os;
    os << "config_hash=" << hash << "\n"
       << "seed=" << rc.synth.seed << "\n"
       << "samples=" << ds.samples.size() << "\n"
       << "train=" << ds.train_idx.size() << "\n"
       << "gallery=" << ds.gallery_idx.size() << "\n"
       << "probe=" << ds.probe_idx.size() << "\n";
    return os.str();
}

double read_rank1_from_report(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorCode::io, "cannot open baseline report " + path);
    std::string line;
    while (std::getline(f, line))
        if (line.rfind("rank1=", 0) == 0) return std::stod(line.substr(6));
    fail(ErrorCode::io, "no rank1= entry in " + path);
}

void write_eval_artifacts(const std::string& out, const std::string& stem, const EvalReport& rep) {
    write_text(out + "/" + stem + "_report.txt", report_keyvalue(rep));
    write_text(out + "/" + stem + "_detail.csv", report_detail_csv(rep));
}

// --- commands ---

int cmd_gen(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    Dataset ds = generate_dataset(rc.synth);
    write_text(out + "/dataset.csv", dataset_csv(ds));
    write_text(out + "/manifest.txt", manifest_text(rc, ds));
    std::cout << manifest_text(rc, ds);
    return 0;
}

int cmd_train_teacher(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    const int threads = resolve_threads(a);
    Dataset ds = generate_dataset(rc.synth);
    TrainResult tr;
    ToyModel model = train_teacher_run(rc, ds, static_cast<std::size_t>(a.teacher_index), &tr, threads);
    const std::string ckpt = out + "/teacher" + std::to_string(a.teacher_index) + ".ckpt";
    save_checkpoint(model, ckpt);
    write_eval_artifacts(out, "teacher" + std::to_string(a.teacher_index), tr.final_eval);
    write_text(out + "/teacher" + std::to_string(a.teacher_index) + "_history.csv", history_csv(tr));
    std::cout << "checkpoint=" << ckpt << "\n" << report_keyvalue(tr.final_eval);
    return 0;
}

int cmd_train_baseline(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    const int threads = resolve_threads(a);
    Dataset ds = generate_dataset(rc.synth);
    TrainResult tr;
    ToyModel model = train_baseline_run(rc, ds, &tr, threads);
    const std::string ckpt = out + "/baseline.ckpt";
    save_checkpoint(model, ckpt);
    write_eval_artifacts(out, "baseline", tr.final_eval);
    write_text(out + "/baseline_history.csv", history_csv(tr));
    std::cout << "checkpoint=" << ckpt << "\n" << report_keyvalue(tr.final_eval);
    return 0;
}

int cmd_distill(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    const int threads = resolve_threads(a);
    Dataset ds = generate_dataset(rc.synth);

    std::vector<std::string> paths = a.teacher_ckpts;
    if (paths.empty())
        for (std::size_t k = 0; k < rc.teachers.size(); ++k)
            paths.push_back(out + "/teacher" + std::to_string(k) + ".ckpt");
    require(!paths.empty(), ErrorCode::config, "no teachers configured");

    std::vector<ToyModel> teachers;
    std::string teacher_names;
    double best_teacher_r1 = 0.0;
    for (const auto& p : paths) {
        ToyModel t = load_checkpoint(p);
        require(t.cfg.num_classes == rc.synth.num_ids, ErrorCode::io,
                "teacher checkpoint " + p + " has class count " + std::to_string(t.cfg.num_classes) +
                    ", dataset has " + std::to_string(rc.synth.num_ids));
        EvalReport rep = evaluate(build_index(t, ds), threads);
        best_teacher_r1 = std::max(best_teacher_r1, rep.rank1);
        teacher_names += (teacher_names.empty() ? "" : "+") + fs::path(p).stem().string();
        teachers.push_back(std::move(t));
    }

    const double baseline_r1 = std::isnan(a.baseline_rank1)
                                   ? read_rank1_from_report(out + "/baseline_report.txt")
                                   : a.baseline_rank1;

    TrainResult tr;
    ToyModel student = distill_run(rc, ds, teachers, &tr, threads);
    const std::string ckpt = out + "/student.ckpt";
    save_checkpoint(student, ckpt);
    write_eval_artifacts(out, "student", tr.final_eval);
    write_text(out + "/student_history.csv", history_csv(tr));

    DistillRecord rec;
    rec.teachers = teacher_names;
    rec.student = "student";
    rec.teacher_rank1 = best_teacher_r1;
    rec.baseline_rank1 = baseline_r1;
    rec.student_rank1 = tr.final_eval.rank1;
    write_text(out + "/distill_record.txt", distill_record_text(rec));
    std::cout << "checkpoint=" << ckpt << "\n" << distill_record_text(rec);
    return 0;
}

int cmd_eval(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    const int threads = resolve_threads(a);
    require(!a.checkpoint.empty(), ErrorCode::config, "--checkpoint is required for eval");
    Dataset ds = generate_dataset(rc.synth);
    ToyModel model = load_checkpoint(a.checkpoint);
    EvalReport rep = evaluate(build_index(model, ds), threads);
    write_eval_artifacts(out, "eval", rep);
    std::cout << report_keyvalue(rep);
    return 0;
}

int cmd_gradcheck(const CliArgs& a) {
    const int threads = resolve_threads(a);
    const std::uint64_t seed = a.has_seed ? a.seed : 20240901;
    auto specs = default_audit_registry(a.eps);
    auto results = run_gradient_audit(specs, static_cast<std::size_t>(a.points), a.eps, seed, threads);
    std::cout << "registered losses:";
    for (const auto& s : specs) std::cout << ' ' << s.name;
    std::cout << "\n" << audit_report_text(results);

    // closed-form decision gradient vs the tape, on fresh random instances
    Rng rng(mix_seed(seed, 0xc105ed));
    double worst = 0.0;
    for (int i = 0; i < a.points; ++i) {
        SoftDistParams sp{1.0 + rng.uniform(0.0, 3.0), 0.5 + rng.uniform(0.0, 1.5)};
        PartLogits s(rng.normal_tensor(Shape{3, 4, 2}));
        PartLogits t(rng.normal_tensor(Shape{3, 4, 2}));
        worst = std::max(worst, max_abs_diff(kl_grad_closed_form(s, t, sp), kl_grad_tape(s, t, sp)));
    }
    const bool closed_ok = worst <= 1e-10;
    std::cout << (closed_ok ? "[PASS] " : "[FAIL] ") << "kl_closed_form_vs_tape: " << a.points
              << " instances, worst abs diff " << worst << "\n";

    bool all = closed_ok;
    for (const auto& r : results) all = all && r.pass;
    if (!all) {
        std::cerr << "gradient audit failed\n";
        return 4;
    }
    return 0;
}

int cmd_ablate(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    const int threads = resolve_threads(a);

    std::vector<std::string> variants;
    if (a.variants.empty()) {
        variants = ablation_variant_names();
    } else {
        std::istringstream is(a.variants);
        std::string v;
        while (std::getline(is, v, ',')) variants.push_back(v);
        for (const auto& v : variants) (void)ablation_variant(rc.objective, v);  // validate names
    }

    SweepOutcome sweep = run_variant_sweep(rc, variants, threads, &std::cout);
    std::vector<VariantStats> rows{sweep.teacher, sweep.baseline};
    for (const auto& v : variants) rows.push_back(sweep.variants.at(v));
    const std::string table = variant_table_csv(rows);
    write_text(out + "/ablation.csv", table);
    std::cout << table;
    return 0;
}

int cmd_dump_embeddings(const CliArgs& a) {
    RunConfig rc = load_config(a);
    const std::string out = resolve_out(a, rc);
    require(!a.checkpoint.empty(), ErrorCode::config, "--checkpoint is required for dump-embeddings");
    Dataset ds = generate_dataset(rc.synth);
    ToyModel model = load_checkpoint(a.checkpoint);
    Tensor in = gather_batch_inputs(ds, ds.probe_idx, model.parts.size());
    Tensor flat = flatten_embeddings(forward_model(model, in).emb);
    std::vector<int> labels = gather_labels(ds, ds.probe_idx);

    std::ostringstream os;
    for (std::size_t c = 0; c < flat.dim(1); ++c) os << "e" << c << ',';
    os << "label\n";
    for (std::size_t i = 0; i < flat.dim(0); ++i) {
        for (std::size_t c = 0; c < flat.dim(1); ++c) os << format_g17(flat(i, c)) << ',';
        os << labels[i] << "\n";
    }
    write_text(out + "/embeddings.csv", os.str());
    std::cout << "rows=" << flat.dim(0) << "\ncols=" << flat.dim(1) + 1 << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gaitkd: part-aligned decision- and boundary-level distillation benchmark"};
    app.require_subcommand(1);
    CliArgs args;

    auto add_common = [&args](CLI::App* cmd, bool config_required) {
        auto* opt = cmd->add_option("--config", args.config, "run config file (JSON)");
        if (config_required) opt->required();
        cmd->add_option("--out", args.out, "output directory (overrides config out_dir)");
        cmd->add_option("--seed", args.seed, "master seed override")->each([&args](std::string) {
            args.has_seed = true;
        });
        cmd->add_option("--threads", args.threads, "worker thread count");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate the dataset and write CSV + manifest");
    add_common(gen, true);

    CLI::App* tt = app.add_subcommand("train-teacher", "train one configured teacher, save checkpoint");
    add_common(tt, true);
    tt->add_option("--teacher-index", args.teacher_index, "which configured teacher to train");

    CLI::App* tb = app.add_subcommand("train-baseline", "train the student without distillation");
    add_common(tb, true);

    CLI::App* di = app.add_subcommand("distill", "distill the student from teacher checkpoints");
    add_common(di, true);
    di->add_option("--teacher", args.teacher_ckpts, "teacher checkpoint path (repeatable)");
    di->add_option("--baseline-rank1", args.baseline_rank1,
                   "baseline Rank-1 (otherwise read from <out>/baseline_report.txt)");

    CLI::App* ev = app.add_subcommand("eval", "student-only evaluation of a checkpoint");
    add_common(ev, true);
    ev->add_option("--checkpoint", args.checkpoint, "model checkpoint")->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference audit of every registered loss");
    add_common(gc, false);
    gc->add_option("--points", args.points, "random instances per loss");
    gc->add_option("--eps", args.eps, "central-difference step");

    CLI::App* ab = app.add_subcommand("ablate", "sweep objective variants over the config seeds");
    add_common(ab, true);
    ab->add_option("--variants", args.variants, "comma-separated variant names (default: all)");

    CLI::App* de = app.add_subcommand("dump-embeddings", "write probe embeddings + labels as CSV");
    add_common(de, true);
    de->add_option("--checkpoint", args.checkpoint, "model checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(args);
        if (tt->parsed()) return cmd_train_teacher(args);
        if (tb->parsed()) return cmd_train_baseline(args);
        if (di->parsed()) return cmd_distill(args);
        if (ev->parsed()) return cmd_eval(args);
        if (gc->parsed()) return cmd_gradcheck(args);
        if (ab->parsed()) return cmd_ablate(args);
        if (de->parsed()) return cmd_dump_embeddings(args);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
