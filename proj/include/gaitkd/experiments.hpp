#pragma once

#include <cmath>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gaitkd/config.hpp"
#include "gaitkd/trainer.hpp"

namespace gaitkd {

// One master seed fans out into independent sub-streams for model
// initialization and batch order. The dataset stays pinned by synth.seed:
// multi-seed sweeps measure training stochasticity on common data, which
// keeps paired comparisons (baseline vs distilled) low-variance.
inline RunConfig apply_master_seed(RunConfig rc, std::uint64_t master) {
    rc.student.init_seed = mix_seed(master, 201);
    for (std::size_t k = 0; k < rc.teachers.size(); ++k)
        rc.teachers[k].init_seed = mix_seed(master, 301 + k);
    rc.train.seed = mix_seed(master, 401);
    rc.teacher_train.seed = mix_seed(master, 402);
    return rc;
}

// Desk-scale default recipe. Calibrated so the distillation effect clears
// run-to-run training noise: a moderately trained teacher (logits stay in a
// softenable range), a student roughly 0.8x of teacher Rank-1 with slack
// capacity, small KD weights against the base losses, and enough probes for
// fine-grained Rank-1.
inline RunConfig default_run_config() {
    RunConfig rc;
    rc.synth.num_ids = 60;
    rc.synth.samples_per_id = 16;
    rc.synth.train_per_id = 8;
    rc.synth.gallery_per_id = 3;
    rc.synth.probe_per_id = 5;
    rc.synth.seq_feature_dim = 48;
    rc.synth.num_parts = 16;
    rc.synth.view_count = 4;
    rc.synth.noise_sigma = 0.45;
    rc.synth.seed = 1234;

    rc.student.num_parts = 4;
    rc.student.hidden_width = 24;
    rc.student.depth = 1;
    rc.student.embed_dim = 12;
    rc.student.init_seed = 11;
    rc.student.input_dim = rc.synth.seq_feature_dim;
    rc.student.num_classes = rc.synth.num_ids;

    ToyModelConfig teacher;
    teacher.num_parts = 8;
    teacher.hidden_width = 48;
    teacher.depth = 2;
    teacher.embed_dim = 24;
    teacher.init_seed = 21;
    teacher.input_dim = rc.synth.seq_feature_dim;
    teacher.num_classes = rc.synth.num_ids;
    rc.teachers = {teacher};

    rc.train.steps = 480;
    rc.train.ids_per_batch = 8;
    rc.train.samples_per_id = 3;
    rc.train.learning_rate = 0.01;
    rc.train.optimizer = OptimizerKind::adam;
    rc.train.seed = 7;

    rc.teacher_train = rc.train;
    rc.teacher_train.steps = 400;
    rc.teacher_train.seed = 8;

    rc.objective.base = {1.0, 1.0, 0.2};
    rc.objective.soft.temperature = 2.0;
    rc.objective.soft.alpha = 1.0;
    rc.objective.boundary.margin = 0.5;
    rc.objective.boundary.layer_weights = {0.0, 1.0};
    rc.objective.lambda_logit = 0.1;
    rc.objective.lambda_bound = 0.05;
    rc.objective.decision_mode = DecisionMode::kl;
    rc.objective.feature_mode = FeatureMode::ab;

    rc.seeds = {1, 2, 3, 4, 5};
    rc.out_dir = "runs/out";
    return apply_master_seed(rc, rc.seeds.front());  // default run == first sweep seed
}

// Teachers and baselines train on the base objective only.
inline HyperParams base_only(HyperParams hp) { return ablation_variant(std::move(hp), "baseline"); }

inline ToyModel train_teacher_run(const RunConfig& rc, const Dataset& ds, std::size_t teacher_idx,
                                  TrainResult* result = nullptr, int threads = 1) {
    require(teacher_idx < rc.teachers.size(), ErrorCode::config, "teacher index out of range");
    ToyModel model = ToyModel::init(rc.teachers[teacher_idx]);
    TrainResult r = train_model(model, ds, base_only(rc.objective), rc.teacher_train, {}, threads);
    if (result) *result = std::move(r);
    return model;
}

inline ToyModel train_baseline_run(const RunConfig& rc, const Dataset& ds,
                                   TrainResult* result = nullptr, int threads = 1) {
    ToyModel model = ToyModel::init(rc.student);
    TrainResult r = train_model(model, ds, base_only(rc.objective), rc.train, {}, threads);
    if (result) *result = std::move(r);
    return model;
}

inline ToyModel distill_run(const RunConfig& rc, const Dataset& ds, std::span<const ToyModel> teachers,
                            TrainResult* result = nullptr, int threads = 1) {
    ToyModel model = ToyModel::init(rc.student);
    TrainResult r = distill_student(model, ds, rc.objective, rc.train, teachers, threads);
    if (result) *result = std::move(r);
    return model;
}

// ---------------------------------------------------------------------------
// result records
// ---------------------------------------------------------------------------

// Table-shaped distillation record: teacher(s), student, Rank-1, gain over
// baseline and the fraction of the teacher-baseline gap recovered.
struct DistillRecord {
    std::string teachers;
    std::string student;
    double teacher_rank1 = 0.0;  // best teacher when several
    double baseline_rank1 = 0.0;
    double student_rank1 = 0.0;

    double gain() const { return student_rank1 - baseline_rank1; }
    double gap_closed_pct() const {
        return gap_closed({teacher_rank1, baseline_rank1, student_rank1});
    }
};

inline std::string distill_record_text(const DistillRecord& rec) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << "teachers=" << rec.teachers << "\n"
       << "student=" << rec.student << "\n"
       << "teacher_rank1=" << rec.teacher_rank1 << "\n"
       << "baseline_rank1=" << rec.baseline_rank1 << "\n"
       << "student_rank1=" << rec.student_rank1 << "\n"
       << "gain=" << rec.gain() << "\n";
    if (rec.teacher_rank1 == rec.baseline_rank1)
        os << "gap_closed_pct=na\n";  // zero teacher-baseline gap
    else
        os << "gap_closed_pct=" << rec.gap_closed_pct() << "\n";
    return os.str();
}

struct VariantStats {
    std::string variant;
    std::vector<double> rank1;  // per seed

    double mean() const {
        double s = 0.0;
        for (double v : rank1) s += v;
        return s / static_cast<double>(rank1.size());
    }
    double stddev() const {
        if (rank1.size() < 2) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (double v : rank1) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<double>(rank1.size() - 1));
    }
    double sem() const { return stddev() / std::sqrt(static_cast<double>(rank1.size())); }
};

// Standard error of a difference of per-seed means.
inline double pooled_se(const VariantStats& a, const VariantStats& b) {
    return std::sqrt(a.sem() * a.sem() + b.sem() * b.sem());
}

inline std::string variant_table_csv(const std::vector<VariantStats>& rows) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "variant,mean_rank1,stddev,sem,per_seed\n";
    for (const auto& r : rows) {
        os << r.variant << ',' << r.mean() << ',' << r.stddev() << ',' << r.sem() << ',';
        for (std::size_t i = 0; i < r.rank1.size(); ++i) os << (i ? ";" : "") << r.rank1[i];
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// multi-seed sweeps (shared by the CLI and the acceptance experiments)
// ---------------------------------------------------------------------------

struct SweepOutcome {
    VariantStats teacher;   // best-teacher Rank-1 per seed
    VariantStats baseline;  // student baseline per seed
    std::map<std::string, VariantStats> variants;
};

// For each master seed: regenerate data, train teachers and the student
// baseline once, then distill each requested variant from the same frozen
// teachers. Everything derives deterministically from the master seed.
inline SweepOutcome run_variant_sweep(const RunConfig& base_cfg, std::span<const std::string> variants,
                                      int threads = 1, std::ostream* log = nullptr) {
    SweepOutcome out;
    out.teacher.variant = "teacher";
    out.baseline.variant = "baseline";
    for (const auto& v : variants) out.variants[v].variant = v;

    for (std::uint64_t master : base_cfg.seeds) {
        const RunConfig rc = apply_master_seed(base_cfg, master);
        const Dataset ds = generate_dataset(rc.synth);

        std::vector<ToyModel> teachers;
        double best_teacher_r1 = 0.0;
        for (std::size_t k = 0; k < rc.teachers.size(); ++k) {
            TrainResult tr;
            teachers.push_back(train_teacher_run(rc, ds, k, &tr, threads));
            best_teacher_r1 = std::max(best_teacher_r1, tr.final_eval.rank1);
        }
        out.teacher.rank1.push_back(best_teacher_r1);

        TrainResult br;
        train_baseline_run(rc, ds, &br, threads);
        out.baseline.rank1.push_back(br.final_eval.rank1);

        for (const auto& v : variants) {
            RunConfig vc = rc;
            vc.objective = ablation_variant(vc.objective, v);
            double r1;
            if (v == "baseline") {
                r1 = br.final_eval.rank1;  // identical configuration; reuse
            } else {
                TrainResult dr;
                distill_run(vc, ds, teachers, &dr, threads);
                r1 = dr.final_eval.rank1;
            }
            out.variants[v].rank1.push_back(r1);
            if (log)
                (*log) << "seed " << master << " variant " << v << " rank1 " << r1 << " (teacher "
                       << best_teacher_r1 << ", baseline " << br.final_eval.rank1 << ")\n";
        }
    }
    return out;
}

}  // namespace gaitkd
