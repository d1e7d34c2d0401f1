#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gaitkd/checkpoint.hpp"
#include "gaitkd/eval_metrics.hpp"
#include "gaitkd/objective.hpp"
#include "gaitkd/synth.hpp"
#include "gaitkd/toy_model.hpp"

namespace gaitkd {

enum class OptimizerKind { sgd, sgd_momentum, adam };

struct TrainConfig {
    int steps = 400;
    int ids_per_batch = 8;      // P of PK sampling
    int samples_per_id = 2;     // K of PK sampling
    double learning_rate = 0.02;
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;      // sgd_momentum only
    std::uint64_t seed = 7;
    int eval_every = 0;         // 0: evaluate only after the last step

    void validate() const {
        require(steps >= 0, ErrorCode::config, "steps must be >= 0");
        require(ids_per_batch >= 2, ErrorCode::config, "ids_per_batch must be >= 2");
        require(samples_per_id >= 2, ErrorCode::config,
                "samples_per_id must be >= 2 (triplet mining needs positives)");
        require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorCode::config,
                "learning_rate must be >= 0");
        require(eval_every >= 0, ErrorCode::config, "eval_every must be >= 0");
    }
};

struct StepRecord {
    int step = 0;
    LossBreakdown breakdown;
};

struct EvalPoint {
    int step = 0;
    EvalReport report;
};

struct TrainResult {
    std::vector<StepRecord> history;
    std::vector<EvalPoint> evals;
    EvalReport final_eval;
};

namespace detail {

// PK batch sampler: ids_per_batch distinct identities, samples_per_id
// distinct train samples each, guaranteeing triplet mining preconditions.
class PkSampler {
public:
    PkSampler(const Dataset& ds, const TrainConfig& tc) : tc_(tc), rng_(mix_seed(tc.seed, 0xba7c4)) {
        per_id_.resize(ds.num_classes());
        for (auto idx : ds.train_idx) per_id_[static_cast<std::size_t>(ds.samples[idx].label)].push_back(idx);
        require(static_cast<std::size_t>(tc.ids_per_batch) <= per_id_.size(), ErrorCode::config,
                "ids_per_batch exceeds identity count");
        for (std::size_t c = 0; c < per_id_.size(); ++c)
            require(per_id_[c].size() >= static_cast<std::size_t>(tc.samples_per_id), ErrorCode::config,
                    "identity " + std::to_string(c) + " has too few train samples for PK sampling");
        ids_.resize(per_id_.size());
        for (std::size_t c = 0; c < ids_.size(); ++c) ids_[c] = c;
    }

    std::vector<std::size_t> next_batch() {
        // partial Fisher-Yates for distinct ids
        for (int j = 0; j < tc_.ids_per_batch; ++j) {
            const std::size_t k = static_cast<std::size_t>(j) + rng_.index(ids_.size() - static_cast<std::size_t>(j));
            std::swap(ids_[static_cast<std::size_t>(j)], ids_[k]);
        }
        std::vector<std::size_t> batch;
        batch.reserve(static_cast<std::size_t>(tc_.ids_per_batch * tc_.samples_per_id));
        for (int j = 0; j < tc_.ids_per_batch; ++j) {
            auto& pool = per_id_[ids_[static_cast<std::size_t>(j)]];
            for (int s = 0; s < tc_.samples_per_id; ++s) {
                const std::size_t k = static_cast<std::size_t>(s) + rng_.index(pool.size() - static_cast<std::size_t>(s));
                std::swap(pool[static_cast<std::size_t>(s)], pool[k]);
            }
            for (int s = 0; s < tc_.samples_per_id; ++s) batch.push_back(pool[static_cast<std::size_t>(s)]);
        }
        return batch;
    }

private:
    TrainConfig tc_;
    Rng rng_;
    std::vector<std::vector<std::size_t>> per_id_;
    std::vector<std::size_t> ids_;
};

class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, double momentum) : kind_(kind), lr_(lr), momentum_(momentum) {}

    void step(std::vector<std::pair<std::string, Tensor*>>& params, const std::vector<Tensor>& grads) {
        if (m_.empty()) {
            for (auto& [name, p] : params) {
                m_.push_back(zeros_like(*p));
                v_.push_back(zeros_like(*p));
            }
        }
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i].second;
            const Tensor& g = grads[i];
            switch (kind_) {
                case OptimizerKind::sgd:
                    for (std::size_t j = 0; j < p.numel(); ++j) p[j] -= lr_ * g[j];
                    break;
                case OptimizerKind::sgd_momentum:
                    for (std::size_t j = 0; j < p.numel(); ++j) {
                        m_[i][j] = momentum_ * m_[i][j] + g[j];
                        p[j] -= lr_ * m_[i][j];
                    }
                    break;
                case OptimizerKind::adam: {
                    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
                    for (std::size_t j = 0; j < p.numel(); ++j) {
                        m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g[j];
                        v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g[j] * g[j];
                        p[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps);
                    }
                    break;
                }
            }
        }
    }

private:
    OptimizerKind kind_;
    double lr_;
    double momentum_;
    double t_ = 0.0;
    std::vector<Tensor> m_, v_;
};

}  // namespace detail

// Trains the model on the dataset's train split. Teachers, when present, are
// evaluated forward-only on each batch; their parameters never change.
// Deterministic for fixed (dataset, config, seed) and any thread count.
inline TrainResult train_model(ToyModel& model, const Dataset& ds, const HyperParams& hp,
                               const TrainConfig& tc, std::span<const ToyModel> teachers,
                               int threads = 1) {
    tc.validate();
    hp.validate();
    require(model.parts.size() <= ds.parts(), ErrorCode::config,
            "student part count exceeds dataset parts");
    for (const auto& t : teachers)
        require(t.parts.size() <= ds.parts(), ErrorCode::config,
                "teacher part count exceeds dataset parts");

    detail::PkSampler sampler(ds, tc);
    detail::Optimizer opt(tc.optimizer, tc.learning_rate, tc.momentum);
    TrainResult result;
    result.history.reserve(static_cast<std::size_t>(tc.steps));

    for (int step = 0; step < tc.steps; ++step) {
        const std::vector<std::size_t> batch = sampler.next_batch();
        const LabelVector labels(gather_labels(ds, batch));
        const Tensor student_in = gather_batch_inputs(ds, batch, model.parts.size());

        std::vector<TeacherOutput> teacher_out;
        teacher_out.reserve(teachers.size());
        for (const auto& teacher : teachers) {
            const Tensor tin = gather_batch_inputs(ds, batch, teacher.parts.size());
            teacher_out.push_back(forward_teacher(teacher, tin));
        }

        try {
            grad::Tape tape;
            std::vector<grad::Var> param_vars;
            StudentTapeOutputs outputs = forward_model_tape(tape, model, student_in, param_vars);
            ObjectiveTapeResult obj = total_loss_tape(tape, outputs, labels, teacher_out, hp);
            tape.backward(obj.total);

            auto params = model.named_params();
            std::vector<Tensor> grads;
            grads.reserve(params.size());
            for (auto& v : param_vars) grads.push_back(v.grad());
            if (tc.learning_rate > 0.0) opt.step(params, grads);

            result.history.push_back({step, obj.breakdown});
        } catch (const Error& e) {
            if (e.code() == ErrorCode::numeric)
                fail(ErrorCode::training,
                     "divergence at step " + std::to_string(step) + ": " + e.what());
            throw;
        }

        if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0)
            result.evals.push_back({step + 1, evaluate(build_index(model, ds), threads)});
    }
    result.final_eval = evaluate(build_index(model, ds), threads);
    return result;
}

// Distillation entry point: a populated teacher bank wrapped around the same
// loop. Class-count incompatibilities are rejected up front.
inline TrainResult distill_student(ToyModel& student, const Dataset& ds, const HyperParams& hp,
                                   const TrainConfig& tc, std::span<const ToyModel> teachers,
                                   int threads = 1) {
    for (const auto& t : teachers)
        require(t.cfg.num_classes == student.cfg.num_classes, ErrorCode::io,
                "teacher checkpoint class count " + std::to_string(t.cfg.num_classes) +
                    " does not match student " + std::to_string(student.cfg.num_classes));
    return train_model(student, ds, hp, tc, teachers, threads);
}

// Bit-stable serialization of the loss history, used by determinism checks.
inline std::string history_csv(const TrainResult& r) {
    std::ostringstream os;
    os.precision(17);
    os << "step,total,ce,tri,decision,feature,tckd,nckd\n";
    for (const auto& rec : r.history) {
        const auto& b = rec.breakdown;
        os << rec.step << ',' << b.total << ',' << b.ce << ',' << b.tri << ',' << b.decision << ','
           << b.feature << ',' << b.tckd << ',' << b.nckd << "\n";
    }
    return os.str();
}

}  // namespace gaitkd
