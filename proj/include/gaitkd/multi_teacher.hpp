#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "gaitkd/distill_boundary.hpp"
#include "gaitkd/distill_decision.hpp"

namespace gaitkd {

struct TeacherOutput {
    PartLogits logits;
    PartEmbeddings emb;
    std::optional<PartEmbeddings> intermediate;  // penultimate layer, for multi-layer AB
};

// Frozen teacher outputs, already aligned to a common (B, C, P). Embedding
// dims may vary per teacher.
struct TeacherBank {
    std::vector<TeacherOutput> teachers;

    std::size_t size() const { return teachers.size(); }
    bool empty() const { return teachers.empty(); }
    const TeacherOutput& operator[](std::size_t k) const { return teachers[k]; }

    void validate() const {
        require(!teachers.empty(), ErrorCode::config, "teacher bank is empty");
        const Tensor& ref = teachers[0].logits.data;
        for (const auto& t : teachers) {
            require(t.logits.data.same_shape(ref), ErrorCode::shape,
                    "teacher bank: inconsistent logit shapes");
            require(t.emb.batch() == teachers[0].emb.batch() && t.emb.parts() == teachers[0].emb.parts(),
                    ErrorCode::shape, "teacher bank: inconsistent embedding batch/part dims");
        }
    }
};

enum class WeightMode { uniform, entropy };

struct WeightPolicy {
    WeightMode mode = WeightMode::uniform;
    double tau = 1.0;  // entropy sharpness, entropy mode only

    void validate() const {
        if (mode == WeightMode::entropy)
            require(std::isfinite(tau) && tau > 0.0, ErrorCode::config, "tau must be > 0");
    }
};

// Per-teacher, per-(sample, part) weights, shape (K, B, P). Rows over k sum
// to 1. Entropy mode sharpens toward low-entropy (confident) teachers.
inline Tensor teacher_weights(const TeacherBank& bank, const SoftDistParams& sp,
                              const WeightPolicy& policy) {
    bank.validate();
    policy.validate();
    const std::size_t K = bank.size();
    const std::size_t B = bank[0].logits.batch(), C = bank[0].logits.classes(),
                      P = bank[0].logits.parts();
    Tensor w(Shape{K, B, P});
    if (policy.mode == WeightMode::uniform) {
        w.fill(1.0 / static_cast<double>(K));
        return w;
    }
    std::vector<Tensor> softened;
    softened.reserve(K);
    for (std::size_t k = 0; k < K; ++k) softened.push_back(soften(bank[k].logits, sp));
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t p = 0; p < P; ++p) {
            std::vector<double> score(K);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                double h = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double q = softened[k](i, c, p);
                    h -= q == 0.0 ? 0.0 : q * std::log(q);
                }
                score[k] = -policy.tau * h;
                mx = std::max(mx, score[k]);
            }
            double z = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                score[k] = std::exp(score[k] - mx);
                z += score[k];
            }
            for (std::size_t k = 0; k < K; ++k) w(k, i, p) = score[k] / z;
        }
    return w;
}

// Ensemble teacher distribution q_T = sum_k w_k q_{t_k}, shape (B, C, P).
inline Tensor ensemble_distribution(const TeacherBank& bank, const SoftDistParams& sp,
                                    const WeightPolicy& policy) {
    const Tensor w = teacher_weights(bank, sp, policy);
    const std::size_t K = bank.size();
    const std::size_t B = bank[0].logits.batch(), C = bank[0].logits.classes(),
                      P = bank[0].logits.parts();
    Tensor out(Shape{B, C, P});
    for (std::size_t k = 0; k < K; ++k) {
        Tensor q = soften(bank[k].logits, sp);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) out(i, c, p) += w(k, i, p) * q(i, c, p);
    }
    return out;
}

namespace detail {
inline std::size_t common_emb_dim(const TeacherBank& bank) {
    std::size_t d = bank[0].emb.dim();
    for (const auto& t : bank.teachers) d = std::min(d, t.emb.dim());
    return d;
}
}  // namespace detail

// Weighted per-coordinate sign vote over teacher embeddings. Teachers with
// differing embedding dims are cropped to the common min dimension. Exact
// ties resolve to -1, consistent with the e_t <= 0 convention.
inline SignTensor sign_vote(const TeacherBank& bank, const Tensor& weights) {
    bank.validate();
    const std::size_t K = bank.size();
    require(weights.rank() == 3 && weights.dim(0) == K, ErrorCode::shape,
            "sign_vote: weights must be (K,B,P)");
    const std::size_t B = bank[0].emb.batch(), P = bank[0].emb.parts();
    require(weights.dim(1) == B && weights.dim(2) == P, ErrorCode::shape,
            "sign_vote: weights (B,P) mismatch");
    const std::size_t D = detail::common_emb_dim(bank);
    Tensor out(Shape{B, D, P});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t p = 0; p < P; ++p) {
                double vote = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    const double sgn = bank[k].emb.data(i, d, p) > 0.0 ? 1.0 : -1.0;
                    vote += weights(k, i, p) * sgn;
                }
                out(i, d, p) = vote > 0.0 ? 1.0 : -1.0;
            }
    return SignTensor{std::move(out)};
}

// Per-(sample, part) argmax of teacher weights; ties break to the smallest
// teacher index. Shape (B, P), entries are teacher indices.
inline std::vector<std::size_t> strongest_teacher_select(const TeacherBank& bank, const Tensor& weights) {
    bank.validate();
    const std::size_t K = bank.size();
    const std::size_t B = weights.dim(1), P = weights.dim(2);
    std::vector<std::size_t> out(B * P, 0);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t p = 0; p < P; ++p) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (weights(k, i, p) > weights(best, i, p)) best = k;
            out[i * P + p] = best;
        }
    return out;
}

// Boundary gate from the per-(i,p) strongest teacher's signs.
inline SignTensor strongest_teacher_signs(const TeacherBank& bank, const Tensor& weights) {
    const auto sel = strongest_teacher_select(bank, weights);
    const std::size_t B = bank[0].emb.batch(), P = bank[0].emb.parts();
    const std::size_t D = detail::common_emb_dim(bank);
    Tensor out(Shape{B, D, P});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t p = 0; p < P; ++p) {
            const auto& emb = bank[sel[i * P + p]].emb.data;
            for (std::size_t d = 0; d < D; ++d) out(i, d, p) = emb(i, d, p) > 0.0 ? 1.0 : -1.0;
        }
    return SignTensor{std::move(out)};
}

// Mean-Teacher baseline: averages the per-teacher composite distillation
// losses instead of aggregating teacher signals.
inline double mean_teacher_loss(const PartLogits& student_logits, const PartEmbeddings& student_emb,
                                const TeacherBank& bank, const SoftDistParams& sp, double lambda_logit,
                                double lambda_bound, double margin, DimAlign dim_align) {
    bank.validate();
    double total = 0.0;
    for (const auto& teacher : bank.teachers) {
        double term = 0.0;
        if (lambda_logit > 0.0) term += lambda_logit * kl_loss(student_logits, teacher.logits, sp);
        if (lambda_bound > 0.0) {
            auto [se, te] = align_dims(student_emb, teacher.emb, dim_align);
            term += lambda_bound * ab_loss(se, te, margin);
        }
        total += term;
    }
    return total / static_cast<double>(bank.size());
}

}  // namespace gaitkd
