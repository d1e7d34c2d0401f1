#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "gaitkd/losses_base.hpp"

namespace gaitkd {

struct SoftDistParams {
    double temperature = 1.0;  // T
    double alpha = 1.0;        // logit scaling

    void validate() const {
        require(std::isfinite(temperature) && temperature > 0.0, ErrorCode::config, "T must be > 0");
        require(std::isfinite(alpha) && alpha > 0.0, ErrorCode::config, "alpha must be > 0");
    }
};

// gamma = +inf selects exact target-class exclusion; finite gamma keeps the
// additive-mask formulation and must be large.
struct DkdParams {
    double alpha_d = 1.0;
    double beta_d = 1.0;
    double gamma = std::numeric_limits<double>::infinity();

    void validate() const {
        require(std::isfinite(alpha_d) && alpha_d >= 0.0, ErrorCode::config, "alpha_d must be >= 0");
        require(std::isfinite(beta_d) && beta_d >= 0.0, ErrorCode::config, "beta_d must be >= 0");
        require(gamma > 0.0 && (std::isinf(gamma) || gamma >= 30.0), ErrorCode::config,
                "gamma must be +inf or a finite constant >= 30");
    }
};

namespace detail {

constexpr double kLogGuard = 1e-12;

inline double guarded_log(double x) { return std::log(std::max(x, kLogGuard)); }

inline void check_logit_pair(const PartLogits& s, const PartLogits& t) {
    require(s.data.same_shape(t.data), ErrorCode::shape,
            "student/teacher logits differ: " + shape_str(s.data.shape()) + " vs " +
                shape_str(t.data.shape()));
}

// sum_i q(i) log q(i) over a row, treating exact zeros as contributing zero
inline double neg_entropy_row(const double* q, std::size_t n) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += q[c] == 0.0 ? 0.0 : q[c] * guarded_log(q[c]);
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// softened distributions
// ---------------------------------------------------------------------------

// Part-wise softened distribution softmax(alpha * z / T), shape (B,C,P).
inline Tensor soften(const PartLogits& logits, const SoftDistParams& sp) {
    sp.validate();
    const double scale = sp.alpha / sp.temperature;
    const std::size_t B = logits.batch(), C = logits.classes(), P = logits.parts();
    Tensor out(Shape{B, C, P});
    for (std::size_t p = 0; p < P; ++p) {
        Tensor m = part_slice(logits, p);
        for (std::size_t i = 0; i < m.numel(); ++i) m[i] *= scale;
        detail::softmax_rows(m);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t c = 0; c < C; ++c) out(i, c, p) = m(i, c);
    }
    return out;
}

// Softened distribution with the ground-truth class excluded. Infinite gamma
// removes the class exactly (probability 0); finite gamma subtracts gamma
// from the target logit before the softmax.
inline Tensor masked_soften(const PartLogits& logits, const LabelVector& labels,
                            const SoftDistParams& sp, double gamma) {
    sp.validate();
    const std::size_t B = logits.batch(), C = logits.classes(), P = logits.parts();
    labels.validate(B, C);
    const double scale = sp.alpha / sp.temperature;
    Tensor out(Shape{B, C, P});
    for (std::size_t p = 0; p < P; ++p) {
        Tensor m = part_slice(logits, p);
        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t y = static_cast<std::size_t>(labels[i]);
            for (std::size_t c = 0; c < C; ++c) m(i, c) *= scale;
            if (std::isinf(gamma)) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < C; ++c)
                    if (c != y) mx = std::max(mx, m(i, c));
                double s = 0.0;
                for (std::size_t c = 0; c < C; ++c) {
                    double e = c == y ? 0.0 : std::exp(m(i, c) - mx);
                    m(i, c) = e;
                    s += e;
                }
                for (std::size_t c = 0; c < C; ++c) m(i, c) /= s;
            } else {
                m(i, y) -= gamma;
            }
        }
        if (!std::isinf(gamma)) detail::softmax_rows(m);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t c = 0; c < C; ++c) out(i, c, p) = m(i, c);
    }
    return out;
}

// Two-class collapse [q(y), sum_{c != y} q(c)] of a probability row.
inline Tensor collapse_binary(const Tensor& q, int y) {
    require(q.rank() == 1, ErrorCode::shape, "collapse_binary expects a probability vector");
    require(y >= 0 && static_cast<std::size_t>(y) < q.numel(), ErrorCode::label,
            "target class out of range");
    double rest = 0.0;
    for (std::size_t c = 0; c < q.numel(); ++c)
        if (c != static_cast<std::size_t>(y)) rest += q[c];
    Tensor out(Shape{2});
    out[0] = q[static_cast<std::size_t>(y)];
    out[1] = rest;
    return out;
}

// ---------------------------------------------------------------------------
// tape builders (teacher enters as a fixed probability tensor, which also
// serves the multi-teacher ensemble path)
// ---------------------------------------------------------------------------

// Part-normalized KL: (T^2 / BP) sum_{p,i} KL(q_t || q_s).
inline grad::Var kl_vs_probs_tape(grad::Tape& t, grad::Var logits3, const Tensor& teacher_probs,
                                  const SoftDistParams& sp) {
    sp.validate();
    const Tensor& v = logits3.value();
    require(v.rank() == 3, ErrorCode::shape, "kl: logits must be (B,C,P)");
    require(v.same_shape(teacher_probs), ErrorCode::shape,
            "kl: teacher probability tensor shape mismatch");
    const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2);
    const double scale = sp.alpha / sp.temperature;

    std::vector<grad::Var> parts;
    parts.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        Tensor qt = part_slice(teacher_probs, p);
        double entropy_term = 0.0;
        for (std::size_t i = 0; i < B; ++i) entropy_term += detail::neg_entropy_row(qt.data() + i * C, C);
        grad::Var qs = grad::softmax_lastdim(grad::mul_scalar(grad::slice_part(logits3, p), scale));
        grad::Var cross = grad::sum_all(grad::mul(t.constant(std::move(qt)), grad::log_guarded(qs)));
        parts.push_back(grad::add_scalar(grad::neg(cross), entropy_term));
    }
    const double factor = sp.temperature * sp.temperature / static_cast<double>(B * P);
    return grad::mul_scalar(grad::sum_vars(parts), factor);
}

// Target-vs-others transfer on collapsed two-class distributions.
inline grad::Var tckd_vs_probs_tape(grad::Tape& t, grad::Var logits3, const Tensor& teacher_probs,
                                    const LabelVector& labels, const SoftDistParams& sp) {
    sp.validate();
    const Tensor& v = logits3.value();
    require(v.rank() == 3, ErrorCode::shape, "tckd: logits must be (B,C,P)");
    require(v.same_shape(teacher_probs), ErrorCode::shape, "tckd: teacher probs shape mismatch");
    const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2);
    labels.validate(B, C);
    const double scale = sp.alpha / sp.temperature;
    grad::Var onehot = t.constant(detail::onehot_rows(labels, C));

    std::vector<grad::Var> parts;
    parts.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        // teacher collapsed masses (constants)
        Tensor t_tm(Shape{B}), t_om(Shape{B});
        double entropy_term = 0.0;
        for (std::size_t i = 0; i < B; ++i) {
            const std::size_t y = static_cast<std::size_t>(labels[i]);
            double ty = teacher_probs(i, y, p);
            double to = 0.0;
            for (std::size_t c = 0; c < C; ++c)
                if (c != y) to += teacher_probs(i, c, p);
            t_tm[i] = ty;
            t_om[i] = to;
            entropy_term += (ty == 0.0 ? 0.0 : ty * detail::guarded_log(ty)) +
                            (to == 0.0 ? 0.0 : to * detail::guarded_log(to));
        }
        grad::Var qs = grad::softmax_lastdim(grad::mul_scalar(grad::slice_part(logits3, p), scale));
        grad::Var s_tm = grad::sum_lastdim(grad::mul(qs, onehot));
        grad::Var s_om = grad::rsub_scalar(1.0, s_tm);
        grad::Var cross = grad::add(grad::sum_all(grad::mul(t.constant(std::move(t_tm)), grad::log_guarded(s_tm))),
                                    grad::sum_all(grad::mul(t.constant(std::move(t_om)), grad::log_guarded(s_om))));
        parts.push_back(grad::add_scalar(grad::neg(cross), entropy_term));
    }
    const double factor = sp.temperature * sp.temperature / static_cast<double>(B * P);
    return grad::mul_scalar(grad::sum_vars(parts), factor);
}

// Non-target transfer over distributions with the ground-truth class excluded.
// teacher_masked must already have zero (or near-zero, finite gamma) mass at
// the target class of every row.
inline grad::Var nckd_vs_probs_tape(grad::Tape& t, grad::Var logits3, const Tensor& teacher_masked,
                                    const LabelVector& labels, const SoftDistParams& sp, double gamma) {
    sp.validate();
    const Tensor& v = logits3.value();
    require(v.rank() == 3, ErrorCode::shape, "nckd: logits must be (B,C,P)");
    require(v.same_shape(teacher_masked), ErrorCode::shape, "nckd: teacher probs shape mismatch");
    const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2);
    labels.validate(B, C);
    const double scale = sp.alpha / sp.temperature;
    grad::Var onehot = t.constant(detail::onehot_rows(labels, C));

    std::vector<grad::Var> parts;
    parts.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        Tensor qt = part_slice(teacher_masked, p);
        double entropy_term = 0.0;
        for (std::size_t i = 0; i < B; ++i) entropy_term += detail::neg_entropy_row(qt.data() + i * C, C);
        grad::Var part_term;
        if (std::isinf(gamma)) {
            // exact exclusion: q_masked(c) = q(c) / (1 - q(y)) for c != y, so
            // KL = const - sum q_t_masked log q_s + log(1 - q_s(y)) per row
            grad::Var qs = grad::softmax_lastdim(grad::mul_scalar(grad::slice_part(logits3, p), scale));
            grad::Var s_tm = grad::sum_lastdim(grad::mul(qs, onehot));
            grad::Var nonmass = grad::rsub_scalar(1.0, s_tm);
            grad::Var s1 = grad::sum_lastdim(grad::mul(t.constant(std::move(qt)), grad::log_guarded(qs)));
            grad::Var rows = grad::add(grad::neg(s1), grad::log_guarded(nonmass));
            part_term = grad::add_scalar(grad::sum_all(rows), entropy_term);
        } else {
            Tensor mask(Shape{B, C});
            for (std::size_t i = 0; i < B; ++i) mask(i, static_cast<std::size_t>(labels[i])) = gamma;
            grad::Var shifted = grad::sub(grad::mul_scalar(grad::slice_part(logits3, p), scale),
                                          t.constant(std::move(mask)));
            grad::Var qs = grad::softmax_lastdim(shifted);
            grad::Var cross = grad::sum_all(grad::mul(t.constant(std::move(qt)), grad::log_guarded(qs)));
            part_term = grad::add_scalar(grad::neg(cross), entropy_term);
        }
        parts.push_back(part_term);
    }
    const double factor = sp.temperature * sp.temperature / static_cast<double>(B * P);
    return grad::mul_scalar(grad::sum_vars(parts), factor);
}

struct DkdTapeResult {
    grad::Var total;
    grad::Var tckd;
    grad::Var nckd;
};

inline DkdTapeResult dkd_vs_probs_tape(grad::Tape& t, grad::Var logits3, const Tensor& teacher_probs,
                                       const Tensor& teacher_masked, const LabelVector& labels,
                                       const SoftDistParams& sp, const DkdParams& dp) {
    dp.validate();
    DkdTapeResult r;
    r.tckd = tckd_vs_probs_tape(t, logits3, teacher_probs, labels, sp);
    r.nckd = nckd_vs_probs_tape(t, logits3, teacher_masked, labels, sp, dp.gamma);
    r.total = grad::add(grad::mul_scalar(r.tckd, dp.alpha_d), grad::mul_scalar(r.nckd, dp.beta_d));
    return r;
}

// Plain Hinton-style KD on part-averaged logits (ablation baseline): the part
// structure is collapsed by a mean over parts before the softened KL.
inline grad::Var naive_kd_tape(grad::Tape& t, grad::Var logits3, const PartLogits& teacher,
                               const SoftDistParams& sp) {
    sp.validate();
    const Tensor& v = logits3.value();
    require(v.same_shape(teacher.data), ErrorCode::shape, "naive_kd: logits shape mismatch");
    const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2);
    const double scale = sp.alpha / sp.temperature;

    Tensor t_mean(Shape{B, C});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t p = 0; p < P; ++p) s += teacher.data(i, c, p);
            t_mean(i, c) = scale * s / static_cast<double>(P);
        }
    detail::softmax_rows(t_mean);
    double entropy_term = 0.0;
    for (std::size_t i = 0; i < B; ++i) entropy_term += detail::neg_entropy_row(t_mean.data() + i * C, C);

    std::vector<grad::Var> slices;
    slices.reserve(P);
    for (std::size_t p = 0; p < P; ++p) slices.push_back(grad::slice_part(logits3, p));
    grad::Var s_mean = grad::mul_scalar(grad::sum_vars(slices), scale / static_cast<double>(P));
    grad::Var qs = grad::softmax_lastdim(s_mean);
    grad::Var cross = grad::sum_all(grad::mul(t.constant(std::move(t_mean)), grad::log_guarded(qs)));
    grad::Var kl = grad::add_scalar(grad::neg(cross), entropy_term);
    const double factor = sp.temperature * sp.temperature / static_cast<double>(B);
    return grad::mul_scalar(kl, factor);
}

// Decision-level MSE on raw aligned logits, averaged over all (i, c, p).
inline grad::Var mse_logits_tape(grad::Tape& t, grad::Var logits3, const Tensor& teacher_logits) {
    const Tensor& v = logits3.value();
    require(v.same_shape(teacher_logits), ErrorCode::shape, "logit mse: shape mismatch");
    return grad::mean_all(grad::square(grad::sub(logits3, t.constant(teacher_logits))));
}

// ---------------------------------------------------------------------------
// value-level API
// ---------------------------------------------------------------------------

inline double kl_loss(const PartLogits& student, const PartLogits& teacher, const SoftDistParams& sp) {
    detail::check_logit_pair(student, teacher);
    grad::Tape t;
    return kl_vs_probs_tape(t, t.constant(student.data), soften(teacher, sp), sp).value().scalar_value();
}

// Closed-form gradient of the part-normalized KL w.r.t. student logits:
// (alpha * T / BP) * (q_s - q_t), entry-wise.
inline Tensor kl_grad_closed_form(const PartLogits& student, const PartLogits& teacher,
                                  const SoftDistParams& sp) {
    detail::check_logit_pair(student, teacher);
    Tensor qs = soften(student, sp);
    Tensor qt = soften(teacher, sp);
    const std::size_t B = student.batch(), P = student.parts();
    const double factor = sp.alpha * sp.temperature / static_cast<double>(B * P);
    Tensor g(qs.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] = factor * (qs[i] - qt[i]);
    return g;
}

// Tape gradient of kl_loss w.r.t. student logits (for closed-form comparison).
inline Tensor kl_grad_tape(const PartLogits& student, const PartLogits& teacher,
                           const SoftDistParams& sp) {
    detail::check_logit_pair(student, teacher);
    grad::Tape t;
    grad::Var x = t.input(student.data);
    grad::Var loss = kl_vs_probs_tape(t, x, soften(teacher, sp), sp);
    t.backward(loss);
    return x.grad();
}

inline double tckd_loss(const PartLogits& student, const PartLogits& teacher, const LabelVector& labels,
                        const SoftDistParams& sp) {
    detail::check_logit_pair(student, teacher);
    grad::Tape t;
    return tckd_vs_probs_tape(t, t.constant(student.data), soften(teacher, sp), labels, sp)
        .value()
        .scalar_value();
}

inline double nckd_loss(const PartLogits& student, const PartLogits& teacher, const LabelVector& labels,
                        const SoftDistParams& sp, double gamma) {
    detail::check_logit_pair(student, teacher);
    grad::Tape t;
    Tensor qt_masked = masked_soften(teacher, labels, sp, gamma);
    return nckd_vs_probs_tape(t, t.constant(student.data), qt_masked, labels, sp, gamma)
        .value()
        .scalar_value();
}

struct DkdResult {
    double total = 0.0;
    double tckd = 0.0;
    double nckd = 0.0;
};

inline DkdResult dkd_loss(const PartLogits& student, const PartLogits& teacher, const LabelVector& labels,
                          const SoftDistParams& sp, const DkdParams& dp) {
    detail::check_logit_pair(student, teacher);
    DkdResult r;
    r.tckd = tckd_loss(student, teacher, labels, sp);
    r.nckd = nckd_loss(student, teacher, labels, sp, dp.gamma);
    dp.validate();
    r.total = dp.alpha_d * r.tckd + dp.beta_d * r.nckd;
    return r;
}

}  // namespace gaitkd
