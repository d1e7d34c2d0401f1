#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gaitkd/autodiff.hpp"
#include "gaitkd/part_space.hpp"

namespace gaitkd {

// Identity labels, 0-based, one per batch sample.
struct LabelVector {
    std::vector<int> y;

    LabelVector() = default;
    explicit LabelVector(std::vector<int> labels) : y(std::move(labels)) {}

    std::size_t size() const { return y.size(); }
    int operator[](std::size_t i) const { return y[i]; }

    void validate(std::size_t batch, std::size_t num_classes) const {
        require(y.size() == batch, ErrorCode::shape,
                "label count " + std::to_string(y.size()) + " != batch " + std::to_string(batch));
        for (std::size_t i = 0; i < y.size(); ++i)
            require(y[i] >= 0 && static_cast<std::size_t>(y[i]) < num_classes, ErrorCode::label,
                    "label " + std::to_string(y[i]) + " at index " + std::to_string(i) +
                        " outside [0," + std::to_string(num_classes) + ")");
    }
};

struct BaseLossWeights {
    double lambda_ce = 1.0;
    double lambda_tri = 1.0;
    double m_tri = 0.2;

    void validate() const {
        require(std::isfinite(lambda_ce) && lambda_ce >= 0.0, ErrorCode::config, "lambda_ce must be >= 0");
        require(std::isfinite(lambda_tri) && lambda_tri >= 0.0, ErrorCode::config, "lambda_tri must be >= 0");
        require(std::isfinite(m_tri) && m_tri >= 0.0, ErrorCode::config, "m_tri must be >= 0");
    }
};

namespace detail {

// stable row softmax, in place
inline void softmax_rows(Tensor& m) {
    const std::size_t cols = m.dim(m.rank() - 1);
    const std::size_t rows = m.numel() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
        double* p = m.data() + r * cols;
        double mx = p[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            p[c] = std::exp(p[c] - mx);
            s += p[c];
        }
        for (std::size_t c = 0; c < cols; ++c) p[c] /= s;
    }
}

inline Tensor onehot_rows(const LabelVector& labels, std::size_t num_classes) {
    Tensor m(Shape{labels.size(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) m(i, static_cast<std::size_t>(labels[i])) = 1.0;
    return m;
}

// Mining preconditions for batch-all triplets: every sample needs at least
// one positive (same label, different index) and one negative in the batch.
inline void check_mining(const LabelVector& labels) {
    require(labels.size() >= 2, ErrorCode::shape, "triplet loss needs a batch of at least 2");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        bool has_pos = false, has_neg = false;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (j == i) continue;
            (labels[j] == labels[i] ? has_pos : has_neg) = true;
        }
        require(has_pos, ErrorCode::mining,
                "label " + std::to_string(labels[i]) + " has a single sample and no positives");
        require(has_neg, ErrorCode::mining,
                "label " + std::to_string(labels[i]) + " has no negatives in the batch");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// value-level operations
// ---------------------------------------------------------------------------

// Class probabilities of part p: softmax over classes, rows sum to 1.
inline Tensor part_softmax_prob(const PartLogits& logits, std::size_t p) {
    Tensor m = part_slice(logits, p);
    detail::softmax_rows(m);
    return m;
}

// Per-(sample, part) l2 normalization of embedding vectors.
inline PartEmbeddings normalize_embeddings(const PartEmbeddings& emb) {
    Tensor out = emb.data;
    const std::size_t B = emb.batch(), D = emb.dim(), P = emb.parts();
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t p = 0; p < P; ++p) {
            double n2 = 0.0;
            for (std::size_t d = 0; d < D; ++d) n2 += out(i, d, p) * out(i, d, p);
            double n = std::sqrt(n2);
            require(n > 1e-12, ErrorCode::numeric,
                    "near-zero embedding norm at sample " + std::to_string(i) + ", part " +
                        std::to_string(p));
            for (std::size_t d = 0; d < D; ++d) out(i, d, p) /= n;
        }
    return PartEmbeddings(std::move(out));
}

// ---------------------------------------------------------------------------
// tape-level loss builders
// ---------------------------------------------------------------------------

// Part-averaged cross-entropy: mean over (sample, part) of -log prob(target).
inline grad::Var ce_tape(grad::Tape& t, grad::Var logits3, const LabelVector& labels) {
    const Tensor& v = logits3.value();
    require(v.rank() == 3, ErrorCode::shape, "ce: logits must be (B,C,P)");
    const std::size_t B = v.dim(0), C = v.dim(1), P = v.dim(2);
    labels.validate(B, C);
    grad::Var onehot = t.constant(detail::onehot_rows(labels, C));
    std::vector<grad::Var> part_terms;
    part_terms.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        grad::Var q = grad::softmax_lastdim(grad::slice_part(logits3, p));
        grad::Var target_logp = grad::sum_lastdim(grad::mul(grad::log_guarded(q), onehot));
        part_terms.push_back(grad::sum_all(target_logp));
    }
    return grad::mul_scalar(grad::sum_vars(part_terms), -1.0 / static_cast<double>(B * P));
}

// Batch-all triplet loss on l2-normalized embeddings. Per part, all valid
// (anchor, positive, negative) triplets are hinged at margin m_tri; the part
// term averages the active (nonzero) hinges, or is 0 when none is active.
// The total is the mean over parts.
inline grad::Var triplet_tape(grad::Tape&, grad::Var emb3, const LabelVector& labels, double m_tri) {
    const Tensor& v = emb3.value();
    require(v.rank() == 3, ErrorCode::shape, "triplet: embeddings must be (B,D,P)");
    const std::size_t B = v.dim(0), P = v.dim(2);
    require(labels.size() == B, ErrorCode::shape, "triplet: label count != batch");
    detail::check_mining(labels);

    std::vector<grad::Var> part_terms;
    part_terms.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        grad::Var normed = grad::l2_normalize_lastdim(grad::slice_part(emb3, p));
        std::vector<grad::Var> rows;
        rows.reserve(B);
        for (std::size_t i = 0; i < B; ++i) rows.push_back(grad::row(normed, i));

        // pairwise distances, upper triangle
        std::vector<grad::Var> dist(B * B);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = i + 1; j < B; ++j) {
                grad::Var d = grad::sqrt_(grad::sum_all(grad::square(grad::sub(rows[i], rows[j]))));
                dist[i * B + j] = d;
                dist[j * B + i] = d;
            }

        std::vector<grad::Var> hinges;
        std::size_t active = 0;
        for (std::size_t a = 0; a < B; ++a)
            for (std::size_t pos = 0; pos < B; ++pos) {
                if (pos == a || labels[pos] != labels[a]) continue;
                for (std::size_t neg = 0; neg < B; ++neg) {
                    if (labels[neg] == labels[a]) continue;
                    grad::Var h = grad::relu(grad::add_scalar(
                        grad::sub(dist[a * B + pos], dist[a * B + neg]), m_tri));
                    if (h.value().scalar_value() > 0.0) ++active;
                    hinges.push_back(h);
                }
            }
        const double divisor = active > 0 ? static_cast<double>(active) : 1.0;
        part_terms.push_back(grad::mul_scalar(grad::sum_vars(hinges), 1.0 / divisor));
    }
    return grad::mul_scalar(grad::sum_vars(part_terms), 1.0 / static_cast<double>(P));
}

// ---------------------------------------------------------------------------
// value wrappers (single source of truth: the tape builders above)
// ---------------------------------------------------------------------------

inline double ce_loss(const PartLogits& logits, const LabelVector& labels) {
    grad::Tape t;
    return ce_tape(t, t.constant(logits.data), labels).value().scalar_value();
}

inline double triplet_loss(const PartEmbeddings& emb, const LabelVector& labels, double m_tri) {
    grad::Tape t;
    return triplet_tape(t, t.constant(emb.data), labels, m_tri).value().scalar_value();
}

struct BaseLossResult {
    double total = 0.0;
    double ce = 0.0;
    double tri = 0.0;
};

inline BaseLossResult base_objective(const PartLogits& logits, const PartEmbeddings& emb,
                                     const LabelVector& labels, const BaseLossWeights& w) {
    w.validate();
    BaseLossResult r;
    r.ce = ce_loss(logits, labels);
    r.tri = triplet_loss(emb, labels, w.m_tri);
    r.total = w.lambda_ce * r.ce + w.lambda_tri * r.tri;
    return r;
}

}  // namespace gaitkd
