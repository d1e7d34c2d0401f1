#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "gaitkd/autodiff.hpp"
#include "gaitkd/part_space.hpp"

namespace gaitkd {

struct BoundaryParams {
    double margin = 1.0;  // m
    std::vector<double> layer_weights = {1.0};
    DimAlign dim_align = DimAlign::crop_min;

    void validate() const {
        require(std::isfinite(margin) && margin > 0.0, ErrorCode::config, "boundary margin must be > 0");
        require(!layer_weights.empty(), ErrorCode::config, "layer_weights must be nonempty");
        double s = 0.0;
        for (double w : layer_weights) {
            require(std::isfinite(w) && w >= 0.0, ErrorCode::config, "layer weights must be >= 0");
            s += w;
        }
        require(std::abs(s - 1.0) <= 1e-12, ErrorCode::config, "layer weights must sum to 1");
    }
};

// Teacher-induced boundary indicators, entries in {-1, +1}.
struct SignTensor {
    Tensor signs;

    std::size_t batch() const { return signs.dim(0); }
    std::size_t dim() const { return signs.dim(1); }
    std::size_t parts() const { return signs.dim(2); }
};

// sign(e_t) with zero on the negative side, matching the indicator
// 1[e_t <= 0] that gates the loss.
inline SignTensor teacher_signs(const PartEmbeddings& teacher_emb) {
    Tensor s(teacher_emb.data.shape());
    for (std::size_t i = 0; i < s.numel(); ++i) s[i] = teacher_emb.data[i] > 0.0 ? 1.0 : -1.0;
    return SignTensor{std::move(s)};
}

enum class BoundarySide { negative, positive };

// Margin violation: v_-(e) = ReLU(e + m), v_+(e) = ReLU(m - e).
inline double violation(double e, BoundarySide side, double m) {
    require(std::isfinite(e) && std::isfinite(m), ErrorCode::numeric, "violation: non-finite input");
    return side == BoundarySide::negative ? std::max(e + m, 0.0) : std::max(m - e, 0.0);
}

// ---------------------------------------------------------------------------
// tape builders
// ---------------------------------------------------------------------------

// Activation-boundary loss gated by precomputed sign indicators (single
// teacher or ensemble vote): mean over (i, d, p) of the squared margin
// violation on the wrong side of each boundary.
inline grad::Var ab_gated_tape(grad::Tape& t, grad::Var emb3, const SignTensor& gate, double m) {
    const Tensor& v = emb3.value();
    require(v.rank() == 3, ErrorCode::shape, "ab: embeddings must be (B,D,P)");
    require(v.same_shape(gate.signs), ErrorCode::shape,
            "ab: sign tensor shape mismatch " + shape_str(v.shape()) + " vs " +
                shape_str(gate.signs.shape()));
    const std::size_t B = v.dim(0), D = v.dim(1), P = v.dim(2);

    std::vector<grad::Var> parts;
    parts.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        Tensor mneg(Shape{B, D}), mpos(Shape{B, D});
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t d = 0; d < D; ++d) {
                const bool neg = gate.signs(i, d, p) <= 0.0;
                mneg(i, d) = neg ? 1.0 : 0.0;
                mpos(i, d) = neg ? 0.0 : 1.0;
            }
        grad::Var es = grad::slice_part(emb3, p);
        grad::Var vneg = grad::relu(grad::add_scalar(es, m));
        grad::Var vpos = grad::relu(grad::rsub_scalar(m, es));
        grad::Var term = grad::add(grad::sum_all(grad::mul(t.constant(std::move(mneg)), grad::square(vneg))),
                                   grad::sum_all(grad::mul(t.constant(std::move(mpos)), grad::square(vpos))));
        parts.push_back(term);
    }
    return grad::mul_scalar(grad::sum_vars(parts), 1.0 / static_cast<double>(B * D * P));
}

inline grad::Var ab_tape(grad::Tape& t, grad::Var student_emb3, const PartEmbeddings& teacher_emb,
                         double m) {
    return ab_gated_tape(t, student_emb3, teacher_signs(teacher_emb), m);
}

// Point-wise feature regression baseline: mean squared difference.
inline grad::Var mse_emb_tape(grad::Tape& t, grad::Var student_emb3, const Tensor& teacher_emb) {
    require(student_emb3.value().same_shape(teacher_emb), ErrorCode::shape, "feature mse: shape mismatch");
    return grad::mean_all(grad::square(grad::sub(student_emb3, t.constant(teacher_emb))));
}

// ---------------------------------------------------------------------------
// value-level API
// ---------------------------------------------------------------------------

inline double ab_loss(const PartEmbeddings& student_emb, const PartEmbeddings& teacher_emb, double m) {
    require(student_emb.data.same_shape(teacher_emb.data), ErrorCode::shape,
            "ab_loss: embeddings differ: " + shape_str(student_emb.data.shape()) + " vs " +
                shape_str(teacher_emb.data.shape()));
    grad::Tape t;
    return ab_tape(t, t.constant(student_emb.data), teacher_emb, m).value().scalar_value();
}

inline double ab_loss_gated(const PartEmbeddings& student_emb, const SignTensor& gate, double m) {
    grad::Tape t;
    return ab_gated_tape(t, t.constant(student_emb.data), gate, m).value().scalar_value();
}

// Vectorized route: mask-gated squared Frobenius norms of the whole ReLU
// tensors, kept as an independent code path from the element-wise form.
inline double ab_loss_vectorized(const PartEmbeddings& student_emb, const PartEmbeddings& teacher_emb,
                                 double m) {
    require(student_emb.data.same_shape(teacher_emb.data), ErrorCode::shape,
            "ab_loss_vectorized: shape mismatch");
    const Tensor& es = student_emb.data;
    const Tensor& et = teacher_emb.data;
    Tensor vminus(es.shape()), vplus(es.shape());
    for (std::size_t i = 0; i < es.numel(); ++i) {
        vminus[i] = (et[i] <= 0.0 ? 1.0 : 0.0) * std::max(es[i] + m, 0.0);
        vplus[i] = (et[i] > 0.0 ? 1.0 : 0.0) * std::max(m - es[i], 0.0);
    }
    double fro2 = 0.0;
    for (std::size_t i = 0; i < es.numel(); ++i) fro2 += vminus[i] * vminus[i] + vplus[i] * vplus[i];
    return fro2 / static_cast<double>(es.numel());
}

// Multi-layer aggregation: convex combination of per-layer AB losses.
// Mismatched channel dims on a layer are handled per the dim_align policy.
inline double ab_loss_multilayer(std::span<const std::pair<PartEmbeddings, PartEmbeddings>> layers,
                                 const BoundaryParams& bp) {
    bp.validate();
    require(layers.size() == bp.layer_weights.size(), ErrorCode::config,
            "layer count " + std::to_string(layers.size()) + " != weight count " +
                std::to_string(bp.layer_weights.size()));
    double total = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (bp.layer_weights[l] == 0.0) continue;
        auto [s, te] = align_dims(layers[l].first, layers[l].second, bp.dim_align);
        total += bp.layer_weights[l] * ab_loss(s, te, bp.margin);
    }
    return total;
}

inline double mse_feature_loss(const PartEmbeddings& student_emb, const PartEmbeddings& teacher_emb) {
    require(student_emb.data.same_shape(teacher_emb.data), ErrorCode::shape,
            "mse_feature_loss: shape mismatch");
    grad::Tape t;
    return mse_emb_tape(t, t.constant(student_emb.data), teacher_emb.data).value().scalar_value();
}

}  // namespace gaitkd
