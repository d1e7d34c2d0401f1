#pragma once

#include <algorithm>
#include <string>
#include <utility>

#include "gaitkd/tensor.hpp"

namespace gaitkd {

// Part-wise classification scores, shape (batch, class, part).
struct PartLogits {
    Tensor data;

    PartLogits() = default;
    explicit PartLogits(Tensor t) : data(std::move(t)) { validate(); }

    std::size_t batch() const { return data.dim(0); }
    std::size_t classes() const { return data.dim(1); }
    std::size_t parts() const { return data.dim(2); }

    void validate() const {
        require(data.rank() == 3, ErrorCode::shape, "PartLogits must be rank 3 (B,C,P)");
        require(data.dim(0) >= 1 && data.dim(1) >= 2 && data.dim(2) >= 1, ErrorCode::shape,
                "PartLogits requires B>=1, C>=2, P>=1, got " + shape_str(data.shape()));
        require(data.all_finite(), ErrorCode::numeric, "PartLogits contains non-finite entries");
    }
};

// Part-wise retrieval features, shape (batch, dim, part).
struct PartEmbeddings {
    Tensor data;

    PartEmbeddings() = default;
    explicit PartEmbeddings(Tensor t) : data(std::move(t)) { validate(); }

    std::size_t batch() const { return data.dim(0); }
    std::size_t dim() const { return data.dim(1); }
    std::size_t parts() const { return data.dim(2); }

    void validate() const {
        require(data.rank() == 3, ErrorCode::shape, "PartEmbeddings must be rank 3 (B,D,P)");
        require(data.dim(0) >= 1 && data.dim(1) >= 1 && data.dim(2) >= 1, ErrorCode::shape,
                "PartEmbeddings requires B>=1, D>=1, P>=1, got " + shape_str(data.shape()));
        require(data.all_finite(), ErrorCode::numeric, "PartEmbeddings contains non-finite entries");
    }
};

// Student and teacher outputs restricted to the common part dimension
// P = min(P_s, P_t). Embedding dims may still differ between the two sides.
struct AlignedPair {
    PartLogits student_logits;
    PartLogits teacher_logits;
    PartEmbeddings student_emb;
    PartEmbeddings teacher_emb;
    std::size_t common_parts = 0;
};

// How mismatched embedding dimensions are treated by dimension-indexed losses.
enum class DimAlign {
    strict,    // mismatch is a shape error
    crop_min,  // keep the first min(D_s, D_t) coordinates of both sides
};

namespace detail {

inline Tensor crop_parts(const Tensor& t, std::size_t p_keep) {
    if (t.dim(2) == p_keep) return t;
    Tensor out(Shape{t.dim(0), t.dim(1), p_keep});
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j)
            for (std::size_t p = 0; p < p_keep; ++p) out(i, j, p) = t(i, j, p);
    return out;
}

inline Tensor crop_channels(const Tensor& t, std::size_t d_keep) {
    if (t.dim(1) == d_keep) return t;
    Tensor out(Shape{t.dim(0), d_keep, t.dim(2)});
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < d_keep; ++j)
            for (std::size_t p = 0; p < t.dim(2); ++p) out(i, j, p) = t(i, j, p);
    return out;
}

}  // namespace detail

// Parameter-free alignment: crop every tensor to the first
// P = min(P_s, P_t) parts. Part ordering is positional; the lowest-indexed
// parts are kept.
inline AlignedPair align_parts(const PartLogits& student_logits, const PartEmbeddings& student_emb,
                               const PartLogits& teacher_logits, const PartEmbeddings& teacher_emb) {
    const std::size_t B = student_logits.batch();
    require(teacher_logits.batch() == B && student_emb.batch() == B && teacher_emb.batch() == B,
            ErrorCode::shape, "align_parts: batch dimensions differ");
    require(student_logits.classes() == teacher_logits.classes(), ErrorCode::class_mismatch,
            "align_parts: class counts differ (" + std::to_string(student_logits.classes()) + " vs " +
                std::to_string(teacher_logits.classes()) + ")");
    require(student_logits.parts() == student_emb.parts(), ErrorCode::shape,
            "align_parts: student logits/embeddings disagree on part count");
    require(teacher_logits.parts() == teacher_emb.parts(), ErrorCode::shape,
            "align_parts: teacher logits/embeddings disagree on part count");

    const std::size_t P = std::min(student_logits.parts(), teacher_logits.parts());
    AlignedPair out;
    out.common_parts = P;
    out.student_logits = PartLogits(detail::crop_parts(student_logits.data, P));
    out.teacher_logits = PartLogits(detail::crop_parts(teacher_logits.data, P));
    out.student_emb = PartEmbeddings(detail::crop_parts(student_emb.data, P));
    out.teacher_emb = PartEmbeddings(detail::crop_parts(teacher_emb.data, P));
    return out;
}

// Crop two embedding tensors to a shared channel dimension per the policy.
inline std::pair<PartEmbeddings, PartEmbeddings> align_dims(const PartEmbeddings& a,
                                                            const PartEmbeddings& b, DimAlign policy) {
    if (a.dim() == b.dim()) return {a, b};
    require(policy == DimAlign::crop_min, ErrorCode::shape,
            "embedding dims differ (" + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) +
                ") and dim_align=strict");
    const std::size_t d = std::min(a.dim(), b.dim());
    return {PartEmbeddings(detail::crop_channels(a.data, d)),
            PartEmbeddings(detail::crop_channels(b.data, d))};
}

// The p-th slice A[:,:,p] as a (B, channel) matrix. Part indices are 0-based.
inline Tensor part_slice(const Tensor& t, std::size_t p) {
    require(t.rank() == 3, ErrorCode::shape, "part_slice expects a rank-3 tensor");
    require(p < t.dim(2), ErrorCode::index,
            "part index " + std::to_string(p) + " out of range (P=" + std::to_string(t.dim(2)) + ")");
    Tensor out(Shape{t.dim(0), t.dim(1)});
    for (std::size_t i = 0; i < t.dim(0); ++i)
        for (std::size_t j = 0; j < t.dim(1); ++j) out(i, j) = t(i, j, p);
    return out;
}

inline Tensor part_slice(const PartLogits& t, std::size_t p) { return part_slice(t.data, p); }
inline Tensor part_slice(const PartEmbeddings& t, std::size_t p) { return part_slice(t.data, p); }

}  // namespace gaitkd
