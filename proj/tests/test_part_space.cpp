#include <doctest.h>

#include "gaitkd/part_space.hpp"
#include "gaitkd/rng.hpp"

using namespace gaitkd;

namespace {

PartLogits random_logits(Rng& rng, std::size_t b, std::size_t c, std::size_t p) {
    return PartLogits(rng.normal_tensor(Shape{b, c, p}));
}

PartEmbeddings random_emb(Rng& rng, std::size_t b, std::size_t d, std::size_t p) {
    return PartEmbeddings(rng.normal_tensor(Shape{b, d, p}));
}

}  // namespace

TEST_CASE("alignment keeps matching part counts unchanged") {
    Rng rng(1);
    auto sl = random_logits(rng, 2, 3, 16);
    auto se = random_emb(rng, 2, 4, 16);
    auto tl = random_logits(rng, 2, 3, 16);
    auto te = random_emb(rng, 2, 6, 16);
    AlignedPair ap = align_parts(sl, se, tl, te);
    CHECK(ap.common_parts == 16);
    for (std::size_t i = 0; i < sl.data.numel(); ++i) CHECK(ap.student_logits.data[i] == sl.data[i]);
}

TEST_CASE("alignment crops to min part count, lowest parts kept") {
    Rng rng(2);
    auto sl = random_logits(rng, 2, 3, 31);
    auto se = random_emb(rng, 2, 4, 31);
    auto tl = random_logits(rng, 2, 3, 16);
    auto te = random_emb(rng, 2, 6, 16);
    AlignedPair ap = align_parts(sl, se, tl, te);
    CHECK(ap.common_parts == 16);
    CHECK(ap.student_logits.parts() == 16);
    CHECK(ap.teacher_logits.parts() == 16);
    CHECK(ap.student_emb.parts() == 16);
}

TEST_CASE("aligned slices equal original slices entry-wise") {
    Rng rng(3);
    auto sl = random_logits(rng, 3, 4, 4);
    auto se = random_emb(rng, 3, 5, 4);
    auto tl = random_logits(rng, 3, 4, 7);
    auto te = random_emb(rng, 3, 5, 7);
    AlignedPair ap = align_parts(sl, se, tl, te);
    CHECK(ap.common_parts == 4);
    for (std::size_t p = 0; p < 4; ++p) {
        Tensor a = part_slice(ap.teacher_logits, p);
        Tensor b = part_slice(tl, p);
        for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
        Tensor c = part_slice(ap.teacher_emb, p);
        Tensor d = part_slice(te, p);
        for (std::size_t i = 0; i < c.numel(); ++i) CHECK(c[i] == d[i]);
    }
}

TEST_CASE("alignment is idempotent") {
    Rng rng(4);
    auto sl = random_logits(rng, 2, 3, 5);
    auto se = random_emb(rng, 2, 4, 5);
    auto tl = random_logits(rng, 2, 3, 9);
    auto te = random_emb(rng, 2, 4, 9);
    AlignedPair once = align_parts(sl, se, tl, te);
    AlignedPair twice = align_parts(once.student_logits, once.student_emb, once.teacher_logits,
                                    once.teacher_emb);
    CHECK(twice.common_parts == once.common_parts);
    for (std::size_t i = 0; i < once.teacher_emb.data.numel(); ++i)
        CHECK(twice.teacher_emb.data[i] == once.teacher_emb.data[i]);
}

TEST_CASE("alignment error taxonomy") {
    Rng rng(5);
    auto sl = random_logits(rng, 2, 3, 4);
    auto se = random_emb(rng, 2, 4, 4);

    auto tl_batch = random_logits(rng, 3, 3, 4);
    auto te_batch = random_emb(rng, 3, 4, 4);
    CHECK_THROWS_WITH_AS(align_parts(sl, se, tl_batch, te_batch),
                         doctest::Contains("batch"), Error);

    auto tl_class = random_logits(rng, 2, 5, 4);
    auto te_ok = random_emb(rng, 2, 4, 4);
    try {
        align_parts(sl, se, tl_class, te_ok);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::class_mismatch);
    }
}

TEST_CASE("non-finite input is rejected at type construction") {
    Tensor t(Shape{1, 2, 1});
    t[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(PartLogits{t}, Error);
}

TEST_CASE("part_slice bounds and content") {
    Rng rng(6);
    auto tl = random_logits(rng, 2, 3, 3);
    Tensor s = part_slice(tl, 1);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(s(i, j) == tl.data(i, j, 1));
    CHECK_THROWS_AS(part_slice(tl, 3), Error);
}

TEST_CASE("dim alignment crops to min channel count") {
    Rng rng(7);
    auto a = random_emb(rng, 2, 8, 3);
    auto b = random_emb(rng, 2, 5, 3);
    auto [ca, cb] = align_dims(a, b, DimAlign::crop_min);
    CHECK(ca.dim() == 5);
    CHECK(cb.dim() == 5);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t d = 0; d < 5; ++d)
            for (std::size_t p = 0; p < 3; ++p) CHECK(ca.data(i, d, p) == a.data(i, d, p));
    CHECK_THROWS_AS(align_dims(a, b, DimAlign::strict), Error);
}
