#include <doctest.h>

#include <cmath>
#include <vector>

#include "gaitkd/losses_base.hpp"
#include "gaitkd/rng.hpp"

using namespace gaitkd;

namespace {

// independent brute-force oracles -------------------------------------------

double oracle_ce(const PartLogits& logits, const std::vector<int>& y) {
    const std::size_t B = logits.batch(), C = logits.classes(), P = logits.parts();
    double total = 0.0;
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t i = 0; i < B; ++i) {
            double denom = 0.0;
            for (std::size_t c = 0; c < C; ++c) denom += std::exp(logits.data(i, c, p));
            const double prob = std::exp(logits.data(i, static_cast<std::size_t>(y[i]), p)) / denom;
            total += -std::log(prob);
        }
    return total / static_cast<double>(B * P);
}

double oracle_triplet(const PartEmbeddings& emb, const std::vector<int>& y, double m) {
    const std::size_t B = emb.batch(), D = emb.dim(), P = emb.parts();
    double total = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        std::vector<std::vector<double>> rows(B, std::vector<double>(D));
        for (std::size_t i = 0; i < B; ++i) {
            double n = 0.0;
            for (std::size_t d = 0; d < D; ++d) n += emb.data(i, d, p) * emb.data(i, d, p);
            n = std::sqrt(n);
            for (std::size_t d = 0; d < D; ++d) rows[i][d] = emb.data(i, d, p) / n;
        }
        auto dist = [&](std::size_t a, std::size_t b) {
            double s = 0.0;
            for (std::size_t d = 0; d < D; ++d) s += (rows[a][d] - rows[b][d]) * (rows[a][d] - rows[b][d]);
            return std::sqrt(s);
        };
        double sum = 0.0;
        std::size_t active = 0;
        for (std::size_t a = 0; a < B; ++a)
            for (std::size_t pos = 0; pos < B; ++pos) {
                if (pos == a || y[pos] != y[a]) continue;
                for (std::size_t neg = 0; neg < B; ++neg) {
                    if (y[neg] == y[a]) continue;
                    const double h = std::max(m + dist(a, pos) - dist(a, neg), 0.0);
                    if (h > 0.0) {
                        sum += h;
                        ++active;
                    }
                }
            }
        total += active > 0 ? sum / static_cast<double>(active) : 0.0;
    }
    return total / static_cast<double>(P);
}

}  // namespace

TEST_CASE("part softmax probabilities") {
    Tensor z(Shape{2, 3, 1});
    // row 0: uniform; row 1: [1, 0, 0]
    z(1, 0, 0) = 1.0;
    PartLogits logits(z);
    Tensor q = part_softmax_prob(logits, 0);
    CHECK(q(0, 0) == doctest::Approx(1.0 / 3).epsilon(1e-13));

    Tensor z2(Shape{1, 2, 1});
    z2(0, 0, 0) = 1.0;
    Tensor q2 = part_softmax_prob(PartLogits(z2), 0);
    CHECK(q2(0, 0) == doctest::Approx(0.731059).epsilon(1e-6));
    CHECK(q2(0, 1) == doctest::Approx(0.268941).epsilon(1e-6));

    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) sum += q(1, c);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("softmax shift invariance") {
    Rng rng(11);
    Tensor z = rng.normal_tensor(Shape{3, 4, 2});
    Tensor shifted = z;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t p = 0; p < 2; ++p) shifted(i, c, p) += 7.25;
    Tensor a = part_softmax_prob(PartLogits(z), 1);
    Tensor b = part_softmax_prob(PartLogits(shifted), 1);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
}

TEST_CASE("ce on uniform logits equals log C") {
    PartLogits logits(Tensor(Shape{3, 4, 2}));
    LabelVector y({0, 1, 2});
    CHECK(ce_loss(logits, y) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("ce saturates to zero with a dominant target logit") {
    Tensor z(Shape{2, 3, 1});
    z(0, 0, 0) = 20.0;
    z(1, 2, 0) = 20.0;
    LabelVector y({0, 2});
    CHECK(ce_loss(PartLogits(z), y) < 1e-8);
}

TEST_CASE("ce matches the brute-force oracle") {
    Rng rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        PartLogits logits(rng.normal_tensor(Shape{3, 5, 2}));
        std::vector<int> y{static_cast<int>(rng.index(5)), static_cast<int>(rng.index(5)),
                           static_cast<int>(rng.index(5))};
        CHECK(std::abs(ce_loss(logits, LabelVector(y)) - oracle_ce(logits, y)) <= 1e-12);
    }
}

TEST_CASE("ce is invariant to part duplication and per-row constants") {
    Rng rng(13);
    Tensor z = rng.normal_tensor(Shape{2, 4, 3});
    LabelVector y({1, 3});
    const double base = ce_loss(PartLogits(z), y);

    Tensor dup(Shape{2, 4, 6});
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t p = 0; p < 6; ++p) dup(i, c, p) = z(i, c, p % 3);
    CHECK(std::abs(ce_loss(PartLogits(dup), y) - base) <= 1e-12);

    Tensor shift = z;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t p = 0; p < 3; ++p) {
            const double c0 = 0.37 * static_cast<double>(i + p + 1);
            for (std::size_t c = 0; c < 4; ++c) shift(i, c, p) += c0;
        }
    CHECK(std::abs(ce_loss(PartLogits(shift), y) - base) <= 1e-12);
}

TEST_CASE("ce rejects out-of-range labels") {
    PartLogits logits(Tensor(Shape{2, 3, 1}));
    try {
        ce_loss(logits, LabelVector({0, 3}));
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::label);
    }
}

TEST_CASE("embedding normalization") {
    Tensor e(Shape{1, 2, 1});
    e(0, 0, 0) = 3.0;
    e(0, 1, 0) = 4.0;
    PartEmbeddings n = normalize_embeddings(PartEmbeddings(e));
    CHECK(n.data(0, 0, 0) == doctest::Approx(0.6).epsilon(1e-14));
    CHECK(n.data(0, 1, 0) == doctest::Approx(0.8).epsilon(1e-14));

    PartEmbeddings again = normalize_embeddings(n);
    CHECK(std::abs(again.data(0, 0, 0) - n.data(0, 0, 0)) <= 1e-12);

    Rng rng(14);
    PartEmbeddings r = normalize_embeddings(PartEmbeddings(rng.normal_tensor(Shape{4, 5, 3})));
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t p = 0; p < 3; ++p) {
            double norm = 0.0;
            for (std::size_t d = 0; d < 5; ++d) norm += r.data(i, d, p) * r.data(i, d, p);
            CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-12);
        }
}

TEST_CASE("normalization names the offending sample and part") {
    Tensor e(Shape{2, 2, 2});
    e.fill(1.0);
    e(1, 0, 1) = 0.0;
    e(1, 1, 1) = 0.0;
    CHECK_THROWS_WITH_AS(normalize_embeddings(PartEmbeddings(e)), doctest::Contains("sample 1"), Error);
}

TEST_CASE("triplet loss degenerate cases") {
    // identical embeddings: every distance zero, hinge reduces to the margin
    Tensor e(Shape{4, 3, 1});
    e.fill(0.5);
    LabelVector y({0, 0, 1, 1});
    CHECK(triplet_loss(PartEmbeddings(e), y, 0.2) == doctest::Approx(0.2).epsilon(1e-12));

    // perfectly separated clusters (opposite unit vectors): zero loss
    Tensor sep(Shape{4, 2, 1});
    sep(0, 0, 0) = 1.0;
    sep(1, 0, 0) = 1.0;
    sep(2, 1, 0) = 1.0;
    sep(3, 1, 0) = 1.0;
    CHECK(triplet_loss(PartEmbeddings(sep), y, 0.2) == 0.0);
}

TEST_CASE("triplet loss matches the all-triplet oracle") {
    Rng rng(15);
    std::vector<int> y{0, 0, 1, 1};
    for (int rep = 0; rep < 20; ++rep) {
        PartEmbeddings emb(rng.normal_tensor(Shape{4, 3, 1}));
        CHECK(std::abs(triplet_loss(emb, LabelVector(y), 0.2) - oracle_triplet(emb, y, 0.2)) <= 1e-12);
    }
    // multi-part instance
    for (int rep = 0; rep < 10; ++rep) {
        PartEmbeddings emb(rng.normal_tensor(Shape{6, 4, 3}));
        std::vector<int> y6{0, 0, 1, 1, 2, 2};
        CHECK(std::abs(triplet_loss(emb, LabelVector(y6), 0.3) - oracle_triplet(emb, y6, 0.3)) <= 1e-12);
    }
}

TEST_CASE("triplet mining errors") {
    Rng rng(16);
    PartEmbeddings emb(rng.normal_tensor(Shape{3, 2, 1}));
    try {
        triplet_loss(emb, LabelVector({0, 1, 2}), 0.2);  // no positives anywhere
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::mining);
    }
    try {
        PartEmbeddings all_same(rng.normal_tensor(Shape{3, 2, 1}));
        triplet_loss(all_same, LabelVector({1, 1, 1}), 0.2);  // no negatives
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::mining);
    }
}

TEST_CASE("base objective recomposes from its components") {
    Rng rng(17);
    PartLogits logits(rng.normal_tensor(Shape{4, 5, 2}));
    PartEmbeddings emb(rng.normal_tensor(Shape{4, 3, 2}));
    LabelVector y({0, 0, 2, 2});

    BaseLossWeights w{0.8, 1.7, 0.25};
    BaseLossResult r = base_objective(logits, emb, y, w);
    CHECK(std::abs(r.total - (0.8 * r.ce + 1.7 * r.tri)) <= 1e-12);
    CHECK(std::abs(r.ce - ce_loss(logits, y)) <= 1e-12);
    CHECK(std::abs(r.tri - triplet_loss(emb, y, 0.25)) <= 1e-12);

    BaseLossWeights zero_ce{0.0, 1.0, 0.25};
    BaseLossResult r2 = base_objective(logits, emb, y, zero_ce);
    CHECK(r2.total == doctest::Approx(r2.tri).epsilon(1e-15));
}
