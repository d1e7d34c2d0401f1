#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gaitkd/eval_metrics.hpp"
#include "gaitkd/rng.hpp"

using namespace gaitkd;

namespace {

struct OracleScores {
    double rank_at(std::size_t k) const {
        std::size_t hits = 0;
        for (auto r : first_rank)
            if (r <= k) ++hits;
        return 100.0 * static_cast<double>(hits) / static_cast<double>(first_rank.size());
    }
    std::vector<std::size_t> first_rank;
    std::vector<double> ap, inp;
};

// independent exhaustive sort-and-scan oracle
OracleScores oracle_eval(const RetrievalIndex& idx) {
    OracleScores out;
    const std::size_t np = idx.probe.dim(0), ng = idx.gallery.dim(0), d = idx.gallery.dim(1);
    for (std::size_t i = 0; i < np; ++i) {
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t g = 0; g < ng; ++g) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = idx.probe(i, c) - idx.gallery(g, c);
                s += diff * diff;
            }
            scored.emplace_back(std::sqrt(s), g);
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first < b.first;
            return a.second < b.second;
        });
        std::size_t seen = 0, total = 0, last = 0, first = 0;
        double ap_sum = 0.0;
        for (std::size_t r = 0; r < scored.size(); ++r) {
            if (idx.gallery_labels[scored[r].second] != idx.probe_labels[i]) continue;
            ++seen;
            if (seen == 1) first = r + 1;
            ap_sum += static_cast<double>(seen) / static_cast<double>(r + 1);
            last = r + 1;
            ++total;
        }
        out.first_rank.push_back(first);
        out.ap.push_back(ap_sum / static_cast<double>(total));
        out.inp.push_back(static_cast<double>(total) / static_cast<double>(last));
    }
    return out;
}

// gallery at controlled distances from a single probe at the origin
RetrievalIndex line_index(const std::vector<int>& gallery_labels, int probe_label) {
    RetrievalIndex idx;
    const std::size_t n = gallery_labels.size();
    idx.gallery = Tensor(Shape{n, 1});
    for (std::size_t g = 0; g < n; ++g) idx.gallery(g, 0) = static_cast<double>(g + 1);
    idx.gallery_labels = gallery_labels;
    idx.probe = Tensor(Shape{1, 1});
    idx.probe_labels = {probe_label};
    return idx;
}

}  // namespace

TEST_CASE("exact match counts at rank 1; exhaustive k reaches 100") {
    Rng rng(70);
    RetrievalIndex idx;
    idx.gallery = rng.normal_tensor(Shape{6, 4});
    idx.gallery_labels = {0, 1, 2, 3, 4, 5};
    idx.probe = Tensor(Shape{1, 4});
    for (std::size_t c = 0; c < 4; ++c) idx.probe(0, c) = idx.gallery(3, c);
    idx.probe_labels = {3};
    CHECK(rank_k(idx, 1) == 100.0);
    CHECK(rank_k(idx, 6) == 100.0);
    CHECK(rank_k(idx, 50) == 100.0);
}

TEST_CASE("metrics match the exhaustive oracle on random instances") {
    Rng rng(71);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t ng = 5 + rng.index(16), np = 1 + rng.index(10), d = 2 + rng.index(4);
        const int num_labels = 2 + static_cast<int>(rng.index(4));
        RetrievalIndex idx;
        idx.gallery = rng.normal_tensor(Shape{ng, d});
        idx.probe = rng.normal_tensor(Shape{np, d});
        for (std::size_t g = 0; g < ng; ++g)
            idx.gallery_labels.push_back(static_cast<int>(g) % num_labels);
        for (std::size_t p = 0; p < np; ++p)
            idx.probe_labels.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(num_labels))));

        OracleScores oracle = oracle_eval(idx);
        for (std::size_t k = 1; k <= ng; ++k) CHECK(std::abs(rank_k(idx, k) - oracle.rank_at(k)) <= 1e-12);
        double map_oracle = 0.0, minp_oracle = 0.0;
        for (std::size_t i = 0; i < np; ++i) {
            map_oracle += oracle.ap[i];
            minp_oracle += oracle.inp[i];
        }
        map_oracle = 100.0 * map_oracle / static_cast<double>(np);
        minp_oracle = 100.0 * minp_oracle / static_cast<double>(np);
        CHECK(std::abs(mean_ap(idx) - map_oracle) <= 1e-12);
        CHECK(std::abs(mean_inp(idx) - minp_oracle) <= 1e-12);

        // rank_k monotone nondecreasing in k
        double prev = 0.0;
        for (std::size_t k = 1; k <= ng; ++k) {
            const double cur = rank_k(idx, k);
            CHECK(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("hand-computed ap and inp cases") {
    // single relevant item at rank 1
    CHECK(mean_ap(line_index({5, 9, 9}, 5)) == doctest::Approx(100.0).epsilon(1e-12));
    // two relevant at ranks 1 and 2
    CHECK(mean_ap(line_index({5, 5, 9}, 5)) == doctest::Approx(100.0).epsilon(1e-12));
    // relevant at ranks 2 and 4: AP = (1/2 + 2/4) / 2 = 50
    CHECK(mean_ap(line_index({9, 5, 8, 5}, 5)) == doctest::Approx(50.0).epsilon(1e-12));
    // all relevant items at the top
    CHECK(mean_inp(line_index({5, 5, 9, 9}, 5)) == doctest::Approx(100.0).epsilon(1e-12));
    // one relevant at rank 4
    CHECK(mean_inp(line_index({9, 8, 7, 5}, 5)) == doctest::Approx(25.0).epsilon(1e-12));
    // two relevant at ranks 1 and 5: INP = 2/5
    CHECK(mean_inp(line_index({5, 9, 9, 9, 5}, 5)) == doctest::Approx(40.0).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under a common orthogonal transform") {
    Rng rng(72);
    RetrievalIndex idx;
    idx.gallery = rng.normal_tensor(Shape{12, 6});
    idx.probe = rng.normal_tensor(Shape{5, 6});
    for (std::size_t g = 0; g < 12; ++g) idx.gallery_labels.push_back(static_cast<int>(g % 4));
    for (std::size_t p = 0; p < 5; ++p) idx.probe_labels.push_back(static_cast<int>(p % 4));

    Rng qrng(73);
    Tensor q = gaitkd::detail::random_orthogonal(6, qrng);
    auto rotate = [&q](const Tensor& m) {
        Tensor out(m.shape());
        for (std::size_t i = 0; i < m.dim(0); ++i)
            for (std::size_t r = 0; r < 6; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < 6; ++c) acc += q(r, c) * m(i, c);
                out(i, r) = acc;
            }
        return out;
    };
    RetrievalIndex rot = idx;
    rot.gallery = rotate(idx.gallery);
    rot.probe = rotate(idx.probe);

    EvalReport a = evaluate(idx);
    EvalReport b = evaluate(rot);
    CHECK(std::abs(a.rank1 - b.rank1) <= 1e-9);
    CHECK(std::abs(a.map - b.map) <= 1e-9);
    CHECK(std::abs(a.minp - b.minp) <= 1e-9);
}

TEST_CASE("evaluate aggregates consistently and is thread-count invariant") {
    Rng rng(74);
    RetrievalIndex idx;
    idx.gallery = rng.normal_tensor(Shape{15, 5});
    idx.probe = rng.normal_tensor(Shape{7, 5});
    for (std::size_t g = 0; g < 15; ++g) idx.gallery_labels.push_back(static_cast<int>(g % 5));
    for (std::size_t p = 0; p < 7; ++p) idx.probe_labels.push_back(static_cast<int>(p % 5));

    EvalReport rep1 = evaluate(idx, 1);
    EvalReport rep4 = evaluate(idx, 4);
    CHECK(rep1.rank1 == rep4.rank1);
    CHECK(rep1.map == rep4.map);
    CHECK(rep1.minp == rep4.minp);
    CHECK(rep1.rank5 >= rep1.rank1);
    CHECK(rep1.rank1 == rank_k(idx, 1));
    CHECK(rep1.rank5 == rank_k(idx, 5));
    CHECK(std::abs(rep1.map - mean_ap(idx)) <= 1e-12);
    CHECK(std::abs(rep1.minp - mean_inp(idx)) <= 1e-12);
}

TEST_CASE("gap-closing arithmetic reproduces the reference table") {
    CHECK(std::abs(gap_closed({74.4, 61.5, 63.3}) - 14.0) <= 0.05);
    CHECK(std::abs(gap_closed({74.4, 61.5, 65.8}) - 33.3) <= 0.05);
    CHECK(gap_closed({74.4, 61.5, 61.5}) == 0.0);
    CHECK_THROWS_AS(gap_closed({61.5, 61.5, 63.0}), Error);
}

TEST_CASE("index validation catches broken inputs") {
    Rng rng(75);
    RetrievalIndex idx;
    idx.gallery = rng.normal_tensor(Shape{4, 3});
    idx.probe = rng.normal_tensor(Shape{2, 3});
    idx.gallery_labels = {0, 0, 1, 1};
    idx.probe_labels = {0, 7};  // 7 absent from the gallery
    try {
        idx.validate();
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
    }
    idx.probe_labels = {0, 1};
    idx.validate();

    RetrievalIndex empty;
    empty.gallery = Tensor(Shape{0, 3});
    empty.probe = rng.normal_tensor(Shape{1, 3});
    empty.probe_labels = {0};
    CHECK_THROWS_AS(empty.validate(), Error);
}
