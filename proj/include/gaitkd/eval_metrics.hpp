#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gaitkd/losses_base.hpp"
#include "gaitkd/parallel.hpp"
#include "gaitkd/synth.hpp"
#include "gaitkd/toy_model.hpp"

namespace gaitkd {

// Gallery/probe embeddings flattened for retrieval: per-part l2 normalized,
// then concatenated to (N, D * P).
struct RetrievalIndex {
    Tensor gallery;  // (N_g, D_flat)
    std::vector<int> gallery_labels;
    Tensor probe;  // (N_p, D_flat)
    std::vector<int> probe_labels;

    void validate() const {
        require(gallery.rank() == 2 && probe.rank() == 2, ErrorCode::shape,
                "retrieval index tensors must be matrices");
        require(gallery.dim(0) >= 1 && probe.dim(0) >= 1, ErrorCode::shape,
                "empty gallery or probe set");
        require(gallery.dim(1) == probe.dim(1), ErrorCode::shape,
                "gallery/probe embedding dims differ");
        require(gallery_labels.size() == gallery.dim(0) && probe_labels.size() == probe.dim(0),
                ErrorCode::shape, "label counts do not match embedding counts");
        require(gallery.all_finite() && probe.all_finite(), ErrorCode::numeric,
                "non-finite embeddings in retrieval index");
        for (int pl : probe_labels) {
            bool found = false;
            for (int gl : gallery_labels)
                if (gl == pl) {
                    found = true;
                    break;
                }
            require(found, ErrorCode::config,
                    "probe label " + std::to_string(pl) + " absent from gallery (invalid query)");
        }
    }
};

struct QueryDetail {
    int label = 0;
    std::size_t first_match_rank = 0;  // 1-based
    double ap = 0.0;                   // fractions in [0,1]
    double inp = 0.0;
};

struct EvalReport {
    double rank1 = 0.0;  // percents
    double rank5 = 0.0;
    double map = 0.0;
    double minp = 0.0;
    std::vector<QueryDetail> per_query;
};

// Flattens per-part normalized embeddings of the given samples.
inline Tensor flatten_embeddings(const PartEmbeddings& emb) {
    PartEmbeddings n = normalize_embeddings(emb);
    const std::size_t B = n.batch(), D = n.dim(), P = n.parts();
    Tensor out(Shape{B, D * P});
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t d = 0; d < D; ++d) out(i, p * D + d) = n.data(i, d, p);
    return out;
}

inline RetrievalIndex build_index(const ToyModel& model, const Dataset& ds) {
    RetrievalIndex idx;
    Tensor g_in = gather_batch_inputs(ds, ds.gallery_idx, model.parts.size());
    Tensor p_in = gather_batch_inputs(ds, ds.probe_idx, model.parts.size());
    idx.gallery = flatten_embeddings(forward_model(model, g_in).emb);
    idx.probe = flatten_embeddings(forward_model(model, p_in).emb);
    idx.gallery_labels = gather_labels(ds, ds.gallery_idx);
    idx.probe_labels = gather_labels(ds, ds.probe_idx);
    idx.validate();
    return idx;
}

namespace detail {

// Gallery order for one probe: ascending Euclidean distance, ties broken by
// gallery index (stable, deterministic).
inline std::vector<std::size_t> ranked_gallery(const RetrievalIndex& idx, std::size_t probe_i) {
    const std::size_t ng = idx.gallery.dim(0), dflat = idx.gallery.dim(1);
    std::vector<double> dist(ng);
    for (std::size_t g = 0; g < ng; ++g) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < dflat; ++c) {
            const double diff = idx.probe(probe_i, c) - idx.gallery(g, c);
            d2 += diff * diff;
        }
        dist[g] = d2;
    }
    std::vector<std::size_t> order(ng);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    return order;
}

inline QueryDetail score_query(const RetrievalIndex& idx, std::size_t probe_i) {
    const auto order = ranked_gallery(idx, probe_i);
    const int label = idx.probe_labels[probe_i];
    QueryDetail q;
    q.label = label;
    std::size_t relevant_seen = 0, total_relevant = 0, last_relevant_rank = 0;
    double ap_sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (idx.gallery_labels[order[r]] != label) continue;
        ++relevant_seen;
        if (relevant_seen == 1) q.first_match_rank = r + 1;
        ap_sum += static_cast<double>(relevant_seen) / static_cast<double>(r + 1);
        last_relevant_rank = r + 1;
        ++total_relevant;
    }
    q.ap = ap_sum / static_cast<double>(total_relevant);
    q.inp = static_cast<double>(total_relevant) / static_cast<double>(last_relevant_rank);
    return q;
}

}  // namespace detail

// Fraction (x100) of probes whose top-k ranked gallery entries contain a
// same-label entry.
inline double rank_k(const RetrievalIndex& idx, std::size_t k) {
    idx.validate();
    require(k >= 1, ErrorCode::config, "rank_k requires k >= 1");
    const std::size_t np = idx.probe.dim(0);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < np; ++i)
        if (detail::score_query(idx, i).first_match_rank <= k) ++hits;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(np);
}

inline double mean_ap(const RetrievalIndex& idx) {
    idx.validate();
    const std::size_t np = idx.probe.dim(0);
    double s = 0.0;
    for (std::size_t i = 0; i < np; ++i) s += detail::score_query(idx, i).ap;
    return 100.0 * s / static_cast<double>(np);
}

inline double mean_inp(const RetrievalIndex& idx) {
    idx.validate();
    const std::size_t np = idx.probe.dim(0);
    double s = 0.0;
    for (std::size_t i = 0; i < np; ++i) s += detail::score_query(idx, i).inp;
    return 100.0 * s / static_cast<double>(np);
}

// Full report in one pass; per-probe work is independent and parallelized
// over fixed slots, so results are thread-count invariant.
inline EvalReport evaluate(const RetrievalIndex& idx, int threads = 1) {
    idx.validate();
    const std::size_t np = idx.probe.dim(0);
    EvalReport rep;
    rep.per_query.resize(np);
    parallel_for(np, threads, [&](std::size_t i) { rep.per_query[i] = detail::score_query(idx, i); });
    std::size_t r1 = 0, r5 = 0;
    double ap = 0.0, inp = 0.0;
    for (const auto& q : rep.per_query) {
        if (q.first_match_rank <= 1) ++r1;
        if (q.first_match_rank <= 5) ++r5;
        ap += q.ap;
        inp += q.inp;
    }
    const double n = static_cast<double>(np);
    rep.rank1 = 100.0 * static_cast<double>(r1) / n;
    rep.rank5 = 100.0 * static_cast<double>(r5) / n;
    rep.map = 100.0 * ap / n;
    rep.minp = 100.0 * inp / n;
    return rep;
}

// ---------------------------------------------------------------------------
// gap-closing analysis
// ---------------------------------------------------------------------------

struct GapRecord {
    double teacher_rank1 = 0.0;   // R_t
    double baseline_rank1 = 0.0;  // R_b
    double student_rank1 = 0.0;   // R_s
};

// GapClosed = (R_s - R_b) / (R_t - R_b) * 100.
inline double gap_closed(const GapRecord& rec) {
    require(rec.teacher_rank1 != rec.baseline_rank1, ErrorCode::degenerate_gap,
            "gap_closed undefined when teacher and baseline Rank-1 coincide");
    return (rec.student_rank1 - rec.baseline_rank1) / (rec.teacher_rank1 - rec.baseline_rank1) * 100.0;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline std::string report_keyvalue(const EvalReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "rank1=" << rep.rank1 << "\n"
       << "rank5=" << rep.rank5 << "\n"
       << "map=" << rep.map << "\n"
       << "minp=" << rep.minp << "\n"
       << "num_probes=" << rep.per_query.size() << "\n";
    return os.str();
}

inline std::string report_detail_csv(const EvalReport& rep) {
    std::ostringstream os;
    os.precision(17);
    os << "probe_idx,label,first_match_rank,ap,inp\n";
    for (std::size_t i = 0; i < rep.per_query.size(); ++i) {
        const auto& q = rep.per_query[i];
        os << i << ',' << q.label << ',' << q.first_match_rank << ',' << q.ap << ',' << q.inp << "\n";
    }
    return os.str();
}

}  // namespace gaitkd
