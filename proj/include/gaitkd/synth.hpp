#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaitkd/rng.hpp"
#include "gaitkd/tensor.hpp"

namespace gaitkd {

// Synthetic gait-like data: one latent prototype per identity, fixed random
// orthogonal view transforms shared across identities, Gaussian sample noise,
// and fixed random per-part projections of the sample vector. Parts are a
// property of the data, so heterogeneous models see the same part inputs.
struct SynthConfig {
    int num_ids = 50;
    int samples_per_id = 12;
    int train_per_id = 6;
    int gallery_per_id = 3;
    int probe_per_id = 3;
    int seq_feature_dim = 48;
    int num_parts = 16;
    int view_count = 4;
    double noise_sigma = 0.4;
    std::uint64_t seed = 1234;

    void validate() const {
        require(num_ids >= 2, ErrorCode::config, "num_ids must be >= 2");
        require(samples_per_id >= 2, ErrorCode::config, "samples_per_id must be >= 2");
        require(train_per_id >= 2 && gallery_per_id >= 1 && probe_per_id >= 1, ErrorCode::config,
                "need train_per_id >= 2, gallery_per_id >= 1, probe_per_id >= 1");
        require(train_per_id + gallery_per_id + probe_per_id == samples_per_id, ErrorCode::config,
                "train+gallery+probe per id must equal samples_per_id");
        require(seq_feature_dim >= 1 && num_parts >= 1 && view_count >= 1, ErrorCode::config,
                "dims, parts and views must be positive");
        require(noise_sigma >= 0.0, ErrorCode::config, "noise_sigma must be >= 0");
    }
};

struct DataSample {
    Tensor raw;          // (F)
    Tensor part_inputs;  // (F, P_data)
    int label = 0;
    int view = 0;
};

struct Dataset {
    SynthConfig cfg;
    std::vector<DataSample> samples;
    std::vector<std::size_t> train_idx, gallery_idx, probe_idx;

    std::size_t feature_dim() const { return static_cast<std::size_t>(cfg.seq_feature_dim); }
    std::size_t parts() const { return static_cast<std::size_t>(cfg.num_parts); }
    std::size_t num_classes() const { return static_cast<std::size_t>(cfg.num_ids); }
};

namespace detail {

// Modified Gram-Schmidt on a Gaussian matrix; deterministic, full rank a.s.
inline Tensor random_orthogonal(std::size_t n, Rng& rng) {
    Tensor m = rng.normal_tensor(Shape{n, n});
    for (std::size_t c = 0; c < n; ++c) {
        for (std::size_t prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (std::size_t r = 0; r < n; ++r) dot += m(r, c) * m(r, prev);
            for (std::size_t r = 0; r < n; ++r) m(r, c) -= dot * m(r, prev);
        }
        double norm2 = 0.0;
        for (std::size_t r = 0; r < n; ++r) norm2 += m(r, c) * m(r, c);
        double norm = std::sqrt(norm2);
        require(norm > 1e-9, ErrorCode::numeric, "degenerate column in orthogonalization");
        for (std::size_t r = 0; r < n; ++r) m(r, c) /= norm;
    }
    return m;
}

inline Tensor matvec(const Tensor& m, const Tensor& v) {
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    Tensor out(Shape{rows});
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += m(r, c) * v[c];
        out[r] = acc;
    }
    return out;
}

}  // namespace detail

inline Dataset generate_dataset(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t F = static_cast<std::size_t>(cfg.seq_feature_dim);
    const std::size_t P = static_cast<std::size_t>(cfg.num_parts);

    Rng rng_proto(mix_seed(cfg.seed, 1));
    Rng rng_view(mix_seed(cfg.seed, 2));
    Rng rng_proj(mix_seed(cfg.seed, 3));
    Rng rng_noise(mix_seed(cfg.seed, 4));

    std::vector<Tensor> prototypes;
    prototypes.reserve(cfg.num_ids);
    for (int c = 0; c < cfg.num_ids; ++c) prototypes.push_back(rng_proto.normal_tensor(Shape{F}));

    std::vector<Tensor> views;
    views.reserve(cfg.view_count);
    for (int v = 0; v < cfg.view_count; ++v) views.push_back(detail::random_orthogonal(F, rng_view));

    const double proj_scale = 1.0 / std::sqrt(static_cast<double>(F));
    std::vector<Tensor> projections;
    projections.reserve(P);
    for (std::size_t p = 0; p < P; ++p)
        projections.push_back(rng_proj.normal_tensor(Shape{F, F}, proj_scale));

    Dataset ds;
    ds.cfg = cfg;
    for (int c = 0; c < cfg.num_ids; ++c) {
        for (int s = 0; s < cfg.samples_per_id; ++s) {
            DataSample sample;
            sample.label = c;
            sample.view = s % cfg.view_count;
            Tensor x = detail::matvec(views[static_cast<std::size_t>(sample.view)], prototypes[c]);
            if (cfg.noise_sigma > 0.0)
                for (std::size_t f = 0; f < F; ++f) x[f] += cfg.noise_sigma * rng_noise.normal();
            sample.raw = x;
            sample.part_inputs = Tensor(Shape{F, P});
            for (std::size_t p = 0; p < P; ++p) {
                Tensor u = detail::matvec(projections[p], x);
                for (std::size_t f = 0; f < F; ++f) sample.part_inputs(f, p) = u[f];
            }
            const std::size_t idx = ds.samples.size();
            ds.samples.push_back(std::move(sample));
            if (s < cfg.train_per_id)
                ds.train_idx.push_back(idx);
            else if (s < cfg.train_per_id + cfg.gallery_per_id)
                ds.gallery_idx.push_back(idx);
            else
                ds.probe_idx.push_back(idx);
        }
    }
    return ds;
}

// Batch part inputs for the first `model_parts` parts, shape (B, F, P_m).
inline Tensor gather_batch_inputs(const Dataset& ds, const std::vector<std::size_t>& indices,
                                  std::size_t model_parts) {
    require(model_parts >= 1 && model_parts <= ds.parts(), ErrorCode::config,
            "model part count exceeds dataset parts");
    const std::size_t B = indices.size(), F = ds.feature_dim();
    Tensor out(Shape{B, F, model_parts});
    for (std::size_t i = 0; i < B; ++i) {
        const Tensor& pi = ds.samples[indices[i]].part_inputs;
        for (std::size_t f = 0; f < F; ++f)
            for (std::size_t p = 0; p < model_parts; ++p) out(i, f, p) = pi(f, p);
    }
    return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, const std::vector<std::size_t>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(ds.samples[i].label);
    return out;
}

}  // namespace gaitkd
