#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaitkd/autodiff.hpp"
#include "gaitkd/objective.hpp"
#include "gaitkd/rng.hpp"

namespace gaitkd {

struct ToyModelConfig {
    int num_parts = 4;
    int input_dim = 48;
    int hidden_width = 16;
    int depth = 1;  // hidden affine+tanh layers before the embedding head
    int embed_dim = 8;
    int num_classes = 50;
    std::uint64_t init_seed = 1;

    void validate() const {
        require(num_parts >= 1, ErrorCode::config, "num_parts must be >= 1");
        require(input_dim >= 1, ErrorCode::config, "input_dim must be >= 1");
        require(hidden_width >= 1, ErrorCode::config, "hidden_width must be >= 1");
        require(depth >= 1, ErrorCode::config, "depth must be >= 1");
        require(embed_dim >= 1, ErrorCode::config, "embed_dim must be >= 1");
        require(num_classes >= 2, ErrorCode::config, "num_classes must be >= 2");
    }

    bool operator==(const ToyModelConfig&) const = default;
};

// Per-part affine+tanh stack -> linear embedding head -> linear class head.
// Weight matrices are stored (in, out) so a batch forward is X * W + b.
struct ToyModel {
    struct PartNet {
        std::vector<Tensor> hidden_w;  // depth x (in, width)
        std::vector<Tensor> hidden_b;  // depth x (width)
        Tensor emb_w;                  // (width, D)
        Tensor emb_b;                  // (D)
        Tensor cls_w;                  // (D, C)
        Tensor cls_b;                  // (C)
    };

    ToyModelConfig cfg;
    std::vector<PartNet> parts;

    static ToyModel init(const ToyModelConfig& cfg) {
        cfg.validate();
        ToyModel m;
        m.cfg = cfg;
        Rng rng(mix_seed(cfg.init_seed, 0x746f79));
        auto winit = [&rng](std::size_t in, std::size_t out) {
            return rng.normal_tensor(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
        };
        for (int p = 0; p < cfg.num_parts; ++p) {
            PartNet net;
            std::size_t in = static_cast<std::size_t>(cfg.input_dim);
            for (int l = 0; l < cfg.depth; ++l) {
                net.hidden_w.push_back(winit(in, cfg.hidden_width));
                net.hidden_b.push_back(Tensor(Shape{static_cast<std::size_t>(cfg.hidden_width)}));
                in = static_cast<std::size_t>(cfg.hidden_width);
            }
            net.emb_w = winit(in, cfg.embed_dim);
            net.emb_b = Tensor(Shape{static_cast<std::size_t>(cfg.embed_dim)});
            net.cls_w = winit(cfg.embed_dim, cfg.num_classes);
            net.cls_b = Tensor(Shape{static_cast<std::size_t>(cfg.num_classes)});
            m.parts.push_back(std::move(net));
        }
        return m;
    }

    // Stable iteration order for the optimizer and the checkpoint format.
    std::vector<std::pair<std::string, Tensor*>> named_params() {
        std::vector<std::pair<std::string, Tensor*>> out;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::string prefix = "part" + std::to_string(p) + ".";
            for (std::size_t l = 0; l < parts[p].hidden_w.size(); ++l) {
                out.emplace_back(prefix + "hidden" + std::to_string(l) + ".w", &parts[p].hidden_w[l]);
                out.emplace_back(prefix + "hidden" + std::to_string(l) + ".b", &parts[p].hidden_b[l]);
            }
            out.emplace_back(prefix + "emb.w", &parts[p].emb_w);
            out.emplace_back(prefix + "emb.b", &parts[p].emb_b);
            out.emplace_back(prefix + "cls.w", &parts[p].cls_w);
            out.emplace_back(prefix + "cls.b", &parts[p].cls_b);
        }
        return out;
    }

    std::vector<std::pair<std::string, const Tensor*>> named_params() const {
        std::vector<std::pair<std::string, const Tensor*>> out;
        auto mut = const_cast<ToyModel*>(this)->named_params();
        out.reserve(mut.size());
        for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
        return out;
    }
};

namespace detail {

inline void affine_plain(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    const std::size_t B = x.dim(0), in = x.dim(1), o = w.dim(1);
    grad::detail::matmul_kernel(x.data(), w.data(), out.data(), B, in, o);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < o; ++j) out(i, j) += b[j];
}

}  // namespace detail

// Plain (gradient-free) forward; identical arithmetic to the tape forward.
inline StudentOutputs forward_model(const ToyModel& m, const Tensor& batch_inputs) {
    require(batch_inputs.rank() == 3, ErrorCode::shape, "model inputs must be (B,F,P)");
    require(batch_inputs.dim(1) == static_cast<std::size_t>(m.cfg.input_dim), ErrorCode::shape,
            "model input dim mismatch");
    require(batch_inputs.dim(2) == m.parts.size(), ErrorCode::shape, "model part count mismatch");
    const std::size_t B = batch_inputs.dim(0), P = m.parts.size();
    const std::size_t H = static_cast<std::size_t>(m.cfg.hidden_width);
    const std::size_t D = static_cast<std::size_t>(m.cfg.embed_dim);
    const std::size_t C = static_cast<std::size_t>(m.cfg.num_classes);

    Tensor logits(Shape{B, C, P}), emb(Shape{B, D, P}), mid(Shape{B, H, P});
    for (std::size_t p = 0; p < P; ++p) {
        const auto& net = m.parts[p];
        Tensor h = part_slice(batch_inputs, p);
        for (std::size_t l = 0; l < net.hidden_w.size(); ++l) {
            Tensor next(Shape{B, H});
            detail::affine_plain(h, net.hidden_w[l], net.hidden_b[l], next);
            for (std::size_t i = 0; i < next.numel(); ++i) next[i] = std::tanh(next[i]);
            h = std::move(next);
        }
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < H; ++j) mid(i, j, p) = h(i, j);
        Tensor e(Shape{B, D});
        detail::affine_plain(h, net.emb_w, net.emb_b, e);
        Tensor z(Shape{B, C});
        detail::affine_plain(e, net.cls_w, net.cls_b, z);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < D; ++j) emb(i, j, p) = e(i, j);
            for (std::size_t j = 0; j < C; ++j) logits(i, j, p) = z(i, j);
        }
    }
    StudentOutputs out;
    out.logits = PartLogits(std::move(logits));
    out.emb = PartEmbeddings(std::move(emb));
    out.intermediate = PartEmbeddings(std::move(mid));
    return out;
}

inline TeacherOutput forward_teacher(const ToyModel& m, const Tensor& batch_inputs) {
    StudentOutputs s = forward_model(m, batch_inputs);
    TeacherOutput t;
    t.logits = std::move(s.logits);
    t.emb = std::move(s.emb);
    t.intermediate = std::move(s.intermediate);
    return t;
}

// Tape forward with parameters as leaves; fills `param_vars` in the same
// order as named_params().
inline StudentTapeOutputs forward_model_tape(grad::Tape& t, ToyModel& m, const Tensor& batch_inputs,
                                             std::vector<grad::Var>& param_vars) {
    require(batch_inputs.dim(2) == m.parts.size(), ErrorCode::shape, "model part count mismatch");
    const std::size_t B = batch_inputs.dim(0), P = m.parts.size();

    auto params = m.named_params();
    param_vars.clear();
    param_vars.reserve(params.size());
    std::vector<grad::Var> by_tensor;
    for (auto& [name, ptr] : params) {
        param_vars.push_back(t.input(*ptr));
        by_tensor.push_back(param_vars.back());
    }
    // per-part leaf layout mirrors named_params(): depth*(w,b), emb w/b, cls w/b
    const std::size_t per_part = 2 * m.parts[0].hidden_w.size() + 4;

    std::vector<grad::Var> logit_slices, emb_slices, mid_slices;
    for (std::size_t p = 0; p < P; ++p) {
        std::size_t base = p * per_part;
        grad::Var h = t.constant(part_slice(batch_inputs, p));
        for (std::size_t l = 0; l < m.parts[p].hidden_w.size(); ++l) {
            grad::Var w = by_tensor[base + 2 * l];
            grad::Var b = by_tensor[base + 2 * l + 1];
            h = grad::tanh_(grad::add(grad::matmul(h, w), grad::broadcast_rows(b, B)));
        }
        mid_slices.push_back(h);
        std::size_t head = base + 2 * m.parts[p].hidden_w.size();
        grad::Var e = grad::add(grad::matmul(h, by_tensor[head]), grad::broadcast_rows(by_tensor[head + 1], B));
        grad::Var z = grad::add(grad::matmul(e, by_tensor[head + 2]), grad::broadcast_rows(by_tensor[head + 3], B));
        emb_slices.push_back(e);
        logit_slices.push_back(z);
    }
    StudentTapeOutputs out;
    out.logits = grad::stack_parts(logit_slices);
    out.emb = grad::stack_parts(emb_slices);
    out.intermediate = grad::stack_parts(mid_slices);
    return out;
}

}  // namespace gaitkd
