#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitkd/multi_teacher.hpp"

namespace gaitkd {

enum class DecisionMode { kl, dkd, mse, naive };
enum class FeatureMode { ab, mse, none };
enum class BoundaryAgg { vote, strongest };
enum class MtMethod { gaitkd, mean_teacher };

struct MultiTeacherParams {
    WeightPolicy policy;
    BoundaryAgg boundary_agg = BoundaryAgg::vote;
    MtMethod method = MtMethod::gaitkd;
};

// Every weight and scalar of the unified objective
// L = lambda_CE L_CE + lambda_Tri L_Tri + lambda_logit L_KL + lambda_bound L_AB.
struct HyperParams {
    BaseLossWeights base;
    SoftDistParams soft;
    DkdParams dkd;
    BoundaryParams boundary;
    double lambda_logit = 1.0;
    double lambda_bound = 1.0;
    DecisionMode decision_mode = DecisionMode::kl;
    FeatureMode feature_mode = FeatureMode::ab;
    bool logit_on = true;
    MultiTeacherParams multi_teacher;

    void validate() const {
        base.validate();
        soft.validate();
        dkd.validate();
        boundary.validate();
        require(std::isfinite(lambda_logit) && lambda_logit >= 0.0, ErrorCode::config,
                "lambda_logit must be >= 0");
        require(std::isfinite(lambda_bound) && lambda_bound >= 0.0, ErrorCode::config,
                "lambda_bound must be >= 0");
        multi_teacher.policy.validate();
    }

    bool wants_decision() const { return logit_on && lambda_logit > 0.0; }
    bool wants_feature() const { return feature_mode != FeatureMode::none && lambda_bound > 0.0; }
};

struct LossBreakdown {
    double total = 0.0;
    double ce = 0.0;        // unweighted components
    double tri = 0.0;
    double decision = 0.0;  // KL / DKD / logit-MSE / naive KD, per decision_mode
    double feature = 0.0;   // AB / feature-MSE, per feature_mode
    double tckd = 0.0;      // populated in dkd mode
    double nckd = 0.0;

    double weighted_ce = 0.0;
    double weighted_tri = 0.0;
    double weighted_decision = 0.0;
    double weighted_feature = 0.0;
};

struct StudentTapeOutputs {
    grad::Var logits;                      // (B, C, P_s)
    grad::Var emb;                         // (B, D_s, P_s)
    std::optional<grad::Var> intermediate;  // (B, H_s, P_s), multi-layer AB only
};

struct ObjectiveTapeResult {
    grad::Var total;
    LossBreakdown breakdown;
};

namespace detail {

// Teachers cropped to the part count shared with the student.
inline TeacherBank align_bank(const Tensor& student_logits, std::span<const TeacherOutput> raw) {
    std::size_t common = student_logits.dim(2);
    for (const auto& t : raw) common = std::min(common, t.logits.parts());
    TeacherBank bank;
    for (const auto& t : raw) {
        require(t.logits.batch() == student_logits.dim(0), ErrorCode::shape,
                "teacher batch dim differs from student");
        require(t.logits.classes() == student_logits.dim(1), ErrorCode::class_mismatch,
                "teacher class count differs from student");
        TeacherOutput out;
        out.logits = PartLogits(crop_parts(t.logits.data, common));
        out.emb = PartEmbeddings(crop_parts(t.emb.data, common));
        if (t.intermediate) out.intermediate = PartEmbeddings(crop_parts(t.intermediate->data, common));
        bank.teachers.push_back(std::move(out));
    }
    bank.validate();
    return bank;
}

// Ensemble of per-teacher masked distributions, mirroring the plain ensemble.
inline Tensor ensemble_masked_distribution(const TeacherBank& bank, const LabelVector& labels,
                                           const SoftDistParams& sp, const WeightPolicy& policy,
                                           double gamma) {
    const Tensor w = teacher_weights(bank, sp, policy);
    const std::size_t K = bank.size();
    const std::size_t B = bank[0].logits.batch(), C = bank[0].logits.classes(),
                      P = bank[0].logits.parts();
    Tensor out(Shape{B, C, P});
    for (std::size_t k = 0; k < K; ++k) {
        Tensor q = masked_soften(bank[k].logits, labels, sp, gamma);
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t p = 0; p < P; ++p) out(i, c, p) += w(k, i, p) * q(i, c, p);
    }
    return out;
}

inline SignTensor crop_gate_channels(const SignTensor& gate, std::size_t d_keep) {
    if (gate.dim() == d_keep) return gate;
    return SignTensor{crop_channels(gate.signs, d_keep)};
}

// Gated AB on tape with crop-min reconciliation between the student var and
// the gate tensor.
inline grad::Var ab_term(grad::Tape& t, grad::Var student_emb, const SignTensor& gate, double m,
                         DimAlign dim_align) {
    std::size_t ds = student_emb.value().dim(1), dg = gate.dim();
    if (ds != dg) {
        require(dim_align == DimAlign::crop_min, ErrorCode::shape,
                "embedding dims differ and dim_align=strict");
        const std::size_t d = std::min(ds, dg);
        return ab_gated_tape(t, grad::crop_channels(student_emb, d), crop_gate_channels(gate, d), m);
    }
    return ab_gated_tape(t, student_emb, gate, m);
}

inline grad::Var mse_term(grad::Tape& t, grad::Var student_emb, const PartEmbeddings& teacher_emb,
                          DimAlign dim_align) {
    std::size_t ds = student_emb.value().dim(1), dt = teacher_emb.dim();
    if (ds != dt) {
        require(dim_align == DimAlign::crop_min, ErrorCode::shape,
                "embedding dims differ and dim_align=strict");
        const std::size_t d = std::min(ds, dt);
        return mse_emb_tape(t, grad::crop_channels(student_emb, d), crop_channels(teacher_emb.data, d));
    }
    return mse_emb_tape(t, student_emb, teacher_emb.data);
}

}  // namespace detail

// Builds the full objective on the tape. Teacher outputs enter as constants
// only; the base losses run on the student's own full part set while the
// distillation terms run on the aligned common parts.
inline ObjectiveTapeResult total_loss_tape(grad::Tape& t, const StudentTapeOutputs& student,
                                           const LabelVector& labels,
                                           std::span<const TeacherOutput> teachers,
                                           const HyperParams& hp) {
    hp.validate();
    const bool kd_wanted = hp.wants_decision() || hp.wants_feature();
    require(!kd_wanted || !teachers.empty(), ErrorCode::config,
            "distillation weights are nonzero but the teacher bank is empty");

    ObjectiveTapeResult res;
    std::vector<grad::Var> terms;

    if (hp.base.lambda_ce > 0.0) {
        grad::Var ce = ce_tape(t, student.logits, labels);
        res.breakdown.ce = ce.value().scalar_value();
        terms.push_back(grad::mul_scalar(ce, hp.base.lambda_ce));
    }
    if (hp.base.lambda_tri > 0.0) {
        grad::Var tri = triplet_tape(t, student.emb, labels, hp.base.m_tri);
        res.breakdown.tri = tri.value().scalar_value();
        terms.push_back(grad::mul_scalar(tri, hp.base.lambda_tri));
    }

    if (kd_wanted) {
        TeacherBank bank = detail::align_bank(student.logits.value(), teachers);
        const std::size_t common = bank[0].logits.parts();
        grad::Var s_logits = grad::crop_parts(student.logits, common);
        grad::Var s_emb = grad::crop_parts(student.emb, common);
        const auto& mt = hp.multi_teacher;

        if (hp.wants_decision()) {
            grad::Var dec;
            if (mt.method == MtMethod::mean_teacher || hp.decision_mode == DecisionMode::mse ||
                hp.decision_mode == DecisionMode::naive) {
                // per-teacher losses, uniformly averaged
                std::vector<grad::Var> per_teacher;
                for (const auto& teacher : bank.teachers) {
                    switch (hp.decision_mode) {
                        case DecisionMode::kl:
                            per_teacher.push_back(
                                kl_vs_probs_tape(t, s_logits, soften(teacher.logits, hp.soft), hp.soft));
                            break;
                        case DecisionMode::dkd: {
                            auto r = dkd_vs_probs_tape(
                                t, s_logits, soften(teacher.logits, hp.soft),
                                masked_soften(teacher.logits, labels, hp.soft, hp.dkd.gamma), labels,
                                hp.soft, hp.dkd);
                            res.breakdown.tckd += r.tckd.value().scalar_value();
                            res.breakdown.nckd += r.nckd.value().scalar_value();
                            per_teacher.push_back(r.total);
                            break;
                        }
                        case DecisionMode::mse:
                            per_teacher.push_back(mse_logits_tape(t, s_logits, teacher.logits.data));
                            break;
                        case DecisionMode::naive:
                            per_teacher.push_back(naive_kd_tape(t, s_logits, teacher.logits, hp.soft));
                            break;
                    }
                }
                dec = grad::mul_scalar(grad::sum_vars(per_teacher),
                                       1.0 / static_cast<double>(per_teacher.size()));
                if (hp.decision_mode == DecisionMode::dkd) {
                    res.breakdown.tckd /= static_cast<double>(bank.size());
                    res.breakdown.nckd /= static_cast<double>(bank.size());
                }
            } else {
                // distribution-level aggregation (reduces to the single
                // teacher's distribution at K = 1)
                Tensor q_teacher = ensemble_distribution(bank, hp.soft, mt.policy);
                if (hp.decision_mode == DecisionMode::kl) {
                    dec = kl_vs_probs_tape(t, s_logits, q_teacher, hp.soft);
                } else {
                    Tensor q_masked = detail::ensemble_masked_distribution(bank, labels, hp.soft,
                                                                           mt.policy, hp.dkd.gamma);
                    auto r = dkd_vs_probs_tape(t, s_logits, q_teacher, q_masked, labels, hp.soft, hp.dkd);
                    res.breakdown.tckd = r.tckd.value().scalar_value();
                    res.breakdown.nckd = r.nckd.value().scalar_value();
                    dec = r.total;
                }
            }
            res.breakdown.decision = dec.value().scalar_value();
            terms.push_back(grad::mul_scalar(dec, hp.lambda_logit));
        }

        if (hp.wants_feature()) {
            grad::Var feat;
            if (hp.feature_mode == FeatureMode::mse || mt.method == MtMethod::mean_teacher) {
                std::vector<grad::Var> per_teacher;
                for (const auto& teacher : bank.teachers) {
                    if (hp.feature_mode == FeatureMode::mse)
                        per_teacher.push_back(
                            detail::mse_term(t, s_emb, teacher.emb, hp.boundary.dim_align));
                    else
                        per_teacher.push_back(detail::ab_term(t, s_emb, teacher_signs(teacher.emb),
                                                              hp.boundary.margin, hp.boundary.dim_align));
                }
                feat = grad::mul_scalar(grad::sum_vars(per_teacher),
                                        1.0 / static_cast<double>(per_teacher.size()));
            } else {
                // gaitkd AB path: single teacher signs, or an aggregated gate
                const bool multilayer =
                    hp.boundary.layer_weights.size() > 1 &&
                    hp.boundary.layer_weights[0] > 0.0;  // [w_intermediate, w_final]
                auto gate_for = [&](bool use_intermediate) {
                    TeacherBank layer_bank;
                    if (use_intermediate) {
                        for (const auto& teacher : bank.teachers) {
                            require(teacher.intermediate.has_value(), ErrorCode::config,
                                    "multi-layer AB requested but a teacher exposes no intermediate layer");
                            TeacherOutput o;
                            o.logits = teacher.logits;
                            o.emb = *teacher.intermediate;
                            layer_bank.teachers.push_back(std::move(o));
                        }
                    }
                    const TeacherBank& b = use_intermediate ? layer_bank : bank;
                    if (b.size() == 1) return teacher_signs(b[0].emb);
                    Tensor w = teacher_weights(bank, hp.soft, mt.policy);
                    return mt.boundary_agg == BoundaryAgg::vote ? sign_vote(b, w)
                                                                : strongest_teacher_signs(b, w);
                };
                if (!multilayer) {
                    feat = detail::ab_term(t, s_emb, gate_for(false), hp.boundary.margin,
                                           hp.boundary.dim_align);
                    if (hp.boundary.layer_weights.size() > 1)
                        feat = grad::mul_scalar(feat, hp.boundary.layer_weights.back());
                } else {
                    require(hp.boundary.layer_weights.size() == 2, ErrorCode::config,
                            "layer_weights must have 2 entries: [intermediate, final]");
                    require(student.intermediate.has_value(), ErrorCode::config,
                            "multi-layer AB requested but the student exposes no intermediate layer");
                    grad::Var s_mid = grad::crop_parts(*student.intermediate, common);
                    std::vector<grad::Var> layer_terms;
                    layer_terms.push_back(grad::mul_scalar(
                        detail::ab_term(t, s_mid, gate_for(true), hp.boundary.margin,
                                        hp.boundary.dim_align),
                        hp.boundary.layer_weights[0]));
                    if (hp.boundary.layer_weights[1] > 0.0)
                        layer_terms.push_back(grad::mul_scalar(
                            detail::ab_term(t, s_emb, gate_for(false), hp.boundary.margin,
                                            hp.boundary.dim_align),
                            hp.boundary.layer_weights[1]));
                    feat = grad::sum_vars(layer_terms);
                }
            }
            res.breakdown.feature = feat.value().scalar_value();
            terms.push_back(grad::mul_scalar(feat, hp.lambda_bound));
        }
    }

    res.total = terms.empty() ? t.constant(Tensor::scalar(0.0)) : grad::sum_vars(terms);
    res.breakdown.total = res.total.value().scalar_value();
    res.breakdown.weighted_ce = hp.base.lambda_ce * res.breakdown.ce;
    res.breakdown.weighted_tri = hp.base.lambda_tri * res.breakdown.tri;
    res.breakdown.weighted_decision = hp.lambda_logit * res.breakdown.decision;
    res.breakdown.weighted_feature = hp.lambda_bound * res.breakdown.feature;
    return res;
}

struct StudentOutputs {
    PartLogits logits;
    PartEmbeddings emb;
    std::optional<PartEmbeddings> intermediate;
};

struct TotalLossResult {
    LossBreakdown breakdown;
    Tensor d_logits;
    Tensor d_emb;
    std::optional<Tensor> d_intermediate;
};

// Value-level entry point: evaluates the objective and returns gradients
// w.r.t. every student output. Teacher tensors receive no gradient.
inline TotalLossResult total_loss(const StudentOutputs& student, const LabelVector& labels,
                                  std::span<const TeacherOutput> teachers, const HyperParams& hp) {
    grad::Tape t;
    StudentTapeOutputs vars;
    vars.logits = t.input(student.logits.data);
    vars.emb = t.input(student.emb.data);
    if (student.intermediate) vars.intermediate = t.input(student.intermediate->data);
    ObjectiveTapeResult r = total_loss_tape(t, vars, labels, teachers, hp);
    t.backward(r.total);
    TotalLossResult out;
    out.breakdown = r.breakdown;
    out.d_logits = vars.logits.grad();
    out.d_emb = vars.emb.grad();
    if (vars.intermediate) out.d_intermediate = vars.intermediate->grad();
    return out;
}

// ---------------------------------------------------------------------------
// ablation variants
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& ablation_variant_names() {
    static const std::vector<std::string> names = {
        "baseline",     "logit_only", "boundary_only", "full",        "mse_only",
        "mse_logit_ab", "mse_both",   "kl_mse",        "naive_kd_ab",
    };
    return names;
}

// Returns hp reconfigured to one of the registered objective variants
// (combinations of the logits-level and feature-level columns of the
// ablation grid).
inline HyperParams ablation_variant(HyperParams hp, const std::string& variant) {
    auto set = [&hp](bool logit_on, DecisionMode dm, FeatureMode fm) {
        hp.logit_on = logit_on;
        hp.decision_mode = dm;
        hp.feature_mode = fm;
    };
    if (variant == "baseline")
        set(false, DecisionMode::kl, FeatureMode::none);
    else if (variant == "logit_only")
        set(true, DecisionMode::kl, FeatureMode::none);
    else if (variant == "boundary_only")
        set(false, DecisionMode::kl, FeatureMode::ab);
    else if (variant == "full")
        set(true, DecisionMode::kl, FeatureMode::ab);
    else if (variant == "mse_only" || variant == "mse_only_feature")
        set(false, DecisionMode::kl, FeatureMode::mse);
    else if (variant == "mse_logit_ab" || variant == "mse_logit")
        set(true, DecisionMode::mse, FeatureMode::ab);
    else if (variant == "mse_both")
        set(true, DecisionMode::mse, FeatureMode::mse);
    else if (variant == "kl_mse")
        set(true, DecisionMode::kl, FeatureMode::mse);
    else if (variant == "naive_kd_ab")
        set(true, DecisionMode::naive, FeatureMode::ab);
    else
        fail(ErrorCode::config, "unknown ablation variant '" + variant + "'");
    return hp;
}

}  // namespace gaitkd
