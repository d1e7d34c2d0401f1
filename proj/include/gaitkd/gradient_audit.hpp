#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gaitkd/objective.hpp"
#include "gaitkd/parallel.hpp"
#include "gaitkd/rng.hpp"

namespace gaitkd {

// One registered loss: a sampler that draws a random kink-avoiding instance
// (inputs to differentiate plus a tape builder capturing everything else as
// constants) and the tolerance its finite-difference check must meet.
struct AuditSpec {
    std::string name;
    double tol = 1e-5;
    std::function<std::pair<std::vector<Tensor>, grad::TapeFnMulti>(Rng&)> make;
};

struct AuditResult {
    std::string name;
    std::size_t points = 0;
    std::size_t coords = 0;
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    bool pass = true;
    std::string detail;
};

namespace audit_detail {

constexpr std::size_t kB = 4, kC = 4, kP = 2, kD = 3;
const std::vector<int> kLabels = {0, 0, 1, 1};

inline Tensor uniform_tensor(Rng& rng, Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Keep triplet hinge arguments, pair distances and row norms away from the
// hinge/sqrt kinks so central differences are well defined.
inline bool triplet_point_ok(const Tensor& emb, const std::vector<int>& labels, double m_tri,
                             double safe) {
    const std::size_t B = emb.dim(0), D = emb.dim(1), P = emb.dim(2);
    for (std::size_t p = 0; p < P; ++p) {
        std::vector<std::vector<double>> rows(B, std::vector<double>(D));
        for (std::size_t i = 0; i < B; ++i) {
            double n2 = 0.0;
            for (std::size_t d = 0; d < D; ++d) n2 += emb(i, d, p) * emb(i, d, p);
            const double n = std::sqrt(n2);
            if (n < 0.5) return false;
            for (std::size_t d = 0; d < D; ++d) rows[i][d] = emb(i, d, p) / n;
        }
        std::vector<std::vector<double>> dist(B, std::vector<double>(B, 0.0));
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = i + 1; j < B; ++j) {
                double d2 = 0.0;
                for (std::size_t d = 0; d < D; ++d) {
                    const double diff = rows[i][d] - rows[j][d];
                    d2 += diff * diff;
                }
                dist[i][j] = dist[j][i] = std::sqrt(d2);
                if (dist[i][j] < safe) return false;
            }
        for (std::size_t a = 0; a < B; ++a)
            for (std::size_t pos = 0; pos < B; ++pos) {
                if (pos == a || labels[pos] != labels[a]) continue;
                for (std::size_t neg = 0; neg < B; ++neg) {
                    if (labels[neg] == labels[a]) continue;
                    if (std::abs(m_tri + dist[a][pos] - dist[a][neg]) < safe) return false;
                }
            }
    }
    return true;
}

inline bool ab_point_ok(const Tensor& student, const Tensor& gate_signs, double m, double safe) {
    for (std::size_t i = 0; i < student.numel(); ++i) {
        const double arg = gate_signs[i] <= 0.0 ? student[i] + m : m - student[i];
        if (std::abs(arg) < safe) return false;
    }
    return true;
}

inline Tensor draw_triplet_emb(Rng& rng, double m_tri, double safe) {
    for (;;) {
        Tensor emb = rng.normal_tensor(Shape{kB, kD, kP});
        if (triplet_point_ok(emb, kLabels, m_tri, safe)) return emb;
    }
}

inline Tensor draw_ab_student(Rng& rng, const Tensor& gate, double m, double safe) {
    for (;;) {
        Tensor s = rng.normal_tensor(Shape{gate.dim(0), gate.dim(1), gate.dim(2)}, 1.2);
        if (ab_point_ok(s, gate, m, safe)) return s;
    }
}

}  // namespace audit_detail

// Every loss of the objective, each wired to a kink-avoiding sampler.
// eps is the finite-difference step used by the runner; the safe distance to
// any hinge is kept at 100 * eps.
inline std::vector<AuditSpec> default_audit_registry(double eps = 1e-5) {
    using namespace audit_detail;
    const double safe = 100.0 * eps;
    std::vector<AuditSpec> specs;

    const SoftDistParams sp{2.0, 1.0};
    const LabelVector labels{kLabels};

    specs.push_back({"ce", 1e-5, [labels](Rng& rng) {
                         std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)};
                         grad::TapeFnMulti fn = [labels](grad::Tape& t, std::span<const grad::Var> v) {
                             return ce_tape(t, v[0], labels);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"triplet", 1e-5, [labels, safe](Rng& rng) {
                         const double m_tri = 0.2;
                         std::vector<Tensor> xs{draw_triplet_emb(rng, m_tri, safe)};
                         grad::TapeFnMulti fn = [labels, m_tri](grad::Tape& t,
                                                                std::span<const grad::Var> v) {
                             return triplet_tape(t, v[0], labels, m_tri);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"kl", 1e-5, [sp](Rng& rng) {
                         std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)};
                         Tensor qt = soften(PartLogits(uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)), sp);
                         grad::TapeFnMulti fn = [qt, sp](grad::Tape& t, std::span<const grad::Var> v) {
                             return kl_vs_probs_tape(t, v[0], qt, sp);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"tckd", 1e-5, [sp, labels](Rng& rng) {
                         std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)};
                         Tensor qt = soften(PartLogits(uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)), sp);
                         grad::TapeFnMulti fn = [qt, sp, labels](grad::Tape& t,
                                                                 std::span<const grad::Var> v) {
                             return tckd_vs_probs_tape(t, v[0], qt, labels, sp);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    const double inf = std::numeric_limits<double>::infinity();
    for (auto [suffix, gamma] : {std::pair<const char*, double>{"", inf},
                                 std::pair<const char*, double>{"_finite_gamma", 50.0}}) {
        specs.push_back({std::string("nckd") + suffix, 1e-5, [sp, labels, gamma](Rng& rng) {
                             std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)};
                             PartLogits teacher(uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0));
                             Tensor qt_masked = masked_soften(teacher, labels, sp, gamma);
                             grad::TapeFnMulti fn = [qt_masked, sp, labels, gamma](
                                                        grad::Tape& t, std::span<const grad::Var> v) {
                                 return nckd_vs_probs_tape(t, v[0], qt_masked, labels, sp, gamma);
                             };
                             return std::make_pair(std::move(xs), std::move(fn));
                         }});
    }

    specs.push_back({"dkd", 1e-5, [sp, labels](Rng& rng) {
                         std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)};
                         PartLogits teacher(uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0));
                         DkdParams dp;
                         dp.alpha_d = 0.7;
                         dp.beta_d = 1.3;
                         Tensor qt = soften(teacher, sp);
                         Tensor qtm = masked_soften(teacher, labels, sp, dp.gamma);
                         grad::TapeFnMulti fn = [qt, qtm, sp, labels, dp](grad::Tape& t,
                                                                          std::span<const grad::Var> v) {
                             return dkd_vs_probs_tape(t, v[0], qt, qtm, labels, sp, dp).total;
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"ab", 1e-5, [safe](Rng& rng) {
                         const double m = 0.5;
                         Tensor teacher = rng.normal_tensor(Shape{kB, kD, kP});
                         SignTensor gate = teacher_signs(PartEmbeddings(teacher));
                         std::vector<Tensor> xs{draw_ab_student(rng, gate.signs, m, safe)};
                         grad::TapeFnMulti fn = [gate, m](grad::Tape& t, std::span<const grad::Var> v) {
                             return ab_gated_tape(t, v[0], gate, m);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"ab_multilayer", 1e-5, [safe](Rng& rng) {
                         const double m = 0.5;
                         SignTensor gate_mid = teacher_signs(PartEmbeddings(rng.normal_tensor(Shape{kB, kD, kP})));
                         SignTensor gate_fin = teacher_signs(PartEmbeddings(rng.normal_tensor(Shape{kB, kD, kP})));
                         std::vector<Tensor> xs{draw_ab_student(rng, gate_mid.signs, m, safe),
                                                draw_ab_student(rng, gate_fin.signs, m, safe)};
                         grad::TapeFnMulti fn = [gate_mid, gate_fin, m](grad::Tape& t,
                                                                        std::span<const grad::Var> v) {
                             grad::Var a = ab_gated_tape(t, v[0], gate_mid, m);
                             grad::Var b = ab_gated_tape(t, v[1], gate_fin, m);
                             return grad::add(grad::mul_scalar(a, 0.4), grad::mul_scalar(b, 0.6));
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"mse_feature", 1e-5, [](Rng& rng) {
                         Tensor teacher = rng.normal_tensor(Shape{kB, kD, kP});
                         std::vector<Tensor> xs{rng.normal_tensor(Shape{kB, kD, kP})};
                         grad::TapeFnMulti fn = [teacher](grad::Tape& t, std::span<const grad::Var> v) {
                             return mse_emb_tape(t, v[0], teacher);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    specs.push_back({"mse_logit", 1e-5, [](Rng& rng) {
                         Tensor teacher = uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0);
                         std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0)};
                         grad::TapeFnMulti fn = [teacher](grad::Tape& t, std::span<const grad::Var> v) {
                             return mse_logits_tape(t, v[0], teacher);
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    // composed objective, checked w.r.t. both student outputs at a looser
    // tolerance (stacked hinges)
    specs.push_back({"total", 1e-4, [sp, labels, safe](Rng& rng) {
                         HyperParams hp;
                         hp.soft = sp;
                         hp.base.m_tri = 0.2;
                         hp.boundary.margin = 0.5;
                         TeacherOutput teacher;
                         teacher.logits = PartLogits(uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0));
                         Tensor temb = rng.normal_tensor(Shape{kB, kD, kP});
                         teacher.emb = PartEmbeddings(temb);
                         SignTensor gate = teacher_signs(teacher.emb);
                         std::vector<Tensor> xs{uniform_tensor(rng, {kB, kC, kP}, -2.0, 2.0),
                                                Tensor()};
                         for (;;) {
                             Tensor emb = draw_triplet_emb(rng, hp.base.m_tri, safe);
                             if (ab_point_ok(emb, gate.signs, hp.boundary.margin, safe)) {
                                 xs[1] = emb;
                                 break;
                             }
                         }
                         std::vector<TeacherOutput> bank{teacher};
                         grad::TapeFnMulti fn = [bank, labels, hp](grad::Tape& t,
                                                                   std::span<const grad::Var> v) {
                             StudentTapeOutputs outs;
                             outs.logits = v[0];
                             outs.emb = v[1];
                             return total_loss_tape(t, outs, labels, bank, hp).total;
                         };
                         return std::make_pair(std::move(xs), std::move(fn));
                     }});

    return specs;
}

// Runs every spec at `points` random instances each. Point seeds derive from
// base_seed and the point index, so results are thread-count invariant.
inline std::vector<AuditResult> run_gradient_audit(const std::vector<AuditSpec>& specs,
                                                   std::size_t points, double eps,
                                                   std::uint64_t base_seed = 20240901,
                                                   int threads = 1) {
    std::vector<AuditResult> results;
    results.reserve(specs.size());
    for (std::size_t s = 0; s < specs.size(); ++s) {
        const AuditSpec& spec = specs[s];
        std::vector<grad::GradCheckReport> reports(points);
        parallel_for(points, threads, [&](std::size_t i) {
            Rng rng(mix_seed(base_seed, s * 1000003 + i));
            auto [inputs, fn] = spec.make(rng);
            reports[i] = grad::check_gradient_multi(fn, inputs, eps, spec.tol);
        });
        AuditResult res;
        res.name = spec.name;
        res.points = points;
        for (std::size_t i = 0; i < points; ++i) {
            res.coords += reports[i].coords_checked;
            res.worst_rel = std::max(res.worst_rel, reports[i].max_rel_err);
            res.worst_abs = std::max(res.worst_abs, reports[i].max_abs_err);
            if (!reports[i].pass && res.pass) {
                res.pass = false;
                res.detail = "point " + std::to_string(i) + " " + reports[i].worst;
            }
        }
        results.push_back(std::move(res));
    }
    return results;
}

inline std::string audit_report_text(const std::vector<AuditResult>& results) {
    std::ostringstream os;
    for (const auto& r : results) {
        os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.points << " points, " << r.coords
           << " coords, worst rel err " << r.worst_rel;
        if (!r.detail.empty()) os << " (" << r.detail << ")";
        os << "\n";
    }
    return os.str();
}

}  // namespace gaitkd
