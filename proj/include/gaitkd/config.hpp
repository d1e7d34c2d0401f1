#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaitkd/objective.hpp"
#include "gaitkd/synth.hpp"
#include "gaitkd/toy_model.hpp"
#include "gaitkd/trainer.hpp"

namespace gaitkd {

using json = nlohmann::json;

// One run = one config file. Model sections omit input_dim / num_classes;
// those always come from the synth section.
struct RunConfig {
    SynthConfig synth;
    ToyModelConfig student;
    std::vector<ToyModelConfig> teachers;
    TrainConfig train;          // student recipe
    TrainConfig teacher_train;  // teacher recipe
    HyperParams objective;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "runs/out";

    void validate() const {
        synth.validate();
        student.validate();
        for (const auto& t : teachers) t.validate();
        train.validate();
        teacher_train.validate();
        objective.validate();
        require(!seeds.empty(), ErrorCode::config, "seeds list must be nonempty");
        auto check_model = [this](const ToyModelConfig& m, const char* who) {
            require(m.num_parts <= synth.num_parts, ErrorCode::config,
                    std::string(who) + " num_parts exceeds synth num_parts");
            require(m.input_dim == synth.seq_feature_dim, ErrorCode::config,
                    std::string(who) + " input_dim does not match synth seq_feature_dim");
            require(m.num_classes == synth.num_ids, ErrorCode::config,
                    std::string(who) + " num_classes does not match synth num_ids");
        };
        check_model(student, "student");
        for (const auto& t : teachers) check_model(t, "teacher");
    }
};

namespace cfg_detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    require(j.is_object(), ErrorCode::config, "config section '" + ctx + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(allowed.count(it.key()) > 0, ErrorCode::config,
                "unknown key '" + it.key() + "' in config section '" + ctx + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("bad value for '") + key + "': " + e.what());
    }
}

inline std::string enum_str(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::sgd_momentum: return "sgd_momentum";
        case OptimizerKind::adam: return "adam";
    }
    return "adam";
}
inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
    if (s == "adam") return OptimizerKind::adam;
    fail(ErrorCode::config, "unknown optimizer '" + s + "'");
}

inline std::string enum_str(DecisionMode m) {
    switch (m) {
        case DecisionMode::kl: return "kl";
        case DecisionMode::dkd: return "dkd";
        case DecisionMode::mse: return "mse";
        case DecisionMode::naive: return "naive";
    }
    return "kl";
}
inline DecisionMode parse_decision(const std::string& s) {
    if (s == "kl") return DecisionMode::kl;
    if (s == "dkd") return DecisionMode::dkd;
    if (s == "mse") return DecisionMode::mse;
    if (s == "naive") return DecisionMode::naive;
    fail(ErrorCode::config, "unknown decision_mode '" + s + "'");
}

inline std::string enum_str(FeatureMode m) {
    switch (m) {
        case FeatureMode::ab: return "ab";
        case FeatureMode::mse: return "mse";
        case FeatureMode::none: return "none";
    }
    return "ab";
}
inline FeatureMode parse_feature(const std::string& s) {
    if (s == "ab") return FeatureMode::ab;
    if (s == "mse") return FeatureMode::mse;
    if (s == "none") return FeatureMode::none;
    fail(ErrorCode::config, "unknown feature_mode '" + s + "'");
}

inline std::string enum_str(WeightMode m) { return m == WeightMode::uniform ? "uniform" : "entropy"; }
inline WeightMode parse_weight_mode(const std::string& s) {
    if (s == "uniform") return WeightMode::uniform;
    if (s == "entropy") return WeightMode::entropy;
    fail(ErrorCode::config, "unknown weight_mode '" + s + "'");
}

inline std::string enum_str(BoundaryAgg a) { return a == BoundaryAgg::vote ? "vote" : "strongest"; }
inline BoundaryAgg parse_boundary_agg(const std::string& s) {
    if (s == "vote") return BoundaryAgg::vote;
    if (s == "strongest") return BoundaryAgg::strongest;
    fail(ErrorCode::config, "unknown boundary_agg '" + s + "'");
}

inline std::string enum_str(MtMethod m) { return m == MtMethod::gaitkd ? "gaitkd" : "mean_teacher"; }
inline MtMethod parse_mt_method(const std::string& s) {
    if (s == "gaitkd") return MtMethod::gaitkd;
    if (s == "mean_teacher") return MtMethod::mean_teacher;
    fail(ErrorCode::config, "unknown multi-teacher method '" + s + "'");
}

inline std::string enum_str(DimAlign d) { return d == DimAlign::crop_min ? "crop_min" : "strict"; }
inline DimAlign parse_dim_align(const std::string& s) {
    if (s == "crop_min") return DimAlign::crop_min;
    if (s == "strict") return DimAlign::strict;
    fail(ErrorCode::config, "unknown dim_align '" + s + "'");
}

}  // namespace cfg_detail

// --- synth ---

inline json to_json(const SynthConfig& c) {
    return json{{"num_ids", c.num_ids},
                {"samples_per_id", c.samples_per_id},
                {"train_per_id", c.train_per_id},
                {"gallery_per_id", c.gallery_per_id},
                {"probe_per_id", c.probe_per_id},
                {"seq_feature_dim", c.seq_feature_dim},
                {"num_parts", c.num_parts},
                {"view_count", c.view_count},
                {"noise_sigma", c.noise_sigma},
                {"seed", c.seed}};
}

inline SynthConfig synth_from_json(const json& j) {
    cfg_detail::check_keys(j,
                           {"num_ids", "samples_per_id", "train_per_id", "gallery_per_id",
                            "probe_per_id", "seq_feature_dim", "num_parts", "view_count",
                            "noise_sigma", "seed"},
                           "synth");
    SynthConfig c;
    cfg_detail::read(j, "num_ids", c.num_ids);
    cfg_detail::read(j, "samples_per_id", c.samples_per_id);
    cfg_detail::read(j, "train_per_id", c.train_per_id);
    cfg_detail::read(j, "gallery_per_id", c.gallery_per_id);
    cfg_detail::read(j, "probe_per_id", c.probe_per_id);
    cfg_detail::read(j, "seq_feature_dim", c.seq_feature_dim);
    cfg_detail::read(j, "num_parts", c.num_parts);
    cfg_detail::read(j, "view_count", c.view_count);
    cfg_detail::read(j, "noise_sigma", c.noise_sigma);
    cfg_detail::read(j, "seed", c.seed);
    return c;
}

// --- model ---

inline json to_json_model(const ToyModelConfig& c) {
    return json{{"num_parts", c.num_parts},
                {"hidden_width", c.hidden_width},
                {"depth", c.depth},
                {"embed_dim", c.embed_dim},
                {"init_seed", c.init_seed}};
}

inline ToyModelConfig model_from_json(const json& j, const SynthConfig& synth, const std::string& ctx) {
    cfg_detail::check_keys(j, {"num_parts", "hidden_width", "depth", "embed_dim", "init_seed"}, ctx);
    ToyModelConfig c;
    c.input_dim = synth.seq_feature_dim;
    c.num_classes = synth.num_ids;
    cfg_detail::read(j, "num_parts", c.num_parts);
    cfg_detail::read(j, "hidden_width", c.hidden_width);
    cfg_detail::read(j, "depth", c.depth);
    cfg_detail::read(j, "embed_dim", c.embed_dim);
    cfg_detail::read(j, "init_seed", c.init_seed);
    return c;
}

// --- train ---

inline json to_json(const TrainConfig& c) {
    return json{{"steps", c.steps},
                {"ids_per_batch", c.ids_per_batch},
                {"samples_per_id", c.samples_per_id},
                {"learning_rate", c.learning_rate},
                {"optimizer", cfg_detail::enum_str(c.optimizer)},
                {"momentum", c.momentum},
                {"seed", c.seed},
                {"eval_every", c.eval_every}};
}

inline TrainConfig train_from_json(const json& j, const std::string& ctx) {
    cfg_detail::check_keys(j,
                           {"steps", "ids_per_batch", "samples_per_id", "learning_rate", "optimizer",
                            "momentum", "seed", "eval_every"},
                           ctx);
    TrainConfig c;
    cfg_detail::read(j, "steps", c.steps);
    cfg_detail::read(j, "ids_per_batch", c.ids_per_batch);
    cfg_detail::read(j, "samples_per_id", c.samples_per_id);
    cfg_detail::read(j, "learning_rate", c.learning_rate);
    if (j.contains("optimizer")) c.optimizer = cfg_detail::parse_optimizer(j.at("optimizer").get<std::string>());
    cfg_detail::read(j, "momentum", c.momentum);
    cfg_detail::read(j, "seed", c.seed);
    cfg_detail::read(j, "eval_every", c.eval_every);
    return c;
}

// --- objective ---

inline json to_json(const HyperParams& h) {
    json dkd{{"alpha_d", h.dkd.alpha_d}, {"beta_d", h.dkd.beta_d}};
    dkd["gamma"] = std::isinf(h.dkd.gamma) ? json("inf") : json(h.dkd.gamma);
    return json{
        {"base",
         {{"lambda_ce", h.base.lambda_ce}, {"lambda_tri", h.base.lambda_tri}, {"m_tri", h.base.m_tri}}},
        {"soft", {{"T", h.soft.temperature}, {"alpha", h.soft.alpha}}},
        {"dkd", dkd},
        {"boundary",
         {{"margin", h.boundary.margin},
          {"layer_weights", h.boundary.layer_weights},
          {"dim_align", cfg_detail::enum_str(h.boundary.dim_align)}}},
        {"lambda_logit", h.lambda_logit},
        {"lambda_bound", h.lambda_bound},
        {"decision_mode", cfg_detail::enum_str(h.decision_mode)},
        {"feature_mode", cfg_detail::enum_str(h.feature_mode)},
        {"logit_mode", h.logit_on ? "on" : "off"},
        {"multi_teacher",
         {{"weight_mode", cfg_detail::enum_str(h.multi_teacher.policy.mode)},
          {"tau", h.multi_teacher.policy.tau},
          {"boundary_agg", cfg_detail::enum_str(h.multi_teacher.boundary_agg)},
          {"method", cfg_detail::enum_str(h.multi_teacher.method)}}}};
}

inline HyperParams objective_from_json(const json& j) {
    cfg_detail::check_keys(j,
                           {"base", "soft", "dkd", "boundary", "lambda_logit", "lambda_bound",
                            "decision_mode", "feature_mode", "logit_mode", "multi_teacher"},
                           "objective");
    HyperParams h;
    if (j.contains("base")) {
        const json& b = j.at("base");
        cfg_detail::check_keys(b, {"lambda_ce", "lambda_tri", "m_tri"}, "objective.base");
        cfg_detail::read(b, "lambda_ce", h.base.lambda_ce);
        cfg_detail::read(b, "lambda_tri", h.base.lambda_tri);
        cfg_detail::read(b, "m_tri", h.base.m_tri);
    }
    if (j.contains("soft")) {
        const json& s = j.at("soft");
        cfg_detail::check_keys(s, {"T", "alpha"}, "objective.soft");
        cfg_detail::read(s, "T", h.soft.temperature);
        cfg_detail::read(s, "alpha", h.soft.alpha);
    }
    if (j.contains("dkd")) {
        const json& d = j.at("dkd");
        cfg_detail::check_keys(d, {"alpha_d", "beta_d", "gamma"}, "objective.dkd");
        cfg_detail::read(d, "alpha_d", h.dkd.alpha_d);
        cfg_detail::read(d, "beta_d", h.dkd.beta_d);
        if (d.contains("gamma")) {
            if (d.at("gamma").is_string()) {
                require(d.at("gamma").get<std::string>() == "inf", ErrorCode::config,
                        "dkd.gamma must be a number or \"inf\"");
                h.dkd.gamma = std::numeric_limits<double>::infinity();
            } else {
                h.dkd.gamma = d.at("gamma").get<double>();
            }
        }
    }
    if (j.contains("boundary")) {
        const json& b = j.at("boundary");
        cfg_detail::check_keys(b, {"margin", "layer_weights", "dim_align"}, "objective.boundary");
        cfg_detail::read(b, "margin", h.boundary.margin);
        cfg_detail::read(b, "layer_weights", h.boundary.layer_weights);
        if (b.contains("dim_align"))
            h.boundary.dim_align = cfg_detail::parse_dim_align(b.at("dim_align").get<std::string>());
    }
    cfg_detail::read(j, "lambda_logit", h.lambda_logit);
    cfg_detail::read(j, "lambda_bound", h.lambda_bound);
    if (j.contains("decision_mode"))
        h.decision_mode = cfg_detail::parse_decision(j.at("decision_mode").get<std::string>());
    if (j.contains("feature_mode"))
        h.feature_mode = cfg_detail::parse_feature(j.at("feature_mode").get<std::string>());
    if (j.contains("logit_mode")) {
        const std::string s = j.at("logit_mode").get<std::string>();
        require(s == "on" || s == "off", ErrorCode::config, "logit_mode must be 'on' or 'off'");
        h.logit_on = s == "on";
    }
    if (j.contains("multi_teacher")) {
        const json& m = j.at("multi_teacher");
        cfg_detail::check_keys(m, {"weight_mode", "tau", "boundary_agg", "method"},
                               "objective.multi_teacher");
        if (m.contains("weight_mode"))
            h.multi_teacher.policy.mode = cfg_detail::parse_weight_mode(m.at("weight_mode").get<std::string>());
        cfg_detail::read(m, "tau", h.multi_teacher.policy.tau);
        if (m.contains("boundary_agg"))
            h.multi_teacher.boundary_agg = cfg_detail::parse_boundary_agg(m.at("boundary_agg").get<std::string>());
        if (m.contains("method"))
            h.multi_teacher.method = cfg_detail::parse_mt_method(m.at("method").get<std::string>());
    }
    return h;
}

// --- run config ---

inline json to_json(const RunConfig& c) {
    json teachers = json::array();
    for (const auto& t : c.teachers) teachers.push_back(to_json_model(t));
    return json{{"synth", to_json(c.synth)},
                {"student", to_json_model(c.student)},
                {"teachers", teachers},
                {"train", to_json(c.train)},
                {"teacher_train", to_json(c.teacher_train)},
                {"objective", to_json(c.objective)},
                {"seeds", c.seeds},
                {"out_dir", c.out_dir}};
}

inline RunConfig run_config_from_json(const json& j) {
    cfg_detail::check_keys(
        j, {"synth", "student", "teachers", "train", "teacher_train", "objective", "seeds", "out_dir"},
        "<root>");
    RunConfig c;
    if (j.contains("synth")) c.synth = synth_from_json(j.at("synth"));
    if (j.contains("student")) c.student = model_from_json(j.at("student"), c.synth, "student");
    else {
        c.student.input_dim = c.synth.seq_feature_dim;
        c.student.num_classes = c.synth.num_ids;
    }
    c.teachers.clear();
    if (j.contains("teachers")) {
        require(j.at("teachers").is_array(), ErrorCode::config, "teachers must be an array");
        std::size_t k = 0;
        for (const auto& tj : j.at("teachers"))
            c.teachers.push_back(model_from_json(tj, c.synth, "teachers[" + std::to_string(k++) + "]"));
    }
    if (j.contains("train")) c.train = train_from_json(j.at("train"), "train");
    c.teacher_train = c.train;
    if (j.contains("teacher_train")) c.teacher_train = train_from_json(j.at("teacher_train"), "teacher_train");
    if (j.contains("objective")) c.objective = objective_from_json(j.at("objective"));
    cfg_detail::read(j, "seeds", c.seeds);
    cfg_detail::read(j, "out_dir", c.out_dir);
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorCode::io, "cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::config, std::string("config parse failure: ") + e.what());
    }
    return run_config_from_json(j);
}

inline std::string serialize_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

// FNV-1a over the canonical serialization.
inline std::uint64_t config_hash(const RunConfig& c) {
    const std::string s = serialize_config(c);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace gaitkd
