#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gaitkd/toy_model.hpp"

namespace gaitkd {

// Text checkpoint container, version 1:
//
//   gaitkd-checkpoint v1
//   model num_parts=.. input_dim=.. hidden_width=.. depth=.. embed_dim=..
//         num_classes=.. init_seed=..            (single line)
//   tensor <name> f64 <rank> <dims...>
//   <hexfloat values, one line>
//   ...
//   end
//
// Hexfloat round-trips doubles bit-exactly.
inline constexpr const char* kCheckpointMagic = "gaitkd-checkpoint v1";

namespace detail {

inline std::string hexfloat(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

inline std::string model_config_line(const ToyModelConfig& c) {
    std::ostringstream os;
    os << "model num_parts=" << c.num_parts << " input_dim=" << c.input_dim
       << " hidden_width=" << c.hidden_width << " depth=" << c.depth << " embed_dim=" << c.embed_dim
       << " num_classes=" << c.num_classes << " init_seed=" << c.init_seed;
    return os.str();
}

inline ToyModelConfig parse_model_config_line(const std::string& line) {
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    require(tag == "model", ErrorCode::io, "checkpoint: expected model config line");
    ToyModelConfig c;
    std::string kv;
    int fields = 0;
    while (is >> kv) {
        auto eq = kv.find('=');
        require(eq != std::string::npos, ErrorCode::io, "checkpoint: malformed config entry " + kv);
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        try {
            if (key == "num_parts")
                c.num_parts = std::stoi(val);
            else if (key == "input_dim")
                c.input_dim = std::stoi(val);
            else if (key == "hidden_width")
                c.hidden_width = std::stoi(val);
            else if (key == "depth")
                c.depth = std::stoi(val);
            else if (key == "embed_dim")
                c.embed_dim = std::stoi(val);
            else if (key == "num_classes")
                c.num_classes = std::stoi(val);
            else if (key == "init_seed")
                c.init_seed = std::stoull(val);
            else
                fail(ErrorCode::io, "checkpoint: unknown config key " + key);
        } catch (const std::invalid_argument&) {
            fail(ErrorCode::io, "checkpoint: bad value for " + key);
        } catch (const std::out_of_range&) {
            fail(ErrorCode::io, "checkpoint: out-of-range value for " + key);
        }
        ++fields;
    }
    require(fields == 7, ErrorCode::io, "checkpoint: incomplete model config");
    return c;
}

}  // namespace detail

inline void save_checkpoint(const ToyModel& model, const std::string& path) {
    std::ofstream f(path);
    require(f.good(), ErrorCode::io, "cannot open " + path + " for writing");
    f << kCheckpointMagic << "\n";
    f << detail::model_config_line(model.cfg) << "\n";
    for (const auto& [name, tensor] : model.named_params()) {
        f << "tensor " << name << " f64 " << tensor->rank();
        for (std::size_t d = 0; d < tensor->rank(); ++d) f << ' ' << tensor->dim(d);
        f << "\n";
        for (std::size_t i = 0; i < tensor->numel(); ++i)
            f << (i ? " " : "") << detail::hexfloat((*tensor)[i]);
        f << "\n";
    }
    f << "end\n";
    require(f.good(), ErrorCode::io, "write failed for " + path);
}

inline ToyModel load_checkpoint(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorCode::io, "cannot open checkpoint " + path);
    std::string line;
    require(static_cast<bool>(std::getline(f, line)), ErrorCode::io, "empty checkpoint " + path);
    require(line == kCheckpointMagic, ErrorCode::io,
            "unsupported checkpoint version or not a checkpoint: " + path);
    require(static_cast<bool>(std::getline(f, line)), ErrorCode::io, "truncated checkpoint " + path);
    ToyModelConfig cfg = detail::parse_model_config_line(line);
    ToyModel model = ToyModel::init(cfg);

    auto params = model.named_params();
    std::size_t next = 0;
    bool saw_end = false;
    while (std::getline(f, line)) {
        if (line == "end") {
            saw_end = true;
            break;
        }
        std::istringstream is(line);
        std::string tag, name, dtype;
        std::size_t rank = 0;
        is >> tag >> name >> dtype >> rank;
        require(static_cast<bool>(is) && tag == "tensor" && dtype == "f64", ErrorCode::io,
                "checkpoint: malformed tensor header: " + line);
        Shape shape(rank);
        for (auto& d : shape) {
            is >> d;
            require(static_cast<bool>(is), ErrorCode::io, "checkpoint: truncated tensor header");
        }
        require(next < params.size(), ErrorCode::io, "checkpoint: unexpected extra tensor " + name);
        auto& [expect_name, dst] = params[next];
        require(name == expect_name, ErrorCode::io,
                "checkpoint: tensor order mismatch, expected " + expect_name + " got " + name);
        require(shape == dst->shape(), ErrorCode::io,
                "checkpoint: shape mismatch for " + name + ": file has " + shape_str(shape) +
                    ", model expects " + shape_str(dst->shape()));
        require(static_cast<bool>(std::getline(f, line)), ErrorCode::io,
                "checkpoint: truncated values for " + name);
        std::istringstream vals(line);
        for (std::size_t i = 0; i < dst->numel(); ++i) {
            std::string tok;
            vals >> tok;
            require(!tok.empty(), ErrorCode::io, "checkpoint: missing value in " + name);
            char* endp = nullptr;
            (*dst)[i] = std::strtod(tok.c_str(), &endp);
            require(endp && *endp == '\0', ErrorCode::io, "checkpoint: bad value '" + tok + "'");
        }
        ++next;
    }
    require(saw_end, ErrorCode::io, "checkpoint: missing end marker (truncated file?)");
    require(next == params.size(), ErrorCode::io, "checkpoint: missing tensors");
    return model;
}

// Load with an architecture pinned by the caller; a capacity mismatch is an
// explicit error instead of silently adopting the file's shapes.
inline ToyModel load_checkpoint_expect(const ToyModelConfig& expected, const std::string& path) {
    ToyModel m = load_checkpoint(path);
    require(m.cfg == expected, ErrorCode::io,
            "checkpoint shape mismatch: file holds " + detail::model_config_line(m.cfg) +
                " but caller expects " + detail::model_config_line(expected));
    return m;
}

}  // namespace gaitkd
