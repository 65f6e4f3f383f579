#include "kinet/config_file.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "kinet/errors.hpp"
#include "kinet/rng.hpp"

namespace kinet {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        int64_t r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected integer, got '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        uint64_t r = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected unsigned integer, got '" + v + "'");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(v);
    while (std::getline(is, cur, ',')) {
        cur = trim(cur);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

std::string fmt_f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string join_i64(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string join_f64(const std::vector<double>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_f64(v[i]);
    return s;
}

std::string join_str(const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

RelationKind parse_relation(const std::string& key, const std::string& v) {
    if (v == "dot") return RelationKind::kDot;
    if (v == "embedded_dot") return RelationKind::kEmbeddedDot;
    if (v == "concat") return RelationKind::kConcat;
    throw ConfigError(key + ": expected dot|embedded_dot|concat, got '" + v + "'");
}

std::string relation_name(RelationKind k) {
    switch (k) {
        case RelationKind::kDot: return "dot";
        case RelationKind::kEmbeddedDot: return "embedded_dot";
        case RelationKind::kConcat: return "concat";
    }
    return "dot";
}

}  // namespace

const std::vector<ConfigField>& config_schema() {
    static const std::vector<ConfigField> schema = {
        {"model.n_seg", "training segments per video",
         [](const RunConfig& c) { return std::to_string(c.model.n_seg); },
         [](RunConfig& c, const std::string& v) { c.model.n_seg = parse_i64("model.n_seg", v); }},
        {"model.stem_channels", "shared stem width",
         [](const RunConfig& c) { return std::to_string(c.model.stem_channels); },
         [](RunConfig& c, const std::string& v) { c.model.stem_channels = parse_i64("model.stem_channels", v); }},
        {"model.branch_channels", "per-stage branch widths (csv)",
         [](const RunConfig& c) { return join_i64(c.model.branch_channels); },
         [](RunConfig& c, const std::string& v) {
             c.model.branch_channels.clear();
             for (const auto& s : split_csv(v)) c.model.branch_channels.push_back(parse_i64("model.branch_channels", s));
         }},
        {"model.n_stages", "number of residual stages (named res2..)",
         [](const RunConfig& c) { return std::to_string(c.model.n_stages); },
         [](RunConfig& c, const std::string& v) { c.model.n_stages = parse_i64("model.n_stages", v); }},
        {"model.cbi_attach", "stages with cross-branch fusion (csv, 'none' for none)",
         [](const RunConfig& c) { return c.model.cbi_attach.empty() ? "none" : join_str(c.model.cbi_attach); },
         [](RunConfig& c, const std::string& v) {
             c.model.cbi_attach = (v == "none" || trim(v).empty()) ? std::vector<std::string>{} : split_csv(v);
         }},
        {"model.relation_kind", "graph relation function: dot|embedded_dot|concat",
         [](const RunConfig& c) { return relation_name(c.model.relation_kind); },
         [](RunConfig& c, const std::string& v) { c.model.relation_kind = parse_relation("model.relation_kind", v); }},
        {"model.d_embed", "relation embedding width (0 = d/2)",
         [](const RunConfig& c) { return std::to_string(c.model.d_embed); },
         [](RunConfig& c, const std::string& v) { c.model.d_embed = parse_i64("model.d_embed", v); }},
        {"model.d", "final feature width (must equal last branch width)",
         [](const RunConfig& c) { return std::to_string(c.model.d); },
         [](RunConfig& c, const std::string& v) { c.model.d = parse_i64("model.d", v); }},
        {"model.k_action", "action class count",
         [](const RunConfig& c) { return std::to_string(c.model.k_action); },
         [](RunConfig& c, const std::string& v) { c.model.k_action = parse_i64("model.k_action", v); }},
        {"model.k_scene", "scene class count",
         [](const RunConfig& c) { return std::to_string(c.model.k_scene); },
         [](RunConfig& c, const std::string& v) { c.model.k_scene = parse_i64("model.k_scene", v); }},
        {"model.input_h", "network input height",
         [](const RunConfig& c) { return std::to_string(c.model.input_h); },
         [](RunConfig& c, const std::string& v) { c.model.input_h = parse_i64("model.input_h", v); }},
        {"model.input_w", "network input width",
         [](const RunConfig& c) { return std::to_string(c.model.input_w); },
         [](RunConfig& c, const std::string& v) { c.model.input_w = parse_i64("model.input_w", v); }},
        {"model.use_akg", "enable graph reasoning over pooled features",
         [](const RunConfig& c) { return c.model.use_akg ? std::string("true") : std::string("false"); },
         [](RunConfig& c, const std::string& v) { c.model.use_akg = parse_bool("model.use_akg", v); }},
        {"model.mask_mode", "edge mask rule: literal|action_incident",
         [](const RunConfig& c) {
             return c.model.mask_mode == MaskMode::kLiteral ? std::string("literal") : std::string("action_incident");
         },
         [](RunConfig& c, const std::string& v) {
             if (v == "literal") c.model.mask_mode = MaskMode::kLiteral;
             else if (v == "action_incident") c.model.mask_mode = MaskMode::kActionIncident;
             else throw ConfigError("model.mask_mode: expected literal|action_incident, got '" + v + "'");
         }},
        {"model.gcn_activation", "graph convolution activation: relu|identity",
         [](const RunConfig& c) {
             return c.model.gcn_activation == GcnActivation::kRelu ? std::string("relu") : std::string("identity");
         },
         [](RunConfig& c, const std::string& v) {
             if (v == "relu") c.model.gcn_activation = GcnActivation::kRelu;
             else if (v == "identity") c.model.gcn_activation = GcnActivation::kIdentity;
             else throw ConfigError("model.gcn_activation: expected relu|identity, got '" + v + "'");
         }},

        {"data.base_h", "frame canvas height before cropping",
         [](const RunConfig& c) { return std::to_string(c.data.base_h); },
         [](RunConfig& c, const std::string& v) { c.data.base_h = parse_i64("data.base_h", v); }},
        {"data.base_w", "frame canvas width before cropping",
         [](const RunConfig& c) { return std::to_string(c.data.base_w); },
         [](RunConfig& c, const std::string& v) { c.data.base_w = parse_i64("data.base_w", v); }},

        {"teacher.kind", "pseudo-label source: synthetic|file",
         [](const RunConfig& c) { return c.teacher.kind; },
         [](RunConfig& c, const std::string& v) {
             if (v != "synthetic" && v != "file") throw ConfigError("teacher.kind: expected synthetic|file, got '" + v + "'");
             c.teacher.kind = v;
         }},
        {"teacher.seed", "teacher stream seed",
         [](const RunConfig& c) { return std::to_string(c.teacher.seed); },
         [](RunConfig& c, const std::string& v) { c.teacher.seed = parse_u64("teacher.seed", v); }},
        {"teacher.manifest", "label manifest path for teacher.kind=file",
         [](const RunConfig& c) { return c.teacher.manifest; },
         [](RunConfig& c, const std::string& v) { c.teacher.manifest = v; }},

        {"optim.lr", "base learning rate",
         [](const RunConfig& c) { return fmt_f64(c.optim.lr); },
         [](RunConfig& c, const std::string& v) { c.optim.lr = parse_f64("optim.lr", v); }},
        {"optim.momentum", "SGD momentum",
         [](const RunConfig& c) { return fmt_f64(c.optim.momentum); },
         [](RunConfig& c, const std::string& v) { c.optim.momentum = parse_f64("optim.momentum", v); }},
        {"optim.weight_decay", "coupled weight decay",
         [](const RunConfig& c) { return fmt_f64(c.optim.weight_decay); },
         [](RunConfig& c, const std::string& v) { c.optim.weight_decay = parse_f64("optim.weight_decay", v); }},
        {"optim.epochs", "total training epochs",
         [](const RunConfig& c) { return std::to_string(c.optim.epochs); },
         [](RunConfig& c, const std::string& v) { c.optim.epochs = parse_i64("optim.epochs", v); }},
        {"optim.batch_size", "videos per batch",
         [](const RunConfig& c) { return std::to_string(c.optim.batch_size); },
         [](RunConfig& c, const std::string& v) { c.optim.batch_size = parse_i64("optim.batch_size", v); }},
        {"optim.milestone_fracs", "lr decay points as fractions of total epochs (csv)",
         [](const RunConfig& c) { return join_f64(c.optim.milestone_fracs); },
         [](RunConfig& c, const std::string& v) {
             c.optim.milestone_fracs.clear();
             for (const auto& s : split_csv(v)) c.optim.milestone_fracs.push_back(parse_f64("optim.milestone_fracs", s));
         }},
        {"optim.lr_decay", "multiplier applied at each milestone",
         [](const RunConfig& c) { return fmt_f64(c.optim.lr_decay); },
         [](RunConfig& c, const std::string& v) { c.optim.lr_decay = parse_f64("optim.lr_decay", v); }},
        {"optim.lambda_action", "action loss weight",
         [](const RunConfig& c) { return fmt_f64(c.optim.lambda_action); },
         [](RunConfig& c, const std::string& v) { c.optim.lambda_action = parse_f64("optim.lambda_action", v); }},
        {"optim.lambda_human", "human parsing loss weight",
         [](const RunConfig& c) { return fmt_f64(c.optim.lambda_human); },
         [](RunConfig& c, const std::string& v) { c.optim.lambda_human = parse_f64("optim.lambda_human", v); }},
        {"optim.lambda_scene", "scene recognition loss weight",
         [](const RunConfig& c) { return fmt_f64(c.optim.lambda_scene); },
         [](RunConfig& c, const std::string& v) { c.optim.lambda_scene = parse_f64("optim.lambda_scene", v); }},
        {"optim.target_top1", "stop when train top-1 reaches this (0 = off)",
         [](const RunConfig& c) { return fmt_f64(c.optim.target_top1); },
         [](RunConfig& c, const std::string& v) { c.optim.target_top1 = parse_f64("optim.target_top1", v); }},

        {"eval.protocol", "inference protocol: full250|fast",
         [](const RunConfig& c) { return c.eval.protocol; },
         [](RunConfig& c, const std::string& v) {
             if (v != "full250" && v != "fast") throw ConfigError("eval.protocol: expected full250|fast, got '" + v + "'");
             c.eval.protocol = v;
         }},
        {"eval.n_eval_seg", "segments sampled at inference",
         [](const RunConfig& c) { return std::to_string(c.eval.n_eval_seg); },
         [](RunConfig& c, const std::string& v) { c.eval.n_eval_seg = parse_i64("eval.n_eval_seg", v); }},
        {"eval.window", "sliding window length over eval segments",
         [](const RunConfig& c) { return std::to_string(c.eval.window); },
         [](RunConfig& c, const std::string& v) { c.eval.window = parse_i64("eval.window", v); }},
    };
    return schema;
}

void apply_config_kv(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
    for (const auto& f : config_schema()) {
        if (f.key == dotted_key) {
            f.set(cfg, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + dotted_key + "'");
}

void merge_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path.string());
    std::string line, section;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": bad section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string dotted = section.empty() ? key : section + "." + key;
        apply_config_kv(cfg, dotted, value);
    }
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& f : config_schema()) {
        const std::string sec = f.key.substr(0, f.key.find('.'));
        if (sec != section) {
            if (!section.empty()) os << "\n";
            os << "[" << sec << "]\n";
            section = sec;
        }
        os << f.key.substr(f.key.find('.') + 1) << " = " << f.get(cfg) << "\n";
    }
    return os.str();
}

std::string serialize_model_config(const ModelConfig& model) {
    RunConfig cfg;
    cfg.model = model;
    std::ostringstream os;
    os << "[model]\n";
    for (const auto& f : config_schema()) {
        if (f.key.rfind("model.", 0) != 0) continue;
        os << f.key.substr(6) << " = " << f.get(cfg) << "\n";
    }
    return os.str();
}

ModelConfig parse_model_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("checkpoint config: expected key = value");
        apply_config_kv(cfg, section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg.model;
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a(serialize_config(cfg)); }

void RunConfig::validate() const {
    model.validate();
    if (data.base_h < model.input_h || data.base_w < model.input_w) {
        throw ConfigError("data.base_h/base_w: crop canvas smaller than model input");
    }
    if (optim.epochs < 1) throw ConfigError("optim.epochs: must be >= 1");
    if (optim.batch_size < 1) throw ConfigError("optim.batch_size: must be >= 1");
    if (optim.lr <= 0) throw ConfigError("optim.lr: must be positive");
    if (optim.lambda_action <= 0) throw ConfigError("optim.lambda_action: must be positive");
    if (optim.lambda_human < 0 || optim.lambda_scene < 0) {
        throw ConfigError("optim.lambda_human/lambda_scene: must be non-negative");
    }
    for (double f : optim.milestone_fracs) {
        if (f <= 0.0 || f >= 1.0) throw ConfigError("optim.milestone_fracs: entries must be in (0,1)");
    }
    if (eval.n_eval_seg < 1) throw ConfigError("eval.n_eval_seg: must be >= 1");
    if (eval.window < 1 || eval.window > eval.n_eval_seg) {
        throw ConfigError("eval.window: must be in [1, eval.n_eval_seg]");
    }
}

}  // namespace kinet
