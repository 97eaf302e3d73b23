#include "softstack/config.hpp"

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace softstack::config {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct KvReader {
    std::map<std::string, std::string> kv;
    std::map<std::string, bool> used;

    std::string take(const std::string& key, const std::string& fallback) {
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        used[key] = true;
        return it->second;
    }
    int take_int(const std::string& key, int fallback) {
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        used[key] = true;
        return std::stoi(it->second);
    }
    double take_double(const std::string& key, double fallback) {
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        used[key] = true;
        return std::stod(it->second);
    }
    bool take_bool(const std::string& key, bool fallback) {
        const auto it = kv.find(key);
        if (it == kv.end()) return fallback;
        used[key] = true;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::invalid_argument("config: bad boolean for " + key);
    }
    void check_all_used() const {
        for (const auto& [k, v] : kv) {
            if (!used.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
        }
    }
};

} // namespace

std::string to_string(backbone::IntegrationMode m) {
    return m == backbone::IntegrationMode::temporal ? "temporal" : "layerwise";
}
std::string to_string(stack_core::ReadMode m) {
    switch (m) {
        case stack_core::ReadMode::global_content: return "global_content";
        case stack_core::ReadMode::global_position: return "global_position";
        case stack_core::ReadMode::top_peek: return "top_peek";
    }
    return "global_content";
}
std::string to_string(stack_core::StructureMode m) {
    return m == stack_core::StructureMode::queue ? "queue" : "stack";
}
std::string to_string(stack_core::ActionMode m) {
    return m == stack_core::ActionMode::push_only ? "push_only" : "free";
}

backbone::IntegrationMode integration_from_string(const std::string& s) {
    if (s == "temporal") return backbone::IntegrationMode::temporal;
    if (s == "layerwise") return backbone::IntegrationMode::layerwise;
    throw std::invalid_argument("config: unknown integration mode '" + s + "'");
}
stack_core::ReadMode read_mode_from_string(const std::string& s) {
    if (s == "global_content") return stack_core::ReadMode::global_content;
    if (s == "global_position") return stack_core::ReadMode::global_position;
    if (s == "top_peek") return stack_core::ReadMode::top_peek;
    throw std::invalid_argument("config: unknown read mode '" + s + "'");
}
stack_core::StructureMode structure_from_string(const std::string& s) {
    if (s == "stack") return stack_core::StructureMode::stack;
    if (s == "queue") return stack_core::StructureMode::queue;
    throw std::invalid_argument("config: unknown structure mode '" + s + "'");
}
stack_core::ActionMode action_from_string(const std::string& s) {
    if (s == "free") return stack_core::ActionMode::free;
    if (s == "push_only") return stack_core::ActionMode::push_only;
    throw std::invalid_argument("config: unknown action mode '" + s + "'");
}

RunConfig defaults() {
    RunConfig cfg;
    cfg.model.max_seq_len = 1100;  // room for eval lengths up to 500
    return cfg;
}

bool RunConfig::operator==(const RunConfig& o) const {
    const auto& m = model;
    const auto& om = o.model;
    const auto& t = train;
    const auto& ot = o.train;
    return task == o.task && seeds == o.seeds && out_dir == o.out_dir &&
           m.n_layers == om.n_layers && m.d == om.d && m.n_attn_heads == om.n_attn_heads &&
           m.ffn_dim == om.ffn_dim && m.max_seq_len == om.max_seq_len &&
           m.rope_theta == om.rope_theta && m.integration == om.integration &&
           m.stack.enabled == om.stack.enabled && m.stack.S == om.stack.S &&
           m.stack.H == om.stack.H && m.stack.d_s == om.stack.d_s &&
           m.stack.read_mode == om.stack.read_mode &&
           m.stack.structure_mode == om.stack.structure_mode &&
           m.stack.action_mode == om.stack.action_mode && m.stack.placement == om.stack.placement &&
           t.steps == ot.steps && t.batch_size == ot.batch_size && t.lr == ot.lr &&
           t.warmup_steps == ot.warmup_steps && t.grad_clip == ot.grad_clip &&
           t.lambda == ot.lambda && t.train_min_len == ot.train_min_len &&
           t.train_max_len == ot.train_max_len && t.eval_ranges == ot.eval_ranges &&
           t.eval_cadence == ot.eval_cadence &&
           t.eval_samples_per_length == ot.eval_samples_per_length &&
           t.eval_length_stride == ot.eval_length_stride && t.log_cadence == ot.log_cadence &&
           t.early_stop_accuracy == ot.early_stop_accuracy && t.threads == ot.threads;
}

std::string serialize(const RunConfig& cfg) {
    std::ostringstream os;
    os << "[task]\n";
    os << "name = " << cfg.task << "\n\n";

    os << "[model]\n";
    os << "n_layers = " << cfg.model.n_layers << "\n";
    os << "d = " << cfg.model.d << "\n";
    os << "n_attn_heads = " << cfg.model.n_attn_heads << "\n";
    os << "ffn_dim = " << cfg.model.ffn_dim << "\n";
    os << "max_seq_len = " << cfg.model.max_seq_len << "\n";
    os << "rope_theta = " << format_double(cfg.model.rope_theta) << "\n";
    os << "integration = " << to_string(cfg.model.integration) << "\n\n";

    os << "[model.stack]\n";
    os << "enabled = " << (cfg.model.stack.enabled ? "true" : "false") << "\n";
    os << "S = " << cfg.model.stack.S << "\n";
    os << "H = " << cfg.model.stack.H << "\n";
    os << "d_s = " << cfg.model.stack.d_s << "\n";
    os << "read = " << to_string(cfg.model.stack.read_mode) << "\n";
    os << "structure = " << to_string(cfg.model.stack.structure_mode) << "\n";
    os << "action = " << to_string(cfg.model.stack.action_mode) << "\n";
    os << "placement = " << cfg.model.stack.placement << "\n\n";

    os << "[train]\n";
    os << "steps = " << cfg.train.steps << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "lr = " << format_double(cfg.train.lr) << "\n";
    os << "warmup = " << cfg.train.warmup_steps << "\n";
    os << "grad_clip = " << format_double(cfg.train.grad_clip) << "\n";
    os << "lambda = " << format_double(cfg.train.lambda) << "\n";
    os << "train_min_len = " << cfg.train.train_min_len << "\n";
    os << "train_max_len = " << cfg.train.train_max_len << "\n";
    os << "eval_ranges = ";
    for (size_t i = 0; i < cfg.train.eval_ranges.size(); ++i) {
        if (i) os << ",";
        os << cfg.train.eval_ranges[i].first << "-" << cfg.train.eval_ranges[i].second;
    }
    os << "\n";
    os << "eval_cadence = " << cfg.train.eval_cadence << "\n";
    os << "eval_samples_per_length = " << cfg.train.eval_samples_per_length << "\n";
    os << "eval_length_stride = " << cfg.train.eval_length_stride << "\n";
    os << "log_cadence = " << cfg.train.log_cadence << "\n";
    os << "early_stop_accuracy = " << format_double(cfg.train.early_stop_accuracy) << "\n";
    os << "threads = " << cfg.train.threads << "\n\n";

    os << "[run]\n";
    os << "seeds =";
    for (uint64_t s : cfg.seeds) os << " " << s;
    os << "\n";
    os << "out = " << cfg.out_dir << "\n";
    return os.str();
}

RunConfig parse(const std::string& text) {
    KvReader r;
    std::istringstream is(text);
    std::string line, section;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const size_t eq = t.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("config: bad line '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        r.kv[section.empty() ? key : section + "." + key] = val;
    }

    RunConfig cfg = defaults();
    cfg.task = r.take("task.name", cfg.task);

    cfg.model.n_layers = r.take_int("model.n_layers", cfg.model.n_layers);
    cfg.model.d = r.take_int("model.d", cfg.model.d);
    cfg.model.n_attn_heads = r.take_int("model.n_attn_heads", cfg.model.n_attn_heads);
    cfg.model.ffn_dim = r.take_int("model.ffn_dim", cfg.model.ffn_dim);
    cfg.model.max_seq_len = r.take_int("model.max_seq_len", cfg.model.max_seq_len);
    cfg.model.rope_theta = r.take_double("model.rope_theta", cfg.model.rope_theta);
    cfg.model.integration = integration_from_string(
        r.take("model.integration", to_string(cfg.model.integration)));

    cfg.model.stack.enabled = r.take_bool("model.stack.enabled", cfg.model.stack.enabled);
    cfg.model.stack.S = r.take_int("model.stack.S", cfg.model.stack.S);
    cfg.model.stack.H = r.take_int("model.stack.H", cfg.model.stack.H);
    cfg.model.stack.d_s = r.take_int("model.stack.d_s", cfg.model.stack.d_s);
    cfg.model.stack.read_mode =
        read_mode_from_string(r.take("model.stack.read", to_string(cfg.model.stack.read_mode)));
    cfg.model.stack.structure_mode = structure_from_string(
        r.take("model.stack.structure", to_string(cfg.model.stack.structure_mode)));
    cfg.model.stack.action_mode =
        action_from_string(r.take("model.stack.action", to_string(cfg.model.stack.action_mode)));
    cfg.model.stack.placement = r.take("model.stack.placement", cfg.model.stack.placement);

    cfg.train.steps = r.take_int("train.steps", cfg.train.steps);
    cfg.train.batch_size = r.take_int("train.batch_size", cfg.train.batch_size);
    cfg.train.lr = r.take_double("train.lr", cfg.train.lr);
    cfg.train.warmup_steps = r.take_int("train.warmup", cfg.train.warmup_steps);
    cfg.train.grad_clip = r.take_double("train.grad_clip", cfg.train.grad_clip);
    cfg.train.lambda = r.take_double("train.lambda", cfg.train.lambda);
    cfg.train.train_min_len = r.take_int("train.train_min_len", cfg.train.train_min_len);
    cfg.train.train_max_len = r.take_int("train.train_max_len", cfg.train.train_max_len);
    {
        std::string spec_str;
        for (size_t i = 0; i < cfg.train.eval_ranges.size(); ++i) {
            if (i) spec_str += ",";
            spec_str += std::to_string(cfg.train.eval_ranges[i].first) + "-" +
                        std::to_string(cfg.train.eval_ranges[i].second);
        }
        const std::string s = r.take("train.eval_ranges", spec_str);
        cfg.train.eval_ranges.clear();
        std::istringstream rs(s);
        std::string part;
        while (std::getline(rs, part, ',')) {
            part = trim(part);
            if (part.empty()) continue;
            const size_t dash = part.find('-');
            if (dash == std::string::npos) {
                cfg.train.eval_ranges.emplace_back(std::stoi(part), std::stoi(part));
            } else {
                cfg.train.eval_ranges.emplace_back(std::stoi(part.substr(0, dash)),
                                                   std::stoi(part.substr(dash + 1)));
            }
        }
        if (cfg.train.eval_ranges.empty()) throw std::invalid_argument("config: empty eval_ranges");
    }
    cfg.train.eval_cadence = r.take_int("train.eval_cadence", cfg.train.eval_cadence);
    cfg.train.eval_samples_per_length =
        r.take_int("train.eval_samples_per_length", cfg.train.eval_samples_per_length);
    cfg.train.eval_length_stride = r.take_int("train.eval_length_stride", cfg.train.eval_length_stride);
    cfg.train.log_cadence = r.take_int("train.log_cadence", cfg.train.log_cadence);
    cfg.train.early_stop_accuracy = r.take_double("train.early_stop_accuracy", cfg.train.early_stop_accuracy);
    cfg.train.threads = r.take_int("train.threads", cfg.train.threads);

    {
        const std::string s = r.take("run.seeds", "0");
        cfg.seeds.clear();
        std::istringstream ss(s);
        uint64_t v;
        while (ss >> v) cfg.seeds.push_back(v);
        if (cfg.seeds.empty()) throw std::invalid_argument("config: empty seed list");
    }
    cfg.out_dir = r.take("run.out", cfg.out_dir);

    r.check_all_used();
    return cfg;
}

RunConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse(os.str());
}

void save_file(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << serialize(cfg);
}

} // namespace softstack::config
