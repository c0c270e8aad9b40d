#include "gttdi/cli_io.hpp"

#include "gttdi/rng.hpp"
#include "gttdi/semantic_embedding.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gttdi {

namespace {

[[noreturn]] void parse_fail(const std::string& source, int line, const std::string& msg) {
    throw std::runtime_error(source + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    }
    return true;
}

// Comment starts at the first '#' outside a quoted string.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (in_string && c == '\\' && i + 1 < line.size()) {
            ++i;
            continue;
        }
        if (c == '"') in_string = !in_string;
        if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

TomlValue parse_value(const char*& p, const char* end, const std::string& source, int line);

void skip_ws(const char*& p, const char* end) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
}

TomlValue parse_string(const char*& p, const char* end, const std::string& source, int line) {
    TomlValue v;
    v.kind = TomlValue::Kind::String;
    v.line = line;
    ++p; // opening quote
    while (p < end && *p != '"') {
        if (*p == '\\') {
            ++p;
            if (p >= end) parse_fail(source, line, "unterminated escape in string");
            if (*p == '"') v.str.push_back('"');
            else if (*p == '\\') v.str.push_back('\\');
            else parse_fail(source, line, std::string("unsupported escape '\\") + *p + "'");
            ++p;
        } else {
            v.str.push_back(*p++);
        }
    }
    if (p >= end) parse_fail(source, line, "unterminated string");
    ++p; // closing quote
    return v;
}

TomlValue parse_value(const char*& p, const char* end, const std::string& source, int line) {
    skip_ws(p, end);
    if (p >= end) parse_fail(source, line, "missing value");
    if (*p == '"') return parse_string(p, end, source, line);
    if (*p == '[') {
        TomlValue v;
        v.kind = TomlValue::Kind::Array;
        v.line = line;
        ++p;
        skip_ws(p, end);
        if (p < end && *p == ']') {
            ++p;
            return v;
        }
        while (true) {
            v.array.push_back(parse_value(p, end, source, line));
            skip_ws(p, end);
            if (p < end && *p == ',') {
                ++p;
                continue;
            }
            if (p < end && *p == ']') {
                ++p;
                return v;
            }
            parse_fail(source, line, "expected ',' or ']' in array");
        }
    }
    const char* start = p;
    while (p < end && *p != ',' && *p != ']' && *p != ' ' && *p != '\t') ++p;
    const std::string token(start, p);
    TomlValue v;
    v.line = line;
    if (token == "true" || token == "false") {
        v.kind = TomlValue::Kind::Boolean;
        v.boolean = token == "true";
        return v;
    }
    char* num_end = nullptr;
    v.kind = TomlValue::Kind::Number;
    v.num = std::strtod(token.c_str(), &num_end);
    if (token.empty() || num_end != token.c_str() + token.size()) {
        parse_fail(source, line, "invalid value '" + token + "'");
    }
    return v;
}

const char* kind_name(TomlValue::Kind k) {
    switch (k) {
    case TomlValue::Kind::String: return "a string";
    case TomlValue::Kind::Number: return "a number";
    case TomlValue::Kind::Boolean: return "a boolean";
    case TomlValue::Kind::Array: return "an array";
    }
    return "a value";
}

} // namespace

std::map<std::string, TomlValue> parse_toml(const std::string& text, const std::string& source) {
    std::map<std::string, TomlValue> out;
    std::istringstream is(text);
    std::string raw, section;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') parse_fail(source, lineno, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_name(section)) parse_fail(source, lineno, "invalid section name '" + section + "'");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) parse_fail(source, lineno, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (!valid_name(key)) parse_fail(source, lineno, "invalid key '" + key + "'");
        const std::string value_text = trim(line.substr(eq + 1));
        const char* p = value_text.data();
        const char* end = p + value_text.size();
        TomlValue v = parse_value(p, end, source, lineno);
        skip_ws(p, end);
        if (p != end) parse_fail(source, lineno, "trailing characters after value");
        const std::string full = section.empty() ? key : section + "." + key;
        if (!out.emplace(full, std::move(v)).second) {
            parse_fail(source, lineno, "duplicate key '" + full + "'");
        }
    }
    return out;
}

// ---- typed key access ---------------------------------------------------

ConfigTable::ConfigTable(std::map<std::string, TomlValue> values, std::string source)
    : values_(std::move(values)), source_(std::move(source)) {}

bool ConfigTable::has(const std::string& key) const { return values_.count(key) != 0; }

const TomlValue* ConfigTable::find(const std::string& key, TomlValue::Kind kind) const {
    auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    consumed_.insert(key);
    if (it->second.kind != kind) {
        parse_fail(source_, it->second.line,
                   "key '" + key + "' must be " + kind_name(kind) + ", got " + kind_name(it->second.kind));
    }
    return &it->second;
}

std::string ConfigTable::get_string(const std::string& key, const std::string& fallback) const {
    const TomlValue* v = find(key, TomlValue::Kind::String);
    return v ? v->str : fallback;
}

double ConfigTable::get_number(const std::string& key, double fallback) const {
    const TomlValue* v = find(key, TomlValue::Kind::Number);
    return v ? v->num : fallback;
}

std::int64_t ConfigTable::get_int(const std::string& key, std::int64_t fallback) const {
    const TomlValue* v = find(key, TomlValue::Kind::Number);
    if (!v) return fallback;
    if (v->num != std::floor(v->num) || std::abs(v->num) > 9007199254740992.0) {
        parse_fail(source_, v->line, "key '" + key + "' must be an integer");
    }
    return static_cast<std::int64_t>(v->num);
}

bool ConfigTable::get_bool(const std::string& key, bool fallback) const {
    const TomlValue* v = find(key, TomlValue::Kind::Boolean);
    return v ? v->boolean : fallback;
}

std::vector<double> ConfigTable::get_numbers(const std::string& key, std::vector<double> fallback) const {
    const TomlValue* v = find(key, TomlValue::Kind::Array);
    if (!v) return fallback;
    std::vector<double> out;
    for (const TomlValue& e : v->array) {
        if (e.kind != TomlValue::Kind::Number) {
            parse_fail(source_, v->line, "key '" + key + "' must hold only numbers");
        }
        out.push_back(e.num);
    }
    return out;
}

std::vector<std::string> ConfigTable::get_strings(const std::string& key,
                                                  std::vector<std::string> fallback) const {
    const TomlValue* v = find(key, TomlValue::Kind::Array);
    if (!v) return fallback;
    std::vector<std::string> out;
    for (const TomlValue& e : v->array) {
        if (e.kind != TomlValue::Kind::String) {
            parse_fail(source_, v->line, "key '" + key + "' must hold only strings");
        }
        out.push_back(e.str);
    }
    return out;
}

void ConfigTable::reject_unknown_keys() const {
    std::string unknown;
    for (const auto& [key, value] : values_) {
        if (consumed_.count(key)) continue;
        if (!unknown.empty()) unknown += ", ";
        unknown += "'" + key + "'";
    }
    if (!unknown.empty()) {
        throw std::runtime_error(source_ + ": unknown key " + unknown);
    }
}

// ---- experiment configuration -------------------------------------------

namespace {

std::string join_path(const std::string& dir, const char* name) { return dir + "/" + name; }

int rate_percent(double rate) { return static_cast<int>(std::lround(rate * 100.0)); }

} // namespace

std::string ExperimentConfig::network_file() const {
    return network_path.empty() ? join_path(out_dir, "network.txt") : network_path;
}
std::string ExperimentConfig::traffic_file() const {
    return traffic_path.empty() ? join_path(out_dir, "traffic.csv") : traffic_path;
}
std::string ExperimentConfig::edges_file() const {
    return edges_path.empty() ? join_path(out_dir, "edges.txt") : edges_path;
}
std::string ExperimentConfig::embeddings_file() const {
    return embeddings_path.empty() ? join_path(out_dir, "embeddings.txt") : embeddings_path;
}
std::string ExperimentConfig::checkpoint_file() const {
    return checkpoint_path.empty() ? join_path(out_dir, "model.ckpt") : checkpoint_path;
}
std::string ExperimentConfig::mask_file(MissingPattern pattern, double rate) const {
    if (!mask_path.empty()) return mask_path;
    return out_dir + "/mask_" + pattern_name(pattern) + "_" + std::to_string(rate_percent(rate)) + ".bin";
}
std::string ExperimentConfig::manifest_file(const std::string& command) const {
    return out_dir + "/" + command + "-manifest.json";
}

std::vector<CorruptionSpec> ExperimentConfig::corruption_specs() const {
    std::vector<CorruptionSpec> specs;
    for (MissingPattern p : corruption_patterns) {
        for (double r : corruption_rates) {
            CorruptionSpec s;
            s.pattern = p;
            s.rate = r;
            s.seed = Rng::stream(seed, "corrupt/" + pattern_name(p) + "/" + std::to_string(rate_percent(r)))
                         .next_u64();
            specs.push_back(s);
        }
    }
    return specs;
}

void ExperimentConfig::validate() const {
    if (out_dir.empty()) throw std::invalid_argument("output directory must not be empty");
    scenario.validate();
    train.validate();
    if (corruption_patterns.empty() || corruption_rates.empty()) {
        throw std::invalid_argument("the corruption grid needs at least one pattern and one rate");
    }
    for (double r : corruption_rates) {
        if (!(r > 0.0 && r < 1.0)) {
            throw std::invalid_argument("corruption rate " + std::to_string(r) + " outside (0, 1)");
        }
    }
    if (graph_neighbors < 1) throw std::invalid_argument("graph.neighbors must be at least 1");
    if (graph_clusters < 0) throw std::invalid_argument("graph.clusters must be non-negative");
    if (embed_epochs < 1) throw std::invalid_argument("embedding.epochs must be at least 1");
    if (embed_negatives < 1) throw std::invalid_argument("embedding.negatives must be at least 1");
    axis_from_name(ablation_axis);
    if (ablation_threads < 0) throw std::invalid_argument("ablation.threads must be non-negative");
    if (gradcheck_S < 2 || gradcheck_L < 1 || gradcheck_M < 1) {
        throw std::invalid_argument("gradient-check geometry needs sensors >= 2, points >= 1, slices >= 1");
    }
    if (!(gradcheck_step > 0.0) || !(gradcheck_tolerance > 0.0)) {
        throw std::invalid_argument("gradient-check step and tolerance must be positive");
    }
}

ExperimentConfig experiment_defaults() { return ExperimentConfig{}; }

ExperimentConfig experiment_from_table(const ConfigTable& table) {
    ExperimentConfig cfg = experiment_defaults();
    cfg.seed = static_cast<std::uint64_t>(table.get_int("seed", static_cast<std::int64_t>(cfg.seed)));

    cfg.out_dir = table.get_string("paths.out", cfg.out_dir);
    cfg.network_path = table.get_string("paths.network", cfg.network_path);
    cfg.traffic_path = table.get_string("paths.traffic", cfg.traffic_path);
    cfg.edges_path = table.get_string("paths.edges", cfg.edges_path);
    cfg.embeddings_path = table.get_string("paths.embeddings", cfg.embeddings_path);
    cfg.checkpoint_path = table.get_string("paths.checkpoint", cfg.checkpoint_path);
    cfg.mask_path = table.get_string("paths.mask", cfg.mask_path);

    ScenarioConfig& sc = cfg.scenario;
    sc.n_sensors = static_cast<int>(table.get_int("scenario.sensors", sc.n_sensors));
    sc.n_days = static_cast<int>(table.get_int("scenario.days", sc.n_days));
    sc.points_per_day = static_cast<int>(table.get_int("scenario.points_per_day", sc.points_per_day));
    sc.slices = static_cast<int>(table.get_int("scenario.slices", sc.slices));
    sc.topology = topology_from_name(table.get_string("scenario.topology", topology_name(sc.topology)));
    sc.noise_std = table.get_number("scenario.noise_std", sc.noise_std);
    sc.weekend_factor = table.get_number("scenario.weekend_factor", sc.weekend_factor);

    ModelConfig& mc = cfg.model;
    mc.f_s = static_cast<int>(table.get_int("model.f_s", mc.f_s));
    mc.semantic_labels = static_cast<int>(table.get_int("model.semantic_labels", mc.semantic_labels));
    mc.g1_heads = static_cast<int>(table.get_int("model.g1_heads", mc.g1_heads));
    mc.g1_dim = static_cast<int>(table.get_int("model.g1_dim", mc.g1_dim));
    mc.g2_heads = static_cast<int>(table.get_int("model.g2_heads", mc.g2_heads));
    mc.H_G = static_cast<int>(table.get_int("model.H_G", mc.H_G));
    mc.H_P = static_cast<int>(table.get_int("model.H_P", mc.H_P));
    mc.conv_channels = static_cast<int>(table.get_int("model.conv_channels", mc.conv_channels));
    mc.conv_kernel = static_cast<int>(table.get_int("model.conv_kernel", mc.conv_kernel));
    mc.encoder_heads = static_cast<int>(table.get_int("model.encoder_heads", mc.encoder_heads));
    mc.encoder_ff = static_cast<int>(table.get_int("model.encoder_ff", mc.encoder_ff));
    mc.output_hidden = static_cast<int>(table.get_int("model.output_hidden", mc.output_hidden));
    mc.lrelu_slope = table.get_number("model.lrelu_slope", mc.lrelu_slope);
    mc.bn_momentum = table.get_number("model.bn_momentum", mc.bn_momentum);

    TrainConfig& tc = cfg.train;
    tc.learning_rate = table.get_number("train.learning_rate", tc.learning_rate);
    tc.epochs = static_cast<int>(table.get_int("train.epochs", tc.epochs));
    tc.batch_size = static_cast<int>(table.get_int("train.batch_size", tc.batch_size));
    tc.kl_weight = table.get_number("train.kl_weight", tc.kl_weight);
    tc.dropout = table.get_number("train.dropout", tc.dropout);
    tc.patience = static_cast<int>(table.get_int("train.patience", tc.patience));
    tc.pattern = pattern_from_name(table.get_string("train.pattern", pattern_name(tc.pattern)));
    tc.val_rate = table.get_number("train.val_rate", tc.val_rate);

    std::vector<std::string> default_patterns;
    for (MissingPattern p : cfg.corruption_patterns) default_patterns.push_back(pattern_name(p));
    cfg.corruption_patterns.clear();
    for (const std::string& name : table.get_strings("corruption.patterns", default_patterns)) {
        cfg.corruption_patterns.push_back(pattern_from_name(name));
    }
    cfg.corruption_rates = table.get_numbers("corruption.rates", cfg.corruption_rates);

    cfg.graph_pattern_edges = table.get_bool("graph.pattern_edges", cfg.graph_pattern_edges);
    cfg.graph_neighbors = static_cast<int>(table.get_int("graph.neighbors", cfg.graph_neighbors));
    cfg.graph_clusters = static_cast<int>(table.get_int("graph.clusters", cfg.graph_clusters));

    cfg.embed_epochs = static_cast<int>(table.get_int("embedding.epochs", cfg.embed_epochs));
    cfg.embed_negatives = static_cast<int>(table.get_int("embedding.negatives", cfg.embed_negatives));

    cfg.ablation_axis = table.get_string("ablation.axis", cfg.ablation_axis);
    for (double v : table.get_numbers("ablation.values", {})) {
        if (v != std::floor(v)) {
            throw std::runtime_error(table.source() + ": ablation.values must hold integers");
        }
        cfg.ablation_values.push_back(static_cast<int>(v));
    }
    cfg.ablation_threads = static_cast<int>(table.get_int("ablation.threads", cfg.ablation_threads));

    cfg.gradcheck_S = static_cast<int>(table.get_int("gradcheck.sensors", cfg.gradcheck_S));
    cfg.gradcheck_L = static_cast<int>(table.get_int("gradcheck.points", cfg.gradcheck_L));
    cfg.gradcheck_M = static_cast<int>(table.get_int("gradcheck.slices", cfg.gradcheck_M));
    cfg.gradcheck_step = table.get_number("gradcheck.step", cfg.gradcheck_step);
    cfg.gradcheck_tolerance = table.get_number("gradcheck.tolerance", cfg.gradcheck_tolerance);

    table.reject_unknown_keys();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return experiment_from_table(ConfigTable(parse_toml(ss.str(), path), path));
}

namespace {

// Shortest round-trip decimal form, so dump -> parse -> dump is stable.
std::string number_text(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, res.ptr);
    return s;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out += "\"";
    return out;
}

} // namespace

std::string dump_experiment_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "seed = " << cfg.seed << "\n\n";
    os << "[paths]\n";
    os << "out = " << quoted(cfg.out_dir) << "\n";
    os << "network = " << quoted(cfg.network_path) << "\n";
    os << "traffic = " << quoted(cfg.traffic_path) << "\n";
    os << "edges = " << quoted(cfg.edges_path) << "\n";
    os << "embeddings = " << quoted(cfg.embeddings_path) << "\n";
    os << "checkpoint = " << quoted(cfg.checkpoint_path) << "\n";
    os << "mask = " << quoted(cfg.mask_path) << "\n\n";
    os << "[scenario]\n";
    os << "sensors = " << cfg.scenario.n_sensors << "\n";
    os << "days = " << cfg.scenario.n_days << "\n";
    os << "points_per_day = " << cfg.scenario.points_per_day << "\n";
    os << "slices = " << cfg.scenario.slices << "\n";
    os << "topology = " << quoted(topology_name(cfg.scenario.topology)) << "\n";
    os << "noise_std = " << number_text(cfg.scenario.noise_std) << "\n";
    os << "weekend_factor = " << number_text(cfg.scenario.weekend_factor) << "\n\n";
    os << "[model]\n";
    os << "f_s = " << cfg.model.f_s << "\n";
    os << "semantic_labels = " << cfg.model.semantic_labels << "\n";
    os << "g1_heads = " << cfg.model.g1_heads << "\n";
    os << "g1_dim = " << cfg.model.g1_dim << "\n";
    os << "g2_heads = " << cfg.model.g2_heads << "\n";
    os << "H_G = " << cfg.model.H_G << "\n";
    os << "H_P = " << cfg.model.H_P << "\n";
    os << "conv_channels = " << cfg.model.conv_channels << "\n";
    os << "conv_kernel = " << cfg.model.conv_kernel << "\n";
    os << "encoder_heads = " << cfg.model.encoder_heads << "\n";
    os << "encoder_ff = " << cfg.model.encoder_ff << "\n";
    os << "output_hidden = " << cfg.model.output_hidden << "\n";
    os << "lrelu_slope = " << number_text(cfg.model.lrelu_slope) << "\n";
    os << "bn_momentum = " << number_text(cfg.model.bn_momentum) << "\n\n";
    os << "[train]\n";
    os << "learning_rate = " << number_text(cfg.train.learning_rate) << "\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "kl_weight = " << number_text(cfg.train.kl_weight) << "\n";
    os << "dropout = " << number_text(cfg.train.dropout) << "\n";
    os << "patience = " << cfg.train.patience << "\n";
    os << "pattern = " << quoted(pattern_name(cfg.train.pattern)) << "\n";
    os << "val_rate = " << number_text(cfg.train.val_rate) << "\n\n";
    os << "[corruption]\n";
    os << "patterns = [";
    for (std::size_t i = 0; i < cfg.corruption_patterns.size(); ++i) {
        os << (i ? ", " : "") << quoted(pattern_name(cfg.corruption_patterns[i]));
    }
    os << "]\n";
    os << "rates = [";
    for (std::size_t i = 0; i < cfg.corruption_rates.size(); ++i) {
        os << (i ? ", " : "") << number_text(cfg.corruption_rates[i]);
    }
    os << "]\n\n";
    os << "[graph]\n";
    os << "pattern_edges = " << (cfg.graph_pattern_edges ? "true" : "false") << "\n";
    os << "neighbors = " << cfg.graph_neighbors << "\n";
    os << "clusters = " << cfg.graph_clusters << "\n\n";
    os << "[embedding]\n";
    os << "epochs = " << cfg.embed_epochs << "\n";
    os << "negatives = " << cfg.embed_negatives << "\n\n";
    os << "[ablation]\n";
    os << "axis = " << quoted(cfg.ablation_axis) << "\n";
    os << "values = [";
    for (std::size_t i = 0; i < cfg.ablation_values.size(); ++i) {
        os << (i ? ", " : "") << cfg.ablation_values[i];
    }
    os << "]\n";
    os << "threads = " << cfg.ablation_threads << "\n\n";
    os << "[gradcheck]\n";
    os << "sensors = " << cfg.gradcheck_S << "\n";
    os << "points = " << cfg.gradcheck_L << "\n";
    os << "slices = " << cfg.gradcheck_M << "\n";
    os << "step = " << number_text(cfg.gradcheck_step) << "\n";
    os << "tolerance = " << number_text(cfg.gradcheck_tolerance) << "\n";
    return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string experiment_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(dump_experiment_config(cfg))));
    return buf;
}

// ---- manifests ------------------------------------------------------------

void save_manifest(const Manifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["command"] = m.command;
    j["config_hash"] = m.config_hash;
    j["version"] = m.version;
    j["seed"] = m.seed;
    j["wall_seconds"] = m.wall_seconds;
    j["inputs"] = m.inputs;
    j["outputs"] = m.outputs;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open manifest for writing: " + path);
    os << j.dump(2) << "\n";
    if (!os) throw std::runtime_error("failed writing manifest: " + path);
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    Manifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    m.inputs = j.at("inputs").get<std::vector<std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    return m;
}

// ---- pipeline commands -----------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

void say(std::ostream* log, const std::string& line) {
    if (log) *log << line << "\n";
}

void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error(std::string("missing ") + what + ": " + path);
    }
}

void finish(const ExperimentConfig& cfg, const std::string& command, Clock::time_point t0,
            std::vector<std::string> inputs, std::vector<std::string> outputs) {
    Manifest m;
    m.command = command;
    m.config_hash = experiment_hash(cfg);
    m.version = kToolVersion;
    m.seed = cfg.seed;
    m.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    save_manifest(m, cfg.manifest_file(command));
}

void ensure_out_dir(const ExperimentConfig& cfg) {
    std::filesystem::create_directories(cfg.out_dir);
}

// Ground truth as day-slices, loaded from the network and CSV artifacts.
struct LoadedData {
    RoadNetwork network;
    TrafficSeriesTensor truth; // resliced to the configured M
};

LoadedData load_data(const ExperimentConfig& cfg) {
    require_file(cfg.network_file(), "network file");
    require_file(cfg.traffic_file(), "traffic file");
    LoadedData d;
    d.network = load_network(cfg.network_file());
    const int interval = (24 * 60) / cfg.scenario.points_per_day;
    TrafficSeriesTensor daily = load_csv(cfg.traffic_file(), d.network, interval, Units::Flow);
    d.truth = cfg.scenario.slices > 1 ? reslice(daily, cfg.scenario.slices) : std::move(daily);
    return d;
}

// Model geometry bound to the loaded data.
ModelConfig bind_model(const ExperimentConfig& cfg, const TrafficSeriesTensor& t) {
    ModelConfig mc = cfg.model;
    mc.S = t.S();
    mc.L = t.L();
    mc.M = t.M();
    mc.validate();
    return mc;
}

// Semantic tensor for one series, or empty when the module is off.
Tensor assemble_p(const ExperimentConfig& cfg, const ModelConfig& mc, const RoadNetwork& net,
                  const TrafficSeriesTensor& t) {
    if (!mc.semantic_enabled()) return {};
    require_file(cfg.embeddings_file(), "embedding file");
    EmbeddingTable table = load_embedding_table(cfg.embeddings_file());
    if (table.fs() != mc.f_s) {
        throw std::runtime_error("embedding width " + std::to_string(table.fs()) + " in " +
                                 cfg.embeddings_file() + " does not match model f_s " +
                                 std::to_string(mc.f_s));
    }
    Tensor p = assemble_semantic_tensor(net, t.calendar, t.K(), t.M(), table);
    if (mc.semantic_labels < kSemanticLabels) {
        p = semantic_label_prefix(p, mc.semantic_labels, mc.f_s);
    }
    return p;
}

} // namespace

void run_generate(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    ScenarioConfig sc_cfg = cfg.scenario;
    sc_cfg.seed = Rng::stream(cfg.seed, "generate").next_u64();
    Scenario sc = generate(sc_cfg);
    save_network(sc.network, cfg.network_file());
    const TrafficSeriesTensor daily = sc_cfg.slices > 1 ? inverse_reslice(sc.truth) : sc.truth;
    save_csv(daily, sc.network, cfg.traffic_file());
    say(log, "wrote " + cfg.network_file() + " (" + std::to_string(sc.network.size()) + " sensors)");
    say(log, "wrote " + cfg.traffic_file() + " (" + std::to_string(daily.D()) + " days)");
    finish(cfg, "generate", t0, {}, {cfg.network_file(), cfg.traffic_file()});
}

void run_corrupt(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    LoadedData d = load_data(cfg);
    std::vector<std::string> outputs;
    for (const CorruptionSpec& spec : cfg.corruption_specs()) {
        const std::vector<std::uint8_t> mask = corrupt_mask(d.truth, spec);
        const std::string path = cfg.mask_file(spec.pattern, spec.rate);
        save_mask(mask, d.truth.K(), d.truth.S(), d.truth.L(), path);
        std::int64_t missing = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) missing += d.truth.mask[i] && !mask[i];
        say(log, "wrote " + path + " (" + std::to_string(missing) + " cells dropped)");
        outputs.push_back(path);
    }
    finish(cfg, "corrupt", t0, {cfg.network_file(), cfg.traffic_file()}, std::move(outputs));
}

void run_build_graph(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    LoadedData d = load_data(cfg);
    DatasetSplit split = split_by_days(d.truth.D());
    EdgeSet edges = geography_edges(d.network);
    if (cfg.graph_pattern_edges) {
        TrafficSeriesTensor train_truth = select_days(d.truth, split.train_days);
        const int clusters =
            cfg.graph_clusters > 0 ? cfg.graph_clusters : default_cluster_count(d.truth.S());
        EdgeSet pattern = pattern_edges(train_truth, split, clusters, cfg.graph_neighbors,
                                        Rng::stream(cfg.seed, "graph").next_u64());
        edges = merge_edges(edges, pattern);
    }
    save_edges(edges, cfg.edges_file());
    say(log, "wrote " + cfg.edges_file() + " (" + std::to_string(edges.W() / 2) + " undirected edges)");
    finish(cfg, "build-graph", t0, {cfg.network_file(), cfg.traffic_file()}, {cfg.edges_file()});
}

void run_embed(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    if (!cfg.model.semantic_enabled()) {
        throw std::runtime_error("the semantic module is disabled in this configuration; nothing to embed");
    }
    LoadedData d = load_data(cfg);
    std::vector<SemanticDescription> corpus;
    corpus.reserve(static_cast<std::size_t>(d.truth.K()) * d.truth.S());
    for (int k = 0; k < d.truth.K(); ++k) {
        for (int s = 0; s < d.truth.S(); ++s) {
            corpus.push_back(describe(k, s, d.network, d.truth.calendar, d.truth.M(), d.truth.K()));
        }
    }
    EmbeddingTable table = train_skipgram(corpus, cfg.model.f_s, cfg.embed_epochs, cfg.embed_negatives,
                                          Rng::stream(cfg.seed, "embed").next_u64());
    save_embedding_table(table, cfg.embeddings_file());
    say(log, "wrote " + cfg.embeddings_file() + " (" + std::to_string(table.vocab_size()) + " tokens)");
    finish(cfg, "embed", t0, {cfg.network_file(), cfg.traffic_file()}, {cfg.embeddings_file()});
}

void run_train(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    LoadedData d = load_data(cfg);
    require_file(cfg.edges_file(), "edge file");
    EdgeSet edges = load_edges(cfg.edges_file());
    ModelConfig mc = bind_model(cfg, d.truth);

    DatasetSplit split = split_by_days(d.truth.D());
    TrafficSeriesTensor train_truth = select_days(d.truth, split.train_days);
    TrafficSeriesTensor val_truth = select_days(d.truth, split.val_days);
    Tensor p_train, p_val;
    if (mc.semantic_enabled()) {
        Tensor p_full = assemble_p(cfg, mc, d.network, d.truth);
        p_train = sample_rows(p_full, samples_of_days(d.truth, split.train_days));
        p_val = sample_rows(p_full, samples_of_days(d.truth, split.val_days));
    }

    GTTDIParams params = init_params(mc, Rng::stream(cfg.seed, "init").next_u64());
    params.norm = compute_norm_stats(d.truth, split.train_days);
    TrainConfig tc = cfg.train;
    tc.seed = Rng::stream(cfg.seed, "train").next_u64();

    TrainResult result = train(params, train_truth, val_truth, edges, p_train, p_val, tc);
    save_checkpoint(result.params, cfg.checkpoint_file());
    const std::string log_path = cfg.out_dir + "/train_log.jsonl";
    save_train_log(result.log, log_path);
    if (!result.log.empty()) {
        const EpochRecord& best = result.log[static_cast<std::size_t>(result.best_epoch)];
        say(log, "best epoch " + std::to_string(result.best_epoch) + ": validation MAAPE " +
                     std::to_string(best.val_maape) + ", RMSE " + std::to_string(best.val_rmse));
    }
    say(log, "wrote " + cfg.checkpoint_file());
    say(log, "wrote " + log_path);
    finish(cfg, "train", t0,
           {cfg.network_file(), cfg.traffic_file(), cfg.edges_file(), cfg.embeddings_file()},
           {cfg.checkpoint_file(), log_path});
}

void run_impute(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    require_file(cfg.checkpoint_file(), "checkpoint");
    GTTDIParams params = load_checkpoint(cfg.checkpoint_file());
    LoadedData d = load_data(cfg);
    if (params.config.S != d.truth.S() || params.config.L != d.truth.L() ||
        params.config.M != d.truth.M()) {
        throw std::runtime_error("checkpoint " + cfg.checkpoint_file() + " was trained on (S=" +
                                 std::to_string(params.config.S) + ",L=" + std::to_string(params.config.L) +
                                 ",M=" + std::to_string(params.config.M) + "), data is (S=" +
                                 std::to_string(d.truth.S()) + ",L=" + std::to_string(d.truth.L()) +
                                 ",M=" + std::to_string(d.truth.M()) + ")");
    }
    require_file(cfg.edges_file(), "edge file");
    GraphIndex graph = build_graph_index(load_edges(cfg.edges_file()), d.truth.S());

    const CorruptionSpec first = cfg.corruption_specs().front();
    const std::string mask_path = cfg.mask_file(first.pattern, first.rate);
    require_file(mask_path, "mask file");
    int K = 0, S = 0, L = 0;
    std::vector<std::uint8_t> mask = load_mask(mask_path, K, S, L);
    if (K != d.truth.K() || S != d.truth.S() || L != d.truth.L()) {
        throw std::runtime_error("mask " + mask_path + " is (" + std::to_string(K) + "," +
                                 std::to_string(S) + "," + std::to_string(L) + "), data is (" +
                                 std::to_string(d.truth.K()) + "," + std::to_string(d.truth.S()) + "," +
                                 std::to_string(d.truth.L()) + ")");
    }
    TrafficSeriesTensor corrupted = apply_mask(d.truth, mask);
    Tensor p = assemble_p(cfg, params.config, d.network, d.truth);
    Tensor completed = impute(params, graph, corrupted, p);

    TrafficSeriesTensor out = d.truth;
    out.values = std::move(completed);
    out.mask.assign(out.mask.size(), 1);
    const TrafficSeriesTensor daily = out.M() > 1 ? inverse_reslice(out) : out;
    const std::string out_path = cfg.out_dir + "/imputed.csv";
    save_csv(daily, d.network, out_path);
    say(log, "wrote " + out_path);
    finish(cfg, "impute", t0,
           {cfg.checkpoint_file(), cfg.network_file(), cfg.traffic_file(), cfg.edges_file(), mask_path},
           {out_path});
}

void run_evaluate(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    require_file(cfg.checkpoint_file(), "checkpoint");
    GTTDIParams params = load_checkpoint(cfg.checkpoint_file());
    LoadedData d = load_data(cfg);
    require_file(cfg.edges_file(), "edge file");
    GraphIndex graph = build_graph_index(load_edges(cfg.edges_file()), d.truth.S());

    DatasetSplit split = split_by_days(d.truth.D());
    TrafficSeriesTensor test_truth = select_days(d.truth, split.test_days);
    Tensor p_test = assemble_p(cfg, params.config, d.network, test_truth);

    MetricsReport report;
    for (const CorruptionSpec& base : cfg.corruption_specs()) {
        CorruptionSpec spec = base;
        spec.seed = Rng::stream(cfg.seed, "evaluate/" + pattern_name(spec.pattern) + "/" +
                                              std::to_string(rate_percent(spec.rate)))
                        .next_u64();
        TrafficSeriesTensor corrupted = apply_mask(test_truth, corrupt_mask(test_truth, spec));
        const std::vector<std::uint8_t> sel = imputed_cells(test_truth, corrupted.mask);

        const Tensor model_out = impute(params, graph, corrupted, p_test);
        const Tensor ha_out = ha_impute(corrupted);
        const Tensor knn_out = knn_impute(corrupted);
        for (const auto& [method, completed] :
             std::vector<std::pair<std::string, const Tensor*>>{
                 {"gt-tdi", &model_out}, {"ha", &ha_out}, {"knn", &knn_out}}) {
            MetricsRow row;
            row.method = method;
            row.pattern = pattern_name(spec.pattern);
            row.rate = spec.rate;
            row.maape_value = maape(test_truth.values, *completed, sel);
            row.rmse_value = rmse(test_truth.values, *completed, sel);
            row.seed = spec.seed;
            report.rows.push_back(std::move(row));
        }
        say(log, pattern_name(spec.pattern) + " " + std::to_string(rate_percent(spec.rate)) +
                     "%: gt-tdi MAAPE " + std::to_string(report.rows[report.rows.size() - 3].maape_value) +
                     ", ha " + std::to_string(report.rows[report.rows.size() - 2].maape_value) + ", knn " +
                     std::to_string(report.rows.back().maape_value));
    }
    const std::string jsonl_path = cfg.out_dir + "/report.jsonl";
    const std::string table_path = cfg.out_dir + "/report.txt";
    save_report_jsonl(report, jsonl_path);
    save_report_table(report, table_path);
    say(log, "wrote " + jsonl_path);
    say(log, "wrote " + table_path);
    finish(cfg, "evaluate", t0,
           {cfg.checkpoint_file(), cfg.network_file(), cfg.traffic_file(), cfg.edges_file()},
           {jsonl_path, table_path});
}

void run_ablate(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    ScenarioConfig sc_cfg = cfg.scenario;
    sc_cfg.seed = Rng::stream(cfg.seed, "generate").next_u64();
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    AblationReport report = ablate(sc_cfg, axis_from_name(cfg.ablation_axis), cfg.model, tc,
                                   cfg.ablation_values, cfg.ablation_threads);
    for (const AblationCell& c : report.cells) {
        say(log, c.label + ": average MAAPE " + std::to_string(c.avg_maape) + ", RMSE " +
                     std::to_string(c.avg_rmse));
    }
    const std::string path = cfg.out_dir + "/ablation.jsonl";
    save_ablation_jsonl(report, path);
    say(log, "wrote " + path);
    finish(cfg, "ablate", t0, {}, {path});
}

GradCheckSummary run_check_grads(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    ensure_out_dir(cfg);
    const auto t0 = Clock::now();
    ModelConfig mc = cfg.model;
    mc.S = cfg.gradcheck_S;
    mc.L = cfg.gradcheck_L;
    mc.M = cfg.gradcheck_M;
    mc.validate();
    GradCheckSummary summary =
        check_gradients(mc, Rng::stream(cfg.seed, "gradcheck").next_u64(), cfg.gradcheck_step);
    std::ostringstream line;
    line << "checked " << summary.checked << " coordinates, max relative error " << summary.max_rel
         << " at " << (summary.worst.empty() ? "none" : summary.worst) << " in " << summary.seconds
         << " s (tolerance " << cfg.gradcheck_tolerance << ")";
    say(log, line.str());
    finish(cfg, "check-grads", t0, {}, {});
    return summary;
}

} // namespace gttdi
