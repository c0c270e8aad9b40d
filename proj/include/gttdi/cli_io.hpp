#pragma once

#include "gttdi/corruption.hpp"
#include "gttdi/evaluation.hpp"
#include "gttdi/gt_tdi_model.hpp"
#include "gttdi/scenario.hpp"
#include "gttdi/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace gttdi {

inline constexpr const char* kToolVersion = "1.0.0";

// ---- structured config text ------------------------------------------------

// Value of one configuration key. The supported grammar is a small TOML
// subset: one level of [section] headers, `key = value` lines, double-quoted
// strings with \" and \\ escapes, decimal numbers, true/false, single-line
// arrays of those scalars, and # comments.
struct TomlValue {
    enum class Kind { String, Number, Boolean, Array };
    Kind kind = Kind::String;
    std::string str;
    double num = 0.0;
    bool boolean = false;
    std::vector<TomlValue> array;
    int line = 0; // 1-based source line, for error messages
};

// Flattens keys to "section.key". Throws with "<source>:<line>: ..."
// messages on duplicate keys or malformed lines.
std::map<std::string, TomlValue> parse_toml(const std::string& text, const std::string& source);

// Typed access with consumed-key tracking, so a whole config can be mapped
// and every leftover key rejected by name.
class ConfigTable {
public:
    ConfigTable() = default;
    ConfigTable(std::map<std::string, TomlValue> values, std::string source);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_number(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    // Arrays; absent keys yield the fallback unchanged.
    std::vector<double> get_numbers(const std::string& key, std::vector<double> fallback) const;
    std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const;

    const std::string& source() const { return source_; }
    // Throws naming every key no getter has touched.
    void reject_unknown_keys() const;

private:
    const TomlValue* find(const std::string& key, TomlValue::Kind kind) const;

    std::map<std::string, TomlValue> values_;
    std::string source_;
    mutable std::set<std::string> consumed_;
};

// ---- experiment configuration ----------------------------------------------

// Everything a pipeline run needs: the scenario, the model and training
// hyperparameters, corruption grid, and artifact locations. Path fields
// left empty resolve to conventional names under the output directory.
struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "out";

    std::string network_path, traffic_path, edges_path, embeddings_path, checkpoint_path, mask_path;

    ScenarioConfig scenario;
    ModelConfig model; // S, L, M are derived from the data at run time
    TrainConfig train;

    std::vector<MissingPattern> corruption_patterns{MissingPattern::RandomMissing};
    std::vector<double> corruption_rates{0.5};

    bool graph_pattern_edges = true;
    int graph_neighbors = 5;
    int graph_clusters = 0; // 0 = heuristic from the sensor count

    int embed_epochs = 5;
    int embed_negatives = 5;

    std::string ablation_axis = "semantic-labels";
    std::vector<int> ablation_values; // empty = axis defaults
    int ablation_threads = 0;

    int gradcheck_S = 6, gradcheck_L = 8, gradcheck_M = 1;
    double gradcheck_step = 1e-5;
    double gradcheck_tolerance = 1e-4;

    // Resolved artifact locations.
    std::string network_file() const;
    std::string traffic_file() const;
    std::string edges_file() const;
    std::string embeddings_file() const;
    std::string checkpoint_file() const;
    std::string mask_file(MissingPattern pattern, double rate) const;
    std::string manifest_file(const std::string& command) const;

    // Cross product of patterns and rates; each spec's seed derives from
    // the global seed and the (pattern, rate) pair.
    std::vector<CorruptionSpec> corruption_specs() const;

    void validate() const;
};

ExperimentConfig experiment_defaults();
// Maps a parsed table onto the defaults; unknown keys are rejected.
ExperimentConfig experiment_from_table(const ConfigTable& table);
ExperimentConfig load_experiment_config(const std::string& path);
// Canonical text form; parses back to an identical configuration.
std::string dump_experiment_config(const ExperimentConfig& cfg);

std::uint64_t fnv1a64(std::string_view bytes);
// 16 hex digits over the canonical dump; identifies a configuration.
std::string experiment_hash(const ExperimentConfig& cfg);

// ---- manifests --------------------------------------------------------------

// Written next to each command's outputs. Wall time lives here and only
// here, so the data artifacts themselves stay byte-reproducible.
struct Manifest {
    std::string command;
    std::string config_hash;
    std::string version;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
    std::vector<std::string> inputs, outputs;
};

void save_manifest(const Manifest& m, const std::string& path);
Manifest load_manifest(const std::string& path);

// ---- pipeline commands -------------------------------------------------------

// Each command reads its declared input artifacts, writes its outputs and a
// <command>-manifest.json under the output directory, and throws on any
// violated precondition with a message naming the offending path. Progress
// lines go to `log` when non-null.
void run_generate(const ExperimentConfig& cfg, std::ostream* log);
void run_corrupt(const ExperimentConfig& cfg, std::ostream* log);
void run_build_graph(const ExperimentConfig& cfg, std::ostream* log);
void run_embed(const ExperimentConfig& cfg, std::ostream* log);
void run_train(const ExperimentConfig& cfg, std::ostream* log);
void run_impute(const ExperimentConfig& cfg, std::ostream* log);
void run_evaluate(const ExperimentConfig& cfg, std::ostream* log);
void run_ablate(const ExperimentConfig& cfg, std::ostream* log);
// Returns the summary so callers can apply gradcheck_tolerance.
GradCheckSummary run_check_grads(const ExperimentConfig& cfg, std::ostream* log);

} // namespace gttdi
