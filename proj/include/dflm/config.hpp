#pragma once

#include "dflm/trainer.hpp"

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace dflm {

/// Parse or validation failure; the message names the line or field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` document (a TOML subset): numbers, booleans, quoted or
/// bare strings, and one-line arrays. `#` starts a comment.
struct KeyValueDoc {
  struct Entry {
    std::string raw;
    int line = 0;
  };
  std::map<std::string, Entry> entries;
  std::string source;

  static KeyValueDoc parse(const std::string& text, const std::string& source = "<config>");
  static KeyValueDoc load(const std::filesystem::path& path);
  bool has(const std::string& key) const { return entries.count(key) != 0; }
};

struct ProblemSpec {
  std::string name = "poisson";
  int m = 1;

  bool operator==(const ProblemSpec&) const = default;
};

PdeProblem make_problem(const ProblemSpec& spec);

enum class Scale { desk, paper };

struct RunConfig {
  Scale scale = Scale::desk;
  ProblemSpec problem;
  TrainConfig train;
  std::string output_dir = "runs/train";
  int checkpoint_stride = 0;
};

bool operator==(const RunConfig& a, const RunConfig& b);

/// dt ladder presets: 2^p * 1e-4 (scaled) or 2^p (literal), p = 0..9.
std::vector<double> dt_ladder(const std::string& preset);

struct SweepSpec {
  std::vector<double> dt_values;
  std::string dt_preset = "scaled";
  std::vector<int> ns_values = {1, 4, 10, 40, 100, 400};
  int trials = 3;
  RunConfig base;
  std::string output_dir = "runs/sweep";
  /// Bias-mode settings (frozen exact solution, no training).
  int bias_n_outer = 20000;
  double bias_margin = 0.0;
  int bias_gradient_samples = 100000;
};

bool operator==(const SweepSpec& a, const SweepSpec& b);

RunConfig parse_run_config(const KeyValueDoc& doc, bool paper_scale = false);
SweepSpec parse_sweep_spec(const KeyValueDoc& doc, bool paper_scale = false);

/// Train config unless any sweep key is present.
std::variant<RunConfig, SweepSpec> load_config(const std::filesystem::path& path,
                                               bool paper_scale = false);

/// Canonical text with every key written explicitly.
std::string to_config_text(const RunConfig& cfg);
std::string to_config_text(const SweepSpec& spec);

void validate(const RunConfig& cfg);
void validate(const SweepSpec& spec);

}  // namespace dflm
