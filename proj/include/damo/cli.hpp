#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "damo/config.hpp"
#include "damo/synthetic.hpp"
#include "json.hpp"

namespace damo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

/// Bad flags, bad configuration or an unsatisfiable request (exit 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that cannot be read or does not check out (exit 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::size_t train_count = 256;
  std::size_t eval_count = 64;
};

/// Everything a run depends on besides its input files. Loaded from one JSON
/// document with keys "model", "world", "stage", "data" and "seed"; unknown
/// keys are rejected at every level.
struct RunConfig {
  ToyConfig model;
  WorldConfig world;
  /// Overrides applied on top of the fixed stage schedule.
  nlohmann::json stage = nlohmann::json::object();
  DataConfig data;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Applies "a.b.c=value" to a JSON document. The value is read as JSON when
/// it parses, otherwise as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Seeds derived from the single run seed.
std::uint64_t train_data_seed(std::uint64_t run_seed);
std::uint64_t eval_data_seed(std::uint64_t run_seed);
std::uint64_t model_init_seed(std::uint64_t run_seed);

/// Entry point for the `damo` command. Messages for the user go to `out`,
/// diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace damo
