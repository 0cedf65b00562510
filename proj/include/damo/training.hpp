#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "damo/model.hpp"
#include "damo/synthetic.hpp"
#include "json.hpp"

namespace damo {

/// Supervision format of a stage's data.
enum class DataSource { kGrounding, kDialogue };

std::string to_string(DataSource s);
DataSource data_source_from_string(const std::string& s);

struct StageConfig {
  int stage = 1;
  std::set<std::string> trainable_groups;
  bool lora_enabled = false;
  /// Objective name ("vtc", "vtm", "vtg") → weight.
  std::map<std::string, double> objectives;
  DataSource data_source = DataSource::kGrounding;
  std::size_t epochs = 2;
  std::size_t batch_size = 8;
  /// Stops early once this many optimizer steps ran (no limit when unset).
  std::optional<std::size_t> max_steps;
  double lr = 1e-4;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables clipping.
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const StageConfig& c);

/// The fixed schedule of stage 1..4, with `overrides` applied on top. The
/// keys of `overrides` are the StageConfig field names; unknown keys throw.
/// Overrides cannot make the "llm" group trainable.
StageConfig build_stage_config(int stage, const nlohmann::json& overrides = nlohmann::json::object());

struct TrainReport {
  int stage = 0;
  std::size_t steps = 0;
  std::vector<double> losses;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  std::map<std::string, std::string> hashes_before;
  std::map<std::string, std::string> hashes_after;
  /// Largest gradient norm seen on any parameter outside the trainable groups.
  double max_frozen_grad_norm = 0.0;
  std::vector<std::string> warnings;
};

/// All fields except wall time, so that reports of identical runs are
/// byte-identical.
void to_json(nlohmann::json& j, const TrainReport& r);

/// Decoupled-weight-decay Adam over the currently trainable parameters.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1, double beta2, double eps);
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

/// Runs one stage. Throws ContractViolation before any update when a
/// trainable group is unknown to the model or is the frozen base decoder.
TrainReport train_stage(DamoModel& model, const std::vector<GroundingSample>& dataset, const StageConfig& cfg);

/// Total weighted stage loss on a batch, recorded on `g`.
Var stage_loss(Graph& g, const DamoModel& model, const std::vector<const GroundingSample*>& batch,
               const StageConfig& cfg, std::vector<std::string>* warnings = nullptr);

/// Decoder prompt that precedes the answer tokens for the given format.
std::vector<int> answer_prompt(const GroundingSample& s, DataSource source);

/// Mean decoder generation loss over a dataset (no parameter updates).
double mean_vtg_loss(const DamoModel& model, const std::vector<GroundingSample>& dataset, DataSource source,
                     bool use_lora);

/// Greedy predictions of every sample, one segment each.
std::vector<Segment> predict_dataset(const DamoModel& model, const std::vector<GroundingSample>& dataset,
                                     DataSource source, bool use_lora);

GroundingMetrics evaluate_model(const DamoModel& model, const std::vector<GroundingSample>& dataset,
                                DataSource source, bool use_lora,
                                const std::vector<double>& thresholds = kDefaultThresholds);

}  // namespace damo
