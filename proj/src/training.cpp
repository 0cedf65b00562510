#include "damo/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "damo/hash.hpp"
#include "damo/rng.hpp"

namespace damo {

std::string to_string(DataSource s) { return s == DataSource::kGrounding ? "grounding" : "dialogue"; }

DataSource data_source_from_string(const std::string& s) {
  if (s == "grounding") return DataSource::kGrounding;
  if (s == "dialogue") return DataSource::kDialogue;
  throw ContractViolation("unknown data source '" + s + "' (expected grounding or dialogue)");
}

void to_json(nlohmann::json& j, const StageConfig& c) {
  j = {{"stage", c.stage},
       {"trainable_groups", c.trainable_groups},
       {"lora_enabled", c.lora_enabled},
       {"objectives", c.objectives},
       {"data_source", to_string(c.data_source)},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps ? nlohmann::json(*c.max_steps) : nlohmann::json(nullptr)},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"clip_norm", c.clip_norm},
       {"seed", c.seed}};
}

StageConfig build_stage_config(int stage, const nlohmann::json& overrides) {
  if (stage < 1 || stage > 4) throw ContractViolation("stage must be 1..4, got " + std::to_string(stage));
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.trainable_groups = {groups::kPathways, groups::kFuseformer, groups::kAlignment};
      c.objectives = {{"vtc", 1.0}, {"vtm", 1.0}, {"vtg", 1.0}};
      break;
    case 2:
      c.trainable_groups = {groups::kPathways, groups::kFuseformer, groups::kProjector};
      c.objectives = {{"vtg", 1.0}};
      break;
    default:
      c.trainable_groups = {groups::kPathways, groups::kFuseformer, groups::kProjector, groups::kLora};
      c.lora_enabled = true;
      c.objectives = {{"vtg", 1.0}};
      c.data_source = stage == 4 ? DataSource::kDialogue : DataSource::kGrounding;
      break;
  }
  if (!overrides.is_object()) throw ContractViolation("stage overrides must be a JSON object");
  for (const auto& [key, v] : overrides.items()) {
    if (key == "stage") {
      if (v.get<int>() != stage) throw ContractViolation("override 'stage' disagrees with the requested stage");
    } else if (key == "trainable_groups") {
      c.trainable_groups = v.get<std::set<std::string>>();
    } else if (key == "lora_enabled") {
      c.lora_enabled = v.get<bool>();
    } else if (key == "objectives") {
      c.objectives = v.get<std::map<std::string, double>>();
    } else if (key == "data_source") {
      c.data_source = data_source_from_string(v.get<std::string>());
    } else if (key == "epochs") {
      c.epochs = v.get<std::size_t>();
    } else if (key == "batch_size") {
      c.batch_size = v.get<std::size_t>();
    } else if (key == "max_steps") {
      c.max_steps = v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>());
    } else if (key == "lr") {
      c.lr = v.get<double>();
    } else if (key == "weight_decay") {
      c.weight_decay = v.get<double>();
    } else if (key == "beta1") {
      c.beta1 = v.get<double>();
    } else if (key == "beta2") {
      c.beta2 = v.get<double>();
    } else if (key == "adam_eps") {
      c.adam_eps = v.get<double>();
    } else if (key == "clip_norm") {
      c.clip_norm = v.get<double>();
    } else if (key == "seed") {
      c.seed = v.get<std::uint64_t>();
    } else {
      throw ContractViolation("unknown stage config key '" + key + "'");
    }
  }
  if (c.trainable_groups.contains(groups::kLlm))
    throw ContractViolation("the base decoder group 'llm' is never trainable");
  for (const auto& [name, w] : c.objectives) {
    if (name != "vtc" && name != "vtm" && name != "vtg") throw ContractViolation("unknown objective '" + name + "'");
    if (!(w >= 0.0)) throw ContractViolation("objective weight for '" + name + "' must be non-negative");
  }
  if (c.batch_size == 0) throw ContractViolation("batch_size must be positive");
  return c;
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  j = {{"stage", r.stage},
       {"steps", r.steps},
       {"losses", r.losses},
       {"initial_loss", r.initial_loss},
       {"final_loss", r.final_loss},
       {"hashes_before", r.hashes_before},
       {"hashes_after", r.hashes_after},
       {"max_frozen_grad_norm", r.max_frozen_grad_norm},
       {"warnings", r.warnings}};
}

AdamW::AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = p.grad[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
      v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p.value[i] -= lr_ * (update + wd_ * p.value[i]);
    }
  }
}

std::vector<int> answer_prompt(const GroundingSample& s, DataSource source) {
  const TextExample ex = source == DataSource::kGrounding ? grounding_text(s) : dialogue_text(s);
  // The inputs hold every answer token except the last one, so dropping
  // answer_len − 1 trailing inputs leaves exactly the prompt.
  const std::size_t answer_len = s.answer_tokens.size();
  return std::vector<int>(ex.inputs.begin(), ex.inputs.end() - static_cast<std::ptrdiff_t>(answer_len - 1));
}

namespace {

double weight_of(const StageConfig& cfg, const std::string& name) {
  auto it = cfg.objectives.find(name);
  return it == cfg.objectives.end() ? 0.0 : it->second;
}

Var permute_rows(Var x, const std::vector<std::size_t>& order) {
  std::vector<Var> rows;
  for (std::size_t i : order) rows.push_back(slice_rows(x, i, i + 1));
  return concat_rows(rows);
}

}  // namespace

Var stage_loss(Graph& g, const DamoModel& model, const std::vector<const GroundingSample*>& batch,
               const StageConfig& cfg, std::vector<std::string>* warnings) {
  if (batch.empty()) throw ContractViolation("stage_loss: empty batch");
  const double b = static_cast<double>(batch.size());
  std::vector<Var> fusion;
  for (const auto* s : batch) fusion.push_back(model.encode(g, s->visual, s->audio));

  Var total = g.constant(Tensor::scalar(0.0));
  if (cfg.stage == 1) {
    const AlignmentHeads& heads = model.heads();
    const double w_vtc = weight_of(cfg, "vtc"), w_vtm = weight_of(cfg, "vtm"), w_vtg = weight_of(cfg, "vtg");
    if (w_vtc > 0.0 || w_vtm > 0.0) {
      std::vector<Var> ev, et;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        ev.push_back(heads.embed_video(g, fusion[i]));
        et.push_back(heads.embed_text(g, batch[i]->answer_tokens));
      }
      Var e_v = concat_rows(ev), e_t = concat_rows(et);
      if (w_vtc > 0.0) total = add(total, scale(vtc_loss(e_v, e_t, heads.temperature), w_vtc));
      if (w_vtm > 0.0) {
        std::vector<Var> logits = {heads.match_logits(e_v, e_t)};
        std::vector<int> labels(batch.size(), 1);
        if (batch.size() > 1) {
          logits.push_back(heads.match_logits(e_v, permute_rows(e_t, rotation_negatives(batch.size()))));
          labels.insert(labels.end(), batch.size(), 0);
        }
        total = add(total, scale(vtm_loss(concat_rows(logits), labels), w_vtm));
      }
    }
    if (w_vtg > 0.0) {
      Var gen = g.constant(Tensor::scalar(0.0));
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& ans = batch[i]->answer_tokens;
        gen = add(gen, vtg_loss(heads.generation_logits(g, fusion[i]), ans, std::vector<bool>(ans.size(), true)));
      }
      total = add(total, scale(gen, w_vtg / b));
    }
    return total;
  }

  const double w_vtg = weight_of(cfg, "vtg");
  if (w_vtg > 0.0) {
    Var gen = g.constant(Tensor::scalar(0.0));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const TextExample ex =
          cfg.data_source == DataSource::kGrounding ? grounding_text(*batch[i]) : dialogue_text(*batch[i]);
      std::string warning;
      gen = add(gen, vtg_loss(model.text_logits(g, fusion[i], ex.inputs, cfg.lora_enabled), ex.targets, ex.mask,
                              &warning));
      if (warnings && !warning.empty()) warnings->push_back(warning);
    }
    total = add(total, scale(gen, w_vtg / b));
  }
  return total;
}

TrainReport train_stage(DamoModel& model, const std::vector<GroundingSample>& dataset, const StageConfig& cfg) {
  ParameterStore& store = model.store();
  const auto known = store.groups();
  for (const auto& grp : cfg.trainable_groups)
    if (!known.contains(grp)) throw ContractViolation("stage " + std::to_string(cfg.stage) + ": unknown group '" + grp + "'");
  if (cfg.trainable_groups.contains(groups::kLlm))
    throw ContractViolation("the base decoder group 'llm' is never trainable");
  if (cfg.batch_size == 0) throw ContractViolation("batch_size must be positive");

  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  report.stage = cfg.stage;
  for (const auto& grp : known) report.hashes_before[grp] = group_hash(store, grp);

  store.set_trainable_groups(cfg.trainable_groups);
  std::vector<Parameter*> trainable, frozen;
  for (auto& p : store.all()) (p.trainable ? trainable : frozen).push_back(&p);
  AdamW opt(trainable, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps);

  const std::size_t steps_per_epoch = dataset.empty() ? 0 : (dataset.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t steps = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, mix_seed(static_cast<std::uint64_t>(cfg.stage), epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      if (cfg.max_steps && steps >= *cfg.max_steps) break;
      std::vector<const GroundingSample*> batch;
      for (std::size_t k = s * cfg.batch_size; k < std::min(order.size(), (s + 1) * cfg.batch_size); ++k)
        batch.push_back(&dataset[order[k]]);

      store.zero_grad();
      Graph g;
      Var loss = stage_loss(g, model, batch, cfg, &report.warnings);
      g.backward(loss);
      report.losses.push_back(loss.value()[0]);

      for (const auto* p : frozen) report.max_frozen_grad_norm = std::max(report.max_frozen_grad_norm, l2_norm(p->grad));
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto* p : trainable)
          for (double v : p->grad.data()) sq += v * v;
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm)
          for (auto* p : trainable)
            for (double& v : p->grad.data()) v *= cfg.clip_norm / norm;
      }
      opt.step();
      ++steps;
    }
  }
  store.zero_grad();
  store.freeze_all();

  report.steps = steps;
  if (!report.losses.empty()) {
    report.initial_loss = report.losses.front();
    report.final_loss = report.losses.back();
  }
  for (const auto& grp : known) report.hashes_after[grp] = group_hash(store, grp);
  // Warnings repeat once per affected sample; keep one of each.
  std::sort(report.warnings.begin(), report.warnings.end());
  report.warnings.erase(std::unique(report.warnings.begin(), report.warnings.end()), report.warnings.end());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

double mean_vtg_loss(const DamoModel& model, const std::vector<GroundingSample>& dataset, DataSource source,
                     bool use_lora) {
  if (dataset.empty()) throw ContractViolation("mean_vtg_loss: empty dataset");
  double total = 0.0;
  for (const auto& s : dataset) {
    Graph g;
    const TextExample ex = source == DataSource::kGrounding ? grounding_text(s) : dialogue_text(s);
    Var fusion = model.encode(g, s.visual, s.audio);
    total += vtg_loss(model.text_logits(g, fusion, ex.inputs, use_lora), ex.targets, ex.mask).value()[0];
  }
  return total / static_cast<double>(dataset.size());
}

std::vector<Segment> predict_dataset(const DamoModel& model, const std::vector<GroundingSample>& dataset,
                                     DataSource source, bool use_lora) {
  std::vector<Segment> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset)
    out.push_back(model.predict_segment(s.visual, s.audio, s.duration, answer_prompt(s, source), use_lora).segment);
  return out;
}

GroundingMetrics evaluate_model(const DamoModel& model, const std::vector<GroundingSample>& dataset,
                                DataSource source, bool use_lora, const std::vector<double>& thresholds) {
  std::vector<std::vector<Segment>> preds;
  std::vector<Segment> gts;
  for (const auto& seg : predict_dataset(model, dataset, source, use_lora)) preds.push_back({seg});
  for (const auto& s : dataset) gts.push_back(s.target);
  return evaluate_grounding(preds, gts, thresholds);
}

}  // namespace damo
