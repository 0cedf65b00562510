#include "damo/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "damo/checkpoint.hpp"
#include "damo/qa_augment.hpp"
#include "damo/rng.hpp"
#include "damo/training.hpp"

namespace damo {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"world", c.world},
       {"stage", c.stage},
       {"data", {{"train_count", c.data.train_count}, {"eval_count", c.data.eval_count}}},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw UsageError("run config must be a JSON object");
  static const std::set<std::string> known = {"model", "world", "stage", "data", "seed"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw UsageError("unknown run config key '" + key + "'");
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("world")) j.at("world").get_to(c.world);
  if (j.contains("stage")) {
    if (!j.at("stage").is_object()) throw UsageError("'stage' must be an object of stage overrides");
    c.stage = j.at("stage");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    for (const auto& [key, _] : d.items())
      if (key != "train_count" && key != "eval_count") throw UsageError("unknown run config key 'data." + key + "'");
    if (d.contains("train_count")) d.at("train_count").get_to(c.data.train_count);
    if (d.contains("eval_count")) d.at("eval_count").get_to(c.data.eval_count);
  }
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &doc;
  std::stringstream ss(path);
  std::vector<std::string> keys;
  for (std::string k; std::getline(ss, k, '.');) keys.push_back(k);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw UsageError("--set " + path + ": '" + keys[i] + "' is not an object");
    node = &(*node)[keys[i]];
    if (node->is_null()) *node = nlohmann::json::object();
  }
  if (!node->is_object()) throw UsageError("--set " + path + ": parent is not an object");
  (*node)[keys.back()] = value;
}

std::uint64_t train_data_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x7261696e); }
std::uint64_t eval_data_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x6576616c); }
std::uint64_t model_init_seed(std::uint64_t run_seed) { return mix_seed(run_seed, 0x6d6f646c); }

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> rows;
  std::istringstream in(read_text(p));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(p.string() + ":" + std::to_string(line_no) + ": not valid JSON");
    rows.push_back(std::move(j));
  }
  return rows;
}

std::string jsonl(const std::vector<nlohmann::json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

/// Config file plus --seed and --set, validated.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app) {
    app->add_option("--config", path, "JSON run config");
    app->add_option("--set", sets, "Override a config field, e.g. --set stage.lr=0.001")->take_all();
    app->add_option("--seed", seed, "Run seed (all randomness derives from it)");
  }

  RunConfig load() const {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
      std::string text;
      try {
        text = read_text(path);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
      doc = nlohmann::json::parse(text, nullptr, false);
      if (doc.is_discarded()) throw UsageError(path + ": not valid JSON");
    }
    for (const auto& s : sets) apply_override(doc, s);
    if (seed) doc["seed"] = *seed;
    try {
      RunConfig cfg = doc.get<RunConfig>();
      cfg.model.validate();
      SyntheticWorld(cfg.model, cfg.world);
      return cfg;
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(std::string("invalid config: ") + e.what());
    }
  }
};

std::vector<GroundingSample> load_samples(const SyntheticWorld& world, const fs::path& path) {
  std::vector<GroundingSample> out;
  std::size_t row = 0;
  for (const auto& j : read_jsonl(path)) {
    ++row;
    try {
      out.push_back(sample_from_descriptor(world, j));
    } catch (const std::exception& e) {
      throw DataError(path.string() + " row " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

std::vector<nlohmann::json> descriptors(const std::vector<GroundingSample>& samples) {
  std::vector<nlohmann::json> rows;
  for (const auto& s : samples) rows.push_back(sample_descriptor(s));
  return rows;
}

std::string sample_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "sample-" + std::string(n.size() < 5 ? 5 - n.size() : 0, '0') + n;
}

std::vector<nlohmann::json> ground_truth_rows(const std::vector<GroundingSample>& samples) {
  std::vector<nlohmann::json> rows;
  for (std::size_t i = 0; i < samples.size(); ++i)
    rows.push_back({{"id", sample_id(i)}, {"segment", {samples[i].target.start, samples[i].target.end}}});
  return rows;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const double t = std::stod(item, &used);
      if (used != item.size() || !(t >= 0.0 && t <= 1.0)) throw std::invalid_argument(item);
      out.push_back(t);
    } catch (const std::exception&) {
      throw UsageError("--thresholds: '" + item + "' is not a number in [0, 1]");
    }
  }
  if (out.empty()) throw UsageError("--thresholds: no thresholds given");
  return out;
}

nlohmann::json metrics_json(const GroundingMetrics& m, std::size_t parse_failures) {
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [t, r] : m.recall_at) recall[format_seconds(t)] = r;
  return {{"n", m.n}, {"miou", m.miou}, {"recall_at", recall}, {"parse_failures", parse_failures}};
}

int cmd_gen_data(const ConfigOptions& co, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = co.load();
  SyntheticWorld world(cfg.model, cfg.world);
  const auto train = world.make_dataset(cfg.data.train_count, train_data_seed(cfg.seed));
  const auto eval = world.make_dataset(cfg.data.eval_count, eval_data_seed(cfg.seed));
  const fs::path dir(out_dir);
  write_text(dir / "effective_config.json", nlohmann::json(cfg).dump(2) + "\n");
  write_text(dir / "train.jsonl", jsonl(descriptors(train)));
  write_text(dir / "eval.jsonl", jsonl(descriptors(eval)));
  write_text(dir / "eval_ground_truth.jsonl", jsonl(ground_truth_rows(eval)));
  out << "wrote " << train.size() << " training and " << eval.size() << " evaluation samples to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const ConfigOptions& co, int stage, const std::string& out_dir, const std::string& init,
              const std::string& data, const std::string& eval_data, std::ostream& out) {
  const RunConfig cfg = co.load();
  if (stage < 1 || stage > 4) throw UsageError("--stage must be 1, 2, 3 or 4");
  StageConfig sc;
  try {
    nlohmann::json overrides = cfg.stage;
    if (!overrides.contains("seed")) overrides["seed"] = cfg.seed;
    sc = build_stage_config(stage, overrides);
  } catch (const std::exception& e) {
    throw UsageError(std::string("invalid stage config: ") + e.what());
  }
  SyntheticWorld world(cfg.model, cfg.world);
  const auto train = data.empty() ? world.make_dataset(cfg.data.train_count, train_data_seed(cfg.seed))
                                  : load_samples(world, data);
  const auto eval = eval_data.empty() ? world.make_dataset(cfg.data.eval_count, eval_data_seed(cfg.seed))
                                      : load_samples(world, eval_data);

  std::unique_ptr<DamoModel> model;
  if (init.empty()) {
    model = std::make_unique<DamoModel>(cfg.model, model_init_seed(cfg.seed));
  } else {
    try {
      model = load_checkpoint(init);
    } catch (const CheckpointError& e) {
      throw DataError(e.what());
    }
    if (nlohmann::json(model->config()) != nlohmann::json(cfg.model))
      throw UsageError("--init checkpoint was built with a different model config");
  }

  const TrainReport report = train_stage(*model, train, sc);
  const fs::path dir(out_dir);
  nlohmann::json effective = cfg;
  effective["stage"] = sc;
  write_text(dir / "effective_config.json", effective.dump(2) + "\n");
  save_checkpoint(*model, dir / "checkpoint");
  write_text(dir / "train_report.json", nlohmann::json(report).dump(2) + "\n");

  std::vector<nlohmann::json> preds;
  const auto segments = predict_dataset(*model, eval, sc.data_source, sc.lora_enabled);
  for (std::size_t i = 0; i < segments.size(); ++i)
    preds.push_back({{"id", sample_id(i)}, {"prediction_text", format_segments({segments[i]})}});
  write_text(dir / "predictions.jsonl", jsonl(preds));
  write_text(dir / "ground_truth.jsonl", jsonl(ground_truth_rows(eval)));

  out << "stage " << stage << ": " << report.steps << " steps, loss " << report.initial_loss << " -> "
      << report.final_loss << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path, const std::string& thresholds,
             const std::string& out_dir, std::ostream& out) {
  const auto ts = parse_thresholds(thresholds);
  std::map<std::string, std::string> pred_text;
  for (const auto& j : read_jsonl(pred_path)) {
    try {
      pred_text[j.at("id").get<std::string>()] = j.at("prediction_text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(pred_path + ": " + e.what());
    }
  }
  std::vector<std::vector<Segment>> preds;
  std::vector<Segment> gts;
  std::size_t parse_failures = 0;
  for (const auto& j : read_jsonl(gt_path)) {
    std::string id;
    Segment gt;
    try {
      id = j.at("id").get<std::string>();
      const auto& s = j.at("segment");
      if (!s.is_array() || s.size() != 2) throw DataError(gt_path + ": segment of '" + id + "' must be [start, end]");
      gt = {s[0].get<double>(), s[1].get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw DataError(gt_path + ": " + e.what());
    }
    if (!gt.valid()) throw DataError(gt_path + ": invalid segment for '" + id + "'");
    auto it = pred_text.find(id);
    if (it == pred_text.end()) throw DataError("no prediction for id '" + id + "'");
    try {
      preds.push_back(parse_segments(it->second));
    } catch (const FormatError&) {
      ++parse_failures;
      preds.push_back({});
    }
    gts.push_back(gt);
    pred_text.erase(it);
  }
  if (!pred_text.empty()) throw DataError("prediction id '" + pred_text.begin()->first + "' has no ground truth");
  const std::string text = metrics_json(evaluate_grounding(preds, gts, ts), parse_failures).dump(2) + "\n";
  if (!out_dir.empty()) write_text(fs::path(out_dir) / "metrics.json", text);
  out << text;
  return kExitOk;
}

int cmd_augment(const std::string& input, const std::string& out_dir, const std::string& mode, std::uint64_t seed,
                std::ostream& out) {
  const fs::path dir(out_dir);
  const auto rows = read_jsonl(input);
  nlohmann::json report = {{"mode", mode}, {"seed", seed}};
  if (mode == "dialogue") {
    std::vector<nlohmann::json> enriched;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      try {
        enriched.push_back(enrich_dialogue(rows[i].get<Dialogue>(), seed));
      } catch (const std::exception& e) {
        throw DataError(input + " row " + std::to_string(i + 1) + ": " + e.what());
      }
    }
    write_text(dir / "dialogues.jsonl", jsonl(enriched));
    report["dialogues"] = enriched.size();
  } else if (mode == "qa") {
    std::vector<nlohmann::json> qa, grounding, failures;
    nlohmann::json warnings = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      TimedAnnotation ann;
      QAGenerationResult gen;
      try {
        ann = rows[i].get<TimedAnnotation>();
        gen = generate_qa(ann, seed);
      } catch (const std::exception& e) {
        throw DataError(input + " row " + std::to_string(i + 1) + ": " + e.what());
      }
      for (const auto& w : gen.warnings) warnings.push_back(w);
      for (const auto& pair : gen.pairs) {
        const QAPair g = to_grounding_format(pair);
        for (const QAPair* p : {&pair, &g})
          for (const auto& f : validate_qa(*p, ann).failures) failures.push_back({{"video_id", p->video_id}, {"failure", f}});
        qa.push_back(pair);
        grounding.push_back(g);
      }
    }
    write_text(dir / "qa.jsonl", jsonl(qa));
    write_text(dir / "grounding_qa.jsonl", jsonl(grounding));
    report["pairs"] = qa.size();
    report["warnings"] = warnings;
    report["validation_failures"] = failures;
  } else {
    throw UsageError("--mode must be qa or dialogue");
  }
  write_text(dir / "augment_report.json", report.dump(2) + "\n");
  out << report.dump(2) << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& checkpoint, std::ostream& out) {
  std::unique_ptr<DamoModel> model;
  try {
    model = load_checkpoint(checkpoint);
  } catch (const CheckpointError& e) {
    throw DataError(e.what());
  }
  nlohmann::json groups = nlohmann::json::object();
  std::map<std::string, std::size_t> tensors;
  for (const auto& p : model->store().all()) ++tensors[p.group];
  for (const auto& [g, n] : model->store().count_by_group()) groups[g] = {{"parameters", n}, {"tensors", tensors[g]}};
  out << nlohmann::json({{"groups", groups}, {"total_parameters", model->store().numel()}}).dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale multimodal temporal grounding pipeline", "damo"};
  app.require_subcommand(1);

  ConfigOptions gen_opts, train_opts;
  std::string out_dir, init, data, eval_data, pred, gt, thresholds = "0.3,0.5,0.7", input, mode = "qa", checkpoint;
  int stage = 0;
  std::uint64_t augment_seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate synthetic grounding datasets");
  gen_opts.add_to(gen);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Run one training stage");
  train_opts.add_to(train);
  train->add_option("--stage", stage, "Stage 1..4")->required()->check(CLI::Range(1, 4));
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--init", init, "Checkpoint directory to start from");
  train->add_option("--data", data, "Training samples (JSONL descriptors); generated when omitted");
  train->add_option("--eval-data", eval_data, "Evaluation samples (JSONL descriptors); generated when omitted");

  auto* eval = app.add_subcommand("eval-grounding", "Score grounding predictions against ground truth");
  eval->add_option("--pred", pred, "Predictions JSONL {id, prediction_text}")->required();
  eval->add_option("--gt", gt, "Ground truth JSONL {id, segment}")->required();
  eval->add_option("--thresholds", thresholds, "Comma-separated tIoU thresholds");
  eval->add_option("--out", out_dir, "Also write metrics.json here");

  auto* augment = app.add_subcommand("augment-qa", "Template-based QA generation and dialogue enrichment");
  augment->add_option("--input", input, "TimedAnnotation or Dialogue JSONL")->required();
  augment->add_option("--out", out_dir, "Output directory")->required();
  augment->add_option("--mode", mode, "qa or dialogue");
  augment->add_option("--seed", augment_seed, "Template seed");

  auto* inspect = app.add_subcommand("inspect", "Parameter counts per group of a checkpoint");
  inspect->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_opts, out_dir, out);
    if (train->parsed()) return cmd_train(train_opts, stage, out_dir, init, data, eval_data, out);
    if (eval->parsed()) return cmd_eval(pred, gt, thresholds, out_dir, out);
    if (augment->parsed()) return cmd_augment(input, out_dir, mode, augment_seed, out);
    if (inspect->parsed()) return cmd_inspect(checkpoint, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  err << "error: no subcommand\n";
  return kExitUsage;
}

}  // namespace damo
