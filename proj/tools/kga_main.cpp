// kga: synthetic-benchmark trainer for the keyframe-guided attention video
// classifier. Subcommands: gen-data, train, eval, inspect-attention,
// ablation-suite.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kga/data.hpp"
#include "kga/eval.hpp"
#include "kga/io_util.hpp"
#include "kga/training.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw kga::Error("cannot open " + path.string() + " for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw kga::Error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw kga::Error("write failed for " + path.string());
}

fs::path resolve_out_dir(std::string out_flag) {
  if (out_flag.empty()) {
    if (const char* env = std::getenv("KGA_OUT_DIR")) out_flag = env;
  }
  if (out_flag.empty())
    throw kga::ConfigError("no output directory: pass --out or set KGA_OUT_DIR");
  fs::path dir(out_flag);
  fs::create_directories(dir);
  return dir;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const std::string& config_text, std::uint64_t seed) {
  ordered_json m;
  m["command"] = command;
  m["artifact_version"] = kArtifactVersion;
  m["formats"] = {{"dataset", 1}, {"checkpoint", 1}};
  m["seed"] = seed;
  ordered_json cfg = ordered_json::object();
  std::istringstream is(config_text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) cfg[line.substr(0, eq)] = line.substr(eq + 1);
  }
  m["config"] = cfg;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

kga::Dataset load_split(const fs::path& data_dir, const char* name) {
  const fs::path p = data_dir / name;
  if (!fs::exists(p)) throw kga::Error("dataset file not found: " + p.string());
  return kga::load_dataset(p);
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
  std::string config_file;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int run_gen_data(const GenDataArgs& args) {
  kga::SyntheticConfig cfg;
  if (!args.config_file.empty())
    cfg = kga::SyntheticConfig::from_text(read_file(args.config_file));
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();

  const fs::path out_dir = resolve_out_dir(args.out);
  const auto [train_split, test_split] = kga::generate(cfg);
  kga::save_dataset(out_dir / "train.kgad", train_split);
  kga::save_dataset(out_dir / "test.kgad", test_split);
  write_manifest(out_dir, "gen-data", cfg.canonical_text(), cfg.seed);
  std::cout << "wrote " << train_split.videos.size() << " train videos, "
            << train_split.images.size() << " train images, " << test_split.videos.size()
            << " test videos to " << out_dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string data_dir;
  std::string out;
  std::string config_file;
  std::string ablation = "full";
  std::string resume;
  std::optional<std::size_t> stop_after;
  bool paper_schedule = false;
  // flag overrides, applied on top of --config
  std::optional<double> lr, momentum, lambda, center_alpha, weight_decay;
  std::optional<std::size_t> iters, warmup, batch_size, max_frames, hidden_dim, feature_dim,
      log_interval, checkpoint_interval;
  std::optional<std::uint64_t> seed;
  std::string decay_iters;
  std::optional<bool> fixed_batch;
};

kga::TrainConfig build_train_config(const TrainArgs& args, std::size_t data_dim) {
  kga::TrainConfig cfg;
  if (!args.config_file.empty())
    cfg = kga::TrainConfig::from_text(read_file(args.config_file));
  if (args.paper_schedule) cfg.apply_paper_schedule();
  const auto ablation = kga::ablation_from_name(args.ablation);
  if (!ablation)
    throw kga::ConfigError("unknown ablation '" + args.ablation +
                           "' (expected full, no_image_guidance, no_coherence, "
                           "no_coherence_no_attention)");
  cfg.ablation = *ablation;
  if (args.lr) cfg.base_lr = *args.lr;
  if (args.momentum) cfg.momentum = *args.momentum;
  if (args.lambda) cfg.lambda_coherence = *args.lambda;
  if (args.center_alpha) cfg.center_alpha = *args.center_alpha;
  if (args.weight_decay) cfg.weight_decay = *args.weight_decay;
  if (args.iters) cfg.total_iters = *args.iters;
  if (args.warmup) cfg.warmup_iters = *args.warmup;
  if (args.batch_size) cfg.batch_size = *args.batch_size;
  if (args.max_frames) cfg.max_frames = *args.max_frames;
  if (args.hidden_dim) cfg.hidden_dim = *args.hidden_dim;
  if (args.feature_dim) cfg.feature_dim = *args.feature_dim;
  if (args.log_interval) cfg.log_interval = *args.log_interval;
  if (args.checkpoint_interval) cfg.checkpoint_interval = *args.checkpoint_interval;
  if (args.seed) cfg.seed = *args.seed;
  if (args.fixed_batch) cfg.fixed_batch_composition = *args.fixed_batch;
  if (!args.decay_iters.empty()) {
    cfg.decay_iters.clear();
    std::istringstream vs(args.decay_iters);
    std::string item;
    while (std::getline(vs, item, ','))
      if (!item.empty()) cfg.decay_iters.push_back(std::stoul(item));
  }
  cfg.input_dim = data_dim;
  cfg.normalize();
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& args) {
  const fs::path data_dir(args.data_dir);
  const kga::Dataset train_split = load_split(data_dir, "train.kgad");
  const kga::Dataset test_split = load_split(data_dir, "test.kgad");
  const fs::path out_dir = resolve_out_dir(args.out);

  kga::TrainConfig cfg;
  std::optional<kga::TrainState> resume;
  if (!args.resume.empty()) {
    auto [state, loaded_cfg] = kga::load_checkpoint(args.resume);
    cfg = loaded_cfg;
    resume = std::move(state);
    if (cfg.input_dim != train_split.dim)
      throw kga::ConfigError("checkpoint input_dim does not match dataset");
  } else {
    cfg = build_train_config(args, train_split.dim);
  }

  std::ofstream history(out_dir / "history.jsonl", std::ios::binary);
  if (!history) throw kga::Error("cannot open history.jsonl for writing");

  const auto on_log = [&](const kga::TrainState&, const kga::HistoryEntry& entry) {
    history << kga::history_jsonl_line(entry) << "\n";
  };
  const auto on_checkpoint = [&](const kga::TrainState& state) {
    kga::save_checkpoint(out_dir / ("checkpoint_" + std::to_string(state.iter) + ".kgat"),
                         state, cfg);
  };

  kga::TrainResult result =
      kga::train(cfg, train_split, std::move(resume), args.stop_after, on_log, on_checkpoint);
  history.flush();

  kga::save_checkpoint(out_dir / "checkpoint.kgat", result.state, cfg);
  write_manifest(out_dir, "train", cfg.canonical_text(), cfg.seed);

  if (result.state.iter >= cfg.total_iters) {
    const kga::EvalOutput eval_out =
        kga::evaluate(result.state.model, result.state.centers, test_split);
    write_file(out_dir / "metrics.json", eval_out.report.to_json() + "\n");
    std::cout << eval_out.report.to_json() << "\n";
  } else {
    std::cout << "stopped at iteration " << result.state.iter << " of " << cfg.total_iters
              << "; resume with --resume " << (out_dir / "checkpoint.kgat").string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval / inspect-attention

int run_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_file) {
  auto [state, cfg] = kga::load_checkpoint(checkpoint);
  const kga::Dataset test_split = load_split(data_dir, "test.kgad");
  const kga::EvalOutput out = kga::evaluate(state.model, state.centers, test_split);
  if (!out_file.empty()) write_file(out_file, out.report.to_json() + "\n");
  std::cout << out.report.to_json() << "\n";
  return kExitOk;
}

int run_inspect_attention(const std::string& checkpoint, const std::string& data_dir,
                          const std::string& out_csv, const std::string& features_csv) {
  auto [state, cfg] = kga::load_checkpoint(checkpoint);
  const kga::Dataset test_split = load_split(data_dir, "test.kgad");
  const kga::EvalOutput out = kga::evaluate(state.model, state.centers, test_split);

  std::ostringstream csv;
  kga::write_attention_csv(csv, out.records);
  write_file(out_csv, csv.str());

  if (!features_csv.empty()) {
    // Raw feature export: one row per frame/image with the backbone features.
    std::ostringstream fcsv;
    fcsv << "kind,id,frame_idx,label,is_keyframe";
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) fcsv << ",f" << j;
    fcsv << "\n";
    for (const kga::VideoSample& v : test_split.videos) {
      const kga::Tensor feats = state.model.backbone_forward(v.frames_tensor());
      for (std::size_t i = 0; i < v.n_frames; ++i) {
        fcsv << "frame," << v.id << ',' << i << ',' << kga::label_name(v.label) << ','
             << (v.keyframe_mask[i] ? 1 : 0);
        for (std::size_t j = 0; j < cfg.feature_dim; ++j)
          fcsv << ',' << kga::io::format_double(feats.at(i, j));
        fcsv << "\n";
      }
    }
    for (const kga::ImageSample& img : test_split.images) {
      const auto [feature, logits] = state.model.image_forward(img.pixels_tensor());
      fcsv << "image," << img.id << ",0," << kga::label_name(img.label) << ",1";
      for (std::size_t j = 0; j < cfg.feature_dim; ++j)
        fcsv << ',' << kga::io::format_double(feature.at(j));
      fcsv << "\n";
    }
    write_file(features_csv, fcsv.str());
  }

  ordered_json summary;
  try {
    summary["attention_distance_correlation"] = kga::attention_distance_correlation(out.records);
  } catch (const kga::MetricError&) {
    summary["attention_distance_correlation"] = nullptr;
  }
  try {
    summary["keyframe_attention_gap"] = kga::keyframe_attention_gap(out.records);
  } catch (const kga::MetricError&) {
    summary["keyframe_attention_gap"] = nullptr;
  }
  std::cout << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablation-suite

struct SuiteArgs {
  std::string data_dir;
  std::string out;
  std::size_t seeds = 5;
  std::uint64_t base_seed = 42;
  std::optional<std::size_t> iters;
  std::optional<std::size_t> batch_size;
};

struct SuiteRow {
  kga::Ablation ablation;
  const char* display;
};

int run_ablation_suite(const SuiteArgs& args) {
  const fs::path data_dir(args.data_dir);
  const kga::Dataset train_split = load_split(data_dir, "train.kgad");
  const kga::Dataset test_split = load_split(data_dir, "test.kgad");
  const fs::path out_dir = resolve_out_dir(args.out);

  // Row order mirrors the ablation table: components removed first, full last.
  const SuiteRow rows[] = {
      {kga::Ablation::no_image_guidance, "w/o image guidance"},
      {kga::Ablation::no_coherence_no_attention, "w/o coherence loss & attention"},
      {kga::Ablation::no_coherence, "w/o coherence loss"},
      {kga::Ablation::full, "full (keyframe-guided attention)"},
  };

  ordered_json summary;
  summary["seeds"] = args.seeds;
  summary["base_seed"] = args.base_seed;
  summary["rows"] = ordered_json::array();

  std::ostringstream table;
  table << "configuration                      AUC     ACC     sens    spec\n";

  for (const SuiteRow& row : rows) {
    double sum_auc = 0, sum_acc = 0, sum_sens = 0, sum_spec = 0;
    ordered_json per_seed = ordered_json::array();
    for (std::size_t s = 0; s < args.seeds; ++s) {
      kga::TrainConfig cfg;
      cfg.ablation = row.ablation;
      cfg.seed = args.base_seed + s;
      cfg.input_dim = train_split.dim;
      if (args.iters) cfg.total_iters = *args.iters;
      if (args.batch_size) cfg.batch_size = *args.batch_size;
      cfg.normalize();
      cfg.validate();

      kga::TrainResult result = kga::train(cfg, train_split);
      const kga::EvalOutput eval_out =
          kga::evaluate(result.state.model, result.state.centers, test_split);

      const fs::path run_dir =
          out_dir / std::string(kga::ablation_name(row.ablation)) / ("seed_" + std::to_string(cfg.seed));
      fs::create_directories(run_dir);
      write_file(run_dir / "metrics.json", eval_out.report.to_json() + "\n");

      sum_auc += eval_out.report.auc;
      sum_acc += eval_out.report.acc;
      sum_sens += eval_out.report.sensitivity;
      sum_spec += eval_out.report.specificity;
      ordered_json seed_entry;
      seed_entry["seed"] = cfg.seed;
      seed_entry["auc"] = eval_out.report.auc;
      seed_entry["acc"] = eval_out.report.acc;
      seed_entry["sensitivity"] = eval_out.report.sensitivity;
      seed_entry["specificity"] = eval_out.report.specificity;
      per_seed.push_back(seed_entry);
    }
    const double k = static_cast<double>(args.seeds);
    ordered_json row_json;
    row_json["name"] = row.display;
    row_json["ablation"] = std::string(kga::ablation_name(row.ablation));
    row_json["auc"] = sum_auc / k;
    row_json["acc"] = sum_acc / k;
    row_json["sensitivity"] = sum_sens / k;
    row_json["specificity"] = sum_spec / k;
    row_json["per_seed"] = per_seed;
    summary["rows"].push_back(row_json);

    char line[160];
    std::snprintf(line, sizeof(line), "%-34s %.4f  %.4f  %.4f  %.4f\n", row.display,
                  sum_auc / k, sum_acc / k, sum_sens / k, sum_spec / k);
    table << line;
  }

  write_file(out_dir / "summary.json", summary.dump(2) + "\n");
  write_file(out_dir / "table.txt", table.str());
  write_manifest(out_dir, "ablation-suite",
                 "base_seed=" + std::to_string(args.base_seed) +
                     "\nseeds=" + std::to_string(args.seeds) + "\n",
                 args.base_seed);
  std::cout << table.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keyframe-guided attention video classifier (synthetic benchmark)"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", gen_args.config_file, "dataset config file (key=value lines)");
  gen->add_option("--out", gen_args.out, "output directory (or KGA_OUT_DIR)");
  gen->add_option("--seed", gen_args.seed, "override the config seed");

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "train a model on a generated dataset");
  tr->add_option("--data", train_args.data_dir, "directory with train.kgad/test.kgad")
      ->required();
  tr->add_option("--out", train_args.out, "output directory (or KGA_OUT_DIR)");
  tr->add_option("--config", train_args.config_file, "train config file (key=value lines)");
  tr->add_option("--ablation", train_args.ablation,
                 "full | no_image_guidance | no_coherence | no_coherence_no_attention");
  tr->add_option("--resume", train_args.resume, "checkpoint to resume from");
  tr->add_option("--stop-after", train_args.stop_after,
                 "stop at this absolute iteration (writes a resumable checkpoint)");
  tr->add_flag("--paper-schedule", train_args.paper_schedule,
               "use the full-scale schedule (8000 iters, warmup 1000, decay 4000/6000)");
  tr->add_option("--lr", train_args.lr, "base learning rate");
  tr->add_option("--momentum", train_args.momentum, "SGD momentum");
  tr->add_option("--lambda", train_args.lambda, "coherence loss weight");
  tr->add_option("--center-alpha", train_args.center_alpha, "center update rate");
  tr->add_option("--weight-decay", train_args.weight_decay, "L2 weight decay");
  tr->add_option("--iters", train_args.iters, "total iterations");
  tr->add_option("--warmup", train_args.warmup, "warmup iterations");
  tr->add_option("--decay-iters", train_args.decay_iters, "comma-separated decay milestones");
  tr->add_option("--batch-size", train_args.batch_size, "total batch size");
  tr->add_option("--max-frames", train_args.max_frames, "frames sampled per clip");
  tr->add_option("--hidden-dim", train_args.hidden_dim, "backbone hidden width");
  tr->add_option("--feature-dim", train_args.feature_dim, "feature dimension D");
  tr->add_option("--log-interval", train_args.log_interval, "history logging interval");
  tr->add_option("--checkpoint-interval", train_args.checkpoint_interval,
                 "periodic checkpoint interval (0 = final only)");
  tr->add_option("--seed", train_args.seed, "training seed");
  tr->add_option("--fixed-batch", train_args.fixed_batch,
                 "deterministic half/half batch composition (0/1)");

  std::string eval_checkpoint, eval_data, eval_out;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  ev->add_option("--data", eval_data, "directory with test.kgad")->required();
  ev->add_option("--out", eval_out, "also write the metrics JSON here");

  std::string ia_checkpoint, ia_data, ia_out, ia_features;
  CLI::App* ia = app.add_subcommand("inspect-attention",
                                    "export per-frame attention weights and distances");
  ia->add_option("--checkpoint", ia_checkpoint, "checkpoint file")->required();
  ia->add_option("--data", ia_data, "directory with test.kgad")->required();
  ia->add_option("--out", ia_out, "attention CSV path")->required();
  ia->add_option("--features-out", ia_features, "optional raw feature CSV path");

  SuiteArgs suite_args;
  CLI::App* suite = app.add_subcommand("ablation-suite",
                                       "train and evaluate all four configurations");
  suite->add_option("--data", suite_args.data_dir, "directory with train.kgad/test.kgad")
      ->required();
  suite->add_option("--out", suite_args.out, "output directory (or KGA_OUT_DIR)");
  suite->add_option("--seeds", suite_args.seeds, "seeds per configuration");
  suite->add_option("--seed", suite_args.base_seed, "base seed");
  suite->add_option("--iters", suite_args.iters, "override total iterations");
  suite->add_option("--batch-size", suite_args.batch_size, "override batch size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (tr->parsed()) return run_train(train_args);
    if (ev->parsed()) return run_eval(eval_checkpoint, eval_data, eval_out);
    if (ia->parsed()) return run_inspect_attention(ia_checkpoint, ia_data, ia_out, ia_features);
    if (suite->parsed()) return run_ablation_suite(suite_args);
  } catch (const kga::DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const kga::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const kga::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const kga::VersionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const kga::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
