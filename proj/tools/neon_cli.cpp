// neon: synthetic world generation, feature building, training, evaluation,
// scoring, quota computation and a JSON-lines serving loop.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "manifest.hpp"
#include "neon/metrics.hpp"
#include "neon/service.hpp"
#include "neon/world.hpp"

namespace fs = std::filesystem;
using namespace neon;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kValidation = 2, kNumerical = 3 };

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  bool quiet = false;
  std::vector<std::string> argv;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw CLI::RequiredError("--out");
  fs::create_directories(g.out);
  return fs::path(g.out);
}

struct QuotaSettings {
  ServiceOptions options;
};

ServiceOptions service_options(const Globals& g) {
  ServiceOptions o;
  if (g.config.empty()) return o;
  const json doc = read_json_file(g.config);
  if (!doc.is_object()) throw ValidationError("quota config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key == "weights") {
      o.weights = quota_weights_from_json(value);
    } else if (key == "boost" || key == "floor") {
      if (!value.is_number()) throw ValidationError("quota config: field '" + key + "' must be a number");
      (key == "boost" ? o.boost : o.floor) = value.get<double>();
    } else {
      throw ValidationError("quota config: unknown field '" + key + "'");
    }
  }
  return o;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::optional<std::size_t> records;
  std::optional<std::size_t> users;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  WorldConfig wc = g.config.empty() ? WorldConfig{} : world_config_from_json(read_json_file(g.config));
  if (g.seed) wc.seed = *g.seed;
  if (a.records) wc.record_count = *a.records;
  if (a.users) wc.user_count = *a.users;
  wc.validate();
  const fs::path out = require_out(g);
  cli::RunManifest m("synth", g.argv);
  if (!g.config.empty()) m.input("config", g.config);

  const WorldModel world = build_world(wc);
  const SynthCorpus corpus = sample_records(world, wc.record_count, wc.seed);
  write_records(out / "corpus.jsonl", corpus.records);
  write_profiles(out / "profiles.jsonl", corpus.profiles);
  save_world(world, out / "world.json");

  m.set("seed", wc.seed);
  m.set("world_config", world_config_to_json(wc));
  m.output("corpus", out / "corpus.jsonl");
  m.output("profiles", out / "profiles.jsonl");
  m.output("world", out / "world.json");
  m.write(out / "manifest.json");
  if (!g.quiet)
    std::cout << "synth: " << corpus.records.size() << " records, " << corpus.profiles.size()
              << " users -> " << out.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct DataArgs {
  std::string corpus;
  std::string profiles;
};

TrainingConfig training_config(const Globals& g) {
  TrainingConfig tc =
      g.config.empty() ? TrainingConfig{} : training_config_from_json(read_json_file(g.config));
  if (g.seed) tc.seed = *g.seed;
  return tc;
}

int cmd_build_features(const Globals& g, const DataArgs& a) {
  const TrainingConfig tc = training_config(g);
  const fs::path out = require_out(g);
  cli::RunManifest m("build-features", g.argv);
  m.input("corpus", a.corpus);
  m.input("profiles", a.profiles);
  if (!g.config.empty()) m.input("config", g.config);
  const auto records = read_records(a.corpus);
  const auto profiles = read_profiles(a.profiles);
  const FeatureBundle bundle = build_feature_bundle(records, profiles, tc.split_fraction, tc.seed);
  save_bundle(bundle, out / "features.json");
  m.set("seed", tc.seed);
  m.set("split_fraction", tc.split_fraction);
  m.output("features", out / "features.json");
  m.write(out / "manifest.json");
  if (!g.quiet)
    std::cout << "build-features: " << bundle.tables.group_aggregated.size() << " group rows, "
              << bundle.tables.group_context.size() << " context rows, "
              << bundle.tables.rules.size() << " rules\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  DataArgs data;
  std::string features;
  std::string variant = "multitask";
  bool drop_st = false;
  bool drop_group = false;
  std::optional<std::size_t> epochs;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  TrainingConfig tc = training_config(g);
  if (a.epochs) tc.epochs = *a.epochs;
  tc.validate();
  const Variant variant = parse_variant(a.variant);
  const fs::path out = require_out(g);
  cli::RunManifest m("train", g.argv);
  m.input("corpus", a.data.corpus);
  m.input("profiles", a.data.profiles);
  if (!g.config.empty()) m.input("config", g.config);
  if (!a.features.empty()) m.input("features", a.features);

  const auto records = read_records(a.data.corpus);
  const auto profiles = read_profiles(a.data.profiles);
  FeatureBundle bundle = a.features.empty()
                             ? build_feature_bundle(records, profiles, tc.split_fraction, tc.seed)
                             : load_bundle(a.features);
  const PreparedData data = prepare_data(records, profiles, std::move(bundle));

  const ModelConfig mc = make_model_config(data.bundle.schema, variant, a.drop_st, a.drop_group);
  std::ofstream trace(out / "loss_trace.jsonl", std::ios::binary);
  if (!trace) throw ValidationError("cannot write " + (out / "loss_trace.jsonl").string());
  TrainResult result = train(NeonModel(mc, tc.seed), data.train, tc, [&](const EpochLoss& e) {
    trace << epoch_loss_to_json(e).dump() << '\n';
    trace.flush();
    if (!g.quiet)
      std::cout << "epoch " << e.epoch << "  need " << e.need_loss << "  way " << e.way_loss
                << "  total " << e.total << std::endl;
  });
  trace.close();

  save_checkpoint(result.model, out / "checkpoint.json");
  save_bundle(data.bundle, out / "features.json");
  write_text(out / "training_config.json", training_config_to_json(tc).dump(2) + "\n");
  m.set("seed", tc.seed);
  m.set("training_config", training_config_to_json(tc));
  m.set("model_config", model_config_to_json(mc));
  m.set("train_count", data.train.size());
  m.set("eval_count", data.eval.size());
  m.output("checkpoint", out / "checkpoint.json");
  m.output("features", out / "features.json");
  m.output("loss_trace", out / "loss_trace.jsonl");
  m.output("training_config", out / "training_config.json");
  m.write(out / "manifest.json");
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  DataArgs data;
  std::string checkpoint;
  std::string features;
  std::string world;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const fs::path out = require_out(g);
  cli::RunManifest m("eval", g.argv);
  m.input("corpus", a.data.corpus);
  m.input("profiles", a.data.profiles);
  m.input("checkpoint", a.checkpoint);
  m.input("features", a.features);
  if (!a.world.empty()) m.input("world", a.world);

  const NeonModel model = load_checkpoint(a.checkpoint);
  const auto records = read_records(a.data.corpus);
  const auto profiles = read_profiles(a.data.profiles);
  const PreparedData data = prepare_data(records, profiles, load_bundle(a.features));

  const MatrixXd scores = predict_need_scores(model, data.eval.scenes);
  std::vector<EvalReport> reports;
  reports.push_back(evaluate_scores(scores, data.eval.need_labels, "model"));

  // Context-blind baseline: every scene ranked by the training-set need shares.
  MatrixXd popularity(static_cast<Eigen::Index>(data.eval.size()),
                      static_cast<Eigen::Index>(kNeedCount));
  for (std::size_t j = 0; j < kNeedCount; ++j)
    popularity.col(static_cast<Eigen::Index>(j)).setConstant(data.bundle.tables.global()[j]);
  reports.push_back(evaluate_scores(popularity, data.eval.need_labels, "popularity"));

  if (!a.world.empty()) {
    const WorldModel world = load_world(a.world);
    EvalReport oracle = evaluate_scores(oracle_need_scores(world, data.eval_scenes),
                                        data.eval.need_labels, "bayes_oracle");
    reports.front().oracle_sa = oracle.sa;
    reports.push_back(oracle);
  }

  json doc{{"reports", json::array()}};
  for (const auto& r : reports) doc["reports"].push_back(report_to_json(r));
  const auto quota_rows = quota_kld_by_period(scores, data.eval_scenes, data.bundle.tables);
  doc["quota_kld"] = quota_kld_to_json(quota_rows);
  doc["oov_count"] = data.diagnostics.oov_count;
  write_text(out / "report.json", doc.dump(2) + "\n");
  const std::string table = report_table(reports) + "\n" + quota_kld_table(quota_rows);
  write_text(out / "report.txt", table);
  m.output("report", out / "report.json");
  m.output("report_table", out / "report.txt");
  m.write(out / "manifest.json");
  if (!g.quiet) std::cout << table;
  return kOk;
}

// ---------------------------------------------------------------------------

struct StreamArgs {
  std::string checkpoint;
  std::string features;
  std::string input = "-";
  std::size_t workers = 0;
};

std::size_t worker_count(std::size_t requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

Service make_service(const Globals& g, const StreamArgs& a, bool require_model) {
  if (a.checkpoint.empty() != a.features.empty())
    throw ValidationError("--checkpoint and --features must be given together");
  if (require_model && a.checkpoint.empty())
    throw ValidationError("--checkpoint and --features are required");
  std::optional<NeonModel> model;
  std::optional<FeatureBundle> bundle;
  if (!a.checkpoint.empty()) {
    model = load_checkpoint(a.checkpoint);
    bundle = load_bundle(a.features);
  }
  return Service(std::move(model), std::move(bundle), service_options(g));
}

// score and quota: a request file (or stdin) to <out>/<name>.jsonl or stdout.
int cmd_batch(const Globals& g, const StreamArgs& a, const std::string& command,
              bool require_model) {
  const Service service = make_service(g, a, require_model);
  std::optional<cli::RunManifest> m;
  if (!g.out.empty()) {
    m.emplace(command, g.argv);
    if (!a.checkpoint.empty()) {
      m->input("checkpoint", a.checkpoint);
      m->input("features", a.features);
    }
    if (a.input != "-") m->input("requests", a.input);
    if (!g.config.empty()) m->input("config", g.config);
  }

  std::ifstream file;
  std::istream* in = &std::cin;
  if (a.input != "-") {
    file.open(a.input, std::ios::binary);
    if (!file) throw ValidationError("cannot open " + a.input);
    in = &file;
  }
  StreamStats stats;
  if (m) {
    const fs::path out = require_out(g);
    const fs::path target = out / (command == "score" ? "scores.jsonl" : "quotas.jsonl");
    std::ofstream os(target, std::ios::binary);
    if (!os) throw ValidationError("cannot write " + target.string());
    stats = serve_stream(*in, os, service, worker_count(a.workers));
    os.close();
    m->set("requests", stats.requests);
    m->set("errors", stats.errors);
    m->output("responses", target);
    m->write(out / "manifest.json");
  } else {
    stats = serve_stream(*in, std::cout, service, worker_count(a.workers));
  }
  if (!g.quiet)
    std::cerr << command << ": " << stats.requests << " requests, " << stats.errors << " errors\n";
  return kOk;
}

int cmd_serve(const Globals& g, const StreamArgs& a) {
  const Service service = make_service(g, a, /*require_model=*/true);
  if (!g.quiet) std::cerr << "serve: reading requests from standard input\n";
  const StreamStats stats = serve_stream(std::cin, std::cout, service, worker_count(a.workers));
  if (!g.out.empty()) {
    const fs::path out = require_out(g);
    cli::RunManifest m("serve", g.argv);
    m.input("checkpoint", a.checkpoint);
    m.input("features", a.features);
    m.set("requests", stats.requests);
    m.set("errors", stats.errors);
    m.write(out / "manifest.json");
  }
  if (!g.quiet)
    std::cerr << "serve: " << stats.requests << " requests, " << stats.errors << " errors\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Living-need prediction: synthetic data, training, evaluation and quota serving"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding the config seed");
  app.add_option("--config", g.config, "JSON config for the command");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic world and corpus");
  synth_cmd->add_option("--records", synth.records, "Override record_count");
  synth_cmd->add_option("--users", synth.users, "Override user_count");

  DataArgs features_data;
  auto* features_cmd = app.add_subcommand("build-features", "Mine feature tables from the training split");
  features_cmd->add_option("--corpus", features_data.corpus, "Purchase records (JSON lines)")->required();
  features_cmd->add_option("--profiles", features_data.profiles, "User profiles (JSON lines)")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--corpus", train_args.data.corpus, "Purchase records (JSON lines)")->required();
  train_cmd->add_option("--profiles", train_args.data.profiles, "User profiles (JSON lines)")->required();
  train_cmd->add_option("--features", train_args.features, "Feature bundle; built from the split when absent");
  train_cmd->add_option("--variant", train_args.variant, "multitask or single_task_sum")
      ->check(CLI::IsMember({"multitask", "single_task_sum"}));
  train_cmd->add_flag("--drop-st", train_args.drop_st, "Zero the spatiotemporal context features");
  train_cmd->add_flag("--drop-group", train_args.drop_group, "Zero the group behavior features");
  train_cmd->add_option("--epochs", train_args.epochs, "Override the epoch count");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
  eval_cmd->add_option("--corpus", eval_args.data.corpus, "Purchase records (JSON lines)")->required();
  eval_cmd->add_option("--profiles", eval_args.data.profiles, "User profiles (JSON lines)")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--features", eval_args.features, "Feature bundle")->required();
  eval_cmd->add_option("--world", eval_args.world, "World ground truth for the oracle comparison");

  StreamArgs score_args, quota_args, serve_args;
  auto* score_cmd = app.add_subcommand("score", "Score scene requests from a JSON-lines file");
  score_cmd->add_option("--checkpoint", score_args.checkpoint, "Model checkpoint")->required();
  score_cmd->add_option("--features", score_args.features, "Feature bundle")->required();
  score_cmd->add_option("--input", score_args.input, "Request file, - for standard input");
  score_cmd->add_option("--workers", score_args.workers, "Worker threads (0 = hardware)");

  auto* quota_cmd = app.add_subcommand("quota", "Compute quotas for scored or scene requests");
  quota_cmd->add_option("--checkpoint", quota_args.checkpoint, "Model checkpoint for scene requests");
  quota_cmd->add_option("--features", quota_args.features, "Feature bundle for scene requests");
  quota_cmd->add_option("--input", quota_args.input, "Request file, - for standard input");
  quota_cmd->add_option("--workers", quota_args.workers, "Worker threads (0 = hardware)");

  auto* serve_cmd = app.add_subcommand("serve", "Answer JSON-lines requests on standard input");
  serve_cmd->add_option("--checkpoint", serve_args.checkpoint, "Model checkpoint")->required();
  serve_cmd->add_option("--features", serve_args.features, "Feature bundle")->required();
  serve_cmd->add_option("--workers", serve_args.workers, "Worker threads (0 = hardware)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    if (synth_cmd->parsed()) return cmd_synth(g, synth);
    if (features_cmd->parsed()) return cmd_build_features(g, features_data);
    if (train_cmd->parsed()) return cmd_train(g, train_args);
    if (eval_cmd->parsed()) return cmd_eval(g, eval_args);
    if (score_cmd->parsed()) return cmd_batch(g, score_args, "score", true);
    if (quota_cmd->parsed()) return cmd_batch(g, quota_args, "quota", false);
    if (serve_cmd->parsed()) return cmd_serve(g, serve_args);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const nn::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const nn::DimensionError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kUsage;
}
