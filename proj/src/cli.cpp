#include "kdc2/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "binary_io.hpp"
#include "kdc2/encoders.hpp"
#include "kdc2/errors.hpp"
#include "kdc2/eval.hpp"
#include "kdc2/metrics.hpp"
#include "kdc2/oracle_suite.hpp"
#include "kdc2/params.hpp"

namespace kdc2 {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kParamsFile = "params.kdc2";
constexpr const char* kRunConfigFile = "run_config.json";
constexpr const char* kMetricsFile = "metrics.jsonl";

const std::vector<std::string> kCommands = {"synth", "featurize", "pretrain", "finetune", "joint",
                                            "eval",  "sweep-labels", "gradcheck", "report"};

TrainMode mode_for(const std::string& command) {
  if (command == "finetune" || command == "sweep-labels") return TrainMode::finetune;
  if (command == "joint") return TrainMode::joint;
  return TrainMode::pretrain;
}

// ---- RunConfig <-> JSON ---------------------------------------------------

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("config: unknown key '" + where + key + "'");
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  ordered_json j;
  j["command"] = c.command;
  j["seed"] = c.train.seed;
  j["deterministic"] = c.train.deterministic;
  j["data"] = c.data;
  j["test"] = c.test;
  j["init"] = c.init;
  j["out"] = c.out;
  j["montage"] = c.montage;
  j["neighborhood"] = static_cast<int>(c.neighborhood);
  ordered_json t;
  t["mode"] = to_string(c.train.mode);
  t["epochs"] = c.train.epochs;
  t["batch_size"] = c.train.batch_size;
  t["lr"] = c.train.lr;
  t["m"] = c.train.augmentations;
  t["h"] = c.train.representation;
  t["tau"] = c.train.tau;
  t["label_fraction"] = c.train.label_fraction;
  t["contrastive_weight"] = c.train.contrastive_weight;
  t["center"] = c.train.objective.center;
  t["same_view_denominator"] = c.train.objective.same_view_denominator;
  t["symmetric_negatives"] = c.train.objective.symmetric_negatives;
  j["train"] = t;
  ordered_json a;
  a["mask_rate"] = c.train.augment.mask_rate;
  std::vector<std::string> methods;
  for (auto m : c.train.augment.methods) methods.push_back(to_string(m));
  a["methods"] = methods;
  j["augmentation"] = a;
  j["fractions"] = c.fractions;
  ordered_json s;
  s["classes"] = c.synth.n_classes;
  s["channels"] = c.synth.channels;
  s["samples_per_class"] = c.synth.samples_per_class;
  s["snr"] = c.synth.snr;
  s["sample_rate_hz"] = c.synth.sample_rate_hz;
  s["window_s"] = c.synth.window_s;
  s["test_frac"] = c.test_frac;
  j["synth"] = s;
  j["gradcheck"] = ordered_json{{"instances", c.oracle_instances}};
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(std::string_view text, RunConfig c) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  try {
    reject_unknown(j,
                   {"command", "seed", "deterministic", "data", "test", "init", "out", "montage", "neighborhood",
                    "train", "augmentation", "fractions", "synth", "gradcheck"},
                   "");
    read_key(j, "command", c.command);
    read_key(j, "seed", c.train.seed);
    read_key(j, "deterministic", c.train.deterministic);
    read_key(j, "data", c.data);
    read_key(j, "test", c.test);
    read_key(j, "init", c.init);
    read_key(j, "out", c.out);
    read_key(j, "montage", c.montage);
    if (j.contains("neighborhood")) {
      const int n = j["neighborhood"].get<int>();
      if (n != 4 && n != 8) throw ValidationError("config: neighborhood must be 4 or 8");
      c.neighborhood = n == 4 ? Neighborhood::four : Neighborhood::eight;
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      reject_unknown(t,
                     {"mode", "epochs", "batch_size", "lr", "m", "h", "tau", "label_fraction", "contrastive_weight",
                      "center", "same_view_denominator", "symmetric_negatives"},
                     "train.");
      if (t.contains("mode")) c.train.mode = parse_train_mode(t["mode"].get<std::string>());
      read_key(t, "epochs", c.train.epochs);
      read_key(t, "batch_size", c.train.batch_size);
      read_key(t, "lr", c.train.lr);
      read_key(t, "m", c.train.augmentations);
      read_key(t, "h", c.train.representation);
      read_key(t, "tau", c.train.tau);
      read_key(t, "label_fraction", c.train.label_fraction);
      read_key(t, "contrastive_weight", c.train.contrastive_weight);
      read_key(t, "center", c.train.objective.center);
      read_key(t, "same_view_denominator", c.train.objective.same_view_denominator);
      read_key(t, "symmetric_negatives", c.train.objective.symmetric_negatives);
    }
    if (j.contains("augmentation")) {
      const auto& a = j["augmentation"];
      reject_unknown(a, {"mask_rate", "methods"}, "augmentation.");
      read_key(a, "mask_rate", c.train.augment.mask_rate);
      if (a.contains("methods")) {
        c.train.augment.methods.clear();
        for (const auto& m : a["methods"]) c.train.augment.methods.push_back(parse_augment_method(m.get<std::string>()));
      }
    }
    read_key(j, "fractions", c.fractions);
    if (j.contains("synth")) {
      const auto& s = j["synth"];
      reject_unknown(s, {"classes", "channels", "samples_per_class", "snr", "sample_rate_hz", "window_s", "test_frac"},
                     "synth.");
      read_key(s, "classes", c.synth.n_classes);
      read_key(s, "channels", c.synth.channels);
      read_key(s, "samples_per_class", c.synth.samples_per_class);
      read_key(s, "snr", c.synth.snr);
      read_key(s, "sample_rate_hz", c.synth.sample_rate_hz);
      read_key(s, "window_s", c.synth.window_s);
      read_key(s, "test_frac", c.test_frac);
    }
    if (j.contains("gradcheck")) {
      reject_unknown(j["gradcheck"], {"instances"}, "gradcheck.");
      read_key(j["gradcheck"], "instances", c.oracle_instances);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

namespace {

// ---- shared command plumbing ----------------------------------------------

struct Loaded {
  DatasetInfo info;
  FeatureSet features;
  ViewContext ctx;
};

Loaded load_data(const std::string& dir, const RunConfig& rc) {
  if (dir.empty()) throw ValidationError("a dataset directory is required (--data)");
  Loaded l;
  l.info = read_dataset_info(dir);
  l.features = load_dataset_features(dir);
  if (l.features.channels() != l.info.channel_names.size()) {
    throw ValidationError("dataset '" + dir + "': feature cache has " + std::to_string(l.features.channels()) +
                          " channels, dataset lists " + std::to_string(l.info.channel_names.size()));
  }
  const std::string montage = rc.montage.empty() ? l.info.montage : rc.montage;
  l.ctx = ViewContext::make(resolve_montage(montage, l.info.channel_names), rc.neighborhood);
  return l;
}

ParameterSet load_params(const std::string& path) {
  if (path.empty()) throw ValidationError("a checkpoint is required (--init)");
  const fs::path p(path);
  return load_checkpoint(fs::is_directory(p) ? (p / kParamsFile).string() : path);
}

fs::path prepare_out(const RunConfig& rc) {
  if (rc.out.empty()) throw ValidationError("an output directory is required (--out)");
  fs::create_directories(rc.out);
  detail::write_file((fs::path(rc.out) / kRunConfigFile).string(), run_config_to_json(rc));
  return fs::path(rc.out);
}

void print_epoch(std::ostream& out, const EpochRecord& r) {
  out << r.phase << " epoch " << r.epoch << " loss " << format_number(r.loss_total);
  if (r.train_acc) out << " train_acc " << format_number(*r.train_acc);
  out << '\n';
}

/// Runs a training call, streaming metrics; on abort saves the last good params.
template <typename Train>
int run_training(const RunConfig& rc, std::ostream& out, Train train) {
  const fs::path dir = prepare_out(rc);
  MetricsWriter metrics((dir / kMetricsFile).string());
  TrainResult result;
  try {
    result = train([&](const EpochRecord& r) {
      metrics.write(r);
      print_epoch(out, r);
    });
  } catch (const TrainingAborted& e) {
    save_checkpoint((dir / kParamsFile).string(), e.last_good());
    throw;
  }
  save_checkpoint((dir / kParamsFile).string(), result.params);
  out << "wrote " << (dir / kParamsFile).string() << '\n';
  return 0;
}

// ---- commands ---------------------------------------------------------------

int cmd_synth(const RunConfig& rc, std::ostream& out) {
  SynthSpec spec = rc.synth;
  spec.seed = rc.train.seed;
  const LabeledDataset ds = synth_generate(spec);
  const fs::path dir = prepare_out(rc);
  const std::string montage = "tengrid-62";
  if (rc.test_frac > 0.0) {
    const auto [train, test] = split(ds, rc.test_frac, rc.train.seed);
    save_dataset_dir((dir / "train").string(), train, montage);
    save_dataset_dir((dir / "test").string(), test, montage);
    out << "wrote " << train.size() << " train and " << test.size() << " test slices under " << dir.string() << '\n';
  } else {
    save_dataset_dir((dir / "all").string(), ds, montage);
    out << "wrote " << ds.size() << " slices to " << (dir / "all").string() << '\n';
  }
  return 0;
}

int cmd_featurize(const RunConfig& rc, std::ostream& out) {
  if (rc.data.empty()) throw ValidationError("a dataset directory is required (--data)");
  const FeatureSet f = featurize(load_dataset_dir(rc.data).data);
  const fs::path dir(rc.data);
  detail::write_file((dir / kFeatureCacheFile).string(), encode_feature_cache(f));
  detail::write_file((dir / "features.run_config.json").string(), run_config_to_json(rc));
  out << "wrote features of " << f.size() << " slices to " << (dir / kFeatureCacheFile).string() << '\n';
  return 0;
}

int cmd_pretrain(const RunConfig& rc, std::ostream& out) {
  const Loaded data = load_data(rc.data, rc);
  const ParameterSet initial = rc.init.empty() ? ParameterSet{} : load_params(rc.init);
  return run_training(rc, out, [&](const EpochCallback& cb) {
    return pretrain(data.features, data.ctx, rc.train, initial, cb);
  });
}

int cmd_finetune(const RunConfig& rc, std::ostream& out) {
  const Loaded data = load_data(rc.data, rc);
  const ParameterSet params = load_params(rc.init);
  return run_training(rc, out, [&](const EpochCallback& cb) {
    return finetune(params, data.features, data.ctx, rc.train, cb);
  });
}

int cmd_joint(const RunConfig& rc, std::ostream& out) {
  const Loaded data = load_data(rc.data, rc);
  const ParameterSet initial = rc.init.empty() ? ParameterSet{} : load_params(rc.init);
  return run_training(rc, out, [&](const EpochCallback& cb) {
    return joint_train(data.features, data.ctx, rc.train, initial, cb);
  });
}

int cmd_eval(const RunConfig& rc, const std::string& metrics_path, std::ostream& out) {
  const Loaded data = load_data(rc.data, rc);
  const ParameterSet params = load_params(rc.init);
  const Evaluation e = evaluate(params, data.features, data.ctx);
  out << "accuracy " << format_number(e.accuracy) << " (" << e.confusion.trace() << "/" << e.confusion.total()
      << ")\n";
  out << "loss " << format_number(e.loss) << '\n';
  out << format_confusion(e.confusion, data.info.class_names);
  if (!metrics_path.empty()) {
    EpochRecord r;
    r.phase = "eval";
    r.loss_ce = e.loss;
    r.loss_total = e.loss;
    r.accuracy = e.accuracy;
    r.seed = rc.train.seed;
    r.label_fraction = rc.train.label_fraction;
    MetricsWriter(metrics_path, true).write(r);
  }
  return 0;
}

int cmd_sweep(const RunConfig& rc, std::ostream& out) {
  if (rc.fractions.empty()) throw ValidationError("sweep-labels: no fractions given");
  const Loaded train = load_data(rc.data, rc);
  std::optional<Loaded> test;
  if (!rc.test.empty()) test = load_data(rc.test, rc);
  const ParameterSet params = load_params(rc.init);
  for (double f : rc.fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("sweep-labels: fraction " + format_number(f) + " outside (0, 1]");
  }
  const fs::path dir = prepare_out(rc);
  MetricsWriter metrics((dir / kMetricsFile).string());
  for (double f : rc.fractions) {
    TrainConfig cfg = rc.train;
    cfg.label_fraction = f;
    const TrainResult res = finetune(params, train.features, train.ctx, cfg);
    EpochRecord r = res.history.back();
    r.phase = "sweep";
    if (test) r.accuracy = evaluate(res.params, test->features, test->ctx).accuracy;
    metrics.write(r);
    save_checkpoint((dir / ("params_" + format_number(f) + ".kdc2")).string(), res.params);
    out << "fraction " << format_number(f) << " train_acc " << format_number(r.train_acc.value_or(0.0));
    if (r.accuracy) out << " accuracy " << format_number(*r.accuracy);
    out << '\n';
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& rc, std::ostream& out) {
  OracleSuiteOptions o;
  o.instances = rc.oracle_instances;
  o.seed = rc.train.seed;
  if (o.instances == 0) throw ValidationError("gradcheck: --instances must be positive");
  bool all = true;
  for (const auto& r : run_oracle_suite(o)) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(20) << r.name << std::right
        << " instances " << r.instances << " resampled " << r.resampled << " gradients " << r.gradients_checked
        << " max_rel_error " << format_number(r.max_rel_error) << '\n';
    all = all && r.passed;
  }
  out << (all ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  return all ? 0 : 2;
}

int cmd_report(const std::vector<std::string>& files, const std::string& csv_path, std::ostream& out) {
  if (files.empty()) throw ValidationError("report: no metrics files given");
  std::vector<EpochRecord> all;
  for (const auto& f : files) {
    auto recs = read_metrics(f);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  const Report rep = build_report(all);
  out << rep.text;
  if (!csv_path.empty()) detail::write_file(csv_path, rep.csv);
  return 0;
}

std::string find_command(const std::vector<std::string>& args) {
  for (const auto& a : args) {
    if (std::find(kCommands.begin(), kCommands.end(), a) != kCommands.end()) return a;
  }
  return "";
}

std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ValidationError("--config needs a path");
      return args[i + 1];
    }
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return "";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const TrainingAborted*>(&e)) return 2;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const LookupError*>(&e) || dynamic_cast<const MontageError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return 1;
  }
  return 2;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& in_args, std::ostream& out, std::ostream& err) {
  RunConfig rc;
  std::vector<std::string> args = in_args;
  try {
    rc.command = find_command(args);
    rc.train.mode = mode_for(rc.command);
    rc.train.epochs = default_epochs(rc.train.mode);
    if (const std::string path = find_config(args); !path.empty()) {
      const std::string given = rc.command;
      rc = run_config_from_json(detail::read_file(path), rc);
      if (!given.empty()) rc.command = given;
      // A config alone replays its own command.
      if (given.empty() && !rc.command.empty()) args.insert(args.begin(), rc.command);
      rc.train.mode = mode_for(rc.command);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }

  CLI::App app{"Cross-view contrastive EEG representation learning", "kdc2"};
  app.require_subcommand(1, 1);
  std::string config_path;
  app.add_option("--seed", rc.train.seed, "Seed for every random stream");
  app.add_option("--config", config_path, "RunConfig JSON to start from; flags override it");
  app.add_flag("--deterministic", rc.train.deterministic, "Omit timings so reruns are byte-identical");

  int neighborhood = static_cast<int>(rc.neighborhood);
  std::vector<std::string> methods;
  std::string metrics_path, csv_path;
  std::vector<std::string> report_files;

  auto add_data = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--data", rc.data, "Dataset directory");
    if (required && rc.data.empty()) o->required();
    s->add_option("--montage", rc.montage, "Montage name or file (default: the dataset's)");
    s->add_option("--neighborhood", neighborhood, "Graph neighborhood, 4 or 8")->check(CLI::IsMember({4, 8}));
  };
  auto add_out = [&](CLI::App* s) {
    auto* o = s->add_option("--out", rc.out, "Output directory");
    if (rc.out.empty()) o->required();
  };
  auto add_init = [&](CLI::App* s, bool required) {
    auto* o = s->add_option("--init", rc.init, "Checkpoint file or artifact directory");
    if (required && rc.init.empty()) o->required();
  };
  auto add_train = [&](CLI::App* s) {
    s->add_option("--epochs", rc.train.epochs, "Epochs");
    s->add_option("--batch-size", rc.train.batch_size, "Batch size");
    s->add_option("--lr", rc.train.lr, "Adam learning rate");
    s->add_option("--label-fraction", rc.train.label_fraction, "Fraction of labels kept per class");
  };
  auto add_contrastive = [&](CLI::App* s) {
    s->add_option("--augmentations", rc.train.augmentations, "Augmentations per sample");
    s->add_option("--representation", rc.train.representation, "Representation size");
    s->add_option("--tau", rc.train.tau, "InfoNCE temperature");
    s->add_option("--mask-rate", rc.train.augment.mask_rate, "Channel mask rate");
    s->add_option("--methods", methods, "Augmentation methods: mask spatial_shuffle frequency_shuffle hybrid");
    s->add_flag("--center", rc.train.objective.center, "Center representations before correlating");
    s->add_flag("--same-view-denominator", rc.train.objective.same_view_denominator,
                "Normalize both correlation factors by the first augmentation");
    s->add_flag("--symmetric-negatives", rc.train.objective.symmetric_negatives,
                "Count negatives in both directions");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  add_out(synth);
  synth->add_option("--classes", rc.synth.n_classes, "Classes");
  synth->add_option("--channels", rc.synth.channels, "Channels");
  synth->add_option("--samples-per-class", rc.synth.samples_per_class, "Samples per class");
  synth->add_option("--snr", rc.synth.snr, "Sinusoid amplitude over noise sigma");
  synth->add_option("--fs", rc.synth.sample_rate_hz, "Sample rate (Hz)");
  synth->add_option("--window", rc.synth.window_s, "Slice length (s)");
  synth->add_option("--test-frac", rc.test_frac, "Held-out fraction; 0 writes a single 'all' split");

  auto* featurize_cmd = app.add_subcommand("featurize", "Compute and cache preliminary features");
  add_data(featurize_cmd, true);

  auto* pretrain_cmd = app.add_subcommand("pretrain", "Self-supervised pretraining");
  add_data(pretrain_cmd, true);
  add_out(pretrain_cmd);
  add_init(pretrain_cmd, false);
  add_train(pretrain_cmd);
  add_contrastive(pretrain_cmd);

  auto* finetune_cmd = app.add_subcommand("finetune", "Train the decoder on frozen encoders");
  add_data(finetune_cmd, true);
  add_out(finetune_cmd);
  add_init(finetune_cmd, true);
  add_train(finetune_cmd);

  auto* joint_cmd = app.add_subcommand("joint", "Joint contrastive and supervised training");
  add_data(joint_cmd, true);
  add_out(joint_cmd);
  add_init(joint_cmd, false);
  add_train(joint_cmd);
  add_contrastive(joint_cmd);
  joint_cmd->add_option("--contrastive-weight", rc.train.contrastive_weight, "0 trains supervised only");

  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion matrix of a checkpoint");
  add_data(eval_cmd, true);
  add_init(eval_cmd, true);
  eval_cmd->add_option("--metrics", metrics_path, "Append an eval line to this metrics file");

  auto* sweep_cmd = app.add_subcommand("sweep-labels", "Fine-tune at several label fractions");
  add_data(sweep_cmd, true);
  add_out(sweep_cmd);
  add_init(sweep_cmd, true);
  add_train(sweep_cmd);
  sweep_cmd->add_option("--test", rc.test, "Held-out dataset directory");
  sweep_cmd->add_option("--fractions", rc.fractions, "Label fractions");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Run the finite-difference oracle suite");
  gradcheck_cmd->add_option("--instances", rc.oracle_instances, "Random instances per check");

  auto* report_cmd = app.add_subcommand("report", "Summarize metrics files");
  report_cmd->add_option("files", report_files, "Metrics JSON-lines files")->required();
  report_cmd->add_option("--csv", csv_path, "Also write the CSV summary here");

  for (auto* s : app.get_subcommands({})) s->fallthrough();

  std::vector<std::string> argv_store = {"kdc2"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n\n";
    const auto selected = app.get_subcommands();
    err << (selected.empty() ? app.help() : selected.front()->help());
    return 1;
  }

  try {
    rc.neighborhood = neighborhood == 8 ? Neighborhood::eight : Neighborhood::four;
    if (!methods.empty()) {
      rc.train.augment.methods.clear();
      for (const auto& m : methods) rc.train.augment.methods.push_back(parse_augment_method(m));
    }
    if (rc.command == "synth") return cmd_synth(rc, out);
    if (rc.command == "featurize") return cmd_featurize(rc, out);
    if (rc.command == "pretrain") return cmd_pretrain(rc, out);
    if (rc.command == "finetune") return cmd_finetune(rc, out);
    if (rc.command == "joint") return cmd_joint(rc, out);
    if (rc.command == "eval") return cmd_eval(rc, metrics_path, out);
    if (rc.command == "sweep-labels") return cmd_sweep(rc, out);
    if (rc.command == "gradcheck") return cmd_gradcheck(rc, out);
    if (rc.command == "report") return cmd_report(report_files, csv_path, out);
    err << "error: unknown command\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace kdc2
