// SPDX-License-Identifier: Apache-2.0
#include "cli/commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cli/config.hpp"
#include "dance/binary_io.hpp"
#include "dance/condense.hpp"
#include "dance/coreset.hpp"
#include "dance/dataset.hpp"
#include "dance/diagnostics.hpp"
#include "dance/error.hpp"
#include "dance/evaluation.hpp"
#include "dance/expert_bank.hpp"
#include "dance/synthetic.hpp"

namespace fs = std::filesystem;

namespace dance::cli {
namespace {

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Options shared by every subcommand plus the per-command flag -> key map.
struct Invocation {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;  // key -> value, as given
  CLI::App* app = nullptr;
};

void add_flag(Invocation& inv, const std::string& flag, const std::string& key,
              const std::string& help) {
  inv.app->add_option(flag, inv.flags[key], help);
}

Invocation& add_common(CLI::App* sub, std::vector<std::unique_ptr<Invocation>>& store) {
  store.push_back(std::make_unique<Invocation>());
  Invocation& inv = *store.back();
  inv.app = sub;
  sub->add_option("--config", inv.config_file, "config file (key = value lines)");
  sub->add_option("--set", inv.sets, "override, key=value (repeatable)");
  add_flag(inv, "--threads", "threads", "worker threads; 1 is bit-reproducible");
  add_flag(inv, "--seed", "seed", "global seed");
  add_flag(inv, "--out-dir", "out_dir", "output directory");
  add_flag(inv, "--out", "out", "primary output file");
  return inv;
}

RunConfig resolve(const Invocation& inv) {
  RunConfig cfg;
  if (!inv.config_file.empty()) cfg.merge_file(inv.config_file);
  for (const std::string& s : inv.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  // Unset flags keep their empty default and do not override.
  for (const auto& [key, value] : inv.flags)
    if (!value.empty()) cfg.set(key, value);
  return cfg;
}

fs::path out_path(RunConfig& cfg, const std::string& fallback) {
  if (cfg.str("out").empty()) cfg.set("out", (fs::path(cfg.str("out_dir")) / fallback).string());
  return cfg.str("out");
}

void write_echo(const RunConfig& cfg, const std::string& command) {
  write_text_atomic(fs::path(cfg.str("out_dir")) / (command + ".resolved.cfg"),
                    "# " + command + "\n" + cfg.echo());
}

DatasetSplit load_data(const RunConfig& cfg, bool need_test) {
  const std::string kind = cfg.str("dataset");
  if (kind == "fixture") {
    GaussianPatchOptions o;
    o.classes = cfg.size("fixture_classes");
    o.train_per_class = cfg.size("fixture_train_per_class");
    o.test_per_class = cfg.size("fixture_test_per_class");
    o.channels = cfg.size("fixture_channels");
    o.resolution = cfg.size("fixture_resolution");
    o.noise = cfg.real("fixture_noise");
    o.seed = cfg.u64("fixture_seed");
    return make_gaussian_patches(o);
  }
  auto need = [&](const std::string& key) {
    if (cfg.str(key).empty()) throw ConfigError("dataset '" + kind + "' needs " + key);
    return fs::path(cfg.str(key));
  };
  DatasetSplit split;
  if (kind == "idx") {
    split.train = load_idx(need("train_images"), need("train_labels"));
    if (need_test)
      split.test = load_idx(need("test_images"), need("test_labels"), &split.train.stats);
  } else if (kind == "container") {
    split.train = load_container(need("train_images"));
    if (need_test) split.test = load_container(need("test_images"), &split.train.stats);
  } else {
    throw ConfigError("dataset must be fixture, idx or container, got '" + kind + "'");
  }
  return split;
}

ConvNetSpec net_spec(const RunConfig& cfg, const RealDataset& ds) {
  ConvNetSpec spec = spec_for(ds, cfg.size("net_depth"), cfg.size("net_width"));
  spec.validate();
  return spec;
}

TrainOptions expert_options(const RunConfig& cfg) {
  TrainOptions t;
  t.epochs = cfg.size("expert_epochs");
  t.batch_size = cfg.size("expert_batch");
  t.sgd = {cfg.real("expert_lr"), cfg.real("expert_momentum"), cfg.real("expert_weight_decay")};
  return t;
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions e;
  e.epochs = cfg.size("eval_epochs");
  e.batch_size = cfg.size("eval_batch");
  e.sgd = {cfg.real("eval_lr"), cfg.real("eval_momentum"), cfg.real("eval_weight_decay")};
  e.augment.color = cfg.flag("aug_color");
  e.augment.crop = cfg.flag("aug_crop");
  e.augment.cutmix = cfg.flag("aug_cutmix");
  return e;
}

ExpertBank need_bank(const RunConfig& cfg, const std::string& why) {
  if (cfg.str("bank").empty()) throw ConfigError(why + " needs a bank (--bank)");
  return load_bank(cfg.str("bank"));
}

SyntheticSet need_synthetic(const RunConfig& cfg) {
  if (cfg.str("synthetic").empty()) throw ConfigError("missing --synthetic");
  return load_synthetic(cfg.str("synthetic"));
}

void check_same_shape(const SyntheticSet& syn, const RealDataset& ds) {
  if (syn.classes != ds.classes || syn.channels() != ds.channels() ||
      syn.height() != ds.height() || syn.width() != ds.width())
    throw ShapeError("synthetic set shape does not match the dataset");
}

// ---------------------------------------------------------------------------

int cmd_fixture(RunConfig& cfg, std::ostream& out) {
  cfg.set("dataset", "fixture");
  const DatasetSplit d = load_data(cfg, true);
  const fs::path dir = out_path(cfg, "fixture");
  save_container(dir / "train.dcds", d.train);
  save_container(dir / "test.dcds", d.test);
  write_echo(cfg, "make-fixture");
  out << "wrote " << d.train.size() << " train / " << d.test.size() << " test examples to "
      << dir.string() << "\n";
  return kOk;
}

int cmd_pretrain(RunConfig& cfg, std::ostream& out) {
  const DatasetSplit d = load_data(cfg, true);
  const ConvNetSpec spec = net_spec(cfg, d.train);
  const fs::path path = out_path(cfg, "bank.dcxb");
  const ExpertBank bank = build_bank(d.train, &d.test, spec, cfg.size("num_experts"),
                                     cfg.u64("seed"), expert_options(cfg), cfg.size("threads"));
  save_bank(path, bank);
  write_echo(cfg, "pretrain");
  out << "expert,final_loss,train_accuracy,test_accuracy\n";
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const ExpertMeta& m = bank.entries[i].meta;
    out << i + 1 << "," << fmt6(m.final_loss) << "," << fmt6(m.train_accuracy) << ","
        << fmt6(m.test_accuracy) << "\n";
  }
  return kOk;
}

int cmd_condense(RunConfig& cfg, std::ostream& out) {
  const std::string method = cfg.str("method");
  if (method != "dance" && method != "dm")
    throw ConfigError("condense --method must be dance or dm, got '" + method + "'");
  CondenseConfig cc;
  cc.iterations = cfg.size("iterations");
  cc.lr = cfg.real("lr");
  cc.momentum = cfg.real("momentum");
  cc.calib_interval = cfg.size("calib_interval");
  cc.calib_steps = cfg.size("calib_steps");
  cc.ipc = cfg.size("ipc");
  cc.factor = cfg.size("factor");
  cc.real_batch = cfg.size("real_batch");
  cc.augment.color = cfg.flag("match_color");
  cc.augment.crop = cfg.flag("match_crop");
  cc.seed = cfg.u64("seed");
  cc.checkpoint_every = cfg.size("checkpoint_every");
  const fs::path path = out_path(cfg, "syn_" + method + ".dcsyn");
  if (cc.checkpoint_every > 0) cc.checkpoint_path = fs::path(path).concat(".ckpt");
  cc.validate();

  // Resolve inputs before any output is produced.
  ExpertBank bank;
  if (method == "dance") bank = need_bank(cfg, "condense --method dance");
  const DatasetSplit d = load_data(cfg, false);
  if (method == "dance") check_bank_matches(bank, d.train);

  const CondenseResult r = method == "dance"
                               ? dance_condense(cc, d.train, bank)
                               : dm_condense(cc, d.train, net_spec(cfg, d.train));
  save_synthetic(path, r.syn);
  write_text_atomic(fs::path(path).replace_extension(".progress.csv"), progress_csv(r.records));
  export_ppm(fs::path(path).replace_extension(".ppm"), r.syn);
  write_echo(cfg, "condense_" + method);
  out << method << ": " << r.syn.canvases.dim(0) << " canvases, " << r.syn.unfactored_count()
      << " examples, " << r.calibrations << " calibrations\n";
  out << "mean ms/iteration: " << fmt6(r.mean_ms) << "\n";
  return kOk;
}

int cmd_evaluate(RunConfig& cfg, std::ostream& out) {
  const SyntheticSet syn = need_synthetic(cfg);
  const DatasetSplit d = load_data(cfg, true);
  check_same_shape(syn, d.test);
  const fs::path path = out_path(cfg, "eval_report.csv");
  const EvalReport rep =
      evaluate_repeats(syn, d.test, net_spec(cfg, d.test), eval_options(cfg), cfg.size("repeats"),
                       cfg.u64("seed"), {}, cfg.size("threads"));
  write_text_atomic(path, eval_report_csv(rep));
  write_echo(cfg, "evaluate");
  out << "accuracy " << fmt6(rep.mean) << " +- " << fmt6(rep.std) << " over "
      << rep.accuracies.size() << " runs" << (rep.degenerate ? " (std degenerate: one run)" : "")
      << "\n";
  return kOk;
}

int cmd_baseline(RunConfig& cfg, std::ostream& out) {
  const std::string method = cfg.str("method");
  if (method != "random" && method != "herding" && method != "kcenter")
    throw ConfigError("baseline --method must be random, herding or kcenter, got '" + method + "'");
  const std::string features = cfg.str("baseline_features");
  if (features != "pixels" && features != "expert")
    throw ConfigError("baseline_features must be pixels or expert");
  ExpertBank bank;
  if (features == "expert") bank = need_bank(cfg, "baseline_features = expert");
  const DatasetSplit d = load_data(cfg, false);
  const ParamSet<float>* enc = nullptr;
  if (features == "expert") {
    check_bank_matches(bank, d.train);
    enc = &bank.entries.at(0).expert;
  }
  const std::size_t ipc = cfg.size("ipc");
  SyntheticSet syn = method == "random"    ? random_select(d.train, ipc, cfg.u64("seed"))
                     : method == "herding" ? herding_select(d.train, ipc, enc)
                                           : kcenter_select(d.train, ipc, enc);
  const fs::path path = out_path(cfg, "syn_" + method + ".dcsyn");
  save_synthetic(path, syn);
  write_echo(cfg, "baseline_" + method);
  out << method << ": " << syn.canvases.dim(0) << " examples\n";
  return kOk;
}

int cmd_diagnose(RunConfig& cfg, std::ostream& out) {
  const std::string mode = cfg.str("mode");
  if (mode == "discrepancy") {
    const SyntheticSet syn = need_synthetic(cfg);
    const DatasetSplit d = load_data(cfg, false);
    check_same_shape(syn, d.train);
    TrainOptions t = expert_options(cfg);
    t.epochs = cfg.size("diag_epochs");
    const auto curve = discrepancy_curve(syn, d.train, net_spec(cfg, d.train),
                                         cfg.size("checkpoints"), t, cfg.u64("seed"));
    const fs::path path = out_path(cfg, "discrepancy.csv");
    write_text_atomic(path, discrepancy_csv(curve));
    write_echo(cfg, "diagnose_discrepancy");
    out << "late-stage discrepancy " << fmt6(curve.back().value) << "\n";
  } else if (mode == "lambda-sweep") {
    const ExpertBank bank = need_bank(cfg, "lambda-sweep");
    const DatasetSplit d = load_data(cfg, true);
    check_bank_matches(bank, d.test);
    const std::size_t n = cfg.size("expert_index");
    if (n >= bank.size()) throw ConfigError("expert_index out of range");
    const std::vector<double> grid = lambda_grid(cfg.real("lambda_step"));
    const auto rows = lambda_sweep(bank.entries[n], d.test, grid);
    const fs::path path = out_path(cfg, "lambda_sweep.csv");
    write_text_atomic(path, lambda_sweep_csv(rows));
    write_echo(cfg, "diagnose_lambda_sweep");
    out << rows.size() << " rows\n";
  } else if (mode == "expert-acc") {
    const ExpertBank bank = need_bank(cfg, "expert-acc");
    const SyntheticSet syn = need_synthetic(cfg);
    if (!(syn.canvases.dim(1) == bank.spec.in_channels && syn.classes == bank.spec.classes &&
          syn.height() == bank.spec.image_height && syn.width() == bank.spec.image_width))
      throw ShapeError("synthetic set does not match the bank descriptor");
    write_echo(cfg, "diagnose_expert_acc");
    out << fmt6(expert_acc_on_syn(bank, syn)) << "\n";
  } else {
    throw ConfigError("diagnose --mode must be discrepancy, lambda-sweep or expert-acc");
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dataset condensation by distribution matching with middle encoders"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Invocation>> store;
  using Handler = int (*)(RunConfig&, std::ostream&);
  std::vector<std::pair<CLI::App*, Handler>> handlers;

  auto* fixture = app.add_subcommand("make-fixture", "write the Gaussian-patch fixture as containers");
  add_common(fixture, store);
  handlers.emplace_back(fixture, cmd_fixture);

  auto* pretrain = app.add_subcommand("pretrain", "train the expert bank");
  {
    Invocation& inv = add_common(pretrain, store);
    add_flag(inv, "--num-experts", "num_experts", "number of init/expert pairs");
  }
  handlers.emplace_back(pretrain, cmd_pretrain);

  auto* condense = app.add_subcommand("condense", "learn a synthetic set");
  {
    Invocation& inv = add_common(condense, store);
    add_flag(inv, "--method", "method", "dance | dm");
    add_flag(inv, "--bank", "bank", "expert bank (dance)");
    add_flag(inv, "--ipc", "ipc", "canvases per class");
    add_flag(inv, "--factor", "factor", "mini-images per canvas side");
    add_flag(inv, "--iterations", "iterations", "outer iterations");
  }
  handlers.emplace_back(condense, cmd_condense);

  auto* evaluate = app.add_subcommand("evaluate", "train fresh networks on a synthetic set");
  {
    Invocation& inv = add_common(evaluate, store);
    add_flag(inv, "--synthetic", "synthetic", "synthetic set file");
    add_flag(inv, "--repeats", "repeats", "independent runs");
  }
  handlers.emplace_back(evaluate, cmd_evaluate);

  auto* baseline = app.add_subcommand("baseline", "select a coreset");
  {
    Invocation& inv = add_common(baseline, store);
    add_flag(inv, "--method", "method", "random | herding | kcenter");
    add_flag(inv, "--ipc", "ipc", "examples per class");
    add_flag(inv, "--bank", "bank", "bank for baseline_features = expert");
  }
  handlers.emplace_back(baseline, cmd_baseline);

  auto* diagnose = app.add_subcommand("diagnose", "feature discrepancy, lambda sweep, expert accuracy");
  {
    Invocation& inv = add_common(diagnose, store);
    add_flag(inv, "--mode", "mode", "discrepancy | lambda-sweep | expert-acc");
    add_flag(inv, "--synthetic", "synthetic", "synthetic set file");
    add_flag(inv, "--bank", "bank", "expert bank file");
    add_flag(inv, "--checkpoints", "checkpoints", "discrepancy stages");
    add_flag(inv, "--lambda-step", "lambda_step", "lambda grid step");
  }
  handlers.emplace_back(diagnose, cmd_diagnose);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "error: " << e.what() << "\n";
    return kConfig;
  }

  try {
    for (std::size_t i = 0; i < handlers.size(); ++i) {
      if (!handlers[i].first->parsed()) continue;
      RunConfig cfg = resolve(*store[i]);
      if (cfg.size("threads") == 0) throw ConfigError("threads must be >= 1");
      return handlers[i].second(cfg, out);
    }
    return kConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace dance::cli
