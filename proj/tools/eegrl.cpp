#include <CLI11.hpp>

#include <cstring>
#include <iostream>

#include "eegrl/eegrl.hpp"

using namespace eegrl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_data_options(CLI::App* app, DataSource& d) {
  app->add_option("--data", d.path, "Recording file or directory (.edf or plain matrix .txt)");
  app->add_option("--format", d.format, "Recording format")->check(CLI::IsMember({"auto", "edf", "matrix"}));
  app->add_option("--subject", d.subjects, "Keep only these subject ids (repeatable)");
  app->add_flag("--synthetic", d.synthetic, "Use the synthetic generator instead of --data");
  app->add_option("--channels", d.channels, "Expected channel count");
  app->add_option("--rate", d.rate, "Expected sample rate in Hz");
  app->add_flag("--notch,!--no-notch", d.preprocess.notch, "Apply the notch filter");
  app->add_option("--notch-freq", d.preprocess.notch_freq, "Notch frequency in Hz");
  app->add_option("--notch-q", d.preprocess.notch_q, "Notch quality factor");
  app->add_option("--trial-seconds", d.preprocess.trial_seconds, "Trial length in seconds");
}

void add_synthetic_options(CLI::App* app, SyntheticSpec& s) {
  app->add_option("--synth-classes", s.classes, "Synthetic: number of classes");
  app->add_option("--synth-channels", s.channels, "Synthetic: number of channels");
  app->add_option("--synth-trials", s.trials, "Synthetic: number of trials");
  app->add_option("--synth-trial-samples", s.trial_samples, "Synthetic: samples per trial");
  app->add_option("--synth-rate", s.rate, "Synthetic: sample rate in Hz");
  app->add_option("--synth-clear-fraction", s.clear_fraction, "Synthetic: share of clear time points");
  app->add_option("--synth-noise", s.noise_sigma, "Synthetic: noise standard deviation");
  app->add_option("--synth-offset", s.class_offset, "Synthetic: per-class channel offset");
  app->add_option("--synth-segment", s.mean_segment, "Synthetic: mean clear/ambiguous segment length");
  app->add_option("--synth-seed", s.seed, "Synthetic: generator seed");
}

void add_experiment_options(CLI::App* app, ExperimentConfig& c, std::string& config_path) {
  add_data_options(app, c.data);
  add_synthetic_options(app, c.data.synthetic_spec);
  auto& p1 = c.phase1;
  app->add_option("--conv-widths", p1.model.conv_widths, "Graph convolution widths, starting at 1");
  app->add_option("--cheb-order", p1.model.order, "Chebyshev polynomial order K");
  app->add_option("--fc-widths", p1.model.fc_widths, "Classifier widths, ending at the class count");
  app->add_option("--dropout", p1.model.dropout, "Dropout probability");
  app->add_option("--epochs", p1.glt.hyper.epochs, "Phase-1 epochs per pruning level");
  app->add_option("--batch-size", p1.glt.hyper.batch_size, "Phase-1 batch size");
  app->add_option("--lr", p1.glt.hyper.lr, "Phase-1 learning rate");
  app->add_option("--gcn-seed", p1.glt.hyper.seed, "Phase-1 shuffle seed");
  app->add_option("--prune-rate", p1.glt.prune_rate, "Share of live edges pruned per level");
  app->add_option("--target-density", p1.glt.target_density, "Stop pruning below this density");
  app->add_option("--window-start", p1.window_start, "Phase-1 window start in seconds");
  app->add_option("--window-end", p1.window_end, "Phase-1 window end in seconds");
  app->add_option("--point-stride", p1.point_stride, "Use every n-th time point in phase 1");
  app->add_option("--val-fraction", p1.val_fraction, "Phase-1 validation share");

  auto& p2 = c.phase2;
  app->add_option("--trunk", p2.agent.trunk, "Agent trunk widths");
  app->add_option("--head-hidden", p2.agent.head_hidden, "Agent head hidden width");
  app->add_option("--gamma", p2.trainer.gamma, "Discount factor");
  app->add_option("--rl-epochs", p2.trainer.epochs, "Agent training epochs");
  app->add_option("--rl-batch-size", p2.trainer.batch_size, "Agent batch size");
  app->add_option("--target-update", p2.trainer.target_update_every, "Batches between target syncs");
  app->add_option("--rl-lr", p2.trainer.lr, "Agent learning rate");
  app->add_option("--l2", p2.trainer.l2_lambda, "Agent L2 weight");
  app->add_option("--agent-seed", p2.trainer.seed, "Agent init and replay shuffle seed");
  app->add_option("--r-right", p2.reward.r_right, "Reward for a correct classification");
  app->add_option("--r-wrong", p2.reward.r_wrong, "Reward for a wrong classification");
  app->add_option("--r-skip", p2.reward.r_skip, "Reward for skipping");
  app->add_option("--horizon", p2.reward.horizon, "Episode horizon H");
  app->add_option("--r-right-grid", p2.r_right_grid, "Sweep values for r_right");
  app->add_option("--r-wrong-grid", p2.r_wrong_grid, "Sweep values for r_wrong");
  app->add_option("--horizon-grid", p2.horizon_grid, "Sweep values for H");
  app->add_flag("--full-grid", p2.full_grid, "Search the full reward x horizon product for the optimum");
  app->add_option("--repeats", p2.repeats, "Episode splits to average over");
  app->add_option("--split-seed", p2.split_seed, "Episode split seed");

  app->add_option("--seed", c.seed, "Phase-1 split and init seed");
  app->add_option("--out", c.output_dir, "Run directory (default: $EEGRL_OUT/<command>)");
  app->add_option("--config", config_path, "JSON config loaded before the flags");
}

void require_dataset(const ExperimentConfig& c) {
  if (c.data.synthetic) return;
  if (c.data.path.empty()) throw UsageError("a dataset is required: pass --data PATH or --synthetic");
  if (!std::filesystem::exists(c.data.path)) throw UsageError("dataset path '" + c.data.path + "' does not exist");
}

std::optional<std::string> find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return std::string(argv[i] + 9);
  }
  return std::nullopt;
}

void print_table(const Table& t) { std::cout << table_tsv(t); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-convolution features and a dueling DQN agent for time-point EEG classification"};
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path;
  try {
    if (auto path = find_config(argc, argv)) cfg = load_config(*path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  auto* gcn = app.add_subcommand("train-gcn", "Phase 1: train the graph classifier and prune its adjacency mask");
  add_experiment_options(gcn, cfg, config_path);

  TrainRlOptions rl_opt;
  std::optional<double> density;
  auto* rl = app.add_subcommand("train-rl", "Phase 2: train the agent on frozen extractor features");
  add_experiment_options(rl, cfg, config_path);
  rl->add_option("--extractor", rl_opt.extractor, "Extractor checkpoint or train-gcn run directory");
  rl->add_option("--density", density, "Use the trained level with this density (needs a run directory)");
  rl->add_flag("--sweep", rl_opt.sweep, "Run the r_right, r_wrong and horizon sweeps and pick optima on validation");

  std::string eval_run, eval_out;
  auto* ev = app.add_subcommand("evaluate", "Re-evaluate the agents of a train-rl run on their test split");
  ev->add_option("--run", eval_run, "train-rl run directory")->required();
  ev->add_option("--out", eval_out, "Output directory (default: <run>/evaluate)");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Merge metric tables and add Mean/Std rows");
  rep->add_option("inputs", report_inputs, "metrics.tsv files or directories to search")->required();
  rep->add_option("--out", report_out, "Directory for report.tsv and report.json");

  SyntheticSpec synth;
  std::string synth_out;
  auto* syn = app.add_subcommand("synth-gen", "Write a synthetic recording in the plain matrix format");
  add_synthetic_options(syn, synth);
  syn->add_option("--out", synth_out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  RateLimitedWarnings warnings(std::cerr);
  const Progress progress = [](const std::string& m) { std::cerr << m << '\n'; };
  try {
    if (gcn->parsed()) {
      require_dataset(cfg);
      const auto manifest = cmd_train_gcn(cfg, progress);
      std::cout << manifest.dump(2) << '\n';
    } else if (rl->parsed()) {
      require_dataset(cfg);
      rl_opt.density = density;
      if (rl_opt.extractor.empty()) rl_opt.extractor = (std::filesystem::path(default_output_root()) / "train-gcn").string();
      print_table(cmd_train_rl(cfg, rl_opt, progress));
    } else if (ev->parsed()) {
      print_table(cmd_evaluate(eval_run, eval_out));
    } else if (rep->parsed()) {
      print_table(cmd_report(report_inputs, report_out));
    } else if (syn->parsed()) {
      cmd_synth_gen(synth, synth_out);
      std::cerr << "wrote " << synth_out << '\n';
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n";
    std::cerr << (gcn->parsed() ? gcn : rl)->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
