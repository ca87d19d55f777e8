#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <unistd.h>

#include "eegrl/eegrl.hpp"
#include "eegrl/gradcheck.hpp"
#include "oracles.hpp"

using namespace eegrl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
  std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << name << ": " << o.detail
            << fmt(" (%.1f s)", seconds) << std::endl;
  if (!o.pass) ++failures;
}

template <class F>
void run(int id, const std::string& name, F&& f) {
  Timer t;
  Outcome o;
  try {
    o = f(t);
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, o, t.seconds());
}

double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

// ---------------------------------------------------------------------------------------

Outcome spectral_oracle(const Timer& t) {
  Rng rng(20240601);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 5;
    const std::size_t order = 1 + (trial / 5) % 5;
    const std::size_t cin = 1 + trial % 3, cout = 1 + (trial / 3) % 3;
    ChebLayerWeights w(cin, cout, order, rng);
    auto x = oracle::random_matrix(n, cin, rng);
    auto l = normalized_laplacian(oracle::random_symmetric_graph(n, rng)).matrix;
    const auto y = cheb_conv(x, scale_laplacian(l), w);
    worst = std::max(worst, max_abs_diff(y, oracle::dense_spectral_conv(x, l, w)));
  }
  const double secs = t.seconds();
  return {worst <= 1e-8 && secs < 10.0, fmt("max abs diff %.2e over 200 graphs (n<=6, K<=5), limit 1e-8 and 10 s", worst)};
}

double cheb_gradient(int seed) {
  Rng rng(100 + seed);
  const std::size_t n = 3 + seed % 4, batch = 2, cin = 2, cout = 3, order = 1 + seed % 5;
  BaseAdjacency base(n);
  AdjacencyMask mask(base);
  std::uniform_real_distribution<double> mv(0.3, 1.5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) mask.values().at(i, j) = mv(rng);
  ChebLayerWeights w(cin, cout, order, rng);
  auto x = oracle::random_matrix(n * batch, cin, rng);
  auto probe = oracle::random_matrix(n * batch, cout, rng);
  auto loss = [&] {
    auto g = build_graph(base, mask);
    return weighted_sum(cheb_conv_batch(x, batch, g.scaled.matrix, w), probe);
  };
  auto g = build_graph(base, mask);
  ChebCache cache;
  cheb_conv_batch(x, batch, g.scaled.matrix, w, &cache);
  w.theta.zero_grad();
  mask.values().zero_grad();
  x.zero_grad();
  Tensor dlt;
  auto dx = cheb_conv_backward(cache, g.scaled.matrix, w, probe, &dlt);
  std::copy(dx.data().begin(), dx.data().end(), x.grad().begin());
  graph_backward(base, mask, g, dlt);
  Tensor* params[] = {&w.theta, &x, &mask.values()};
  return finite_diff_check(loss, params, 1e-6);
}

double batchnorm_gradient() {
  Rng rng(4);
  BatchNorm bn(3);
  for (double& g : bn.gamma.data()) g = 0.5 + std::uniform_real_distribution<>(0, 1)(rng);
  for (double& b : bn.beta.data()) b = std::uniform_real_distribution<>(-1, 1)(rng);
  auto x = oracle::random_matrix(6, 3, rng);
  auto w = oracle::random_matrix(6, 3, rng);
  auto loss = [&] {
    BatchNorm copy = bn;
    BatchNorm::Cache c;
    return weighted_sum(copy.forward_train(x, c), w);
  };
  BatchNorm::Cache cache;
  BatchNorm work = bn;
  work.forward_train(x, cache);
  bn.zero_grad();
  x.zero_grad();
  auto dx = bn.backward(cache, w);
  std::copy(dx.data().begin(), dx.data().end(), x.grad().begin());
  Tensor* params[] = {&bn.gamma, &bn.beta, &x};
  return finite_diff_check(loss, params, 1e-6);
}

double fc_gradient() {
  Rng rng(21);
  Linear l1(5, 7, rng), l2(7, 3, rng);
  auto x = oracle::random_matrix(4, 5, rng);
  const std::vector<int> target{2, 0, 1, 2};
  auto loss = [&] { return cross_entropy(l2.forward(relu(l1.forward(x))), target); };
  l1.zero_grad();
  l2.zero_grad();
  auto h = relu(l1.forward(x));
  Tensor dlogits;
  cross_entropy(l2.forward(h), target, &dlogits);
  l1.backward(x, relu_backward(h, l2.backward(h, dlogits)));
  Tensor* params[] = {&l1.weight, &l1.bias, &l2.weight, &l2.bias};
  return finite_diff_check(loss, params, 1e-6);
}

double aggregate_gradient() {
  Rng rng(2);
  Tensor v = oracle::random_matrix(3, 1, rng);
  Tensor a = oracle::random_matrix(3, 5, rng);
  const Tensor w = oracle::random_matrix(3, 5, rng);
  auto f = [&] { return weighted_sum(dueling_aggregate(v, a), w); };
  auto [dv, da] = dueling_aggregate_backward(w);
  v.zero_grad();
  a.zero_grad();
  std::copy(dv.data().begin(), dv.data().end(), v.grad().begin());
  std::copy(da.data().begin(), da.data().end(), a.grad().begin());
  std::vector<Tensor*> params{&v, &a};
  return finite_diff_check(f, params, 1e-6);
}

double dqn_loss_gradient() {
  Rng rng(3);
  std::vector<Episode> eps;
  for (int i = 0; i < 2; ++i) {
    Episode e;
    e.label = i + 1;
    e.states = oracle::random_matrix(3, 6, rng);
    eps.push_back(std::move(e));
  }
  const auto buf = build_buffer(eps, RewardConfig{}, 30, 1);
  DuelingConfig c;
  c.input = 6;
  c.trunk = {8, 10};
  c.head_hidden = 5;
  DuelingNet net(c, rng);
  DuelingNet target = net;
  for (double& w : target.value_head().weight.data()) w += 0.3;
  const auto& batch = buf.batches.front();
  Tensor s = Tensor::matrix(batch.size(), 6);
  std::vector<double> y;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tr = buf.transitions[batch[i]];
    std::copy_n(buf.states.row(tr.state).begin(), 6, s.row(i).begin());
    y.push_back(bellman_target(tr, buf.states, target, 0.99));
  }
  auto loss = [&](Tensor* dq) {
    DuelingNet::Cache cache;
    const auto q = net.forward(s, dq ? &cache : nullptr);
    double l = 0.0;
    if (dq) *dq = Tensor::matrix(q.rows(), 5);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto a = static_cast<std::size_t>(buf.transitions[batch[i]].action);
      const double d = q.at(i, a) - y[i];
      l += d * d;
      if (dq) dq->at(i, a) = 2.0 * d / static_cast<double>(batch.size());
    }
    if (dq) net.backward(cache, *dq);
    return l / static_cast<double>(batch.size());
  };
  net.zero_grad();
  Tensor dq;
  loss(&dq);
  auto params = net.parameters();
  return finite_diff_check([&] { return loss(nullptr); }, params, 1e-6);
}

double gcn_gradient() {
  Rng rng(10);
  GcnConfig c;
  c.nodes = 8;
  c.conv_widths = {1, 4, 6};
  c.order = 3;
  c.fc_widths = {6, 8, 4};
  c.dropout = 0.0;
  GcnModel m(c, rng);
  std::uniform_real_distribution<double> u(0.3, 1.7);
  auto v = m.mask().values().data();
  for (std::size_t k = 0; k < v.size(); ++k)
    if (!m.mask().frozen_flat(k)) v[k] = u(rng);
  auto x = oracle::random_matrix(6, 8, rng);
  const std::vector<int> target{0, 1, 2, 3, 1, 2};
  auto loss = [&] {
    Rng r(0);
    return cross_entropy(m.forward(x, Mode::Train, &r).logits, target, nullptr);
  };
  m.zero_grad();
  Rng r(0);
  Tensor d;
  cross_entropy(m.forward(x, Mode::Train, &r).logits, target, &d);
  m.backward(d);
  auto params = m.parameters();
  return finite_diff_check(loss, params, 1e-6);
}

Outcome gradient_suite(const Timer& t) {
  WarningCapture quiet;
  double cheb = 0.0;
  for (int s = 0; s < 10; ++s) cheb = std::max(cheb, cheb_gradient(s));
  const double bn = batchnorm_gradient(), fc = fc_gradient(), agg = aggregate_gradient(), dqn = dqn_loss_gradient(),
               gcn = gcn_gradient();
  const double worst = std::max({cheb, bn, fc, agg, dqn, gcn});
  const double secs = t.seconds();
  return {worst < 1e-4 && secs < 60.0,
          fmt("max rel err cheb %.1e, batchnorm %.1e, fc %.1e, aggregation %.1e, dqn loss %.1e, gcn %.1e; limit 1e-4 "
              "and 60 s",
              cheb, bn, fc, agg, dqn, gcn)};
}

Outcome pruning_schedule(const Timer& t) {
  Rng rng(7);
  AdjacencyMask m{BaseAdjacency(64)};
  std::normal_distribution<double> g(1.0, 0.5);
  auto randomize = [&] {
    auto v = m.values().data();
    for (std::size_t k = 0; k < v.size(); ++k)
      if (!m.frozen_flat(k)) v[k] = g(rng);
  };
  randomize();
  if (m.live_count() != 4032) return {false, fmt("start has %zu live edges", m.live_count())};
  std::size_t rounds = 0;
  bool monotone = true, ones = true;
  while (m.density() >= 0.1339 && rounds < 100) {
    const auto before = m.frozen_flags();
    m = prune_mask(m, 0.1);
    ++rounds;
    for (std::size_t k = 0; k < before.size(); ++k) {
      if (before[k] && !m.frozen_flat(k)) monotone = false;
      if (!m.frozen_flat(k) && m.values()[k] != 1.0) ones = false;
      if (m.frozen_flat(k) && m.values()[k] != 0.0) ones = false;
    }
    randomize();
  }
  const double secs = t.seconds();
  const bool pass = m.density() < 0.1339 && rounds <= 20 && monotone && ones && secs < 5.0;
  return {pass, fmt("density %.4f after %zu rounds (limit 20), monotone freezing %s, survivors exactly 1 %s",
                    m.density(), rounds, monotone ? "yes" : "no", ones ? "yes" : "no")};
}

Outcome environment_exactness(const Timer&) {
  std::size_t checked = 0, bad = 0;
  for (const RewardConfig cfg : {RewardConfig{}, RewardConfig{20.0, -40.0, -0.1, 40}, RewardConfig{5.0, -30.0, -0.1, 10}}) {
    for (std::size_t t = 0; t < cfg.horizon; ++t)
      for (int y = 1; y <= 4; ++y)
        for (int a = 0; a < 5; ++a) {
          const auto r = step(t, cfg.horizon, a, y, cfg);
          ++checked;
          if (a == kSkip) {
            const bool last = t + 1 == cfg.horizon;
            if (r.reward != cfg.r_skip || r.terminal() != last || (!last && *r.next != t + 1)) ++bad;
          } else if (r.reward != (a == y ? cfg.r_right : cfg.r_wrong) || !r.terminal()) {
            ++bad;
          }
        }
    for (std::size_t t = 0; t < cfg.horizon; ++t)
      for (int y = 1; y <= 4; ++y) {
        double total = 0.0, expected = 0.0;
        std::size_t s = 0;
        for (; s < t; ++s) {
          total += step(s, cfg.horizon, kSkip, y, cfg).reward;
          expected += cfg.r_skip;
        }
        total += step(s, cfg.horizon, y, y, cfg).reward;
        expected += cfg.r_right;
        ++checked;
        if (total != expected || std::abs(total - (static_cast<double>(t) * cfg.r_skip + cfg.r_right)) > 1e-12) ++bad;
      }
  }
  return {bad == 0, fmt("%zu step and scripted-episode checks, %zu mismatches", checked, bad)};
}

Outcome bellman_exactness(const Timer&) {
  const double terminal = bellman_target(10.0, std::nullopt, 0.99);
  const double skip = bellman_target(-0.1, std::vector<double>{1.0, 10.0, 3.0, -2.0, 0.0}, 0.99);
  const bool pass = terminal == 10.0 && skip == -0.1 + 0.99 * 10.0;
  return {pass, fmt("terminal %.17g (want 10), non-terminal %.17g (want -0.1 + 0.99*10 = %.17g)", terminal, skip,
                    -0.1 + 0.99 * 10.0)};
}

// ---------------------------------------------------------------------------------------
// Synthetic end-to-end

ExperimentConfig desk_config(std::size_t trials) {
  ExperimentConfig c;
  c.data.synthetic = true;
  auto& s = c.data.synthetic_spec;
  s.classes = 4;
  s.trials = trials;
  s.clear_fraction = 0.5;
  s.noise_sigma = 0.3;
  s.seed = 11;
  c.phase1.model.conv_widths = {1, 4, 8};
  c.phase1.model.order = 3;
  c.phase1.model.fc_widths = {8, 16, 4};
  c.phase1.glt.hyper.epochs = 4;
  c.phase1.glt.hyper.batch_size = 256;
  c.phase1.point_stride = 8;
  c.phase2.agent.trunk = {32, 32};
  c.phase2.agent.head_hidden = 16;
  c.phase2.trainer.epochs = 20;
  c.phase2.trainer.lr = 1e-3;
  c.seed = 3;
  return c;
}

struct SyntheticRun {
  Phase1Result phase1;
  std::vector<SubjectFeatures> features;
  ExperimentConfig cfg;
};

SyntheticRun& synthetic_run() {
  static SyntheticRun run = [] {
    SyntheticRun r;
    r.cfg = desk_config(200);
    WarningCapture quiet;
    const Dataset data = load_dataset(r.cfg.data);
    r.phase1 = run_phase1(r.cfg, data);
    r.features = extract_subject_features(*r.phase1.schedule.extractor, data.trials);
    return r;
  }();
  return run;
}

Outcome end_to_end(const Timer& t) {
  auto& run = synthetic_run();
  const double clear_acc = run.phase1.val_clear_accuracy.value_or(0.0);
  WarningCapture quiet;
  const RlResult rl = run_rl(run.features.front().trials, run.cfg.phase2, run.cfg.phase2.reward, 0);
  double heavy = 0.0, light = 0.0;
  std::size_t n_heavy = 0, n_light = 0;
  for (std::size_t i = 0; i < rl.test_outcomes.size(); ++i) {
    const double share = rl.test_ambiguity[i];
    const auto time = static_cast<double>(rl.test_outcomes[i].time);
    if (share > 0.5) {
      heavy += time;
      ++n_heavy;
    } else if (share < 0.5) {
      light += time;
      ++n_light;
    }
  }
  const double t_heavy = n_heavy ? heavy / static_cast<double>(n_heavy) : 0.0;
  const double t_light = n_light ? light / static_cast<double>(n_light) : 0.0;
  const double gain = 100.0 * (rl.test.accuracy - rl.baseline.accuracy);
  const bool a = clear_acc >= 0.95;
  const bool b = gain >= 10.0;
  const bool c = n_heavy > 0 && n_light > 0 && t_heavy > t_light;
  const double secs = t.seconds();
  return {a && b && c && secs < 900.0,
          fmt("(a) clear-point val acc %.2f%% (>= 95%%) %s; (b) agent %.2f%% vs first-state baseline %.2f%%, +%.2f "
              "points (>= 10) %s; (c) mean time ambiguous-heavy %.2f (%zu eps) vs clear %.2f (%zu eps) %s; extractor "
              "density %.4f",
              100.0 * clear_acc, a ? "ok" : "MISS", 100.0 * rl.test.accuracy, 100.0 * rl.baseline.accuracy, gain,
              b ? "ok" : "MISS", t_heavy, n_heavy, t_light, n_light, c ? "ok" : "MISS",
              run.phase1.schedule.extractor_level()->density)};
}

Outcome reward_sweep(const Timer&) {
  auto& run = synthetic_run();
  WarningCapture quiet;
  std::vector<double> times;
  std::string detail = "mean time by r_wrong:";
  bool pass = true;
  for (double rw : run.cfg.phase2.r_wrong_grid) {
    RewardConfig r = run.cfg.phase2.reward;
    r.r_wrong = rw;
    const RlResult res = run_rl(run.features.front().trials, run.cfg.phase2, r, 0);
    if (!times.empty() && res.test.mean_time < times.back() - 0.2) pass = false;
    times.push_back(res.test.mean_time);
    detail += fmt(" %g -> %.2f (acc %.1f%%)", rw, res.test.mean_time, 100.0 * res.test.accuracy);
  }
  return {pass, detail + "; non-decreasing within 0.2 required"};
}

Outcome determinism(const Timer&) {
  const fs::path root = fs::temp_directory_path() / ("eegrl_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> tables;
  for (int k = 0; k < 2; ++k) {
    ExperimentConfig c = desk_config(40);
    c.phase1.glt.prune_rate = 0.5;
    c.phase1.glt.target_density = 0.2;
    c.phase2.trainer.epochs = 3;
    c.phase2.r_wrong_grid = {-10.0, -20.0};
    c.phase2.r_right_grid = {10.0};
    c.phase2.horizon_grid = {20};
    WarningCapture quiet;
    const auto gcn_dir = root / ("run" + std::to_string(k)) / "train-gcn";
    const auto rl_dir = root / ("run" + std::to_string(k)) / "train-rl";
    c.output_dir = gcn_dir.string();
    cmd_train_gcn(c);
    c.output_dir = rl_dir.string();
    cmd_train_rl(c, {gcn_dir.string(), std::nullopt, true});
    std::string all;
    for (const auto& f : {gcn_dir / "levels.tsv", rl_dir / "metrics.tsv", rl_dir / "sweep_r_wrong.tsv",
                          rl_dir / "sweep_r_right.tsv", rl_dir / "sweep_horizon.tsv"})
      all += read_file_bytes(f.string());
    tables.push_back(all);
  }
  fs::remove_all(root);
  return {tables[0] == tables[1] && !tables[0].empty(),
          fmt("two seeded runs, %zu bytes of metric tables, %s", tables[0].size(),
              tables[0] == tables[1] ? "byte-identical" : "DIFFERENT")};
}

void physionet_optional() {
  const char* dir = std::getenv("EEGRL_PHYSIONET_DIR");
  if (!dir || !*dir) {
    std::cout << "SKIP  [9] real recording end-to-end: set EEGRL_PHYSIONET_DIR to a subject directory (not gating)"
              << std::endl;
    return;
  }
  Timer t;
  try {
    ExperimentConfig c = desk_config(0);
    c.data.synthetic = false;
    c.data.path = dir;
    const fs::path root = fs::temp_directory_path() / ("eegrl_physionet_" + std::to_string(::getpid()));
    c.output_dir = (root / "train-gcn").string();
    RateLimitedWarnings warnings(std::cerr);
    cmd_train_gcn(c);
    c.output_dir = (root / "train-rl").string();
    const Table table = cmd_train_rl(c, {(root / "train-gcn").string(), std::nullopt, false});
    std::cout << "PASS  [9] real recording end-to-end (not gating): " << table_tsv(table).substr(0, 400)
              << fmt(" (%.1f s)", t.seconds()) << std::endl;
  } catch (const std::exception& e) {
    std::cout << "FAIL  [9] real recording end-to-end (not gating): " << e.what() << std::endl;
  }
}

}  // namespace

int main() {
  run(1, "spectral oracle equivalence", spectral_oracle);
  run(2, "gradient suite", gradient_suite);
  run(3, "pruning schedule", pruning_schedule);
  run(4, "environment exactness", environment_exactness);
  run(5, "Bellman targets", bellman_exactness);
  run(6, "end-to-end synthetic run", end_to_end);
  run(7, "reward sweep direction", reward_sweep);
  run(8, "determinism", determinism);
  physionet_optional();
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all criteria passed")
            << std::endl;
  return failures ? 1 : 0;
}
