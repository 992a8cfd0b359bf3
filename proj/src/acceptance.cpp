// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/acceptance.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "vinelab/analysis.hpp"
#include "vinelab/checkpoint.hpp"
#include "vinelab/config.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/harness.hpp"
#include "vinelab/rollout.hpp"

namespace vinelab {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Target for steps-to-target: iteration-0 test accuracy plus this margin.
constexpr double kTargetDelta = 0.04;
constexpr std::uint64_t kTrendSeeds[] = {1, 2, 3};

struct Check {
  bool ok = true;
  std::vector<std::string> notes;

  void require(bool cond, std::string note) {
    ok = ok && cond;
    notes.push_back(fmt::format("{}{}", cond ? "" : "FAIL ", note));
  }
  std::string text() const {
    std::string s;
    for (const auto& n : notes) s += (s.empty() ? "" : "; ") + n;
    return s;
  }
};

double mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

std::vector<double> gaussian_params(std::size_t n, double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> out(n);
  for (auto& x : out) x = normal(rng);
  return out;
}

std::vector<double> perturbed(std::span<const double> base, double scale, std::uint64_t seed) {
  auto noise = gaussian_params(base.size(), scale, seed);
  for (std::size_t i = 0; i < base.size(); ++i) noise[i] += base[i];
  return noise;
}

TokenMdpState state_at(const Trajectory& traj, std::size_t t) {
  TokenMdpState s;
  s.prompt = traj.task.prompt;
  s.generated.assign(traj.actions.begin(), traj.actions.begin() + static_cast<std::ptrdiff_t>(t));
  return s;
}

// Fourth-order central difference.
double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h);
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // both sides below the noise floor
  double worst = 0.0;
};

// Compares `analytic` with finite differences of `loss` on random coordinates
// until `count` coordinates with a non-negligible derivative have been seen.
GradCheck check_gradient(std::span<const double> params, std::span<const double> analytic,
                         const std::function<double(const std::vector<double>&)>& loss,
                         std::size_t count, std::uint64_t seed) {
  constexpr double kFloor = 1e-6;
  constexpr double kStep = 1e-4;
  GradCheck out;
  Rng rng(seed);
  std::vector<double> p(params.begin(), params.end());
  while (out.checked < count && out.checked + out.skipped < 50 * count) {
    const auto i = static_cast<std::size_t>(uniform_index(rng, p.size()));
    const double x0 = p[i];
    const double numeric = central_difference(
        [&](double x) {
          p[i] = x;
          const double v = loss(p);
          p[i] = x0;
          return v;
        },
        x0, kStep);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale < kFloor) {
      ++out.skipped;
      continue;
    }
    out.worst = std::max(out.worst, std::abs(numeric - analytic[i]) / scale);
    ++out.checked;
  }
  return out;
}

Environment tiny_env() { return Environment(EnvConfig::tiny()); }

PolicySnapshot tiny_tabular(const Environment& env, double scale, std::uint64_t seed) {
  const auto tasks = enumerate_tasks(env.config().difficulty);
  auto p = PolicySnapshot::tabular(env.vocab(), 16, enumerate_contexts(env, tasks, 16));
  return p.with_params(gaussian_params(p.num_params(), scale, seed));
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness.

Check gradient_correctness() {
  Check c;
  const Environment env(EnvConfig::default_env());
  const auto base = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{8, 24}, 11, 0.4);
  const auto tasks = generate_tasks(env, 12, 16);
  Rng rng(13);
  constexpr double kT = 0.6;

  {
    const Trajectory traj = sample_trajectory(env, base, tasks[0], 1.0, rng);
    const std::size_t t = traj.length() / 2;
    const TokenMdpState s = state_at(traj, t);
    const Token a = traj.actions[t];
    const auto g = grad_log_prob(base, s, a, kT);
    const auto r = check_gradient(
        base.params(), g,
        [&](const std::vector<double>& p) { return log_prob(base.with_params(p), s, a, kT); }, 64,
        14);
    c.require(r.checked >= 64 && r.worst < 1e-5,
              fmt::format("log_prob {} coords max rel {:.2e}", r.checked, r.worst));
  }

  {
    // Ratios must stay clear of the clip edges for the loss to be smooth.
    constexpr double kClip = 0.2;
    const PolicySnapshot old_policy = base;
    const PolicySnapshot ref = base.with_params(perturbed(base.params(), 0.05, 15));
    std::vector<Trajectory> trajs;
    std::vector<AdvantageRecord> advs;
    for (int i = 0; i < 6; ++i) {
      trajs.push_back(sample_trajectory(env, old_policy, tasks[static_cast<std::size_t>(i)], kT, rng));
      AdvantageRecord a;
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t t = 0; t < trajs.back().length(); ++t) a.advantages.push_back(normal(rng));
      advs.push_back(a);
    }
    PolicySnapshot policy = base;
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt == 50) throw ContractViolation("no smooth PPO test point found");
      policy = base.with_params(perturbed(base.params(), 0.08, derive_seed(16, {attempt})));
      bool smooth = true;
      std::size_t clipped = 0;
      for (const auto& tr : trajs)
        for (std::size_t t = 0; t < tr.length(); ++t) {
          const auto s = state_at(tr, t);
          const double rho =
              std::exp(log_prob(policy, s, tr.actions[t], kT) - log_prob(old_policy, s, tr.actions[t], kT));
          smooth = smooth && std::abs(rho - (1 + kClip)) > 1e-3 && std::abs(rho - (1 - kClip)) > 1e-3;
          if (std::abs(rho - 1) > kClip) ++clipped;
        }
      if (smooth && clipped > 0) break;
    }
    const auto lg = ppo_policy_loss(policy, old_policy, ref, trajs, advs, kClip, 0.05, kT);
    const auto r = check_gradient(
        policy.params(), lg.grad,
        [&](const std::vector<double>& p) {
          return ppo_policy_loss(policy.with_params(p), old_policy, ref, trajs, advs, kClip, 0.05, kT)
              .loss;
        },
        64, 17);
    c.require(r.checked >= 64 && r.worst < 1e-5,
              fmt::format("ppo_policy_loss {} coords max rel {:.2e}", r.checked, r.worst));
  }

  {
    constexpr double kClip = 0.2;
    const ValueNet shell = ValueNet::from_policy(base);
    const ValueNet old_net = shell.with_params(perturbed(shell.params(), 0.1, 18));
    std::vector<ValueTargets> batch;
    for (int i = 0; i < 6; ++i)
      batch.push_back(value_targets(sample_trajectory(env, base, tasks[static_cast<std::size_t>(6 + i)], kT, rng)));
    for (std::size_t i = 0; i < batch.size(); i += 2) batch[i].returns.back() = 1.0;
    ValueNet net = old_net;
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt == 50) throw ContractViolation("no smooth value-loss test point found");
      net = old_net.with_params(perturbed(old_net.params(), 0.03, derive_seed(19, {attempt})));
      bool smooth = true;
      std::size_t outside = 0;
      for (const auto& item : batch)
        for (std::size_t t = 0; t < item.states.size(); ++t) {
          const double v = net.predict(item.states[t]);
          const double v_old = old_net.predict(item.states[t]);
          const double g = item.returns[t];
          const double vc = std::clamp(v, v_old - kClip, v_old + kClip);
          smooth = smooth && std::abs(std::abs(v - v_old) - kClip) > 1e-3;
          if (std::abs(v - v_old) > kClip) {
            ++outside;
            smooth = smooth && std::abs(std::abs(v - g) - std::abs(vc - g)) > 1e-3;
          }
        }
      if (smooth && outside > 0) break;
    }
    const auto lg = value_net_loss(net, old_net, batch, kClip);
    const auto r = check_gradient(
        net.params(), lg.grad,
        [&](const std::vector<double>& p) {
          return value_net_loss(net.with_params(p), old_net, batch, kClip).loss;
        },
        64, 20);
    c.require(r.checked >= 64 && r.worst < 1e-5,
              fmt::format("value_net_loss {} coords max rel {:.2e}", r.checked, r.worst));
  }

  {
    const PolicySnapshot ref = base;
    for (int side = 0; side < 2; ++side) {
      // side 0: chosen log-ratio negative (hinge active); side 1: positive.
      const TaskInstance& task = tasks[static_cast<std::size_t>(12 + side)];
      PreferencePair pair{task, env.reference_solution(task), {}};
      for (;;) {
        Trajectory t = sample_trajectory(env, ref, task, 1.0, rng);
        if (t.total_return() == 0.0) {
          pair.rejected = t.actions;
          break;
        }
      }
      PolicySnapshot policy = ref;
      for (std::uint64_t attempt = 0;; ++attempt) {
        if (attempt == 200) throw ContractViolation("no smooth DPO test point found");
        policy = ref.with_params(perturbed(ref.params(), 0.05, derive_seed(21, {attempt})));
        const double dw = sequence_log_prob(policy, task, pair.chosen) -
                          sequence_log_prob(ref, task, pair.chosen);
        if ((side == 0 ? -dw : dw) > 1e-3) break;
      }
      const auto lg = dpo_positive_loss(policy, ref, pair, 0.1, 5.0);
      const auto r = check_gradient(
          policy.params(), lg.grad,
          [&](const std::vector<double>& p) {
            return dpo_positive_loss(policy.with_params(p), ref, pair, 0.1, 5.0).loss;
          },
          64, 22 + static_cast<std::uint64_t>(side));
      c.require(r.checked >= 64 && r.worst < 1e-5,
                fmt::format("dpo_positive_loss ({}) {} coords max rel {:.2e}",
                            side == 0 ? "hinge on" : "hinge off", r.checked, r.worst));
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// 2. MC value unbiasedness.

Check mc_unbiasedness() {
  Check c;
  const Environment env = tiny_env();
  const auto tasks = enumerate_tasks(env.config().difficulty);
  const auto policy = PolicySnapshot::mlp(env.vocab(), 6, MlpShape{8, 16}, 31, 0.8);
  Rng rng(32);
  constexpr int kSeeds = 200;
  constexpr int kStates = 20;
  int within = 0, total = 0;
  double worst = 0.0, worst_oracle = 0.0;
  for (int i = 0; i < kStates; ++i) {
    const TaskInstance& task = tasks[uniform_index(rng, tasks.size())];
    TokenMdpState state;
    // Half the states sit on the reference solution, where values are large.
    if (i % 2 == 0) {
      const auto sol = env.reference_solution(task);
      const auto t = uniform_index(rng, sol.size());
      state = TokenMdpState{task.prompt, {sol.begin(), sol.begin() + static_cast<std::ptrdiff_t>(t)}, false};
    } else {
      const Trajectory traj = sample_trajectory(env, policy, task, 1.0, rng);
      state = state_at(traj, uniform_index(rng, traj.length()));
    }
    const double v = exact_value(env, policy, task, state, 1.0).value;
    for (int k : {1, 3, 9}) {
      std::vector<double> est;
      for (int s = 0; s < kSeeds; ++s)
        est.push_back(mc_value(env, policy, task, state, k, 1.0,
                               derive_seed(33, {static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(k),
                                                static_cast<std::uint64_t>(s)}))
                          .value);
      const double m = mean(est);
      // Standard error of the seed average; when every seed agrees it is zero
      // and the Bernoulli standard error of the exact value stands in.
      const double oracle_se = std::sqrt(v * (1 - v) / (kSeeds * k));
      double se = sample_std(est) / std::sqrt(static_cast<double>(kSeeds));
      if (se == 0.0) se = oracle_se;
      const double z = se > 0 ? std::abs(m - v) / se : (m == v ? 0.0 : INFINITY);
      worst = std::max(worst, z);
      if (oracle_se > 0) worst_oracle = std::max(worst_oracle, std::abs(m - v) / oracle_se);
      ++total;
      if (z < 3.0) ++within;
    }
  }
  c.require(within == total,
            fmt::format("{}/{} (state, K) within 3 SE over {} seeds, worst {:.2f} SE ({:.2f} with the "
                        "Bernoulli SE of the exact value)",
                        within, total, kSeeds, worst, worst_oracle));
  return c;
}

// ---------------------------------------------------------------------------
// 3. Policy-gradient unbiasedness.

double tiny_objective(const Environment& env, const PolicySnapshot& policy,
                      std::span<const TaskInstance> tasks) {
  double j = 0.0;
  for (const auto& t : tasks) j += exact_value(env, policy, t, env.initial_state(t), 1.0).value;
  return j / static_cast<double>(tasks.size());
}

Check gradient_unbiasedness() {
  Check c;
  const Environment env = tiny_env();
  const auto tasks = enumerate_tasks(env.config().difficulty);
  const PolicySnapshot policy = tiny_tabular(env, 1.0, 41);
  const std::size_t n = policy.num_params();
  // Parameters of rarely visited contexts are non-zero in few batches; the
  // standard error needs many batches before it can be trusted there.
  constexpr int kSeeds = 20000;
  constexpr int kBatch = 16;

  std::vector<double> sum(n, 0.0), sum_sq(n, 0.0);
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(derive_seed(42, {static_cast<std::uint64_t>(s)}));
    std::vector<Trajectory> trajs;
    std::vector<AdvantageRecord> advs;
    for (int b = 0; b < kBatch; ++b) {
      const TaskInstance& task = tasks[uniform_index(rng, tasks.size())];
      trajs.push_back(sample_trajectory(env, policy, task, 1.0, rng));
      advs.push_back(mc_advantages(env, policy, trajs.back(),
                                   segment_steps(trajs.back(), env.vocab().sep()), 1, 1.0, rng()));
    }
    const auto lg = ppo_policy_loss(policy, policy, policy, trajs, advs, 0.2, 0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = -lg.grad[i];
      sum[i] += g;
      sum_sq[i] += g * g;
    }
  }

  // Coordinates carrying real signal: the exact gradient is computed for all
  // parameters by differencing the enumerated objective.
  std::vector<double> p(policy.params().begin(), policy.params().end());
  auto objective = [&](std::size_t i) {
    return [&, i](double x) {
      const double x0 = p[i];
      p[i] = x;
      const double v = tiny_objective(env, policy.with_params(p), tasks);
      p[i] = x0;
      return v;
    };
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng pick(43);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(pick, i)]);
  int within = 0, checked = 0;
  double worst = 0.0;
  for (std::size_t idx : order) {
    if (checked == 64) break;
    const double truth = central_difference(objective(idx), p[idx], 1e-4);
    if (std::abs(truth) < 1e-4) continue;
    const double m = sum[idx] / kSeeds;
    const double var = std::max(0.0, sum_sq[idx] / kSeeds - m * m) * kSeeds / (kSeeds - 1);
    const double se = std::sqrt(var / kSeeds);
    const double z = std::abs(m - truth) / se;
    worst = std::max(worst, z);
    ++checked;
    if (z < 3.0) ++within;
  }
  c.require(checked == 64 && within == checked,
            fmt::format("{}/{} coordinates within 3 SE over {} batches, worst {:.2f} SE", within,
                        checked, kSeeds, worst));
  return c;
}

// ---------------------------------------------------------------------------
// 4. GAE identities.

Check gae_identities() {
  Check c;
  Rng rng(51);
  bool lambda1 = true, lambda0 = true;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t len = 1 + uniform_index(rng, 20);
    std::vector<double> rewards(len), values(len);
    // Dyadic values keep every sum exact in binary floating point.
    for (std::size_t t = 0; t < len; ++t) {
      rewards[t] = static_cast<double>(uniform_index(rng, 3));
      values[t] = static_cast<double>(uniform_index(rng, 2049)) / 1024.0 - 1.0;
    }
    const auto a1 = gae(rewards, values, 1.0, 1.0);
    const auto a0 = gae(rewards, values, 0.0, 1.0);
    double g = 0.0;
    for (std::size_t t = len; t-- > 0;) {
      g += rewards[t];
      lambda1 = lambda1 && a1[t] == g - values[t];
      const double next = t + 1 < len ? values[t + 1] : 0.0;
      lambda0 = lambda0 && a0[t] == rewards[t] + next - values[t];
    }
  }
  c.require(lambda1, "lambda=1 equals G_t - V(s_t) exactly");
  c.require(lambda0, "lambda=0 equals delta_t exactly");

  const Environment env = tiny_env();
  const auto tasks = enumerate_tasks(env.config().difficulty);
  const auto policy = PolicySnapshot::mlp(env.vocab(), 6, MlpShape{8, 16}, 52, 0.8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Trajectory traj =
        sample_trajectory(env, policy, tasks[uniform_index(rng, tasks.size())], 1.0, rng);
    const auto seg = segment_steps(traj, env.vocab().sep());
    std::vector<double> bv;
    for (const auto& st : seg.steps)
      bv.push_back(exact_value(env, policy, traj.task, state_at(traj, st.begin), 1.0).value);
    const auto rec = step_advantages(traj, seg, bv);
    double sum = 0.0;
    for (const auto& st : seg.steps) sum += rec.advantages[st.begin];
    worst = std::max(worst, std::abs(sum - (traj.total_return() - bv.front())));
  }
  c.require(worst <= 1e-9, fmt::format("step advantages telescope to R - V(s0), max error {:.1e}", worst));
  return c;
}

// ---------------------------------------------------------------------------
// 5. KL estimator.

Check kl_estimator() {
  Check c;
  const Environment env(EnvConfig::default_env());
  const auto ref = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{8, 32}, 61, 0.3);
  const auto policy = ref.with_params(perturbed(ref.params(), 0.15, 62));
  const auto tasks = generate_tasks(env, 63, 512);
  Rng rng(64);
  constexpr std::size_t kSamples = 1'000'000;
  std::size_t n = 0, negative = 0;
  double sum_diff = 0.0, sum_diff_sq = 0.0, sum_hat = 0.0, sum_exact = 0.0;
  while (n < kSamples) {
    const Trajectory traj = sample_trajectory(env, policy, tasks[n % tasks.size()], 1.0, rng);
    TokenMdpState s = env.initial_state(traj.task);
    for (std::size_t t = 0; t < traj.length() && n < kSamples; ++t, ++n) {
      const double hat = kl_hat(policy, ref, s, traj.actions[t]);
      const double exact = exact_kl(policy, ref, s);
      if (hat < 0.0) ++negative;
      sum_hat += hat;
      sum_exact += exact;
      sum_diff += hat - exact;
      sum_diff_sq += (hat - exact) * (hat - exact);
      s.generated.push_back(traj.actions[t]);
    }
  }
  const double m = sum_diff / n;
  const double sigma = std::sqrt((sum_diff_sq / n - m * m) / n);
  c.require(negative == 0, fmt::format("kl_hat >= 0 on {} samples", n));
  c.require(std::abs(m) < 3 * sigma,
            fmt::format("mean kl_hat {:.6f} vs exact {:.6f} ({:.2f} sigma)", sum_hat / n,
                        sum_exact / n, std::abs(m) / sigma));
  return c;
}

// ---------------------------------------------------------------------------
// Trend runs.

struct Runs {
  std::map<std::string, std::vector<RunRecord>> by_preset;
};

json comparable(const ExperimentConfig& config, std::uint64_t seed) {
  ExperimentConfig c = config;
  c.ppo.seed = c.restem.seed = c.dpo.seed = seed;
  json j = to_json(c);
  j.erase("workers");
  for (const char* k : {"ppo", "restem", "dpo"}) j[k].erase("workers");
  return j;
}

RunRecord ensure_run(const ExperimentConfig& config, std::uint64_t seed,
                     const AcceptanceOptions& options, std::ostream& log) {
  const fs::path dir = run_directory(config, seed);
  if (options.reuse_runs && fs::exists(dir / "summary.json")) {
    RunRecord r = load_run(dir);
    if (r.finished && comparable(r.config, seed) == comparable(config, seed)) {
      log << fmt::format("  reusing {}\n", dir.string());
      return r;
    }
  }
  log << fmt::format("  running {} seed {}\n", config.name, seed) << std::flush;
  std::ostringstream run_log;
  const int code = run_experiment(config, seed, false, run_log);
  if (code != kExitOk)
    throw std::runtime_error(fmt::format("{} seed {} failed (exit {}): {}", config.name, seed, code,
                                         run_log.str()));
  return load_run(dir);
}

ExperimentConfig trend_config(std::string_view preset_name, const AcceptanceOptions& options) {
  ExperimentConfig c = preset(preset_name);
  c.output_dir = (options.work_dir / "runs").string();
  c.workers = options.workers;
  return c;
}

class TrendData {
 public:
  TrendData(const AcceptanceOptions& options, std::ostream& log) : options_(options), log_(log) {}

  const std::vector<RunRecord>& get(std::string_view preset_name) {
    auto it = runs_.find(std::string(preset_name));
    if (it != runs_.end()) return it->second;
    std::vector<RunRecord> out;
    const ExperimentConfig config = trend_config(preset_name, options_);
    const bool single = config.algorithm == Algorithm::kRestem;
    for (std::uint64_t seed : kTrendSeeds) {
      out.push_back(ensure_run(config, seed, options_, log_));
      if (single) break;
    }
    return runs_.emplace(std::string(preset_name), std::move(out)).first->second;
  }

 private:
  const AcceptanceOptions& options_;
  std::ostream& log_;
  std::map<std::string, std::vector<RunRecord>> runs_;
};

double initial_test_acc(std::span<const RunRecord> runs) {
  std::vector<double> xs;
  for (const auto& r : runs) xs.push_back(r.metrics.front().test_acc);
  return mean(xs);
}

std::vector<double> finals(std::span<const RunRecord> runs) {
  std::vector<double> out;
  for (const auto& r : runs) out.push_back(final_accuracy(r.metrics));
  return out;
}

std::string steps_text(std::optional<long long> s) { return s ? std::to_string(*s) : "never"; }

Check credit_assignment(TrendData& data) {
  Check c;
  const auto& vine = data.get("vineppo_default");
  const auto& ppo = data.get("ppo_default");
  std::vector<RunRecord> both(vine);
  both.insert(both.end(), ppo.begin(), ppo.end());
  const double target = initial_test_acc(both) + kTargetDelta;
  int wins = 0;
  std::string pairs;
  for (std::size_t i = 0; i < vine.size(); ++i) {
    const auto sv = steps_to_target(vine[i].metrics, target);
    const auto sp = steps_to_target(ppo[i].metrics, target);
    if (sv && (!sp || *sv < *sp)) ++wins;
    pairs += fmt::format("{}{}/{}", pairs.empty() ? "" : " ", steps_text(sv), steps_text(sp));
  }
  c.require(wins >= 2, fmt::format("target {:.3f}: VinePPO first in {}/3 seeds (steps vine/ppo: {})",
                                   target, wins, pairs));
  const auto fv = finals(vine), fp = finals(ppo);
  c.require(mean(fv) >= mean(fp), fmt::format("final accuracy VinePPO {:.3f}+-{:.3f} vs PPO {:.3f}+-{:.3f}",
                                              mean(fv), sample_std(fv), mean(fp), sample_std(fp)));
  return c;
}

Check k_ablation(TrendData& data) {
  Check c;
  const auto f9 = finals(data.get("vineppo_default"));
  const auto f3 = finals(data.get("vineppo_k3"));
  const auto f1 = finals(data.get("vineppo_k1"));
  auto ordered = [](std::span<const double> hi, std::span<const double> lo) {
    const double tol = std::max(sample_std(hi), sample_std(lo));
    return mean(hi) >= mean(lo) - tol;
  };
  c.require(ordered(f9, f3), fmt::format("K=9 {:.3f}+-{:.3f} vs K=3 {:.3f}+-{:.3f}", mean(f9),
                                         sample_std(f9), mean(f3), sample_std(f3)));
  c.require(ordered(f3, f1), fmt::format("K=3 {:.3f}+-{:.3f} vs K=1 {:.3f}+-{:.3f}", mean(f3),
                                         sample_std(f3), mean(f1), sample_std(f1)));
  return c;
}

Check kl_efficiency(TrendData& data) {
  Check c;
  const auto& vine = data.get("vineppo_default");
  const auto& ppo = data.get("ppo_default");
  std::vector<std::vector<KlPoint>> cv, cp;
  double lo = 0.0, hi = INFINITY;
  for (const auto* group : {&vine, &ppo})
    for (const auto& r : *group) {
      auto curve = accuracy_vs_kl_curve(r.metrics);
      double a = INFINITY, b = 0.0;
      for (const auto& p : curve) {
        a = std::min(a, p.kl);
        b = std::max(b, p.kl);
      }
      lo = std::max(lo, a);
      hi = std::min(hi, b);
      (group == &vine ? cv : cp).push_back(std::move(curve));
    }
  constexpr int kPoints = 20;
  int ok = 0;
  if (hi > lo) {
    for (int i = 0; i < kPoints; ++i) {
      const double kl = lo + (hi - lo) * i / (kPoints - 1);
      std::vector<double> av, ap;
      for (const auto& curve : cv) av.push_back(accuracy_at_kl(curve, kl));
      for (const auto& curve : cp) ap.push_back(accuracy_at_kl(curve, kl));
      if (mean(av) >= mean(ap) - 0.01) ++ok;
    }
  }
  c.require(ok >= 16, fmt::format("VinePPO >= PPO - 0.01 at {}/{} KL grid points on [{:.4f}, {:.4f}]",
                                  ok, kPoints, lo, hi));
  return c;
}

Check value_analysis(TrendData& data, const AcceptanceOptions& options) {
  Check c;
  const auto& vine = data.get("vineppo_default");
  const auto& ppo = data.get("ppo_default");
  std::map<int, int> seen;
  for (const auto& r : vine)
    for (const auto& v : r.audit.values) seen[v.iteration] |= 1;
  for (const auto& r : ppo)
    for (const auto& v : r.audit.values) seen[v.iteration] |= 2;
  auto matched = [&](int it) { return seen.count(it) && seen.at(it) == 3; };
  std::vector<ValueAuditRecord> mc, net;
  std::vector<TopActionRecord> top_mc, top_net;
  for (const auto& r : vine) {
    for (const auto& v : r.audit.values)
      if (matched(v.iteration)) mc.push_back(v);
    for (const auto& t : r.audit.top_actions)
      if (matched(t.iteration)) top_mc.push_back(t);
  }
  for (const auto& r : ppo) {
    for (const auto& v : r.audit.values)
      if (matched(v.iteration)) net.push_back(v);
    for (const auto& t : r.audit.top_actions)
      if (matched(t.iteration)) top_net.push_back(t);
  }
  if (mc.empty() || net.empty()) {
    c.require(false, "no matched audited iterations");
    return c;
  }
  const double mae_mc = value_mae(mc), mae_net = value_mae(net);
  c.require(mae_mc < mae_net, fmt::format("MAE mc {:.4f} vs net {:.4f} ({} / {} states)", mae_mc,
                                          mae_net, mc.size(), net.size()));
  const double acc_mc = value_accuracy(mc), acc_net = value_accuracy(net);
  c.require(acc_mc > acc_net, fmt::format("0.05-accuracy mc {:.3f} vs net {:.3f}", acc_mc, acc_net));
  const auto s_mc = summarize_top_action(top_mc), s_net = summarize_top_action(top_net);
  c.require(s_mc.informative > 0 && s_mc.accuracy > 0.2 + 3 * s_mc.stderr_chance &&
                s_mc.accuracy > s_net.accuracy,
            fmt::format("top-action mc {:.3f} (n={}, chance bound {:.3f}) vs net {:.3f} (n={})",
                        s_mc.accuracy, s_mc.informative, 0.2 + 3 * s_mc.stderr_chance,
                        s_net.accuracy, s_net.informative));

  // Random estimator on the audited trials, topped up with fresh trials on the
  // reference policy when fewer than 1000 are informative.
  Rng rng(91);
  std::vector<TopActionRecord> random;
  auto rescore = [&](TopActionTrial trial) {
    std::vector<double> pred(trial.candidates.size());
    for (auto& x : pred) x = uniform01(rng);
    const auto t = rescore_trial(trial, pred);
    TopActionRecord rec;
    rec.correct = t.correct;
    rec.informative = t.informative;
    random.push_back(rec);
  };
  std::size_t informative = 0;
  for (const auto* group : {&top_mc, &top_net})
    for (const auto& rec : *group) {
      TopActionTrial t;
      t.truth = rec.truth;
      t.predicted = rec.predicted;
      t.candidates.resize(rec.truth.size());
      rescore(t);
      if (random.back().informative) ++informative;
    }
  if (informative < 1000) {
    const ExperimentConfig config = trend_config("vineppo_default", options);
    const ExperimentTasks tasks = make_tasks(config);
    const PolicySnapshot reference = obtain_reference(config, tasks);
    const Environment env(config.env);
    const StateEstimator zero = [](const TokenMdpState&, std::uint64_t) { return 0.0; };
    for (std::uint64_t i = 0; informative < 1000; ++i) {
      const TaskInstance& task = tasks.splits.train[i % tasks.splits.train.size()];
      const auto base = TokenMdpState{task.prompt, {}, false};
      rescore(top_action_trial(env, reference, task, base, zero, config.ppo.temperature,
                               derive_seed(92, {i})));
      if (random.back().informative) ++informative;
    }
  }
  const auto s_rand = summarize_top_action(random);
  c.require(s_rand.informative >= 1000 && std::abs(s_rand.accuracy - 0.2) <= 3 * s_rand.stderr_chance,
            fmt::format("random estimator {:.3f} over {} informative trials (0.2 +- {:.3f})",
                        s_rand.accuracy, s_rand.informative, 3 * s_rand.stderr_chance));
  return c;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Check baseline_behavior(TrendData& data) {
  Check c;
  {
    const Environment env = tiny_env();
    const auto tasks = enumerate_tasks(env.config().difficulty);
    const auto policy = tiny_tabular(env, 1.0, 101);
    Rng rng(102);
    std::vector<Trajectory> samples;
    for (int i = 0; i < 256; ++i)
      samples.push_back(sample_trajectory(env, policy, tasks[static_cast<std::size_t>(i) % tasks.size()], 1.0, rng));
    const auto a = restem_gradient(policy, samples);
    const auto b = reinforce_gradient(policy, samples);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    c.require(worst <= 1e-9, fmt::format("restem vs REINFORCE gradient max diff {:.1e}", worst));
  }
  {
    const Environment env(EnvConfig::default_env());
    const auto ref = PolicySnapshot::mlp(env.vocab(), 16, MlpShape{8, 24}, 103, 0.4);
    const auto tasks = generate_tasks(env, 104, 32);
    Rng rng(105);
    double worst = 0.0;
    for (const auto& task : tasks) {
      const Trajectory t = sample_trajectory(env, ref, task, 1.0, rng);
      const PreferencePair pair{task, env.reference_solution(task), t.actions};
      worst = std::max(worst, std::abs(dpo_positive_loss(ref, ref, pair, 0.1, 5.0).loss - std::log(2.0)));
    }
    c.require(worst <= 1e-12, fmt::format("dpo_positive loss at reference within {:.1e} of log 2", worst));
  }
  {
    const auto& restem = data.get("restem_default").front();
    const auto& vine = data.get("vineppo_default").front();
    // The stopping point is the epoch chosen in the last RestEM iteration.
    const json summary = json::parse(slurp(restem.dir / "summary.json"));
    const int stop_epoch = summary.at("chosen_epochs").back().get<int>();
    const int last_iteration = restem.config.restem.iterations - 1;
    IterationMetrics last = restem.metrics.back();
    std::istringstream points(slurp(restem.dir / "restem_points.jsonl"));
    for (std::string line; std::getline(points, line);) {
      const json p = json::parse(line);
      if (p.at("restem_iteration") == last_iteration && p.at("epoch") == stop_epoch)
        last = restem.metrics.at(p.at("iteration").get<std::size_t>());
    }
    const double restem_gap = last.train_acc - last.test_acc;
    const IterationMetrics* match = &vine.metrics.front();
    for (const auto& m : vine.metrics)
      if (std::abs(m.test_acc - last.test_acc) < std::abs(match->test_acc - last.test_acc)) match = &m;
    const double vine_gap = match->train_acc - match->test_acc;
    c.require(restem_gap > vine_gap,
              fmt::format("train-test gap restem {:.3f} (test {:.3f}) vs VinePPO {:.3f} (test {:.3f}, iteration {})",
                          restem_gap, last.test_acc, vine_gap, match->test_acc, match->iteration));
  }
  return c;
}

// ---------------------------------------------------------------------------
// 11. Determinism and persistence.

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
         });
}

Check determinism(const AcceptanceOptions& options) {
  Check c;
  const fs::path root = options.work_dir / "determinism";
  fs::remove_all(root);
  auto config_in = [&](const char* sub) {
    ExperimentConfig cfg = preset("tiny_vineppo");
    cfg.output_dir = (root / sub).string();
    cfg.workers = 1;
    cfg.checkpoint_every = 5;
    return cfg;
  };
  std::ostringstream sink;
  const auto a = config_in("a"), b = config_in("b");
  if (run_experiment(a, 1, false, sink) != kExitOk || run_experiment(b, 1, false, sink) != kExitOk)
    throw std::runtime_error("tiny run failed: " + sink.str());
  const fs::path da = run_directory(a, 1), db = run_directory(b, 1);
  bool same = true;
  for (const char* f : {"metrics.jsonl", "audit.jsonl", "final.policy", "best.policy", "summary.json"})
    same = same && slurp(da / f) == slurp(db / f);
  c.require(same, "two single-threaded runs byte-identical");

  // Interrupt after half the iterations, then resume.
  auto half = config_in("c");
  half.ppo.iterations = a.ppo.iterations / 2;
  const auto full = config_in("c");
  if (run_experiment(half, 1, false, sink) != kExitOk || run_experiment(full, 1, true, sink) != kExitOk)
    throw std::runtime_error("resumed tiny run failed: " + sink.str());
  const fs::path dc = run_directory(full, 1);
  bool resumed = true;
  for (const char* f : {"metrics.jsonl", "audit.jsonl", "final.policy", "best.policy"})
    resumed = resumed && slurp(da / f) == slurp(dc / f);
  c.require(resumed, "interrupted and resumed run identical to uninterrupted run");

  const PolicySnapshot p = load_policy(da / "final.policy");
  std::stringstream s1;
  write_policy(s1, p);
  const PolicySnapshot q = read_policy(s1);
  const Environment env = tiny_env();
  const auto tab = tiny_tabular(env, 3.0, 111);
  std::stringstream s2;
  write_policy(s2, tab);
  const PolicySnapshot tab2 = read_policy(s2);
  const TrainerCheckpoint ck = load_trainer_checkpoint(dc / "trainer.state");
  std::stringstream s3, s4;
  write_trainer_checkpoint(s3, ck);
  const TrainerCheckpoint ck2 = read_trainer_checkpoint(s3);
  write_trainer_checkpoint(s4, ck2);
  const bool exact = same_bits(p.params(), q.params()) && same_bits(tab.params(), tab2.params()) &&
                     same_bits(ck.policy.params(), ck2.policy.params()) &&
                     same_bits(ck.policy_opt.m, ck2.policy_opt.m) &&
                     same_bits(ck.policy_opt.v, ck2.policy_opt.v) && s3.str() == s4.str();
  c.require(exact, "policy and trainer checkpoints round-trip bit-exactly");
  return c;
}

}  // namespace

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, std::ostream& log) {
  fs::create_directories(options.work_dir);
  TrendData data(options, log);
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"MC value unbiasedness", mc_unbiasedness},
      {"policy-gradient unbiasedness", gradient_unbiasedness},
      {"GAE identities", gae_identities},
      {"KL estimator", kl_estimator},
      {"credit assignment trend", [&] { return credit_assignment(data); }},
      {"K ablation trend", [&] { return k_ablation(data); }},
      {"KL efficiency trend", [&] { return kl_efficiency(data); }},
      {"value analysis", [&] { return value_analysis(data, options); }},
      {"baseline behavior", [&] { return baseline_behavior(data); }},
      {"determinism and persistence", [&] { return determinism(options); }},
  };
  std::vector<CriterionResult> results;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), id) == options.only.end())
      continue;
    log << fmt::format("criterion {}: {}\n", id, criteria[i].first) << std::flush;
    const auto start = std::chrono::steady_clock::now();
    CriterionResult r{id, criteria[i].first, false, "", 0.0};
    try {
      const Check check = criteria[i].second();
      r.passed = check.ok;
      r.detail = check.text();
    } catch (const std::exception& e) {
      r.detail = fmt::format("error: {}", e.what());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << fmt::format("  {} ({:.1f} s): {}\n", r.passed ? "pass" : "FAIL", r.seconds, r.detail)
        << std::flush;
    results.push_back(std::move(r));
  }
  return results;
}

void print_acceptance_table(const std::vector<CriterionResult>& results, std::ostream& out) {
  for (const auto& r : results)
    out << fmt::format("[{}] {:2d} {}: {} ({:.1f} s)\n", r.passed ? "PASS" : "FAIL", r.id, r.title,
                       r.detail, r.seconds);
  const auto passed = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.passed; });
  out << fmt::format("{}/{} criteria passed\n", passed, results.size());
}

}  // namespace vinelab
