// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/harness.hpp"

#include <fmt/format.h>
#include <sys/utsname.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "vinelab/analysis.hpp"
#include "vinelab/checkpoint.hpp"
#include "vinelab/errors.hpp"
#include "vinelab/rollout.hpp"

#ifndef VINELAB_VERSION
#define VINELAB_VERSION "0.0.0"
#endif
#ifndef VINELAB_GIT_REV
#define VINELAB_GIT_REV "unknown"
#endif

namespace vinelab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string code_version() { return fmt::format("{}+{}", VINELAB_VERSION, VINELAB_GIT_REV); }

std::string environment_fingerprint() {
  json j;
  j["compiler"] = __VERSION__;
  j["cplusplus"] = __cplusplus;
#ifdef NDEBUG
  j["assertions"] = false;
#else
  j["assertions"] = true;
#endif
  utsname u{};
  if (uname(&u) == 0) {
    j["os"] = u.sysname;
    j["release"] = u.release;
    j["machine"] = u.machine;
  }
  j["hardware_threads"] = std::thread::hardware_concurrency();
  return j.dump();
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write {}", tmp.string()));
    out << text;
    if (!out) throw FormatError(fmt::format("write to {} failed", tmp.string()));
  }
  fs::rename(tmp, path);
}

std::string hex64(std::uint64_t x) { return fmt::format("{:016x}", x); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
}

// Keeps only JSONL lines whose "iteration" is below `limit`.
void truncate_jsonl(const fs::path& path, int limit) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("iteration")) continue;
    if (j["iteration"].get<int>() < limit) kept += line + "\n";
  }
  in.close();
  write_text(path, kept);
}

class FileObserver : public RunObserver {
 public:
  FileObserver(const fs::path& dir, int checkpoint_every, std::ostream& log)
      : dir_(dir),
        every_(checkpoint_every),
        log_(log),
        metrics_(dir / "metrics.jsonl", std::ios::app),
        timing_(dir / "timing.jsonl", std::ios::app),
        audit_(dir / "audit.jsonl", std::ios::app) {
    if (!metrics_ || !timing_ || !audit_)
      throw FormatError(fmt::format("cannot open log files in {}", dir.string()));
  }

  void on_metrics(const IterationMetrics& m, double wall_ms) override {
    metrics_ << to_json_line(m) << '\n' << std::flush;
    timing_ << json{{"iteration", m.iteration}, {"wall_ms", wall_ms}}.dump() << '\n' << std::flush;
    log_ << fmt::format("iter {:4d}  steps {:6d}  test {:.3f}  greedy {:.3f}  val {:.3f}  kl {:.4f}  ({:.0f} ms)\n",
                        m.iteration, m.gradient_steps, m.test_acc, m.test_acc_greedy, m.val_acc,
                        m.exact_kl, wall_ms)
         << std::flush;
  }
  void on_value_audit(std::span<const ValueAuditRecord> records) override {
    for (const auto& r : records) audit_ << to_json_line(r) << '\n';
    audit_.flush();
  }
  void on_top_action(std::span<const TopActionRecord> records) override {
    for (const auto& r : records) audit_ << to_json_line(r) << '\n';
    audit_.flush();
  }
  void on_checkpoint(const TrainerCheckpoint& ck) override {
    if (ck.next_iteration % every_ == 0) save_trainer_checkpoint(dir_ / "trainer.state", ck);
  }

 private:
  fs::path dir_;
  int every_;
  std::ostream& log_;
  std::ofstream metrics_, timing_, audit_;
};

void write_error(const fs::path& dir, std::string_view type, std::string_view message) {
  try {
    write_text(dir / "error.json", json{{"type", type}, {"message", message}}.dump() + "\n");
  } catch (...) {
  }
}

ExperimentConfig config_for_seed(const ExperimentConfig& config, std::uint64_t seed) {
  ExperimentConfig c = config;
  c.ppo.seed = seed;
  c.ppo.workers = config.workers;
  c.restem.seed = seed;
  c.restem.workers = config.workers;
  c.restem.eval_rounds = config.restem.eval_rounds;
  c.dpo.seed = seed;
  c.dpo.workers = config.workers;
  return c;
}

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

}  // namespace

ExperimentTasks make_tasks(const ExperimentConfig& config) {
  const Environment env(config.env);
  const std::uint64_t s = config.tasks.seed;
  ExperimentTasks t;
  t.sft = generate_tasks(env, derive_seed(s, {1}), config.tasks.sft);
  t.splits.train = generate_tasks(env, derive_seed(s, {2}), config.tasks.train);
  t.splits.validation = generate_tasks(env, derive_seed(s, {3}), config.tasks.validation);
  t.splits.test = generate_tasks(env, derive_seed(s, {4}), config.tasks.test);
  return t;
}

namespace {

PolicySnapshot initial_policy(const ExperimentConfig& config, const ExperimentTasks& tasks) {
  const Environment env(config.env);
  if (config.model.architecture == Architecture::kMlp)
    return PolicySnapshot::mlp(env.vocab(), config.model.window, config.model.shape,
                               config.model.init_seed, config.model.init_scale);
  std::vector<TaskInstance> all = tasks.sft;
  for (const auto* split : {&tasks.splits.train, &tasks.splits.validation, &tasks.splits.test})
    all.insert(all.end(), split->begin(), split->end());
  return PolicySnapshot::tabular(env.vocab(), config.model.window,
                                 enumerate_contexts(env, all, config.model.window));
}

std::string reference_key(const ExperimentConfig& config) {
  const json j = to_json(config);
  const json key{{"env", j["env"]},
                 {"model", j["model"]},
                 {"sft", j["sft"]},
                 {"tasks", {{"sft", config.tasks.sft}, {"seed", config.tasks.seed}}}};
  return hex64(fnv1a(key.dump()));
}

}  // namespace

PolicySnapshot obtain_reference(const ExperimentConfig& config, const ExperimentTasks& tasks,
                                std::ostream* log) {
  if (!config.reference_checkpoint.empty()) return load_policy(config.reference_checkpoint);
  const fs::path cache = fs::path(config.output_dir) / "_reference" / (reference_key(config) + ".policy");
  if (fs::exists(cache)) {
    if (log) *log << "reference policy: " << cache.string() << " (cached)\n";
    return load_policy(cache);
  }
  if (log) *log << fmt::format("training reference policy ({} sft epochs on {} tasks)\n",
                               config.sft.epochs, tasks.sft.size());
  const Environment env(config.env);
  const SftResult r = sft_pretrain(env, initial_policy(config, tasks), tasks.sft, config.sft,
                                   tasks.splits.validation);
  if (log) *log << fmt::format("reference policy: greedy validation accuracy {:.3f}\n",
                               r.heldout_greedy_acc);
  fs::create_directories(cache.parent_path());
  save_policy(cache, r.policy);
  return r.policy;
}

fs::path run_directory(const ExperimentConfig& config, std::uint64_t seed) {
  return fs::path(config.output_dir) / config.name / fmt::format("seed_{}", seed);
}

int run_experiment(const ExperimentConfig& base, std::uint64_t seed, bool resume,
                   std::ostream& log) {
  const fs::path dir = run_directory(base, seed);
  try {
    fs::create_directories(dir);
  } catch (const std::exception& e) {
    log << "error: cannot create " << dir.string() << ": " << e.what() << '\n';
    return kExitFailure;
  }
  try {
    base.validate();
    const ExperimentConfig config = config_for_seed(base, seed);
    fs::remove(dir / "summary.json");
    fs::remove(dir / "error.json");
    json manifest{{"format", "vinelab-run 1"},
                  {"name", config.name},
                  {"algorithm", to_string(config.algorithm)},
                  {"seed", seed},
                  {"code_version", code_version()},
                  {"environment", json::parse(environment_fingerprint())},
                  {"config", to_json(config)}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(dir / "config.json", to_json(config).dump(2) + "\n");

    const ExperimentTasks tasks = make_tasks(config);
    const Environment env(config.env);
    json summary{{"format", "vinelab-summary 1"}};

    if (config.algorithm == Algorithm::kSft) {
      const SftResult r = sft_pretrain(env, initial_policy(config, tasks), tasks.sft, config.sft,
                                       tasks.splits.validation);
      std::string losses;
      for (std::size_t e = 0; e < r.epoch_losses.size(); ++e)
        losses += json{{"epoch", e}, {"loss", r.epoch_losses[e]}}.dump() + "\n";
      write_text(dir / "sft_losses.jsonl", losses);
      IterationMetrics m;
      const double t = config.ppo.eval_temperature;
      m.test_acc = evaluate_accuracy(env, r.policy, tasks.splits.test, t, config.ppo.eval_rounds,
                                     derive_seed(seed, {10}), config.workers);
      m.test_acc_greedy = evaluate_accuracy(env, r.policy, tasks.splits.test, kGreedy, 1, 0, config.workers);
      m.val_acc = evaluate_accuracy(env, r.policy, tasks.splits.validation, t,
                                    config.ppo.eval_rounds, derive_seed(seed, {11}), config.workers);
      write_text(dir / "metrics.jsonl", to_json_line(m) + "\n");
      save_policy(dir / "final.policy", r.policy);
      save_policy(dir / "best.policy", r.policy);
      summary["final_test_acc"] = m.test_acc;
      summary["heldout_greedy_acc"] = r.heldout_greedy_acc;
      summary["policy_hash"] = hex64(parameter_hash(r.policy));
      log << fmt::format("sft: test {:.3f} (greedy {:.3f})\n", m.test_acc, m.test_acc_greedy);
    } else {
      const PolicySnapshot reference = obtain_reference(config, tasks, &log);
      summary["reference_hash"] = hex64(parameter_hash(reference));
      if (config.algorithm == Algorithm::kPpo || config.algorithm == Algorithm::kVineppo) {
        std::optional<TrainerCheckpoint> state;
        if (resume && fs::exists(dir / "trainer.state")) {
          state = load_trainer_checkpoint(dir / "trainer.state");
          log << fmt::format("resuming at iteration {}\n", state->next_iteration);
        }
        const int keep = state ? state->next_iteration : 0;
        for (const char* f : {"metrics.jsonl", "timing.jsonl", "audit.jsonl"}) {
          if (keep == 0)
            write_text(dir / f, "");
          else
            truncate_jsonl(dir / f, keep);
        }
        if (!state) fs::remove(dir / "trainer.state");
        FileObserver observer(dir, config.checkpoint_every, log);
        const ValueSource source = config.algorithm == Algorithm::kPpo ? ValueSource::kValueNet
                                                                       : ValueSource::kMonteCarlo;
        const PpoResult r = run_ppo(env, config.ppo, reference, tasks.splits, source, &observer,
                                    state ? &*state : nullptr);
        save_policy(dir / "final.policy", r.final_policy);
        save_policy(dir / "best.policy", r.best_policy);
        std::ifstream in(dir / "metrics.jsonl");
        const auto metrics = read_metrics(in);
        summary["final_test_acc"] = final_accuracy(metrics);
        summary["best_iteration"] = r.best_iteration;
        summary["gradient_steps"] = metrics.empty() ? 0 : metrics.back().gradient_steps;
        summary["final_kl"] = metrics.empty() ? 0.0 : metrics.back().exact_kl;
        summary["policy_hash"] = hex64(parameter_hash(r.final_policy));
      } else if (config.algorithm == Algorithm::kRestem) {
        const RestemResult r = restem_train(env, reference, tasks.splits, config.restem);
        std::string metrics, points;
        for (std::size_t i = 0; i < r.points.size(); ++i) {
          const RestemPoint& p = r.points[i];
          IterationMetrics m;
          m.iteration = static_cast<int>(i);
          m.gradient_steps = p.gradient_steps;
          m.train_acc = p.train_acc;
          m.test_acc = p.test_acc;
          m.val_acc = p.val_acc;
          metrics += to_json_line(m) + "\n";
          points += json{{"iteration", i}, {"restem_iteration", p.iteration}, {"epoch", p.epoch},
                         {"gradient_steps", p.gradient_steps}, {"train_acc", p.train_acc},
                         {"test_acc", p.test_acc}, {"val_acc", p.val_acc}}
                        .dump() +
                    "\n";
          log << fmt::format("restem it {} epoch {}: train {:.3f} test {:.3f} val {:.3f}\n",
                             p.iteration, p.epoch, p.train_acc, p.test_acc, p.val_acc);
        }
        write_text(dir / "metrics.jsonl", metrics);
        write_text(dir / "restem_points.jsonl", points);
        save_policy(dir / "final.policy", r.policy);
        save_policy(dir / "best.policy", r.policy);
        summary["chosen_epochs"] = r.chosen_epochs;
        std::istringstream in(metrics);
        summary["final_test_acc"] = final_accuracy(read_metrics(in));
        summary["policy_hash"] = hex64(parameter_hash(r.policy));
      } else {
        const DpoResult r = dpo_positive_train(env, reference, tasks.splits, config.dpo);
        std::string metrics;
        for (const auto& m : r.metrics) {
          metrics += to_json_line(m) + "\n";
          log << fmt::format("dpo epoch {}: train {:.3f} test {:.3f} val {:.3f}\n", m.iteration,
                             m.train_acc, m.test_acc, m.val_acc);
        }
        write_text(dir / "metrics.jsonl", metrics);
        save_policy(dir / "final.policy", r.policy);
        save_policy(dir / "best.policy", r.policy);
        summary["pairs"] = r.pairs;
        summary["final_test_acc"] = final_accuracy(r.metrics);
        summary["policy_hash"] = hex64(parameter_hash(r.policy));
      }
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    return kExitOk;
  } catch (const ConfigError& e) {
    write_error(dir, "config", e.what());
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    write_error(dir, "divergence", e.what());
    log << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    write_error(dir, "error", e.what());
    log << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

RunRecord load_run(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(fmt::format("run directory {} does not exist", dir.string()));
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw FormatError(fmt::format("{} has no manifest.json", dir.string()));
  const json manifest = read_json(manifest_path);
  if (manifest.value("format", "") != "vinelab-run 1")
    throw FormatError(fmt::format("{}: unsupported manifest format", manifest_path.string()));
  RunRecord r;
  r.dir = dir;
  r.config = from_json(manifest.at("config"));
  r.seed = manifest.at("seed").get<std::uint64_t>();
  std::ifstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw FormatError(fmt::format("{} has no metrics.jsonl", dir.string()));
  r.metrics = read_metrics(metrics);
  if (std::ifstream audit(dir / "audit.jsonl"); audit) r.audit = read_audit(audit);
  r.finished = fs::exists(dir / "summary.json");
  return r;
}

double final_accuracy(std::span<const IterationMetrics> metrics) {
  if (metrics.empty()) throw ContractViolation("final_accuracy of an empty metric log");
  const IterationMetrics* best = &metrics.front();
  for (const auto& m : metrics)
    if (m.val_acc > best->val_acc) best = &m;
  return best->test_acc;
}

void compare_runs(const std::vector<fs::path>& dirs, const CompareOptions& options,
                  std::ostream& out) {
  if (dirs.size() < 2) throw ContractViolation("compare needs at least two run directories");
  std::vector<RunRecord> runs;
  for (const auto& d : dirs) runs.push_back(load_run(d));
  for (const auto& r : runs) {
    if (!(r.config.env == runs.front().config.env))
      throw ContractViolation(fmt::format("runs {} and {} use different environments",
                                          runs.front().dir.string(), r.dir.string()));
    if (r.metrics.empty()) throw FormatError(fmt::format("{} has an empty metric log", r.dir.string()));
  }
  std::vector<double> initial;
  for (const auto& r : runs) initial.push_back(r.metrics.front().test_acc);
  const double target = mean(initial) + options.target_delta;

  std::map<std::string, std::vector<const RunRecord*>> groups;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    // Runs repeating a (name, seed) pair form their own group.
    std::string key = r.config.name;
    if (groups.count(key))
      for (const auto* other : groups[key])
        if (other->seed == r.seed) key = r.dir.string();
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  out << fmt::format("target test accuracy {:.4f} (initial {:.4f} + {:.4f})\n", target,
                     mean(initial), options.target_delta);
  out << fmt::format("{:<24} {:>5} {:>10} {:>8} {:>14} {:>8}\n", "group", "runs", "final", "std",
                     "steps@target", "reached");
  std::map<std::string, double> mean_steps, mean_final;
  for (const auto& name : order) {
    std::vector<double> finals, steps;
    for (const auto* r : groups[name]) {
      finals.push_back(final_accuracy(r->metrics));
      if (const auto s = steps_to_target(r->metrics, target)) steps.push_back(static_cast<double>(*s));
    }
    if (!steps.empty()) mean_steps[name] = mean(steps);
    mean_final[name] = mean(finals);
    out << fmt::format("{:<24} {:>5} {:>10.4f} {:>8.4f} {:>14} {:>5}/{}\n", name, finals.size(),
                       mean(finals), sample_std(finals),
                       steps.empty() ? std::string("-") : fmt::format("{:.1f}", mean(steps)),
                       steps.size(), finals.size());
  }
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const auto& a = order[i];
      const auto& b = order[j];
      out << fmt::format("final accuracy delta {} - {}: {:+.4f}\n", b, a, mean_final[b] - mean_final[a]);
      if (mean_steps.count(a) && mean_steps.count(b) && mean_steps[a] > 0)
        out << fmt::format("gradient-step ratio {}/{}: {:.3f}\n", b, a, mean_steps[b] / mean_steps[a]);
      // KL-matched accuracy, pairing runs by seed.
      std::vector<double> fractions;
      for (const auto* ra : groups[a])
        for (const auto* rb : groups[b])
          if (ra->seed == rb->seed) {
            const auto ca = accuracy_vs_kl_curve(ra->metrics);
            const auto cb = accuracy_vs_kl_curve(rb->metrics);
            const auto cmp = compare_at_matched_kl(cb, ca, options.kl_points, options.kl_tolerance);
            if (!cmp.grid.empty()) fractions.push_back(cmp.fraction_a_not_worse);
          }
      if (!fractions.empty())
        out << fmt::format("KL-matched: {} >= {} - {:.2f} at {:.1f}% of grid points ({} seed pairs)\n",
                           b, a, options.kl_tolerance, 100.0 * mean(fractions), fractions.size());
    }
}

void analyze_run(const fs::path& dir, std::ostream& out) {
  const RunRecord run = load_run(dir);
  const fs::path adir = dir / "analysis";
  fs::create_directories(adir);
  auto csv = [&](const char* name, auto&& fn) {
    std::ostringstream s;
    fn(s);
    write_text(adir / name, s.str());
  };
  const auto& values = run.audit.values;
  const auto& top = run.audit.top_actions;
  csv("value_mae.csv", [&](std::ostream& s) { write_mae_csv(s, values); });
  csv("value_threshold_acc.csv", [&](std::ostream& s) { write_threshold_acc_csv(s, values); });
  csv("value_error_profile.csv", [&](std::ostream& s) { write_profile_csv(s, values); });
  csv("top_action.csv", [&](std::ostream& s) { write_top_action_csv(s, top); });
  const auto curve = accuracy_vs_kl_curve(run.metrics);
  csv("accuracy_vs_kl.csv", [&](std::ostream& s) { write_kl_csv(s, curve); });
  out << fmt::format("run {} ({} seed {}): {} metric records\n", dir.string(), run.config.name,
                     run.seed, run.metrics.size());
  out << fmt::format("final test accuracy (best validation): {:.4f}\n", final_accuracy(run.metrics));
  if (!values.empty())
    out << fmt::format("value audit: {} states, MAE {:.4f}, within {:.2f}: {:.3f}\n", values.size(),
                       value_mae(values), kValueThreshold, value_accuracy(values));
  if (!top.empty()) {
    const auto s = summarize_top_action(top);
    out << fmt::format("top-action: {} trials, {} informative, accuracy {:.3f} (chance 0.2 +- {:.3f})\n",
                       s.trials, s.informative, s.accuracy, s.stderr_chance);
  }
  out << "tables written to " << adir.string() << '\n';
}

void replay_run(const fs::path& dir, const ReplayOptions& options, std::ostream& out) {
  const RunRecord run = load_run(dir);
  if (options.which != "best" && options.which != "final")
    throw ConfigError(fmt::format("which: expected best or final, got '{}'", options.which));
  const fs::path policy_path = dir / (options.which + ".policy");
  const PolicySnapshot policy = load_policy(policy_path);
  const ExperimentTasks tasks = make_tasks(run.config);
  const std::vector<TaskInstance>* split = nullptr;
  if (options.split == "train") split = &tasks.splits.train;
  if (options.split == "validation") split = &tasks.splits.validation;
  if (options.split == "test") split = &tasks.splits.test;
  if (!split) throw ConfigError(fmt::format("split: expected train, validation or test, got '{}'", options.split));
  if (options.rounds < 1) throw ConfigError("rounds: must be >= 1");
  const Environment env(run.config.env);
  const double t = run.config.ppo.eval_temperature;
  const double acc = evaluate_accuracy(env, policy, *split, t, options.rounds, options.seed,
                                       run.config.workers);
  const double greedy = evaluate_accuracy(env, policy, *split, kGreedy, 1, 0, run.config.workers);
  out << json{{"run", dir.string()},
              {"policy", options.which},
              {"policy_hash", hex64(parameter_hash(policy))},
              {"split", options.split},
              {"tasks", split->size()},
              {"temperature", t},
              {"rounds", options.rounds},
              {"accuracy", acc},
              {"greedy_accuracy", greedy}}
             .dump()
      << '\n';
}

}  // namespace vinelab
