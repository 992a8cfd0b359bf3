// Copyright 2026 The vinelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "vinelab/checkpoint.hpp"

#include <fmt/format.h>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "vinelab/errors.hpp"

namespace vinelab {
namespace {

constexpr const char* kPolicyMagic = "vinelab-policy";
constexpr const char* kTrainerMagic = "vinelab-trainer-state";
constexpr int kVersion = 1;

void write_doubles(std::ostream& out, std::span<const double> xs) {
  out << xs.size();
  for (std::size_t i = 0; i < xs.size(); ++i) out << (i % 8 == 0 ? "\n" : " ") << fmt::format("{:a}", xs[i]);
  out << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string word(const char* what) {
    std::string w;
    if (!(in_ >> w)) throw FormatError(fmt::format("checkpoint truncated: expected {}", what));
    return w;
  }
  void expect(const std::string& w) {
    const std::string got = word(w.c_str());
    if (got != w) throw FormatError(fmt::format("checkpoint: expected '{}', found '{}'", w, got));
  }
  long long integer(const char* what) {
    const std::string w = word(what);
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(w.c_str(), &end, 10);
    if (errno != 0 || *end != '\0') throw FormatError(fmt::format("checkpoint: bad {} '{}'", what, w));
    return v;
  }
  double real(const char* what) {
    const std::string w = word(what);
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (*end != '\0') throw FormatError(fmt::format("checkpoint: bad {} '{}'", what, w));
    return v;
  }
  long long keyed(const char* key) {
    expect(key);
    return integer(key);
  }
  std::vector<double> doubles(const char* what) {
    const long long n = integer(what);
    if (n < 0 || n > (1LL << 32)) throw FormatError(fmt::format("checkpoint: bad {} count", what));
    std::vector<double> xs(static_cast<std::size_t>(n));
    for (auto& x : xs) x = real(what);
    return xs;
  }

 private:
  std::istream& in_;
};

PolicySnapshot read_policy_body(Reader& r) {
  r.expect(kPolicyMagic);
  if (r.integer("version") != kVersion) throw FormatError("unsupported policy format version");
  const std::string kind = r.word("architecture");
  const int digits = static_cast<int>(r.keyed("vocab_digits"));
  const int window = static_cast<int>(r.keyed("window"));
  if (digits < 1 || window < 1) throw FormatError("checkpoint: bad policy dimensions");
  const Vocab vocab(digits);
  PolicySnapshot shell = [&] {
    if (kind == "mlp") {
      MlpShape shape;
      shape.embed_dim = static_cast<int>(r.keyed("embed_dim"));
      shape.hidden_dim = static_cast<int>(r.keyed("hidden_dim"));
      if (shape.embed_dim < 1 || shape.hidden_dim < 1) throw FormatError("checkpoint: bad mlp shape");
      return PolicySnapshot::mlp(vocab, window, shape, 0, 0.0);
    }
    if (kind == "tabular") {
      const long long n = r.keyed("contexts");
      if (n < 0) throw FormatError("checkpoint: bad context count");
      std::vector<ContextKey> contexts(static_cast<std::size_t>(n));
      for (auto& c : contexts) {
        c.resize(static_cast<std::size_t>(window));
        for (auto& t : c) t = static_cast<Token>(r.integer("context token"));
      }
      return PolicySnapshot::tabular(vocab, window, std::move(contexts));
    }
    throw FormatError(fmt::format("checkpoint: unknown architecture '{}'", kind));
  }();
  r.expect("params");
  std::vector<double> params = r.doubles("params");
  if (params.size() != shell.num_params())
    throw FormatError(fmt::format("checkpoint: expected {} params, found {}", shell.num_params(),
                                  params.size()));
  r.expect("end-policy");
  return shell.with_params(std::move(params));
}

void write_adam(std::ostream& out, const char* name, const Adam::State& s) {
  out << name << " step " << s.step << "\nm ";
  write_doubles(out, s.m);
  out << "v ";
  write_doubles(out, s.v);
}

Adam::State read_adam(Reader& r, const char* name) {
  r.expect(name);
  Adam::State s;
  s.step = r.keyed("step");
  r.expect("m");
  s.m = r.doubles("adam m");
  r.expect("v");
  s.v = r.doubles("adam v");
  return s;
}

template <typename WriteFn>
void atomic_write(const std::filesystem::path& path, WriteFn&& fn) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write {}", tmp.string()));
    fn(out);
    out.flush();
    if (!out) throw FormatError(fmt::format("write to {} failed", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
  return in;
}

}  // namespace

void write_policy(std::ostream& out, const PolicySnapshot& policy) {
  out << kPolicyMagic << ' ' << kVersion << '\n'
      << to_string(policy.architecture()) << '\n'
      << "vocab_digits " << policy.vocab().num_digits() << "\nwindow " << policy.window() << '\n';
  if (policy.architecture() == Architecture::kMlp) {
    out << "embed_dim " << policy.mlp_shape().embed_dim << "\nhidden_dim "
        << policy.mlp_shape().hidden_dim << '\n';
  } else {
    out << "contexts " << policy.contexts().size() << '\n';
    for (const auto& c : policy.contexts()) {
      for (std::size_t i = 0; i < c.size(); ++i) out << (i ? " " : "") << c[i];
      out << '\n';
    }
  }
  out << "params ";
  write_doubles(out, policy.params());
  out << "end-policy\n";
}

PolicySnapshot read_policy(std::istream& in) {
  Reader r(in);
  return read_policy_body(r);
}

void write_trainer_checkpoint(std::ostream& out, const TrainerCheckpoint& ck) {
  const auto& c = ck.counters;
  out << kTrainerMagic << ' ' << kVersion << '\n'
      << "next_iteration " << ck.next_iteration << '\n'
      << "best_iteration " << ck.best_iteration << '\n'
      << "best_val " << fmt::format("{:a}", ck.best_val) << '\n'
      << "counters " << c.gradient_steps << ' ' << c.episodes << ' ' << c.rollout_tokens << ' '
      << c.mc_rollouts << ' ' << c.mc_tokens << '\n';
  write_policy(out, ck.policy);
  write_policy(out, ck.best_policy);
  out << "valnet ";
  if (ck.valnet)
    write_doubles(out, ck.valnet->params());
  else
    out << "0\n";
  write_adam(out, "adam-policy", ck.policy_opt);
  write_adam(out, "adam-value", ck.value_opt);
  out << "end\n";
}

TrainerCheckpoint read_trainer_checkpoint(std::istream& in) {
  Reader r(in);
  r.expect(kTrainerMagic);
  if (r.integer("version") != kVersion) throw FormatError("unsupported trainer-state version");
  const int next = static_cast<int>(r.keyed("next_iteration"));
  const int best_it = static_cast<int>(r.keyed("best_iteration"));
  r.expect("best_val");
  const double best_val = r.real("best_val");
  r.expect("counters");
  IterationMetrics c;
  c.gradient_steps = r.integer("gradient_steps");
  c.episodes = r.integer("episodes");
  c.rollout_tokens = r.integer("rollout_tokens");
  c.mc_rollouts = r.integer("mc_rollouts");
  c.mc_tokens = r.integer("mc_tokens");
  PolicySnapshot policy = read_policy_body(r);
  PolicySnapshot best = read_policy_body(r);
  r.expect("valnet");
  std::vector<double> vp = r.doubles("valnet params");
  std::optional<ValueNet> valnet;
  if (!vp.empty()) {
    const ValueNet shell = ValueNet::from_policy(policy);
    if (vp.size() != shell.num_params())
      throw FormatError(fmt::format("checkpoint: expected {} value params, found {}",
                                    shell.num_params(), vp.size()));
    valnet = shell.with_params(std::move(vp));
  }
  Adam::State popt = read_adam(r, "adam-policy");
  Adam::State vopt = read_adam(r, "adam-value");
  r.expect("end");
  return TrainerCheckpoint{next,  std::move(policy), std::move(valnet), std::move(popt),
                           std::move(vopt), std::move(best), best_val, best_it, c};
}

void save_policy(const std::filesystem::path& path, const PolicySnapshot& policy) {
  atomic_write(path, [&](std::ostream& out) { write_policy(out, policy); });
}

PolicySnapshot load_policy(const std::filesystem::path& path) {
  auto in = open(path);
  return read_policy(in);
}

void save_trainer_checkpoint(const std::filesystem::path& path, const TrainerCheckpoint& ck) {
  atomic_write(path, [&](std::ostream& out) { write_trainer_checkpoint(out, ck); });
}

TrainerCheckpoint load_trainer_checkpoint(const std::filesystem::path& path) {
  auto in = open(path);
  return read_trainer_checkpoint(in);
}

}  // namespace vinelab
