#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "focus/data.hpp"
#include "focus/dataset.hpp"
#include "focus/error.hpp"
#include "focus/federation.hpp"
#include "focus/learner.hpp"
#include "focus/rng.hpp"

namespace focus {

enum class Aggregator { focus, fedavg, local_baseline };

inline const char* to_string(Aggregator a) {
  switch (a) {
    case Aggregator::focus: return "focus";
    case Aggregator::fedavg: return "fedavg";
    case Aggregator::local_baseline: return "local_baseline";
  }
  return "?";
}

struct SynthSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 500;
  std::size_t dim = 8;
  double separation = 5.0;
};

/// Everything needed to reproduce one run. All randomness is derived from
/// `master_seed` (plus each noise spec's own seed).
struct ExperimentConfig {
  SynthSpec synth;
  std::optional<std::string> dataset_path;  ///< overrides `synth` when set
  PartitionPlan plan{.num_clients = 4, .benchmark_fraction = 0.1, .test_fraction = 0.5};
  std::vector<NoiseSpec> noise;
  std::vector<std::size_t> hidden_dims{64};
  SgdConfig sgd{.learning_rate = 1.0, .local_steps = 20, .batch_size = std::nullopt};
  Aggregator aggregator = Aggregator::focus;
  std::size_t rounds = 50;
  double alpha = 1.0;
  Reduction reduction = Reduction::mean;
  bool standardize_e = true;
  double participation = 1.0;
  std::uint64_t master_seed = 1;

  void validate() const {
    if (rounds < 1) throw InvalidConfig("rounds must be >= 1");
    if (!(alpha > 0.0)) throw InvalidConfig("alpha must be positive");
    if (!(participation > 0.0 && participation <= 1.0)) throw InvalidConfig("participation must be in (0,1]");
    if (!(sgd.learning_rate >= 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (sgd.local_steps < 1) throw InvalidConfig("local_steps must be >= 1");
    plan.validate();
  }
};

/// Seed streams derived from master_seed.
namespace seed_tag {
inline constexpr std::uint64_t data = 1, partition = 2, init = 3, sgd = 4, noise = 5, participation = 6;
}

struct Scenario {
  ServerState server;
  std::vector<ClientState> clients;
  Dataset test;
};

inline Scenario build_scenario(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::uint64_t master = cfg.master_seed;
  const Dataset source =
      cfg.dataset_path ? io::load(*cfg.dataset_path)
                       : synth_blobs(cfg.synth.num_classes, cfg.synth.samples_per_class, cfg.synth.dim,
                                     cfg.synth.separation, derive_seed(master, seed_tag::data));

  PartitionPlan plan = cfg.plan;
  plan.seed = derive_seed(master, seed_tag::partition);
  auto parts = partition(source, plan);

  std::vector<NoiseSpec> noise = cfg.noise;
  for (auto& spec : noise) spec.seed = derive_seed(derive_seed(master, seed_tag::noise), spec.seed);
  auto shards = apply_noise(std::move(parts.clients), noise);

  ArchSpec arch{source.dim(), cfg.hidden_dims, source.num_classes()};
  const ModelParams init = init_params(arch, derive_seed(master, seed_tag::init));

  Scenario s;
  for (std::size_t k = 0; k < shards.size(); ++k) s.clients.push_back({k, std::move(shards[k]), init, k});
  s.server = make_server(init, std::move(parts.benchmark), s.clients, cfg.alpha, cfg.reduction, cfg.standardize_e);
  s.server.participation = cfg.participation;
  s.server.participation_seed = derive_seed(master, seed_tag::participation);
  s.test = std::move(parts.test);
  return s;
}

/// Unweighted mean over clients of each local model's mean loss on its own data.
inline double fl_training_loss(std::span<const ClientState> clients) {
  if (clients.empty()) throw InvalidInput("fl_training_loss: no clients");
  double total = 0.0;
  for (const auto& c : clients) total += model_test(c.local_model, c.data, Reduction::mean);
  return total / static_cast<double>(clients.size());
}

struct RoundMetrics {
  std::size_t round = 0;
  double test_accuracy = 0.0;
  double fl_training_loss = 0.0;
  std::optional<CredReport> cred;
};

struct RoundTraffic {
  std::size_t downlink = 0;
  std::size_t uplink = 0;
  std::size_t extra_uplink_scalars = 0;
};

struct RunResult {
  ExperimentConfig config;
  std::vector<RoundMetrics> metrics;
  ModelParams final_model;
  std::vector<double> final_weights;
  std::vector<RoundTraffic> traffic;  ///< one entry per round
  double duration_seconds = 0.0;

  double final_accuracy() const { return metrics.back().test_accuracy; }
  double final_loss() const { return metrics.back().fl_training_loss; }
};

/// Raised when a round fails; carries the rounds completed before it.
class RunError : public RoundError {
 public:
  RunError(const RoundError& cause, std::vector<RoundMetrics> partial)
      : RoundError(cause), partial_(std::move(partial)) {}

  const std::vector<RoundMetrics>& partial_metrics() const noexcept { return partial_; }

 private:
  std::vector<RoundMetrics> partial_;
};

namespace detail {

inline RoundTraffic tally(const MessageLog& log, std::size_t round) {
  RoundTraffic t;
  for (const auto& m : log.messages) {
    if (m.round != round) continue;
    if (m.direction == Direction::down) {
      ++t.downlink;
    } else {
      ++t.uplink;
      t.extra_uplink_scalars += m.extra_scalars;
    }
  }
  return t;
}

}  // namespace detail

inline RunResult run(const ExperimentConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  Scenario s = build_scenario(cfg);
  SgdConfig sgd = cfg.sgd;
  sgd.seed = derive_seed(cfg.master_seed, seed_tag::sgd);
  const Dataset& eval = s.test.empty() ? s.server.benchmark : s.test;

  RunResult result;
  result.config = cfg;
  MessageLog log;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    RoundMetrics m;
    m.round = t;
    try {
      switch (cfg.aggregator) {
        case Aggregator::focus: {
          auto out = focus_round(s.server, s.clients, sgd, &log);
          s.server = std::move(out.server);
          s.clients = std::move(out.clients);
          m.cred = std::move(out.report);
          m.fl_training_loss = fl_training_loss(s.clients);
          break;
        }
        case Aggregator::fedavg: {
          auto out = fedavg_round(s.server, s.clients, sgd, &log);
          s.server = std::move(out.server);
          s.clients = std::move(out.clients);
          m.fl_training_loss = fl_training_loss(s.clients);
          break;
        }
        case Aggregator::local_baseline: {
          // Server-only model trained on the benchmark; no client traffic.
          SgdConfig round_cfg = sgd;
          round_cfg.seed = derive_seed(sgd.seed, t);
          try {
            s.server.global_model = client_update(s.server.global_model, s.server.benchmark, round_cfg);
          } catch (const std::exception& ex) {
            throw RoundError(t, ex.what());
          }
          s.server.round = t;
          m.fl_training_loss = model_test(s.server.global_model, s.server.benchmark, Reduction::mean);
          break;
        }
      }
    } catch (const RoundError& err) {
      throw RunError(err, std::move(result.metrics));
    }
    m.test_accuracy = accuracy(s.server.global_model, eval);
    result.metrics.push_back(std::move(m));
    result.traffic.push_back(detail::tally(log, t));
  }
  result.final_model = s.server.global_model;
  result.final_weights = s.server.weights;
  result.duration_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

/// First round whose test accuracy reaches `threshold`.
inline std::optional<std::size_t> rounds_to_accuracy(const std::vector<RoundMetrics>& metrics, double threshold) {
  for (const auto& m : metrics)
    if (m.test_accuracy >= threshold) return m.round;
  return std::nullopt;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  ///< sample standard deviation; 0 for fewer than 2 values
};

inline MeanStd summarize(std::span<const double> values) {
  MeanStd s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Config document (flat `key = value`, `#` comments)

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::string join(const std::vector<T>& v, char sep = ',') {
  std::ostringstream out;
  for (std::size_t i = 0; i < v.size(); ++i) out << (i ? std::string(1, sep) : "") << v[i];
  return out.str();
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

inline std::string noise_to_string(const NoiseSpec& n) {
  std::ostringstream out;
  out << to_string(n.kind) << ' ' << io::format_double(n.fraction) << ' ' << join(n.target_clients) << ' '
      << n.seed;
  if (n.flip_map) out << ' ' << join(*n.flip_map);
  return out.str();
}

}  // namespace detail

/// Canonical config document; parse_config(to_config_text(c)) == c.
inline std::string to_config_text(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "seed = " << c.master_seed << '\n';
  if (c.dataset_path) out << "dataset = " << *c.dataset_path << '\n';
  out << "classes = " << c.synth.num_classes << '\n'
      << "samples_per_class = " << c.synth.samples_per_class << '\n'
      << "dim = " << c.synth.dim << '\n'
      << "separation = " << io::format_double(c.synth.separation) << '\n'
      << "clients = " << c.plan.num_clients << '\n'
      << "benchmark_fraction = " << io::format_double(c.plan.benchmark_fraction) << '\n'
      << "test_fraction = " << io::format_double(c.plan.test_fraction) << '\n';
  if (c.plan.client_proportions) {
    std::vector<std::string> p;
    for (double v : *c.plan.client_proportions) p.push_back(io::format_double(v));
    out << "client_proportions = " << detail::join(p) << '\n';
  }
  for (const auto& n : c.noise) out << "noise = " << detail::noise_to_string(n) << '\n';
  out << "hidden = " << detail::join(c.hidden_dims) << '\n'
      << "learning_rate = " << io::format_double(c.sgd.learning_rate) << '\n'
      << "local_steps = " << c.sgd.local_steps << '\n'
      << "batch_size = " << (c.sgd.batch_size ? std::to_string(*c.sgd.batch_size) : "full") << '\n'
      << "aggregator = " << to_string(c.aggregator) << '\n'
      << "rounds = " << c.rounds << '\n'
      << "alpha = " << io::format_double(c.alpha) << '\n'
      << "reduction = " << to_string(c.reduction) << '\n'
      << "standardize_e = " << (c.standardize_e ? "true" : "false") << '\n'
      << "participation = " << io::format_double(c.participation) << '\n';
  return out.str();
}

/// Parses a config document on top of the defaults. Unknown keys and bad
/// values raise InvalidConfig naming the line and key.
inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no);
    if (eq == std::string::npos) throw InvalidConfig(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const std::string ctx = where + ", key '" + key + "'";

    auto as_size = [&](const std::string& v) -> std::size_t {
      try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size() || x < 0) throw std::invalid_argument("");
        return static_cast<std::size_t>(x);
      } catch (const std::exception&) {
        throw InvalidConfig(ctx + ": expected a non-negative integer, got '" + v + "'");
      }
    };
    auto as_u64 = [&](const std::string& v) -> std::uint64_t {
      try {
        std::size_t pos = 0;
        const auto x = std::stoull(v, &pos);
        if (pos != v.size() || v.front() == '-') throw std::invalid_argument("");
        return x;
      } catch (const std::exception&) {
        throw InvalidConfig(ctx + ": expected an unsigned integer, got '" + v + "'");
      }
    };
    auto as_double = [&](const std::string& v) -> double {
      try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument("");
        return x;
      } catch (const std::exception&) {
        throw InvalidConfig(ctx + ": expected a number, got '" + v + "'");
      }
    };
    auto as_bool = [&](const std::string& v) -> bool {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "no") return false;
      throw InvalidConfig(ctx + ": expected true/false, got '" + v + "'");
    };

    if (key == "seed") {
      c.master_seed = as_u64(value);
    } else if (key == "dataset") {
      c.dataset_path = value;
    } else if (key == "classes") {
      c.synth.num_classes = as_size(value);
    } else if (key == "samples_per_class") {
      c.synth.samples_per_class = as_size(value);
    } else if (key == "dim") {
      c.synth.dim = as_size(value);
    } else if (key == "separation") {
      c.synth.separation = as_double(value);
    } else if (key == "clients") {
      c.plan.num_clients = as_size(value);
    } else if (key == "benchmark_fraction") {
      c.plan.benchmark_fraction = as_double(value);
    } else if (key == "test_fraction") {
      c.plan.test_fraction = as_double(value);
    } else if (key == "client_proportions") {
      std::vector<double> p;
      for (const auto& item : detail::split(value, ',')) p.push_back(as_double(item));
      c.plan.client_proportions = p;
    } else if (key == "noise") {
      // noise = <randomize|pairwise_flip> <fraction> <client,...> [seed] [flip map c0,c1,...]
      const auto parts = detail::split(value, ' ');
      std::vector<std::string> tokens;
      for (const auto& p : parts)
        if (!p.empty()) tokens.push_back(p);
      if (tokens.size() < 3 || tokens.size() > 5)
        throw InvalidConfig(ctx + ": expected '<kind> <fraction> <clients> [seed] [flip_map]'");
      NoiseSpec n;
      if (tokens[0] == "randomize") n.kind = NoiseKind::randomize;
      else if (tokens[0] == "pairwise_flip") n.kind = NoiseKind::pairwise_flip;
      else throw InvalidConfig(ctx + ": unknown noise kind '" + tokens[0] + "'");
      n.fraction = as_double(tokens[1]);
      for (const auto& k : detail::split(tokens[2], ',')) n.target_clients.push_back(as_size(k));
      if (tokens.size() >= 4) n.seed = as_u64(tokens[3]);
      if (tokens.size() == 5) {
        std::vector<std::uint32_t> map;
        for (const auto& item : detail::split(tokens[4], ',')) map.push_back(static_cast<std::uint32_t>(as_size(item)));
        n.flip_map = map;
      }
      c.noise.push_back(std::move(n));
    } else if (key == "hidden") {
      c.hidden_dims.clear();
      for (const auto& item : detail::split(value, ',')) c.hidden_dims.push_back(as_size(item));
    } else if (key == "learning_rate") {
      c.sgd.learning_rate = as_double(value);
    } else if (key == "local_steps") {
      c.sgd.local_steps = as_size(value);
    } else if (key == "batch_size") {
      if (value == "full") c.sgd.batch_size.reset();
      else c.sgd.batch_size = as_size(value);
    } else if (key == "aggregator") {
      if (value == "focus") c.aggregator = Aggregator::focus;
      else if (value == "fedavg") c.aggregator = Aggregator::fedavg;
      else if (value == "local_baseline") c.aggregator = Aggregator::local_baseline;
      else throw InvalidConfig(ctx + ": unknown aggregator '" + value + "'");
    } else if (key == "rounds") {
      c.rounds = as_size(value);
    } else if (key == "alpha") {
      c.alpha = as_double(value);
    } else if (key == "reduction") {
      if (value == "mean") c.reduction = Reduction::mean;
      else if (value == "sum") c.reduction = Reduction::sum;
      else throw InvalidConfig(ctx + ": expected mean or sum");
    } else if (key == "standardize_e") {
      c.standardize_e = as_bool(value);
    } else if (key == "participation") {
      c.participation = as_double(value);
    } else {
      throw InvalidConfig(where + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  for (const auto& n : c.noise) n.validate(c.synth.num_classes, c.plan.num_clients);
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// FNV-1a over the canonical config document, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_config_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Run output directory

inline nlohmann::json summary_json(const RunResult& r) {
  nlohmann::json j;
  j["config"] = to_config_text(r.config);
  j["config_hash"] = config_hash(r.config);
  j["aggregator"] = to_string(r.config.aggregator);
  j["rounds"] = r.metrics.size();
  j["final_accuracy"] = r.final_accuracy();
  j["final_fl_loss"] = r.final_loss();
  j["final_weights"] = r.final_weights;
  j["duration_seconds"] = r.duration_seconds;
  auto& traffic = j["messages_per_round"] = nlohmann::json::array();
  for (const auto& t : r.traffic)
    traffic.push_back({{"downlink", t.downlink}, {"uplink", t.uplink}, {"extra_uplink_scalars", t.extra_uplink_scalars}});
  j["checkpoint"] = "final_model.bin";
  return j;
}

/// Writes metrics.csv, credibility.csv (FOCUS only), result.json and
/// final_model.bin into `dir`, creating it if needed.
inline void write_run(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.csv", std::ios::binary);
    out << "round,accuracy,fl_loss\n";
    for (const auto& m : r.metrics)
      out << m.round << ',' << io::format_double(m.test_accuracy) << ',' << io::format_double(m.fl_training_loss)
          << '\n';
  }
  if (r.config.aggregator == Aggregator::focus) {
    std::ofstream out(dir / "credibility.csv", std::ios::binary);
    io::write_cred_header(out);
    for (const auto& m : r.metrics)
      if (m.cred) io::write_cred_rows(*m.cred, out);
  }
  {
    std::ofstream out(dir / "result.json");
    out << summary_json(r).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "final_model.bin", std::ios::binary);
    io::write_checkpoint(r.final_model, out);
  }
  if (!std::filesystem::exists(dir / "result.json")) throw std::runtime_error("failed writing run output to " + dir.string());
}

// ---------------------------------------------------------------------------
// Paired comparisons

struct ComparisonRow {
  std::string series;  ///< "A" or "B"
  std::size_t round = 0;
  double accuracy = 0.0;
  double fl_loss = 0.0;
};

struct ComparisonReport {
  RunResult a;
  RunResult b;
  std::vector<ComparisonRow> rows;         ///< 2 * T rows, A first
  std::vector<double> accuracy_delta;      ///< A - B per round
  std::vector<double> loss_delta;          ///< A - B per round
};

/// Runs two configs that differ only in aggregator and/or noise, under the
/// same seeds.
inline ComparisonReport compare(const ExperimentConfig& a, const ExperimentConfig& b) {
  auto strip = [](ExperimentConfig c) {
    c.aggregator = Aggregator::focus;
    c.noise.clear();
    return to_config_text(c);
  };
  if (strip(a) != strip(b))
    throw InvalidInput("compare: configs may differ only in aggregator and noise");

  ComparisonReport rep{run(a), run(b), {}, {}, {}};
  for (const auto* side : {&rep.a, &rep.b})
    for (const auto& m : side->metrics)
      rep.rows.push_back({side == &rep.a ? "A" : "B", m.round, m.test_accuracy, m.fl_training_loss});
  for (std::size_t t = 0; t < rep.a.metrics.size(); ++t) {
    rep.accuracy_delta.push_back(rep.a.metrics[t].test_accuracy - rep.b.metrics[t].test_accuracy);
    rep.loss_delta.push_back(rep.a.metrics[t].fl_training_loss - rep.b.metrics[t].fl_training_loss);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Canned desk-scale scenarios

/// Four equal clients plus one benchmark part, no label noise.
inline ExperimentConfig normal_scenario(std::uint64_t seed = 1) {
  ExperimentConfig c;
  c.master_seed = seed;
  return c;
}

/// As normal_scenario, with every label of client 3 redrawn uniformly.
inline ExperimentConfig noisy_scenario(std::uint64_t seed = 1) {
  ExperimentConfig c = normal_scenario(seed);
  c.noise.push_back({.kind = NoiseKind::randomize, .fraction = 1.0, .target_clients = {3}});
  return c;
}

/// Three clients, the last with half of its labels randomized; the clean pool
/// is split evenly between server benchmark and test set.
inline ExperimentConfig multi_tier_scenario(std::uint64_t seed = 1) {
  ExperimentConfig c = normal_scenario(seed);
  c.plan.num_clients = 3;
  c.plan.benchmark_fraction = 0.2;
  c.plan.test_fraction = 0.2;
  c.noise.push_back({.kind = NoiseKind::randomize, .fraction = 0.5, .target_clients = {2}});
  return c;
}

}  // namespace focus
