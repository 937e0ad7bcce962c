#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "focus/harness.hpp"

namespace focus::cli {

/// Process exit codes.
enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

namespace fs = std::filesystem;

/// Applies FOCUS_SEED when set; throws InvalidConfig if it is not an integer.
inline void apply_seed_override(ExperimentConfig& cfg) {
  const char* env = std::getenv("FOCUS_SEED");
  if (!env || !*env) return;
  try {
    std::size_t pos = 0;
    const std::string s(env);
    const auto v = std::stoull(s, &pos);
    if (pos != s.size() || s.front() == '-') throw std::invalid_argument("");
    cfg.master_seed = v;
  } catch (const std::exception&) {
    throw InvalidConfig(std::string("FOCUS_SEED must be an unsigned integer, got '") + env + "'");
  }
}

inline int cmd_run(const fs::path& config_path, const fs::path& out_dir, bool force, std::ostream& out,
                   std::ostream& err) {
  ExperimentConfig cfg;
  try {
    std::ifstream in(config_path);
    if (!in) throw InvalidConfig("cannot read config file '" + config_path.string() + "'");
    cfg = parse_config(in);
    apply_seed_override(cfg);
  } catch (const std::exception& e) {
    err << "config error: " << config_path.string() << ": " << e.what() << '\n';
    return kConfigError;
  }

  const fs::path run_dir = out_dir / config_hash(cfg);
  if (fs::exists(run_dir / "result.json") && !force) {
    err << "refusing to overwrite existing run " << run_dir.string() << " (use --force)\n";
    return kConfigError;
  }
  try {
    const RunResult result = run(cfg);
    write_run(result, run_dir);
    out << run_dir.string() << '\n';
    out << "final accuracy " << std::fixed << std::setprecision(4) << result.final_accuracy() << ", fl loss "
        << result.final_loss() << " after " << result.metrics.size() << " rounds\n";
  } catch (const RunError& e) {
    err << "runtime error: " << e.what() << " (" << e.partial_metrics().size() << " rounds completed)\n";
    return kRuntimeError;
  } catch (const InvalidConfig& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

/// Canned desk-scale scenario by name; nullopt if unknown.
inline std::optional<ExperimentConfig> repro_config(const std::string& scenario) {
  if (scenario == "usc-noisy") return noisy_scenario();
  if (scenario == "usc-normal") return normal_scenario();
  if (scenario == "multi-tier") return multi_tier_scenario();
  return std::nullopt;
}

inline int cmd_repro(const std::string& scenario, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  auto base = repro_config(scenario);
  if (!base) {
    err << "config error: unknown scenario '" << scenario << "' (expected usc-noisy, usc-normal or multi-tier)\n";
    return kConfigError;
  }
  try {
    apply_seed_override(*base);
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  ExperimentConfig with_focus = *base, with_fedavg = *base;
  with_focus.aggregator = Aggregator::focus;
  with_fedavg.aggregator = Aggregator::fedavg;

  try {
    const auto rep = compare(with_focus, with_fedavg);
    write_run(rep.a, out_dir / "focus");
    write_run(rep.b, out_dir / "fedavg");

    std::vector<bool> noisy(base->plan.num_clients, false);
    for (const auto& n : base->noise)
      for (auto k : n.target_clients)
        if (n.fraction > 0.0) noisy[k] = true;

    out << "scenario " << scenario << " (seed " << base->master_seed << ", " << base->rounds << " rounds, "
        << base->plan.num_clients << " clients)\n";
    out << std::fixed << std::setprecision(4);
    out << "  aggregator  final_accuracy  final_fl_loss\n";
    out << "  focus       " << std::setw(14) << rep.a.final_accuracy() << "  " << std::setw(13) << rep.a.final_loss()
        << '\n';
    out << "  fedavg      " << std::setw(14) << rep.b.final_accuracy() << "  " << std::setw(13) << rep.b.final_loss()
        << '\n';
    out << std::showpos << std::setprecision(2) << "accuracy delta (focus - fedavg): "
        << 100.0 * (rep.a.final_accuracy() - rep.b.final_accuracy()) << " points\n"
        << std::noshowpos;
    out << std::setprecision(4) << "final focus weights:\n";
    std::size_t argmin = 0;
    for (std::size_t k = 0; k < rep.a.final_weights.size(); ++k) {
      out << "  client " << k << "  " << rep.a.final_weights[k] << (noisy[k] ? "  (noisy)" : "") << '\n';
      if (rep.a.final_weights[k] < rep.a.final_weights[argmin]) argmin = k;
    }
    out << "smallest weight: client " << argmin << '\n';
    out << "runs written to " << out_dir.string() << '\n';
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

namespace detail {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};

inline Table read_numeric_csv(const fs::path& path, const std::string& expected_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.filename().string());
  std::string line;
  if (!std::getline(in, line) || line != expected_header)
    throw std::runtime_error("corrupt " + path.filename().string() + ": expected header '" + expected_header + "'");
  Table t;
  t.header = focus::detail::split(expected_header, ',');
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    try {
      for (const auto& cell : focus::detail::split(line, ',')) row.push_back(std::stod(cell));
    } catch (const std::exception&) {
      row.clear();
    }
    if (row.size() != t.header.size())
      throw std::runtime_error("corrupt " + path.filename().string() + ": bad row on line " + std::to_string(line_no));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace detail

/// Prints curves from a run directory and writes report.csv (series,round,value).
inline int cmd_report(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  if (!fs::exists(run_dir / "result.json")) {
    err << "error: no result.json found in " << run_dir.string() << '\n';
    return kConfigError;
  }
  try {
    nlohmann::json summary;
    try {
      std::ifstream in(run_dir / "result.json");
      summary = nlohmann::json::parse(in);
    } catch (const std::exception&) {
      throw std::runtime_error("corrupt result.json");
    }
    if (!fs::exists(run_dir / "metrics.csv")) throw std::runtime_error("no metrics.csv found");
    const auto metrics = detail::read_numeric_csv(run_dir / "metrics.csv", "round,accuracy,fl_loss");

    // round -> client -> weight
    std::map<std::size_t, std::map<std::size_t, double>> weights;
    std::size_t num_clients = 0;
    const bool has_cred = fs::exists(run_dir / "credibility.csv");
    if (has_cred) {
      const auto cred = detail::read_numeric_csv(run_dir / "credibility.csv", "round,client,ls,ll,e,c,w");
      for (const auto& r : cred.rows) {
        const auto round = static_cast<std::size_t>(r[0]), client = static_cast<std::size_t>(r[1]);
        weights[round][client] = r[6];
        num_clients = std::max(num_clients, client + 1);
      }
    }

    out << "run " << summary.value("config_hash", std::string("?")) << " (" << summary.value("aggregator", std::string("?"))
        << ")\n";
    out << std::setw(6) << "round" << std::setw(11) << "accuracy" << std::setw(11) << "fl_loss";
    for (std::size_t k = 0; k < num_clients; ++k) out << std::setw(9) << ("w" + std::to_string(k));
    out << '\n' << std::fixed;
    for (const auto& r : metrics.rows) {
      const auto round = static_cast<std::size_t>(r[0]);
      out << std::setw(6) << round << std::setprecision(4) << std::setw(11) << r[1] << std::setw(11) << r[2];
      for (std::size_t k = 0; k < num_clients; ++k) {
        const auto it = weights[round].find(k);
        if (it == weights[round].end()) out << std::setw(9) << "-";
        else out << std::setw(9) << std::setprecision(3) << it->second;
      }
      out << '\n';
    }

    std::ofstream csv(run_dir / "report.csv", std::ios::binary);
    csv << "series,round,value\n";
    for (const auto& r : metrics.rows) csv << "accuracy," << static_cast<std::size_t>(r[0]) << ',' << io::format_double(r[1]) << '\n';
    for (const auto& r : metrics.rows) csv << "fl_loss," << static_cast<std::size_t>(r[0]) << ',' << io::format_double(r[2]) << '\n';
    for (std::size_t k = 0; k < num_clients; ++k)
      for (const auto& [round, per_client] : weights)
        if (const auto it = per_client.find(k); it != per_client.end())
          csv << "weight_client" << k << ',' << round << ',' << io::format_double(it->second) << '\n';
    out << "wrote " << (run_dir / "report.csv").string() << '\n';
  } catch (const std::exception& e) {
    err << "error: " << run_dir.string() << ": " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace focus::cli
