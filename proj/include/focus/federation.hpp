#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "focus/dataset.hpp"
#include "focus/error.hpp"
#include "focus/learner.hpp"
#include "focus/rng.hpp"

namespace focus {

struct ClientState {
  std::size_t id = 0;
  Dataset data;
  ModelParams local_model;
  std::uint64_t seed = 0;  ///< mixed into the per-round SGD seed

  std::size_t n() const noexcept { return data.size(); }
};

struct ServerState {
  ModelParams global_model;
  Dataset benchmark;
  std::vector<double> weights;        ///< W^k used by the next aggregation
  std::vector<double> credibilities;  ///< C^k from the last completed round
  double alpha = 1.0;
  Reduction reduction = Reduction::mean;
  bool standardize_e = true;  ///< divide E by its mean across participants before the softmax
  double participation = 1.0;
  std::uint64_t participation_seed = 0;
  std::size_t round = 0;
};

/// Per-client quantities of one FOCUS round.
struct CredRow {
  std::size_t round = 0;
  std::size_t client = 0;
  double ls = 0.0;  ///< client model on the server benchmark
  double ll = 0.0;  ///< global model on the client's data, reported by the client
  double e = 0.0;
  double c = 0.0;
  double w = 0.0;          ///< weight computed this round, consumed next round
  double applied_w = 0.0;  ///< weight this round's aggregation actually used
};

struct CredReport {
  std::vector<CredRow> rows;
};

enum class Direction { down, up };

/// One logical message between server and a client.
struct Message {
  std::size_t round = 0;
  std::size_t client = 0;
  Direction direction = Direction::down;
  std::size_t param_count = 0;
  std::size_t extra_scalars = 0;  ///< payload beyond model parameters
};

struct MessageLog {
  std::vector<Message> messages;

  std::size_t count(std::size_t round) const {
    return static_cast<std::size_t>(
        std::count_if(messages.begin(), messages.end(), [&](const Message& m) { return m.round == round; }));
  }
};

/// Cross-entropy of `m` on `d`, one sample at a time.
inline double model_test(const ModelParams& m, const Dataset& d, Reduction reduction = Reduction::mean) {
  if (d.empty()) throw InvalidInput("model_test: empty dataset");
  if (d.dim() != m.arch().input_dim) throw InvalidInput("model_test: feature dimension mismatch");
  detail::Forward fwd(m.arch());
  double loss = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    fwd.run(m.values(), d.row(i));
    loss -= std::log(std::max(fwd.probs().at(d.label(i)), kProbFloor));
  }
  return reduction == Reduction::mean ? loss / static_cast<double>(d.size()) : loss;
}

inline double mutual_cross_entropy(double ls, double ll) { return ls + ll; }

/// C^k = 1 - softmax(alpha * E)_k. A single client gets C = 1.
inline std::vector<double> credibilities(std::span<const double> e, double alpha) {
  if (e.empty()) throw InvalidInput("credibilities: no clients");
  if (!(alpha > 0.0)) throw InvalidInput("credibilities: alpha must be positive");
  if (e.size() == 1) return {1.0};
  double mx = alpha * e[0];
  for (double v : e) mx = std::max(mx, alpha * v);
  std::vector<double> soft(e.size());
  double total = 0.0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    soft[k] = std::exp(alpha * e[k] - mx);
    total += soft[k];
  }
  std::vector<double> c(e.size());
  for (std::size_t k = 0; k < e.size(); ++k) c[k] = 1.0 - soft[k] / total;
  return c;
}

/// W^k = n_k C^k / sum_i n_i C^i.
inline std::vector<double> aggregation_weights(std::span<const std::size_t> n, std::span<const double> c) {
  if (n.size() != c.size() || n.empty()) throw InvalidInput("aggregation_weights: size mismatch");
  double total_n = 0.0;
  for (auto v : n) total_n += static_cast<double>(v);
  std::vector<double> w(n.size());
  if (std::all_of(c.begin(), c.end(), [&](double v) { return v == c[0]; }) && c[0] > 0.0) {
    for (std::size_t k = 0; k < n.size(); ++k) w[k] = static_cast<double>(n[k]) / total_n;
    return w;
  }
  double denom = 0.0;
  for (std::size_t k = 0; k < n.size(); ++k) denom += static_cast<double>(n[k]) * c[k];
  if (!(denom > 0.0)) throw DegenerateCredibility();
  for (std::size_t k = 0; k < n.size(); ++k) w[k] = static_cast<double>(n[k]) * c[k] / denom;
  return w;
}

/// Coordinatewise convex combination sum_k W^k M^k.
inline ModelParams aggregate(std::span<const ModelParams> models, std::span<const double> w) {
  if (models.empty() || models.size() != w.size()) throw InvalidInput("aggregate: need one weight per model");
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw InvalidInput("aggregate: negative weight");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) throw InvalidInput("aggregate: weights must sum to 1");
  for (const auto& m : models)
    if (!m.aggregable_with(models[0])) throw InvalidInput("aggregate: architecture mismatch");

  const std::size_t p = models[0].size();
  std::vector<double> out(p, 0.0);
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto v = models[k].values();
    for (std::size_t i = 0; i < p; ++i) out[i] += w[k] * v[i];
  }
  // Rounding can land a combination one ulp outside the hull.
  for (std::size_t i = 0; i < p; ++i) {
    double lo = models[0][i], hi = models[0][i];
    for (const auto& m : models) {
      lo = std::min(lo, m[i]);
      hi = std::max(hi, m[i]);
    }
    out[i] = std::clamp(out[i], lo, hi);
  }
  return {models[0].arch(), std::move(out)};
}

inline ServerState make_server(ModelParams global, Dataset benchmark, std::span<const ClientState> clients,
                               double alpha = 1.0, Reduction reduction = Reduction::mean, bool standardize_e = true) {
  if (clients.empty()) throw InvalidInput("make_server: no clients");
  ServerState s;
  s.global_model = std::move(global);
  s.benchmark = std::move(benchmark);
  s.alpha = alpha;
  s.reduction = reduction;
  s.standardize_e = standardize_e;
  std::vector<std::size_t> n;
  for (const auto& c : clients) n.push_back(c.n());
  const double k = static_cast<double>(clients.size());
  s.credibilities.assign(clients.size(), clients.size() == 1 ? 1.0 : 1.0 - 1.0 / k);
  s.weights = aggregation_weights(n, std::vector<double>(clients.size(), 1.0));
  return s;
}

struct RoundOutcome {
  ServerState server;
  std::vector<ClientState> clients;
  CredReport report;  ///< empty for FedAvg
  std::vector<std::size_t> participants;
};

namespace detail {

inline std::vector<std::size_t> select_participants(const ServerState& s, std::size_t num_clients,
                                                    std::size_t round) {
  std::vector<std::size_t> all(num_clients);
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (s.participation >= 1.0) return all;
  if (!(s.participation > 0.0)) throw InvalidInput("participation must be in (0,1]");
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(s.participation * static_cast<double>(num_clients))));
  Rng rng(derive_seed(s.participation_seed, round));
  rng.shuffle(std::span<std::size_t>(all));
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

inline SgdConfig round_sgd(const SgdConfig& base, const ClientState& client, std::size_t round) {
  SgdConfig cfg = base;
  cfg.seed = derive_seed(derive_seed(base.seed, client.seed), round);
  return cfg;
}

inline std::vector<double> renormalized(std::span<const double> w, std::span<const std::size_t> subset) {
  if (subset.size() == w.size()) return {w.begin(), w.end()};
  std::vector<double> out;
  double total = 0.0;
  for (auto k : subset) total += w[k];
  for (auto k : subset) out.push_back(total > 0.0 ? w[k] / total : 1.0 / static_cast<double>(subset.size()));
  return out;
}

/// Broadcast, local training and aggregation shared by both aggregators.
/// Returns the aggregation weights that were applied.
inline std::vector<double> train_and_aggregate(RoundOutcome& out, const SgdConfig& sgd,
                                               std::span<const double> weights, std::size_t round,
                                               MessageLog* log) {
  const ModelParams start = out.server.global_model;
  std::vector<ModelParams> locals;
  for (auto k : out.participants) {
    auto& client = out.clients[k];
    if (log) log->messages.push_back({round, client.id, Direction::down, start.size(), 0});
    client.local_model = client_update(start, client.data, round_sgd(sgd, client, round));
    locals.push_back(client.local_model);
  }
  auto applied = renormalized(weights, out.participants);
  out.server.global_model = aggregate(locals, applied);
  return applied;
}

}  // namespace detail

/// One FOCUS round. Aggregation consumes the weights computed in the previous
/// round; the weights derived from this round's credibilities are stored on
/// the returned server for the next one.
inline RoundOutcome focus_round(const ServerState& server, const std::vector<ClientState>& clients,
                                const SgdConfig& sgd, MessageLog* log = nullptr) {
  const std::size_t t = server.round + 1;
  if (clients.size() != server.weights.size()) throw InvalidInput("focus_round: client count does not match server");
  try {
    RoundOutcome out{server, clients, {}, detail::select_participants(server, clients.size(), t)};
    const auto applied = detail::train_and_aggregate(out, sgd, server.weights, t, log);

    std::vector<double> ls, ll, e;
    for (auto k : out.participants) {
      const auto& client = out.clients[k];
      ls.push_back(model_test(client.local_model, out.server.benchmark, server.reduction));
      // Evaluated on the client's side; only the scalar travels to the server.
      ll.push_back(model_test(out.server.global_model, client.data, server.reduction));
      e.push_back(mutual_cross_entropy(ls.back(), ll.back()));
      if (log) log->messages.push_back({t, client.id, Direction::up, client.local_model.size(), 1});
    }

    std::vector<double> scaled = e;
    if (server.standardize_e) {
      const double mean = std::accumulate(e.begin(), e.end(), 0.0) / static_cast<double>(e.size());
      if (mean > 0.0)
        for (auto& v : scaled) v /= mean;
    }
    const auto c = credibilities(scaled, server.alpha);
    for (std::size_t i = 0; i < out.participants.size(); ++i) out.server.credibilities[out.participants[i]] = c[i];

    std::vector<std::size_t> n;
    for (const auto& client : out.clients) n.push_back(client.n());
    out.server.weights = aggregation_weights(n, out.server.credibilities);
    out.server.round = t;

    for (std::size_t i = 0; i < out.participants.size(); ++i) {
      const auto k = out.participants[i];
      out.report.rows.push_back({t, out.clients[k].id, ls[i], ll[i], e[i], c[i], out.server.weights[k], applied[i]});
    }
    return out;
  } catch (const RoundError&) {
    throw;
  } catch (const std::exception& ex) {
    throw RoundError(t, ex.what());
  }
}

/// One FedAvg round: fixed weights n_k / n, no credibility exchange.
inline RoundOutcome fedavg_round(const ServerState& server, const std::vector<ClientState>& clients,
                                 const SgdConfig& sgd, MessageLog* log = nullptr) {
  const std::size_t t = server.round + 1;
  try {
    RoundOutcome out{server, clients, {}, detail::select_participants(server, clients.size(), t)};
    std::vector<std::size_t> n;
    for (const auto& client : clients) n.push_back(client.n());
    const auto fixed = aggregation_weights(n, std::vector<double>(clients.size(), 1.0));
    detail::train_and_aggregate(out, sgd, fixed, t, log);
    if (log)
      for (auto k : out.participants)
        log->messages.push_back({t, out.clients[k].id, Direction::up, out.clients[k].local_model.size(), 0});
    out.server.weights = fixed;
    out.server.round = t;
    return out;
  } catch (const RoundError&) {
    throw;
  } catch (const std::exception& ex) {
    throw RoundError(t, ex.what());
  }
}

namespace io {

inline void write_cred_header(std::ostream& out) { out << "round,client,ls,ll,e,c,w\n"; }

inline void write_cred_rows(const CredReport& report, std::ostream& out) {
  for (const auto& r : report.rows)
    out << r.round << ',' << r.client << ',' << format_double(r.ls) << ',' << format_double(r.ll) << ','
        << format_double(r.e) << ',' << format_double(r.c) << ',' << format_double(r.w) << '\n';
}

inline constexpr char kModelMagic[9] = "FOCUSMP1";

/// `FOCUSMP1`, u32 input_dim, u32 num_classes, u32 hidden count, u32 widths...,
/// then every parameter as little-endian f64.
inline void write_checkpoint(const ModelParams& m, std::ostream& out) {
  out.write(kModelMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(m.arch().input_dim));
  detail::put_u32(out, static_cast<std::uint32_t>(m.arch().num_classes));
  detail::put_u32(out, static_cast<std::uint32_t>(m.arch().hidden_dims.size()));
  for (auto h : m.arch().hidden_dims) detail::put_u32(out, static_cast<std::uint32_t>(h));
  for (double v : m.values()) detail::put_f64(out, v);
}

inline ModelParams read_checkpoint(std::istream& in) {
  detail::expect_magic(in, kModelMagic);
  ArchSpec arch;
  arch.input_dim = detail::get_u32(in);
  arch.num_classes = detail::get_u32(in);
  const std::size_t hidden = detail::get_u32(in);
  for (std::size_t i = 0; i < hidden; ++i) arch.hidden_dims.push_back(detail::get_u32(in));
  arch.validate();
  std::vector<double> values(arch.parameter_count());
  for (auto& v : values) v = detail::get_f64(in);
  return {arch, std::move(values)};
}

}  // namespace io
}  // namespace focus
