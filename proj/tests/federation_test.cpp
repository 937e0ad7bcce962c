#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "focus/data.hpp"
#include "focus/federation.hpp"
#include "oracles.hpp"

namespace focus {
namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

TEST(ModelTest, ZeroModelGivesLogC) {
  const auto d = oracle::random_dataset(40, 3, 4, 1);
  EXPECT_NEAR(model_test(ModelParams::zeros(ArchSpec{3, {}, 4}), d, Reduction::mean), std::log(4.0), 1e-12);
  EXPECT_NEAR(model_test(ModelParams::zeros(ArchSpec{3, {}, 4}), d, Reduction::sum), 40 * std::log(4.0), 1e-12);
}

TEST(ModelTest, ConfidentCorrectPredictorNearZero) {
  Dataset d(1, 2, {}, {});
  for (int i = 0; i < 5; ++i) {
    d.push_back(std::vector<double>{1.0}, 0);
    d.push_back(std::vector<double>{-1.0}, 1);
  }
  EXPECT_LE(model_test(ModelParams(ArchSpec{1, {}, 2}, {100, -100, 0, 0}), d), 1e-6);
  // confidently wrong stays finite thanks to the clamp
  const double wrong = model_test(ModelParams(ArchSpec{1, {}, 2}, {-1000, 1000, 0, 0}), d);
  EXPECT_NEAR(wrong, -std::log(kProbFloor), 1e-9);
}

TEST(ModelTest, AgreesWithLearnerLoss) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ArchSpec arch{4, {6}, 3};
    const auto m = oracle::random_model(arch, seed, 1.5);
    const auto d = oracle::random_dataset(25, 4, 3, seed + 50);
    for (auto r : {Reduction::mean, Reduction::sum})
      EXPECT_NEAR(model_test(m, d, r), loss_and_grad(m, d, r).loss, 1e-12);
  }
}

TEST(ModelTest, EmptyRejected) {
  EXPECT_THROW(model_test(ModelParams::zeros(ArchSpec{2, {}, 2}), Dataset::empty_like(oracle::random_dataset(1, 2, 2, 1))),
               InvalidInput);
}

TEST(MutualCrossEntropy, Sum) {
  EXPECT_EQ(mutual_cross_entropy(0, 0), 0);
  EXPECT_DOUBLE_EQ(mutual_cross_entropy(1.2, 0.3), 1.5);
  EXPECT_EQ(mutual_cross_entropy(0.7, 2.9), mutual_cross_entropy(2.9, 0.7));
}

TEST(Credibilities, HandComputedPair) {
  const auto c = credibilities(std::vector<double>{1.0, 2.0}, 1.0);
  const double logistic = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(c[0], logistic, 1e-12);
  EXPECT_NEAR(c[0], 0.7310585786300049, 1e-12);
  EXPECT_NEAR(c[1], 0.2689414213699951, 1e-12);
}

TEST(Credibilities, EqualEnergiesGiveOneMinusOneOverK) {
  for (std::size_t k = 2; k <= 9; ++k)
    for (double e : {0.0, 0.37, 55.0})
      for (double v : credibilities(std::vector<double>(k, e), 1.3)) EXPECT_NEAR(v, 1.0 - 1.0 / k, 1e-12);
}

TEST(Credibilities, SingletonAndEmpty) {
  EXPECT_EQ(credibilities(std::vector<double>{4.2}, 1.0), std::vector<double>{1.0});
  EXPECT_THROW(credibilities(std::vector<double>{}, 1.0), InvalidInput);
  EXPECT_THROW(credibilities(std::vector<double>{1, 2}, 0.0), InvalidInput);
}

TEST(Credibilities, MatchNaiveFormulaAndSumToKMinusOne) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(7);
    std::vector<double> e(k);
    for (auto& v : e) v = rng.uniform(0, 5);
    const double alpha = rng.uniform(0.01, 3);
    const auto c = credibilities(e, alpha);
    const auto ref = oracle::naive_credibilities(e, alpha);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_NEAR(c[i], ref[i], 1e-12);
      EXPECT_GT(c[i], 0.0);
      EXPECT_LT(c[i], 1.0);
    }
    EXPECT_NEAR(sum(c), static_cast<double>(k) - 1.0, 1e-12);
  }
}

TEST(Credibilities, StableForLargeEnergies) {
  const auto c = credibilities(std::vector<double>{1000.0, 1001.0}, 1.0);
  EXPECT_NEAR(c[0], 0.7310585786300049, 1e-12);
}

TEST(Credibilities, StrictlyDecreasingInOwnEnergy) {
  std::vector<double> e{0.5, 1.0, 1.5, 2.0};
  double previous = credibilities(e, 1.0)[1];
  for (int step = 0; step < 20; ++step) {
    e[1] += 0.25;
    const double now = credibilities(e, 1.0)[1];
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(Credibilities, VanishingAlphaFlattens) {
  const std::vector<double> e{0.1, 3.0, 7.5, 0.9};
  const auto c = credibilities(e, 1e-8);
  for (double v : c) EXPECT_NEAR(v, 0.75, 1e-6);
  const std::vector<std::size_t> n{10, 20, 30, 40};
  const auto w = aggregation_weights(n, c);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(w[k], n[k] / 100.0, 1e-6);
}

TEST(AggregationWeights, Examples) {
  const auto uniform = aggregation_weights(std::vector<std::size_t>{200, 200, 200, 200}, std::vector<double>(4, 0.75));
  for (double w : uniform) EXPECT_EQ(w, 0.25);
  const auto w = aggregation_weights(std::vector<std::size_t>{100, 300}, std::vector<double>{0.5, 0.25});
  EXPECT_NEAR(w[0], 0.4, 1e-15);
  EXPECT_NEAR(w[1], 0.6, 1e-15);
}

TEST(AggregationWeights, EqualCredibilityIsExactlyFedAvg) {
  const std::vector<std::size_t> n{37, 91, 12};
  const auto w = aggregation_weights(n, std::vector<double>(3, 0.6180339));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(w[k], static_cast<double>(n[k]) / 140.0);
}

TEST(AggregationWeights, SimplexAndArgmax) {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> e(5);
    for (auto& v : e) v = rng.uniform(0, 4);
    const auto w = aggregation_weights(std::vector<std::size_t>(5, 100), credibilities(e, 1.0));
    EXPECT_NEAR(sum(w), 1.0, 1e-9);
    for (double v : w) EXPECT_GE(v, 0.0);
    const auto argmin_e = std::min_element(e.begin(), e.end()) - e.begin();
    const auto argmax_w = std::max_element(w.begin(), w.end()) - w.begin();
    EXPECT_EQ(argmin_e, argmax_w);
  }
}

TEST(AggregationWeights, AllDistrustedIsDegenerate) {
  EXPECT_THROW(aggregation_weights(std::vector<std::size_t>{1, 2}, std::vector<double>{0.0, 0.0}), DegenerateCredibility);
}

TEST(Aggregate, IdentityAndMidpoint) {
  const ArchSpec arch{3, {}, 2};
  const auto a = oracle::random_model(arch, 1), b = oracle::random_model(arch, 2);
  EXPECT_EQ(aggregate(std::vector<ModelParams>{a}, std::vector<double>{1.0}), a);
  const auto mid = aggregate(std::vector<ModelParams>{a, b}, std::vector<double>{0.5, 0.5});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(mid[i], (a[i] + b[i]) / 2, 1e-15);
}

TEST(Aggregate, FedAvgWeightsMatchReference) {
  Rng rng(5);
  const ArchSpec arch{5, {7}, 3};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ModelParams> models;
    std::vector<std::size_t> n;
    const std::size_t k = 1 + rng.below(6);
    for (std::size_t i = 0; i < k; ++i) {
      models.push_back(oracle::random_model(arch, rng.next_u64(), 3.0));
      n.push_back(1 + rng.below(500));
    }
    const auto w = aggregation_weights(n, std::vector<double>(k, 1.0));
    const auto got = aggregate(models, w);
    const auto ref = oracle::fedavg_reference(models, n);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(got[i], ref[i], 1e-12);
  }
}

TEST(Aggregate, StaysInCoordinatewiseHull) {
  Rng rng(8);
  const ArchSpec arch{4, {}, 3};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ModelParams> models;
    std::vector<double> w;
    for (int i = 0; i < 4; ++i) {
      models.push_back(oracle::random_model(arch, rng.next_u64(), 10.0));
      w.push_back(rng.uniform());
    }
    const double total = sum(w);
    for (auto& v : w) v /= total;
    const auto out = aggregate(models, w);
    for (std::size_t i = 0; i < out.size(); ++i) {
      double lo = models[0][i], hi = models[0][i];
      for (const auto& m : models) lo = std::min(lo, m[i]), hi = std::max(hi, m[i]);
      EXPECT_GE(out[i], lo);
      EXPECT_LE(out[i], hi);
    }
  }
}

TEST(Aggregate, RejectsMismatch) {
  const auto a = ModelParams::zeros(ArchSpec{3, {}, 2});
  const auto b = ModelParams::zeros(ArchSpec{3, {2}, 2});
  EXPECT_THROW(aggregate(std::vector<ModelParams>{a, b}, std::vector<double>{0.5, 0.5}), InvalidInput);
  EXPECT_THROW(aggregate(std::vector<ModelParams>{a, a}, std::vector<double>{0.5, 0.6}), InvalidInput);
  EXPECT_THROW(aggregate(std::vector<ModelParams>{a, a}, std::vector<double>{1.0}), InvalidInput);
}

// ---------------------------------------------------------------------------

struct Fixture {
  ServerState server;
  std::vector<ClientState> clients;
};

Fixture make_fixture(std::size_t k, std::uint64_t seed, std::vector<std::size_t> noisy = {}, bool identical = false) {
  const auto source = synth_blobs(3, 100, 4, 3.0, seed);
  auto parts = partition(source, {.num_clients = k, .benchmark_fraction = 0.2, .seed = seed});
  std::vector<NoiseSpec> noise;
  if (!noisy.empty()) noise.push_back({.kind = NoiseKind::randomize, .fraction = 1.0, .target_clients = noisy, .seed = 1});
  auto shards = apply_noise(parts.clients, noise);
  const ArchSpec arch{4, {8}, 3};
  const auto init = init_params(arch, seed);
  Fixture f;
  for (std::size_t i = 0; i < k; ++i)
    f.clients.push_back({i, identical ? shards[0] : shards[i], init, identical ? 0 : i});
  f.server = make_server(init, parts.benchmark, f.clients);
  return f;
}

const SgdConfig kSgd{.learning_rate = 0.5, .local_steps = 5, .batch_size = 16, .seed = 11};

TEST(FocusRound, InitialWeightsAreSampleProportional) {
  const auto f = make_fixture(3, 1);
  double n = 0;
  for (const auto& c : f.clients) n += static_cast<double>(c.n());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(f.server.weights[k], f.clients[k].n() / n);
}

TEST(FocusRound, IdenticalClientsRecoverFedAvg) {
  const auto f = make_fixture(4, 2, {}, true);
  auto focus = focus_round(f.server, f.clients, kSgd);
  auto avg = fedavg_round(f.server, f.clients, kSgd);
  for (const auto& r : focus.report.rows) {
    EXPECT_EQ(r.ls, focus.report.rows[0].ls);
    EXPECT_EQ(r.ll, focus.report.rows[0].ll);
    EXPECT_NEAR(r.c, 0.75, 1e-12);
    EXPECT_NEAR(r.w, 0.25, 1e-12);
  }
  for (int t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < focus.server.global_model.size(); ++i)
      EXPECT_NEAR(focus.server.global_model[i], avg.server.global_model[i], 1e-12);
    focus = focus_round(focus.server, focus.clients, kSgd);
    avg = fedavg_round(avg.server, avg.clients, kSgd);
  }
}

TEST(FocusRound, AggregationUsesPreviousRoundWeights) {
  auto f = make_fixture(4, 3, {1});
  auto out = focus_round(f.server, f.clients, kSgd);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.report.rows[k].applied_w, f.server.weights[k]);
  for (int t = 0; t < 4; ++t) {
    const auto previous = out.server.weights;
    out = focus_round(out.server, out.clients, kSgd);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.report.rows[k].applied_w, previous[k]);
  }
}

TEST(FocusRound, ReportConsistencyAndSimplex) {
  auto f = make_fixture(4, 4, {2});
  ServerState server = f.server;
  auto clients = f.clients;
  for (std::size_t t = 1; t <= 6; ++t) {
    auto out = focus_round(server, clients, kSgd);
    EXPECT_EQ(out.server.round, t);
    double w_total = 0.0;
    for (const auto& r : out.report.rows) {
      EXPECT_EQ(r.round, t);
      EXPECT_EQ(r.e, r.ls + r.ll);
      EXPECT_GT(r.c, 0.0);
      EXPECT_LT(r.c, 1.0);
      EXPECT_GE(r.w, 0.0);
      w_total += r.w;
    }
    EXPECT_NEAR(w_total, 1.0, 1e-9);
    EXPECT_NEAR(sum(out.server.weights), 1.0, 1e-9);
    server = out.server;
    clients = out.clients;
  }
}

TEST(FocusRound, NoisyClientGetsSmallestWeight) {
  auto f = make_fixture(4, 5, {3});
  ServerState server = f.server;
  auto clients = f.clients;
  for (int t = 0; t < 10; ++t) {
    auto out = focus_round(server, clients, kSgd);
    server = out.server;
    clients = out.clients;
  }
  const auto& w = server.weights;
  EXPECT_EQ(std::min_element(w.begin(), w.end()) - w.begin(), 3);
}

TEST(FocusRound, PermutationEquivariant) {
  const auto f = make_fixture(4, 6, {0});
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<ClientState> permuted;
  for (auto k : perm) permuted.push_back(f.clients[k]);
  ServerState ps = f.server;
  for (std::size_t i = 0; i < 4; ++i) ps.weights[i] = f.server.weights[perm[i]];

  auto a = focus_round(f.server, f.clients, kSgd);
  auto b = focus_round(ps, permuted, kSgd);
  for (int t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& ra = a.report.rows[perm[i]];
      const auto& rb = b.report.rows[i];
      EXPECT_EQ(ra.client, rb.client);
      EXPECT_NEAR(ra.ls, rb.ls, 1e-12);
      EXPECT_NEAR(ra.ll, rb.ll, 1e-12);
      EXPECT_NEAR(ra.c, rb.c, 1e-12);
      EXPECT_NEAR(ra.w, rb.w, 1e-12);
    }
    for (std::size_t i = 0; i < a.server.global_model.size(); ++i)
      EXPECT_NEAR(a.server.global_model[i], b.server.global_model[i], 1e-12);
    a = focus_round(a.server, a.clients, kSgd);
    b = focus_round(b.server, b.clients, kSgd);
  }
}

TEST(FocusRound, MessageAccounting) {
  const auto f = make_fixture(4, 7);
  MessageLog log;
  auto out = focus_round(f.server, f.clients, kSgd, &log);
  out = focus_round(out.server, out.clients, kSgd, &log);
  for (std::size_t t : {1u, 2u}) {
    EXPECT_EQ(log.count(t), 8u);
    for (const auto& m : log.messages) {
      if (m.round != t) continue;
      EXPECT_EQ(m.param_count, f.server.global_model.size());
      EXPECT_EQ(m.extra_scalars, m.direction == Direction::up ? 1u : 0u);
    }
  }
  MessageLog avg_log;
  fedavg_round(f.server, f.clients, kSgd, &avg_log);
  EXPECT_EQ(avg_log.count(1), 8u);
  for (const auto& m : avg_log.messages) EXPECT_EQ(m.extra_scalars, 0u);
}

TEST(FocusRound, DivergenceCarriesRoundIndex) {
  auto f = make_fixture(2, 8);
  auto out = focus_round(f.server, f.clients, kSgd);
  SgdConfig bad = kSgd;
  bad.learning_rate = 1e308;
  try {
    focus_round(out.server, out.clients, bad);
    FAIL() << "expected a round error";
  } catch (const RoundError& e) {
    EXPECT_EQ(e.round(), 2u);
    EXPECT_NE(std::string(e.what()).find("diverged"), std::string::npos);
  }
}

TEST(FocusRound, SingleClientDegradesToLocalTraining) {
  auto f = make_fixture(1, 9);
  const auto out = focus_round(f.server, f.clients, kSgd);
  EXPECT_EQ(out.report.rows[0].c, 1.0);
  EXPECT_EQ(out.report.rows[0].w, 1.0);
  EXPECT_EQ(out.server.global_model, out.clients[0].local_model);
}

TEST(FocusRound, PartialParticipation) {
  auto f = make_fixture(6, 10, {5});
  f.server.participation = 0.5;
  f.server.participation_seed = 3;
  MessageLog log;
  auto out = focus_round(f.server, f.clients, kSgd, &log);
  EXPECT_EQ(out.participants.size(), 3u);
  EXPECT_EQ(out.report.rows.size(), 3u);
  EXPECT_EQ(log.count(1), 6u);
  EXPECT_NEAR(sum(out.server.weights), 1.0, 1e-9);
  double applied = 0.0;
  for (const auto& r : out.report.rows) applied += r.applied_w;
  EXPECT_NEAR(applied, 1.0, 1e-12);
}

TEST(FedAvgRound, WeightsFixedAcrossRounds) {
  auto f = make_fixture(3, 11, {0});
  auto out = fedavg_round(f.server, f.clients, kSgd);
  const auto w0 = out.server.weights;
  for (int t = 0; t < 4; ++t) {
    out = fedavg_round(out.server, out.clients, kSgd);
    EXPECT_EQ(out.server.weights, w0);
  }
  EXPECT_TRUE(out.report.rows.empty());
}

TEST(FedAvgRound, SingleClientGlobalEqualsLocal) {
  auto f = make_fixture(1, 12);
  auto out = fedavg_round(f.server, f.clients, kSgd);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(out.server.global_model, out.clients[0].local_model);
    out = fedavg_round(out.server, out.clients, kSgd);
  }
}

TEST(FederationIo, CheckpointRoundTripAndCredCsv) {
  const auto m = oracle::random_model(ArchSpec{3, {4, 2}, 5}, 9);
  std::stringstream buf;
  io::write_checkpoint(m, buf);
  EXPECT_EQ(buf.str().substr(0, 8), "FOCUSMP1");
  EXPECT_EQ(io::read_checkpoint(buf), m);

  CredReport rep;
  rep.rows.push_back({3, 1, 0.5, 0.25, 0.75, 0.6, 0.3, 0.25});
  std::stringstream csv;
  io::write_cred_header(csv);
  io::write_cred_rows(rep, csv);
  EXPECT_EQ(csv.str(), "round,client,ls,ll,e,c,w\n3,1,0.5,0.25,0.75,0.59999999999999998,0.29999999999999999\n");
}

}  // namespace
}  // namespace focus
