// Drives the protocol by hand: four clients, one with randomized labels, a few
// FOCUS rounds, printing the per-client credibility report after each.
#include <cstdio>

#include "focus/focus.hpp"

int main() {
  using namespace focus;

  const Dataset source = synth_blobs(4, 300, 8, 3.0, 42);
  auto parts = partition(source, {.num_clients = 4, .benchmark_fraction = 0.2, .test_fraction = 0.2, .seed = 7});
  auto shards = apply_noise(std::move(parts.clients),
                            {{.kind = NoiseKind::randomize, .fraction = 1.0, .target_clients = {3}, .seed = 9}});

  const ArchSpec arch{8, {32}, 4};
  const ModelParams init = init_params(arch, 1);
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < shards.size(); ++k) clients.push_back({k, shards[k], init, k});
  ServerState server = make_server(init, parts.benchmark, clients);
  const SgdConfig sgd{.learning_rate = 0.5, .local_steps = 20, .seed = 3};

  for (int t = 0; t < 10; ++t) {
    auto out = focus_round(server, clients, sgd);
    server = std::move(out.server);
    clients = std::move(out.clients);
    std::printf("round %zu  test accuracy %.4f\n", server.round, accuracy(server.global_model, parts.test));
    for (const auto& r : out.report.rows)
      std::printf("  client %zu  LS %.3f  LL %.3f  E %.3f  C %.3f  W %.3f\n", r.client, r.ls, r.ll, r.e, r.c, r.w);
  }
}
