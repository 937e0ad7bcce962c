// Paired FOCUS / FedAvg runs on the noisy desk-scale scenario over a few seeds.
#include <cstdio>
#include <cstdlib>

#include "focus/focus.hpp"

int main(int argc, char** argv) {
  using namespace focus;
  const int seeds = argc > 1 ? std::atoi(argv[1]) : 3;
  std::vector<double> deltas;
  for (int seed = 1; seed <= seeds; ++seed) {
    ExperimentConfig a = noisy_scenario(static_cast<std::uint64_t>(seed));
    ExperimentConfig b = a;
    b.aggregator = Aggregator::fedavg;
    const auto rep = compare(a, b);
    deltas.push_back(rep.accuracy_delta.back());
    std::printf("seed %d  focus %.4f  fedavg %.4f  noisy-client weight %.3f\n", seed, rep.a.final_accuracy(),
                rep.b.final_accuracy(), rep.a.final_weights.back());
  }
  const auto s = summarize(deltas);
  std::printf("accuracy delta: %.2f +/- %.2f points\n", 100 * s.mean, 100 * s.stddev);
}
