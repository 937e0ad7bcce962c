#pragma once

// Reference computations used only by tests. They deliberately avoid the
// library's code paths for the quantity they check.

#include <cmath>
#include <functional>
#include <vector>

#include "focus/focus.hpp"

namespace focus::oracle {

/// Central finite difference of `loss` with respect to coordinate i.
inline double central_difference(const ModelParams& m, std::size_t i, double h,
                                 const std::function<double(const ModelParams&)>& loss) {
  std::vector<double> plus(m.values().begin(), m.values().end());
  std::vector<double> minus = plus;
  plus[i] += h;
  minus[i] -= h;
  return (loss(ModelParams(m.arch(), plus)) - loss(ModelParams(m.arch(), minus))) / (2.0 * h);
}

/// Mean cross-entropy written out directly from predict_proba.
inline double naive_mean_ce(const ModelParams& m, const Dataset& d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) total += -std::log(predict_proba(m, d.row(i))[d.label(i)]);
  return total / static_cast<double>(d.size());
}

/// FedAvg as written: sum_k (n_k / n) M^k, accumulated per coordinate.
inline std::vector<double> fedavg_reference(const std::vector<ModelParams>& models, const std::vector<std::size_t>& n) {
  double total = 0.0;
  for (auto v : n) total += static_cast<double>(v);
  std::vector<double> out(models.at(0).size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < models.size(); ++k) acc += static_cast<double>(n[k]) * models[k][i];
    out[i] = acc / total;
  }
  return out;
}

/// 1 - exp(a E_k) / sum_i exp(a E_i) without any stabilisation.
inline std::vector<double> naive_credibilities(const std::vector<double>& e, double alpha) {
  double total = 0.0;
  for (double v : e) total += std::exp(alpha * v);
  std::vector<double> c;
  for (double v : e) c.push_back(1.0 - std::exp(alpha * v) / total);
  return c;
}

/// Random dataset with Gaussian features and uniform labels.
inline Dataset random_dataset(std::size_t n, std::size_t dim, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n * dim);
  for (auto& v : x) v = rng.normal();
  std::vector<std::uint32_t> y(n);
  for (auto& v : y) v = static_cast<std::uint32_t>(rng.below(classes));
  return Dataset(dim, classes, std::move(x), std::move(y));
}

/// Parameters drawn uniformly from [-scale, scale].
inline ModelParams random_model(const ArchSpec& arch, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(arch.parameter_count());
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return {arch, std::move(v)};
}

}  // namespace focus::oracle
