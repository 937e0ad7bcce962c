#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "focus/dataset.hpp"
#include "focus/error.hpp"
#include "focus/rng.hpp"

namespace focus {

/// Layer widths of a fully connected classifier. Empty `hidden_dims` gives
/// multinomial logistic (softmax) regression; hidden layers use tanh.
struct ArchSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 2;

  void validate() const {
    if (input_dim < 1) throw InvalidInput("arch: input_dim must be >= 1");
    if (num_classes < 2) throw InvalidInput("arch: num_classes must be >= 2");
    for (auto h : hidden_dims)
      if (h < 1) throw InvalidInput("arch: hidden widths must be >= 1");
  }

  /// Layer widths from input to output, inclusive.
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
    w.push_back(num_classes);
    return w;
  }

  std::size_t parameter_count() const {
    const auto w = widths();
    std::size_t count = 0;
    for (std::size_t l = 1; l < w.size(); ++l) count += w[l] * w[l - 1] + w[l];
    return count;
  }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Flat parameter vector. Per layer: weights (out x in, row-major) then biases.
class ModelParams {
 public:
  ModelParams() = default;

  ModelParams(ArchSpec arch, std::vector<double> values) : arch_(std::move(arch)), values_(std::move(values)) {
    arch_.validate();
    if (values_.size() != arch_.parameter_count())
      throw InvalidInput("model: expected " + std::to_string(arch_.parameter_count()) + " parameters, got " +
                         std::to_string(values_.size()));
    for (double v : values_)
      if (!std::isfinite(v)) throw InvalidInput("model: non-finite parameter");
  }

  static ModelParams zeros(const ArchSpec& arch) { return {arch, std::vector<double>(arch.parameter_count(), 0.0)}; }

  const ArchSpec& arch() const noexcept { return arch_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  bool aggregable_with(const ModelParams& other) const { return arch_ == other.arch_; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ArchSpec arch_;
  std::vector<double> values_;
};

enum class Reduction { mean, sum };

inline const char* to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }

struct SgdConfig {
  double learning_rate = 0.1;
  std::size_t local_steps = 1;
  std::optional<std::size_t> batch_size;  ///< nullopt = full batch
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) && learning_rate != 0.0) throw InvalidInput("sgd: learning_rate must be > 0");
    if (local_steps < 1) throw InvalidInput("sgd: local_steps must be >= 1");
    if (batch_size && *batch_size < 1) throw InvalidInput("sgd: batch_size must be >= 1");
  }
};

/// Probabilities below this are clamped before taking logs.
inline constexpr double kProbFloor = 1e-12;

/// Uniform(-sqrt(3/fan_in), sqrt(3/fan_in)) weights, zero biases.
inline ModelParams init_params(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  const auto w = arch.widths();
  std::vector<double> values;
  values.reserve(arch.parameter_count());
  for (std::size_t l = 1; l < w.size(); ++l) {
    const double bound = std::sqrt(3.0) / std::sqrt(static_cast<double>(w[l - 1]));
    for (std::size_t i = 0; i < w[l] * w[l - 1]; ++i) values.push_back(rng.uniform(-bound, bound));
    values.insert(values.end(), w[l], 0.0);
  }
  return {arch, std::move(values)};
}

namespace detail {

inline void softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    total += v;
  }
  for (auto& v : z) v /= total;
}

/// Forward pass keeping every layer's activations; the last entry holds
/// probabilities.
class Forward {
 public:
  explicit Forward(const ArchSpec& arch) : widths_(arch.widths()), acts_(widths_.size()) {
    for (std::size_t l = 0; l < widths_.size(); ++l) acts_[l].resize(widths_[l]);
  }

  void run(std::span<const double> params, std::span<const double> x) {
    std::copy(x.begin(), x.end(), acts_[0].begin());
    std::size_t offset = 0;
    const std::size_t layers = widths_.size() - 1;
    for (std::size_t l = 1; l <= layers; ++l) {
      const std::size_t in = widths_[l - 1], out = widths_[l];
      const double* weights = params.data() + offset;
      const double* bias = weights + out * in;
      const auto& prev = acts_[l - 1];
      auto& cur = acts_[l];
      for (std::size_t o = 0; o < out; ++o) {
        double z = bias[o];
        const double* row = weights + o * in;
        for (std::size_t i = 0; i < in; ++i) z += row[i] * prev[i];
        cur[o] = l == layers ? z : std::tanh(z);
      }
      offset += out * in + out;
    }
    softmax_inplace(acts_.back());
  }

  const std::vector<double>& probs() const { return acts_.back(); }
  const std::vector<std::vector<double>>& activations() const { return acts_; }
  const std::vector<std::size_t>& widths() const { return widths_; }

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::vector<double>> acts_;
};

inline void check_dims(const ModelParams& m, const Dataset& d) {
  if (d.empty()) throw InvalidInput("empty dataset");
  if (d.dim() != m.arch().input_dim)
    throw InvalidInput("feature dimension " + std::to_string(d.dim()) + " does not match model input " +
                       std::to_string(m.arch().input_dim));
  if (d.num_classes() != m.arch().num_classes) throw InvalidInput("class count does not match model output");
}

inline std::size_t argmax_lowest(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.size(); ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

}  // namespace detail

inline std::vector<double> predict_proba(const ModelParams& m, std::span<const double> x) {
  if (x.size() != m.arch().input_dim)
    throw InvalidInput("input has " + std::to_string(x.size()) + " features, model expects " +
                       std::to_string(m.arch().input_dim));
  detail::Forward fwd(m.arch());
  fwd.run(m.values(), x);
  return fwd.probs();
}

inline std::size_t predict(const ModelParams& m, std::span<const double> x) {
  return detail::argmax_lowest(predict_proba(m, x));
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Cross-entropy of `m` on `batch` and its gradient with respect to the
/// parameters, via backpropagation.
inline LossGrad loss_and_grad(const ModelParams& m, const Dataset& batch, Reduction reduction = Reduction::mean) {
  detail::check_dims(m, batch);
  const auto params = m.values();
  detail::Forward fwd(m.arch());
  const auto& w = fwd.widths();
  const std::size_t layers = w.size() - 1;

  std::vector<std::size_t> offsets(layers + 1, 0);
  for (std::size_t l = 1; l <= layers; ++l) offsets[l] = offsets[l - 1] + w[l] * w[l - 1] + w[l];

  LossGrad out;
  out.grad.assign(params.size(), 0.0);
  std::vector<std::vector<double>> delta(w.size());
  for (std::size_t l = 0; l < w.size(); ++l) delta[l].resize(w[l]);

  for (std::size_t s = 0; s < batch.size(); ++s) {
    fwd.run(params, batch.row(s));
    const auto& acts = fwd.activations();
    const auto y = batch.label(s);
    out.loss -= std::log(std::max(acts.back()[y], kProbFloor));

    delta[layers] = acts.back();
    delta[layers][y] -= 1.0;
    for (std::size_t l = layers; l >= 1; --l) {
      const std::size_t in = w[l - 1], outw = w[l];
      const double* weights = params.data() + offsets[l - 1];
      double* gw = out.grad.data() + offsets[l - 1];
      double* gb = gw + outw * in;
      const auto& prev = acts[l - 1];
      for (std::size_t o = 0; o < outw; ++o) {
        const double d = delta[l][o];
        gb[o] += d;
        double* grow = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += d * prev[i];
      }
      if (l > 1) {
        for (std::size_t i = 0; i < in; ++i) {
          double back = 0.0;
          for (std::size_t o = 0; o < outw; ++o) back += weights[o * in + i] * delta[l][o];
          delta[l - 1][i] = back * (1.0 - prev[i] * prev[i]);
        }
      }
    }
  }
  if (reduction == Reduction::mean) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    for (auto& g : out.grad) g *= inv;
  }
  return out;
}

/// Runs exactly `cfg.local_steps` SGD steps from `start` on `data`. Mini-batches
/// walk a permutation reshuffled at the start of every epoch.
inline ModelParams client_update(const ModelParams& start, const Dataset& data, const SgdConfig& cfg) {
  cfg.validate();
  detail::check_dims(start, data);
  std::vector<double> params(start.values().begin(), start.values().end());
  const std::size_t n = data.size();
  const std::size_t batch = cfg.batch_size ? std::min(*cfg.batch_size, n) : n;
  const bool full_batch = batch == n;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;

  Dataset minibatch;
  for (std::size_t step = 1; step <= cfg.local_steps; ++step) {
    const Dataset* current = &data;
    if (!full_batch) {
      if (cursor >= n) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      const std::size_t take = std::min(batch, n - cursor);
      minibatch = data.subset(std::span<const std::size_t>(order).subspan(cursor, take));
      cursor += take;
      current = &minibatch;
    }
    const ModelParams model(start.arch(), params);
    auto [loss, grad] = loss_and_grad(model, *current, Reduction::mean);
    if (!std::isfinite(loss)) throw TrainingDivergence(step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i] -= cfg.learning_rate * grad[i];
      if (!std::isfinite(params[i])) throw TrainingDivergence(step);
    }
  }
  return {start.arch(), std::move(params)};
}

/// 1 - misclassified / N, argmax ties resolved to the lowest class index.
inline double accuracy(const ModelParams& m, const Dataset& d) {
  detail::check_dims(m, d);
  detail::Forward fwd(m.arch());
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    fwd.run(m.values(), d.row(i));
    if (detail::argmax_lowest(fwd.probs()) != d.label(i)) ++wrong;
  }
  return 1.0 - static_cast<double>(wrong) / static_cast<double>(d.size());
}

}  // namespace focus
