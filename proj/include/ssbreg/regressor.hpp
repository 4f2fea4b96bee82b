#pragma once

// Small feed-forward slice regressor trained with the ordering loss.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "metaio.hpp"
#include "random.hpp"
#include "ssbr_loss.hpp"
#include "volume.hpp"

namespace ssbreg {

enum class Activation { Identity, Tanh, Relu };

inline const char *activation_name(Activation a) {
  switch (a) {
  case Activation::Identity: return "identity";
  case Activation::Tanh: return "tanh";
  case Activation::Relu: return "relu";
  }
  return "?";
}

inline Activation parse_activation(const std::string &name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  throw ParseError("activation", "unknown activation '" + name + "'");
}

struct DenseLayer {
  std::size_t inputs = 0, outputs = 0;
  std::vector<double> weights; // outputs x inputs, row-major
  std::vector<double> bias;    // outputs
  Activation activation = Activation::Identity;

  friend bool operator==(const DenseLayer &, const DenseLayer &) = default;
};

struct RegressorParams {
  std::size_t feature_size = 16; // slices are reduced to feature_size x feature_size
  std::vector<DenseLayer> layers;

  std::size_t input_size() const { return layers.empty() ? 0 : layers.front().inputs; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw ValidationError("layers", "regressor has no layers");
    if (input_size() != feature_size * feature_size)
      throw ValidationError("layers", "input size does not match feature_size^2");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto &l = layers[i];
      if (l.weights.size() != l.inputs * l.outputs || l.bias.size() != l.outputs)
        throw ValidationError("layers", "layer " + std::to_string(i) + " has inconsistent shape");
      if (i > 0 && l.inputs != layers[i - 1].outputs)
        throw ValidationError("layers", "layer " + std::to_string(i) + " input size mismatch");
      for (double w : l.weights)
        if (!std::isfinite(w)) throw ValidationError("layers", "non-finite weight");
      for (double b : l.bias)
        if (!std::isfinite(b)) throw ValidationError("layers", "non-finite bias");
    }
    if (layers.back().outputs != 1) throw ValidationError("layers", "output size must be 1");
  }

  friend bool operator==(const RegressorParams &, const RegressorParams &) = default;
};

/// Randomly initialised regressor: feature_size^2 inputs, `hidden_activation`
/// hidden layers, linear output.
inline RegressorParams make_regressor(std::size_t feature_size, std::vector<std::size_t> hidden,
                                      std::uint64_t seed,
                                      Activation hidden_activation = Activation::Relu) {
  if (feature_size < 1) throw ValidationError("feature_size", "must be >= 1");
  RegressorParams p;
  p.feature_size = feature_size;
  Rng rng = Rng::stream(seed, 0xD1CE);
  std::size_t in = feature_size * feature_size;
  hidden.push_back(1);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    DenseLayer l;
    l.inputs = in;
    l.outputs = hidden[i];
    l.activation = i + 1 < hidden.size() ? hidden_activation : Activation::Identity;
    l.weights.resize(l.inputs * l.outputs);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double &w : l.weights) w = scale * rng.normal();
    l.bias.assign(l.outputs, 0.0);
    p.layers.push_back(std::move(l));
    in = hidden[i];
  }
  return p;
}

// ---------------------------------------------------------------------------
// Features

inline constexpr double kFeatureScale = 1.0 / 250.0;

/// Slice k resampled to 128x128, box-averaged down to feature_size^2 and scaled.
inline std::vector<double> slice_features(const Volume &vol, std::size_t k,
                                          std::size_t feature_size) {
  constexpr std::size_t full = 128;
  if (feature_size < 1 || feature_size > full)
    throw ValidationError("feature_size", "must lie in [1, 128]");
  const Image2D img = resample_slice(vol, k, full, full);
  std::vector<double> sum(feature_size * feature_size, 0.0);
  std::vector<double> count(feature_size * feature_size, 0.0);
  for (std::size_t y = 0; y < full; ++y) {
    const std::size_t fy = y * feature_size / full;
    for (std::size_t x = 0; x < full; ++x) {
      const std::size_t f = fy * feature_size + x * feature_size / full;
      sum[f] += img(x, y);
      count[f] += 1.0;
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = sum[i] / count[i] * kFeatureScale;
  return sum;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace detail {

inline void dense_forward(const DenseLayer &l, std::span<const double> in, std::span<double> out) {
  for (std::size_t o = 0; o < l.outputs; ++o) {
    const double *w = l.weights.data() + o * l.inputs;
    double acc = l.bias[o];
    for (std::size_t i = 0; i < l.inputs; ++i) acc += w[i] * in[i];
    switch (l.activation) {
    case Activation::Identity: out[o] = acc; break;
    case Activation::Tanh: out[o] = std::tanh(acc); break;
    case Activation::Relu: out[o] = acc > 0.0 ? acc : 0.0; break;
    }
  }
}

} // namespace detail

inline double regressor_forward(const RegressorParams &p, std::span<const double> features) {
  if (p.layers.empty()) throw ValidationError("layers", "regressor has no layers");
  if (features.size() != p.input_size())
    throw ValidationError("features", "expected " + std::to_string(p.input_size()) +
                                          " values, got " + std::to_string(features.size()));
  std::vector<double> cur(features.begin(), features.end()), next;
  for (const auto &l : p.layers) {
    next.assign(l.outputs, 0.0);
    detail::dense_forward(l, cur, next);
    cur.swap(next);
  }
  return cur.front();
}

/// Activations of one forward pass, kept for backpropagation.
struct ForwardTape {
  std::span<const double> input;
  std::vector<std::vector<double>> acts; // one vector per layer
};

/// Accumulates parameter gradients for a sequence of (input, dL/dscore) pairs.
class RegressorGradient {
public:
  explicit RegressorGradient(const RegressorParams &p) : params_(p) {
    for (const auto &l : p.layers) {
      dw_.emplace_back(l.weights.size(), 0.0);
      db_.emplace_back(l.bias.size(), 0.0);
    }
  }

  /// Forward pass recording activations in `tape`; returns the score.
  double forward(std::span<const double> features, ForwardTape &tape) const {
    tape.input = features;
    tape.acts.resize(params_.layers.size());
    std::span<const double> cur = features;
    for (std::size_t i = 0; i < params_.layers.size(); ++i) {
      tape.acts[i].resize(params_.layers[i].outputs);
      detail::dense_forward(params_.layers[i], cur, tape.acts[i]);
      cur = tape.acts[i];
    }
    return tape.acts.back().front();
  }

  /// Backpropagate dL/dscore through the pass recorded in `tape`.
  void backward(const ForwardTape &tape, double dscore) {
    delta_.assign(1, dscore);
    for (std::size_t li = params_.layers.size(); li-- > 0;) {
      const auto &l = params_.layers[li];
      const auto &act = tape.acts[li];
      if (l.activation == Activation::Tanh)
        for (std::size_t o = 0; o < l.outputs; ++o) delta_[o] *= 1.0 - act[o] * act[o];
      else if (l.activation == Activation::Relu)
        for (std::size_t o = 0; o < l.outputs; ++o)
          if (!(act[o] > 0.0)) delta_[o] = 0.0;
      std::span<const double> in = li == 0 ? tape.input : std::span<const double>(tape.acts[li - 1]);
      prev_.assign(li == 0 ? 0 : l.inputs, 0.0);
      for (std::size_t o = 0; o < l.outputs; ++o) {
        const double d = delta_[o];
        db_[li][o] += d;
        double *dw = dw_[li].data() + o * l.inputs;
        for (std::size_t i = 0; i < l.inputs; ++i) dw[i] += d * in[i];
        if (li > 0) {
          const double *w = l.weights.data() + o * l.inputs;
          for (std::size_t i = 0; i < l.inputs; ++i) prev_[i] += d * w[i];
        }
      }
      delta_.swap(prev_);
    }
  }

  void apply(RegressorParams &p, double learning_rate) const {
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
      auto &l = p.layers[li];
      for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] -= learning_rate * dw_[li][i];
      for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= learning_rate * db_[li][i];
    }
  }

  const std::vector<std::vector<double>> &weight_grads() const { return dw_; }
  const std::vector<std::vector<double>> &bias_grads() const { return db_; }

private:
  const RegressorParams &params_;
  std::vector<std::vector<double>> dw_, db_;
  std::vector<double> delta_, prev_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t m = 8;
  double learning_rate = 1e-3;
  std::size_t iterations = 2000;
  std::uint64_t seed = 0;
  std::size_t feature_size = 16;
  std::vector<std::size_t> hidden{32};
  Activation hidden_activation = Activation::Relu;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size", "must be >= 1");
    if (m < 3) throw ValidationError("m", "must be >= 3");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ValidationError("learning_rate", "must be finite and >= 0");
    if (feature_size < 1 || feature_size > 128)
      throw ValidationError("feature_size", "must lie in [1, 128]");
  }
};

struct TrainResult {
  RegressorParams params;
  std::vector<double> loss_trace; // batch loss before each update
};

/// Per-slice features of every volume, computed once up front.
using FeatureBank = std::vector<std::vector<std::vector<double>>>;

inline FeatureBank compute_features(std::span<const Volume> volumes, std::size_t feature_size) {
  FeatureBank bank(volumes.size());
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    bank[v].resize(volumes[v].dims().nz);
    for (std::size_t k = 0; k < volumes[v].dims().nz; ++k)
      bank[v][k] = slice_features(volumes[v], k, feature_size);
  }
  return bank;
}

/// Gradient-descent training of `init` on unlabeled volumes. Each iteration draws
/// batch_size stacks (volume chosen uniformly), scores them, and takes one step
/// on the batch loss. Deterministic for a fixed seed.
inline TrainResult train_regressor(std::span<const Volume> volumes, const TrainConfig &cfg,
                                   RegressorParams init,
                                   const std::function<void(std::size_t, double)> &progress = {}) {
  cfg.validate();
  init.validate();
  if (volumes.empty()) throw ValidationError("volumes", "need at least one volume");
  if (init.feature_size != cfg.feature_size)
    throw ValidationError("feature_size", "does not match the regressor's input");
  for (const auto &v : volumes)
    if (v.dims().nz < cfg.m)
      throw VolumeTooShortError("volume has " + std::to_string(v.dims().nz) +
                                " slices, stacks need " + std::to_string(cfg.m));

  const FeatureBank bank = compute_features(volumes, cfg.feature_size);
  TrainResult result{std::move(init), {}};
  result.loss_trace.reserve(cfg.iterations);
  Rng rng = Rng::stream(cfg.seed, 0x7A1);
  std::vector<StackSample> samples(cfg.batch_size);
  std::vector<ScoreStack> scores(cfg.batch_size, ScoreStack(cfg.m));
  std::vector<ForwardTape> tapes(cfg.batch_size * cfg.m);

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto v = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(volumes.size()) - 1));
      samples[b] = sample_stack(volumes[v], cfg.m, rng, v);
    }
    RegressorGradient grad(result.params);
    for (std::size_t b = 0; b < cfg.batch_size; ++b)
      for (std::size_t i = 0; i < cfg.m; ++i)
        scores[b][i] = grad.forward(bank[samples[b].volume_id][samples[b].slice_indices[i]],
                                    tapes[b * cfg.m + i]);
    const double loss = loss_ssbr(scores);
    if (!std::isfinite(loss)) throw TrainingDivergedError(it);
    result.loss_trace.push_back(loss);
    const auto dscores = grad_loss_ssbr(scores);
    for (std::size_t b = 0; b < cfg.batch_size; ++b)
      for (std::size_t i = 0; i < cfg.m; ++i) grad.backward(tapes[b * cfg.m + i], dscores[b][i]);
    grad.apply(result.params, cfg.learning_rate);
    if (progress) progress(it, loss);
  }
  return result;
}

inline TrainResult train_regressor(std::span<const Volume> volumes, const TrainConfig &cfg) {
  return train_regressor(volumes, cfg, make_regressor(cfg.feature_size, cfg.hidden, cfg.seed, cfg.hidden_activation));
}

// ---------------------------------------------------------------------------
// Parameter files

inline void write_params(const RegressorParams &p, const std::filesystem::path &path) {
  p.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ssbreg-regressor 1\n";
  out << "feature_size " << p.feature_size << '\n';
  out << "layers " << p.layers.size() << '\n';
  for (const auto &l : p.layers) {
    out << "dense " << l.inputs << ' ' << l.outputs << ' '
        << activation_name(l.activation) << '\n';
    for (std::size_t o = 0; o < l.outputs; ++o) {
      for (std::size_t i = 0; i < l.inputs; ++i)
        out << (i ? " " : "") << format_double(l.weights[o * l.inputs + i]);
      out << '\n';
    }
    for (std::size_t o = 0; o < l.outputs; ++o) out << (o ? " " : "") << format_double(l.bias[o]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline RegressorParams read_params(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto expect = [&](const std::string &word) {
    std::string w;
    if (!(in >> w) || w != word) throw ParseError(word, "expected '" + word + "' in " + path.string());
  };
  auto read_double = [&](const char *what) {
    std::string tok;
    if (!(in >> tok)) throw TruncationError(path.string() + ": unexpected end in " + what);
    double v;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || p != tok.data() + tok.size())
      throw ParseError(what, "malformed number '" + tok + "'");
    return v;
  };
  expect("ssbreg-regressor");
  int version = 0;
  if (!(in >> version) || version != 1) throw ParseError("version", "unsupported version");
  RegressorParams p;
  std::size_t n_layers = 0;
  expect("feature_size");
  if (!(in >> p.feature_size)) throw ParseError("feature_size", "malformed");
  expect("layers");
  if (!(in >> n_layers) || n_layers == 0) throw ParseError("layers", "malformed layer count");
  for (std::size_t li = 0; li < n_layers; ++li) {
    DenseLayer l;
    std::string act;
    expect("dense");
    if (!(in >> l.inputs >> l.outputs >> act)) throw ParseError("dense", "malformed layer header");
    l.activation = parse_activation(act);
    l.weights.resize(l.inputs * l.outputs);
    l.bias.resize(l.outputs);
    for (double &w : l.weights) w = read_double("weights");
    for (double &b : l.bias) b = read_double("bias");
    p.layers.push_back(std::move(l));
  }
  p.validate();
  return p;
}

inline void write_loss_trace(std::span<const double> trace, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) out << i << ',' << format_double(trace[i]) << '\n';
}

} // namespace ssbreg
