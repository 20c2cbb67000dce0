#pragma once

// Dense feed-forward networks over flat parameter vectors, reverse-mode
// gradients for batch losses, and the Adam optimizer.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "poem/random.hpp"

namespace poem {

// Raised when a loss, activation or gradient stops being finite.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { Tanh, Linear };

struct MlpSpec {
  std::vector<int> layer_sizes;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Linear;

  void validate() const {
    if (layer_sizes.size() < 2) throw std::invalid_argument("MlpSpec: need at least input and output sizes");
    for (int s : layer_sizes)
      if (s < 1) throw std::invalid_argument("MlpSpec: layer sizes must be >= 1");
  }

  std::size_t num_layers() const { return layer_sizes.size() - 1; }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }

  std::size_t num_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
      n += static_cast<std::size_t>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
    return n;
  }

  Activation activation(std::size_t layer) const {
    return layer + 1 == num_layers() ? output_activation : hidden_activation;
  }

  bool operator==(const MlpSpec&) const = default;
};

struct ParamRange {
  std::size_t offset = 0;
  std::size_t size = 0;

  std::size_t end() const { return offset + size; }
  bool operator==(const ParamRange&) const = default;
};

struct ParamBlock {
  std::string name;
  ParamRange range;

  bool operator==(const ParamBlock&) const = default;
};

using ParamLayout = std::vector<ParamBlock>;

// Blocks are "<prefix>layer<l>.weight" / "<prefix>layer<l>.bias". Weights of
// layer l are stored column-major as a (fan_out x fan_in) matrix.
inline ParamLayout mlp_layout(const MlpSpec& spec, std::string_view prefix = "", std::size_t offset = 0) {
  spec.validate();
  ParamLayout layout;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto fan_in = static_cast<std::size_t>(spec.layer_sizes[l]);
    const auto fan_out = static_cast<std::size_t>(spec.layer_sizes[l + 1]);
    const std::string base = std::string(prefix) + "layer" + std::to_string(l);
    layout.push_back({base + ".weight", {offset, fan_in * fan_out}});
    offset += fan_in * fan_out;
    layout.push_back({base + ".bias", {offset, fan_out}});
    offset += fan_out;
  }
  return layout;
}

// Flat, ordered parameter storage plus the named ranges that partition it.
class ParamVector {
 public:
  ParamVector() = default;

  ParamVector(std::vector<double> values, ParamLayout layout)
      : values_(std::move(values)), layout_(std::move(layout)) {
    std::size_t cursor = 0;
    for (const auto& block : layout_) {
      if (block.range.offset != cursor) throw std::invalid_argument("ParamVector: layout blocks must be contiguous and ordered");
      cursor = block.range.end();
    }
    if (cursor != values_.size()) throw std::invalid_argument("ParamVector: layout does not cover the value array");
  }

  static ParamVector zeros(ParamLayout layout) {
    const std::size_t n = layout.empty() ? 0 : layout.back().range.end();
    return ParamVector(std::vector<double>(n, 0.0), std::move(layout));
  }

  static ParamVector zeros_like(const ParamVector& other) { return zeros(other.layout_); }

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  const ParamLayout& layout() const { return layout_; }
  bool same_layout(const ParamVector& other) const { return layout_ == other.layout_; }

  std::span<double> slice(ParamRange r) { return std::span<double>(values_).subspan(r.offset, r.size); }
  std::span<const double> slice(ParamRange r) const {
    return std::span<const double>(values_).subspan(r.offset, r.size);
  }

  const ParamBlock& block(std::string_view name) const {
    for (const auto& b : layout_)
      if (b.name == name) return b;
    throw std::out_of_range("ParamVector: no block named " + std::string(name));
  }

  bool operator==(const ParamVector&) const = default;

 private:
  std::vector<double> values_;
  ParamLayout layout_;
};

// Appends b after a, shifting b's ranges.
inline ParamVector concat(const ParamVector& a, const ParamVector& b) {
  std::vector<double> values(a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  ParamLayout layout = a.layout();
  for (auto block : b.layout()) {
    block.range.offset += a.size();
    layout.push_back(std::move(block));
  }
  return ParamVector(std::move(values), std::move(layout));
}

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_out x fan_in
  Eigen::VectorXd bias;
};

inline std::vector<DenseLayer> unflatten(const MlpSpec& spec, std::span<const double> params) {
  if (params.size() != spec.num_params()) throw std::invalid_argument("unflatten: parameter count mismatch");
  std::vector<DenseLayer> layers;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[l], fan_out = spec.layer_sizes[l + 1];
    DenseLayer layer;
    layer.weight = Eigen::Map<const Eigen::MatrixXd>(params.data() + offset, fan_out, fan_in);
    offset += static_cast<std::size_t>(fan_in) * fan_out;
    layer.bias = Eigen::Map<const Eigen::VectorXd>(params.data() + offset, fan_out);
    offset += fan_out;
    layers.push_back(std::move(layer));
  }
  return layers;
}

inline ParamVector flatten(const MlpSpec& spec, const std::vector<DenseLayer>& layers) {
  if (layers.size() != spec.num_layers()) throw std::invalid_argument("flatten: layer count mismatch");
  std::vector<double> values;
  values.reserve(spec.num_params());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rows() != spec.layer_sizes[l + 1] || layer.weight.cols() != spec.layer_sizes[l] ||
        layer.bias.size() != spec.layer_sizes[l + 1])
      throw std::invalid_argument("flatten: layer shape mismatch");
    values.insert(values.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
    values.insert(values.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
  return ParamVector(std::move(values), mlp_layout(spec));
}

// Fan-in scaled uniform weights (limit 1/sqrt(fan_in)), zero biases. The
// final layer's weights are multiplied by output_scale.
inline ParamVector init_params(const MlpSpec& spec, std::uint64_t seed, double output_scale = 1.0) {
  spec.validate();
  Rng rng(seed);
  std::vector<double> values;
  values.reserve(spec.num_params());
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[l], fan_out = spec.layer_sizes[l + 1];
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const double scale = (l + 1 == spec.num_layers()) ? output_scale : 1.0;
    for (int k = 0; k < fan_in * fan_out; ++k) values.push_back(scale * rng.uniform(-limit, limit));
    values.insert(values.end(), static_cast<std::size_t>(fan_out), 0.0);
  }
  return ParamVector(std::move(values), mlp_layout(spec));
}

// Activations kept from a batched forward pass; column j is sample j.
// activations[0] is the input, activations[l + 1] the output of layer l.
struct MlpTape {
  std::vector<Eigen::MatrixXd> activations;

  const Eigen::MatrixXd& output() const { return activations.back(); }
};

inline MlpTape forward_batch(const MlpSpec& spec, std::span<const double> params, const Eigen::MatrixXd& inputs) {
  if (params.size() != spec.num_params()) throw std::invalid_argument("forward: parameter count mismatch");
  if (inputs.rows() != spec.input_size()) throw std::invalid_argument("forward: input dimension mismatch");
  MlpTape tape;
  tape.activations.reserve(spec.num_layers() + 1);
  tape.activations.push_back(inputs);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[l], fan_out = spec.layer_sizes[l + 1];
    Eigen::Map<const Eigen::MatrixXd> w(params.data() + offset, fan_out, fan_in);
    offset += static_cast<std::size_t>(fan_in) * fan_out;
    Eigen::Map<const Eigen::VectorXd> b(params.data() + offset, fan_out);
    offset += fan_out;
    Eigen::MatrixXd z = w * tape.activations.back();
    z.colwise() += b;
    if (spec.activation(l) == Activation::Tanh) z = z.array().tanh().matrix();
    tape.activations.push_back(std::move(z));
  }
  return tape;
}

inline std::vector<double> forward(const MlpSpec& spec, std::span<const double> params, std::span<const double> input) {
  if (input.size() != static_cast<std::size_t>(spec.input_size()))
    throw std::invalid_argument("forward: input dimension mismatch");
  const Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
  const auto tape = forward_batch(spec, params, x);
  return {tape.output().data(), tape.output().data() + tape.output().size()};
}

// Accumulates dLoss/dparams into grad given dLoss/doutput for every sample.
inline void backward(const MlpSpec& spec, std::span<const double> params, const MlpTape& tape,
                     Eigen::MatrixXd d_output, std::span<double> grad) {
  if (grad.size() != spec.num_params()) throw std::invalid_argument("backward: gradient size mismatch");
  std::vector<std::size_t> offsets(spec.num_layers());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    offsets[l] = offset;
    offset += static_cast<std::size_t>(spec.layer_sizes[l]) * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
  }
  Eigen::MatrixXd delta = std::move(d_output);
  for (std::size_t l = spec.num_layers(); l-- > 0;) {
    const int fan_in = spec.layer_sizes[l], fan_out = spec.layer_sizes[l + 1];
    if (spec.activation(l) == Activation::Tanh)
      delta.array() *= 1.0 - tape.activations[l + 1].array().square();
    const std::size_t w_off = offsets[l];
    const std::size_t b_off = w_off + static_cast<std::size_t>(fan_in) * fan_out;
    Eigen::Map<Eigen::MatrixXd> dw(grad.data() + w_off, fan_out, fan_in);
    Eigen::Map<Eigen::VectorXd> db(grad.data() + b_off, fan_out);
    dw.noalias() += delta * tape.activations[l].transpose();
    db += delta.rowwise().sum();
    if (l > 0) {
      Eigen::Map<const Eigen::MatrixXd> w(params.data() + w_off, fan_out, fan_in);
      delta = w.transpose() * delta;
    }
  }
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// Batch-scalar loss over network outputs: returns the loss and writes
// dLoss/doutputs (same shape as outputs).
using OutputLoss = std::function<double(const Eigen::MatrixXd& outputs, Eigen::MatrixXd& d_outputs)>;

struct Gradient {
  double loss = 0.0;
  ParamVector grad;
};

inline Gradient gradient(const MlpSpec& spec, const ParamVector& params, const Eigen::MatrixXd& inputs,
                         const OutputLoss& loss_fn) {
  const auto tape = forward_batch(spec, params.values(), inputs);
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(tape.output().rows(), tape.output().cols());
  Gradient result{loss_fn(tape.output(), d_out), ParamVector::zeros_like(params)};
  if (!std::isfinite(result.loss)) throw numerical_error("gradient: non-finite loss");
  backward(spec, params.values(), tape, std::move(d_out), result.grad.values());
  if (!all_finite(result.grad.values())) throw numerical_error("gradient: non-finite gradient");
  return result;
}

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_size(std::size_t n, double lr = 3e-4) {
    AdamState s;
    s.first_moment.assign(n, 0.0);
    s.second_moment.assign(n, 0.0);
    s.lr = lr;
    return s;
  }

  bool operator==(const AdamState&) const = default;
};

// Bias-corrected Adam, applied in place.
inline void apply_adam(AdamState& state, std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    params[i] -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon);
  }
}

inline std::pair<AdamState, ParamVector> adam_step(AdamState state, ParamVector params, const ParamVector& grad) {
  apply_adam(state, params.values(), grad.values());
  return {std::move(state), std::move(params)};
}

// Binary form: uint32 count, then count IEEE-754 doubles, all little-endian.
inline void write_param_values(std::ostream& out, std::span<const double> values) {
  const auto n = static_cast<std::uint32_t>(values.size());
  char buf[8];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  out.write(buf, 4);
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(buf, 8);
  }
  if (!out) throw std::runtime_error("write_param_values: stream write failed");
}

inline std::vector<double> read_param_values(std::istream& in) {
  unsigned char buf[8];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) throw std::runtime_error("read_param_values: truncated length");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  std::vector<double> values;
  values.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw std::runtime_error("read_param_values: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    values.push_back(std::bit_cast<double>(bits));
  }
  return values;
}

}  // namespace poem
