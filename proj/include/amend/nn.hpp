// Copyright 2026 The amend Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense layers with hand-written backward passes. Batches are column-major:
// one sample per column.

#ifndef AMEND_NN_HPP_
#define AMEND_NN_HPP_

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "amend/common.hpp"

namespace amend::nn
{

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kLinear, kTanh, kRelu };

inline std::string to_string(Activation a)
{
  switch (a) {
    case Activation::kTanh:
      return "tanh";
    case Activation::kRelu:
      return "relu";
    case Activation::kLinear:
      break;
  }
  return "linear";
}

inline Activation activation_from_string(const std::string & name)
{
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  if (name == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + name + "'");
}

struct DenseLayer
{
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::kLinear;

  Eigen::Index in_dim() const { return weights.cols(); }
  Eigen::Index out_dim() const { return weights.rows(); }
};

/// Ordered dense layers. The same type holds gradients.
struct Params
{
  std::vector<DenseLayer> layers;

  std::size_t size() const { return layers.size(); }
  DenseLayer & operator[](std::size_t i) { return layers[i]; }
  const DenseLayer & operator[](std::size_t i) const { return layers[i]; }

  friend bool operator==(const Params & a, const Params & b)
  {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const auto & x = a.layers[i];
      const auto & y = b.layers[i];
      if (x.activation != y.activation || x.weights.rows() != y.weights.rows() ||
          x.weights.cols() != y.weights.cols() || x.bias.size() != y.bias.size() ||
          x.weights != y.weights || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }
};

inline Params zeros_like(const Params & p)
{
  Params z;
  z.layers.reserve(p.size());
  for (const auto & l : p.layers) {
    z.layers.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()),
                        Vector::Zero(l.bias.size()), l.activation});
  }
  return z;
}

inline std::size_t parameter_count(const Params & p)
{
  std::size_t n = 0;
  for (const auto & l : p.layers) {
    n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  }
  return n;
}

/// Flat view accessor used by finite-difference checks: index runs over each
/// layer's weights (column-major) then bias.
inline double & parameter_at(Params & p, std::size_t index)
{
  for (auto & l : p.layers) {
    const auto w = static_cast<std::size_t>(l.weights.size());
    if (index < w) return l.weights.data()[index];
    index -= w;
    const auto b = static_cast<std::size_t>(l.bias.size());
    if (index < b) return l.bias.data()[index];
    index -= b;
  }
  throw std::out_of_range("parameter index out of range");
}

inline void add_scaled(Params & target, const Params & source, double scale)
{
  for (std::size_t i = 0; i < target.size(); ++i) {
    target[i].weights += scale * source[i].weights;
    target[i].bias += scale * source[i].bias;
  }
}

inline bool all_finite(const Params & p)
{
  for (const auto & l : p.layers) {
    if (!l.weights.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

inline DenseLayer glorot_layer(Eigen::Index in, Eigen::Index out, Activation act, Rng & rng)
{
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer{Matrix(out, in), Vector::Zero(out), act};
  // Fill in a fixed (row-major) order so the draw sequence is layout independent.
  for (Eigen::Index r = 0; r < out; ++r) {
    for (Eigen::Index c = 0; c < in; ++c) {
      layer.weights(r, c) = rng.uniform(-limit, limit);
    }
  }
  return layer;
}

inline void activate(Activation act, Matrix & z)
{
  switch (act) {
    case Activation::kTanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::kRelu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::kLinear:
      break;
  }
}

inline Matrix forward(const DenseLayer & layer, const Matrix & input)
{
  Matrix z = layer.weights * input;
  z.colwise() += layer.bias;
  activate(layer.activation, z);
  return z;
}

/// Given the layer's cached input/output and dL/d(output), accumulates the
/// parameter gradient into `grad` and returns dL/d(input).
inline Matrix backward(const DenseLayer & layer, const Matrix & input, const Matrix & output,
                       const Matrix & d_output, DenseLayer & grad, bool need_input_grad = true)
{
  Matrix dz;
  switch (layer.activation) {
    case Activation::kTanh:
      dz = d_output.array() * (1.0 - output.array().square());
      break;
    case Activation::kRelu:
      dz = (output.array() > 0.0).select(d_output, 0.0);
      break;
    case Activation::kLinear:
      dz = d_output;
      break;
  }
  grad.weights.noalias() += dz * input.transpose();
  grad.bias += dz.rowwise().sum();
  if (!need_input_grad) return {};
  return layer.weights.transpose() * dz;
}

inline void check_finite(const Matrix & m, std::size_t layer_index, const char * what)
{
  if (!m.allFinite()) {
    throw NumericError(std::string("non-finite ") + what + " at layer " +
                       std::to_string(layer_index));
  }
}

/// Activations of a contiguous run of layers: values[0] is the input,
/// values[i + 1] the output of the i-th layer in the run.
struct StackCache
{
  std::vector<Matrix> values;
};

inline StackCache forward_stack(const Params & params, std::size_t first, std::size_t last,
                                const Matrix & input)
{
  StackCache cache;
  cache.values.reserve(last - first + 1);
  cache.values.push_back(input);
  for (std::size_t i = first; i < last; ++i) {
    cache.values.push_back(forward(params[i], cache.values.back()));
    check_finite(cache.values.back(), i, "activation");
  }
  return cache;
}

inline Matrix backward_stack(const Params & params, std::size_t first, std::size_t last,
                             const StackCache & cache, Matrix d_output, Params & grads,
                             bool need_input_grad = true)
{
  for (std::size_t i = last; i-- > first;) {
    const std::size_t k = i - first;
    check_finite(d_output, i, "gradient");
    d_output = backward(params[i], cache.values[k], cache.values[k + 1], d_output, grads[i],
                        need_input_grad || i > first);
  }
  return d_output;
}

/// Adaptive-moment optimizer state over a Params shape.
class Adam
{
public:
  struct Options
  {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(const Params & shape, Options options)
  : options_(options), m_(zeros_like(shape)), v_(zeros_like(shape))
  {
  }

  void step(Params & params, const Params & grads)
  {
    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const double lr = options_.learning_rate;
    const auto update = [&](auto & value, const auto & g, auto & m, auto & v) {
      m = options_.beta1 * m + (1.0 - options_.beta1) * g;
      v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseProduct(g);
      value.array() -=
          lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.epsilon);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      update(params[i].weights, grads[i].weights, m_[i].weights, v_[i].weights);
      update(params[i].bias, grads[i].bias, m_[i].bias, v_[i].bias);
    }
  }

private:
  Options options_;
  Params m_;
  Params v_;
  long t_ = 0;
};

// Serialized as {rows, cols, weights_row_major[], bias[], activation}.
inline nlohmann::json layers_to_json(const Params & p)
{
  nlohmann::json layers = nlohmann::json::array();
  for (const auto & l : p.layers) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weights.size()));
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weights.cols(); ++c) {
        w.push_back(l.weights(r, c));
      }
    }
    layers.push_back({{"rows", l.weights.rows()},
                      {"cols", l.weights.cols()},
                      {"weights_row_major", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())},
                      {"activation", to_string(l.activation)}});
  }
  return layers;
}

inline Params layers_from_json(const nlohmann::json & j)
{
  Params p;
  for (const auto & lj : j) {
    const auto rows = lj.at("rows").get<Eigen::Index>();
    const auto cols = lj.at("cols").get<Eigen::Index>();
    const auto w = lj.at("weights_row_major").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 || static_cast<Eigen::Index>(w.size()) != rows * cols ||
        static_cast<Eigen::Index>(b.size()) != rows) {
      throw ConfigError("model file layer shape mismatch");
    }
    DenseLayer layer{Matrix(rows, cols), Vector(rows),
                     activation_from_string(lj.at("activation").get<std::string>())};
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        layer.weights(r, c) = w[static_cast<std::size_t>(r * cols + c)];
      }
      layer.bias(r) = b[static_cast<std::size_t>(r)];
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

}  // namespace amend::nn

#endif  // AMEND_NN_HPP_
