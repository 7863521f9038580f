#include "gmot/neural.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace gmot::nn {

MlpMap::MlpMap(std::vector<Index> layer_dims, bool residual)
    : dims_(std::move(layer_dims)), residual_(residual) {
  if (dims_.size() < 2) throw InvalidInput("mlp needs at least an input and an output size");
  for (Index d : dims_) {
    if (d < 1) throw InvalidInput("mlp layer sizes must be positive");
  }
  if (residual_ && dims_.front() != dims_.back()) {
    std::ostringstream os;
    os << "residual mlp needs equal input and output sizes, got " << dims_.front() << " and "
       << dims_.back();
    throw InvalidInput(os.str());
  }
  Index total = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(total);
    total += dims_[l + 1] * dims_[l] + dims_[l + 1];
  }
  params_ = Vector::Zero(total);
}

MlpMap::MlpMap(const MlpMap& other)
    : dims_(other.dims_),
      offsets_(other.offsets_),
      residual_(other.residual_),
      params_(other.params_),
      version_(other.version_) {}

MlpMap& MlpMap::operator=(const MlpMap& other) {
  if (this != &other) {
    dims_ = other.dims_;
    offsets_ = other.offsets_;
    residual_ = other.residual_;
    params_ = other.params_;
    ++version_;
  }
  return *this;
}

void MlpMap::set_parameters(const Vector& params) {
  if (params.size() != params_.size()) {
    std::ostringstream os;
    os << "parameter vector has " << params.size() << " entries, expected " << params_.size();
    throw SizeError(os.str());
  }
  params_ = params;
  ++version_;
}

Eigen::Map<const Matrix> MlpMap::weight(Index layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + offset(layer), dims_[l + 1], dims_[l]};
}

Eigen::Map<const Vector> MlpMap::bias(Index layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + offset(layer) + dims_[l + 1] * dims_[l], dims_[l + 1]};
}

Eigen::Map<Matrix> MlpMap::weight(Index layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + offset(layer), dims_[l + 1], dims_[l]};
}

Eigen::Map<Vector> MlpMap::bias(Index layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + offset(layer) + dims_[l + 1] * dims_[l], dims_[l + 1]};
}

ForwardPass MlpMap::forward(const Matrix& batch) const {
  if (dims_.empty()) throw InvalidInput("forward on an empty mlp");
  if (batch.cols() != input_dim()) {
    std::ostringstream os;
    os << "batch width " << batch.cols() << " does not match mlp input size " << input_dim();
    throw SizeError(os.str());
  }
  ForwardPass pass;
  pass.version_ = version_;
  pass.owner_ = this;
  Matrix act = batch;
  for (Index l = 0; l < num_layers(); ++l) {
    Matrix z = act * weight(l).transpose();
    z.rowwise() += bias(l).transpose();
    pass.layer_inputs_.push_back(std::move(act));
    if (l + 1 < num_layers()) {
      act = z.cwiseMax(0.0);
      pass.pre_activations_.push_back(std::move(z));
    } else {
      act = std::move(z);
    }
  }
  if (residual_) act += batch;
  pass.output_ = std::move(act);
  return pass;
}

Gradients MlpMap::backward(const ForwardPass& pass, const Matrix& upstream) const {
  if (pass.empty()) throw InvalidInput("backward called without a forward pass");
  if (pass.owner_ != this || pass.version_ != version_) {
    throw InvalidInput("backward called with a stale forward pass");
  }
  if (upstream.rows() != pass.output_.rows() || upstream.cols() != output_dim()) {
    throw SizeError("upstream gradient shape does not match the forward output");
  }
  Gradients grads;
  grads.params = Vector::Zero(params_.size());
  Matrix delta = upstream;  // d loss / d z for the current layer
  for (Index l = num_layers() - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Matrix& input = pass.layer_inputs_[li];
    const Index out = dims_[li + 1];
    const Index in = dims_[li];
    Eigen::Map<Matrix> gw(grads.params.data() + offset(l), out, in);
    Eigen::Map<Vector> gb(grads.params.data() + offset(l) + out * in, out);
    gw.noalias() = delta.transpose() * input;
    gb = delta.colwise().sum().transpose();
    Matrix prev = delta * weight(l);
    if (l > 0) {
      // ReLU'(0) = 0
      prev.array() *= (pass.pre_activations_[li - 1].array() > 0.0).cast<double>();
    }
    delta = std::move(prev);
  }
  grads.input = std::move(delta);
  if (residual_) grads.input += upstream;
  return grads;
}

MlpMap init_orthogonal(const std::vector<Index>& layer_dims, bool residual, std::uint64_t seed,
                       bool zero_last_layer) {
  MlpMap map(layer_dims, residual);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index l = 0; l < map.num_layers(); ++l) {
    auto w = map.weight(l);
    const Index rows = std::max(w.rows(), w.cols());
    const Index cols = std::min(w.rows(), w.cols());
    Matrix g(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    for (Index k = 0; k < cols; ++k) {
      if (qr.matrixQR()(k, k) < 0.0) q.col(k) *= -1.0;
    }
    if (w.rows() >= w.cols()) {
      w = q;
    } else {
      w = q.transpose();
    }
    map.bias(l).setZero();
  }
  if (zero_last_layer) map.weight(map.num_layers() - 1).setZero();
  map.touch();
  return map;
}

AdamState AdamState::for_map(const MlpMap& map, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  s.m = Vector::Zero(map.param_count());
  s.v = Vector::Zero(map.param_count());
  return s;
}

void adam_step(MlpMap& map, const Vector& grads, AdamState& state) {
  const Index n = map.param_count();
  if (grads.size() != n || state.m.size() != n || state.v.size() != n) {
    std::ostringstream os;
    os << "adam: map has " << n << " parameters, gradient " << grads.size() << ", moments "
       << state.m.size() << "/" << state.v.size();
    throw SizeError(os.str());
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  Vector p = map.parameters();
  p.array() -= state.learning_rate * (state.m.array() / c1) /
               ((state.v.array() / c2).sqrt() + state.eps);
  map.set_parameters(p);
}

}  // namespace gmot::nn
