#pragma once

#include <cstdint>
#include <vector>

#include "gmot/types.hpp"

namespace gmot::nn {

class MlpMap;

// Activations recorded by MlpMap::forward, consumed by MlpMap::backward.
class ForwardPass {
 public:
  ForwardPass() = default;

  const Matrix& output() const { return output_; }
  bool empty() const { return layer_inputs_.empty(); }

 private:
  friend class MlpMap;
  std::vector<Matrix> layer_inputs_;  // input to each affine layer (post-ReLU)
  std::vector<Matrix> pre_activations_;
  Matrix output_;
  std::uint64_t version_ = 0;
  const MlpMap* owner_ = nullptr;
};

struct Gradients {
  Vector params;  // same layout as MlpMap::parameters()
  Matrix input;   // n x d_in
};

// Feed-forward ReLU network with an affine last layer and an optional skip
// connection adding the raw input to the output.
//
// Parameters live in one flat vector: for each layer, the out x in weight
// matrix (column-major) followed by the bias.
class MlpMap {
 public:
  MlpMap() = default;
  MlpMap(std::vector<Index> layer_dims, bool residual);

  // Copies get a fresh identity; a ForwardPass only matches the object that
  // produced it.
  MlpMap(const MlpMap& other);
  MlpMap& operator=(const MlpMap& other);
  MlpMap(MlpMap&&) noexcept = default;
  MlpMap& operator=(MlpMap&&) noexcept = default;

  const std::vector<Index>& layer_dims() const { return dims_; }
  Index num_layers() const { return static_cast<Index>(dims_.size()) - 1; }
  Index input_dim() const { return dims_.front(); }
  Index output_dim() const { return dims_.back(); }
  bool residual() const { return residual_; }
  Index param_count() const { return params_.size(); }
  std::uint64_t version() const { return version_; }

  const Vector& parameters() const { return params_; }
  void set_parameters(const Vector& params);

  Eigen::Map<const Matrix> weight(Index layer) const;
  Eigen::Map<const Vector> bias(Index layer) const;
  Eigen::Map<Matrix> weight(Index layer);
  Eigen::Map<Vector> bias(Index layer);

  // Mark parameters as modified through the mutable views above.
  void touch() { ++version_; }

  ForwardPass forward(const Matrix& batch) const;
  Matrix apply(const Matrix& batch) const { return forward(batch).output(); }

  // Reverse-mode gradients for the pass produced by forward(). Throws
  // InvalidInput when the pass is empty, was produced by another map, or the
  // parameters changed since.
  Gradients backward(const ForwardPass& pass, const Matrix& upstream) const;

 private:
  Index offset(Index layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

  std::vector<Index> dims_;
  std::vector<Index> offsets_;
  bool residual_ = false;
  Vector params_;
  std::uint64_t version_ = 1;
};

// Orthogonal initialization: every weight matrix gets orthonormal rows or
// columns (whichever its shape allows), biases are zero. With
// `zero_last_layer` the final weights are zeroed too, so a residual map starts
// as the identity.
MlpMap init_orthogonal(const std::vector<Index>& layer_dims, bool residual, std::uint64_t seed,
                       bool zero_last_layer = false);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Vector m;
  Vector v;

  static AdamState for_map(const MlpMap& map, double learning_rate);
};

// Bias-corrected Adam update of map parameters in place.
void adam_step(MlpMap& map, const Vector& grads, AdamState& state);

}  // namespace gmot::nn
