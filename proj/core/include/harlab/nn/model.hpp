#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "harlab/nn/layer_spec.hpp"
#include "harlab/nn/tensor.hpp"

namespace harlab::nn {

/// Weights and bias of a conv or dense layer. Conv weights are laid out as
/// (9 * in_channels) x out_channels with rows ordered (ky, kx, c_in).
struct LayerParams {
  Matrix weights;
  RowVector bias;

  std::size_t size() const { return static_cast<std::size_t>(weights.size() + bias.size()); }
  void set_zero();
  friend bool operator==(const LayerParams& a, const LayerParams& b) {
    return a.weights == b.weights && a.bias == b.bias;
  }
};

class CnnModel {
 public:
  /// Builds the network and Glorot-uniform initializes every parameterized
  /// layer from (seed, layer index); biases start at zero.
  CnnModel(TensorShape input, std::vector<LayerSpec> layers, std::uint64_t seed);

  const TensorShape& input_shape() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t num_layers() const { return layers_.size(); }
  /// Output shape of layer i.
  const TensorShape& output_shape(std::size_t i) const { return shapes_.at(i); }
  const TensorShape& input_shape_of(std::size_t i) const { return i == 0 ? input_ : shapes_.at(i - 1); }
  std::size_t num_classes() const { return shapes_.back().size(); }
  std::uint64_t seed() const { return seed_; }

  /// Index of the layer with this name; throws ConfigError if absent.
  std::size_t layer_index(const std::string& name) const;

  bool has_params(std::size_t i) const { return params_.at(i).has_value(); }
  const LayerParams& params(std::size_t i) const;
  LayerParams& params(std::size_t i);

  bool frozen(std::size_t i) const { return frozen_.at(i); }
  void set_frozen(std::size_t i, bool value);

  /// Re-draws layer i's parameters exactly as the constructor would for
  /// this model's seed.
  void reinitialize_layer(std::size_t i);

  std::size_t parameter_count() const;
  std::size_t trainable_parameter_count() const;

  /// True when both models have the same input and layer specs.
  bool same_architecture(const CnnModel& other) const;

  /// Binary (de)serialization of the full model, exact to the bit.
  void save(std::ostream& out) const;
  static CnnModel load(std::istream& in);

  friend bool operator==(const CnnModel& a, const CnnModel& b);

 private:
  TensorShape input_;
  std::vector<LayerSpec> layers_;
  std::vector<TensorShape> shapes_;
  std::vector<std::optional<LayerParams>> params_;
  std::vector<bool> frozen_;
  std::uint64_t seed_;
};

}  // namespace harlab::nn
