#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "harlab/nn/shape.hpp"

namespace harlab::nn {

enum class LayerKind { ConvSame, ConvValid, MaxPool2x2, Dropout, Flatten, Dense, Softmax };
enum class Activation { Relu, Linear };

/// One layer of the network. Convolutions are always 3x3 stride 1.
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  std::string name;
  std::size_t units = 0;  // output channels (conv) or units (dense)
  Activation activation = Activation::Linear;
  double rate = 0.0;  // dropout probability

  static LayerSpec conv_same(std::string name, std::size_t channels, Activation act = Activation::Relu);
  static LayerSpec conv_valid(std::string name, std::size_t channels, Activation act = Activation::Relu);
  static LayerSpec max_pool(std::string name);
  static LayerSpec dropout(std::string name, double rate);
  static LayerSpec flatten(std::string name);
  static LayerSpec dense(std::string name, std::size_t units, Activation act);
  static LayerSpec softmax(std::string name);

  bool has_params() const;
  bool is_conv() const { return kind == LayerKind::ConvSame || kind == LayerKind::ConvValid; }

  /// Output shape given the input shape; throws ConfigError naming this
  /// layer when the input is incompatible.
  TensorShape output_shape(const TensorShape& input) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

std::string to_string(LayerKind kind);

/// conv-same 32 relu, conv-valid 64 relu, maxpool 2x2, dropout 0.25,
/// flatten, dense 128 relu, dropout 0.5, dense C linear, softmax.
std::vector<LayerSpec> canonical_architecture(std::size_t num_classes);

/// Output shape of every layer, in order. Throws ConfigError on the first
/// incompatible layer.
std::vector<TensorShape> infer_shapes(const TensorShape& input, const std::vector<LayerSpec>& layers);

/// Input geometry and class count of one of the supported dataset layouts.
struct DatasetLayout {
  std::string name;
  TensorShape input;
  std::size_t num_classes;
};

/// w-HAR, UCI HAR, UCI HAPT, UniMiB and WISDM.
const std::vector<DatasetLayout>& known_layouts();

/// Throws ConfigError for unknown names.
const DatasetLayout& layout_by_name(const std::string& name);

}  // namespace harlab::nn
