#pragma once

#include <cstddef>
#include <string>

namespace harlab::nn {

/// Shape of one sample's activation: H x W x C for spatial tensors, or a
/// flat vector of `channels` entries.
struct TensorShape {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;
  bool flat = false;

  static TensorShape spatial(std::size_t h, std::size_t w, std::size_t c) { return {h, w, c, false}; }
  static TensorShape vector(std::size_t n) { return {1, 1, n, true}; }

  std::size_t size() const { return height * width * channels; }
  /// Rows contributed per sample when stored unrolled: H*W for spatial, 1 for flat.
  std::size_t positions() const { return flat ? 1 : height * width; }

  /// Throws ConfigError when any dimension is zero.
  void validate() const;

  /// "(4, 30, 32)" or "896".
  std::string to_string() const;

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

}  // namespace harlab::nn
