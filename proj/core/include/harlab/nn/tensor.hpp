#pragma once

#include <Eigen/Core>

namespace harlab::nn {

/// Activations are stored unrolled: one row per (sample, spatial position)
/// and one column per channel. Row-major so that a sample's H*W*C block is
/// contiguous and flattening is a reshape.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

}  // namespace harlab::nn
