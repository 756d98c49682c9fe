#include "harlab/nn/network.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "harlab/errors.hpp"

namespace harlab::nn {

namespace {

using Index = Eigen::Index;

Matrix im2col(const Matrix& in, std::size_t batch, const TensorShape& in_shape, const TensorShape& out_shape,
              int pad) {
  const Index cin = static_cast<Index>(in_shape.channels);
  const Index h = static_cast<Index>(in_shape.height);
  const Index w = static_cast<Index>(in_shape.width);
  const Index ho = static_cast<Index>(out_shape.height);
  const Index wo = static_cast<Index>(out_shape.width);
  Matrix cols(static_cast<Index>(batch) * ho * wo, 9 * cin);
  const double* src = in.data();
  for (Index b = 0; b < static_cast<Index>(batch); ++b) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        double* dst = cols.data() + ((b * ho + oy) * wo + ox) * 9 * cin;
        for (Index ky = 0; ky < 3; ++ky) {
          const Index iy = oy + ky - pad;
          for (Index kx = 0; kx < 3; ++kx, dst += cin) {
            const Index ix = ox + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
              std::fill(dst, dst + cin, 0.0);
            } else {
              const double* s = src + ((b * h + iy) * w + ix) * cin;
              std::copy(s, s + cin, dst);
            }
          }
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const Matrix& dcols, std::size_t batch, const TensorShape& in_shape, const TensorShape& out_shape,
              int pad) {
  const Index cin = static_cast<Index>(in_shape.channels);
  const Index h = static_cast<Index>(in_shape.height);
  const Index w = static_cast<Index>(in_shape.width);
  const Index ho = static_cast<Index>(out_shape.height);
  const Index wo = static_cast<Index>(out_shape.width);
  Matrix din = Matrix::Zero(static_cast<Index>(batch) * h * w, cin);
  double* dst = din.data();
  for (Index b = 0; b < static_cast<Index>(batch); ++b) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const double* s = dcols.data() + ((b * ho + oy) * wo + ox) * 9 * cin;
        for (Index ky = 0; ky < 3; ++ky) {
          const Index iy = oy + ky - pad;
          for (Index kx = 0; kx < 3; ++kx, s += cin) {
            const Index ix = ox + kx - pad;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            double* d = dst + ((b * h + iy) * w + ix) * cin;
            for (Index c = 0; c < cin; ++c) d[c] += s[c];
          }
        }
      }
    }
  }
  return din;
}

void relu_inplace(Matrix& m) { m = m.cwiseMax(0.0); }

Matrix max_pool(const Matrix& in, std::size_t batch, const TensorShape& in_shape, const TensorShape& out_shape,
                std::vector<Index>* argmax) {
  const Index c = static_cast<Index>(in_shape.channels);
  const Index w = static_cast<Index>(in_shape.width);
  const Index h = static_cast<Index>(in_shape.height);
  const Index ho = static_cast<Index>(out_shape.height);
  const Index wo = static_cast<Index>(out_shape.width);
  Matrix out(static_cast<Index>(batch) * ho * wo, c);
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  for (Index b = 0; b < static_cast<Index>(batch); ++b) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        const Index orow = (b * ho + oy) * wo + ox;
        for (Index ch = 0; ch < c; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          Index best_idx = 0;
          for (Index dy = 0; dy < 2; ++dy) {
            for (Index dx = 0; dx < 2; ++dx) {
              const Index irow = (b * h + 2 * oy + dy) * w + 2 * ox + dx;
              const double v = in(irow, ch);
              if (v > best) {
                best = v;
                best_idx = irow * c + ch;
              }
            }
          }
          out(orow, ch) = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(orow * c + ch)] = best_idx;
        }
      }
    }
  }
  return out;
}

void softmax_rows(const Matrix& logits, Matrix& probs) {
  probs.resize(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    probs.row(r) = (logits.row(r).array() - m).exp();
    probs.row(r) /= probs.row(r).sum();
  }
}

std::size_t unrolled_rows(const TensorShape& s, std::size_t batch) { return batch * s.positions(); }

}  // namespace

ForwardResult forward(const CnnModel& model, const Matrix& batch, const ForwardOptions& options) {
  const std::size_t n = model.num_layers();
  const std::size_t first = options.first_layer;
  const std::size_t last = options.last_layer.value_or(n - 1);
  if (first >= n || last >= n || last < first) throw ConfigError("forward: layer range out of bounds");
  if (options.mode == Mode::Train && options.rng == nullptr) {
    throw ConfigError("forward: train mode needs a random stream for dropout");
  }

  const TensorShape& in_shape = model.input_shape_of(first);
  const LayerSpec& first_spec = model.layer(first);
  ForwardResult res;
  res.mode = options.mode;
  res.first_layer = first;
  res.last_layer = last;

  // Accept either B x size (one sample per row) or the unrolled layout.
  const auto cols = static_cast<std::size_t>(batch.cols());
  const auto rows = static_cast<std::size_t>(batch.rows());
  if (cols == in_shape.size() && !(in_shape.flat)) {
    res.batch = rows;
    res.input = Eigen::Map<const Matrix>(batch.data(), static_cast<Index>(rows * in_shape.positions()),
                                         static_cast<Index>(in_shape.channels));
  } else if (cols == in_shape.channels && rows % in_shape.positions() == 0) {
    res.batch = rows / in_shape.positions();
    res.input = batch;
  } else {
    throw DataError(fmt::format("layer '{}': input batch is {}x{} but the layer expects shape {} per sample",
                                first_spec.name, rows, cols, in_shape.to_string()));
  }
  if (res.batch == 0) throw DataError("forward: empty batch");
  if (!res.input.allFinite()) throw DataError("forward: input batch contains non-finite values");

  res.outputs.resize(n);
  res.im2col.resize(n);
  res.pool_argmax.resize(n);
  res.dropout_masks.resize(n);

  const std::size_t B = res.batch;
  for (std::size_t i = first; i <= last; ++i) {
    const LayerSpec& spec = model.layer(i);
    const TensorShape& is = model.input_shape_of(i);
    const TensorShape& os = model.output_shape(i);
    const Matrix& x = i == first ? res.input : res.outputs[i - 1];
    Matrix& y = res.outputs[i];
    switch (spec.kind) {
      case LayerKind::ConvSame:
      case LayerKind::ConvValid: {
        const int pad = spec.kind == LayerKind::ConvSame ? 1 : 0;
        Matrix c = im2col(x, B, is, os, pad);
        const auto& p = model.params(i);
        y.noalias() = c * p.weights;
        y.rowwise() += p.bias;
        if (spec.activation == Activation::Relu) relu_inplace(y);
        if (options.keep_intermediates) res.im2col[i] = std::move(c);
        break;
      }
      case LayerKind::MaxPool2x2:
        y = max_pool(x, B, is, os, options.keep_intermediates ? &res.pool_argmax[i] : nullptr);
        break;
      case LayerKind::Dropout:
        if (options.mode == Mode::Train && spec.rate > 0.0) {
          const double keep = 1.0 - spec.rate;
          Matrix mask(x.rows(), x.cols());
          for (Index k = 0; k < mask.size(); ++k) {
            mask.data()[k] = options.rng->uniform() < keep ? 1.0 / keep : 0.0;
          }
          y = x.cwiseProduct(mask);
          res.dropout_masks[i] = std::move(mask);
        } else {
          y = x;
        }
        break;
      case LayerKind::Flatten:
        y = Eigen::Map<const Matrix>(x.data(), static_cast<Index>(B), static_cast<Index>(os.size()));
        break;
      case LayerKind::Dense: {
        const auto& p = model.params(i);
        y.noalias() = x * p.weights;
        y.rowwise() += p.bias;
        if (spec.activation == Activation::Relu) relu_inplace(y);
        break;
      }
      case LayerKind::Softmax:
        res.logits = x;
        softmax_rows(x, y);
        break;
    }
    if (static_cast<std::size_t>(y.rows()) != unrolled_rows(os, B)) {
      throw ConfigError(fmt::format("layer '{}': produced {} rows, expected {}", spec.name, y.rows(),
                                    unrolled_rows(os, B)));
    }
  }
  return res;
}

double cross_entropy(const ForwardResult& fwd, const Matrix& onehot) {
  if (fwd.logits.size() == 0) throw ConfigError("cross_entropy: forward pass did not reach the softmax layer");
  if (onehot.rows() != fwd.logits.rows() || onehot.cols() != fwd.logits.cols()) {
    throw DataError(fmt::format("labels are {}x{} but predictions are {}x{}", onehot.rows(), onehot.cols(),
                                fwd.logits.rows(), fwd.logits.cols()));
  }
  double total = 0.0;
  for (Index r = 0; r < fwd.logits.rows(); ++r) {
    const double m = fwd.logits.row(r).maxCoeff();
    const double lse = m + std::log((fwd.logits.row(r).array() - m).exp().sum());
    total -= (onehot.row(r).array() * (fwd.logits.row(r).array() - lse)).sum();
  }
  return total / static_cast<double>(fwd.logits.rows());
}

Gradients backward(const CnnModel& model, const ForwardResult& fwd, const Matrix& onehot) {
  const std::size_t n = model.num_layers();
  if (fwd.last_layer != n - 1) throw ConfigError("backward: forward pass must run to the last layer");
  Gradients grads(n);
  std::optional<std::size_t> lowest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!model.has_params(i)) continue;
    const auto& p = model.params(i);
    grads[i] = LayerParams{Matrix::Zero(p.weights.rows(), p.weights.cols()), RowVector::Zero(p.bias.size())};
    if (!model.frozen(i) && !lowest) lowest = i;
  }
  if (!lowest) return grads;
  if (*lowest < fwd.first_layer) {
    throw ConfigError(fmt::format("backward: trainable layer '{}' lies below the first computed layer",
                                  model.layer(*lowest).name));
  }

  const std::size_t B = fwd.batch;
  const Matrix& probs = fwd.probabilities();
  if (onehot.rows() != probs.rows() || onehot.cols() != probs.cols()) {
    throw DataError("backward: label matrix shape does not match predictions");
  }
  // Gradient of mean cross-entropy w.r.t. the logits.
  Matrix d = (probs - onehot) / static_cast<double>(B);

  for (std::size_t i = n; i-- > *lowest;) {
    const LayerSpec& spec = model.layer(i);
    if (spec.kind == LayerKind::Softmax) continue;  // folded into d above
    const bool need_input_grad = i > *lowest;
    const TensorShape& is = model.input_shape_of(i);
    const TensorShape& os = model.output_shape(i);
    const Matrix& x = i == fwd.first_layer ? fwd.input : fwd.outputs[i - 1];
    const Matrix& y = fwd.outputs[i];
    Matrix din;
    switch (spec.kind) {
      case LayerKind::Dense:
      case LayerKind::ConvSame:
      case LayerKind::ConvValid: {
        if (spec.activation == Activation::Relu) d.array() *= (y.array() > 0.0).cast<double>();
        const auto& p = model.params(i);
        const Matrix& in = spec.kind == LayerKind::Dense ? x : fwd.im2col[i];
        if (in.size() == 0) throw ConfigError("backward: forward pass did not keep intermediates");
        if (!model.frozen(i)) {
          grads[i]->weights.noalias() = in.transpose() * d;
          grads[i]->bias = d.colwise().sum();
        }
        if (need_input_grad) {
          if (spec.kind == LayerKind::Dense) {
            din.noalias() = d * p.weights.transpose();
          } else {
            Matrix dcols = d * p.weights.transpose();
            din = col2im(dcols, B, is, os, spec.kind == LayerKind::ConvSame ? 1 : 0);
          }
        }
        break;
      }
      case LayerKind::MaxPool2x2: {
        if (!need_input_grad) break;
        const auto& idx = fwd.pool_argmax[i];
        if (idx.empty()) throw ConfigError("backward: forward pass did not keep pooling indices");
        din = Matrix::Zero(x.rows(), x.cols());
        for (std::size_t k = 0; k < idx.size(); ++k) din.data()[idx[k]] += d.data()[k];
        break;
      }
      case LayerKind::Dropout:
        if (!need_input_grad) break;
        if (fwd.mode == Mode::Train && spec.rate > 0.0) {
          din = d.cwiseProduct(fwd.dropout_masks[i]);
        } else {
          din = std::move(d);
        }
        break;
      case LayerKind::Flatten:
        if (!need_input_grad) break;
        din = Eigen::Map<const Matrix>(d.data(), static_cast<Index>(B * is.positions()),
                                       static_cast<Index>(is.channels));
        break;
      case LayerKind::Softmax:
        break;
    }
    d = std::move(din);
  }
  return grads;
}

void check_onehot(const Matrix& onehot, std::size_t num_classes) {
  if (static_cast<std::size_t>(onehot.cols()) != num_classes) {
    throw DataError(fmt::format("labels have {} columns, expected {} classes", onehot.cols(), num_classes));
  }
  for (Index r = 0; r < onehot.rows(); ++r) {
    int ones = 0;
    for (Index c = 0; c < onehot.cols(); ++c) {
      const double v = onehot(r, c);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw DataError(fmt::format("label row {} is not one-hot (entry {} = {})", r, c, v));
      }
    }
    if (ones != 1) throw DataError(fmt::format("label row {} is not one-hot ({} ones)", r, ones));
  }
}

Matrix onehot_matrix(std::span<const int> labels, std::size_t num_classes) {
  Matrix m = Matrix::Zero(static_cast<Index>(labels.size()), static_cast<Index>(num_classes));
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= num_classes) {
      throw DataError(fmt::format("label {} at row {} is outside 0..{}", labels[r], r, num_classes - 1));
    }
    m(static_cast<Index>(r), labels[r]) = 1.0;
  }
  return m;
}

LossAndGrad loss_and_grad(const CnnModel& model, const Matrix& batch, const Matrix& onehot,
                          const ForwardOptions& options) {
  check_onehot(onehot, model.num_classes());
  ForwardOptions opts = options;
  opts.last_layer.reset();
  opts.keep_intermediates = true;
  const ForwardResult fwd = forward(model, batch, opts);
  LossAndGrad out;
  out.loss = cross_entropy(fwd, onehot);
  out.grads = backward(model, fwd, onehot);
  return out;
}

}  // namespace harlab::nn
