#include "harlab/nn/model.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "harlab/errors.hpp"
#include "harlab/rng.hpp"

namespace harlab::nn {

namespace {

constexpr char kMagic[4] = {'H', 'L', 'M', 'D'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated model file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  if (n > 4096) throw DataError("corrupt model file: oversized layer name");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("truncated model file");
  return s;
}

void write_doubles(std::ostream& out, const double* data, Eigen::Index n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& in, double* data, Eigen::Index n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("truncated model file");
}

}  // namespace

void LayerParams::set_zero() {
  weights.setZero();
  bias.setZero();
}

CnnModel::CnnModel(TensorShape input, std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_(input), layers_(std::move(layers)), seed_(seed) {
  if (layers_.empty()) throw ConfigError("model needs at least one layer");
  shapes_ = infer_shapes(input_, layers_);
  params_.resize(layers_.size());
  frozen_.assign(layers_.size(), false);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].kind == LayerKind::Softmax && i + 1 != layers_.size()) {
      throw ConfigError(fmt::format("layer '{}': softmax must be the last layer", layers_[i].name));
    }
    if (layers_[i].has_params()) reinitialize_layer(i);
  }
  if (layers_.back().kind != LayerKind::Softmax) {
    throw ConfigError("the last layer must be softmax (training uses categorical cross-entropy)");
  }
  if (layers_.size() < 2 || layers_[layers_.size() - 2].kind != LayerKind::Dense ||
      layers_[layers_.size() - 2].activation != Activation::Linear) {
    throw ConfigError("softmax must follow a linear dense layer");
  }
}

std::size_t CnnModel::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  throw ConfigError(fmt::format("model has no layer named '{}'", name));
}

const LayerParams& CnnModel::params(std::size_t i) const {
  if (!params_.at(i)) throw ConfigError(fmt::format("layer '{}' has no parameters", layers_[i].name));
  return *params_[i];
}

LayerParams& CnnModel::params(std::size_t i) {
  if (!params_.at(i)) throw ConfigError(fmt::format("layer '{}' has no parameters", layers_[i].name));
  return *params_[i];
}

void CnnModel::set_frozen(std::size_t i, bool value) { frozen_.at(i) = value; }

void CnnModel::reinitialize_layer(std::size_t i) {
  const LayerSpec& spec = layers_.at(i);
  if (!spec.has_params()) return;
  const TensorShape& in = input_shape_of(i);
  std::size_t rows = 0;
  double fan_in = 0.0;
  double fan_out = 0.0;
  if (spec.is_conv()) {
    rows = 9 * in.channels;
    fan_in = 9.0 * static_cast<double>(in.channels);
    fan_out = 9.0 * static_cast<double>(spec.units);
  } else {
    rows = in.size();
    fan_in = static_cast<double>(in.size());
    fan_out = static_cast<double>(spec.units);
  }
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Rng rng(derive_seed(seed_, "init", {i}));
  LayerParams p;
  p.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(spec.units));
  for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = rng.uniform(-limit, limit);
  p.bias = RowVector::Zero(static_cast<Eigen::Index>(spec.units));
  params_[i] = std::move(p);
}

std::size_t CnnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p) n += p->size();
  }
  return n;
}

std::size_t CnnModel::trainable_parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i] && !frozen_[i]) n += params_[i]->size();
  }
  return n;
}

bool CnnModel::same_architecture(const CnnModel& other) const {
  return input_ == other.input_ && layers_ == other.layers_;
}

void CnnModel::save(std::ostream& out) const {
  out.write(kMagic, 4);
  write_pod(out, kFormatVersion);
  write_pod(out, seed_);
  write_pod<std::uint64_t>(out, input_.height);
  write_pod<std::uint64_t>(out, input_.width);
  write_pod<std::uint64_t>(out, input_.channels);
  write_pod<std::uint8_t>(out, input_.flat ? 1 : 0);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(layers_.size()));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    write_string(out, l.name);
    write_pod<std::uint64_t>(out, l.units);
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(l.activation));
    write_pod(out, l.rate);
    write_pod<std::uint8_t>(out, frozen_[i] ? 1 : 0);
    if (params_[i]) {
      const auto& w = params_[i]->weights;
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(w.rows()));
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(w.cols()));
      write_doubles(out, w.data(), w.size());
      write_doubles(out, params_[i]->bias.data(), params_[i]->bias.size());
    }
  }
  if (!out) throw DataError("failed writing model");
}

CnnModel CnnModel::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("not a harlab model file");
  if (read_pod<std::uint32_t>(in) != kFormatVersion) throw DataError("unsupported model file version");
  const auto seed = read_pod<std::uint64_t>(in);
  TensorShape input;
  input.height = read_pod<std::uint64_t>(in);
  input.width = read_pod<std::uint64_t>(in);
  input.channels = read_pod<std::uint64_t>(in);
  input.flat = read_pod<std::uint8_t>(in) != 0;
  const auto n = read_pod<std::uint32_t>(in);
  if (n == 0 || n > 1024) throw DataError("corrupt model file: bad layer count");
  std::vector<LayerSpec> layers;
  std::vector<bool> frozen;
  std::vector<std::optional<LayerParams>> params;
  for (std::uint32_t i = 0; i < n; ++i) {
    LayerSpec l;
    const auto kind = read_pod<std::uint8_t>(in);
    if (kind > static_cast<std::uint8_t>(LayerKind::Softmax)) throw DataError("corrupt model file: bad layer kind");
    l.kind = static_cast<LayerKind>(kind);
    l.name = read_string(in);
    l.units = read_pod<std::uint64_t>(in);
    l.activation = static_cast<Activation>(read_pod<std::uint8_t>(in));
    l.rate = read_pod<double>(in);
    frozen.push_back(read_pod<std::uint8_t>(in) != 0);
    std::optional<LayerParams> p;
    if (l.has_params()) {
      const auto rows = read_pod<std::uint64_t>(in);
      const auto cols = read_pod<std::uint64_t>(in);
      if (rows * cols > (1ULL << 32) || cols != l.units) throw DataError("corrupt model file: bad parameter shape");
      p.emplace();
      p->weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      p->bias.resize(static_cast<Eigen::Index>(cols));
      read_doubles(in, p->weights.data(), p->weights.size());
      read_doubles(in, p->bias.data(), p->bias.size());
    }
    layers.push_back(std::move(l));
    params.push_back(std::move(p));
  }
  CnnModel model(input, std::move(layers), seed);
  for (std::uint32_t i = 0; i < n; ++i) {
    model.frozen_[i] = frozen[i];
    if (!model.params_[i]) continue;
    if (params[i]->weights.rows() != model.params_[i]->weights.rows()) {
      throw DataError(fmt::format("corrupt model file: layer '{}' has the wrong weight shape", model.layers_[i].name));
    }
    model.params_[i] = std::move(params[i]);
  }
  return model;
}

bool operator==(const CnnModel& a, const CnnModel& b) {
  return a.same_architecture(b) && a.seed_ == b.seed_ && a.frozen_ == b.frozen_ && a.params_ == b.params_;
}

}  // namespace harlab::nn
