#include "pirl/qnet.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pirl/errors.hpp"

namespace pirl::qnet {

namespace {

/// Activation value and its first three derivatives written in terms of the
/// activation output a.
struct Derivs {
  Matrix d1;
  Matrix d2;
  Matrix d3;
};

Derivs tanh_derivs(const Matrix& a, bool third) {
  Derivs d;
  d.d1 = (1.0 - a.array().square()).matrix();
  d.d2 = (-2.0 * a.array() * d.d1.array()).matrix();
  if (third) {
    d.d3 = ((6.0 * a.array().square() - 2.0) * d.d1.array()).matrix();
  }
  return d;
}

Derivs sigmoid_derivs(const Matrix& a, bool third) {
  Derivs d;
  d.d1 = (a.array() * (1.0 - a.array())).matrix();
  d.d2 = (d.d1.array() * (1.0 - 2.0 * a.array())).matrix();
  if (third) {
    d.d3 = (d.d1.array() * (1.0 - 6.0 * a.array() + 6.0 * a.array().square())).matrix();
  }
  return d;
}

// Both activations go through Eigen's vectorized exp; libm tanh dominated
// the profile otherwise. Saturation is exact: exp overflow gives +-1 and 0/1.
Matrix tanh_of(const Matrix& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

Matrix sigmoid_of(const Matrix& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t NetworkSpec::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_width;
}

std::size_t NetworkSpec::fan_out(std::size_t layer) const {
  return layer + 1 == num_layers() ? output_dim : hidden_width;
}

std::size_t NetworkSpec::layer_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += fan_in(l) * fan_out(l) + fan_out(l);
  }
  return off;
}

std::size_t NetworkSpec::num_params() const {
  return layer_offset(num_layers());
}

void NetworkSpec::validate() const {
  if (input_dim < 1 || output_dim < 1 || (hidden_layers > 0 && hidden_width < 1)) {
    throw ConfigError("network: all dimensions must be >= 1");
  }
}

InputScaling InputScaling::identity(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Vector::Zero(n), Vector::Ones(n)};
}

InputScaling InputScaling::from_ranges(const std::vector<double>& lo, const std::vector<double>& hi) {
  if (lo.size() != hi.size()) {
    throw DimensionMismatch("input scaling: range bounds differ in length");
  }
  const auto n = static_cast<Eigen::Index>(lo.size());
  InputScaling s{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = lo[static_cast<std::size_t>(i)];
    const double b = hi[static_cast<std::size_t>(i)];
    s.offset[i] = 0.5 * (a + b);
    s.scale[i] = b > a ? 2.0 / (b - a) : 1.0;
  }
  return s;
}

// ---------------------------------------------------------------------------

QNetwork::QNetwork(NetworkSpec spec, InputScaling scaling)
    : spec_(spec), scaling_(std::move(scaling)) {
  spec_.validate();
  const auto n = static_cast<Eigen::Index>(spec_.input_dim);
  if (scaling_.offset.size() != n || scaling_.scale.size() != n) {
    throw DimensionMismatch("network: input scaling does not match input_dim");
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(spec_.num_params()));
}

QNetwork QNetwork::glorot(NetworkSpec spec, InputScaling scaling, Rng& rng) {
  QNetwork net(spec, std::move(scaling));
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(spec.fan_in(l) + spec.fan_out(l)));
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        w(i, j) = limit * (2.0 * rng.uniform() - 1.0);
      }
    }
  }
  return net;
}

void QNetwork::set_params(const Vector& params) {
  if (params.size() != params_.size()) {
    throw DimensionMismatch("network: parameter vector has the wrong length");
  }
  params_ = params;
}

Eigen::Map<const Matrix> QNetwork::weight(std::size_t l) const {
  return {params_.data() + spec_.layer_offset(l), static_cast<Eigen::Index>(spec_.fan_out(l)),
          static_cast<Eigen::Index>(spec_.fan_in(l))};
}

Eigen::Map<Matrix> QNetwork::weight(std::size_t l) {
  return {params_.data() + spec_.layer_offset(l), static_cast<Eigen::Index>(spec_.fan_out(l)),
          static_cast<Eigen::Index>(spec_.fan_in(l))};
}

Eigen::Map<const Vector> QNetwork::bias(std::size_t l) const {
  return {params_.data() + spec_.layer_offset(l) + spec_.fan_in(l) * spec_.fan_out(l),
          static_cast<Eigen::Index>(spec_.fan_out(l))};
}

Eigen::Map<Vector> QNetwork::bias(std::size_t l) {
  return {params_.data() + spec_.layer_offset(l) + spec_.fan_in(l) * spec_.fan_out(l),
          static_cast<Eigen::Index>(spec_.fan_out(l))};
}

void QNetwork::check_input(Eigen::Index rows) const {
  if (rows != static_cast<Eigen::Index>(spec_.input_dim)) {
    std::ostringstream msg;
    msg << "network expects input of dimension " << spec_.input_dim << ", got " << rows;
    throw DimensionMismatch(msg.str());
  }
}

Matrix QNetwork::forward_batch(const Matrix& inputs) const {
  check_input(inputs.rows());
  Matrix a = (inputs.colwise() - scaling_.offset).array().colwise() * scaling_.scale.array();
  const std::size_t layers = spec_.num_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = weight(l) * a;
    z.colwise() += bias(l);
    a = l + 1 < layers ? tanh_of(z) : sigmoid_of(z);
  }
  return a;
}

Vector QNetwork::forward(const Vector& s) const {
  return forward_batch(s);
}

std::size_t argmax(const Eigen::Ref<const Vector>& q) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i) {
    if (q[i] > q[static_cast<Eigen::Index>(best)]) {
      best = static_cast<std::size_t>(i);
    }
  }
  return best;
}

std::size_t QNetwork::greedy_action(const Vector& s) const {
  return argmax(forward(s));
}

Vector QNetwork::grad_params(const Vector& s, std::size_t action, double upstream) const {
  BatchPass pass(*this, s);
  BatchPass::Seeds seeds;
  seeds.value = Matrix::Zero(static_cast<Eigen::Index>(spec_.output_dim), 1);
  seeds.value(static_cast<Eigen::Index>(action), 0) = upstream;
  Vector g = Vector::Zero(params_.size());
  pass.backward(seeds, &g);
  return g;
}

Vector QNetwork::grad_input(const Vector& s, std::size_t action) const {
  BatchPass pass(*this, s);
  BatchPass::Seeds seeds;
  seeds.value = Matrix::Zero(static_cast<Eigen::Index>(spec_.output_dim), 1);
  seeds.value(static_cast<Eigen::Index>(action), 0) = 1.0;
  Matrix gi;
  pass.backward(seeds, nullptr, &gi);
  return gi.col(0);
}

Vector QNetwork::hessian_vector_product(const Vector& s, std::size_t action, const Vector& v) const {
  check_input(v.size());
  BatchPass pass(*this, s, {BatchPass::Channel{v, false}});
  BatchPass::Seeds seeds;
  Matrix e = Matrix::Zero(static_cast<Eigen::Index>(spec_.output_dim), 1);
  e(static_cast<Eigen::Index>(action), 0) = 1.0;
  seeds.d1.push_back(e);
  Matrix gi;
  pass.backward(seeds, nullptr, &gi);
  return gi.col(0);
}

// ---------------------------------------------------------------------------

BatchPass::BatchPass(const QNetwork& net, const Matrix& inputs, std::vector<Channel> channels)
    : net_(&net) {
  net.check_input(inputs.rows());
  const auto& sc = net.scaling();
  const std::size_t layers = net.spec().num_layers();
  const std::size_t nk = channels.size();
  second_order_.resize(nk);
  acts_.reserve(layers + 1);
  acts_.push_back((inputs.colwise() - sc.offset).array().colwise() * sc.scale.array());
  act_d1_.resize(layers + 1);
  act_d2_.resize(layers + 1);
  pre_d1_.resize(layers);
  pre_d2_.resize(layers);
  for (std::size_t k = 0; k < nk; ++k) {
    if (channels[k].direction.rows() != inputs.rows() || channels[k].direction.cols() != inputs.cols()) {
      throw DimensionMismatch("batch pass: direction shape must match the inputs");
    }
    second_order_[k] = channels[k].second_order;
    act_d1_[0].push_back(channels[k].direction.array().colwise() * sc.scale.array());
    act_d2_[0].push_back(Matrix());  // identically zero at the input
  }
  for (std::size_t l = 0; l < layers; ++l) {
    const auto w = net.weight(l);
    Matrix z = w * acts_[l];
    z.colwise() += net.bias(l);
    const bool output = l + 1 == layers;
    Matrix a = output ? sigmoid_of(z) : tanh_of(z);
    if (nk > 0) {
      const Derivs d = output ? sigmoid_derivs(a, false) : tanh_derivs(a, false);
      for (std::size_t k = 0; k < nk; ++k) {
        Matrix zd1 = w * act_d1_[l][k];
        act_d1_[l + 1].push_back(d.d1.cwiseProduct(zd1));
        if (second_order_[k]) {
          Matrix zd2 = l == 0 ? Matrix::Zero(z.rows(), z.cols()) : Matrix(w * act_d2_[l][k]);
          act_d2_[l + 1].push_back(d.d1.cwiseProduct(zd2) +
                                   d.d2.cwiseProduct(zd1.cwiseProduct(zd1)));
          pre_d2_[l].push_back(std::move(zd2));
        } else {
          act_d2_[l + 1].push_back(Matrix());
          pre_d2_[l].push_back(Matrix());
        }
        pre_d1_[l].push_back(std::move(zd1));
      }
    }
    acts_.push_back(std::move(a));
  }
}

void BatchPass::backward(const Seeds& seeds, Vector* grad_params, Matrix* grad_inputs) const {
  const QNetwork& net = *net_;
  const std::size_t layers = net.spec().num_layers();
  const std::size_t nk = num_channels();
  const Eigen::Index rows = acts_.back().rows();
  const Eigen::Index cols = acts_.back().cols();
  if (seeds.d1.size() > nk || seeds.d2.size() > nk) {
    throw DimensionMismatch("batch pass: more seeds than channels");
  }
  auto check_shape = [&](const Matrix& m) {
    if (m.size() != 0 && (m.rows() != rows || m.cols() != cols)) {
      throw DimensionMismatch("batch pass: seed shape must match the output");
    }
  };
  check_shape(seeds.value);

  Matrix bar = seeds.value.size() ? seeds.value : Matrix::Zero(rows, cols);
  std::vector<Matrix> bar1(nk);
  std::vector<Matrix> bar2(nk);
  bool any_second = false;
  for (std::size_t k = 0; k < nk; ++k) {
    if (k < seeds.d1.size()) {
      check_shape(seeds.d1[k]);
      bar1[k] = seeds.d1[k];
    }
    if (k < seeds.d2.size() && seeds.d2[k].size() != 0) {
      check_shape(seeds.d2[k]);
      if (!second_order_[k]) {
        throw ContractViolation("batch pass: second-order seed on a first-order channel");
      }
      bar2[k] = seeds.d2[k];
      any_second = true;
    }
  }

  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& a = acts_[l + 1];
    const bool output = l + 1 == layers;
    const Derivs d = output ? sigmoid_derivs(a, any_second) : tanh_derivs(a, any_second);

    Matrix zbar = bar.cwiseProduct(d.d1);
    std::vector<Matrix> zbar1(nk);
    std::vector<Matrix> zbar2(nk);
    for (std::size_t k = 0; k < nk; ++k) {
      const bool has1 = bar1[k].size() != 0;
      const bool has2 = bar2[k].size() != 0;
      if (!has1 && !has2) {
        continue;
      }
      const Matrix& zd1 = pre_d1_[l][k];
      zbar1[k] = Matrix::Zero(a.rows(), a.cols());
      if (has1) {
        zbar.array() += bar1[k].array() * d.d2.array() * zd1.array();
        zbar1[k].array() += bar1[k].array() * d.d1.array();
      }
      if (has2) {
        const Matrix& zd2 = pre_d2_[l][k];
        zbar2[k] = bar2[k].cwiseProduct(d.d1);
        zbar1[k].array() += 2.0 * bar2[k].array() * d.d2.array() * zd1.array();
        zbar.array() += bar2[k].array() *
                        (d.d2.array() * zd2.array() + d.d3.array() * zd1.array().square());
      }
    }

    if (grad_params != nullptr) {
      const std::size_t off = net.spec().layer_offset(l);
      const auto fo = static_cast<Eigen::Index>(net.spec().fan_out(l));
      const auto fi = static_cast<Eigen::Index>(net.spec().fan_in(l));
      Eigen::Map<Matrix> gw(grad_params->data() + off, fo, fi);
      Eigen::Map<Vector> gb(grad_params->data() + off + fo * fi, fo);
      gw.noalias() += zbar * acts_[l].transpose();
      gb += zbar.rowwise().sum();
      for (std::size_t k = 0; k < nk; ++k) {
        if (zbar1[k].size() != 0) {
          gw.noalias() += zbar1[k] * act_d1_[l][k].transpose();
        }
        if (zbar2[k].size() != 0 && l > 0) {
          gw.noalias() += zbar2[k] * act_d2_[l][k].transpose();
        }
      }
    }

    if (l == 0 && grad_inputs == nullptr) {
      break;
    }
    const auto w = net.weight(l);
    bar.noalias() = w.transpose() * zbar;
    for (std::size_t k = 0; k < nk; ++k) {
      bar1[k] = zbar1[k].size() != 0 ? Matrix(w.transpose() * zbar1[k]) : Matrix();
      bar2[k] = zbar2[k].size() != 0 ? Matrix(w.transpose() * zbar2[k]) : Matrix();
    }
  }

  if (grad_inputs != nullptr) {
    *grad_inputs = bar.array().colwise() * net.scaling().scale.array();
  }
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kFormat = "pirl-qnet";

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

}  // namespace

std::string serialize_checkpoint(const QNetwork& net, const std::string& tag) {
  const NetworkSpec& spec = net.spec();
  std::string payload;
  const std::size_t count = 2 * spec.input_dim + spec.num_params();
  payload.reserve(8 * count);
  for (Eigen::Index i = 0; i < net.scaling().offset.size(); ++i) {
    put_le(payload, net.scaling().offset[i]);
  }
  for (Eigen::Index i = 0; i < net.scaling().scale.size(); ++i) {
    put_le(payload, net.scaling().scale[i]);
  }
  for (Eigen::Index i = 0; i < net.params().size(); ++i) {
    put_le(payload, net.params()[i]);
  }
  nlohmann::json header = {
      {"format", kFormat},
      {"version", kCheckpointVersion},
      {"endianness", "little"},
      {"input_dim", spec.input_dim},
      {"hidden_layers", spec.hidden_layers},
      {"hidden_width", spec.hidden_width},
      {"output_dim", spec.output_dim},
      {"hidden_activation", "tanh"},
      {"output_activation", "sigmoid"},
      {"num_params", spec.num_params()},
      {"payload_layout", "input_offset,input_scale,theta"},
      {"payload_bytes", payload.size()},
      {"checksum_fnv1a64", hex64(fnv1a64(payload))},
      {"tag", tag},
  };
  return header.dump() + "\n" + payload;
}

QNetwork deserialize_checkpoint(const std::string& bytes, std::string* tag) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) {
    throw CheckpointError("checkpoint: missing header line (corrupt payload)");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: unreadable header: ") + e.what());
  }
  if (header.value("format", "") != kFormat) {
    throw CheckpointError("checkpoint: not a pirl-qnet file");
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError("checkpoint: version mismatch (file " +
                          std::to_string(header.value("version", -1)) + ", expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (header.value("endianness", "") != "little") {
    throw CheckpointError("checkpoint: unsupported endianness");
  }
  NetworkSpec spec;
  try {
    spec.input_dim = header.at("input_dim").get<std::size_t>();
    spec.hidden_layers = header.at("hidden_layers").get<std::size_t>();
    spec.hidden_width = header.at("hidden_width").get<std::size_t>();
    spec.output_dim = header.at("output_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: incomplete header: ") + e.what());
  }
  spec.validate();
  const std::string payload = bytes.substr(nl + 1);
  const std::size_t expected = 8 * (2 * spec.input_dim + spec.num_params());
  if (payload.size() != expected || header.value("payload_bytes", std::size_t{0}) != expected) {
    throw CheckpointError("checkpoint: corrupt payload (expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(payload.size()) + ")");
  }
  if (header.value("checksum_fnv1a64", "") != hex64(fnv1a64(payload))) {
    throw CheckpointError("checkpoint: corrupt payload (checksum mismatch)");
  }
  const auto n = static_cast<Eigen::Index>(spec.input_dim);
  InputScaling scaling{Vector(n), Vector(n)};
  const char* p = payload.data();
  for (Eigen::Index i = 0; i < n; ++i, p += 8) {
    scaling.offset[i] = get_le(p);
  }
  for (Eigen::Index i = 0; i < n; ++i, p += 8) {
    scaling.scale[i] = get_le(p);
  }
  QNetwork net(spec, scaling);
  for (Eigen::Index i = 0; i < net.params().size(); ++i, p += 8) {
    net.params()[i] = get_le(p);
  }
  if (tag != nullptr) {
    *tag = header.value("tag", "");
  }
  return net;
}

void checkpoint_save(const QNetwork& net, const std::filesystem::path& path, const std::string& tag) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  }
  const std::string bytes = serialize_checkpoint(net, tag);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("checkpoint: write failed for " + path.string());
  }
}

QNetwork checkpoint_load(const std::filesystem::path& path, std::string* tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("checkpoint: cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str(), tag);
}

// ---------------------------------------------------------------------------

void Adam::step(Vector& params, const Vector& grad) {
  if (m_.size() != params.size()) {
    m_ = Vector::Zero(params.size());
    v_ = Vector::Zero(params.size());
    t_ = 0;
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace pirl::qnet
