#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pirl/rng.hpp"

namespace pirl::qnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Fully connected net: `hidden_layers` tanh layers of `hidden_width` units,
/// then a sigmoid output layer with one unit per action.
struct NetworkSpec {
  std::size_t input_dim = 2;
  std::size_t hidden_layers = 3;
  std::size_t hidden_width = 32;
  std::size_t output_dim = 3;

  std::size_t num_layers() const { return hidden_layers + 1; }
  std::size_t fan_in(std::size_t layer) const;
  std::size_t fan_out(std::size_t layer) const;
  /// Offset of layer `layer`'s weights in the flat parameter vector.
  std::size_t layer_offset(std::size_t layer) const;
  std::size_t num_params() const;
  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

/// Affine input map applied before the first layer: a0 = scale .* (s - offset).
struct InputScaling {
  Vector offset;
  Vector scale;

  static InputScaling identity(std::size_t dim);
  /// Maps each [lo_i, hi_i] onto [-1, 1]; degenerate ranges get scale 1.
  static InputScaling from_ranges(const std::vector<double>& lo, const std::vector<double>& hi);
};

/// Parameter layout (layer-major): for each layer the weight matrix
/// (fan_out x fan_in, column-major) followed by its bias vector.
class QNetwork {
 public:
  QNetwork(NetworkSpec spec, InputScaling scaling);

  /// Glorot-uniform weights, zero biases.
  static QNetwork glorot(NetworkSpec spec, InputScaling scaling, Rng& rng);

  const NetworkSpec& spec() const { return spec_; }
  const InputScaling& scaling() const { return scaling_; }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }
  void set_params(const Vector& params);

  Eigen::Map<const Matrix> weight(std::size_t layer) const;
  Eigen::Map<Matrix> weight(std::size_t layer);
  Eigen::Map<const Vector> bias(std::size_t layer) const;
  Eigen::Map<Vector> bias(std::size_t layer);

  /// q in (0,1)^{|A|}. Throws DimensionMismatch on wrong input size.
  Vector forward(const Vector& s) const;
  /// Columns are samples.
  Matrix forward_batch(const Matrix& inputs) const;
  std::size_t greedy_action(const Vector& s) const;

  /// upstream * d q_a / d theta.
  Vector grad_params(const Vector& s, std::size_t action, double upstream) const;
  /// d q_a / d s.
  Vector grad_input(const Vector& s, std::size_t action) const;
  /// (d^2 q_a / d s^2) v.
  Vector hessian_vector_product(const Vector& s, std::size_t action, const Vector& v) const;

  void check_input(Eigen::Index rows) const;

 private:
  NetworkSpec spec_;
  InputScaling scaling_;
  Vector params_;
};

/// Lowest index among the maxima.
std::size_t argmax(const Eigen::Ref<const Vector>& q);

/// Batched forward pass that also propagates directional derivatives.
///
/// Each channel k carries a direction v_k (one column per sample, in raw input
/// coordinates) and yields d/dt q(s + t v_k) at t = 0 and, when
/// `second_order` is set, d^2/dt^2 q(s + t v_k). `backward` differentiates any
/// linear combination of these outputs exactly with respect to the
/// parameters and the inputs.
class BatchPass {
 public:
  struct Channel {
    Matrix direction;
    bool second_order = false;
  };

  /// Output adjoints. Empty matrices mean "not seeded".
  struct Seeds {
    Matrix value;
    std::vector<Matrix> d1;
    std::vector<Matrix> d2;
  };

  BatchPass(const QNetwork& net, const Matrix& inputs, std::vector<Channel> channels = {});

  std::size_t batch_size() const { return static_cast<std::size_t>(acts_.front().cols()); }
  std::size_t num_channels() const { return second_order_.size(); }
  const Matrix& q() const { return acts_.back(); }
  const Matrix& q_d1(std::size_t channel) const { return act_d1_.back()[channel]; }
  const Matrix& q_d2(std::size_t channel) const { return act_d2_.back()[channel]; }

  /// Accumulates into `grad_params` (size num_params) when non-null and writes
  /// the value-channel input gradient into `grad_inputs` when non-null.
  void backward(const Seeds& seeds, Vector* grad_params, Matrix* grad_inputs = nullptr) const;

 private:
  const QNetwork* net_;
  std::vector<bool> second_order_;
  std::vector<Matrix> acts_;                  // [0..L]
  std::vector<std::vector<Matrix>> pre_d1_;   // [1..L] stored at l-1
  std::vector<std::vector<Matrix>> pre_d2_;
  std::vector<std::vector<Matrix>> act_d1_;   // [0..L]
  std::vector<std::vector<Matrix>> act_d2_;
};

// Checkpoints: one line of JSON header, '\n', then the payload as
// little-endian IEEE-754 binary64 values: input offset, input scale, theta.
inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const QNetwork& net, const std::string& tag = "");
QNetwork deserialize_checkpoint(const std::string& bytes, std::string* tag = nullptr);
void checkpoint_save(const QNetwork& net, const std::filesystem::path& path,
                     const std::string& tag = "");
QNetwork checkpoint_load(const std::filesystem::path& path, std::string* tag = nullptr);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(Vector& params, const Vector& grad) = 0;
  virtual void set_learning_rate(double lr) = 0;
};

class Sgd final : public Optimizer {
 public:
  explicit Sgd(double learning_rate) : lr_(learning_rate) {}
  void step(Vector& params, const Vector& grad) override { params.noalias() -= lr_ * grad; }
  void set_learning_rate(double lr) override { lr_ = lr; }

 private:
  double lr_;
};

class Adam final : public Optimizer {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}
  void step(Vector& params, const Vector& grad) override;
  void set_learning_rate(double lr) override { lr_ = lr; }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

}  // namespace pirl::qnet
