#pragma once

// Tiny differentiable network stack for the action-value function:
// conv2d, dense, relu and flatten layers over float64, plus Adam and a
// checkpoint format.
//
// Checkpoint layout (all integers little-endian):
//   "TEPO"            4 bytes
//   version           u32 (= 1)
//   spec length       u32
//   spec text         layer-spec block, see NetSpec::to_text
//   parameters        f64 each, layer order, weights then biases

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tepo/tensor.hpp"

namespace tepo::nn {

enum class LayerKind : std::uint8_t { Conv, Relu, Flatten, Dense };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int out = 0;  // conv: output channels; dense: output width
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  bool operator==(const LayerSpec&) const = default;
};

struct NetSpec {
  int in_channels = 0;
  int in_height = 0;
  int in_width = 0;
  std::vector<LayerSpec> layers;

  /// conv 5->8 k3 s1 p1, relu, conv 8->16 k3 s2 p1, relu, conv 16->16 k3 s2 p1,
  /// relu, flatten, dense 64, relu, dense 4.
  static NetSpec default_qnet(int channels, int height, int width);

  /// One layer per line: "input C H W", "conv OUT K S P", "relu", "flatten", "dense OUT".
  std::string to_text() const;
  static NetSpec parse(const std::string& text);

  bool operator==(const NetSpec&) const = default;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-layer parameter storage: weights followed by biases.
struct LayerParams {
  std::vector<double> weight;
  std::vector<double> bias;
};

class Net;

/// Activations saved by a training forward pass.
struct Trace {
  std::vector<Tensor> activations;  // activations[i] is the input to layer i
  std::vector<std::vector<double>> columns;  // im2col buffers for conv layers
};

/// Same layout as the net's parameters.
struct Gradients {
  std::vector<LayerParams> layers;
  void zero();
};

class Net {
 public:
  explicit Net(NetSpec spec);

  const NetSpec& spec() const noexcept { return spec_; }
  /// Shape of the input to layer i; index layers().size() gives the output shape.
  const std::vector<int>& shape_at(std::size_t i) const { return shapes_.at(i); }
  std::size_t output_size() const;

  std::vector<LayerParams>& params() noexcept { return params_; }
  const std::vector<LayerParams>& params() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept;
  /// Parameters flattened in declaration order.
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

  /// Uniform in +-sqrt(6/fan_in) for weights, zero biases.
  void init_uniform(std::uint64_t seed);

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, Trace& trace) const;
  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
  void backward(const Trace& trace, std::span<const double> grad_out, Gradients& grads) const;

  Gradients make_gradients() const;

 private:
  void check_input(const Tensor& x) const;
  Tensor run(const Tensor& x, Trace* trace) const;

  NetSpec spec_;
  std::vector<std::vector<int>> shapes_;
  std::vector<LayerParams> params_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const Net& net, AdamConfig cfg = {});
  void step(Net& net, const Gradients& grads);
  std::uint64_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<LayerParams> m_;
  std::vector<LayerParams> v_;
};

/// One regression sample for the selected action's output.
struct QSample {
  const Tensor* features = nullptr;
  int action = 0;
  double target = 0.0;
};

/// Mean over the batch of (Q(x)[a] - y)^2 and its parameter gradient.
/// Throws TrainingError if the loss is not finite.
double bellman_loss_and_gradients(const Net& net, std::span<const QSample> batch, Gradients& grads);

/// One optimizer step on the mean squared Bellman error; returns the loss
/// measured before the update.
double backward_and_step(Net& net, Adam& opt, std::span<const QSample> batch);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save(const Net& net, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize(const Net& net);
/// Throws FormatError on a bad magic/version, truncated data or a layer spec
/// inconsistent with the parameter block.
Net load(const std::filesystem::path& path);
Net deserialize(std::span<const std::uint8_t> bytes);
/// As load(), and also requires the stored spec to equal `expected`.
Net load(const std::filesystem::path& path, const NetSpec& expected);

}  // namespace tepo::nn
