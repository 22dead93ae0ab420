#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bacnn/autograd.hpp"
#include "bacnn/rng.hpp"
#include "bacnn/tensor.hpp"

namespace bacnn {

enum class Padding { same, valid };
enum class Activation { relu, sigmoid, softmax };

const char* to_string(Activation a);
Activation parse_activation(std::string_view name);

/// 2-D convolution; a 1x1 kernel doubles as the channel-mixing layer.
struct ConvLayer {
  Var kernel;  // [kh, kw, c_in, c_out]
  Var bias;    // [c_out]
  Padding padding = Padding::same;
  Index stride = 1;

  Index kernel_size() const { return kernel.value().dim(0); }
  Index in_channels() const { return kernel.value().dim(2); }
  Index out_channels() const { return kernel.value().dim(3); }
};

/// Kernel drawn from N(0, 2 / fan_in), zero bias.
ConvLayer make_conv(Index kernel_size, Index in_channels, Index out_channels, Rng& rng, const std::string& name,
                    Padding padding = Padding::same, Index stride = 1);

struct BatchNormLayer {
  Var gamma;  // [c]
  Var beta;   // [c]
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double eps = 1e-5;

  Index channels() const { return gamma.value().dim(0); }
};

BatchNormLayer make_batchnorm(Index channels, const std::string& name);

struct DenseLayer {
  Var weight;  // [d_in, d_out]
  Var bias;    // [d_out]
};

DenseLayer make_dense(Index in_features, Index out_features, Rng& rng, const std::string& name);

/// Cross-correlation of x [n,h,w,c_in] with the layer kernel.
Var conv2d(Tape& tape, const Var& x, const ConvLayer& layer);

/// out = v * W + b on per-sample channel vectors v [n, z_in]; W is the 1x1 kernel.
Var channel_mix(Tape& tape, const Var& v, const ConvLayer& layer);

/// Per-channel normalization over every axis but the last. Train mode uses batch
/// statistics and moves the running estimates; eval mode uses the running estimates.
Var batchnorm(Tape& tape, const Var& x, BatchNormLayer& layer, Mode mode);

/// 2x2 window, stride 2, odd trailing row/column dropped. Gradient goes to the
/// first maximum in row-major window order.
Var maxpool2(Tape& tape, const Var& x);

Var relu(Tape& tape, const Var& x);
Var sigmoid(Tape& tape, const Var& x);
/// Over the last axis, max-shifted.
Var softmax(Tape& tape, const Var& x);
Var activation(Tape& tape, Activation kind, const Var& x);

Var dense(Tape& tape, const Var& v, const Var& weight, const Var& bias);
inline Var dense(Tape& tape, const Var& v, const DenseLayer& layer) {
  return dense(tape, v, layer.weight, layer.bias);
}

/// Inverted dropout. Eval mode and p == 0 return x itself.
Var dropout(Tape& tape, const Var& x, double p, Mode mode, Rng& rng);

/// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(Tape& tape, const Var& logits, std::span<const int> labels);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Checkpoint: "BACKPT <count>\n", one "<name> <e1> ... <ek>\n" manifest line per
// tensor, then one tensor dump per entry in manifest order.
void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

namespace fault {
/// Negates the conv2d input/kernel gradients. Used to prove the gradient suite
/// catches a broken backward pass.
void set_conv_backward_sign_flip(bool on);
}  // namespace fault

}  // namespace bacnn
