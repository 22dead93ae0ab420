#include "bacnn/layers.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bacnn/error.hpp"
#include "binary_io.hpp"

namespace bacnn {

namespace {

std::atomic<bool> conv_sign_flip{false};

Tensor he_normal(Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

struct ConvGeometry {
  Index k, stride, out_h, out_w, pad_top, pad_left;
};

ConvGeometry geometry(const Shape4& s, const ConvLayer& layer) {
  const Index k = layer.kernel_size();
  const Index stride = layer.stride;
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{k, stride, 0, 0, 0, 0};
  if (layer.padding == Padding::same) {
    g.out_h = (s.h + stride - 1) / stride;
    g.out_w = (s.w + stride - 1) / stride;
    g.pad_top = std::max<Index>((g.out_h - 1) * stride + k - s.h, 0) / 2;
    g.pad_left = std::max<Index>((g.out_w - 1) * stride + k - s.w, 0) / 2;
  } else {
    if (s.h < k || s.w < k) throw ShapeError("conv2d: input smaller than kernel with valid padding");
    g.out_h = (s.h - k) / stride + 1;
    g.out_w = (s.w - k) / stride + 1;
  }
  return g;
}

// Patch matrix of one sample: row (oy*out_w + ox), column ((ky*k + kx)*c + ch).
void im2col(const double* x, const Shape4& s, const ConvGeometry& g, RowMatrix& col) {
  col.setZero(g.out_h * g.out_w, g.k * g.k * s.c);
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      double* row = col.data() + (oy * g.out_w + ox) * col.cols();
      for (Index ky = 0; ky < g.k; ++ky) {
        const Index iy = oy * g.stride - g.pad_top + ky;
        if (iy < 0 || iy >= s.h) continue;
        for (Index kx = 0; kx < g.k; ++kx) {
          const Index ix = ox * g.stride - g.pad_left + kx;
          if (ix < 0 || ix >= s.w) continue;
          const double* src = x + (iy * s.w + ix) * s.c;
          std::copy(src, src + s.c, row + (ky * g.k + kx) * s.c);
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& col, const Shape4& s, const ConvGeometry& g, double* dx) {
  for (Index oy = 0; oy < g.out_h; ++oy) {
    for (Index ox = 0; ox < g.out_w; ++ox) {
      const double* row = col.data() + (oy * g.out_w + ox) * col.cols();
      for (Index ky = 0; ky < g.k; ++ky) {
        const Index iy = oy * g.stride - g.pad_top + ky;
        if (iy < 0 || iy >= s.h) continue;
        for (Index kx = 0; kx < g.k; ++kx) {
          const Index ix = ox * g.stride - g.pad_left + kx;
          if (ix < 0 || ix >= s.w) continue;
          double* dst = dx + (iy * s.w + ix) * s.c;
          const double* src = row + (ky * g.k + kx) * s.c;
          for (Index ch = 0; ch < s.c; ++ch) dst[ch] += src[ch];
        }
      }
    }
  }
}

// rows x d_in times d_in x d_out plus bias, shared by dense and channel_mix.
Var affine(Tape& tape, const char* op, const Var& v, const Var& weight, const Var& bias, Index d_in, Index d_out,
           Shape out_shape) {
  const Index rows = v.value().size() / d_in;
  Tensor out(std::move(out_shape));
  auto y = out.matrix(rows, d_out);
  y.noalias() = v.value().matrix(rows, d_in) * weight.value().matrix(d_in, d_out);
  y.rowwise() += bias.value().vec().transpose();
  return tape.record(op, std::move(out), {v, weight, bias},
                     [v, weight, bias, rows, d_in, d_out](const Tensor& g) mutable {
                       auto gy = g.matrix(rows, d_out);
                       if (weight.requires_grad()) {
                         weight.grad_buffer().matrix(d_in, d_out).noalias() +=
                             v.value().matrix(rows, d_in).transpose() * gy;
                       }
                       if (bias.requires_grad()) bias.grad_buffer().vec() += gy.colwise().sum().transpose();
                       if (v.requires_grad()) {
                         v.grad_buffer().matrix(rows, d_in).noalias() +=
                             gy * weight.value().matrix(d_in, d_out).transpose();
                       }
                     });
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softmax") return Activation::softmax;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected relu, sigmoid or softmax)");
}

ConvLayer make_conv(Index kernel_size, Index in_channels, Index out_channels, Rng& rng, const std::string& name,
                    Padding padding, Index stride) {
  const Index fan_in = kernel_size * kernel_size * in_channels;
  ConvLayer layer;
  layer.kernel = Var::parameter(he_normal({kernel_size, kernel_size, in_channels, out_channels}, fan_in, rng),
                                name + ".kernel");
  layer.bias = Var::parameter(Tensor({out_channels}), name + ".bias");
  layer.padding = padding;
  layer.stride = stride;
  return layer;
}

BatchNormLayer make_batchnorm(Index channels, const std::string& name) {
  BatchNormLayer layer;
  layer.gamma = Var::parameter(Tensor({channels}, 1.0), name + ".gamma");
  layer.beta = Var::parameter(Tensor({channels}), name + ".beta");
  layer.running_mean = Tensor({channels});
  layer.running_var = Tensor({channels}, 1.0);
  return layer;
}

DenseLayer make_dense(Index in_features, Index out_features, Rng& rng, const std::string& name) {
  return {Var::parameter(he_normal({in_features, out_features}, in_features, rng), name + ".weight"),
          Var::parameter(Tensor({out_features}), name + ".bias")};
}

Var conv2d(Tape& tape, const Var& x, const ConvLayer& layer) {
  const Shape4 s = shape4(x.value());
  if (layer.kernel.value().ndim() != 4 || layer.kernel_size() != layer.kernel.value().dim(1)) {
    throw ShapeError("conv2d: kernel must be [k,k,c_in,c_out]");
  }
  if (layer.in_channels() != s.c) {
    throw ShapeError("conv2d: input has " + std::to_string(s.c) + " channels, kernel expects " +
                     std::to_string(layer.in_channels()));
  }
  const ConvGeometry g = geometry(s, layer);
  const Index cout = layer.out_channels();
  const Index patch = g.k * g.k * s.c;
  const Index out_pixels = g.out_h * g.out_w;
  const Index in_pixels = s.h * s.w;

  Tensor out({s.n, g.out_h, g.out_w, cout});
  auto kernel = layer.kernel.value().matrix(patch, cout);
  RowMatrix col;
  for (Index n = 0; n < s.n; ++n) {
    im2col(x.value().ptr() + n * in_pixels * s.c, s, g, col);
    MatrixMap y(out.ptr() + n * out_pixels * cout, out_pixels, cout);
    y.noalias() = col * kernel;
    y.rowwise() += layer.bias.value().vec().transpose();
  }

  Var w = layer.kernel;
  Var b = layer.bias;
  return tape.record("conv2d", std::move(out), {x, w, b},
                     [x, w, b, s, g, cout, patch, out_pixels, in_pixels](const Tensor& grad) mutable {
                       const double sign = conv_sign_flip.load() ? -1.0 : 1.0;
                       RowMatrix col;
                       RowMatrix dcol;
                       auto kernel = w.value().matrix(patch, cout);
                       for (Index n = 0; n < s.n; ++n) {
                         ConstMatrixMap gy(grad.ptr() + n * out_pixels * cout, out_pixels, cout);
                         if (b.requires_grad()) b.grad_buffer().vec() += gy.colwise().sum().transpose();
                         if (w.requires_grad()) {
                           im2col(x.value().ptr() + n * in_pixels * s.c, s, g, col);
                           w.grad_buffer().matrix(patch, cout).noalias() += sign * (col.transpose() * gy);
                         }
                         if (x.requires_grad()) {
                           dcol.noalias() = sign * (gy * kernel.transpose());
                           col2im_add(dcol, s, g, x.grad_buffer().ptr() + n * in_pixels * s.c);
                         }
                       }
                     });
}

Var channel_mix(Tape& tape, const Var& v, const ConvLayer& layer) {
  if (layer.kernel.value().ndim() != 4 || layer.kernel_size() != 1 || layer.kernel.value().dim(1) != 1) {
    throw ShapeError("channel_mix: kernel must be 1x1");
  }
  if (v.value().ndim() != 2) throw ShapeError("channel_mix: expected [n, z] input, got " + shape_string(v.shape()));
  const Index z_in = layer.in_channels();
  const Index z_out = layer.out_channels();
  if (v.value().dim(1) != z_in) {
    throw ShapeError("channel_mix: input depth " + std::to_string(v.value().dim(1)) + " vs kernel depth " +
                     std::to_string(z_in));
  }
  return affine(tape, "channel_mix", v, layer.kernel, layer.bias, z_in, z_out, {v.value().dim(0), z_out});
}

Var dense(Tape& tape, const Var& v, const Var& weight, const Var& bias) {
  if (v.value().ndim() != 2 || weight.value().ndim() != 2 || bias.value().ndim() != 1) {
    throw ShapeError("dense: expected v [n,d_in], W [d_in,d_out], b [d_out]");
  }
  const Index d_in = weight.value().dim(0);
  const Index d_out = weight.value().dim(1);
  if (v.value().dim(1) != d_in || bias.value().dim(0) != d_out) {
    throw ShapeError("dense: " + shape_string(v.shape()) + " x " + shape_string(weight.shape()) + " + " +
                     shape_string(bias.shape()) + " do not agree");
  }
  return affine(tape, "dense", v, weight, bias, d_in, d_out, {v.value().dim(0), d_out});
}

Var batchnorm(Tape& tape, const Var& x, BatchNormLayer& layer, Mode mode) {
  const Index c = layer.channels();
  if (x.value().dim(-1) != c) {
    throw ShapeError("batchnorm: input has " + std::to_string(x.value().dim(-1)) + " channels, layer has " +
                     std::to_string(c));
  }
  const Index rows = x.value().size() / c;
  auto xm = x.value().matrix(rows, c);

  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd var;
  if (mode == Mode::train) {
    mean = xm.colwise().mean();
    var = (xm.rowwise() - mean).array().square().colwise().mean();
    layer.running_mean.vec() = layer.momentum * layer.running_mean.vec() + (1.0 - layer.momentum) * mean.transpose();
    layer.running_var.vec() = layer.momentum * layer.running_var.vec() + (1.0 - layer.momentum) * var.transpose();
  } else {
    mean = layer.running_mean.vec().transpose();
    var = layer.running_var.vec().transpose();
  }
  const Eigen::RowVectorXd inv_std = (var.array() + layer.eps).rsqrt().matrix();

  Tensor xhat(x.shape());
  xhat.matrix(rows, c) = (xm.rowwise() - mean).array().rowwise() * inv_std.array();
  Tensor out(x.shape());
  out.matrix(rows, c) = (xhat.matrix(rows, c).array().rowwise() * layer.gamma.value().vec().transpose().array())
                            .rowwise() +
                        layer.beta.value().vec().transpose().array();

  Var gamma = layer.gamma;
  Var beta = layer.beta;
  return tape.record("batchnorm", std::move(out), {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, rows, c, mode](const Tensor& g) mutable {
                       auto gy = g.matrix(rows, c);
                       auto xh = xhat.matrix(rows, c);
                       if (gamma.requires_grad()) {
                         gamma.grad_buffer().vec() += (gy.array() * xh.array()).colwise().sum().transpose().matrix();
                       }
                       if (beta.requires_grad()) beta.grad_buffer().vec() += gy.colwise().sum().transpose();
                       if (!x.requires_grad()) return;
                       const Eigen::RowVectorXd scale =
                           (inv_std.array() * gamma.value().vec().transpose().array()).matrix();
                       auto gx = x.grad_buffer().matrix(rows, c);
                       if (mode == Mode::eval) {
                         gx.array() += gy.array().rowwise() * scale.array();
                         return;
                       }
                       const double m = static_cast<double>(rows);
                       const Eigen::RowVectorXd sum_g = gy.colwise().sum();
                       const Eigen::RowVectorXd sum_gx = (gy.array() * xh.array()).colwise().sum().matrix();
                       gx.array() += ((gy.array() * m).rowwise() - sum_g.array() -
                                      xh.array().rowwise() * sum_gx.array())
                                         .rowwise() *
                                     (scale.array() / m);
                     });
}

Var maxpool2(Tape& tape, const Var& x) {
  const Shape4 s = shape4(x.value());
  if (s.h < 2 || s.w < 2) throw ShapeError("maxpool2: needs h, w >= 2, got " + shape_string(x.shape()));
  const Index oh = s.h / 2;
  const Index ow = s.w / 2;
  Tensor out({s.n, oh, ow, s.c});
  std::vector<Index> source(static_cast<std::size_t>(out.size()));
  const bool track = diag::kink_tracking_enabled();
  const double* in = x.value().ptr();
  Index o = 0;
  for (Index n = 0; n < s.n; ++n) {
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) {
        for (Index ch = 0; ch < s.c; ++ch, ++o) {
          Index best = -1;
          double best_v = -std::numeric_limits<double>::infinity();
          double runner_up = -std::numeric_limits<double>::infinity();
          for (Index dy = 0; dy < 2; ++dy) {
            for (Index dx = 0; dx < 2; ++dx) {
              const Index idx = ((n * s.h + 2 * y + dy) * s.w + 2 * xx + dx) * s.c + ch;
              if (in[idx] > best_v) {
                runner_up = best_v;
                best_v = in[idx];
                best = idx;
              } else if (in[idx] > runner_up) {
                runner_up = in[idx];
              }
            }
          }
          out[o] = best_v;
          source[static_cast<std::size_t>(o)] = best;
          if (track) diag::note_kink_distance(best_v - runner_up);
        }
      }
    }
  }
  return tape.record("maxpool2", std::move(out), {x}, [x, source = std::move(source)](const Tensor& g) mutable {
    if (!x.requires_grad()) return;
    Tensor& gx = x.grad_buffer();
    for (std::size_t i = 0; i < source.size(); ++i) gx[source[i]] += g[static_cast<Index>(i)];
  });
}

Var relu(Tape& tape, const Var& x) {
  if (diag::kink_tracking_enabled()) diag::note_kink_distance(x.value().vec().cwiseAbs().minCoeff());
  Tensor out(x.shape());
  out.vec() = x.value().vec().cwiseMax(0.0);
  return tape.record("relu", std::move(out), {x}, [x](const Tensor& g) mutable {
    if (!x.requires_grad()) return;
    x.grad_buffer().vec().array() += (x.value().vec().array() > 0.0).select(g.vec().array(), 0.0);
  });
}

Var sigmoid(Tape& tape, const Var& x) {
  Tensor out(x.shape());
  out.vec() = (1.0 + (-x.value().vec().array()).exp()).inverse().matrix();
  Tensor y = out;
  return tape.record("sigmoid", std::move(out), {x}, [x, y](const Tensor& g) mutable {
    if (!x.requires_grad()) return;
    x.grad_buffer().vec().array() += g.vec().array() * y.vec().array() * (1.0 - y.vec().array());
  });
}

Var softmax(Tape& tape, const Var& x) {
  const Index k = x.value().dim(-1);
  const Index rows = x.value().size() / k;
  Tensor out(x.shape());
  auto xm = x.value().matrix(rows, k);
  auto ym = out.matrix(rows, k);
  for (Index r = 0; r < rows; ++r) {
    ym.row(r) = (xm.row(r).array() - xm.row(r).maxCoeff()).exp().matrix();
    ym.row(r) /= ym.row(r).sum();
  }
  Tensor y = out;
  return tape.record("softmax", std::move(out), {x}, [x, y, rows, k](const Tensor& g) mutable {
    if (!x.requires_grad()) return;
    auto gy = g.matrix(rows, k);
    auto ym = y.matrix(rows, k);
    auto gx = x.grad_buffer().matrix(rows, k);
    for (Index r = 0; r < rows; ++r) {
      const double dot = gy.row(r).dot(ym.row(r));
      gx.row(r).array() += ym.row(r).array() * (gy.row(r).array() - dot);
    }
  });
}

Var activation(Tape& tape, Activation kind, const Var& x) {
  switch (kind) {
    case Activation::relu: return relu(tape, x);
    case Activation::sigmoid: return sigmoid(tape, x);
    case Activation::softmax: return softmax(tape, x);
  }
  throw ContractError("unknown activation");
}

Var dropout(Tape& tape, const Var& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: rate must lie in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  for (double& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out = x.value();
  out.vec().array() *= mask.vec().array();
  return tape.record("dropout", std::move(out), {x}, [x, mask](const Tensor& g) mutable {
    if (x.requires_grad()) x.grad_buffer().vec().array() += g.vec().array() * mask.vec().array();
  });
}

Var cross_entropy(Tape& tape, const Var& logits, std::span<const int> labels) {
  if (logits.value().ndim() != 2) throw ShapeError("cross_entropy: logits must be [n, k]");
  const Index n = logits.value().dim(0);
  const Index k = logits.value().dim(1);
  if (static_cast<Index>(labels.size()) != n) throw ContractError("cross_entropy: label count differs from batch");
  for (int label : labels) {
    if (label < 0 || label >= k) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  auto z = logits.value().matrix(n, k);
  Tensor probs({n, k});
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const double mx = z.row(r).maxCoeff();
    const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    total += lse - z(r, labels[static_cast<std::size_t>(r)]);
    probs.matrix(n, k).row(r) = (z.row(r).array() - lse).exp().matrix();
  }
  std::vector<int> targets(labels.begin(), labels.end());
  return tape.record("cross_entropy", Tensor({1}, total / static_cast<double>(n)), {logits},
                     [logits, probs, targets = std::move(targets), n, k](const Tensor& g) mutable {
                       if (!logits.requires_grad()) return;
                       const double s = g[0] / static_cast<double>(n);
                       auto gz = logits.grad_buffer().matrix(n, k);
                       gz += s * probs.matrix(n, k);
                       for (Index r = 0; r < n; ++r) gz(r, targets[static_cast<std::size_t>(r)]) -= s;
                     });
}

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out << "BACKPT " << tensors.size() << '\n';
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \t\n") != std::string::npos) {
      throw ContractError("checkpoint tensor names must be non-empty and whitespace-free");
    }
    out << t.name;
    for (Index e : t.tensor.shape()) out << ' ' << e;
    out << '\n';
  }
  for (const auto& t : tensors) write_tensor(out, t.tensor);
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  std::istringstream header(detail::read_header_line(in, "checkpoint"));
  std::string magic;
  std::size_t count = 0;
  if (!(header >> magic >> count) || magic != "BACKPT") throw FormatError("bad checkpoint header");
  std::vector<NamedTensor> tensors(count);
  std::vector<Shape> declared(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line(detail::read_header_line(in, "checkpoint manifest"));
    if (!(line >> tensors[i].name)) throw FormatError("empty checkpoint manifest line");
    Index e = 0;
    while (line >> e) declared[i].push_back(e);
  }
  for (std::size_t i = 0; i < count; ++i) {
    tensors[i].tensor = read_tensor(in);
    if (tensors[i].tensor.shape() != declared[i]) {
      throw FormatError("checkpoint entry '" + tensors[i].name + "' does not match its manifest shape");
    }
  }
  return tensors;
}

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path);
  write_checkpoint(out, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

namespace fault {
void set_conv_backward_sign_flip(bool on) { conv_sign_flip.store(on); }
}  // namespace fault

}  // namespace bacnn
