#include "bacnn/attention.hpp"

#include <cmath>

#include "bacnn/error.hpp"

namespace bacnn {

Index bottleneck_width(Index bands, double ratio) {
  if (bands < 1) throw ConfigError("band count must be positive");
  if (!(ratio > 0.0) || !std::isfinite(ratio)) throw ConfigError("aggregation ratio r must be a positive number");
  const double width = std::round(static_cast<double>(bands) / ratio);
  // c/r is rounded to the nearest integer and clamped to at least 1.
  return std::max<Index>(1, static_cast<Index>(width));
}

Index BamConfig::bottleneck() const { return bottleneck_width(bands, ratio); }

void BamConfig::validate() const {
  bottleneck();
  for (int convs : stage_layout) {
    if (convs < 1) throw ConfigError("every BAM stage needs at least one convolution");
  }
}

BandAttention::BandAttention(const BamConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  Index in = config_.bands;
  for (std::size_t stage = 0; stage < kBamStageDepths.size(); ++stage) {
    for (int i = 0; i < config_.stage_layout[stage]; ++i) {
      const std::string name = "bam.conv" + std::to_string(convs_.size() + 1);
      if (!convs_.empty()) norms_.push_back(make_batchnorm(in, "bam.bn" + std::to_string(convs_.size() + 1)));
      pool_before_.push_back(stage > 0 && i == 0);
      convs_.push_back(make_conv(3, in, kBamStageDepths[stage], rng, name));
      in = kBamStageDepths[stage];
    }
  }
  mix_in_ = make_conv(1, in, config_.bottleneck(), rng, "bam.mix1");
  mix_out_ = make_conv(1, config_.bottleneck(), config_.bands, rng, "bam.mix2");
}

BandMask BandAttention::forward(Tape& tape, const Var& x, Mode mode) {
  const Shape4 s = shape4(x.value());
  if (s.c != config_.bands) {
    throw ShapeError("BAM built for " + std::to_string(config_.bands) + " bands, input has " + std::to_string(s.c));
  }
  if (s.h < 4 || s.w < 4) throw ShapeError("BAM needs a spatial extent of at least 4x4");
  Var h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (pool_before_[i]) h = maxpool2(tape, h);
    if (i > 0) h = relu(tape, batchnorm(tape, h, norms_[i - 1], mode));
    h = conv2d(tape, h, convs_[i]);
  }
  Var pooled = spatial_mean(tape, h);
  Var hidden = relu(tape, channel_mix(tape, pooled, mix_in_));
  return {activation(tape, config_.final_activation, channel_mix(tape, hidden, mix_out_))};
}

std::vector<Var> BandAttention::parameters() const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) {
      out.push_back(norms_[i - 1].gamma);
      out.push_back(norms_[i - 1].beta);
    }
    out.push_back(convs_[i].kernel);
    out.push_back(convs_[i].bias);
  }
  for (const ConvLayer* mix : {&mix_in_, &mix_out_}) {
    out.push_back(mix->kernel);
    out.push_back(mix->bias);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> BandAttention::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Var v : parameters()) out.emplace_back(v.name(), &v.mutable_value());
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    const std::string base = "bam.bn" + std::to_string(i + 2);
    out.emplace_back(base + ".running_mean", &norms_[i].running_mean);
    out.emplace_back(base + ".running_var", &norms_[i].running_var);
  }
  return out;
}

SeAttention::SeAttention(Index bands, double ratio, Rng& rng)
    : bands_(bands),
      mix_in_(make_conv(1, bands, bottleneck_width(bands, ratio), rng, "se.mix1")),
      mix_out_(make_conv(1, bottleneck_width(bands, ratio), bands, rng, "se.mix2")) {}

BandMask SeAttention::forward(Tape& tape, const Var& x, Mode) {
  const Shape4 s = shape4(x.value());
  if (s.c != bands_) {
    throw ShapeError("SE head built for " + std::to_string(bands_) + " bands, input has " + std::to_string(s.c));
  }
  Var squeezed = spatial_mean(tape, x);
  Var hidden = relu(tape, channel_mix(tape, squeezed, mix_in_));
  return {sigmoid(tape, channel_mix(tape, hidden, mix_out_))};
}

std::vector<Var> SeAttention::parameters() const {
  return {mix_in_.kernel, mix_in_.bias, mix_out_.kernel, mix_out_.bias};
}

std::vector<std::pair<std::string, Tensor*>> SeAttention::state() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (Var v : parameters()) out.emplace_back(v.name(), &v.mutable_value());
  return out;
}

Var apply_mask(Tape& tape, const Var& x, const BandMask& mask) {
  const Shape4 s = shape4(x.value());
  const Tensor& m = mask.weights.value();
  if (m.ndim() != 2 || m.dim(0) != s.n || m.dim(1) != s.c) {
    throw ShapeError("apply_mask: mask " + shape_string(m.shape()) + " does not match input " +
                     shape_string(x.shape()));
  }
  return mul_channels(tape, x, mask.weights);
}

BandMask bam_forward(Tape& tape, const Var& x, BandAttention& bam, Mode mode) { return bam.forward(tape, x, mode); }

BandMask se_forward(Tape& tape, const Var& x, SeAttention& se, Mode mode) { return se.forward(tape, x, mode); }

Index bam_param_count(const BamConfig& config) {
  config.validate();
  Index total = 0;
  Index in = config.bands;
  bool first = true;
  for (std::size_t stage = 0; stage < kBamStageDepths.size(); ++stage) {
    const Index depth = kBamStageDepths[stage];
    for (int i = 0; i < config.stage_layout[stage]; ++i) {
      if (!first) total += 2 * in;  // batch-norm scale and shift
      total += 9 * in * depth + depth;
      in = depth;
      first = false;
    }
  }
  const Index mid = config.bottleneck();
  total += in * mid + mid;
  total += mid * config.bands + config.bands;
  return total;
}

}  // namespace bacnn
