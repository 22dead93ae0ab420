#pragma once

#include <array>
#include <string>
#include <vector>

#include "bacnn/autograd.hpp"
#include "bacnn/layers.hpp"

namespace bacnn {

/// Feature depth of the three BAM convolution stages.
inline constexpr std::array<Index, 3> kBamStageDepths{16, 32, 32};

struct BamConfig {
  Index bands = 0;
  /// Aggregation ratio; the bottleneck width is round(bands / ratio), at least 1.
  double ratio = 2.0;
  Activation final_activation = Activation::sigmoid;
  /// Number of 3x3 convolutions per stage.
  std::array<int, 3> stage_layout{2, 2, 1};

  Index bottleneck() const;
  void validate() const;
};

/// Per-sample band weights, [n, c].
struct BandMask {
  Var weights;
};

/// Band attention head: three convolution stages separated by 2x2 max pooling,
/// spatial mean, then two 1x1 channel-mixing layers with ReLU in between and the
/// configured activation at the end.
class BandAttention {
 public:
  BandAttention(const BamConfig& config, Rng& rng);

  const BamConfig& config() const { return config_; }

  /// x: [n, h, w, bands] with h, w >= 4.
  BandMask forward(Tape& tape, const Var& x, Mode mode);

  std::vector<Var> parameters() const;
  /// Trainable parameters plus batch-norm running statistics, by name.
  std::vector<std::pair<std::string, Tensor*>> state();

  const ConvLayer& first_conv() const { return convs_.front(); }
  const ConvLayer& mix_in() const { return mix_in_; }
  const ConvLayer& mix_out() const { return mix_out_; }
  std::size_t conv_count() const { return convs_.size(); }

 private:
  BamConfig config_;
  std::vector<ConvLayer> convs_;
  // norms_[i] precedes convs_[i + 1]
  std::vector<BatchNormLayer> norms_;
  std::vector<bool> pool_before_;  // pool_before_[i]: max pool ahead of convs_[i]
  ConvLayer mix_in_;
  ConvLayer mix_out_;
};

/// Squeeze-and-excitation baseline: spatial mean of the raw input, then the same
/// 1x1 mixing tail with a sigmoid gate.
class SeAttention {
 public:
  SeAttention(Index bands, double ratio, Rng& rng);

  BandMask forward(Tape& tape, const Var& x, Mode mode);

  std::vector<Var> parameters() const;
  std::vector<std::pair<std::string, Tensor*>> state();

  Index bands() const { return bands_; }
  const ConvLayer& mix_in() const { return mix_in_; }
  const ConvLayer& mix_out() const { return mix_out_; }

 private:
  Index bands_;
  ConvLayer mix_in_;
  ConvLayer mix_out_;
};

/// out[n,i,j,z] = x[n,i,j,z] * mask[n,z].
Var apply_mask(Tape& tape, const Var& x, const BandMask& mask);

/// Convenience wrappers over a freshly built module.
BandMask bam_forward(Tape& tape, const Var& x, BandAttention& bam, Mode mode);
BandMask se_forward(Tape& tape, const Var& x, SeAttention& se, Mode mode);

/// Trainable scalar count of a BAM built from `config`.
Index bam_param_count(const BamConfig& config);

/// Bottleneck width shared by BAM and SE heads.
Index bottleneck_width(Index bands, double ratio);

}  // namespace bacnn
