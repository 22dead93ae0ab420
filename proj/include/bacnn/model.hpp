#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bacnn/attention.hpp"
#include "bacnn/layers.hpp"

namespace bacnn {

enum class Variant { cm, se_cm, bam_cm };

const char* to_string(Variant v);
Variant parse_variant(std::string_view name);

/// VGG-style classification module plan: `convs_per_stage` 3x3 convolutions per
/// stage with 2x2 max pooling between stages, global spatial mean, then a
/// hidden dense layer and the output layer.
struct CmLayout {
  std::array<Index, 3> stage_widths{32, 64, 128};
  int convs_per_stage = 2;
  Index dense_hidden = 256;

  int weighted_layers() const { return static_cast<int>(stage_widths.size()) * convs_per_stage + 2; }
};

inline constexpr int kCmWeightedLayers = 8;

struct NetworkSpec {
  Variant variant = Variant::bam_cm;
  Index num_classes = 16;
  Index bands = 200;
  Index patch = 15;
  CmLayout cm;
  double dropout = 0.2;
  // Attention head settings; ignored for Variant::cm.
  double ratio = 2.0;
  Activation mask_activation = Activation::sigmoid;
  std::array<int, 3> bam_stages{2, 2, 1};

  void validate() const;
  BamConfig bam() const;
};

/// key=value lines.
std::string to_config(const NetworkSpec& spec);
NetworkSpec parse_config(std::string_view text);
void save_spec(const std::string& path, const NetworkSpec& spec);
NetworkSpec load_spec(const std::string& path);

/// Optional attention head, then mask application, then the classification module.
class Network {
 public:
  Network(const NetworkSpec& spec, Rng& init_rng);

  const NetworkSpec& spec() const { return spec_; }

  /// x: [n, patch, patch, bands] -> logits [n, num_classes].
  Var forward(Tape& tape, const Var& x, Mode mode, Rng& dropout_rng);
  Var forward(Tape& tape, const Var& x);  // eval mode

  /// The band mask the attention head produces for x; empty for Variant::cm.
  std::optional<BandMask> band_mask(Tape& tape, const Var& x, Mode mode);

  /// Replace the attention output by an all-ones mask.
  void force_unit_mask(bool on) { unit_mask_ = on; }

  std::vector<Var> parameters() const;
  std::vector<Var> attention_parameters() const;
  Index parameter_count() const;

  int weighted_layer_count() const;
  int attention_module_count() const;

  /// Parameters and batch-norm statistics, copied out by name.
  std::vector<NamedTensor> state() const;
  /// Throws ConfigError when names or shapes do not match this network.
  void load_state(const std::vector<NamedTensor>& tensors);

 private:
  std::vector<std::pair<std::string, Tensor*>> state_refs();
  void check_input(const Tensor& x) const;

  NetworkSpec spec_;
  std::variant<std::monostate, SeAttention, BandAttention> attention_;
  std::vector<ConvLayer> convs_;
  std::vector<BatchNormLayer> norms_;  // norms_[i] precedes convs_[i + 1]; the last one follows the final conv
  std::vector<bool> pool_before_;
  DenseLayer hidden_;
  DenseLayer output_;
  bool unit_mask_ = false;
};

Network build(const NetworkSpec& spec, Rng& init_rng);

/// Row-wise argmax, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& logits);

/// Eval-mode predictions, processed in chunks of `batch` samples.
std::vector<int> predict(Network& net, const Tensor& x, Index batch = 64);

}  // namespace bacnn
