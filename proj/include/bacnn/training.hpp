#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bacnn/data.hpp"
#include "bacnn/metrics.hpp"
#include "bacnn/model.hpp"

namespace bacnn {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m;  // one per parameter, in parameter order
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update from the parameters' gradient buffers.
/// Parameters without a gradient are treated as having a zero gradient.
void adam_step(std::span<Var> params, AdamState& state);

std::vector<NamedTensor> adam_state_tensors(const AdamState& state, std::span<const Var> params);
void load_adam_state(AdamState& state, std::span<const Var> params, const std::vector<NamedTensor>& tensors);

struct TrainConfig {
  int epochs = 1000;
  Index batch_size = 64;
  std::uint64_t seed = 1;
  bool shuffle = true;
  double lr = 1e-4;
  /// Write model/optimizer checkpoints into checkpoint_dir every N epochs (0 = never).
  int checkpoint_every = 0;
  std::string checkpoint_dir;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
};

/// "epoch,loss,train_acc" with round-trip precision.
void write_history_csv(std::ostream& out, const History& history);

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochStats&, Network&)>;

/// Shuffled minibatch Adam on cross-entropy. Data order and dropout noise come
/// from the "shuffle" and "dropout" streams of cfg.seed.
History train(Network& net, const PatchSet& train_set, const TrainConfig& cfg, AdamState& state,
              const EpochCallback& on_epoch = {});
History train(Network& net, const PatchSet& train_set, const TrainConfig& cfg);

struct Evaluation {
  std::vector<int> predictions;
  ConfusionMatrix confusion;
  MetricsReport report;
};

Evaluation evaluate(Network& net, const PatchSet& test_set, Index batch = 64);

/// Mean band mask over a set of patches; requires an attention head.
std::vector<double> mean_band_mask(Network& net, const PatchSet& patches, Index batch = 64);
void write_mask_csv(std::ostream& out, std::span<const double> weights);

enum class Protocol { indian_pines, fraction };

struct ExperimentConfig {
  NetworkSpec network;
  TrainConfig train;
  Protocol protocol = Protocol::indian_pines;
  double fraction = 0.1;  // Protocol::fraction
  /// Keep this fraction of each class's training pixels (1 = all).
  double train_subsample = 1.0;
  bool replicate = true;
  /// Replication target per class; defaults to the largest training class.
  std::optional<Index> replicate_target;
};

struct RunResult {
  SplitResult split;  // train is the set actually trained on
  History history;
  Evaluation evaluation;
  std::shared_ptr<Network> network;
  AdamState optimizer;
};

/// Split, subsample, replicate, build, train and evaluate one network. All
/// randomness derives from `seed` via named streams.
RunResult run_experiment(const PatchSet& all, const ExperimentConfig& cfg, std::uint64_t seed,
                         const EpochCallback& on_epoch = {});

struct AblationResult {
  std::vector<Variant> variants;
  std::vector<std::vector<MetricsReport>> runs;  // [variant][repeat]
  std::vector<NamedAggregate> table;
};

/// Repeat r uses seed cfg.train.seed + r for every variant, so variants share splits.
AblationResult run_ablation(const PatchSet& all, const ExperimentConfig& cfg, std::span<const Variant> variants,
                            int repeats);

}  // namespace bacnn
