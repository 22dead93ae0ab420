#include "bacnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>

#include "bacnn/error.hpp"

namespace bacnn {

void adam_step(std::span<Var> params, AdamState& state) {
  if (state.m.empty()) {
    for (const Var& p : params) {
      state.m.push_back(Tensor::zeros_like(p.value()));
      state.v.push_back(Tensor::zeros_like(p.value()));
    }
  }
  if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state built for other parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].has_grad() && !params[i].grad().all_finite()) {
      throw NumericalError("non-finite gradient for parameter '" + params[i].name() + "'");
    }
    if (state.m[i].shape() != params[i].shape()) throw ContractError("adam_step: moment shape mismatch");
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.m[i].vec().array();
    auto v = state.v[i].vec().array();
    if (params[i].has_grad()) {
      auto g = params[i].grad().vec().array();
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g.square();
    } else {
      m *= state.beta1;
      v *= state.beta2;
    }
    params[i].mutable_value().vec().array() -= state.lr * (m / c1) / ((v / c2).sqrt() + state.eps);
    check_finite(params[i].value(), "adam_step");
  }
}

std::vector<NamedTensor> adam_state_tensors(const AdamState& state, std::span<const Var> params) {
  std::vector<NamedTensor> out;
  out.push_back({"adam.t", Tensor({1}, static_cast<double>(state.t))});
  for (std::size_t i = 0; i < state.m.size() && i < params.size(); ++i) {
    out.push_back({"adam.m." + params[i].name(), state.m[i]});
    out.push_back({"adam.v." + params[i].name(), state.v[i]});
  }
  return out;
}

void load_adam_state(AdamState& state, std::span<const Var> params, const std::vector<NamedTensor>& tensors) {
  auto find = [&tensors](const std::string& name) -> const Tensor& {
    for (const auto& t : tensors) {
      if (t.name == name) return t.tensor;
    }
    throw ConfigError("optimizer checkpoint lacks '" + name + "'");
  };
  state.t = static_cast<std::int64_t>(find("adam.t")[0]);
  state.m.clear();
  state.v.clear();
  if (state.t == 0) return;
  for (const Var& p : params) {
    state.m.push_back(find("adam.m." + p.name()));
    state.v.push_back(find("adam.v." + p.name()));
    if (state.m.back().shape() != p.shape() || state.v.back().shape() != p.shape()) {
      throw ConfigError("optimizer moments for '" + p.name() + "' do not match the parameter shape");
    }
  }
}

void write_history_csv(std::ostream& out, const History& history) {
  out << "epoch,loss,train_acc\n";
  char buf[96];
  for (const auto& e : history.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.loss, e.train_acc);
    out << buf;
  }
}

namespace {

void save_training_checkpoint(const std::string& dir, Network& net, const AdamState& state) {
  std::filesystem::create_directories(dir);
  save_checkpoint(dir + "/model.ckpt", net.state());
  const auto params = net.parameters();
  save_checkpoint(dir + "/adam.ckpt", adam_state_tensors(state, params));
}

}  // namespace

History train(Network& net, const PatchSet& train_set, const TrainConfig& cfg, AdamState& state,
              const EpochCallback& on_epoch) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (train_set.empty()) throw DataError("training set is empty");
  if (train_set.bands() != net.spec().bands) {
    throw ConfigError("network expects " + std::to_string(net.spec().bands) + " bands, training data has " +
                      std::to_string(train_set.bands()));
  }
  if (train_set.num_classes() != net.spec().num_classes) {
    throw ConfigError("network has " + std::to_string(net.spec().num_classes) + " classes, training data has " +
                      std::to_string(train_set.num_classes()));
  }
  state.lr = cfg.lr;

  const Rng root(cfg.seed);
  Rng shuffle_rng = root.stream("shuffle");
  Rng dropout_rng = root.stream("dropout");
  std::vector<Var> params = net.parameters();
  std::vector<Index> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), Index{0});

  History history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.shuffle) shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    Index correct = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::span<const Index> batch(order.data() + start, stop - start);
        const std::vector<int> labels = train_set.labels(batch);

        Tape tape;
        Var logits = net.forward(tape, Var::constant(train_set.gather(batch)), Mode::train, dropout_rng);
        Var loss = cross_entropy(tape, logits, labels);
        for (Var& p : params) p.zero_grad();
        tape.backward(loss);
        adam_step(params, state);

        loss_sum += loss.value()[0] * static_cast<double>(batch.size());
        const auto pred = argmax_rows(logits.value());
        for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
      }
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) + ": " + e.what());
    }
    const double n = static_cast<double>(order.size());
    history.epochs.push_back({epoch, loss_sum / n, static_cast<double>(correct) / n});

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && epoch % cfg.checkpoint_every == 0) {
      save_training_checkpoint(cfg.checkpoint_dir, net, state);
    }
    if (on_epoch && !on_epoch(history.epochs.back(), net)) break;
  }
  for (Var& p : params) p.zero_grad();
  return history;
}

History train(Network& net, const PatchSet& train_set, const TrainConfig& cfg) {
  AdamState state;
  return train(net, train_set, cfg, state);
}

Evaluation evaluate(Network& net, const PatchSet& test_set, Index batch) {
  if (test_set.num_classes() != net.spec().num_classes) {
    throw ConfigError("network has " + std::to_string(net.spec().num_classes) + " classes, test data has " +
                      std::to_string(test_set.num_classes()));
  }
  Evaluation out{{}, ConfusionMatrix(test_set.num_classes()), {}};
  std::vector<Index> idx;
  for (Index start = 0; start < test_set.size(); start += batch) {
    idx.resize(static_cast<std::size_t>(std::min(batch, test_set.size() - start)));
    std::iota(idx.begin(), idx.end(), start);
    for (int p : predict(net, test_set.gather(idx), batch)) out.predictions.push_back(p);
  }
  const auto truth = test_set.labels();
  out.confusion = confusion(truth, out.predictions, test_set.num_classes());
  out.report = make_report(out.confusion);
  return out;
}

std::vector<double> mean_band_mask(Network& net, const PatchSet& patches, Index batch) {
  if (net.spec().variant == Variant::cm) throw ConfigError("network has no attention head to export");
  if (patches.empty()) throw DataError("mask export needs at least one patch");
  Eigen::VectorXd total = Eigen::VectorXd::Zero(net.spec().bands);
  std::vector<Index> idx;
  for (Index start = 0; start < patches.size(); start += batch) {
    idx.resize(static_cast<std::size_t>(std::min(batch, patches.size() - start)));
    std::iota(idx.begin(), idx.end(), start);
    Tape tape(false);
    const BandMask mask = *net.band_mask(tape, Var::constant(patches.gather(idx)), Mode::eval);
    total += mask.weights.value().matrix(static_cast<Index>(idx.size()), net.spec().bands).colwise().sum().transpose();
  }
  total /= static_cast<double>(patches.size());
  return {total.data(), total.data() + total.size()};
}

void write_mask_csv(std::ostream& out, std::span<const double> weights) {
  out << "band,weight\n";
  char buf[64];
  for (std::size_t b = 0; b < weights.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", b + 1, weights[b]);
    out << buf;
  }
}

RunResult run_experiment(const PatchSet& all, const ExperimentConfig& cfg, std::uint64_t seed,
                         const EpochCallback& on_epoch) {
  const Rng root(seed);
  Rng split_rng = root.stream("split");
  RunResult result;
  result.split = cfg.protocol == Protocol::indian_pines ? split_indian_pines(all, split_rng)
                                                        : split_fraction(all, cfg.fraction, split_rng);
  PatchSet train_set = result.split.train;
  if (cfg.train_subsample < 1.0) {
    Rng sub_rng = root.stream("subsample");
    train_set = subsample_per_class(train_set, cfg.train_subsample, sub_rng);
  }
  if (cfg.replicate) {
    const auto counts = train_set.class_counts();
    const Index target = cfg.replicate_target.value_or(*std::max_element(counts.begin(), counts.end()));
    Rng rep_rng = root.stream("replicate");
    train_set = replicate_minority(train_set, target, rep_rng);
  }
  result.split.train = train_set;

  Rng init_rng = root.stream("init");
  result.network = std::make_shared<Network>(build(cfg.network, init_rng));
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  result.history = train(*result.network, train_set, tc, result.optimizer, on_epoch);
  result.evaluation = evaluate(*result.network, result.split.test);
  return result;
}

AblationResult run_ablation(const PatchSet& all, const ExperimentConfig& cfg, std::span<const Variant> variants,
                            int repeats) {
  if (repeats < 1) throw ConfigError("repeats must be at least 1");
  if (variants.empty()) throw ConfigError("ablation needs at least one variant");
  AblationResult out;
  out.variants.assign(variants.begin(), variants.end());
  out.runs.resize(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.network.variant = variants[v];
    for (int r = 0; r < repeats; ++r) {
      out.runs[v].push_back(run_experiment(all, run_cfg, cfg.train.seed + static_cast<std::uint64_t>(r)).evaluation.report);
    }
    out.table.push_back({to_string(variants[v]), aggregate(out.runs[v])});
  }
  return out;
}

}  // namespace bacnn
