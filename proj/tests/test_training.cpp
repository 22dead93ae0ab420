#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "bacnn/error.hpp"
#include "bacnn/training.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace bacnn;

namespace {

NetworkSpec tiny_spec(Variant v, Index bands, int classes, Index patch) {
  NetworkSpec spec;
  spec.variant = v;
  spec.num_classes = classes;
  spec.bands = bands;
  spec.patch = patch;
  spec.cm.stage_widths = {4, 8, 8};
  spec.cm.dense_hidden = 16;
  return spec;
}

std::string history_text(const History& h) {
  std::ostringstream out;
  write_history_csv(out, h);
  return out.str();
}

}  // namespace

TEST_CASE("adam examples") {
  Var zero_grad = Var::parameter(Tensor({3}, 0.5), "p");
  zero_grad.grad_buffer();
  std::vector<Var> params{zero_grad};
  AdamState state;
  adam_step(params, state);
  CHECK(zero_grad.value() == Tensor({3}, 0.5));
  CHECK(state.t == 1);

  // theta = 0, g = 1, t = 1: m_hat = v_hat = 1, so theta' = -lr / (1 + eps)
  Var theta = Var::parameter(Tensor({1}), "theta");
  theta.grad_buffer()[0] = 1.0;
  std::vector<Var> one{theta};
  AdamState fresh;
  adam_step(one, fresh);
  CHECK(theta.value()[0] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-12));

  // constant gradient: every step moves by at most lr
  for (int step = 0; step < 5; ++step) {
    const double before = theta.value()[0];
    adam_step(one, fresh);
    CHECK(std::abs(theta.value()[0] - before) <= 1e-4 * (1.0 + 1e-9));
  }

  Var bad = Var::parameter(Tensor({2}), "layer.weight");
  bad.grad_buffer()[1] = std::nan("");
  std::vector<Var> bad_params{bad};
  AdamState s2;
  try {
    adam_step(bad_params, s2);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
  }
}

TEST_CASE("optimizer state round trip") {
  Rng rng(1);
  std::vector<Var> params{Var::parameter(testing::random_tensor({2, 3}, rng), "a"),
                          Var::parameter(testing::random_tensor({4}, rng), "b")};
  for (Var& p : params) p.grad_buffer() = testing::random_tensor(p.shape(), rng);
  AdamState state;
  adam_step(params, state);
  adam_step(params, state);
  AdamState back;
  load_adam_state(back, params, adam_state_tensors(state, params));
  CHECK(back.t == 2);
  REQUIRE(back.m.size() == 2);
  CHECK(back.m[1] == state.m[1]);
  CHECK(back.v[0] == state.v[0]);
}

TEST_CASE("training is reproducible and reduces the loss") {
  PatchSet set = testing::separable_two_class(4, 3, 9);
  NetworkSpec spec = tiny_spec(Variant::bam_cm, 4, 2, 9);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.seed = 5;

  auto run = [&] {
    Rng init(11);
    Network net(spec, init);
    return train(net, set, cfg);
  };
  const History a = run();
  const History b = run();
  CHECK(history_text(a) == history_text(b));
  REQUIRE(a.epochs.size() == 10);
  CHECK(a.epochs.front().epoch == 1);

  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) {
    early += a.epochs[static_cast<std::size_t>(i)].loss;
    late += a.epochs[static_cast<std::size_t>(i + 5)].loss;
  }
  CHECK(late < early);
}

TEST_CASE("callback stops training and errors carry context") {
  PatchSet set = testing::separable_two_class(4, 4, 9);
  Rng init(1);
  Network net(tiny_spec(Variant::cm, 4, 2, 9), init);
  TrainConfig cfg;
  cfg.epochs = 50;
  AdamState state;
  const History h = train(net, set, cfg, state, [](const EpochStats& s, Network&) { return s.epoch < 3; });
  CHECK(h.epochs.size() == 3);

  Network wrong(tiny_spec(Variant::cm, 5, 2, 9), init);
  CHECK_THROWS_AS(train(wrong, set, cfg), ConfigError);
  cfg.epochs = 0;
  CHECK_THROWS_AS(train(net, set, cfg), ConfigError);
}

TEST_CASE("history csv format") {
  History h;
  h.epochs.push_back({1, 0.5, 0.25});
  h.epochs.push_back({2, 1.0 / 3.0, 1.0});
  CHECK(history_text(h) == "epoch,loss,train_acc\n1,0.5,0.25\n2,0.33333333333333331,1\n");
}

TEST_CASE("checkpointed model predicts identically") {
  PatchSet set = testing::separable_two_class(4, 6, 9);
  const auto dir = std::filesystem::temp_directory_path() / "bacnn_test_training_ckpt";
  std::filesystem::remove_all(dir);
  NetworkSpec spec = tiny_spec(Variant::se_cm, 4, 2, 9);
  Rng init(2);
  Network net(spec, init);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_dir = dir.string();
  train(net, set, cfg);
  REQUIRE(std::filesystem::exists(dir / "model.ckpt"));
  REQUIRE(std::filesystem::exists(dir / "adam.ckpt"));

  Rng other(99);
  Network restored(spec, other);
  restored.load_state(load_checkpoint((dir / "model.ckpt").string()));
  const Evaluation a = evaluate(net, set);
  const Evaluation b = evaluate(restored, set);
  CHECK(a.predictions == b.predictions);
  CHECK(evaluate(net, set, 7).predictions == a.predictions);
  std::filesystem::remove_all(dir);
}

TEST_CASE("constant classifier gives AA = 1/k") {
  PatchSet set = testing::separable_two_class(4, 7, 9);
  Rng init(3);
  Network net(tiny_spec(Variant::cm, 4, 2, 9), init);
  auto state = net.state();
  for (auto& t : state) {
    if (t.name == "cm.fc2.weight") t.tensor.fill(0.0);
    if (t.name == "cm.fc2.bias") t.tensor = create({2}, std::vector<double>{1.0, 0.0});
  }
  net.load_state(state);
  const Evaluation e = evaluate(net, set);
  CHECK(e.report.aa == 0.5);
  CHECK(e.report.oa == 0.5);
  CHECK(e.report.kappa == 0.0);
}

TEST_CASE("mask export") {
  PatchSet set = testing::separable_two_class(6, 8, 9);
  for (Activation a : {Activation::sigmoid, Activation::softmax}) {
    NetworkSpec spec = tiny_spec(Variant::bam_cm, 6, 2, 9);
    spec.mask_activation = a;
    Rng init(4);
    Network net(spec, init);
    const auto mask = mean_band_mask(net, set, 16);
    REQUIRE(mask.size() == 6);
    double total = 0.0;
    for (double w : mask) {
      total += w;
      CHECK(w > 0.0);
      if (a == Activation::sigmoid) CHECK(w < 1.0);
    }
    if (a == Activation::softmax) CHECK(std::abs(total - 1.0) < 1e-6);
  }
  Rng init(5);
  Network plain(tiny_spec(Variant::cm, 6, 2, 9), init);
  CHECK_THROWS_AS(mean_band_mask(plain, set), ConfigError);

  std::ostringstream out;
  const std::vector<double> w{0.5, 0.25};
  write_mask_csv(out, w);
  CHECK(out.str() == "band,weight\n1,0.5\n2,0.25\n");
}

TEST_CASE("ablation table shape and single-repeat std") {
  SyntheticSceneOptions o;
  o.h = 16;
  o.w = 16;
  o.bands = 4;
  o.classes = 3;
  o.informative_bands = 2;
  SyntheticScene scene = make_synthetic_scene(o);
  PatchSet all = extract_patches(std::make_shared<HsiCube>(scene.cube), scene.labels, 5);

  ExperimentConfig cfg;
  cfg.network = tiny_spec(Variant::cm, 4, 3, 5);
  cfg.protocol = Protocol::fraction;
  cfg.fraction = 0.2;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 16;
  const std::vector<Variant> variants{Variant::cm, Variant::bam_cm};
  AblationResult r = run_ablation(all, cfg, variants, 1);
  REQUIRE(r.table.size() == 2);
  CHECK(r.table[1].column == "bam_cm");
  for (const auto& col : r.table) {
    CHECK(col.report.mean.size() == 3 + 3);
    for (double s : col.report.stddev) CHECK(s == 0.0);
  }

  std::ostringstream csv;
  write_table_csv(csv, r.table);
  std::istringstream in(csv.str());
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 1 + 3 + 3);

  RunResult run = run_experiment(all, cfg, 1);
  const auto counts = run.split.train.class_counts();
  CHECK(std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) == counts.end());
  CHECK_THROWS_AS(run_ablation(all, cfg, variants, 0), ConfigError);
}
