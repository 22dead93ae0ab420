// bacnn: train, evaluate and inspect band-attention classifiers on HSI cubes.
//
// Exit codes: 0 ok, 2 input/format, 3 config, 4 numerical.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "bacnn/error.hpp"
#include "bacnn/gradcheck.hpp"
#include "bacnn/training.hpp"

namespace fs = std::filesystem;
using namespace bacnn;

namespace {

constexpr const char* kVersion = "0.1.0";

struct RunArgs {
  std::string dataset = "custom";
  std::string cube;
  std::string labels;
  std::string variant = "bam_cm";
  double r = 2.0;
  std::string mask_activation = "sigmoid";
  int epochs = 1000;
  Index batch = 64;
  std::uint64_t seed = 1;
  double lr = 1e-4;
  Index patch = 15;
  double fraction = 0.1;
  double subsample = 1.0;
  Index replicate_target = 0;
  bool no_replicate = false;
  std::string norm_stats = "all";
  int checkpoint_every = 0;
  bool quiet = false;
};

// Flags a manifest can replay, in manifest order.
const std::vector<std::string> kReplayKeys = {
    "dataset", "cube",     "labels",    "variant",          "r",            "mask-activation",
    "epochs",  "batch",    "seed",      "lr",               "patch",        "fraction",
    "subsample", "replicate-target", "no-replicate", "norm-stats", "checkpoint-every"};

void add_run_options(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--dataset", a.dataset, "indian (30%/80 rule), ksc (10% split) or custom (--fraction split)")
      ->check(CLI::IsMember({"indian", "ksc", "custom"}))
      ->capture_default_str();
  cmd->add_option("--cube", a.cube, "HSC1 cube file");
  cmd->add_option("--labels", a.labels, "LBL1 label file");
  cmd->add_option("--variant", a.variant, "cm, se_cm or bam_cm")
      ->check(CLI::IsMember({"cm", "se_cm", "bam_cm"}))
      ->capture_default_str();
  cmd->add_option("--r", a.r, "aggregation ratio of the attention head")->capture_default_str();
  cmd->add_option("--mask-activation", a.mask_activation, "final activation of the band attention module")
      ->check(CLI::IsMember({"relu", "sigmoid", "softmax"}))
      ->capture_default_str();
  cmd->add_option("--epochs", a.epochs)->capture_default_str();
  cmd->add_option("--batch", a.batch)->capture_default_str();
  cmd->add_option("--seed", a.seed)->capture_default_str();
  cmd->add_option("--lr", a.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--patch", a.patch, "odd patch size")->capture_default_str();
  cmd->add_option("--fraction", a.fraction, "training fraction per class for --dataset custom")
      ->capture_default_str();
  cmd->add_option("--subsample", a.subsample, "keep this fraction of each class's training pixels")
      ->capture_default_str();
  cmd->add_option("--replicate-target", a.replicate_target,
                  "per-class replication target (default: 80 for indian, else the largest training class)");
  cmd->add_flag("--no-replicate", a.no_replicate, "train on the split without minority replication");
  cmd->add_option("--norm-stats", a.norm_stats, "normalization statistics from all pixels or training pixels only")
      ->check(CLI::IsMember({"all", "train"}))
      ->capture_default_str();
  cmd->add_option("--checkpoint-every", a.checkpoint_every, "write model/optimizer checkpoints every N epochs");
  cmd->add_flag("--quiet", a.quiet, "no per-epoch progress on stderr");
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": line without '=': " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

/// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

ExperimentConfig experiment_config(const RunArgs& a, const HsiCube& cube, const LabelMap& labels) {
  ExperimentConfig cfg;
  cfg.network.variant = parse_variant(a.variant);
  cfg.network.num_classes = labels.k;
  cfg.network.bands = cube.c;
  cfg.network.patch = a.patch;
  cfg.network.ratio = a.r;
  cfg.network.mask_activation = parse_activation(a.mask_activation);
  cfg.network.validate();

  cfg.train.epochs = a.epochs;
  cfg.train.batch_size = a.batch;
  cfg.train.seed = a.seed;
  cfg.train.lr = a.lr;
  cfg.train.checkpoint_every = a.checkpoint_every;
  if (a.epochs < 1) throw ConfigError("--epochs must be at least 1");
  if (a.batch < 1) throw ConfigError("--batch must be at least 1");
  if (!(a.lr > 0.0)) throw ConfigError("--lr must be positive");

  if (a.dataset == "indian") {
    cfg.protocol = Protocol::indian_pines;
  } else {
    cfg.protocol = Protocol::fraction;
    cfg.fraction = a.dataset == "ksc" ? 0.1 : a.fraction;
    if (!(cfg.fraction > 0.0 && cfg.fraction < 1.0)) throw ConfigError("--fraction must lie in (0, 1)");
  }
  if (!(a.subsample > 0.0 && a.subsample <= 1.0)) throw ConfigError("--subsample must lie in (0, 1]");
  cfg.train_subsample = a.subsample;
  cfg.replicate = !a.no_replicate;
  if (a.replicate_target > 0) {
    cfg.replicate_target = a.replicate_target;
  } else if (a.replicate_target < 0) {
    throw ConfigError("--replicate-target must be positive");
  } else if (a.dataset == "indian") {
    cfg.replicate_target = 80;
  }
  return cfg;
}

struct Dataset {
  std::shared_ptr<const HsiCube> cube;
  LabelMap labels;
  PatchSet all;
};

/// Split exactly as run_experiment draws it, to learn the training pixels.
SplitResult first_split(const PatchSet& all, const ExperimentConfig& cfg, std::uint64_t seed) {
  Rng split_rng = Rng(seed).stream("split");
  return cfg.protocol == Protocol::indian_pines ? split_indian_pines(all, split_rng)
                                                : split_fraction(all, cfg.fraction, split_rng);
}

std::vector<bool> pixel_mask(const PatchSet& ps, Index h, Index w) {
  std::vector<bool> mask(static_cast<std::size_t>(h * w), false);
  for (const PatchRef& p : ps.items()) mask[static_cast<std::size_t>(p.row * w + p.col)] = true;
  return mask;
}

/// Loads the cube and labels, checks them against each other and the named
/// benchmark, and normalizes the bands.
Dataset load_dataset(const RunArgs& a, ExperimentConfig* cfg_out) {
  if (a.cube.empty() || a.labels.empty()) throw ConfigError("--cube and --labels are required");
  HsiCube raw = load_cube(a.cube);
  LabelMap labels = load_labels(a.labels);
  if (raw.h != labels.h || raw.w != labels.w) {
    throw DataError("cube is " + std::to_string(raw.h) + "x" + std::to_string(raw.w) + " but the label map is " +
                    std::to_string(labels.h) + "x" + std::to_string(labels.w));
  }
  if (auto profile = find_profile(a.dataset)) {
    for (const std::string& issue : compare_to_profile(*profile, labels, &raw)) {
      std::cerr << "warning: " << issue << '\n';
    }
  }
  const ExperimentConfig cfg = experiment_config(a, raw, labels);
  if (cfg_out) *cfg_out = cfg;

  HsiCube normalized;
  if (a.norm_stats == "train") {
    const PatchSet raw_all = extract_patches(std::make_shared<HsiCube>(raw), labels, a.patch);
    const std::vector<bool> mask = pixel_mask(first_split(raw_all, cfg, a.seed).train, raw.h, raw.w);
    normalized = normalize_bands(raw, &mask);
  } else {
    normalized = normalize_bands(raw);
  }
  Dataset d;
  d.cube = std::make_shared<const HsiCube>(std::move(normalized));
  d.labels = std::move(labels);
  d.all = extract_patches(d.cube, d.labels, a.patch);
  return d;
}

EpochCallback progress(const RunArgs& a, const std::string& tag) {
  if (a.quiet) return {};
  return [tag, total = a.epochs](const EpochStats& s, Network&) {
    std::fprintf(stderr, "%sepoch %d/%d loss %.6f train_acc %.4f\n", tag.c_str(), s.epoch, total, s.loss, s.train_acc);
    return true;
  };
}

KeyValues replay_values(const RunArgs& a) {
  return {{"dataset", a.dataset},
          {"cube", fs::absolute(a.cube).string()},
          {"labels", fs::absolute(a.labels).string()},
          {"variant", a.variant},
          {"r", num(a.r)},
          {"mask-activation", a.mask_activation},
          {"epochs", std::to_string(a.epochs)},
          {"batch", std::to_string(a.batch)},
          {"seed", std::to_string(a.seed)},
          {"lr", num(a.lr)},
          {"patch", std::to_string(a.patch)},
          {"fraction", num(a.fraction)},
          {"subsample", num(a.subsample)},
          {"replicate-target", std::to_string(a.replicate_target)},
          {"no-replicate", a.no_replicate ? "true" : "false"},
          {"norm-stats", a.norm_stats},
          {"checkpoint-every", std::to_string(a.checkpoint_every)}};
}

int cmd_train(const RunArgs& a, const std::string& out_dir) {
  const std::string started = utc_now();
  ExperimentConfig cfg;
  Dataset data = load_dataset(a, &cfg);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  if (a.checkpoint_every > 0) cfg.train.checkpoint_dir = (dir / "checkpoints").string();

  RunResult run = run_experiment(data.all, cfg, a.seed, progress(a, ""));

  save_spec((dir / "network.cfg").string(), cfg.network);
  save_checkpoint((dir / "model.ckpt").string(), run.network->state());
  const std::vector<Var> params = run.network->parameters();
  save_checkpoint((dir / "adam.ckpt").string(), adam_state_tensors(run.optimizer, params));
  std::ostringstream history, metrics, train_split, test_split;
  write_history_csv(history, run.history);
  write_report_csv(metrics, run.evaluation.report);
  write_split(train_split, run.split.train);
  write_split(test_split, run.split.test);
  write_text(dir / "history.csv", history.str());
  write_text(dir / "metrics.csv", metrics.str());
  write_text(dir / "train_split.txt", train_split.str());
  write_text(dir / "test_split.txt", test_split.str());

  std::ostringstream manifest;
  manifest << "command=train\n";
  for (const auto& [k, v] : replay_values(a)) manifest << k << '=' << v << '\n';
  manifest << "bacnn_version=" << kVersion << '\n'
           << "cube_sha256=" << sha256_file(a.cube) << '\n'
           << "labels_sha256=" << sha256_file(a.labels) << '\n'
           << "model_sha256=" << sha256_file((dir / "model.ckpt").string()) << '\n'
           << "history_sha256=" << sha256_file((dir / "history.csv").string()) << '\n'
           << "metrics_sha256=" << sha256_file((dir / "metrics.csv").string()) << '\n'
           << "parameters=" << run.network->parameter_count() << '\n'
           << "train_samples=" << run.split.train.size() << '\n'
           << "test_samples=" << run.split.test.size() << '\n'
           << "started_at=" << started << '\n'
           << "finished_at=" << utc_now() << '\n';
  write_text(dir / "manifest.txt", manifest.str());

  const MetricsReport& r = run.evaluation.report;
  std::printf("OA %.4f AA %.4f kappa %.4f (%lld test samples) -> %s\n", r.oa, r.aa, r.kappa,
              static_cast<long long>(run.split.test.size()), dir.string().c_str());
  return kExitOk;
}

/// A trained run directory brought back into memory.
struct LoadedRun {
  RunArgs args;
  Dataset data;
  NetworkSpec spec;
  std::unique_ptr<Network> net;
  fs::path dir;
};

LoadedRun load_run(const std::string& run_dir, const std::string& cube_override, const std::string& labels_override) {
  LoadedRun run;
  run.dir = run_dir;
  const auto m = read_key_values((run.dir / "manifest.txt").string());
  auto get = [&m](const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw FormatError("manifest lacks '" + key + "'");
    return it->second;
  };
  RunArgs& a = run.args;
  a.dataset = get("dataset");
  a.cube = cube_override.empty() ? get("cube") : cube_override;
  a.labels = labels_override.empty() ? get("labels") : labels_override;
  a.norm_stats = get("norm-stats");
  a.patch = std::stol(get("patch"));

  run.spec = load_spec((run.dir / "network.cfg").string());
  HsiCube raw = load_cube(a.cube);
  LabelMap labels = load_labels(a.labels);
  if (labels.k != run.spec.num_classes) {
    throw ConfigError("checkpoint has " + std::to_string(run.spec.num_classes) + " classes, label map has " +
                      std::to_string(labels.k));
  }
  if (raw.c != run.spec.bands) {
    throw ConfigError("checkpoint expects " + std::to_string(run.spec.bands) + " bands, cube has " +
                      std::to_string(raw.c));
  }
  if (raw.h != labels.h || raw.w != labels.w) throw DataError("cube and label map extents differ");
  if (a.norm_stats == "train") {
    std::ifstream in(run.dir / "train_split.txt");
    if (!in) throw FormatError("cannot open " + (run.dir / "train_split.txt").string());
    const PatchSet train = read_split(in, std::make_shared<HsiCube>(raw));
    const std::vector<bool> mask = pixel_mask(train, raw.h, raw.w);
    run.data.cube = std::make_shared<const HsiCube>(normalize_bands(raw, &mask));
  } else {
    run.data.cube = std::make_shared<const HsiCube>(normalize_bands(raw));
  }
  run.data.labels = std::move(labels);

  Rng unused(0);
  run.net = std::make_unique<Network>(run.spec, unused);
  run.net->load_state(load_checkpoint((run.dir / "model.ckpt").string()));
  return run;
}

PatchSet load_split(const LoadedRun& run, const std::string& name) {
  const fs::path path = run.dir / (name + "_split.txt");
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  PatchSet ps = read_split(in, run.data.cube);
  if (ps.patch_size() != run.spec.patch) throw ConfigError("split patch size does not match the checkpoint");
  if (ps.num_classes() != run.spec.num_classes) throw ConfigError("split class count does not match the checkpoint");
  for (const PatchRef& p : ps.items()) {
    if (run.data.labels.at(p.row, p.col) != p.label + 1) {
      throw DataError("split manifest disagrees with the label map at (" + std::to_string(p.row) + ", " +
                      std::to_string(p.col) + ")");
    }
  }
  return ps;
}

std::vector<Variant> parse_variants(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(parse_variant(n));
  return out;
}

int cmd_eval_checkpoint(const std::string& run_dir, const RunArgs& a, const std::string& out) {
  LoadedRun run = load_run(run_dir, a.cube, a.labels);
  const PatchSet test = load_split(run, "test");
  const Evaluation e = evaluate(*run.net, test, a.batch);
  std::ostringstream csv;
  write_report_csv(csv, e.report);
  emit(out, csv.str());
  return kExitOk;
}

int cmd_eval_repeats(const RunArgs& a, int repeats, const std::vector<std::string>& variant_names,
                     const std::string& out) {
  ExperimentConfig cfg;
  Dataset data = load_dataset(a, &cfg);
  const std::vector<Variant> variants = parse_variants(variant_names);
  AblationResult result;
  result.variants = variants;
  result.runs.resize(variants.size());
  // Same seeds and config as run_ablation, with progress reporting.
  for (std::size_t v = 0; v < variants.size(); ++v) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.network.variant = variants[v];
    for (int r = 0; r < repeats; ++r) {
      const std::uint64_t seed = cfg.train.seed + static_cast<std::uint64_t>(r);
      const std::string tag = std::string(to_string(variants[v])) + " repeat " + std::to_string(r + 1) + ": ";
      const RunResult run = run_experiment(data.all, run_cfg, seed, progress(a, tag));
      result.runs[v].push_back(run.evaluation.report);
      std::fprintf(stderr, "%sOA %.4f AA %.4f kappa %.4f\n", tag.c_str(), run.evaluation.report.oa,
                   run.evaluation.report.aa, run.evaluation.report.kappa);
    }
    result.table.push_back({to_string(variants[v]), aggregate(result.runs[v])});
  }
  std::ostringstream csv;
  write_table_csv(csv, result.table);
  emit(out, csv.str());
  return kExitOk;
}

int cmd_export_mask(const std::string& run_dir, const std::string& split, Index batch, const std::string& out) {
  LoadedRun run = load_run(run_dir, "", "");
  if (run.spec.variant == Variant::cm) throw ConfigError("variant cm has no band attention module to export");
  const PatchSet ps = load_split(run, split);
  const std::vector<double> mask = mean_band_mask(*run.net, ps, batch);
  std::ostringstream csv;
  write_mask_csv(csv, mask);
  emit(out, csv.str());
  return kExitOk;
}

int cmd_gradcheck(const GradCheckOptions& options, const std::vector<std::string>& ops, bool inject_sign_bug) {
  fault::set_conv_backward_sign_flip(inject_sign_bug);
  const auto results = run_gradient_suite(options, ops);
  fault::set_conv_backward_sign_flip(false);
  bool ok = true;
  for (const GradCheckResult& r : results) {
    std::printf("%-16s trials=%d redrawn=%d coords=%ld max_rel_err=%.3e %s\n", r.op.c_str(), r.trials, r.redrawn,
                r.coordinates, r.max_rel_error, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitNumerical;
}

int cmd_synth(const SyntheticSceneOptions& o, const std::string& out_dir) {
  const SyntheticScene scene = make_synthetic_scene(o);
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  save_cube((dir / "cube.hsc").string(), scene.cube);
  save_labels((dir / "labels.lbl").string(), scene.labels);
  std::printf("%lldx%lldx%lld cube, %d classes, %lld labeled pixels -> %s\n", static_cast<long long>(o.h),
              static_cast<long long>(o.w), static_cast<long long>(o.bands), o.classes,
              static_cast<long long>(scene.labels.labeled()), dir.string().c_str());
  return kExitOk;
}

/// Expands "--manifest FILE" into the replayable flags it records. Flags given
/// after it on the command line win.
std::vector<std::string> expand_manifest(std::vector<std::string> args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] != "--manifest") continue;
    if (i + 1 >= args.size()) throw ConfigError("--manifest needs a file");
    const auto m = read_key_values(args[i + 1]);
    std::vector<std::string> replay;
    for (const std::string& key : kReplayKeys) {
      auto it = m.find(key);
      if (it == m.end()) continue;
      if (key == "no-replicate") {
        if (it->second == "true") replay.push_back("--no-replicate");
      } else {
        replay.push_back("--" + key);
        replay.push_back(it->second);
      }
    }
    args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(i), replay.begin(), replay.end());
    break;
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Band-attention CNN for hyperspectral image classification", "bacnn"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  RunArgs train_args;
  std::string train_out;
  CLI::App* train = app.add_subcommand("train", "train one network and evaluate it on the held-out split");
  add_run_options(train, train_args);
  train->add_option("--out", train_out, "run directory")->required();
  std::string manifest_path;  // consumed by expand_manifest; declared here for --help
  train->add_option("--manifest", manifest_path, "replay the flags recorded in a run manifest");

  RunArgs eval_args;
  std::string eval_run, eval_out;
  int repeats = 0;
  std::vector<std::string> variants{"cm", "se_cm", "bam_cm"};
  CLI::App* eval = app.add_subcommand("eval", "metrics of a trained run, or a repeated ablation with --repeats");
  add_run_options(eval, eval_args);
  eval->add_option("--run", eval_run, "run directory written by train");
  eval->add_option("--repeats", repeats, "train and evaluate every variant this many times");
  eval->add_option("--variants", variants, "variants for --repeats")->delimiter(',')->capture_default_str();
  eval->add_option("--out", eval_out, "CSV output file (default stdout)");
  eval->add_option("--manifest", manifest_path, "replay the flags recorded in a run manifest");

  std::string mask_run, mask_out, mask_split = "test";
  Index mask_batch = 64;
  CLI::App* mask = app.add_subcommand("export-mask", "mean band mask of a trained run as band,weight CSV");
  mask->add_option("--run", mask_run, "run directory written by train")->required();
  mask->add_option("--split", mask_split, "patches to average over")
      ->check(CLI::IsMember({"test", "train"}))
      ->capture_default_str();
  mask->add_option("--batch", mask_batch)->capture_default_str();
  mask->add_option("--out", mask_out, "CSV output file (default stdout)");

  GradCheckOptions gc;
  std::vector<std::string> gc_ops;
  bool inject_sign_bug = false;
  CLI::App* grad = app.add_subcommand("gradcheck", "central finite-difference check of every differentiable op");
  grad->add_option("--trials", gc.trials)->capture_default_str();
  grad->add_option("--seed", gc.seed)->capture_default_str();
  grad->add_option("--op", gc_ops, "restrict to these ops (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  grad->add_flag("--inject-sign-bug", inject_sign_bug)->group("");

  SyntheticSceneOptions so;
  std::string synth_out;
  CLI::App* synth = app.add_subcommand("synth", "write a synthetic labeled cube");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--height", so.h)->capture_default_str();
  synth->add_option("--width", so.w)->capture_default_str();
  synth->add_option("--bands", so.bands)->capture_default_str();
  synth->add_option("--classes", so.classes)->capture_default_str();
  synth->add_option("--informative", so.informative_bands, "bands carrying class signal")->capture_default_str();
  synth->add_option("--noise", so.noise)->capture_default_str();
  synth->add_option("--clutter", so.clutter, "noise on the uninformative bands")->capture_default_str();
  synth->add_option("--seed", so.seed)->capture_default_str();

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_manifest(std::move(args));
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    try {
      app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
      const int rc = app.exit(e);
      return rc == 0 ? kExitOk : kExitConfig;
    }

    if (*train) return cmd_train(train_args, train_out);
    if (*eval) {
      if (repeats > 0) return cmd_eval_repeats(eval_args, repeats, variants, eval_out);
      if (eval_run.empty()) throw ConfigError("eval needs --run DIR or --repeats N");
      return cmd_eval_checkpoint(eval_run, eval_args, eval_out);
    }
    if (*mask) return cmd_export_mask(mask_run, mask_split, mask_batch, mask_out);
    if (*grad) return cmd_gradcheck(gc, gc_ops, inject_sign_bug);
    if (*synth) return cmd_synth(so, synth_out);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitInput;
  } catch (const MetricError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}
