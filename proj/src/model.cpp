#include "bacnn/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "bacnn/error.hpp"

namespace bacnn {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::cm: return "cm";
    case Variant::se_cm: return "se_cm";
    case Variant::bam_cm: return "bam_cm";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  if (name == "cm") return Variant::cm;
  if (name == "se_cm") return Variant::se_cm;
  if (name == "bam_cm") return Variant::bam_cm;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected cm, se_cm or bam_cm)");
}

void NetworkSpec::validate() const {
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (bands < 1) throw ConfigError("band count must be positive");
  if (patch < 4) throw ConfigError("patch size must be at least 4");
  if (cm.convs_per_stage < 1) throw ConfigError("CM stages need at least one convolution");
  if (cm.weighted_layers() != kCmWeightedLayers) {
    throw ConfigError("CM layout has " + std::to_string(cm.weighted_layers()) + " weighted layers, expected " +
                      std::to_string(kCmWeightedLayers));
  }
  for (Index w : cm.stage_widths) {
    if (w < 1) throw ConfigError("CM stage widths must be positive");
  }
  if (cm.dense_hidden < 1) throw ConfigError("CM hidden width must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (variant != Variant::cm) bam().validate();
}

BamConfig NetworkSpec::bam() const {
  BamConfig c;
  c.bands = bands;
  c.ratio = ratio;
  c.final_activation = mask_activation;
  c.stage_layout = bam_stages;
  return c;
}

std::string to_config(const NetworkSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "variant=" << to_string(spec.variant) << '\n'
     << "num_classes=" << spec.num_classes << '\n'
     << "bands=" << spec.bands << '\n'
     << "patch=" << spec.patch << '\n'
     << "cm_stage_widths=" << spec.cm.stage_widths[0] << ',' << spec.cm.stage_widths[1] << ','
     << spec.cm.stage_widths[2] << '\n'
     << "cm_convs_per_stage=" << spec.cm.convs_per_stage << '\n'
     << "cm_dense_hidden=" << spec.cm.dense_hidden << '\n'
     << "dropout=" << spec.dropout << '\n'
     << "ratio=" << spec.ratio << '\n'
     << "mask_activation=" << to_string(spec.mask_activation) << '\n'
     << "bam_stages=" << spec.bam_stages[0] << ',' << spec.bam_stages[1] << ',' << spec.bam_stages[2] << '\n';
  return os.str();
}

namespace {

template <typename T, std::size_t N>
std::array<T, N> parse_triple(const std::string& key, const std::string& value) {
  std::array<T, N> out{};
  std::istringstream is(value);
  for (std::size_t i = 0; i < N; ++i) {
    char sep = ',';
    if (!(is >> out[i]) || (i + 1 < N && !(is >> sep && sep == ','))) {
      throw ConfigError("bad value for " + key + ": '" + value + "'");
    }
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  if (!(is >> out) || !is.eof()) throw ConfigError("bad value for " + key + ": '" + value + "'");
  return out;
}

}  // namespace

NetworkSpec parse_config(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  NetworkSpec spec;
  for (const auto& [key, value] : kv) {
    if (key == "variant") spec.variant = parse_variant(value);
    else if (key == "num_classes") spec.num_classes = parse_number<Index>(key, value);
    else if (key == "bands") spec.bands = parse_number<Index>(key, value);
    else if (key == "patch") spec.patch = parse_number<Index>(key, value);
    else if (key == "cm_stage_widths") spec.cm.stage_widths = parse_triple<Index, 3>(key, value);
    else if (key == "cm_convs_per_stage") spec.cm.convs_per_stage = parse_number<int>(key, value);
    else if (key == "cm_dense_hidden") spec.cm.dense_hidden = parse_number<Index>(key, value);
    else if (key == "dropout") spec.dropout = parse_number<double>(key, value);
    else if (key == "ratio") spec.ratio = parse_number<double>(key, value);
    else if (key == "mask_activation") spec.mask_activation = parse_activation(value);
    else if (key == "bam_stages") spec.bam_stages = parse_triple<int, 3>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  spec.validate();
  return spec;
}

void save_spec(const std::string& path, const NetworkSpec& spec) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << to_config(spec);
}

NetworkSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open network config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

Network::Network(const NetworkSpec& spec, Rng& init_rng) : spec_(spec) {
  spec_.validate();
  Rng attention_rng = init_rng.stream("attention");
  Rng cm_rng = init_rng.stream("cm");
  if (spec_.variant == Variant::bam_cm) {
    attention_.emplace<BandAttention>(spec_.bam(), attention_rng);
  } else if (spec_.variant == Variant::se_cm) {
    attention_.emplace<SeAttention>(spec_.bands, spec_.ratio, attention_rng);
  }

  Index in = spec_.bands;
  for (std::size_t stage = 0; stage < spec_.cm.stage_widths.size(); ++stage) {
    for (int i = 0; i < spec_.cm.convs_per_stage; ++i) {
      const std::string id = std::to_string(convs_.size() + 1);
      if (!convs_.empty()) norms_.push_back(make_batchnorm(in, "cm.bn" + id));
      pool_before_.push_back(stage > 0 && i == 0);
      convs_.push_back(make_conv(3, in, spec_.cm.stage_widths[stage], cm_rng, "cm.conv" + id));
      in = spec_.cm.stage_widths[stage];
    }
  }
  norms_.push_back(make_batchnorm(in, "cm.bn_out"));
  hidden_ = make_dense(in, spec_.cm.dense_hidden, cm_rng, "cm.fc1");
  output_ = make_dense(spec_.cm.dense_hidden, spec_.num_classes, cm_rng, "cm.fc2");

  if (attention_module_count() != (spec_.variant == Variant::cm ? 0 : 1)) {
    throw ConfigError("network must carry exactly one attention head unless the variant is cm");
  }
}

void Network::check_input(const Tensor& x) const {
  const Shape4 s = shape4(x);
  if (s.h != spec_.patch || s.w != spec_.patch || s.c != spec_.bands) {
    throw ShapeError("network expects [n," + std::to_string(spec_.patch) + "," + std::to_string(spec_.patch) + "," +
                     std::to_string(spec_.bands) + "] input, got " + shape_string(x.shape()));
  }
}

std::optional<BandMask> Network::band_mask(Tape& tape, const Var& x, Mode mode) {
  check_input(x.value());
  if (auto* bam = std::get_if<BandAttention>(&attention_)) return bam->forward(tape, x, mode);
  if (auto* se = std::get_if<SeAttention>(&attention_)) return se->forward(tape, x, mode);
  return std::nullopt;
}

Var Network::forward(Tape& tape, const Var& x, Mode mode, Rng& dropout_rng) {
  check_input(x.value());
  Var h = x;
  if (spec_.variant != Variant::cm) {
    if (unit_mask_) {
      h = apply_mask(tape, x, {Var::constant(Tensor({x.value().dim(0), spec_.bands}, 1.0))});
    } else {
      h = apply_mask(tape, x, *band_mask(tape, x, mode));
    }
  }
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (pool_before_[i]) h = maxpool2(tape, h);
    if (i > 0) h = relu(tape, batchnorm(tape, h, norms_[i - 1], mode));
    h = conv2d(tape, h, convs_[i]);
  }
  h = relu(tape, batchnorm(tape, h, norms_.back(), mode));
  h = spatial_mean(tape, h);
  h = relu(tape, dense(tape, h, hidden_));
  h = dropout(tape, h, spec_.dropout, mode, dropout_rng);
  return dense(tape, h, output_);
}

Var Network::forward(Tape& tape, const Var& x) {
  Rng unused(0);
  return forward(tape, x, Mode::eval, unused);
}

std::vector<Var> Network::attention_parameters() const {
  if (auto* bam = std::get_if<BandAttention>(&attention_)) return bam->parameters();
  if (auto* se = std::get_if<SeAttention>(&attention_)) return se->parameters();
  return {};
}

std::vector<Var> Network::parameters() const {
  std::vector<Var> out = attention_parameters();
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i > 0) {
      out.push_back(norms_[i - 1].gamma);
      out.push_back(norms_[i - 1].beta);
    }
    out.push_back(convs_[i].kernel);
    out.push_back(convs_[i].bias);
  }
  out.push_back(norms_.back().gamma);
  out.push_back(norms_.back().beta);
  for (const DenseLayer* d : {&hidden_, &output_}) {
    out.push_back(d->weight);
    out.push_back(d->bias);
  }
  return out;
}

Index Network::parameter_count() const {
  Index total = 0;
  for (const Var& p : parameters()) total += p.value().size();
  return total;
}

int Network::weighted_layer_count() const { return static_cast<int>(convs_.size()) + 2; }

int Network::attention_module_count() const { return std::holds_alternative<std::monostate>(attention_) ? 0 : 1; }

std::vector<std::pair<std::string, Tensor*>> Network::state_refs() {
  std::vector<std::pair<std::string, Tensor*>> out;
  if (auto* bam = std::get_if<BandAttention>(&attention_)) out = bam->state();
  if (auto* se = std::get_if<SeAttention>(&attention_)) out = se->state();
  for (Var v : parameters()) {
    if (v.name().rfind("cm.", 0) == 0) out.emplace_back(v.name(), &v.mutable_value());
  }
  for (BatchNormLayer& bn : norms_) {
    const std::string base = bn.gamma.name().substr(0, bn.gamma.name().size() - std::string(".gamma").size());
    out.emplace_back(base + ".running_mean", &bn.running_mean);
    out.emplace_back(base + ".running_var", &bn.running_var);
  }
  return out;
}

std::vector<NamedTensor> Network::state() const {
  std::vector<NamedTensor> out;
  for (auto& [name, tensor] : const_cast<Network*>(this)->state_refs()) out.push_back({name, *tensor});
  return out;
}

void Network::load_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  auto refs = state_refs();
  if (refs.size() != tensors.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, network expects " +
                      std::to_string(refs.size()));
  }
  for (auto& [name, tensor] : refs) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks tensor '" + name + "'");
    if (it->second->shape() != tensor->shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + shape_string(it->second->shape()) +
                        ", network expects " + shape_string(tensor->shape()));
    }
    *tensor = *it->second;
  }
}

Network build(const NetworkSpec& spec, Rng& init_rng) { return Network(spec, init_rng); }

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw ShapeError("argmax_rows: expected [n, k]");
  const Index n = logits.dim(0);
  const Index k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    Index best = 0;
    for (Index j = 1; j < k; ++j) {
      if (logits[r * k + j] > logits[r * k + best]) best = j;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> predict(Network& net, const Tensor& x, Index batch) {
  const Shape4 s = shape4(x);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(s.n));
  const Index per_sample = s.h * s.w * s.c;
  for (Index start = 0; start < s.n; start += batch) {
    const Index count = std::min(batch, s.n - start);
    std::vector<double> chunk(x.data().begin() + start * per_sample,
                              x.data().begin() + (start + count) * per_sample);
    Tape tape(false);
    Var logits = net.forward(tape, Var::constant(Tensor({count, s.h, s.w, s.c}, std::move(chunk))));
    for (int p : argmax_rows(logits.value())) out.push_back(p);
  }
  return out;
}

}  // namespace bacnn
