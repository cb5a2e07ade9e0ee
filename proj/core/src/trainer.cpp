#include "fergcn/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "fergcn/container.hpp"
#include "fergcn/errors.hpp"

namespace fergcn {

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  if (frames == 0) throw ConfigError("N must be positive");
  if (classes < 2) throw ConfigError("K must be at least 2");
  if (feature_dim == 0) throw ConfigError("d must be positive");
  if (module_count > 3) throw ConfigError("module_count must be between 0 and 3");
  if (module_count > 0 && feature_dim % 2 != 0) throw ConfigError("d must be even when graph modules are used");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  SgdConfig{learning_rate, weight_decay}.validate();
}

ModelConfig RunConfig::model_config(std::size_t rows, std::size_t cols) const {
  ModelConfig m;
  m.encoder.frame_rows = rows;
  m.encoder.frame_cols = cols;
  m.encoder.channels1 = channels1;
  m.encoder.channels2 = channels2;
  m.encoder.feature_dim = feature_dim;
  m.frames = frames;
  m.classes = classes;
  m.module_count = module_count;
  m.weighted_fusion = use_weighted_fusion;
  m.fusion_axis = fusion_mean_axis;
  m.cell = cell;
  return m;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

std::string format_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "N" || key == "frames") frames = parse_size(key, value);
  else if (key == "d" || key == "feature_dim") feature_dim = parse_size(key, value);
  else if (key == "K" || key == "classes") classes = parse_size(key, value);
  else if (key == "module_count" || key == "modules") module_count = parse_size(key, value);
  else if (key == "use_weighted_fusion" || key == "fusion") use_weighted_fusion = parse_bool(key, value);
  else if (key == "epochs") epochs = parse_size(key, value);
  else if (key == "learning_rate" || key == "lr") learning_rate = parse_double(key, value);
  else if (key == "weight_decay" || key == "wd") weight_decay = parse_double(key, value);
  else if (key == "batch_size") batch_size = parse_size(key, value);
  else if (key == "seed") seed = parse_size(key, value);
  else if (key == "dataset" || key == "data") dataset = value;
  else if (key == "output_dir" || key == "out") output_dir = value;
  else if (key == "fusion_mean_axis") {
    if (value == "column") fusion_mean_axis = FusionAxis::kColumn;
    else if (value == "row") fusion_mean_axis = FusionAxis::kRow;
    else throw ConfigError("fusion_mean_axis must be 'column' or 'row', got '" + value + "'");
  } else if (key == "cell") {
    if (value == "plain") cell = RecurrentCell::kPlain;
    else if (value == "gated") cell = RecurrentCell::kGated;
    else throw ConfigError("cell must be 'plain' or 'gated', got '" + value + "'");
  } else if (key == "channels1") channels1 = parse_size(key, value);
  else if (key == "channels2") channels2 = parse_size(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_entries() const {
  return {{"N", std::to_string(frames)},
          {"d", std::to_string(feature_dim)},
          {"K", std::to_string(classes)},
          {"module_count", std::to_string(module_count)},
          {"use_weighted_fusion", use_weighted_fusion ? "true" : "false"},
          {"epochs", std::to_string(epochs)},
          {"learning_rate", format_double(learning_rate)},
          {"weight_decay", format_double(weight_decay)},
          {"batch_size", std::to_string(batch_size)},
          {"seed", std::to_string(seed)},
          {"fusion_mean_axis", fusion_mean_axis == FusionAxis::kColumn ? "column" : "row"},
          {"cell", cell == RecurrentCell::kPlain ? "plain" : "gated"},
          {"channels1", std::to_string(channels1)},
          {"channels2", std::to_string(channels2)}};
}

RunConfig parse_run_config(std::istream& in, RunConfig base) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  return parse_run_config(in, std::move(base));
}

// --------------------------------------------------------------- metrics

std::string metrics_csv_header(std::size_t frames) {
  std::string h = "epoch,train_loss,train_acc,val_acc,a_offdiag";
  for (std::size_t i = 1; i <= frames; ++i) h += ",w_" + std::to_string(i);
  return h;
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::ostringstream out;
  out << std::setprecision(17) << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ','
      << r.val_accuracy << ',' << r.a_offdiag;
  for (double w : r.weight_curve) out << ',' << w;
  return out.str();
}

std::string metrics_csv(const std::vector<MetricsRecord>& records, std::size_t frames) {
  std::string out = metrics_csv_header(frames) + "\n";
  for (const auto& r : records) out += metrics_csv_row(r) + "\n";
  return out;
}

std::vector<std::vector<double>> Evaluation::confusion_percent() const {
  std::vector<std::vector<double>> out;
  for (const auto& row : confusion) {
    const double total = static_cast<double>(std::accumulate(row.begin(), row.end(), std::size_t{0}));
    std::vector<double> pct(row.size(), 0.0);
    if (total > 0) {
      for (std::size_t j = 0; j < row.size(); ++j) pct[j] = 100.0 * static_cast<double>(row[j]) / total;
    }
    out.push_back(std::move(pct));
  }
  return out;
}

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void check_dataset_fits(const ModelConfig& m, const Dataset& ds) {
  if (ds.info.frames != m.frames || ds.info.classes != m.classes || ds.info.rows != m.encoder.frame_rows ||
      ds.info.cols != m.encoder.frame_cols) {
    throw ShapeError("dataset (K=" + std::to_string(ds.info.classes) + " N=" + std::to_string(ds.info.frames) +
                     " " + std::to_string(ds.info.rows) + "x" + std::to_string(ds.info.cols) +
                     ") does not match model (K=" + std::to_string(m.classes) + " N=" + std::to_string(m.frames) +
                     " " + std::to_string(m.encoder.frame_rows) + "x" + std::to_string(m.encoder.frame_cols) + ")");
  }
}

}  // namespace

Evaluation evaluate(Model& model, const Dataset& dataset, const std::vector<std::size_t>& indices) {
  check_dataset_fits(model.config, dataset);
  std::vector<std::size_t> idx = indices;
  if (idx.empty()) {
    idx.resize(dataset.samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  const std::size_t k = model.config.classes;
  Evaluation ev;
  ev.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  double loss = 0.0;
  for (auto i : idx) {
    const auto& s = dataset.samples.at(i);
    Tape tape(Tape::Mode::kInference);
    const auto out = model_forward(tape, model, s.images);
    loss += cross_entropy(out.logits, s.label).value()[0];
    const std::size_t pred = argmax(out.logits.value().values());
    ev.confusion[s.label][pred] += 1;
    if (pred == s.label) ++correct;
  }
  ev.accuracy = idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
  ev.mean_loss = idx.empty() ? 0.0 : loss / static_cast<double>(idx.size());
  return ev;
}

// -------------------------------------------------------------- training

TrainResult train(const RunConfig& cfg, const Dataset& dataset, const EpochCallback& on_epoch) {
  cfg.validate();
  const ModelConfig mcfg = cfg.model_config(dataset.info.rows, dataset.info.cols);
  mcfg.validate();
  check_dataset_fits(mcfg, dataset);
  if (dataset.split.train.empty()) throw ConfigError("dataset has no training samples");

  TrainResult result{Model::init(mcfg, cfg.seed), {}};
  Model& model = result.model;
  const ParameterSet params = model.parameters();
  const SgdConfig sgd{cfg.learning_rate, cfg.weight_decay};

  auto snapshot = [&](std::size_t epoch, double train_loss, double train_acc) {
    MetricsRecord r;
    r.epoch = epoch;
    r.train_loss = train_loss;
    r.train_accuracy = train_acc;
    r.val_accuracy = dataset.split.val.empty() ? 0.0 : evaluate(model, dataset, dataset.split.val).accuracy;
    r.a_offdiag = mean_offdiagonal_magnitude(model.adjacency);
    r.weight_curve = current_weight_curve(model);
    result.metrics.push_back(r);
    if (on_epoch) on_epoch(r);
  };

  {
    const auto ev = evaluate(model, dataset, dataset.split.train);
    snapshot(0, ev.mean_loss, ev.accuracy);
  }

  const CounterRng shuffle_root(cfg.seed, 0x73687566666c65ULL);
  std::vector<std::size_t> order = dataset.split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order = dataset.split.train;
    auto rng = shuffle_root.substream(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_total = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      try {
        for (std::size_t b = start; b < end; ++b) {
          const auto& s = dataset.samples[order[b]];
          Tape tape;
          const auto out = model_forward(tape, model, s.images);
          const Var ce = cross_entropy(out.logits, s.label);
          loss_total += ce.value()[0];
          if (argmax(out.logits.value().values()) == s.label) ++correct;
          tape.backward(scale(ce, inv_batch));
        }
        sgd_step(params, sgd);
        for (const auto& p : params) {
          if (!p.tensor->all_finite()) throw NumericalError("parameter '" + p.name + "' became non-finite");
        }
      } catch (const NumericalError& e) {
        throw NumericalError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch) + ": " + e.what());
      }
    }
    const double n = static_cast<double>(order.size());
    snapshot(epoch, loss_total / n, static_cast<double>(correct) / n);
  }
  return result;
}

void write_run_outputs(const RunConfig& cfg, const TrainResult& result) {
  if (cfg.output_dir.empty()) throw ConfigError("output_dir is not set");
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  const auto csv = metrics_csv(result.metrics, cfg.frames);
  write_file_bytes(cfg.output_dir / "metrics.csv", std::vector<std::uint8_t>(csv.begin(), csv.end()));
  save_checkpoint(result.model, cfg.output_dir / "checkpoint.fgck");
}

// ------------------------------------------------------------ checkpoint

namespace {

constexpr std::string_view kCheckpointMagic = "FGCK";

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  const auto& c = model.config;
  Model& mutable_model = const_cast<Model&>(model);
  const ParameterSet params = mutable_model.parameters();
  ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u8(kContainerVersion);
  w.header_line({{"N", std::to_string(c.frames)},
                 {"d", std::to_string(c.feature_dim())},
                 {"K", std::to_string(c.classes)},
                 {"R", std::to_string(c.encoder.frame_rows)},
                 {"C", std::to_string(c.encoder.frame_cols)},
                 {"channels1", std::to_string(c.encoder.channels1)},
                 {"channels2", std::to_string(c.encoder.channels2)},
                 {"kernel", std::to_string(c.encoder.kernel)},
                 {"module_count", std::to_string(c.module_count)},
                 {"weighted_fusion", c.weighted_fusion ? "1" : "0"},
                 {"fusion_mean_axis", c.fusion_axis == FusionAxis::kColumn ? "column" : "row"},
                 {"cell", c.cell == RecurrentCell::kPlain ? "plain" : "gated"},
                 {"slope", format_double(c.slope)},
                 {"count", std::to_string(params.size())}});
  for (const auto& p : params) {
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.text(p.name);
    const auto& shape = p.tensor->shape();
    w.u8(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    w.f64s(p.tensor->values());
  }
  return w.bytes();
}

Model decode_checkpoint(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kCheckpointMagic);
  r.expect_version(kContainerVersion);
  const std::size_t at = r.offset();
  const Header h = r.header_line();
  ModelConfig c;
  c.frames = header_get_uint(h, "N", at);
  c.encoder.feature_dim = header_get_uint(h, "d", at);
  c.classes = header_get_uint(h, "K", at);
  c.encoder.frame_rows = header_get_uint(h, "R", at);
  c.encoder.frame_cols = header_get_uint(h, "C", at);
  c.encoder.channels1 = header_get_uint(h, "channels1", at);
  c.encoder.channels2 = header_get_uint(h, "channels2", at);
  c.encoder.kernel = header_get_uint(h, "kernel", at);
  c.module_count = header_get_uint(h, "module_count", at);
  c.weighted_fusion = header_get(h, "weighted_fusion", at) == "1";
  c.fusion_axis = header_get(h, "fusion_mean_axis", at) == "row" ? FusionAxis::kRow : FusionAxis::kColumn;
  c.cell = header_get(h, "cell", at) == "gated" ? RecurrentCell::kGated : RecurrentCell::kPlain;
  try {
    c.slope = std::stod(header_get(h, "slope", at));
    c.encoder.slope = c.slope;
    c.validate();
  } catch (const Error& e) {
    throw ParseError(std::string("invalid checkpoint configuration: ") + e.what(), at);
  } catch (const std::exception&) {
    throw ParseError("invalid slope in checkpoint header", at);
  }
  Model model = Model::init(c, 0);
  const ParameterSet params = model.parameters();
  const std::size_t count = header_get_uint(h, "count", at);
  if (count != params.size()) {
    throw ParseError("checkpoint holds " + std::to_string(count) + " parameter blocks, model needs " +
                         std::to_string(params.size()),
                     at);
  }
  for (const auto& p : params) {
    const std::size_t block_at = r.offset();
    const std::string name = r.text(r.u16());
    if (name != p.name) throw ParseError("expected parameter block '" + p.name + "', found '" + name + "'", block_at);
    const std::size_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != p.tensor->shape()) {
      throw ParseError("parameter '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                           shape_to_string(p.tensor->shape()),
                       block_at);
    }
    r.f64s(p.tensor->values());
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after last parameter block", r.offset());
  zero_grads(params);
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

// ---------------------------------------------------------- over-smoothing

double mean_pairwise_cosine_distance(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  if (n < 2) return 0.0;
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) norms[i] += features.at(i, c) * features.at(i, c);
    norms[i] = std::sqrt(norms[i]);
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += features.at(i, c) * features.at(j, c);
      const double denom = norms[i] * norms[j];
      // Two zero vectors are treated as identical.
      total += denom > 0.0 ? 1.0 - dot / denom : (norms[i] == norms[j] ? 0.0 : 1.0);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double oversmoothing_metric(Model& model, const Dataset& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (auto i : indices) {
    Tape tape(Tape::Mode::kInference);
    const auto out = model_forward(tape, model, dataset.samples.at(i).images);
    total += mean_pairwise_cosine_distance(out.final_features().value());
  }
  return total / static_cast<double>(indices.size());
}

// ---------------------------------------------------------------- ablation

std::string AblationVariant::label() const {
  std::string s = module_count == 0 ? "mean pooling" : "graph module x" + std::to_string(module_count);
  if (weighted_fusion) s += " + weighted fusion";
  return s;
}

std::vector<AblationVariant> table_variants() { return {{0, false}, {1, false}, {2, false}, {3, false}, {2, true}}; }

std::vector<AblationVariant> parse_variants(const std::string& spec) {
  if (spec.empty() || spec == "table") return table_variants();
  std::vector<AblationVariant> out;
  std::stringstream in(spec);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    AblationVariant v;
    if (item.back() == 'f') {
      v.weighted_fusion = true;
      item.pop_back();
    }
    if (item.size() != 1 || item[0] < '0' || item[0] > '3') {
      throw ConfigError("ablation variant must look like 0..3 with optional 'f', got '" + item + "'");
    }
    v.module_count = static_cast<std::size_t>(item[0] - '0');
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("no ablation variants given");
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const Dataset& dataset,
                                      const std::vector<AblationVariant>& variants) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    RunConfig cfg = base;
    cfg.module_count = v.module_count;
    cfg.use_weighted_fusion = v.weighted_fusion;
    auto result = train(cfg, dataset);
    AblationRow row;
    row.variant = v;
    row.val_accuracy = evaluate(result.model, dataset, dataset.split.val).accuracy;
    row.oversmoothing = oversmoothing_metric(result.model, dataset, dataset.split.val);
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(42) << "Experiment model" << std::right << std::setw(10) << "val acc" << std::setw(16)
      << "cosine spread" << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(42) << ("encoder + " + r.variant.label()) << std::right << std::fixed
        << std::setprecision(2) << std::setw(9) << 100.0 * r.val_accuracy << '%' << std::setprecision(4)
        << std::setw(16) << r.oversmoothing << '\n';
  }
  return out.str();
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("spearman needs two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace fergcn
