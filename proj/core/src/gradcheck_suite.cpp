#include "fergcn/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <map>
#include <set>
#include <sstream>

#include "fergcn/errors.hpp"
#include "fergcn/fusion.hpp"
#include "fergcn/graph.hpp"
#include "fergcn/model.hpp"
#include "fergcn/rng.hpp"

namespace fergcn {

GradScope parse_grad_scope(const std::string& text) {
  if (text == "ops") return GradScope::kOps;
  if (text == "module") return GradScope::kModule;
  if (text == "end_to_end") return GradScope::kEndToEnd;
  if (text == "stop_gradient") return GradScope::kStopGradient;
  if (text == "all") return GradScope::kAll;
  throw ConfigError("unknown gradcheck scope '" + text + "' (ops, module, end_to_end, stop_gradient, all)");
}

std::string grad_scope_name(GradScope scope) {
  switch (scope) {
    case GradScope::kOps: return "ops";
    case GradScope::kModule: return "module";
    case GradScope::kEndToEnd: return "end_to_end";
    case GradScope::kStopGradient: return "stop_gradient";
    case GradScope::kAll: return "all";
  }
  return "?";
}

namespace {

class Collector {
 public:
  explicit Collector(double tolerance) : tolerance_(tolerance) {}

  void add(const std::string& suite, const std::string& group, double err) {
    const auto key = std::make_pair(suite, group);
    auto it = index_.find(key);
    if (it == index_.end()) {
      it = index_.emplace(key, groups_.size()).first;
      groups_.push_back({suite, group, 0.0, 0, true});
    }
    SuiteGroup& g = groups_[it->second];
    g.max_rel_error = std::max(g.max_rel_error, err);
    g.instances += 1;
    g.passed = g.max_rel_error < tolerance_;
  }

  // Groups whose pass condition is "exactly zero".
  void add_exact_zero(const std::string& suite, const std::string& group, double max_abs) {
    add(suite, group, max_abs);
    auto& g = groups_[index_.at({suite, group})];
    g.passed = g.passed && g.max_rel_error == 0.0;
  }

  void absorb(const std::string& suite, const GradCheckReport& r) {
    for (const auto& p : r.params) add(suite, p.name, p.max_rel_error);
  }

  std::vector<SuiteGroup> take() { return std::move(groups_); }

 private:
  double tolerance_;
  std::map<std::pair<std::string, std::string>, std::size_t> index_;
  std::vector<SuiteGroup> groups_;
};

Tensor random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so the leaky relu kink is never straddled.
Tensor off_kink_tensor(Shape shape, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.below(2) == 0 ? mag : -mag;
  }
  return t;
}

std::size_t dim(CounterRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

// Contracts y with fixed pseudo-random coefficients, giving a scalar whose
// gradient reaches every element of y with a different weight.
Var project(Var y, std::uint64_t key) {
  CounterRng rng(key, 0x70726f6aULL);
  return sum(mul(y, y.tape->constant(random_tensor(y.shape(), rng))));
}

struct OpInstance {
  std::vector<std::unique_ptr<Tensor>> tensors;
  std::vector<std::string> names;
  LossBuilder build;

  Tensor& add(std::string name, Tensor t) {
    tensors.push_back(std::make_unique<Tensor>(std::move(t)));
    names.push_back(std::move(name));
    return *tensors.back();
  }
  ParameterSet params() {
    ParameterSet out;
    for (std::size_t i = 0; i < tensors.size(); ++i) out.push_back({names[i], tensors[i].get()});
    return out;
  }
};

using OpFactory = std::function<void(OpInstance&, CounterRng&, std::uint64_t key)>;

std::vector<std::pair<std::string, OpFactory>> op_factories() {
  std::vector<std::pair<std::string, OpFactory>> f;
  f.emplace_back("matmul", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t m = dim(rng, 1, 4), k = dim(rng, 1, 4), n = dim(rng, 1, 4);
    Tensor& a = in.add("a", random_tensor({m, k}, rng));
    Tensor& b = in.add("b", random_tensor({k, n}, rng));
    in.build = [&a, &b, key](Tape& t) { return project(matmul(t.parameter(a), t.parameter(b)), key); };
  });
  f.emplace_back("transpose", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng));
    in.build = [&x, key](Tape& t) { return project(transpose(t.parameter(x)), key); };
  });
  f.emplace_back("add", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const Shape s{dim(rng, 1, 4), dim(rng, 1, 4)};
    Tensor& a = in.add("a", random_tensor(s, rng));
    Tensor& b = in.add("b", random_tensor(s, rng));
    in.build = [&a, &b, key](Tape& t) { return project(add(t.parameter(a), t.parameter(b)), key); };
  });
  f.emplace_back("sub", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const Shape s{dim(rng, 1, 4), dim(rng, 1, 4)};
    Tensor& a = in.add("a", random_tensor(s, rng));
    Tensor& b = in.add("b", random_tensor(s, rng));
    in.build = [&a, &b, key](Tape& t) { return project(sub(t.parameter(a), t.parameter(b)), key); };
  });
  f.emplace_back("mul", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const Shape s{dim(rng, 1, 4), dim(rng, 1, 4)};
    Tensor& a = in.add("a", random_tensor(s, rng));
    Tensor& b = in.add("b", random_tensor(s, rng));
    // Squaring a through mul(a, a) also exercises gradient accumulation.
    in.build = [&a, &b, key](Tape& t) {
      const Var va = t.parameter(a);
      return project(mul(mul(va, t.parameter(b)), va), key);
    };
  });
  f.emplace_back("scale", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng));
    const double factor = rng.uniform(-2.0, 2.0);
    in.build = [&x, factor, key](Tape& t) { return project(scale(t.parameter(x), factor), key); };
  });
  f.emplace_back("add_row_bias", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4);
    Tensor& x = in.add("x", random_tensor({m, n}, rng));
    Tensor& b = in.add("bias", random_tensor({1, n}, rng));
    in.build = [&x, &b, key](Tape& t) { return project(add_row_bias(t.parameter(x), t.parameter(b)), key); };
  });
  f.emplace_back("leaky_relu", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", off_kink_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng));
    const double slope = rng.uniform(0.01, 0.5);
    in.build = [&x, slope, key](Tape& t) { return project(leaky_relu(t.parameter(x), slope), key); };
  });
  f.emplace_back("sigmoid", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng, -3.0, 3.0));
    in.build = [&x, key](Tape& t) { return project(sigmoid(t.parameter(x)), key); };
  });
  f.emplace_back("tanh", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng, -3.0, 3.0));
    in.build = [&x, key](Tape& t) { return project(tanh(t.parameter(x)), key); };
  });
  f.emplace_back("softmax", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({1, dim(rng, 1, 6)}, rng, -3.0, 3.0));
    in.build = [&x, key](Tape& t) { return project(softmax_vector(t.parameter(x)), key); };
  });
  f.emplace_back("mean_over_rows", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 5), dim(rng, 1, 4)}, rng));
    in.build = [&x, key](Tape& t) { return project(mean_over_rows(t.parameter(x)), key); };
  });
  f.emplace_back("stop_gradient", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng));
    auto frozen = std::make_shared<Tensor>(x);
    // Finite differences see the detached copy as the fixed snapshot, which is
    // what the analytic gradient claims.
    in.build = [&x, frozen, key](Tape& t) {
      const Var live = t.parameter(x);
      const Var held = t.mode() == Tape::Mode::kTraining ? live : t.constant(*frozen);
      return project(mul(mul(live, live), stop_gradient(held)), key);
    };
  });
  f.emplace_back("cross_entropy", [](OpInstance& in, CounterRng& rng, std::uint64_t) {
    const std::size_t k = dim(rng, 2, 6);
    Tensor& x = in.add("logits", random_tensor({1, k}, rng, -3.0, 3.0));
    const std::size_t label = rng.below(k);
    in.build = [&x, label](Tape& t) { return cross_entropy(t.parameter(x), label); };
  });
  f.emplace_back("sum", [](OpInstance& in, CounterRng& rng, std::uint64_t) {
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng));
    in.build = [&x](Tape& t) {
      const Var v = t.parameter(x);
      return sum(mul(v, v));
    };
  });
  f.emplace_back("select_rows", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t m = dim(rng, 1, 4);
    Tensor& x = in.add("x", random_tensor({m, dim(rng, 1, 4)}, rng));
    std::vector<std::size_t> rows(dim(rng, 1, 5));
    for (auto& r : rows) r = rng.below(m);
    in.build = [&x, rows, key](Tape& t) { return project(select_rows(t.parameter(x), rows), key); };
  });
  f.emplace_back("select_cols", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t n = dim(rng, 1, 4);
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 4), n}, rng));
    std::vector<std::size_t> cols(dim(rng, 1, 5));
    for (auto& c : cols) c = rng.below(n);
    in.build = [&x, cols, key](Tape& t) { return project(select_cols(t.parameter(x), cols), key); };
  });
  f.emplace_back("concat_cols", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t m = dim(rng, 1, 4);
    Tensor& a = in.add("a", random_tensor({m, dim(rng, 1, 4)}, rng));
    Tensor& b = in.add("b", random_tensor({m, dim(rng, 1, 4)}, rng));
    in.build = [&a, &b, key](Tape& t) { return project(concat_cols(t.parameter(a), t.parameter(b)), key); };
  });
  f.emplace_back("concat_rows", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t n = dim(rng, 1, 4), parts = dim(rng, 1, 3);
    std::vector<Tensor*> ts;
    for (std::size_t p = 0; p < parts; ++p) ts.push_back(&in.add("part" + std::to_string(p), random_tensor({dim(rng, 1, 3), n}, rng)));
    in.build = [ts, key](Tape& t) {
      std::vector<Var> vs;
      for (Tensor* p : ts) vs.push_back(t.parameter(*p));
      return project(concat_rows(vs), key);
    };
  });
  f.emplace_back("reshape", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t m = dim(rng, 1, 4), n = dim(rng, 1, 4);
    Tensor& x = in.add("x", random_tensor({m, n}, rng));
    in.build = [&x, m, n, key](Tape& t) { return project(reshape(t.parameter(x), {n, 1, m}), key); };
  });
  f.emplace_back("conv2d", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t b = dim(rng, 1, 2), cin = dim(rng, 1, 2), cout = dim(rng, 1, 2);
    const std::size_t h = dim(rng, 2, 5), w = dim(rng, 2, 5), k = rng.below(2) == 0 ? 1 : 3;
    Tensor& x = in.add("x", random_tensor({b, cin, h, w}, rng));
    Tensor& kern = in.add("kernel", random_tensor({cout, cin, k, k}, rng));
    Tensor& bias = in.add("bias", random_tensor({cout}, rng));
    in.build = [&x, &kern, &bias, key](Tape& t) {
      return project(conv2d(t.parameter(x), t.parameter(kern), t.parameter(bias)), key);
    };
  });
  f.emplace_back("mean_pool2", [](OpInstance& in, CounterRng& rng, std::uint64_t key) {
    const std::size_t h = 2 * dim(rng, 1, 2), w = 2 * dim(rng, 1, 2);
    Tensor& x = in.add("x", random_tensor({dim(rng, 1, 2), dim(rng, 1, 2), h, w}, rng));
    in.build = [&x, key](Tape& t) { return project(mean_pool2(t.parameter(x)), key); };
  });
  return f;
}

void run_ops(Collector& out, std::vector<std::string>& uncovered, const SuiteOptions& opt) {
  std::set<OpKind> seen;
  const auto factories = op_factories();
  for (std::size_t f = 0; f < factories.size(); ++f) {
    const auto& [name, factory] = factories[f];
    for (std::size_t i = 0; i < opt.instances_per_op; ++i) {
      CounterRng rng(opt.seed, 1000 * (f + 1) + i);
      OpInstance inst;
      factory(inst, rng, rng.next_u64());
      const LossBuilder traced = [&](Tape& t) {
        const Var loss = inst.build(t);
        if (t.mode() == Tape::Mode::kTraining)
          for (std::size_t id = 0; id < t.size(); ++id) seen.insert(t.kind(id));
        return loss;
      };
      const auto report = check_gradients(traced, inst.params(), opt.check);
      out.add("ops", name, report.max_rel_error);
    }
  }
  for (OpKind k : differentiable_ops())
    if (!seen.count(k)) uncovered.emplace_back(op_name(k));
}

Tensor perturbed_adjacency(std::size_t n, CounterRng& rng, double spread = 0.3) {
  Tensor a = Tensor::identity(n);
  for (auto& v : a.values()) v += rng.uniform(-spread, spread);
  return a;
}

void randomize_states(BiLstmParams& p, CounterRng& rng) {
  for (auto& v : p.s0_fwd.values()) v = rng.uniform(-0.5, 0.5);
  for (auto& v : p.s0_bwd.values()) v = rng.uniform(-0.5, 0.5);
}

void run_modules(Collector& out, const SuiteOptions& opt) {
  constexpr std::size_t n = 3, d = 4;
  for (std::size_t i = 0; i < opt.instances_per_module; ++i) {
    CounterRng rng(opt.seed, 50000 + i);
    const std::uint64_t key = rng.next_u64();

    {
      Tensor h = random_tensor({n, d}, rng), a = perturbed_adjacency(n, rng);
      auto gcn = GcnParams::init(d, rng);
      const LossBuilder build = [&](Tape& t) {
        return project(gcn_forward(t.parameter(h), t.parameter(a), t.parameter(gcn.weight), gcn.slope), key);
      };
      out.absorb("module/gcn", check_gradients(build, {{"features", &h}, {"adjacency", &a}, {"weight", &gcn.weight}},
                                               opt.check));
    }

    for (RecurrentCell cell : {RecurrentCell::kPlain, RecurrentCell::kGated}) {
      Tensor x = random_tensor({n, d}, rng);
      auto rnn = BiLstmParams::init(d, rng, cell);
      randomize_states(rnn, rng);
      GraphModuleParams holder{GcnParams{Tensor({d, d}), 0.2}, std::move(rnn)};
      ParameterSet all;
      holder.collect(all, "");
      ParameterSet params{{"inputs", &x}};
      for (auto& p : all)
        if (p.name != "gcn_weight") params.push_back(p);
      const LossBuilder build = [&](Tape& t) { return project(bilstm_forward(t, t.parameter(x), holder.rnn), key); };
      out.absorb(cell == RecurrentCell::kPlain ? "module/bilstm" : "module/bilstm_gated",
                 check_gradients(build, params, opt.check));
    }

    {
      Tensor h = random_tensor({n, d}, rng), a = perturbed_adjacency(n, rng);
      std::vector<GraphModuleParams> mods;
      for (int k = 0; k < 2; ++k) {
        mods.push_back(GraphModuleParams::init(d, rng));
        randomize_states(mods.back().rnn, rng);
      }
      ParameterSet params{{"features", &h}, {"adjacency", &a}};
      mods[0].collect(params, "module0.");
      mods[1].collect(params, "module1.");
      const LossBuilder single = [&](Tape& t) {
        return project(graph_module_forward(t, t.parameter(h), t.parameter(a), mods[0]), key);
      };
      ParameterSet first(params.begin(), params.begin() + 2);
      mods[0].collect(first, "module0.");
      out.absorb("module/graph_module", check_gradients(single, first, opt.check));
      const LossBuilder stacked = [&](Tape& t) {
        return project(stacked_forward(t, t.parameter(h), t.parameter(a), mods), key);
      };
      out.absorb("module/stacked", check_gradients(stacked, params, opt.check));
    }

    {
      EncoderConfig cfg;
      cfg.frame_rows = cfg.frame_cols = 4;
      cfg.channels1 = 2;
      cfg.channels2 = 2;
      cfg.feature_dim = d;
      auto enc = ConvEncoderParams::init(cfg, rng);
      for (auto& v : enc.conv1_bias.values()) v = rng.uniform(-0.2, 0.2);
      for (auto& v : enc.conv2_bias.values()) v = rng.uniform(-0.2, 0.2);
      ImageSequence img{1, 4, 4, {}};
      for (int p = 0; p < 16; ++p) img.pixels.push_back(rng.uniform());
      ParameterSet params;
      enc.collect(params, "");
      const LossBuilder build = [&](Tape& t) { return project(encode_sequence(t, img, enc), key); };
      out.absorb("module/encoder", check_gradients(build, params, opt.check));
    }

    {
      Tensor h = random_tensor({n, d}, rng);
      const Tensor a = perturbed_adjacency(n, rng);
      auto cls = ClassifierParams::init(2, d, rng);
      const std::size_t label = rng.below(2);
      ParameterSet params{{"features", &h}};
      cls.collect(params, "classifier.");
      const LossBuilder build = [&](Tape& t) {
        const Var w = intensity_weights(t.constant(a));
        return cross_entropy(classify(t, weighted_fusion(t.parameter(h), w), cls), label);
      };
      out.absorb("module/fusion_head", check_gradients(build, params, opt.check));
    }
  }
}

struct TinySetup {
  Model model;
  ImageSequence images;
  std::size_t label = 0;
  Tensor frozen_adjacency;
};

TinySetup tiny_model(std::uint64_t seed, RecurrentCell cell) {
  ModelConfig cfg;
  cfg.encoder.frame_rows = cfg.encoder.frame_cols = 4;
  cfg.encoder.channels1 = 2;
  cfg.encoder.channels2 = 2;
  cfg.encoder.feature_dim = 4;
  cfg.frames = 3;
  cfg.classes = 2;
  cfg.module_count = 2;
  cfg.weighted_fusion = true;
  cfg.cell = cell;
  TinySetup s{Model::init(cfg, seed), {}, 0, {}};
  CounterRng rng(seed, 0x7469);
  s.model.adjacency = perturbed_adjacency(cfg.frames, rng);
  for (auto& m : s.model.modules) randomize_states(m.rnn, rng);
  for (auto& v : s.model.encoder.conv1_bias.values()) v = rng.uniform(-0.2, 0.2);
  s.images = ImageSequence{cfg.frames, 4, 4, {}};
  for (std::size_t p = 0; p < cfg.frames * 16; ++p) s.images.pixels.push_back(rng.uniform());
  s.label = rng.below(cfg.classes);
  s.frozen_adjacency = s.model.adjacency;
  return s;
}

// Full-model loss. Finite differences (inference tapes) read the fusion
// weights from the frozen adjacency so they match the detached branch.
LossBuilder tiny_loss(TinySetup& s) {
  return [&s](Tape& t) {
    ForwardOptions opts;
    if (t.mode() == Tape::Mode::kInference) opts.fusion_adjacency = &s.frozen_adjacency;
    return cross_entropy(model_forward(t, s.model, s.images, opts).logits, s.label);
  };
}

void run_end_to_end(Collector& out, const SuiteOptions& opt) {
  for (std::size_t i = 0; i < opt.instances_per_module; ++i) {
    for (RecurrentCell cell : {RecurrentCell::kPlain, RecurrentCell::kGated}) {
      auto s = tiny_model(opt.seed * 131 + i, cell);
      out.absorb(cell == RecurrentCell::kPlain ? "end_to_end" : "end_to_end/gated",
                 check_gradients(tiny_loss(s), s.model.parameters(), opt.check));
    }
  }
}

void run_stop_gradient(Collector& out, const SuiteOptions& opt) {
  for (std::size_t i = 0; i < opt.instances_per_module; ++i) {
    CounterRng rng(opt.seed, 90000 + i);
    const std::uint64_t key = rng.next_u64();
    for (FusionAxis axis : {FusionAxis::kColumn, FusionAxis::kRow}) {
      Tensor a = perturbed_adjacency(3, rng);
      const Tensor h = random_tensor({3, 4}, rng);
      zero_grads({{"adjacency", &a}});
      {
        Tape t;
        t.backward(project(weighted_fusion(t.constant(h), intensity_weights(t.parameter(a), axis)), key));
      }
      double max_abs = 0.0;
      for (double g : a.grad()) max_abs = std::max(max_abs, std::abs(g));
      out.add_exact_zero("stop_gradient/fusion_branch", axis == FusionAxis::kColumn ? "adjacency(column)" : "adjacency(row)",
                         max_abs);
    }
    auto s = tiny_model(opt.seed * 977 + i, RecurrentCell::kPlain);
    const auto report = check_gradients(tiny_loss(s), {{"adjacency", &s.model.adjacency}}, opt.check);
    out.absorb("stop_gradient/full_model", report);
  }
}

}  // namespace

SuiteReport run_gradcheck_suite(GradScope scope, const SuiteOptions& options) {
  Collector out(options.check.tolerance);
  SuiteReport report;
  const bool all = scope == GradScope::kAll;
  if (all || scope == GradScope::kOps) run_ops(out, report.uncovered_ops, options);
  if (all || scope == GradScope::kModule) run_modules(out, options);
  if (all || scope == GradScope::kEndToEnd) run_end_to_end(out, options);
  if (all || scope == GradScope::kStopGradient) run_stop_gradient(out, options);
  report.groups = out.take();
  report.passed = report.uncovered_ops.empty();
  for (const auto& g : report.groups) {
    report.max_rel_error = std::max(report.max_rel_error, g.max_rel_error);
    report.passed = report.passed && g.passed;
  }
  return report;
}

std::string format_suite_report(const SuiteReport& report) {
  std::ostringstream os;
  os.setf(std::ios::scientific);
  os.precision(3);
  std::size_t width = 0;
  for (const auto& g : report.groups) width = std::max(width, g.suite.size() + g.group.size() + 1);
  for (const auto& g : report.groups) {
    const std::string label = g.suite + " " + g.group;
    os << (g.passed ? "ok   " : "FAIL ") << label << std::string(width + 2 - label.size(), ' ') << g.max_rel_error
       << "  (" << g.instances << " checks)\n";
  }
  for (const auto& op : report.uncovered_ops) os << "FAIL ops " << op << "  (not exercised)\n";
  os << (report.passed ? "PASS" : "FAIL") << " worst relative error " << report.max_rel_error << "\n";
  return os.str();
}

}  // namespace fergcn
