#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "fergcn/container.hpp"
#include "fergcn/errors.hpp"
#include "fergcn/export.hpp"
#include "fergcn/gradcheck_suite.hpp"
#include "fergcn/trainer.hpp"

using namespace fergcn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

// Inline flags shared by train and ablate; each maps onto a RunConfig key.
struct RunFlags {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "key=value config file");
    cmd.add_option("--set", sets, "extra key=value setting (repeatable)");
    static const std::pair<const char*, const char*> kFlags[] = {
        {"--data", "dataset"},         {"--out", "output_dir"},         {"--epochs", "epochs"},
        {"--lr", "learning_rate"},     {"--wd", "weight_decay"},        {"--batch-size", "batch_size"},
        {"--seed", "seed"},            {"--modules", "module_count"},   {"--fusion", "use_weighted_fusion"},
        {"--fusion-axis", "fusion_mean_axis"}, {"--cell", "cell"},     {"--frames", "N"},
        {"--feature-dim", "d"},        {"--classes", "K"},
    };
    for (const auto& [flag, key] : kFlags) {
      cmd.add_option_function<std::string>(flag, [this, key = std::string(key)](const std::string& v) { values[key] = v; },
                                           key);
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config.empty()) cfg = load_run_config(config, cfg);
    for (const auto& [k, v] : values) cfg.set(k, v);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

Dataset load_dataset_for(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw ConfigError("no dataset given (--data or dataset=...)");
  return read_dataset(cfg.dataset);
}

void print_epoch(const MetricsRecord& r) {
  std::printf("epoch %3zu  loss %.4f  train %.3f  val %.3f  a_offdiag %.5f\n", r.epoch, r.train_loss,
              r.train_accuracy, r.val_accuracy, r.a_offdiag);
  std::fflush(stdout);
}

std::vector<std::size_t> split_indices(const Dataset& ds, const std::string& which) {
  if (which == "val") return ds.split.val;
  if (which == "train") return ds.split.train;
  if (which == "all") return {};
  throw ConfigError("--split must be val, train or all");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based spatial-temporal sequence classifier: data synthesis, training and diagnostics"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "synthesise a dataset");
  SyntheticSpec spec;
  std::size_t per_class = 50, size = spec.rows;
  std::string curve = curve_family_name(spec.curve), gen_out;
  gen->add_option("--classes", spec.classes, "number of classes")->capture_default_str();
  gen->add_option("--per-class", per_class, "samples per class")->capture_default_str();
  gen->add_option("--frames", spec.frames, "frames per sequence")->capture_default_str();
  gen->add_option("--size", size, "frame side length in pixels")->capture_default_str();
  gen->add_option("--curve", curve, "intensity curve family")->check(CLI::IsMember({"ramp", "bump"}))->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma, "pixel noise sigma")->capture_default_str();
  gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output file")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model; writes metrics.csv and checkpoint.fgck");
  RunFlags train_flags;
  train_flags.attach(*train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "accuracy and confusion matrix of a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "val";
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--split", eval_split, "val, train or all")->capture_default_str();

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and compare model variants");
  RunFlags ablate_flags;
  ablate_flags.attach(*ablate);
  std::string variants = "table";
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--variants", variants, "'table' or a list such as 0,1,2,3,2f")->capture_default_str();
  ablate->add_option("--seeds", seeds, "repeat over these seeds and report means")->delimiter(',');

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  std::string scope = "all";
  gradcheck->add_option("--scope", scope)
      ->check(CLI::IsMember({"ops", "module", "end_to_end", "stop_gradient", "all"}))
      ->capture_default_str();

  // export
  auto* exp = app.add_subcommand("export", "weight curve CSV or per-frame heatmaps");
  std::string exp_ckpt, exp_data, exp_kind = "weights", exp_out = ".";
  std::size_t exp_sample = 0;
  bool exp_sample_set = false;
  exp->add_option("--checkpoint", exp_ckpt)->required();
  exp->add_option("--data", exp_data)->required();
  exp->add_option("--kind", exp_kind)->check(CLI::IsMember({"weights", "heatmaps"}))->capture_default_str();
  exp->add_option("--out", exp_out, "output directory")->capture_default_str();
  exp->add_option_function<std::size_t>(
      "--sample", [&](std::size_t v) { exp_sample = v, exp_sample_set = true; },
      "dataset index for heatmaps (default: first validation sample)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      spec.rows = spec.cols = size;
      spec.curve = parse_curve_family(curve);
      const Dataset ds = make_dataset(spec, per_class);
      write_dataset(ds, gen_out);
      std::printf("wrote %zu sequences (%zu train / %zu val) to %s\n", ds.samples.size(), ds.split.train.size(),
                  ds.split.val.size(), gen_out.c_str());
    } else if (*train_cmd) {
      const RunConfig cfg = train_flags.resolve();
      if (cfg.output_dir.empty()) throw ConfigError("no output directory given (--out or output_dir=...)");
      const Dataset ds = load_dataset_for(cfg);
      const auto result = train(cfg, ds, print_epoch);
      write_run_outputs(cfg, result);
      std::printf("wrote %s and %s\n", (cfg.output_dir / "metrics.csv").c_str(),
                  (cfg.output_dir / "checkpoint.fgck").c_str());
    } else if (*eval_cmd) {
      Model model = load_checkpoint(eval_ckpt);
      const Dataset ds = read_dataset(eval_data);
      const auto ev = evaluate(model, ds, split_indices(ds, eval_split));
      std::printf("accuracy %.4f  mean loss %.4f\n", ev.accuracy, ev.mean_loss);
      std::printf("confusion (%% of true class; rows true, columns predicted)\n");
      for (const auto& row : ev.confusion_percent()) {
        for (double v : row) std::printf(" %6.1f", v);
        std::printf("\n");
      }
    } else if (*ablate) {
      const RunConfig base = ablate_flags.resolve();
      const Dataset ds = load_dataset_for(base);
      const auto vs = parse_variants(variants);
      if (seeds.empty()) seeds.push_back(base.seed);
      std::vector<AblationRow> mean(vs.size());
      for (std::size_t i = 0; i < vs.size(); ++i) mean[i].variant = vs[i];
      for (auto seed : seeds) {
        RunConfig cfg = base;
        cfg.seed = seed;
        const auto rows = run_ablation(cfg, ds, vs);
        if (seeds.size() > 1) std::cout << "seed " << seed << "\n" << format_ablation_table(rows) << "\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
          mean[i].val_accuracy += rows[i].val_accuracy / static_cast<double>(seeds.size());
          mean[i].oversmoothing += rows[i].oversmoothing / static_cast<double>(seeds.size());
        }
      }
      if (seeds.size() > 1) std::cout << "mean over " << seeds.size() << " seeds\n";
      std::cout << format_ablation_table(mean);
    } else if (*gradcheck) {
      const auto report = run_gradcheck_suite(parse_grad_scope(scope));
      std::cout << format_suite_report(report);
      return report.passed ? kOk : kNumerical;
    } else if (*exp) {
      Model model = load_checkpoint(exp_ckpt);
      const Dataset ds = read_dataset(exp_data);
      if (exp_kind == "weights") {
        std::filesystem::create_directories(exp_out);
        const auto path = std::filesystem::path(exp_out) / "weights.csv";
        const std::string text = weights_csv(current_weight_curve(model));
        write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
        std::printf("wrote %s\n", path.c_str());
      } else {
        std::size_t index = exp_sample;
        if (!exp_sample_set) {
          if (ds.split.val.empty()) throw ConfigError("dataset has no validation samples; pass --sample");
          index = ds.split.val.front();
        }
        if (index >= ds.samples.size()) throw IndexError("sample index out of range");
        const auto paths = write_heatmaps(feature_heatmaps(model, ds.samples[index].images), exp_out);
        std::printf("wrote %zu heatmaps for sample %zu to %s\n", paths.size(), index, exp_out.c_str());
      }
    }
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kOk;
}
