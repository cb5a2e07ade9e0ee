#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef FERGCN_CLI
#error "FERGCN_CLI must name the fergcn executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "fergcn_cli_test.log";
  const std::string cmd = std::string("\"") + FERGCN_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream text;
  text << in.rdbuf();
  r.out = text.str();
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir() { return fs::temp_directory_path() / "fergcn_cli"; }
  static std::string data() { return (dir() / "tiny.fgds").string(); }
  static std::string small_flags(const std::string& dataset = data(), const std::string& lr = "0.02",
                                 const std::string& modules = "1", const std::string& classes = "3") {
    return "--data " + dataset + " --frames 4 --classes " + classes +
           " --feature-dim 8 --set channels1=2 --set channels2=4 --batch-size 4 --modules " + modules + " --lr " + lr;
  }
  static void SetUpTestSuite() {
    fs::remove_all(dir());
    fs::create_directories(dir());
    run("gen --classes 3 --per-class 5 --frames 4 --size 8 --seed 3 --out " + data());
  }
  static void TearDownTestSuite() { fs::remove_all(dir()); }
};

}  // namespace

TEST_F(Cli, HelpAndUsage) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("gen --classes 3").code, 1);
}

TEST_F(Cli, GenWritesReadableDataset) {
  ASSERT_TRUE(fs::exists(data()));
  const auto bump = (dir() / "bump.fgds").string();
  EXPECT_EQ(run("gen --classes 2 --per-class 2 --frames 3 --size 8 --curve bump --noise 0 --out " + bump).code, 0);
  EXPECT_EQ(run("gen --classes 2 --curve zigzag --out " + bump).code, 1);
  EXPECT_EQ(run("gen --classes 40 --out " + bump).code, 1);
}

TEST_F(Cli, TrainEvalExportCycle) {
  const auto out = (dir() / "run").string();
  const auto r = run("train " + small_flags() + " --epochs 1 --out " + out);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(fs::path(out) / "metrics.csv"));
  const auto ckpt = (fs::path(out) / "checkpoint.fgck").string();
  ASSERT_TRUE(fs::exists(ckpt));

  const auto ev = run("eval --checkpoint " + ckpt + " --data " + data());
  EXPECT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("accuracy"), std::string::npos) << ev.out;

  const auto wdir = (dir() / "weights").string();
  EXPECT_EQ(run("export --checkpoint " + ckpt + " --data " + data() + " --kind weights --out " + wdir).code, 0);
  const auto hdir = (dir() / "heat").string();
  EXPECT_EQ(run("export --checkpoint " + ckpt + " --data " + data() + " --kind heatmaps --out " + hdir).code, 0);
  EXPECT_TRUE(fs::exists(fs::path(hdir) / "before_01.pgm"));
  EXPECT_TRUE(fs::exists(fs::path(hdir) / "after_04.pgm"));
  EXPECT_EQ(run("export --checkpoint " + ckpt + " --data " + data() + " --kind movie --out " + hdir).code, 1);
}

TEST_F(Cli, ConfigFileAndOverrides) {
  const auto cfg = dir() / "run.cfg";
  std::ofstream(cfg) << "# tiny\nepochs=0\nmodule_count=0\n";
  const auto out = (dir() / "cfgrun").string();
  const auto r = run("train --config " + cfg.string() + " " + small_flags(data(), "0.02", "0") + " --out " + out);
  EXPECT_EQ(r.code, 0) << r.out;
  std::ifstream in(fs::path(out) / "metrics.csv");
  std::string header, row, extra;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,train_loss,train_acc,val_acc,a_offdiag,w_1,w_2,w_3,w_4");
  EXPECT_FALSE(std::getline(in, extra));
  std::ofstream(cfg) << "learning_rate=abc\n";
  EXPECT_EQ(run("train --config " + cfg.string() + " --data " + data() + " --out " + out).code, 1);
  EXPECT_EQ(run("train " + small_flags() + " --set nonsense=1 --out " + out).code, 1);
}

TEST_F(Cli, ExitCodes) {
  const auto out = (dir() / "x").string();
  EXPECT_EQ(run("train --data " + (dir() / "missing.fgds").string() + " --out " + out).code, 3);
  const auto garbage = dir() / "garbage.fgds";
  std::ofstream(garbage) << "not a dataset";
  EXPECT_EQ(run("train " + small_flags(garbage.string()) + " --out " + out).code, 3);
  EXPECT_EQ(run("train " + small_flags(data(), "0.02", "1", "4") + " --out " + out).code, 1);
  EXPECT_EQ(run("train " + small_flags(data(), "1e300") + " --epochs 1 --out " + out).code, 2);
  EXPECT_EQ(run("gradcheck --scope everything").code, 1);
}

TEST_F(Cli, GradcheckStopGradientScope) {
  const auto r = run("gradcheck --scope stop_gradient");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos) << r.out;
}

TEST_F(Cli, AblateOverSeeds) {
  const auto r = run("ablate " + small_flags() + " --epochs 1 --variants 0,1 --seeds 1,2");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mean pooling"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("graph module x1"), std::string::npos) << r.out;
}
