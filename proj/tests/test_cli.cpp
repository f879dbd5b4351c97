// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "mgf/checkpoint.hpp"
#include "mgf/cli.hpp"
#include "mgf/config.hpp"
#include "mgf/errors.hpp"
#include "mgf/tensor_io.hpp"
#include "model_fixtures.hpp"

using namespace mgf;
using namespace mgf::testing;
namespace fs = std::filesystem;

namespace {

const char* kToyConfig = R"(# toy run
[run]
task = classification
seed = 4

[model]
input_shape = 2,1,1
num_classes = 2
schedule = toy:4
hidden = 8
kernel = 1
embed_dim = 4

[data]
kind = toy2d
separation = 4
n_per_class = 40
test_per_class = 20

[train]
epochs = 4
batch_size = 10
learning_rate = 0.003
)";

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    unsetenv("MAGICFLOW_SEED");
    dir_ = fs::temp_directory_path() / ("mgf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    unsetenv("MAGICFLOW_SEED");
    fs::remove_all(dir_);
  }

  fs::path write(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "magicflow");
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  std::string read(const fs::path& p) {
    const auto b = io::read_file(p);
    return {b.begin(), b.end()};
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

FlowModel toy_model(std::size_t classes = 2) {
  FlowModel m = build_model(toy_config(CouplingVariant::Classification, 4, classes));
  Rng rng(1);
  randomize_model(m, rng, 0.05);
  return m;
}

}  // namespace

// -------------------------------------------------------------------- config

TEST(Config, DefaultsAndOverrides) {
  const RunConfig d = parse_run_config("");
  EXPECT_EQ(d.model.input_shape, (Shape{1, 16, 16}));
  EXPECT_EQ(d.data.kind, DataKind::Phantom);
  const RunConfig c = parse_run_config(kToyConfig);
  EXPECT_EQ(c.model.task, CouplingVariant::Classification);
  EXPECT_EQ(c.model.schedule, "toy:4");
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.model.seed, 4u);
  EXPECT_EQ(c.data.kind, DataKind::Toy2D);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.003);
}

TEST(Config, TextRoundTrip) {
  const RunConfig c = parse_run_config(kToyConfig);
  const RunConfig back = parse_run_config(run_config_to_text(c));
  EXPECT_EQ(run_config_to_text(back), run_config_to_text(c));
  EXPECT_EQ(back.model, c.model);
}

TEST(Config, UnknownKeysAreRejected) {
  try {
    parse_run_config("[model]\nhiden = 4\n", "x.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.ini:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("hiden"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config("[modle]\nhidden = 4\n"), ConfigError);
  EXPECT_THROW(parse_run_config("hidden = 4\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[model]\nhidden = 4\nhidden = 5\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[model]\nhidden = four\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[model]\ninput_shape = 1,16\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[run]\ntask = segmentation\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[data]\nkind = directory\n"), ConfigError);
  EXPECT_THROW(parse_run_config("[train]\nlearning_rate = 1e-3x\n"), ConfigError);
}

TEST(Config, FlowEchoRoundTripAndMismatch) {
  FlowConfig a = toy_config(CouplingVariant::Generation);
  a.s_max = 1.75;
  EXPECT_EQ(flow_config_from_text(flow_config_to_text(a)), a);
  FlowConfig b = a;
  b.seed = 99;
  EXPECT_EQ(flow_config_mismatch(a, b), "");
  b.input_shape = {2, 2, 2};
  EXPECT_NE(flow_config_mismatch(a, b).find("input_shape"), std::string::npos);
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitwise) {
  for (auto task : {CouplingVariant::Generation, CouplingVariant::Classification}) {
    FlowModel m = build_model(reduced_config(task));
    Rng rng(3);
    randomize_model(m, rng, 0.05);
    m.train_steps = 17;
    const auto bytes = encode_checkpoint(m);
    const FlowModel back = decode_checkpoint(bytes);
    EXPECT_EQ(encode_checkpoint(back), bytes);
    EXPECT_EQ(back.train_steps, 17u);
    EXPECT_EQ(back.config, m.config);
    const auto pa = m.parameters();
    const auto pb = back.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    for (std::size_t s = 0; s < m.steps.size(); ++s) {
      EXPECT_EQ(back.steps[s].invconv.perm, m.steps[s].invconv.perm);
      EXPECT_TRUE(back.steps[s].actnorm.initialized);
    }
  }
}

TEST(Checkpoint, GoldenHeader) {
  const FlowModel m = toy_model();
  const auto bytes = encode_checkpoint(m);
  const std::string echo = flow_config_to_text(m.config);
  ASSERT_GT(bytes.size(), 16 + echo.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MGFC");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  std::uint64_t n = 0;
  for (int i = 7; i >= 0; --i) n = (n << 8) | bytes[8 + static_cast<std::size_t>(i)];
  EXPECT_EQ(n, echo.size());
  EXPECT_EQ(std::string(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(echo.size())), echo);
  EXPECT_EQ(echo.substr(0, 32), "input_shape=2,1,1\nnum_classes=2\n");
}

TEST(Checkpoint, MalformedFilesAreIoErrors) {
  const auto good = encode_checkpoint(toy_model());
  auto truncated = good;
  truncated.resize(good.size() - 5);
  try {
    decode_checkpoint(truncated);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt length"), std::string::npos) << e.what();
  }
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), IoError);
  auto version = good;
  version[4] = 2;
  try {
    decode_checkpoint(version);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), IoError);
}

TEST(Checkpoint, ConfigEchoMustMatch) {
  const auto path = fs::temp_directory_path() / "mgf_echo.mgfc";
  FlowConfig small = full_config();
  small.schedule = "reduced";
  save_checkpoint(build_model(small), path);
  FlowConfig bigger = small;
  bigger.input_shape = {1, 32, 32};
  EXPECT_THROW(load_checkpoint(path, bigger), ContractError);
  EXPECT_NO_THROW(load_checkpoint(path, small));
  fs::remove(path);
}

// ----------------------------------------------------------------------- CLI

TEST_F(CliTest, TrainToyConfig) {
  const auto cfg = write("toy.ini", kToyConfig);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "a").string()}), 0) << err_.str();
  EXPECT_TRUE(fs::exists(dir_ / "a" / "model.mgfc"));
  EXPECT_NE(out_.str().find("epoch=1 nll="), std::string::npos);
  std::ifstream metrics(dir_ / "a" / "metrics.txt");
  std::string first, final_line;
  std::getline(metrics, first);
  std::getline(metrics, final_line);
  const double initial = std::stod(first.substr(first.find('=') + 1));
  const double final_nll = std::stod(final_line.substr(final_line.find('=') + 1));
  EXPECT_LT(final_nll, initial);
  const std::regex line(R"(epoch=\d+ nll=-?\d+\.\d{6})");
  std::ifstream hist(dir_ / "a" / "history.txt");
  std::size_t n = 0;
  for (std::string l; std::getline(hist, l); ++n) EXPECT_TRUE(std::regex_match(l, line)) << l;
  EXPECT_EQ(n, 4u);
}

TEST_F(CliTest, TrainIsByteDeterministic) {
  const auto cfg = write("toy.ini", kToyConfig);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "a").string()}), 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "b").string()}), 0);
  for (const char* f : {"model.mgfc", "history.txt", "metrics.txt"})
    EXPECT_EQ(read(dir_ / "a" / f), read(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, SeedPrecedence) {
  const auto cfg = write("toy.ini", kToyConfig);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "cfg").string()}), 0);
  setenv("MAGICFLOW_SEED", "11", 1);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "env").string()}), 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "flag").string(), "--seed", "11"}), 0);
  unsetenv("MAGICFLOW_SEED");
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "flag2").string(), "--seed", "11"}), 0);
  EXPECT_NE(read(dir_ / "cfg" / "model.mgfc"), read(dir_ / "env" / "model.mgfc"));
  EXPECT_EQ(read(dir_ / "env" / "model.mgfc"), read(dir_ / "flag" / "model.mgfc"));
  EXPECT_EQ(read(dir_ / "flag" / "model.mgfc"), read(dir_ / "flag2" / "model.mgfc"));
  EXPECT_EQ(load_checkpoint(dir_ / "env" / "model.mgfc").config.seed, 11u);
  setenv("MAGICFLOW_SEED", "abc", 1);
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--output", (dir_ / "bad").string()}), 2);
}

TEST_F(CliTest, SampleIsDeterministicAndWritesPgm) {
  save_checkpoint(toy_model(), dir_ / "m.mgfc");
  const std::string ck = (dir_ / "m.mgfc").string();
  ASSERT_EQ(run({"sample", "--checkpoint", ck, "--seed", "7", "--n", "3", "--output", (dir_ / "s1").string()}), 0)
      << err_.str();
  ASSERT_EQ(run({"sample", "--checkpoint", ck, "--seed", "7", "--n", "3", "--output", (dir_ / "s2").string()}), 0);
  ASSERT_EQ(run({"sample", "--checkpoint", ck, "--seed", "8", "--n", "3", "--output", (dir_ / "s3").string()}), 0);
  for (std::size_t y = 0; y < 2; ++y)
    for (int i = 0; i < 3; ++i) {
      const std::string f = "sample_y" + std::to_string(y) + "_00" + std::to_string(i) + ".pgm";
      EXPECT_EQ(read(dir_ / "s1" / f), read(dir_ / "s2" / f)) << f;
    }
  EXPECT_NE(read(dir_ / "s1" / "sample_y0_000.pgm"), read(dir_ / "s3" / "sample_y0_000.pgm"));

  // Golden PGM: header plus round-to-nearest pixels of the .ten sample.
  const Tensor x = io::read_ten(dir_ / "s1" / "sample_y1_002.ten");
  const std::string pgm = read(dir_ / "s1" / "sample_y1_002.pgm");
  ASSERT_EQ(pgm.size(), 11u + 2u);
  EXPECT_EQ(pgm.substr(0, 11), "P5\n1 2\n255\n");
  for (std::size_t i = 0; i < 2; ++i) {
    const double v = std::floor(std::clamp(x[i], 0.0, 1.0) * 255.0 + 0.5);
    EXPECT_EQ(static_cast<unsigned char>(pgm[11 + i]), static_cast<unsigned char>(v));
  }
  const Dataset all = load_dataset(dir_ / "s1");
  EXPECT_EQ(all.size(), 6u);
  EXPECT_EQ(all.labels, (std::vector<std::size_t>{0, 0, 0, 1, 1, 1}));

  EXPECT_EQ(run({"sample", "--checkpoint", ck, "--label", "2", "--output", (dir_ / "s4").string()}), 3);
  EXPECT_EQ(run({"sample", "--checkpoint", ck, "--temperature", "0", "--output", (dir_ / "s5").string()}), 3);
}

TEST_F(CliTest, ClassifyCsvFormat) {
  const FlowModel m = toy_model(3);
  save_checkpoint(m, dir_ / "m.mgfc");
  Tensor stack({2, 2, 1, 1}, std::vector<double>{0.3, -1.0, 2.0, 0.5});
  io::write_ten(dir_ / "pts.ten", stack);
  ASSERT_EQ(run({"classify", "--checkpoint", (dir_ / "m.mgfc").string(), "--input", (dir_ / "pts.ten").string(),
                 "--output", (dir_ / "out.csv").string()}),
            0)
      << err_.str();
  std::ifstream csv(dir_ / "out.csv");
  std::string line;
  for (std::size_t i = 0; i < 2; ++i) {
    ASSERT_TRUE(std::getline(csv, line));
    const Classification c = classify(m, stack.slice0(i));
    std::string expect = (dir_ / "pts.ten").string() + "#" + std::to_string(i) + "," + std::to_string(c.label);
    for (double s : c.scores) expect += "," + io::format_double(s);
    EXPECT_EQ(line, expect);
  }
  EXPECT_FALSE(std::getline(csv, line));
}

TEST_F(CliTest, ClassifySingleClassIsAlwaysZero) {
  save_checkpoint(toy_model(1), dir_ / "m.mgfc");
  Rng rng(5);
  Tensor stack({10, 2, 1, 1});
  for (auto& v : stack.values()) v = 3.0 * rng.normal();
  io::write_ten(dir_ / "pts.ten", stack);
  ASSERT_EQ(run({"classify", "--checkpoint", (dir_ / "m.mgfc").string(), "--input", (dir_ / "pts.ten").string(),
                 "--output", (dir_ / "out.csv").string()}),
            0);
  std::ifstream csv(dir_ / "out.csv");
  std::size_t n = 0;
  for (std::string line; std::getline(csv, line); ++n) {
    const auto first = line.find(',');
    const auto second = line.find(',', first + 1);
    EXPECT_EQ(line.substr(first + 1, second - first - 1), "0");
    EXPECT_EQ(line.find(',', second + 1), std::string::npos);  // exactly one score
  }
  EXPECT_EQ(n, 10u);
}

TEST_F(CliTest, ErrorExitCodes) {
  save_checkpoint(toy_model(), dir_ / "m.mgfc");
  const std::string ck = (dir_ / "m.mgfc").string();
  // Config parse error.
  const auto bad = write("bad.ini", "[model]\nhiden = 3\n");
  EXPECT_EQ(run({"train", "--config", bad.string()}), 2);
  EXPECT_EQ(run({"train"}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  // Shape mismatch.
  io::write_ten(dir_ / "wide.ten", Tensor({3, 1, 1}));
  EXPECT_EQ(run({"classify", "--checkpoint", ck, "--input", (dir_ / "wide.ten").string(), "--output",
                 (dir_ / "o.csv").string()}),
            3);
  // Config echo mismatch.
  auto cfg_text = std::string(kToyConfig);
  const auto other = write("other.ini", cfg_text.replace(cfg_text.find("hidden = 8"), 10, "hidden = 9"));
  EXPECT_EQ(run({"sample", "--checkpoint", ck, "--config", other.string(), "--output", (dir_ / "s").string()}), 3);
  // Truncated checkpoint.
  auto bytes = io::read_file(ck);
  bytes.resize(bytes.size() / 2);
  io::write_atomic(dir_ / "cut.mgfc", bytes);
  EXPECT_EQ(run({"sample", "--checkpoint", (dir_ / "cut.mgfc").string(), "--output", (dir_ / "s").string()}), 5);
  EXPECT_NE(err_.str().find("corrupt length"), std::string::npos) << err_.str();
  EXPECT_EQ(run({"train", "--config", (dir_ / "missing.ini").string()}), 5);
}

TEST_F(CliTest, AttributeWritesMaps) {
  const FlowModel m = toy_model();
  save_checkpoint(m, dir_ / "m.mgfc");
  const Tensor x({2, 1, 1}, std::vector<double>{0.4, -0.9});
  io::write_ten(dir_ / "pt.ten", x);
  ASSERT_EQ(run({"attribute", "--checkpoint", (dir_ / "m.mgfc").string(), "--input", (dir_ / "pt.ten").string(),
                 "--label", "1", "--output", (dir_ / "maps").string()}),
            0)
      << err_.str();
  for (const char* ext : {".ten", ".pgm", ".scale.txt"}) EXPECT_TRUE(fs::exists(dir_ / "maps" / (std::string("pt_y1") + ext)));
  const Tensor map = io::read_ten(dir_ / "maps" / "pt_y1.ten");
  EXPECT_NEAR(map[0] + map[1], log_likelihood(m, x, 1), 1e-6);
}

TEST_F(CliTest, GenerateDataAndEvaluate) {
  const auto cfg = write("ph.ini", R"([run]
seed = 2
[model]
input_shape = 1,16,16
num_classes = 3
[data]
kind = phantom
n_per_class = 8
test_per_class = 6
)");
  ASSERT_EQ(run({"generate-data", "--config", cfg.string(), "--output", (dir_ / "train").string()}), 0) << err_.str();
  ASSERT_EQ(run({"generate-data", "--config", cfg.string(), "--split", "test", "--output", (dir_ / "test").string()}), 0);
  EXPECT_EQ(load_dataset(dir_ / "train").size(), 24u);
  EXPECT_EQ(load_dataset(dir_ / "test").split, "test");
  const std::vector<std::string> eval{"evaluate", "--real", (dir_ / "train").string(), "--fake",
                                      (dir_ / "test").string(), "--embedding", "pca:4", "--bootstrap", "50",
                                      "--pairs", "20", "--output", (dir_ / "report").string()};
  ASSERT_EQ(run(eval), 0) << err_.str();
  const std::string text = read(dir_ / "report.txt");
  EXPECT_EQ(text, out_.str());
  const std::regex fid(R"(fid=\S+ ci95=\S+,\S+)");
  std::istringstream lines(text);
  std::string first;
  std::getline(lines, first);
  EXPECT_TRUE(std::regex_match(first, fid)) << first;
  for (const char* key : {"\nkid=", "\nprecision=", "\nrecall=", "\ndensity=", "\ncoverage=", "\nmsssim_intra=",
                          "\nmsssim_inter="})
    EXPECT_NE(text.find(key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(dir_ / "report.json"));
  ASSERT_EQ(run(eval), 0);
  EXPECT_EQ(read(dir_ / "report.txt"), text);
}
