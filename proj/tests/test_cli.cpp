#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "amlhp/capture.hpp"
#include "amlhp/dataset.hpp"
#include "amlhp/model.hpp"
#include "amlhp/run_config.hpp"
#include "amlhp/train.hpp"
#include "cli.hpp"
#include "support/frames.hpp"
#include "support/tempdir.hpp"

using namespace amlhp;
namespace tu = amlhp::testing;
using tu::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// One small trained model shared by the tests below.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    const auto d = dir_->path().string();
    ASSERT_EQ(run({"synth", "--per-class", "30", "--seed", "3", "--pcap", "-o", d + "/syn"}).code, 0);
    ASSERT_EQ(run({"split", d + "/syn/data.rec", "--seed", "3", "-o", d + "/split"}).code, 0);
    const auto r = run({"train", "--train", d + "/split/train.rec", "--val", d + "/split/val.rec", "-o", d + "/tr",
                        "--set", "train.epochs=2", "train.batch_size=32"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }

  static TempDir* dir_;
};

TempDir* Pipeline::dir_ = nullptr;

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"eval"}).code, 1);
  EXPECT_EQ(run({"count", "--bogus"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, CorruptCaptureExitsTwoAndNamesTheFile) {
  TempDir tmp;
  tu::spit(tmp / "bad.pcap", "definitely not a pcap");
  tu::spit(tmp / "rules.ini", "[labels]\nclasses = a\nstrict = false\ndefault = a\n");
  const auto r = run({"prepare", (tmp / "bad.pcap").string(), "-r", (tmp / "rules.ini").string(), "-o",
                      (tmp / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.pcap"), std::string::npos) << r.err;
}

TEST(Cli, PrepareWritesRecordsManifestAndConfigEcho) {
  TempDir tmp;
  {
    pkt::PcapWriter w(tmp / "cap.pcap", pkt::LinkType::Ethernet);
    tu::Ipv4Fields f;
    for (int i = 0; i < 6; ++i) {
      f.src = {10, 0, 0, static_cast<std::uint8_t>(i % 2 ? 9 : 1)};
      w.write(tu::ethernet(0x0800, tu::ipv4(f, tu::udp(1, 53, {1, 2}))), {i, 0});
    }
  }
  tu::spit(tmp / "rules.ini",
                "[labels]\nclasses = benign, bad\n[rule.1]\nsrc = 10.0.0.9\nclass = bad\n[rule.2]\nclass = benign\n");
  const auto r = run({"prepare", (tmp / "cap.pcap").string(), "-r", (tmp / "rules.ini").string(), "-o",
                      (tmp / "out").string(), "--payload-len", "32"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = data::DatasetManifest::load(tmp / "out" / "data.manifest.ini");
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"benign", "bad"}));
  EXPECT_EQ(m.counts, (std::vector<std::uint64_t>{3, 3}));
  EXPECT_EQ(m.payload_len, 32u);
  EXPECT_EQ(RunConfig::load(tmp / "out" / "run_config.ini").data.payload_len, 32u);
}

TEST(Cli, CountReportsBudget) {
  const auto r = run({"count", "--json"});
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_LE(j.at("params").get<std::size_t>(), 40000u);
  EXPECT_GE(j.at("flops").get<std::uint64_t>(), 4000000u);
}

TEST(Cli, BadOverrideIsAnInputError) {
  EXPECT_EQ(run({"count", "--set", "model.heads=3"}).code, 2);
}

TEST_F(Pipeline, TrainEchoesItsConfigAndHistory) {
  const auto rc = RunConfig::load(path("tr/run_config.ini"));
  EXPECT_EQ(rc.train.epochs, 2u);
  EXPECT_EQ(rc.model.num_classes, 5u);
  EXPECT_EQ(read_csv(path("tr/history.csv")).size(), 3u);
}

TEST_F(Pipeline, EvalWritesReportsThatRecomputeFromTheConfusion) {
  const auto r = run({"eval", path("split/test.rec"), "-w", path("tr/model.amlhpw"), "-o", path("ev")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(path("ev/report.json"));
  const auto j = nlohmann::json::parse(in);
  std::size_t k = 0;
  const auto counts = train::parse_confusion_csv(tu::slurp(path("ev/confusion.csv")), &k);
  const auto rep = train::report_from_confusion(k, counts);
  EXPECT_EQ(j.at("acc").get<double>(), rep.acc);
  EXPECT_EQ(j.at("macro_f1").get<double>(), rep.macro_f1);
  EXPECT_EQ(j.at("macro_pr").get<double>(), rep.macro_pr);
  EXPECT_EQ(j.at("macro_rc").get<double>(), rep.macro_rc);
}

TEST_F(Pipeline, ClassifyOnCaptureMatchesEval) {
  // Classify every synthesized frame and compare against eval on the same
  // packets (the unsplit record file holds them in the same order).
  const auto c = run({"classify", path("syn/data.pcap"), "-w", path("tr/model.amlhpw"), "-o", path("cl")});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto rows = read_csv(path("cl/predictions.csv"));
  const auto ds = data::load_dataset(path("syn/data.rec"));
  ASSERT_EQ(rows.size(), ds.size() + 1);
  EXPECT_EQ(rows[0][0], "index");
  EXPECT_EQ(rows[0][1], "ts");
  EXPECT_EQ(rows[0][2], "pred");
  std::size_t correct = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 3u + 5u);
    double s = 0;
    for (std::size_t j = 3; j < rows[i].size(); ++j) s += std::stod(rows[i][j]);
    EXPECT_NEAR(s, 1.0, 1e-6);
    correct += std::stoul(rows[i][2]) == ds.labels[i - 1];
  }
  const auto model = load_weights(path("tr/model.amlhpw"));
  const auto rep = train::evaluate(model, ds);
  EXPECT_EQ(static_cast<double>(correct) / static_cast<double>(ds.size()), rep.acc);

  const auto e = run({"eval", path("syn/data.rec"), "-w", path("tr/model.amlhpw"), "-o", path("ev_all")});
  ASSERT_EQ(e.code, 0);
  std::ifstream in(path("ev_all/report.json"));
  EXPECT_EQ(nlohmann::json::parse(in).at("acc").get<double>(), rep.acc);
}

TEST_F(Pipeline, ClassifyRecordsToStdout) {
  const auto c = run({"classify", path("split/val.rec"), "-w", path("tr/model.amlhpw"), "--stdout"});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto n = std::count(c.out.begin(), c.out.end(), '\n');
  EXPECT_EQ(static_cast<std::size_t>(n), data::read_record_header(path("split/val.rec")).count + 1);
}

TEST_F(Pipeline, EmptyCaptureGivesHeaderOnly) {
  TempDir tmp;
  { pkt::PcapWriter w(tmp / "empty.pcap", pkt::LinkType::Ethernet); }
  const auto c = run({"classify", (tmp / "empty.pcap").string(), "-w", path("tr/model.amlhpw"), "-o",
                      (tmp / "o").string()});
  EXPECT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(read_csv(tmp / "o" / "predictions.csv").size(), 1u);
}

TEST_F(Pipeline, MismatchedWeightsExitThree) {
  TempDir tmp;
  tu::spit(tmp / "two.ini",
                "[synth]\nper_class_count = 5\nnoise = 0\npayload_len = 64\n"
                "[class.0]\nname = a\ndst_port = 80\n[class.1]\nname = b\ndst_port = 81\n");
  ASSERT_EQ(run({"synth", "-s", (tmp / "two.ini").string(), "-o", (tmp / "s").string()}).code, 0);
  const auto r = run({"eval", (tmp / "s" / "data.rec").string(), "-w", path("tr/model.amlhpw")});
  EXPECT_EQ(r.code, 3) << r.err;
  const auto c = run({"classify", (tmp / "s" / "data.rec").string(), "-w", path("tr/model.amlhpw"), "--stdout"});
  EXPECT_EQ(c.code, 3) << c.err;
}

TEST_F(Pipeline, DivergingTrainingExitsFour) {
  // Adam steps are bounded by lr, so only a rate near the float limit drives
  // the weights to overflow and the loss to NaN.
  const auto r = run({"train", "--train", path("split/train.rec"), "-o", path("div"), "--set", "train.epochs=3",
                      "train.lr=3e38", "train.warmup_steps=0"});
  EXPECT_EQ(r.code, 4) << r.out << r.err;
}
