// Copyright 2026 The coarseqca Authors
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"

using namespace coarseqca;
using cli::json;

namespace {

const std::filesystem::path kSamples = COARSEQCA_SAMPLES_DIR;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err, kSamples);
  return {code, out.str(), err.str()};
}

json run_json(std::vector<std::string> args, int expect = cli::kPass) {
  args.push_back("--no-timing");
  const CliRun r = run(args);
  EXPECT_EQ(r.code, expect) << r.err;
  return json::parse(r.out);
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string l;
  while (std::getline(ss, l)) out.push_back(l);
  return out;
}

}  // namespace

TEST(Cli, SiteSyntaxRoundTrips) {
  for (const json& j : {json(3), json(-7), json("a"), json::parse("[1, 2]"), json::parse("[\"a\", 4]")}) {
    const Site s = cli::parse_site(j);
    EXPECT_EQ(cli::site_json(s), j);
  }
  EXPECT_EQ(cli::parse_site_key("a,3"), cli::parse_site(json::parse("[\"a\", 3]")));
  EXPECT_EQ(cli::parse_site_key("-2"), Site::at(-2));
  EXPECT_THROW(cli::parse_site(json(1.5)), InvalidArgument);
}

TEST(Cli, MatrixSyntax) {
  const Mat m = cli::parse_mat(json::parse("[[0, [0, -1]], [[0, 1], 0]]"));
  EXPECT_EQ(m(0, 1), cd(0, -1));
  EXPECT_EQ(cli::parse_mat(cli::mat_json(m)), m);
  EXPECT_THROW(cli::parse_mat(json::parse("[[1, 2], [3]]")), InvalidArgument);
}

TEST(Cli, IndexOfSamples) {
  EXPECT_EQ(run_json({"index", "--qca", "identity.json"})["result"]["index"], json({{"num", 1}, {"den", 1}}));
  EXPECT_EQ(run_json({"index", "--qca", "shift.json"})["result"]["index"], json({{"num", 2}, {"den", 1}}));
  EXPECT_EQ(run_json({"index", "--qca", "qutrit_shift.json"})["result"]["index"], json({{"num", 1}, {"den", 3}}));
  EXPECT_EQ(run_json({"index", "--qca", "partial_shift.json"})["result"]["index"], json({{"num", 2}, {"den", 1}}));
  EXPECT_EQ(run_json({"index", "--qca", "blockpairs.json", "--window", "0..15"})["result"]["index"], json({{"num", 1}, {"den", 1}}));
}

TEST(Cli, ReportsAreDeterministic) {
  const CliRun a = run({"report", "--qca", "blockpairs.json", "--window", "0..15", "--no-timing"});
  const CliRun b = run({"report", "--qca", "blockpairs.json", "--window", "0..15", "--no-timing"});
  EXPECT_EQ(a.code, cli::kPass) << a.err;
  EXPECT_EQ(a.out, b.out);
  const json j = json::parse(a.out);
  EXPECT_FALSE(j.contains("timing"));
  EXPECT_EQ(j["tolerances"]["alg"], 1e-9);
  EXPECT_EQ(j["version"], cli::kVersion);
  EXPECT_EQ(j["window"]["sites"].size(), 16u);
  // Timing lives under its own key and nowhere else.
  json t = json::parse(run({"report", "--qca", "blockpairs.json", "--window", "0..15"}).out);
  EXPECT_TRUE(t.contains("timing"));
  t.erase("timing");
  EXPECT_EQ(t, j);
}

TEST(Cli, ToleranceFlagsAreEchoedAndReset) {
  const json j = run_json({"validate", "--qca", "shift.json", "--window", "0..7", "--tol-alg", "1e-7", "--seed", "42"});
  EXPECT_EQ(j["tolerances"]["alg"], 1e-7);
  EXPECT_EQ(j["seed"], 42);
  EXPECT_EQ(tolerances().alg, 1e-7);
  run_json({"validate", "--qca", "shift.json", "--window", "0..7"});
  EXPECT_EQ(tolerances().alg, 1e-9);
}

TEST(Cli, DecomposeOutputReassemblesTheQca) {
  const json j = run_json({"decompose", "--qca", "blockpairs.json", "--cert", "cert.json", "--support", "Y.json"});
  const int depth = j["result"]["depth"];
  EXPECT_LE(depth, j["result"]["bound"].get<int>() + 1);
  EXPECT_LE(j["result"]["residual"].get<double>(), 1e-9);

  const json q = cli::load_json("blockpairs.json", kSamples);
  const Automorphism alpha = cli::parse_qca(q);
  Circuit c;
  for (const auto& layer : j["result"]["circuit"]["layers"]) {
    std::vector<Gate> gates;
    for (const auto& g : layer) {
      const LocalOp u = cli::parse_block_op(alpha.net(), g);
      gates.push_back({u.legs.empty() ? SiteSet{} : cli::parse_sites(g.at("sites")), u});
    }
    c.layers.push_back(gates);
  }
  const Automorphism beta = circuit_automorphism(alpha.net(), c);
  int probes = 0;
  EXPECT_LE(probe_distance(alpha, beta, Window::interval(alpha.net().space(), 0, 11), &probes), 1e-8);
  EXPECT_GT(probes, 0);
}

TEST(Cli, SplitFlasqueClassPushforward) {
  const json s = run_json({"split", "--net", "presentation.json"});
  EXPECT_EQ(s["result"]["split"], json({{"a", 4}, {"b", 9}}));

  const json f = run_json({"flasque", "--net", "halfline_net.json", "--map", "map_shift.json", "--window", "0..7"});
  EXPECT_TRUE(f["result"]["swindle"]["verified"].get<bool>());
  EXPECT_EQ(f["result"]["swindle"]["control"]["radius"], 1);

  // The identity is not a flasque witness on the half line.
  run_json({"flasque", "--space", "halfline.json", "--map", "map_identity.json", "--window", "0..7"}, cli::kFail);

  const json c = run_json({"class", "--net", "mixed_net.json"});
  ASSERT_EQ(c["result"]["class"]["components"].size(), 1u);
  EXPECT_EQ(c["result"]["class"]["components"][0]["value"], json({{"num", 30}, {"den", 1}}));
  EXPECT_EQ(c["result"]["class"]["tag"], "local");

  const json p = run_json({"pushforward", "--net", "mixed_net.json", "--map", "map_identity.json"});
  EXPECT_TRUE(p["result"]["total_preserved"].get<bool>());
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"index", "--qca", "does_not_exist.json"}).code, cli::kInputError);
  EXPECT_EQ(run({"index", "--qca", "{\"net\": 1}"}).code, cli::kInputError);
  EXPECT_EQ(run({"index", "--qca", "{not json"}).code, cli::kInputError);
  EXPECT_EQ(run({"index", "--bogus"}).code, cli::kInputError);
  EXPECT_EQ(run({}).code, cli::kInputError);
  EXPECT_EQ(run({"index", "--qca", "shift.json", "--out", "xml"}).code, cli::kInputError);
  EXPECT_EQ(run({"index", "--qca", "shift.json", "--window", "0..3"}).code, cli::kInputError);

  // Declared control smaller than the actual spread.
  const std::string lying =
      R"({"net": {"space": {"kind": "grid"}, "q": 2}, "word": [{"type": "shift"}], "control": {"type": "diagonal"}})";
  const CliRun r = run({"validate", "--qca", lying, "--window", "0..7", "--no-timing"});
  EXPECT_EQ(r.code, cli::kFail);
  EXPECT_FALSE(json::parse(r.out)["result"]["within_declared"].get<bool>());

  // A window that ignores translation invariance is a structural failure, not an input error.
  const std::string local =
      R"({"net": {"space": {"kind": "grid"}, "q": 2}, "word": [{"type": "window", "sites": [3, 4], "unitary": )" +
      cli::mat_json(Mat::Identity(4, 4)).dump() + "}]}";
  EXPECT_NE(run({"index", "--qca", local}).code, cli::kInputError);

  const CliRun help = run({"--help"});
  EXPECT_EQ(help.code, cli::kPass);
  EXPECT_NE(help.out.find("decompose"), std::string::npos);
}

TEST(Cli, CsvAndBatch) {
  const CliRun one = run({"index", "--qca", "qutrit_shift.json", "--out", "csv"});
  const auto l = lines(one.out);
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0], cli::kCsvHeader);
  EXPECT_EQ(l[1].rfind("index,pass,1/3,,", 0), 0u);

  const CliRun b = run({"batch", "--manifest", "manifest.json"});
  EXPECT_EQ(b.code, cli::kPass) << b.err;
  const auto rows = lines(b.out);
  const json m = cli::load_json("manifest.json", kSamples);
  ASSERT_EQ(rows.size(), m["jobs"].size() + 1);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].rfind(m["jobs"][i - 1][0].get<std::string>() + ",pass,", 0), 0u) << rows[i];
    EXPECT_EQ(std::count(rows[i].begin(), rows[i].end(), ','), 4);
  }
}

TEST(Cli, BatchExitIsWorstRow) {
  const auto dir = std::filesystem::temp_directory_path() / "coarseqca_batch_test";
  std::filesystem::create_directories(dir);
  std::filesystem::copy_file(kSamples / "shift.json", dir / "shift.json", std::filesystem::copy_options::overwrite_existing);
  std::ofstream(dir / "m.json") << R"({"jobs": [["index", "--qca", "shift.json"], ["index", "--qca", "missing.json"], ["batch"]]})";
  std::ostringstream out, err;
  const int code = cli::run({"batch", "--manifest", (dir / "m.json").string()}, out, err);
  EXPECT_EQ(code, cli::kInputError);
  const auto rows = lines(out.str());
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1].rfind("index,pass,2,", 0), 0u);
  EXPECT_EQ(rows[2].rfind("index,error,", 0), 0u);
  EXPECT_EQ(rows[3].rfind("batch,error,", 0), 0u);
}

TEST(Cli, EmptyManifestPrintsOnlyTheHeader) {
  const CliRun r = run({"batch", "--manifest", R"({"jobs": []})"});
  EXPECT_EQ(r.code, cli::kPass) << r.err;
  EXPECT_EQ(lines(r.out), std::vector<std::string>{std::string(cli::kCsvHeader)});
}
