#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "kedit/model_io.hpp"
#include "test_util.hpp"

using kedit::testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string text;
};

CmdResult kedit_run(const std::string& args) {
    const std::string cmd = std::string(KEDIT_BIN) + " " + args + " 2>&1";
    CmdResult r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.text.append(buf.data(), n);
    const int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    return json::parse(f);
}

std::vector<std::string> csv_lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<double> csv_row(const std::string& line) {
    std::vector<double> out;
    std::istringstream in(line);
    for (std::string cell; std::getline(in, cell, ',');) out.push_back(std::stod(cell));
    return out;
}

}  // namespace

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli");
        model_ = (dir_->path() / "model").string();
        plant_ = kedit_run("plant --seed 3 --out " + model_);
    }
    static void TearDownTestSuite() { delete dir_; }

    static fs::path tmp(const std::string& name) { return dir_->path() / name; }

    static TempDir* dir_;
    static std::string model_;
    static CmdResult plant_;
};

TempDir* Cli::dir_ = nullptr;
std::string Cli::model_;
CmdResult Cli::plant_;

TEST_F(Cli, PlantWritesWeightsDatasetAndManifest) {
    ASSERT_EQ(plant_.code, 0) << plant_.text;
    EXPECT_NE(plant_.text.find("planted 50 facts: recall="), std::string::npos);
    EXPECT_TRUE(fs::exists(fs::path(model_) / "manifest.json"));
    EXPECT_TRUE(fs::exists(fs::path(model_) / "dataset.jsonl"));
    EXPECT_TRUE(fs::exists(fs::path(model_) / "dataset.grammar.json"));
    const auto man = read_json(fs::path(model_) / "run_manifest.json");
    EXPECT_EQ(man.at("command"), "plant");
    EXPECT_EQ(man.at("seed"), 3);
    for (const char* k : {"artifact_version", "config", "inputs", "outputs", "wall_clock_seconds"})
        EXPECT_TRUE(man.contains(k)) << k;
}

TEST_F(Cli, SameSeedSameDataset) {
    const auto again = tmp("again");
    ASSERT_EQ(kedit_run("plant --seed 3 --out " + again.string()).code, 0);
    EXPECT_EQ(slurp(again / "dataset.jsonl"), slurp(fs::path(model_) / "dataset.jsonl"));
    EXPECT_EQ(kedit::model_hash(kedit::load_model<double>(again)),
              kedit::model_hash(kedit::load_model<double>(model_)));
}

TEST_F(Cli, UsageAndRuntimeErrors) {
    EXPECT_EQ(kedit_run("frobnicate").code, 2);
    EXPECT_EQ(kedit_run("eval --out " + tmp("x").string()).code, 2);  // --model is required
    EXPECT_EQ(kedit_run("--help").code, 0);
    const auto r = kedit_run("plant --out /proc/kedit_cannot_write");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.text.find("/proc/kedit_cannot_write"), std::string::npos) << r.text;
    const auto m = kedit_run("edit --model " + model_ + " --dataset " + tmp("none.jsonl").string() + " --out " +
                             tmp("e0").string());
    EXPECT_EQ(m.code, 1);
    EXPECT_NE(m.text.find("none.jsonl"), std::string::npos) << m.text;
}

TEST_F(Cli, ProbeWritesCsvAndContrast) {
    const auto out = tmp("probe");
    const auto r = kedit_run("probe --model " + model_ + " --sets original_answer,full_vocab --contrast " +
                             "original_answer,target_answer --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.text;
    EXPECT_NE(r.text.find("enrichment_span="), std::string::npos);
    const auto lines = csv_lines(out / "probe.csv");
    ASSERT_GT(lines.size(), 1u);
    EXPECT_EQ(lines[0], "layer,position,pos_index,set,mean_prob,mean_rank,n");
    int full = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::istringstream in(lines[i]);
        std::vector<std::string> cells;
        for (std::string cell; std::getline(in, cell, ',');) cells.push_back(cell);
        ASSERT_EQ(cells.size(), 7u) << lines[i];
        if (cells[3] != "full_vocab") continue;
        ++full;
        EXPECT_NEAR(std::stod(cells[4]), 1.0, 1e-9) << lines[i];
    }
    EXPECT_EQ(full, 2 * 9);
    const auto c = read_json(out / "contrast.json");
    EXPECT_TRUE(c.contains("enrichment_span"));
}

TEST_F(Cli, EditTouchesOnlyMlpOutputs) {
    const auto out = tmp("edit");
    const std::string before = slurp(fs::path(model_) / "dataset.jsonl");
    const auto r = kedit_run("edit --model " + model_ + " --n-requests 2 --steps 10 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.text;
    EXPECT_EQ(slurp(fs::path(model_) / "dataset.jsonl"), before);
    auto a = kedit::load_model<double>(model_);
    std::vector<std::string> diff;
    for (const auto& t : kedit::named_tensors(a))
        if (slurp(fs::path(model_) / (t.name + ".bin")) != slurp(out / (t.name + ".bin"))) diff.push_back(t.name);
    EXPECT_EQ(diff, (std::vector<std::string>{"layers.0.mlp.w_out", "layers.1.mlp.w_out", "layers.4.mlp.w_out",
                                              "layers.5.mlp.w_out"}));
    const auto oc = read_json(out / "outcome.json");
    EXPECT_EQ(oc.at("variant"), "jeep");
    EXPECT_EQ(oc.at("requests").size(), 2u);
    EXPECT_EQ(slurp(out / "dataset.jsonl"), before);

    const auto lo = tmp("edit_low");
    ASSERT_EQ(kedit_run("edit --model " + model_ + " --variant low_only --n-requests 1 --steps 5 --out " +
                        lo.string()).code, 0);
    for (const auto& l : read_json(lo / "outcome.json").at("layers")) EXPECT_EQ(l.at("region"), "low");
}

TEST_F(Cli, EvalAndManifestReplay) {
    const auto out = tmp("eval");
    const auto r = kedit_run("eval --model " + model_ + " --n-requests 5 --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.text;
    EXPECT_EQ(r.text.rfind("ES=", 0), 0u) << r.text;
    const auto m = read_json(out / "metrics.json");
    EXPECT_EQ(m.at("records").size(), 5u);
    EXPECT_EQ(csv_lines(out / "metrics.csv")[0], "id,es,gs,ls");
    const auto replay = tmp("eval_replay");
    const auto r2 = kedit_run("--config " + (out / "run_manifest.json").string() + " eval --model " + model_ +
                              " --out " + replay.string());
    ASSERT_EQ(r2.code, 0) << r2.text;
    EXPECT_EQ(slurp(replay / "metrics.json"), slurp(out / "metrics.json"));
    EXPECT_EQ(read_json(replay / "run_manifest.json").at("config"), read_json(out / "run_manifest.json").at("config"));
    const auto tok = kedit_run("eval --model " + model_ + " --n-requests 3 --mode token --field original --out " +
                               tmp("eval_tok").string());
    ASSERT_EQ(tok.code, 0) << tok.text;
    EXPECT_EQ(read_json(tmp("eval_tok") / "metrics.json").at("mode"), "token_accuracy");
    EXPECT_EQ(kedit_run("eval --model " + model_ + " --mode bogus --out " + tmp("eval_bad").string()).code, 1);
}

TEST_F(Cli, SweepRowsAndScore) {
    const auto out = tmp("sweep");
    const auto r = kedit_run("sweep --model " + model_ + " --n-requests 2 --steps 8 --gammas 0.1,0.25,0.5 --out " +
                             out.string());
    ASSERT_EQ(r.code, 0) << r.text;
    const auto lines = csv_lines(out / "sweep.csv");
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "gamma,es,gs,ls,score");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto v = csv_row(lines[i]);
        ASSERT_EQ(v.size(), 5u);
        const double want = (v[1] > 0 && v[2] > 0 && v[3] > 0) ? 3.0 / (1 / v[1] + 1 / v[2] + 1 / v[3]) : 0.0;
        EXPECT_NEAR(v[4], want, 1e-12) << lines[i];
    }
    EXPECT_EQ(read_json(out / "sweep.json").size(), 3u);
}
