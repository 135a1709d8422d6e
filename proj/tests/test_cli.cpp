#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "seqmask/dataset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = SEQMASK_CLI_PATH;

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("seqmask_cli_test_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct Run {
    int code;
    std::string err;
};

Run run(const std::string& args, const fs::path& dir) {
    const fs::path err = dir / "stderr.txt";
    const std::string cmd = kCli + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

// Small generator so training finishes in seconds.
const std::string kSmall =
    "-s gen.text_dim=16 -s gen.video_dim=16 -s gen.text_invariant=4 -s gen.text_spurious=4 "
    "-s gen.video_invariant=4 -s gen.video_spurious=4 -s domain.source_0.n=300 -s domain.source_1.n=300 "
    "-s domain.target_0.n=300 -s model.epochs=4";

}  // namespace

TEST_CASE("generate, train, evaluate and analyze end to end") {
    auto dir = scratch("pipeline");
    const std::string out = (dir / "run").string();
    REQUIRE(run("generate -s model.epochs=2 -o " + out, dir).code == 0);
    CHECK(fs::exists(dir / "run" / "ground_truth.json"));
    REQUIRE(run("train -s model.epochs=2 -d " + out + "/dataset.jsonl -o " + out, dir).code == 0);
    for (const char* f : {"checkpoint.json", "stage_report.json", "mask_text.csv", "mask_video.csv"})
        CHECK(fs::exists(dir / "run" / f));
    REQUIRE(run("evaluate -k " + out + "/checkpoint.json -d " + out + "/dataset.jsonl -o " + out, dir).code == 0);
    auto ev = read(dir / "run" / "evaluation.json");
    CHECK(ev.contains("config"));
    CHECK(ev.contains("seed"));
    CHECK(ev["accuracy"]["source"].contains("source_0"));
    CHECK(ev["accuracy"]["target"].contains("target_0"));
    REQUIRE(run("analyze -k " + out + "/checkpoint.json -d " + out + "/dataset.jsonl -g " + out +
                    "/ground_truth.json -o " + out,
                dir)
                .code == 0);
    auto an = read(dir / "run" / "analysis.json");
    CHECK(an.contains("cross_modal"));
    CHECK(an.contains("recovery"));
    CHECK(an["config"].contains("model.alpha"));
    auto report = read(dir / "run" / "stage_report.json");
    CHECK(report["stages"].size() == 2);
}

TEST_CASE("unknown config key is a usage error") {
    auto dir = scratch("unknown");
    auto r = run("generate -s model.alpah=0.1 -o " + (dir / "x").string(), dir);
    CHECK(r.code == 2);
    auto err = json::parse(r.err);
    CHECK(err["error"]["kind"] == "unknown_config_key");
    CHECK(err["error"]["exit_code"] == 2);
    CHECK(run("frobnicate", dir).code == 2);
}

TEST_CASE("malformed files are data errors") {
    auto dir = scratch("malformed");
    std::ofstream(dir / "bad.jsonl") << "{\"id\": \"a\", \"label\": \n";
    std::ofstream(dir / "bad.ckpt") << "{\"format\": \"something-else\"}";
    auto r = run("train -d " + (dir / "bad.jsonl").string() + " -o " + (dir / "o").string(), dir);
    CHECK(r.code == 3);
    CHECK(json::parse(r.err)["error"]["kind"] == "malformed_file");

    REQUIRE(run("generate " + kSmall + " -o " + (dir / "g").string(), dir).code == 0);
    r = run("evaluate -k " + (dir / "bad.ckpt").string() + " -d " + (dir / "g" / "dataset.jsonl").string(), dir);
    CHECK(r.code == 3);
    std::ofstream(dir / "bad.cfg") << "model.alpha 0.1\n";
    CHECK(run("generate -c " + (dir / "bad.cfg").string(), dir).code == 2);
    CHECK(run("train -d " + (dir / "missing.jsonl").string(), dir).code == 3);
}

TEST_CASE("checkpoint and dataset dimensions must agree") {
    auto dir = scratch("dims");
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    REQUIRE(run("generate " + kSmall + " -o " + a, dir).code == 0);
    REQUIRE(run("generate " + kSmall + " -s gen.text_dim=12 -o " + b, dir).code == 0);
    REQUIRE(run("train " + kSmall + " -s model.epochs=1 -d " + a + "/dataset.jsonl -o " + a, dir).code == 0);
    auto r = run("evaluate -k " + a + "/checkpoint.json -d " + b + "/dataset.jsonl", dir);
    CHECK(r.code == 3);
    CHECK(json::parse(r.err)["error"]["kind"] == "dimension_mismatch");
}

TEST_CASE("an untrained model is at chance on uninformative balanced data") {
    auto dir = scratch("chance");
    const std::string out = (dir / "c").string();
    const std::string cfg = kSmall +
                            " -s gen.text_weight=0 -s gen.video_weight=0 -s domain.source_0.strength=0 "
                            "-s domain.source_1.strength=0 -s domain.target_0.n=3000 -s model.epochs=0";
    REQUIRE(run("generate " + cfg + " -o " + out, dir).code == 0);
    REQUIRE(run("train " + cfg + " -d " + out + "/dataset.jsonl -o " + out, dir).code == 0);
    REQUIRE(run("evaluate " + cfg + " -k " + out + "/checkpoint.json -d " + out + "/dataset.jsonl -o " + out, dir)
                .code == 0);
    auto ev = read(dir / "c" / "evaluation.json");
    const double acc = ev["accuracy"]["overall"]["accuracy"].get<double>();
    CHECK(std::abs(acc - 1.0 / 3.0) <= 0.03);
}

TEST_CASE("identical config and seed give byte-identical outputs") {
    auto dir = scratch("determinism");
    const std::string out = (dir / "d").string();
    REQUIRE(run("generate " + kSmall + " -o " + out, dir).code == 0);
    REQUIRE(run("train " + kSmall + " --seeds 3 -d " + out + "/dataset.jsonl -o " + out, dir).code == 0);
    const auto report = slurp(dir / "d" / "stage_report.json");
    const auto checkpoint = slurp(dir / "d" / "checkpoint.json");
    REQUIRE(run("train " + kSmall + " --seeds 3 -d " + out + "/dataset.jsonl -o " + out, dir).code == 0);
    CHECK(report == slurp(dir / "d" / "stage_report.json"));
    CHECK(checkpoint == slurp(dir / "d" / "checkpoint.json"));
    CHECK(read(dir / "d" / "stage_report.json")["seed"] == 3);
}

TEST_CASE("several seeds run side by side and are summarized") {
    auto dir = scratch("seeds");
    const std::string out = (dir / "s").string();
    REQUIRE(run("generate " + kSmall + " -o " + out, dir).code == 0);
    REQUIRE(run("train " + kSmall + " -s model.epochs=2 --seeds 1-3 -d " + out + "/dataset.jsonl -o " + out, dir)
                .code == 0);
    auto summary = read(dir / "s" / "summary.json");
    CHECK(summary["runs"].size() == 3);
    for (int s = 1; s <= 3; ++s) CHECK(fs::exists(dir / "s" / ("seed_" + std::to_string(s)) / "checkpoint.json"));
}

TEST_CASE("dataset files round-trip bit-exactly") {
    auto dir = scratch("roundtrip");
    REQUIRE(run("generate " + kSmall + " -o " + (dir / "r").string(), dir).code == 0);
    const fs::path file = dir / "r" / "dataset.jsonl";
    auto data = seqmask::read_jsonl(file);
    CHECK(data.size() == 900);
    std::ostringstream again;
    seqmask::write_jsonl(data, again);
    CHECK(again.str() == slurp(file));
    std::istringstream in(again.str());
    CHECK(seqmask::read_jsonl(in).samples == data.samples);
}

TEST_CASE("gradcheck subcommand") {
    auto dir = scratch("grad");
    auto r = run("gradcheck -n 5 --only matmul softmax_rows -o " + (dir / "g").string(), dir);
    CHECK(r.code == 0);
    auto j = read(dir / "g" / "gradcheck.json");
    CHECK(j["checks"].size() == 2);
    CHECK(run("gradcheck --only nonsense", dir).code == 2);
}
