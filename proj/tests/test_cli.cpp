// End-to-end exercises of the command-line binary (path injected at build
// time through CYCLEQP_CLI_PATH).

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "synthetic.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = CYCLEQP_CLI_PATH;

int run(const std::string& args) {
    const int rc = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    REQUIRE(rc != -1);
    return WEXITSTATUS(rc);
}

std::vector<std::string> stripped_log(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        j.erase("wall_seconds");
        out.push_back(j.dump());
    }
    return out;
}

struct Workspace {
    fs::path root;
    Workspace() : root(fs::temp_directory_path() / "cycleqp_cli_test") {
        fs::remove_all(root);
        fs::create_directories(root);
        testutil::make_dataset(root / "data", "vangogh", 3, 48, 2024);
    }
    ~Workspace() { fs::remove_all(root); }

    std::string train_args(const std::string& out, const std::string& extra = "", int iterations = 4) const {
        return "train --style vangogh --data-root " + (root / "data").string() + " --out-dir " +
               (root / out).string() + " --iterations " + std::to_string(iterations) +
               " --batch-size 2 --crop-size 16 --seed 5"
               " --base-width 4 --res-blocks 1 --n-down 2 --critic-width 4 --critic-layers 2 " +
               extra;
    }
};

}  // namespace

TEST_CASE("cli: check subcommand reports success") { CHECK(run("check") == 0); }

TEST_CASE("cli: unknown arguments are usage errors") {
    CHECK(run("--no-such-flag") == 1);
    CHECK(run("train --style not_a_style") == 1);
}

TEST_CASE("cli: train fails cleanly on a missing dataset") {
    Workspace ws;
    CHECK(run("train --style vangogh --data-root " + (ws.root / "nope").string() + " --out-dir " +
              (ws.root / "out").string() + " --iterations 1") == 1);
}

TEST_CASE("cli: training is deterministic across runs and resumable") {
    Workspace ws;
    REQUIRE(run(ws.train_args("runA")) == 0);
    REQUIRE(run(ws.train_args("runB")) == 0);
    auto a = stripped_log(ws.root / "runA" / "train_log.jsonl");
    auto b = stripped_log(ws.root / "runB" / "train_log.jsonl");
    REQUIRE(a.size() == 4);
    CHECK(a == b);

    // interrupt after 2, resume to 4
    REQUIRE(run(ws.train_args("runC", "--checkpoint-every 1", 2)) == 0);
    REQUIRE(run(ws.train_args("runC", "--checkpoint-every 1 --resume")) == 0);
    auto c = stripped_log(ws.root / "runC" / "train_log.jsonl");
    CHECK(c == a);
    CHECK(fs::exists(ws.root / "runC" / "latest.ckpt"));
}

TEST_CASE("cli: stylize and reconstruct round trip a trained checkpoint") {
    Workspace ws;
    REQUIRE(run(ws.train_args("run")) == 0);
    const fs::path ckpt = ws.root / "run" / "latest.ckpt";
    const fs::path input = ws.root / "input.png";
    cv::Mat img = testutil::synthetic_image(3, 300, false);
    cv::Mat bgr;
    cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
    REQUIRE(cv::imwrite(input.string(), bgr));

    const fs::path out = ws.root / "styled.png";
    REQUIRE(run("stylize --checkpoint " + ckpt.string() + " --input " + input.string() + " --output " + out.string() +
                " --size 64") == 0);
    cv::Mat styled = cv::imread(out.string());
    REQUIRE_FALSE(styled.empty());
    CHECK(styled.rows == 64);
    CHECK(styled.cols == 64);

    const fs::path rec = ws.root / "rec.png";
    CHECK(run("reconstruct --checkpoint " + ckpt.string() + " --input " + input.string() + " --output " +
              rec.string() + " --size 64") == 0);
    CHECK(fs::exists(rec));
    CHECK(fs::exists(ws.root / "rec.stylized.png"));
}

TEST_CASE("cli: stylize rejects a missing checkpoint without writing output") {
    Workspace ws;
    const fs::path input = ws.root / "in.png";
    cv::Mat img = testutil::synthetic_image(4, 64, true);
    cv::imwrite(input.string(), img);
    const fs::path out = ws.root / "never.png";
    CHECK(run("stylize --checkpoint " + (ws.root / "ghost.ckpt").string() + " --input " + input.string() +
              " --output " + out.string()) == 1);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("cli: stylize rejects sizes the generator cannot tile") {
    Workspace ws;
    REQUIRE(run(ws.train_args("run")) == 0);
    const fs::path input = ws.root / "in.png";
    cv::imwrite(input.string(), testutil::synthetic_image(5, 64, false));
    CHECK(run("stylize --checkpoint " + (ws.root / "run" / "latest.ckpt").string() + " --input " + input.string() +
              " --output " + (ws.root / "o.png").string() + " --size 66") == 1);
}

TEST_CASE("cli: runtime failures exit with 2") {
    Workspace ws;
    REQUIRE(run(ws.train_args("run")) == 0);
    const fs::path input = ws.root / "in.png";
    cv::imwrite(input.string(), testutil::synthetic_image(6, 64, false));
    CHECK(run("stylize --checkpoint " + (ws.root / "run" / "latest.ckpt").string() + " --input " + input.string() +
              " --output /nonexistent_dir/out.png --size 64") == 2);
}
