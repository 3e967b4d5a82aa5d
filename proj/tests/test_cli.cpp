#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "masnet/data.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = MASNET_CLI_PATH;

int run_cli(const std::string& args, const fs::path& cwd, const fs::path& stderr_to = {}) {
    std::string cmd = "cd '" + cwd.string() + "' && '" + kCli + "' " + args + " > /dev/null";
    cmd += stderr_to.empty() ? " 2>&1" : " 2> '" + stderr_to.string() + "'";
    const int rc = std::system(cmd.c_str());
    return rc < 0 ? rc : WEXITSTATUS(rc);
}

fs::path fresh_dir(const std::string& tag) {
    fs::path d = fs::temp_directory_path() / ("masnet_cli_" + tag);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(bool(is));
    return std::string(std::istreambuf_iterator<char>(is), {});
}

// Relative-path-keyed map of file contents, for byte-identity comparisons.
std::map<std::string, std::string> slurp_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
    return out;
}

}  // namespace

TEST_CASE("gen-data is deterministic across invocations") {
    fs::path r1 = fresh_dir("gen1"), r2 = fresh_dir("gen2");
    const std::string args = "gen-data --out d --pairs 4 --size 32 --seed 7";
    REQUIRE(run_cli(args, r1) == 0);
    REQUIRE(run_cli(args, r2) == 0);
    auto t1 = slurp_tree(r1 / "d"), t2 = slurp_tree(r2 / "d");
    CHECK(t1.size() == 13);  // 4 x (A,B,label) + config.txt
    CHECK(t1 == t2);
}

TEST_CASE("train then eval produces a report with iou and f1 keys") {
    fs::path root = fresh_dir("train_eval");
    REQUIRE(run_cli("gen-data --out data --pairs 3 --size 16 --seed 3", root) == 0);
    const std::string train_args =
        "train --data data --out run --seed 5 --variant masnet --stages 1 --channels 4"
        " --attn-stages 1 --iters 4 --warmup 1 --batch 1 --crop 16 --ckpt-every 4 --lr 1e-3";
    REQUIRE(run_cli(train_args, root) == 0);
    REQUIRE(fs::exists(root / "run/checkpoints/final.masn"));
    REQUIRE(fs::exists(root / "run/logs/train.tsv"));

    REQUIRE(run_cli("eval --ckpt run/checkpoints/final.masn --data data --out ev", root) == 0);
    const std::string rep = read_file(root / "ev/reports/eval.txt");
    CHECK(rep.find("iou") != std::string::npos);
    CHECK(rep.find("f1") != std::string::npos);
}

TEST_CASE("unknown flag is a usage error naming the token") {
    fs::path root = fresh_dir("bogus");
    CHECK(run_cli("gen-data --out d --bogus 1", root, root / "err.txt") == 1);
    CHECK(read_file(root / "err.txt").find("--bogus") != std::string::npos);
    CHECK(run_cli("frobnicate", root, root / "err2.txt") == 1);
}

TEST_CASE("runtime errors exit 2") {
    fs::path root = fresh_dir("runtime");
    CHECK(run_cli("eval --ckpt missing.masn --data nowhere --out o", root) == 2);
}

TEST_CASE("echoed config reproduces the run bitwise") {
    fs::path r1 = fresh_dir("echo1"), r2 = fresh_dir("echo2");
    REQUIRE(run_cli("gen-data --out data --pairs 3 --size 16 --seed 11", r1) == 0);
    REQUIRE(run_cli("gen-data --out data --pairs 3 --size 16 --seed 11", r2) == 0);
    const std::string train_args =
        "train --data data --out run --seed 9 --stages 1 --channels 4 --attn-stages 0"
        " --iters 4 --warmup 1 --batch 1 --crop 16 --ckpt-every 4";
    REQUIRE(run_cli(train_args, r1) == 0);
    // second run driven purely by the echoed config
    fs::copy(r1 / "run/config.txt", r2 / "replay.txt");
    REQUIRE(run_cli("train --config replay.txt", r2) == 0);
    CHECK(slurp_tree(r1 / "run") == slurp_tree(r2 / "run"));
}
