#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cseg/cli.hpp"
#include "cseg/commands.hpp"
#include "cseg/parallel.hpp"
#include "cseg/snapshot.hpp"
#include "cseg/synth.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace cseg;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cseg");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    const int code = run_cli(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    set_reference_mode(false);
    set_num_threads(0);
    return {code, out.str(), err.str()};
}

std::size_t count_files(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
    return n;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream os(p);
    os << text;
}

// Small dataset plus a config training Unet16X16X2 on it.
fs::path tiny_setup(const std::string& name) {
    auto dir = oracle::temp_dir(name);
    auto r = cli({"synth", "--n-scenes", "4", "--size", "32", "--seed", "3", "--out", (dir / "data").string()});
    REQUIRE(r.code == 0);
    write(dir / "run.json", R"({
  "model": {"name": "Unet16X16X2"},
  "train": {"epochs": 2, "batch_size": 4, "seed": 9},
  "data": {"manifest": "data/manifest.csv"},
  "output_dir": "out",
  "reference_mode": true
})");
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({"train", "--epochs", "many"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("synth writes the dataset and is repeatable") {
    auto dir = oracle::temp_dir("cli_synth");
    auto args = std::vector<std::string>{"synth", "--n-scenes", "4", "--size", "192", "--seed", "7", "--out", (dir / "a").string()};
    auto r = cli(args);
    REQUIRE(r.code == 0);
    CHECK(count_files(dir / "a" / "images") == 4);
    CHECK(count_files(dir / "a" / "labels") == 4);
    CHECK(fs::exists(dir / "a" / "manifest.csv"));

    args.back() = (dir / "b").string();
    REQUIRE(cli(args).code == 0);
    for (const auto& sub : {"images", "labels", "masks"})
        for (const auto& e : fs::directory_iterator(dir / "a" / sub))
            CHECK(oracle::read_file(e.path()) == oracle::read_file(dir / "b" / sub / e.path().filename()));

    for (const auto& e : read_manifest(dir / "a" / "manifest.csv")) {
        auto doc = read_label_file(e.label);
        auto mask = read_mask_png(dir / "a" / "masks" / (doc.scene_id + ".png"));
        CHECK(rasterize(doc.polygons, 192, 192).identical(mask));
    }
}

TEST_CASE("train") {
    auto dir = tiny_setup("cli_train");
    const auto config = (dir / "run.json").string();

    SUBCASE("zero epochs writes the initial checkpoint and an empty history") {
        auto r = cli({"train", "--config", config, "--epochs", "0"});
        REQUIRE(r.code == 0);
        CHECK(fs::exists(dir / "out" / "best.ckpt"));
        CHECK(fs::exists(dir / "out" / "last.ckpt"));
        CHECK(oracle::read_file(dir / "out" / "history.csv") == history_header() + "\n");
        CHECK(load_checkpoint(dir / "out" / "last.ckpt").model.config() == parse_config_name("Unet16X16X2"));
    }
    SUBCASE("missing manifest exits 2 and names the path") {
        auto r = cli({"train", "--config", config, "--manifest", (dir / "absent.csv").string()});
        CHECK(r.code == 2);
        CHECK(r.err.find("absent.csv") != std::string::npos);
    }
    SUBCASE("config errors exit 1") {
        write(dir / "bad.json", R"({"train": {"bogus": 1}})");
        auto r = cli({"train", "--config", (dir / "bad.json").string()});
        CHECK(r.code == 1);
        CHECK(r.err.find("train.bogus") != std::string::npos);
        CHECK(cli({"train", "--config", (dir / "none.json").string()}).code == 1);
    }
    SUBCASE("same seed gives an identical history, and resume continues it") {
        REQUIRE(cli({"train", "--config", config, "--out", (dir / "r1").string()}).code == 0);
        REQUIRE(cli({"train", "--config", config, "--out", (dir / "r2").string()}).code == 0);
        const auto h1 = oracle::read_file(dir / "r1" / "history.csv");
        CHECK(h1 == oracle::read_file(dir / "r2" / "history.csv"));

        REQUIRE(cli({"train", "--config", config, "--out", (dir / "r3").string(), "--epochs", "1"}).code == 0);
        REQUIRE(cli({"train", "--config", config, "--out", (dir / "r3").string(), "--resume"}).code == 0);
        CHECK(oracle::read_file(dir / "r3" / "history.csv") == h1);
        CHECK(oracle::read_file(dir / "r3" / "last.ckpt") == oracle::read_file(dir / "r1" / "last.ckpt"));
    }
}

TEST_CASE("eval and predict") {
    auto dir = tiny_setup("cli_eval");
    REQUIRE(cli({"train", "--config", (dir / "run.json").string()}).code == 0);
    const auto ckpt = (dir / "out" / "best.ckpt").string();
    const auto manifest = (dir / "data" / "manifest.csv").string();

    auto a = cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", (dir / "e1").string()});
    auto b = cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--out", (dir / "e2").string()});
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(oracle::read_file(dir / "e1" / "metrics.csv") == oracle::read_file(dir / "e2" / "metrics.csv"));

    // Library-level recomputation of the same record.
    auto ck = load_checkpoint(ckpt);
    auto samples = tile_scenes(load_scenes(read_manifest(manifest), "val"), 16, 16);
    normalize_samples(samples, ck.normalization);
    auto report = evaluate(ck.model, samples);
    CHECK(a.out == metric_record_header() + "\n" + format_metric_record("Unet16X16X2", ck.model.config(), report) + "\n");
    CHECK(cli({"eval", "--checkpoint", ckpt, "--manifest", manifest, "--split", "nosuch"}).code == 2);

    // A 16x16 scene is exactly one tile.
    auto scene = synth_dataset(1, 16, 77)[0];
    save_scene_image(dir / "one.png", scene.image);
    write_label_file(dir / "one.json", {scene.scene_id, scene.polygons});
    auto p = cli({"predict", "--checkpoint", ckpt, "--image", (dir / "one.png").string(), "--label",
                  (dir / "one.json").string(), "--out", (dir / "pred").string()});
    REQUIRE(p.code == 0);
    auto mask_img = read_png(dir / "pred" / "one_mask.png");
    CHECK((mask_img.width == 16 && mask_img.height == 16));
    for (auto v : mask_img.pixels) CHECK((v == 0 || v == 255));
    CHECK(fs::exists(dir / "pred" / "one_overlay.png"));
    auto probs = load_tensor(dir / "pred" / "one_prob.cseg");
    auto direct = ck.model.predict(normalize(scene.image, ck.normalization).reshaped(Shape{1, 3, 16, 16}));
    REQUIRE(probs.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(std::abs(probs[i] - direct[i]) <= 1e-6);

    CHECK(cli({"predict", "--checkpoint", ckpt, "--image", (dir / "missing.png").string()}).code == 2);
}

TEST_CASE("covering offsets reach the far edge") {
    CHECK(covering_offsets(96, 96, 96) == std::vector<std::size_t>{0});
    CHECK(covering_offsets(100, 32, 32) == std::vector<std::size_t>{0, 32, 64, 68});
    CHECK(covering_offsets(64, 32, 16) == std::vector<std::size_t>{0, 16, 32});
}

TEST_CASE("gradcheck") {
    auto ok = cli({"gradcheck", "--scope", "block"});
    CHECK(ok.code == 0);
    auto bad = cli({"gradcheck", "--scope", "layer", "--inject-fault", "0.01"});
    CHECK(bad.code == 4);
    CHECK(bad.out.find("FAIL") != std::string::npos);
    CHECK(cli({"gradcheck", "--scope", "everything"}).code == 1);

    // Every group appears once.
    auto layer = cli({"gradcheck", "--scope", "layer"});
    REQUIRE(layer.code == 0);
    std::istringstream is(layer.out);
    std::string line;
    std::getline(is, line);
    std::set<std::string> seen;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        const auto a = line.find(','), b = line.find(',', a + 1), c = line.find(',', b + 1);
        const std::string key = line.substr(a + 1, c - a - 1);
        CHECK(seen.insert(key).second);
        ++rows;
    }
    CHECK(rows > 20);
}

TEST_CASE("benchmark") {
    auto dir = tiny_setup("cli_bench");
    const auto config = (dir / "run.json").string();
    auto empty = cli({"benchmark", "--config", config, "--names", ""});
    CHECK(empty.code == 0);
    CHECK(empty.out == benchmark_header() + "\n");

    auto invalid = cli({"benchmark", "--config", config, "--names", "Unet16X16X2,Unet50X1024X4", "--out",
                        (dir / "inv").string()});
    CHECK(invalid.code == 1);
    CHECK_FALSE(fs::exists(dir / "inv" / "Unet16X16X2"));

    auto r = cli({"benchmark", "--config", config, "--names", "Unet16X16X2,Unet16X32X2-SE", "--epochs", "1", "--out",
                  (dir / "bench").string()});
    REQUIRE(r.code == 0);
    std::istringstream is(r.out);
    std::string line;
    std::getline(is, line);
    CHECK(line == "ARCHITECTURE,IS,N,MF,DICE,SEED,SECONDS");
    for (const char* name : {"Unet16X16X2", "Unet16X32X2-SE"}) {
        REQUIRE(std::getline(is, line));
        CHECK(line.rfind(std::string(name) + ",", 0) == 0);
        auto ev = cmd_eval(dir / "bench" / name / "best.ckpt", dir / "data" / "manifest.csv", "val", dir / "ev");
        char dice[32];
        std::snprintf(dice, sizeof dice, ",%.4f,", ev.report.soft_dice);
        CHECK(line.find(dice) != std::string::npos);
    }
    CHECK(oracle::read_file(dir / "bench" / "benchmark.csv") == r.out);
}
