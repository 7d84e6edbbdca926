#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "hytwin/error.hpp"
#include "hytwin/historian.hpp"
#include "hytwin/pipeline.hpp"
#include "hytwin/svg.hpp"

using namespace hytwin;
namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) {
        ++n;
    }
    return n;
}

/// Scratch directory removed at scope exit.
struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("hytwin_pipeline_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

Run hytwin_cli(const TempDir& dir, const std::string& args) {
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd =
        std::string(HYTWIN_CLI_PATH) + " --out " + dir.path.string() + " " + args + " >" + out + " 2>" + err;
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

}  // namespace

TEST_CASE("collect writes the full scenario") {
    TempDir dir;
    const auto r = hytwin_cli(dir, "collect");
    REQUIRE(r.status == 0);
    const auto f = read_csv_file(dir / "scenario.csv");
    CHECK(f.rows() == 3001);
    CHECK(f.times().back() == 3000.0);
    CHECK(f.find("T100.T"));
}

TEST_CASE("a missing input reports its error code") {
    TempDir dir;
    const auto r = hytwin_cli(dir, "resample --input " + (dir / "absent.csv"));
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: FILE_NOT_FOUND", 0) == 0);
    CHECK(r.err.find("terminate") == std::string::npos);
}

TEST_CASE("help lists every stage") {
    TempDir dir;
    const auto r = hytwin_cli(dir, "--help");
    CHECK(r.status == 0);
    for (const auto& stage : pipeline::stage_names()) {
        CHECK_MESSAGE(r.out.find(stage) != std::string::npos, stage);
    }
}

TEST_CASE("config file values yield to command-line flags") {
    TempDir dir;
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "# short run\nduration = 200\n\ntemp-sp=0:30\n";
    }
    REQUIRE(hytwin_cli(dir, "collect --config " + (dir / "run.cfg")).status == 0);
    CHECK(read_csv_file(dir / "scenario.csv").rows() == 201);
    REQUIRE(hytwin_cli(dir, "collect --config " + (dir / "run.cfg") + " --duration 50").status == 0);
    CHECK(read_csv_file(dir / "scenario.csv").rows() == 51);

    {
        std::ofstream bad(dir / "bad.cfg");
        bad << "duration 200\n";
    }
    const auto r = hytwin_cli(dir, "collect --config " + (dir / "bad.cfg"));
    CHECK(r.status == 1);
    CHECK(r.err.find("CONFIG_INVALID") != std::string::npos);
}

TEST_CASE("collect, train, hybrid at zero gain and evaluate end to end") {
    TempDir dir;
    const std::string scenario = " --duration 400 --temp-sp 0:40,150:45 --valve 0:0.25,200:0.22 --supply 0:15,250:16";
    REQUIRE(hytwin_cli(dir, "collect" + scenario).status == 0);
    REQUIRE(hytwin_cli(dir, "train --input " + (dir / "scenario.csv") +
                                " --hidden 4 --enc-len 10 --dec-len 5 --stride 20 --epochs 2")
                .status == 0);
    CHECK(fs::exists(dir / "model.json"));
    CHECK(read_csv_file(dir / "loss.csv").rows() == 2);

    REQUIRE(hytwin_cli(dir, "hybrid --model " + (dir / "model.json") + scenario + " --mode track --alpha 0").status == 0);
    const auto ref = slurp(dir / "reference.csv");
    CHECK(ref == slurp(dir / "hybrid.csv"));
    CHECK(fs::exists(dir / "hybrid_metrics.json"));

    const auto r = hytwin_cli(dir, "evaluate --reference " + (dir / "reference.csv") + " --candidate physics=" +
                                       (dir / "reference.csv") + " --candidate hybrid=" + (dir / "hybrid.csv"));
    REQUIRE(r.status == 0);
    CHECK(r.out.find("physics vs hybrid: tie") != std::string::npos);
    CHECK(slurp(dir / "evaluation.json").find("\"preferred\": \"tie\"") != std::string::npos);

    REQUIRE(hytwin_cli(dir, "openloop --input " + (dir / "scenario.csv") + " --model " + (dir / "model.json") +
                                " --temp-sp 0:40,150:45")
                .status == 0);
    CHECK(read_csv_file(dir / "openloop.csv").rows() > 0);
}

TEST_CASE("plot draws one polyline per series") {
    TempDir dir;
    REQUIRE(hytwin_cli(dir, "collect --duration 100").status == 0);
    const std::string args = "plot --input " + (dir / "scenario.csv") + " --tag T100.T --tag T100.level";
    REQUIRE(hytwin_cli(dir, args).status == 0);
    const auto first = slurp(dir / "plot.svg");
    CHECK(count(first, "<polyline") == 2);
    REQUIRE(hytwin_cli(dir, args).status == 0);
    CHECK(slurp(dir / "plot.svg") == first);
}

TEST_CASE("svg emitter") {
    const std::vector<PlotSeries> two = {{"a", {0, 1, 2}, {1, 1, 1}}, {"b", {0, 1, 2}, {2, 2, 2}}};
    const auto svg = emit_plot_svg(two);
    CHECK(count(svg, "<polyline") == 2);
    CHECK(svg == emit_plot_svg(two));
    CHECK_THROWS_WITH_AS((void)emit_plot_svg(std::vector<PlotSeries>{}), doctest::Contains("EMPTY_SERIES"), Error);
    const std::vector<PlotSeries> ragged = {{"a", {0, 1, 2}, {1, 1, 1}}, {"b", {0, 1}, {2, 2}}};
    CHECK_THROWS_WITH_AS((void)emit_plot_svg(ragged), doctest::Contains("GRID_MISMATCH"), Error);
}

TEST_CASE("step event parsing") {
    const auto e = pipeline::parse_step_event("1000:40:50");
    CHECK(e.time == 1000.0);
    CHECK(e.y0 == 40.0);
    CHECK(e.y1 == 50.0);
    CHECK_THROWS_WITH_AS((void)pipeline::parse_step_event("1000:40"), doctest::Contains("CONFIG_INVALID"), Error);
    CHECK_THROWS_WITH_AS((void)pipeline::parse_step_event("a:b:c"), doctest::Contains("CONFIG_INVALID"), Error);
}

TEST_CASE("stage names parse back") {
    CHECK(pipeline::stage_names().size() == 9);
    for (const auto& name : pipeline::stage_names()) {
        CHECK(pipeline::stage_names()[static_cast<std::size_t>(pipeline::parse_stage(name))] == name);
    }
    CHECK_THROWS_WITH_AS((void)pipeline::parse_stage("deploy"), doctest::Contains("CONFIG_INVALID"), Error);
}
