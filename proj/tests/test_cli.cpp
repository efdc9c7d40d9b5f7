#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "cxdi/cli.hpp"
#include "cxdi/volume_io.hpp"

using namespace cxdi;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "cxdi");
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path = fs::temp_directory_path() / "cxdi_cli_test";
    TempDir() {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& s) const { return (path / s).string(); }
};

}  // namespace

TEST_CASE("exit codes") {
    TempDir d;
    CHECK(cli({"generate", "--count", "0", "--out", d / "x"}).code == kExitConfig);
    CHECK(cli({"generate", "--count", "2", "--grid", "15", "--out", d / "x"}).code == kExitConfig);
    CHECK(cli({"no-such-command"}).code == kExitConfig);
    CHECK(cli({"iterative", "--pattern", d / "missing.cxv", "--out", d / "it"}).code == kExitIo);
    CHECK(cli({"iterative", "--pattern", d / "missing.cxv", "--out", d / "it", "--hio-beta", "2"}).code == kExitConfig);
    CHECK(cli({"--help"}).code == kExitOk);

    write_file_atomic(d / "junk.cxv", "not a volume");
    const auto r = cli({"iterative", "--pattern", d / "junk.cxv", "--out", d / "it"});
    CHECK(r.code == kExitIo);
    CHECK(r.err.find("BadMagic") != std::string::npos);
}

TEST_CASE("replaying run.json reproduces artifacts byte for byte") {
    TempDir d;
    REQUIRE(cli({"generate", "--count", "2", "--grid", "16", "--seed", "3", "--out", d / "data"}).code == 0);
    const std::string pattern = d / "data/sample_0_pattern.cxv";
    REQUIRE(cli({"iterative", "--pattern", pattern, "--out", d / "a", "--iterations", "120", "--er-tail", "20",
                 "--seed", "4"})
                .code == 0);
    REQUIRE(cli({"iterative", "--config", d / "a/run.json", "--out", d / "b"}).code == 0);
    for (const char* f : {"recon.cxv", "support.cxv", "error.csv", "report.json"}) {
        CHECK(read_file(d / (std::string("a/") + f)) == read_file(d / (std::string("b/") + f)));
    }
    // The recorded config wins over defaults but explicit flags win over the config.
    REQUIRE(cli({"iterative", "--config", d / "a/run.json", "--out", d / "c", "--seed", "5"}).code == 0);
    CHECK(read_file(d / "a/recon.cxv") != read_file(d / "c/recon.cxv"));
    CHECK(cli({"refine", "--config", d / "a/run.json", "--out", d / "e"}).code == kExitConfig);
}

TEST_CASE("convert round trips a raw stack") {
    TempDir d;
    REQUIRE(cli({"generate", "--count", "1", "--grid", "16", "--out", d / "data"}).code == 0);
    const std::string pattern = d / "data/sample_0_pattern.cxv";
    REQUIRE(cli({"convert", "--cxv", pattern, "--dtype", "f64", "--out", d / "p.raw"}).code == 0);
    REQUIRE(cli({"convert", "--raw", d / "p.raw", "--dims", "16,16,16", "--dtype", "f64", "--out", d / "p.cxv"}).code == 0);
    CHECK(read_pattern(d / "p.cxv").amplitude == read_pattern(pattern).amplitude);
    CHECK(cli({"convert", "--raw", d / "p.raw", "--dims", "16,16", "--out", d / "q.cxv"}).code == kExitConfig);
    CHECK(cli({"convert", "--raw", d / "p.raw", "--dims", "8,16,16", "--dtype", "f64", "--out", d / "q.cxv"}).code ==
          kExitIo);
}
