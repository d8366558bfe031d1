#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "lmabo/benchmarks.hpp"
#include "lmabo/cli.hpp"
#include "lmabo/errors.hpp"

using namespace lmabo;
using namespace lmabo::cli;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("lmabo_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& sub = "") const { return (path / sub).string(); }
};

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
}

int count_lines(const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    int n = 0;
    for (std::string l; std::getline(in, l);)
        if (l.find(needle) != std::string::npos) ++n;
    return n;
}

const char* kSmall = R"({
  "schema": "lmabo.campaign/1",
  "output": "runs",
  "problems": ["Griewank-2D", "SixHumpCamel"],
  "strategists": ["EI", "PosSTD", "Alt-EI-TS-1"],
  "seeds": [1, 2],
  "budget": 3,
  "fit_restarts": 1
})";

}  // namespace

TEST_CASE("manifest parsing reports the offending field") {
    const auto m = parse_manifest(kSmall);
    CHECK(m.problems.size() == 2);
    CHECK(m.strategists.size() == 3);
    CHECK(m.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK(m.budget == 3);
    CHECK_FALSE(m.init.has_value());
    CHECK(m.fit_restarts == 1);

    auto fails_on = [](const std::string& text, const std::string& field) {
        try {
            parse_manifest(text);
        } catch (const ConfigError& e) {
            return std::string(e.what()).find(field) != std::string::npos;
        }
        return false;
    };
    CHECK(fails_on(R"({"schema":"lmabo.campaign/2","problems":["Beale"],"strategists":["EI"],"seeds":[1]})", "schema"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","strategists":["EI"],"seeds":[1]})", "problems"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":[],"strategists":["EI"],"seeds":[1]})", "problems"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":["Beale"],"strategists":["EI"],"seeds":[1,1]})", "seeds[1]"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":["Beale"],"strategists":["EI"],"seeds":[-3]})", "seeds[0]"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":["Beale"],"strategists":["EI"],"seeds":[1],"budget":0})", "budget"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":["Beale"],"strategists":["EI"],"seeds":[1],"bogus":1})", "bogus"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":["Beale"],"strategists":["EI"],"seeds":[1],
                      "transport":{"api_key":"sk"}})", "transport.api_key"));
    CHECK(fails_on(R"({"schema":"lmabo.campaign/1","problems":["Beale"],"strategists":["EI"],"seeds":[1],
                      "overrides":[{"problem":"Beale","budget":"x"}]})", "overrides[0].budget"));
    CHECK_THROWS_AS(parse_manifest("{not json"), ConfigError);
}

TEST_CASE("cells expand problem x strategist x seed with overrides") {
    auto m = parse_manifest(R"({"schema":"lmabo.campaign/1","problems":["Beale","Levy"],"strategists":["EI","TS"],
        "seeds":[3,4,5],"budget":10,"overrides":[{"problem":"Levy","budget":20},{"strategist":"TS","init":4}]})");
    const auto cells = expand_cells(m);
    REQUIRE(cells.size() == 12);
    CHECK(cells[0].problem == "Beale");
    CHECK(cells[0].strategist == "EI");
    CHECK(cells[0].seed == 3);
    CHECK(cells[11].problem == "Levy");
    CHECK(cells[11].strategist == "TS");
    CHECK(cells[11].seed == 5);
    for (const auto& c : cells) {
        CHECK(c.budget == (c.problem == "Levy" ? 20 : 10));
        if (c.strategist == "TS")
            CHECK(c.init == 4);
        else
            CHECK_FALSE(c.init.has_value());
    }
}

TEST_CASE("dry run plans every cell and executes nothing") {
    TempDir dir("dry");
    write_file(dir.str("m.json"), kSmall);
    std::ostringstream out, err;
    CHECK(cmd_run(dir.str("m.json"), 1, true, out, err) == kOk);
    CHECK(count_lines(out.str(), "  new") == 12);
    CHECK(out.str().find("to run: 12") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.str("runs")));
}

TEST_CASE("campaign runs, then a rerun executes nothing, then analyze reports") {
    TempDir dir("run");
    write_file(dir.str("m.json"), kSmall);
    std::ostringstream out, err;
    REQUIRE(cmd_run(dir.str("m.json"), 2, false, out, err) == kOk);
    CHECK(out.str().find("executed 12 runs, 0 failed") != std::string::npos);
    int records = 0;
    for (const auto& e : fs::directory_iterator(dir.str("runs")))
        if (e.path().extension() == ".jsonl") ++records;
    CHECK(records == 12);

    std::ostringstream out2, err2;
    CHECK(cmd_run(dir.str("m.json"), 1, false, out2, err2) == kOk);
    CHECK(out2.str().find("executed 0 runs") != std::string::npos);

    std::ostringstream out3, err3;
    CHECK(cmd_run(dir.str("m.json"), 1, true, out3, err3) == kOk);
    CHECK(count_lines(out3.str(), "  complete") == 12);

    std::ostringstream out4, err4;
    REQUIRE(cmd_analyze(dir.str("runs"), "EI", dir.str("report"), out4, err4) == kOk);
    for (const char* f : {"table.csv", "auc.csv", "behavior.json", "summary.txt"})
        CHECK(fs::exists(dir.str(std::string("report/") + f)));
    CHECK(out4.str().find("records: 12") != std::string::npos);

    std::ostringstream out5, err5;
    CHECK(cmd_analyze(dir.str("runs"), "KG", dir.str("report"), out5, err5) == kConfigFailure);
    std::ostringstream out6, err6;
    CHECK(cmd_analyze(dir.str("nothing"), "EI", dir.str("report"), out6, err6) != kOk);
}

TEST_CASE("an unknown problem names the cell before any run") {
    TempDir dir("unknown");
    write_file(dir.str("m.json"), R"({"schema":"lmabo.campaign/1","problems":["Beale","Rosenbrok"],
        "strategists":["EI"],"seeds":[9],"budget":2})");
    std::ostringstream out, err;
    CHECK(cmd_run(dir.str("m.json"), 1, false, out, err) == kNotFound);
    CHECK(err.str().find("problem=Rosenbrok") != std::string::npos);
    CHECK(err.str().find("seed=9") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.str("runs")));

    write_file(dir.str("m2.json"), R"({"schema":"lmabo.campaign/1","problems":["Beale"],
        "strategists":["EI","Alt-EI-XX-2"],"seeds":[9],"budget":2})");
    std::ostringstream out2, err2;
    CHECK(cmd_run(dir.str("m2.json"), 1, false, out2, err2) != kOk);
    CHECK(err2.str().find("strategist=Alt-EI-XX-2") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.str("runs")));
}

TEST_CASE("a missing API key is a configuration failure before any run") {
    TempDir dir("key");
    write_file(dir.str("m.json"), R"({"schema":"lmabo.campaign/1","problems":["Beale"],
        "strategists":["EI","LMABO"],"seeds":[1],"budget":2,
        "transport":{"endpoint":"http://127.0.0.1:9/v1/chat/completions","api_key_env":"LMABO_TEST_UNSET_KEY_VAR"}})");
    ::unsetenv("LMABO_TEST_UNSET_KEY_VAR");
    std::ostringstream out, err;
    CHECK(cmd_run(dir.str("m.json"), 1, false, out, err) == kConfigFailure);
    CHECK(err.str().find("LMABO_TEST_UNSET_KEY_VAR") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.str("runs")));
}

TEST_CASE("LLM campaign with a down backend and its transcript") {
    TempDir dir("transcript");
    write_file(dir.str("m.json"), R"({"schema":"lmabo.campaign/1","problems":["Beale"],
        "strategists":["LMABO"],"seeds":[4],"budget":3,"fit_restarts":1,
        "transport":{"backend":"down","max_attempts":1,"backoff_initial_s":0}})");
    std::ostringstream out, err;
    REQUIRE(cmd_run(dir.str("m.json"), 1, false, out, err) == kOk);

    std::ostringstream t, terr;
    REQUIRE(cmd_transcript("Beale__LMABO__seed4", dir.str("runs"), t, terr) == kOk);
    CHECK(count_lines(t.str(), "--- turn") == 2 + 2 * 3);
    CHECK(count_lines(t.str(), ">>> decision: UCB (fallback)") == 3);
    CHECK(t.str().find("8 turns") != std::string::npos);

    std::ostringstream t2, terr2;
    CHECK(cmd_transcript("nope", dir.str("runs"), t2, terr2) == kNotFound);
}

TEST_CASE("list prints the registry") {
    std::ostringstream out, err;
    REQUIRE(cmd_list("problems", out, err) == kOk);
    std::istringstream in(out.str());
    int rows = -1;  // header
    for (std::string l; std::getline(in, l);) ++rows;
    CHECK(rows == static_cast<int>(bench::problem_registry().size()));
    CHECK(rows == 15);

    std::ostringstream s, serr;
    REQUIRE(cmd_list("strategists", s, serr) == kOk);
    CHECK(count_lines(s.str(), " static") == 12);
    CHECK(count_lines(s.str(), " llm") == 1);
    CHECK(s.str().find("GP-Hedge") != std::string::npos);

    std::ostringstream x, xerr;
    CHECK(cmd_list("other", x, xerr) == kConfigFailure);
}
