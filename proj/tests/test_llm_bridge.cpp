#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lmabo/errors.hpp"
#include "lmabo/llm_bridge.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

using namespace lmabo;
using namespace lmabo::llm;
using acq::Kind;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fixture(const std::string& name) { return read_file(std::string(LMABO_FIXTURE_DIR) + "/" + name); }

std::vector<Kind> full_portfolio() { return {acq::kPortfolio.begin(), acq::kPortfolio.end()}; }

StateSnapshot weierstrass_first() {
    StateSnapshot s;
    s.n_evaluated = 11;
    s.remaining = 50;
    s.dim = 5;
    s.f_min = -5.982;
    s.f_max = 83.765;
    s.f_mean = 26.466;
    s.f_std = 35.075;
    s.shortest_distance = 0.455;
    s.ls_min = 0.261;
    s.ls_max = 59.707;
    s.ls_mean = 27.581;
    s.ls_std = 24.557;
    s.outputscale = 0.898;
    return s;
}

TransportConfig fast_config() {
    TransportConfig c;
    c.backoff_initial_s = 0.0;
    return c;
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("lmabo_llm_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("initial prompt resource") {
    const std::string& p0 = initial_prompt_template();
    CHECK(p0 == read_file(std::string(LMABO_FIXTURE_DIR) + "/../../resources/prompts/p0.txt"));
    CHECK(p0.rfind("You are an expert in Bayesian Optimization", 0) == 0);
    CHECK(p0.back() == '.');
    for (const char* name : {"qKG (Knowledge Gradient)", "qPES", "qMES", "qJES (Joint Entropy Search)",
                             "3.  EI (Expected Improvement) \n"})
        CHECK(p0.find(name) != std::string::npos);
    CHECK(render_initial_prompt(full_portfolio()) == p0);
    CHECK(render_initial_prompt(full_portfolio(), "") == p0);
    CHECK(render_initial_prompt(full_portfolio(), "  \n ") == p0);
    CHECK_THROWS_AS(render_initial_prompt({Kind::EI, Kind::TS}), ArgumentError);
}

TEST_CASE("initial prompt with task context") {
    const std::string context = fixture("context_holdertable.txt");
    const std::string rendered = render_initial_prompt(full_portfolio(), context);
    CHECK(rendered == fixture("p0_holdertable.txt"));
    std::istringstream in(rendered);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() > 5);
    CHECK(lines[1].empty());
    CHECK(lines[2].find("many local minima") != std::string::npos);
    CHECK(lines[3].empty());
    CHECK(lines[4].rfind("For context", 0) == 0);
}

TEST_CASE("state summary rendering") {
    CHECK(render_state_summary(weierstrass_first()) == fixture("state_weierstrass_n11.txt"));

    StateSnapshot early;
    early.n_evaluated = 9;
    early.remaining = 46;
    early.dim = 2;
    early.f_min = 1.244;
    early.f_max = 194.081;
    early.f_mean = 56.326;
    early.f_std = 63.145;
    early.shortest_distance = 0.060;
    early.ls_min = 0.231;
    early.ls_max = 0.452;
    early.ls_mean = 0.342;
    early.ls_std = 0.110;
    early.outputscale = 0.865;
    CHECK(render_state_summary(early) == fixture("state_early_n9.txt"));

    CHECK(format_fixed3(0.0599999) == "0.060");
    CHECK(format_fixed3(-12.1354) == "-12.135");
    CHECK(format_fixed3(4234.4651) == "4234.465");
    CHECK(format_fixed3(7.0) == "7.000");
    CHECK_THROWS_AS(format_fixed3(std::numeric_limits<double>::quiet_NaN()), RenderError);

    StateSnapshot bad = weierstrass_first();
    bad.outputscale = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(render_state_summary(bad), RenderError);
    bad = weierstrass_first();
    bad.f_min = 100.0;
    CHECK_THROWS_AS(render_state_summary(bad), RenderError);
}

TEST_CASE("snapshot from a fitted model") {
    gp::Dataset ds;
    ds.bounds = {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Constant(2, 10.0)};
    ds.points.resize(4, 2);
    ds.points << 1, 1, 4, 2, 9, 9, 5, 5;
    ds.values.resize(4);
    ds.values << 3.0, -1.0, 7.0, 2.0;
    gp::KernelParams params;
    params.lengthscales.resize(2);
    params.lengthscales << 0.2, 0.6;
    params.outputscale = 1.5;
    params.noise_variance = 1e-4;
    const auto model = gp::GPModel::build(ds, params);
    const StateSnapshot s = make_snapshot(model, 17);
    CHECK(s.n_evaluated == 4);
    CHECK(s.remaining == 17);
    CHECK(s.dim == 2);
    CHECK(s.f_min == -1.0);
    CHECK(s.f_max == 7.0);
    CHECK(s.f_mean == doctest::Approx(2.75));
    // Sample standard deviation of {3, -1, 7, 2}.
    CHECK(s.f_std == doctest::Approx(std::sqrt((0.0625 + 14.0625 + 18.0625 + 0.5625) / 3.0)));
    // Last point (5,5) is nearest to (4,2): distance in unit coordinates.
    CHECK(s.shortest_distance == doctest::Approx(std::sqrt(0.01 + 0.09)));
    CHECK(s.ls_min == 0.2);
    CHECK(s.ls_max == 0.6);
    CHECK(s.ls_mean == doctest::Approx(0.4));
    CHECK(s.ls_std == doctest::Approx(std::sqrt(0.08)));
    CHECK(s.outputscale == 1.5);
}

TEST_CASE("parsing example replies") {
    const auto j = nlohmann::json::parse(fixture("example_responses.json"));
    std::vector<Kind> chosen;
    for (const auto& item : j.at("weierstrass")) {
        const auto d = parse_decision(item.at("reply").get<std::string>());
        CHECK_FALSE(d.fallback_used);
        CHECK(acq::abbreviation(d.kind) == item.at("kind").get<std::string>());
        chosen.push_back(d.kind);
    }
    CHECK(chosen == std::vector<Kind>{Kind::EI, Kind::LogEI, Kind::TS, Kind::LogEI, Kind::EI});

    const auto late = parse_decision(j.at("late_stage").at("reply").get<std::string>());
    CHECK(late.kind == Kind::JES);
    CHECK_FALSE(late.fallback_used);
    CHECK(late.justification.rfind("`f_min` remains unchanged", 0) == 0);

    const auto second = parse_decision(j.at("weierstrass")[1].at("reply").get<std::string>());
    CHECK(second.justification.rfind("Thompson Sampling successfully discovered a new f_min.", 0) == 0);
}

TEST_CASE("parsing rules and fallback") {
    const auto invalid = parse_decision("I think UCB maybe");
    CHECK(invalid.fallback_used);
    CHECK(invalid.kind == Kind::UCB);
    CHECK(invalid.justification == "I think UCB maybe");
    CHECK(parse_decision("").fallback_used);
    CHECK(parse_decision("Banana: not a function").fallback_used);

    CHECK(parse_decision("**TS**: explore more").kind == Kind::TS);
    CHECK(parse_decision("**qKG:** look ahead").kind == Kind::KG);
    CHECK(parse_decision("**qKG:** look ahead").justification == "look ahead");
    CHECK(parse_decision("  logei: lower case").kind == Kind::LogEI);
    CHECK(parse_decision("`PosSTD`: pure exploration").kind == Kind::PosSTD);
    CHECK(parse_decision("- MES: bullet").kind == Kind::MES);
    const auto two_line = parse_decision("Here is my choice.\nPI: small steps\nmore detail");
    CHECK(two_line.kind == Kind::PI);
    CHECK_FALSE(two_line.fallback_used);
    CHECK(two_line.justification == "small steps\nmore detail");

    // Members outside the configured portfolio fall back.
    const std::vector<Kind> curated = {Kind::EI, Kind::LogEI, Kind::TS};
    CHECK(parse_decision("PI: x", curated).fallback_used);
    CHECK(parse_decision("PI: x\nTS: y", curated).kind == Kind::TS);

    for (Kind k : acq::kPortfolio) {
        const std::string abbr = acq::abbreviation(k);
        CHECK(parse_decision(abbr + ": x").kind == k);
        CHECK(parse_decision("q" + abbr + ": x").kind == k);
    }
}

TEST_CASE("chat turns, retries and exhaustion") {
    {
        ChatSession session("echo", std::make_shared<EchoBackend>("EI: test"), fast_config());
        const auto r = session.chat_turn("hello");
        CHECK(r.reply == "EI: test");
        CHECK(r.attempts == 1);
        CHECK(session.turns().size() == 2);
    }
    {
        auto flaky = std::make_shared<FlakyBackend>(2, "TS: ok");
        TransportConfig cfg;
        cfg.backoff_initial_s = 0.5;
        ChatSession session("flaky", flaky, cfg);
        std::vector<double> sleeps;
        session.set_sleeper([&](double s) { sleeps.push_back(s); });
        const auto r = session.chat_turn("hello");
        CHECK(r.reply == "TS: ok");
        CHECK(r.attempts == 3);
        CHECK(session.turns().back().attempts == 3);
        CHECK(sleeps == std::vector<double>{0.5, 1.0});
    }
    {
        auto down = std::make_shared<DownBackend>();
        ChatSession session("down", down, fast_config());
        std::vector<double> sleeps;
        session.set_sleeper([&](double s) { sleeps.push_back(s); });
        CHECK_THROWS_AS(session.chat_turn("hello"), TransportError);
        CHECK(down->calls() == 5);
        CHECK(sleeps.size() == 4);
        REQUIRE(session.turns().size() == 2);
        CHECK(session.turns()[1].role == "assistant");
        CHECK(session.turns()[1].content.empty());
        CHECK_FALSE(session.turns()[1].error.empty());
    }
}

TEST_CASE("history excludes failed pairs and honours the window") {
    auto scripted = std::make_shared<ScriptedBackend>(std::vector<std::string>{"ack", "EI: a", "TS: b", "PI: c"});
    TransportConfig cfg = fast_config();
    cfg.history_window = 2;
    ChatSession session("window", scripted, cfg);
    session.chat_turn("P0");
    session.chat_turn("s1");
    session.chat_turn("s2");
    session.chat_turn("s3");
    const auto& reqs = scripted->requests();
    REQUIRE(reqs.size() == 4);
    // Last request: pinned P0 + ack, the two most recent turns (s2, "TS: b"), then s3.
    REQUIRE(reqs[3].size() == 5);
    CHECK(reqs[3][0].content == "P0");
    CHECK(reqs[3][0].role == "user");
    CHECK(reqs[3][1].content == "ack");
    CHECK(reqs[3][2].content == "s2");
    CHECK(reqs[3][3].content == "TS: b");
    CHECK(reqs[3][4].content == "s3");

    // A failure in the middle of an unlimited-history conversation.
    struct Toggle : ChatBackend {
        int call = 0;
        std::vector<std::vector<ChatMessage>> seen;
        std::string complete(const std::vector<ChatMessage>& m) override {
            seen.push_back(m);
            ++call;
            if (call == 2) throw BackendError("permanent", false);
            return "EI: r" + std::to_string(call);
        }
    };
    auto toggle = std::make_shared<Toggle>();
    ChatSession s2("toggle", toggle, fast_config());
    s2.chat_turn("P0");
    CHECK_THROWS_AS(s2.chat_turn("lost"), TransportError);
    s2.chat_turn("next");
    CHECK(toggle->call == 3);
    REQUIRE(toggle->seen[2].size() == 3);
    CHECK(toggle->seen[2][2].content == "next");
    CHECK(s2.turns().size() == 6);
}

TEST_CASE("token accounting") {
    ChatSession session("tokens", std::make_shared<EchoBackend>("12345678"), fast_config());
    session.chat_turn("abcd");      // 1 + 2 tokens new; 1 + 2 sent
    session.chat_turn("abcdefgh");  // 2 + 2 new; history 1 + 2 + 2 sent, reply 2
    CHECK(session.usage().new_tokens == 7);
    CHECK(session.usage().cumulative_tokens == 3 + 7);
    CHECK(session.last_new_tokens() == 4);
    CHECK(estimate_tokens("") == 0);
    CHECK(estimate_tokens("abcde") == 2);
}

TEST_CASE("scripted conversation, transcript and replay") {
    const auto j = nlohmann::json::parse(fixture("example_responses.json"));
    std::vector<std::string> replies = {"I understand the task."};
    for (const auto& item : j.at("weierstrass")) replies.push_back(item.at("reply").get<std::string>());

    const auto dir = scratch_dir("replay");
    const std::string path = (dir / "run.jsonl").string();
    ChatSession session("weierstrass-run", std::make_shared<ScriptedBackend>(replies), fast_config(), path);
    REQUIRE(start_conversation(session));
    std::vector<Kind> chosen;
    for (int i = 0; i < 5; ++i) {
        StateSnapshot s = weierstrass_first();
        s.n_evaluated = 11 + i;
        s.remaining = 50 - i;
        const auto sel = llm_select(s, session, full_portfolio());
        CHECK_FALSE(sel.decision.fallback_used);
        chosen.push_back(sel.decision.kind);
    }
    CHECK(chosen == std::vector<Kind>{Kind::EI, Kind::LogEI, Kind::TS, Kind::LogEI, Kind::EI});

    const auto turns = load_transcript(path);
    REQUIRE(turns.size() == 12);
    CHECK(turns[0].role == "user");
    CHECK(turns[0].content == initial_prompt_template());
    for (std::size_t i = 0; i < turns.size(); ++i) {
        CHECK(turns[i].index == static_cast<int>(i));
        CHECK(turns[i].role == (i % 2 == 0 ? "user" : "assistant"));
        CHECK(turns[i].timestamp.size() == 24);
    }
    CHECK(turns[2].content == render_state_summary(weierstrass_first()));
    CHECK(replay_selections(turns, full_portfolio()) == chosen);

    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    const auto line = nlohmann::json::parse(first);
    CHECK(line.at("run_id") == "weierstrass-run");
    CHECK(line.at("turn_index") == 0);
    CHECK(line.size() == 5);
    std::filesystem::remove_all(dir);
}

TEST_CASE("hard-down transport falls back every iteration") {
    const auto dir = scratch_dir("down");
    const std::string path = (dir / "down.jsonl").string();
    ChatSession session("down-run", std::make_shared<DownBackend>(), fast_config(), path);
    session.set_sleeper([](double) {});
    CHECK_FALSE(start_conversation(session));
    int fallbacks = 0;
    for (int i = 0; i < 50; ++i) {
        const auto sel = llm_select(weierstrass_first(), session, full_portfolio());
        CHECK(sel.transport_failed);
        CHECK(sel.decision.kind == Kind::UCB);
        fallbacks += sel.decision.fallback_used ? 1 : 0;
    }
    CHECK(fallbacks == 50);
    const auto turns = load_transcript(path);
    CHECK(turns.size() == 102);
    CHECK(replay_selections(turns, full_portfolio()) == std::vector<Kind>(50, Kind::UCB));
    std::filesystem::remove_all(dir);
}

TEST_CASE("fallback rate over a mock session") {
    std::vector<std::string> replies = {"ok"};
    for (int i = 0; i < 50; ++i) replies.push_back(i == 20 ? "no idea" : "EI: fine");
    ChatSession session("rate", std::make_shared<ScriptedBackend>(replies), fast_config());
    start_conversation(session);
    int fallbacks = 0;
    for (int i = 0; i < 50; ++i) fallbacks += llm_select(weierstrass_first(), session, full_portfolio()).decision.fallback_used;
    CHECK(static_cast<double>(fallbacks) / 50.0 == doctest::Approx(0.02));
}

TEST_CASE("render failure inside selection becomes a fallback") {
    ChatSession session("nan", std::make_shared<EchoBackend>("EI: x"), fast_config());
    StateSnapshot s = weierstrass_first();
    s.f_mean = std::numeric_limits<double>::quiet_NaN();
    const auto sel = llm_select(s, session, full_portfolio());
    CHECK(sel.decision.fallback_used);
    CHECK(sel.decision.kind == Kind::UCB);
    CHECK(session.turns().empty());
}

TEST_CASE("http wire format") {
    TransportConfig cfg;
    cfg.model = "test-model";
    const auto body = nlohmann::json::parse(HttpBackend::request_body(cfg, {{"user", "hi"}, {"assistant", "yo"}}));
    CHECK(body.at("model") == "test-model");
    CHECK(body.at("temperature") == 0.0);
    CHECK(body.at("messages").size() == 2);
    CHECK(body.at("messages")[1].at("role") == "assistant");
    CHECK(HttpBackend::parse_response(R"({"choices":[{"message":{"role":"assistant","content":"EI: go"}}]})") ==
          "EI: go");
    CHECK_THROWS_AS(HttpBackend::parse_response("{}"), BackendError);
    CHECK_THROWS_AS(HttpBackend::parse_response("not json"), BackendError);

    TransportConfig missing;
    missing.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    missing.api_key_env = "LMABO_TEST_UNSET_KEY_VARIABLE";
    ::unsetenv("LMABO_TEST_UNSET_KEY_VARIABLE");
    CHECK_THROWS_AS(HttpBackend{missing}, ConfigError);
    CHECK_THROWS_AS(make_backend("carrier-pigeon", cfg), ConfigError);
}

TEST_CASE("http backend against a local server") {
    httplib::Server server;
    int hits = 0;
    std::string auth;
    std::string received;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (hits <= 2) {
            res.status = 429;
            return;
        }
        auth = req.get_header_value("Authorization");
        received = req.body;
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"LogEI: from server"}}]})",
                        "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ::setenv("LMABO_TEST_KEY", "secret-token", 1);
    TransportConfig cfg = fast_config();
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    cfg.api_key_env = "LMABO_TEST_KEY";
    cfg.timeout_s = 5.0;
    ChatSession session("http", std::make_shared<HttpBackend>(cfg), cfg);
    const auto r = session.chat_turn("state");
    CHECK(r.reply == "LogEI: from server");
    CHECK(r.attempts == 3);
    CHECK(auth == "Bearer secret-token");
    CHECK(nlohmann::json::parse(received).at("messages")[0].at("content") == "state");

    server.stop();
    worker.join();
    ::unsetenv("LMABO_TEST_KEY");
}
