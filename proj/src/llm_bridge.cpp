#include "lmabo/llm_bridge.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "lmabo/errors.hpp"
#include "lmabo/log.hpp"

namespace lmabo::llm {

namespace detail {
extern const char kInitialPrompt[];
}

namespace {

double sample_std(const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    const double mean = v.mean();
    return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

std::string trim(const std::string& s, const char* chars = " \t\r\n") {
    const auto b = s.find_first_not_of(chars);
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(chars);
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

bool in_portfolio(acq::Kind kind, const std::vector<acq::Kind>& portfolio) {
    return std::find(portfolio.begin(), portfolio.end(), kind) != portfolio.end();
}

}  // namespace

void StateSnapshot::validate() const {
    for (double v : {f_min, f_max, f_mean, f_std, shortest_distance, ls_min, ls_max, ls_mean, ls_std, outputscale})
        if (!std::isfinite(v)) throw RenderError("state summary has a non-finite field");
    if (n_evaluated < 0 || remaining < 0 || dim < 1) throw RenderError("state summary has an invalid count");
    if (f_min > f_max || ls_min > ls_max || shortest_distance < 0.0)
        throw RenderError("state summary violates min <= max or distance >= 0");
}

StateSnapshot make_snapshot(const gp::GPModel& model, long remaining) {
    const auto& values = model.dataset().values;
    const auto& ls = model.params().lengthscales;
    if (values.size() == 0) throw ArgumentError("snapshot of an empty model");
    StateSnapshot s;
    s.n_evaluated = static_cast<long>(values.size());
    s.remaining = remaining;
    s.dim = static_cast<int>(model.dim());
    s.f_min = values.minCoeff();
    s.f_max = values.maxCoeff();
    s.f_mean = values.mean();
    s.f_std = sample_std(values);
    s.shortest_distance = values.size() > 1 ? model.shortest_distance_last() : 0.0;
    s.ls_min = ls.minCoeff();
    s.ls_max = ls.maxCoeff();
    s.ls_mean = ls.mean();
    s.ls_std = sample_std(ls);
    s.outputscale = model.params().outputscale;
    return s;
}

const std::string& initial_prompt_template() {
    static const std::string text(detail::kInitialPrompt);
    return text;
}

std::string render_initial_prompt(const std::vector<acq::Kind>& portfolio, const std::string& task_context) {
    if (!std::is_permutation(portfolio.begin(), portfolio.end(), acq::kPortfolio.begin(), acq::kPortfolio.end()))
        throw ArgumentError("the initial prompt describes the full twelve-member portfolio");
    const std::string& p0 = initial_prompt_template();
    const std::string context = trim(task_context);
    if (context.empty()) return p0;
    const auto first_break = p0.find("\n\n");
    return p0.substr(0, first_break) + "\n\n" + context + p0.substr(first_break);
}

std::string format_fixed3(double value) {
    if (!std::isfinite(value)) throw RenderError("cannot render a non-finite value");
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, 3);
    if (r.ec != std::errc()) throw RenderError("value too large to render");
    return std::string(buf, r.ptr);
}

std::string render_state_summary(const StateSnapshot& s) {
    s.validate();
    std::string out = "Current optimization state:\n";
    out += "- N: " + std::to_string(s.n_evaluated) + "\n";
    out += "- Remaining iterations: " + std::to_string(s.remaining) + "\n";
    out += "- D: " + std::to_string(s.dim) + "\n";
    out += "- f_range: Range [" + format_fixed3(s.f_min) + ", " + format_fixed3(s.f_max) + "], Mean " +
           format_fixed3(s.f_mean) + " (Std Dev " + format_fixed3(s.f_std) + ")\n";
    out += "- f_min: " + format_fixed3(s.f_min) + "\n";
    out += "- Shortest distance: " + format_fixed3(s.shortest_distance) + "\n";
    out += "- Lengthscales: Range [" + format_fixed3(s.ls_min) + ", " + format_fixed3(s.ls_max) + "], Mean " +
           format_fixed3(s.ls_mean) + " (Std Dev " + format_fixed3(s.ls_std) + ")\n";
    out += "- Outputscale: " + format_fixed3(s.outputscale);
    return out;
}

ParsedDecision parse_decision(const std::string& raw, const std::vector<acq::Kind>& portfolio) {
    const auto lines = split_lines(raw);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string line = trim(lines[i]);
        // Bullets, quotes and headings in front of the answer.
        while (!line.empty() && (line.rfind("- ", 0) == 0 || line.rfind("> ", 0) == 0 || line[0] == '#'))
            line = trim(line.substr(line[0] == '#' ? 1 : 2));
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string token = trim(line.substr(0, colon), " \t*_`'\"");
        if (token.empty()) continue;
        const auto kind = acq::kind_from_string(token);
        if (!kind || !in_portfolio(*kind, portfolio)) continue;

        std::string justification = trim(line.substr(colon + 1), " \t*_");
        for (std::size_t k = i + 1; k < lines.size(); ++k) justification += "\n" + lines[k];
        ParsedDecision d;
        d.kind = *kind;
        d.justification = trim(justification);
        d.fallback_used = false;
        d.raw = raw;
        return d;
    }
    ParsedDecision d;
    d.kind = acq::Kind::UCB;
    d.justification = raw;
    d.fallback_used = true;
    d.raw = raw;
    return d;
}

ParsedDecision parse_decision(const std::string& raw) {
    return parse_decision(raw, std::vector<acq::Kind>(acq::kPortfolio.begin(), acq::kPortfolio.end()));
}

// ---------------------------------------------------------------------------
// Transport

void TransportConfig::validate() const {
    if (max_attempts < 1) throw ConfigError("transport.max_attempts must be >= 1");
    if (!(backoff_initial_s >= 0.0) || !(backoff_factor >= 1.0) || !(backoff_max_s >= 0.0))
        throw ConfigError("transport backoff settings must be non-negative with factor >= 1");
    if (!(timeout_s > 0.0)) throw ConfigError("transport.timeout_s must be positive");
    if (!(temperature >= 0.0)) throw ConfigError("transport.temperature must be non-negative");
    if (requests_per_minute < 0 || history_window < 0)
        throw ConfigError("transport.requests_per_minute and history_window must be non-negative");
}

std::string EchoBackend::complete(const std::vector<ChatMessage>& messages) {
    if (!reply_.empty()) return reply_;
    return messages.empty() ? std::string() : messages.back().content;
}

std::string FlakyBackend::complete(const std::vector<ChatMessage>&) {
    ++calls_;
    if (remaining_failures_ > 0) {
        --remaining_failures_;
        throw BackendError("simulated transient failure", true);
    }
    return reply_;
}

std::string DownBackend::complete(const std::vector<ChatMessage>&) {
    ++calls_;
    throw BackendError("simulated outage: endpoint unreachable", true);
}

ScriptedBackend::ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {
    if (replies_.empty()) throw ArgumentError("scripted backend needs at least one reply");
}

std::string ScriptedBackend::complete(const std::vector<ChatMessage>& messages) {
    requests_.push_back(messages);
    const std::string& r = replies_[std::min(next_, replies_.size() - 1)];
    ++next_;
    return r;
}

RateLimiter& RateLimiter::global() {
    static RateLimiter limiter;
    return limiter;
}

void RateLimiter::set_limit(int requests_per_minute) {
    std::lock_guard lock(mutex_);
    limit_ = std::max(0, requests_per_minute);
}

void RateLimiter::acquire() {
    using clock = std::chrono::steady_clock;
    for (;;) {
        clock::duration wait{};
        {
            std::lock_guard lock(mutex_);
            if (limit_ == 0) return;
            const auto now = clock::now();
            std::erase_if(recent_, [&](auto t) { return now - t >= std::chrono::minutes(1); });
            if (static_cast<int>(recent_.size()) < limit_) {
                recent_.push_back(now);
                return;
            }
            wait = *std::min_element(recent_.begin(), recent_.end()) + std::chrono::minutes(1) - now;
        }
        std::this_thread::sleep_for(wait);
    }
}

std::unique_ptr<ChatBackend> make_backend(const std::string& kind, const TransportConfig& config) {
    if (kind == "http") return std::make_unique<HttpBackend>(config);
    if (kind == "echo") return std::make_unique<EchoBackend>();
    if (kind == "down") return std::make_unique<DownBackend>();
    if (kind.rfind("flaky:", 0) == 0) {
        const int n = std::stoi(kind.substr(6));
        return std::make_unique<FlakyBackend>(n, "EI: ok");
    }
    if (kind.rfind("scripted:", 0) == 0) {
        const std::string path = kind.substr(9);
        std::ifstream in(path);
        if (!in) throw IoError("cannot read scripted replies " + path);
        std::vector<std::string> replies;
        std::string line;
        while (std::getline(in, line))
            if (!trim(line).empty()) replies.push_back(line);
        return std::make_unique<ScriptedBackend>(std::move(replies));
    }
    throw ConfigError("unknown transport backend: " + kind);
}

// ---------------------------------------------------------------------------
// Transcript

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::string turn_to_jsonl(const std::string& run_id, const Turn& turn) {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["turn_index"] = turn.index;
    j["role"] = turn.role;
    j["content"] = turn.content;
    j["timestamp"] = turn.timestamp;
    if (!turn.error.empty()) j["error"] = turn.error;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::vector<Turn> load_transcript(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read transcript " + path);
    std::vector<Turn> turns;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Turn t;
            t.index = j.at("turn_index").get<int>();
            t.role = j.at("role").get<std::string>();
            t.content = j.at("content").get<std::string>();
            t.timestamp = j.at("timestamp").get<std::string>();
            if (j.contains("error")) t.error = j.at("error").get<std::string>();
            turns.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return turns;
}

std::vector<acq::Kind> replay_selections(const std::vector<Turn>& turns, const std::vector<acq::Kind>& portfolio) {
    std::vector<acq::Kind> kinds;
    bool seen_ack = false;
    for (const auto& t : turns) {
        if (t.role != "assistant") continue;
        if (!seen_ack) {
            seen_ack = true;
            continue;
        }
        kinds.push_back(parse_decision(t.content, portfolio).kind);
    }
    return kinds;
}

long estimate_tokens(const std::string& text) { return static_cast<long>((text.size() + 3) / 4); }

// ---------------------------------------------------------------------------
// Session

ChatSession::ChatSession(std::string run_id, std::shared_ptr<ChatBackend> backend, TransportConfig config,
                         std::string transcript_path)
    : run_id_(std::move(run_id)),
      backend_(std::move(backend)),
      config_(std::move(config)),
      transcript_path_(std::move(transcript_path)),
      sleeper_([](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); }) {
    if (!backend_) throw ArgumentError("chat session needs a backend");
    config_.validate();
    if (config_.requests_per_minute > 0) RateLimiter::global().set_limit(config_.requests_per_minute);
    if (!transcript_path_.empty()) {
        const auto parent = std::filesystem::path(transcript_path_).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
    }
}

void ChatSession::append(Turn turn) {
    turn.index = static_cast<int>(turns_.size());
    if (turn.timestamp.empty()) turn.timestamp = utc_timestamp();
    if (!transcript_path_.empty()) {
        // The first turn of a session replaces whatever an earlier session left behind.
        std::ofstream out(transcript_path_, transcript_open_ ? std::ios::app : std::ios::trunc);
        transcript_open_ = true;
        if (!out) throw IoError("cannot append to transcript " + transcript_path_);
        out << turn_to_jsonl(run_id_, turn) << '\n';
    }
    turns_.push_back(std::move(turn));
    in_history_.push_back(true);
}

void ChatSession::restore(std::vector<Turn> turns) {
    turns_.clear();
    in_history_.clear();
    usage_ = {};
    transcript_open_ = false;
    if (!transcript_path_.empty()) std::ofstream(transcript_path_, std::ios::trunc);
    for (auto& t : turns) {
        const bool failed = !t.error.empty();
        usage_.new_tokens += estimate_tokens(t.content);
        append(std::move(t));
        if (failed) {
            in_history_.back() = false;
            if (turns_.size() >= 2 && turns_.size() - 2 != 0) in_history_[turns_.size() - 2] = false;
        }
    }
}

std::vector<ChatMessage> ChatSession::history() const {
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < turns_.size(); ++i)
        if (in_history_[i]) kept.push_back(i);
    std::vector<ChatMessage> out;
    const std::size_t pinned = std::min<std::size_t>(2, kept.size());
    std::size_t start = pinned;
    if (config_.history_window > 0 && kept.size() - pinned > static_cast<std::size_t>(config_.history_window))
        start = kept.size() - static_cast<std::size_t>(config_.history_window);
    for (std::size_t k = 0; k < pinned; ++k) out.push_back({turns_[kept[k]].role, turns_[kept[k]].content});
    for (std::size_t k = start; k < kept.size(); ++k) out.push_back({turns_[kept[k]].role, turns_[kept[k]].content});
    return out;
}

ChatResult ChatSession::chat_turn(const std::string& message) {
    std::vector<ChatMessage> request = history();
    request.push_back({"user", message});
    Turn user;
    user.role = "user";
    user.content = message;
    append(std::move(user));
    const std::size_t user_index = turns_.size() - 1;

    long sent_tokens = 0;
    for (const auto& m : request) sent_tokens += estimate_tokens(m.content);

    double delay = config_.backoff_initial_s;
    std::string last_error;
    bool config_failure = false;
    int attempt = 0;
    while (attempt < config_.max_attempts) {
        ++attempt;
        try {
            RateLimiter::global().acquire();
            std::string reply = backend_->complete(request);
            Turn assistant;
            assistant.role = "assistant";
            assistant.content = reply;
            assistant.attempts = attempt;
            append(std::move(assistant));
            if (attempt > 1) log::info("chat turn succeeded after " + std::to_string(attempt) + " attempts");
            last_new_tokens_ = estimate_tokens(message) + estimate_tokens(reply);
            usage_.new_tokens += last_new_tokens_;
            usage_.cumulative_tokens += sent_tokens + estimate_tokens(reply);
            return {std::move(reply), attempt};
        } catch (const BackendError& e) {
            last_error = e.what();
            log::warn("chat attempt " + std::to_string(attempt) + "/" + std::to_string(config_.max_attempts) +
                      " failed: " + last_error);
            if (!e.retryable()) break;
        } catch (const ConfigError& e) {
            last_error = e.what();
            config_failure = true;
            break;
        } catch (const std::exception& e) {
            last_error = e.what();
            break;
        }
        if (attempt < config_.max_attempts) {
            sleeper_(delay);
            delay = std::min(delay * config_.backoff_factor, config_.backoff_max_s);
        }
    }

    if (user_index != 0) in_history_[user_index] = false;
    Turn failed;
    failed.role = "assistant";
    failed.error = "transport failed after " + std::to_string(attempt) + " attempt(s): " + last_error;
    failed.attempts = attempt;
    append(std::move(failed));
    in_history_.back() = false;
    last_new_tokens_ = estimate_tokens(message);
    usage_.new_tokens += last_new_tokens_;
    if (config_failure) throw ConfigError(last_error);
    throw TransportError(turns_.back().error);
}

bool start_conversation(ChatSession& session, const std::string& task_context) {
    const std::string p0 = render_initial_prompt(
        std::vector<acq::Kind>(acq::kPortfolio.begin(), acq::kPortfolio.end()), task_context);
    try {
        session.chat_turn(p0);
        return true;
    } catch (const std::exception& e) {
        log::warn("initial prompt was not acknowledged: " + std::string(e.what()));
        return false;
    }
}

Selection llm_select(const StateSnapshot& snapshot, ChatSession& session, const std::vector<acq::Kind>& portfolio) {
    Selection sel;
    std::string summary;
    try {
        summary = render_state_summary(snapshot);
    } catch (const std::exception& e) {
        sel.decision = parse_decision("", portfolio);
        sel.error = std::string("state summary: ") + e.what();
        log::warn(sel.error + "; falling back to UCB");
        return sel;
    }
    try {
        const ChatResult r = session.chat_turn(summary);
        sel.decision = parse_decision(r.reply, portfolio);
        if (sel.decision.fallback_used) log::warn("reply did not name a portfolio member; falling back to UCB");
    } catch (const std::exception& e) {
        sel.decision = parse_decision("", portfolio);
        sel.transport_failed = true;
        sel.error = e.what();
        log::warn("transport failure; falling back to UCB: " + sel.error);
    }
    if (!in_portfolio(acq::Kind::UCB, portfolio) && sel.decision.fallback_used)
        log::warn("UCB fallback is outside the configured portfolio");
    return sel;
}

}  // namespace lmabo::llm
