#pragma once

// Conversation with a chat-completion model that picks the acquisition function
// each iteration: prompt rendering, reply parsing, transport and transcripts.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmabo/acquisition.hpp"
#include "lmabo/errors.hpp"
#include "lmabo/surrogate.hpp"

namespace lmabo::llm {

struct StateSnapshot {
    long n_evaluated = 0;
    long remaining = 0;
    int dim = 0;
    double f_min = 0.0, f_max = 0.0, f_mean = 0.0, f_std = 0.0;  // raw objective units
    double shortest_distance = 0.0;                               // normalized inputs
    double ls_min = 0.0, ls_max = 0.0, ls_mean = 0.0, ls_std = 0.0;
    double outputscale = 0.0;

    void validate() const;
};

/// Summary of the data and fitted hyperparameters. Standard deviations use the n-1
/// denominator (0 for a single value).
StateSnapshot make_snapshot(const gp::GPModel& model, long remaining);

/// The bundled initial prompt, byte for byte.
const std::string& initial_prompt_template();

/// The initial prompt with an optional task description inserted as its own paragraph
/// after the opening sentence. Blank context counts as absent.
std::string render_initial_prompt(const std::vector<acq::Kind>& portfolio, const std::string& task_context = "");

std::string render_state_summary(const StateSnapshot& snapshot);

/// Locale-independent fixed three-decimal rendering; throws RenderError on non-finite input.
std::string format_fixed3(double value);

struct ParsedDecision {
    acq::Kind kind = acq::Kind::UCB;
    std::string justification;
    bool fallback_used = true;
    std::string raw;
};

/// First line of the form "<abbreviation>: <justification>" whose abbreviation is in the
/// portfolio wins; anything else falls back to UCB.
ParsedDecision parse_decision(const std::string& raw, const std::vector<acq::Kind>& portfolio);
ParsedDecision parse_decision(const std::string& raw);

// ---------------------------------------------------------------------------
// Transport

struct ChatMessage {
    std::string role;
    std::string content;
};

/// Thrown by backends; `retryable` marks rate limits, timeouts and 5xx responses.
class BackendError : public TransportError {
public:
    BackendError(const std::string& what, bool retryable) : TransportError(what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// One completion for the given history; throws BackendError or ConfigError.
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
};

struct TransportConfig {
    std::string endpoint;                       // chat-completions URL; empty → read endpoint_env
    std::string model = "gemini-2.5-flash";
    double temperature = 0.0;
    std::string api_key_env = "LMABO_API_KEY";
    std::string endpoint_env = "LMABO_ENDPOINT";
    int max_attempts = 5;
    double backoff_initial_s = 1.0;
    double backoff_factor = 2.0;
    double backoff_max_s = 30.0;
    double timeout_s = 120.0;
    int requests_per_minute = 0;  // 0 = unlimited; shared by every session in the process
    int history_window = 0;       // most recent turns kept after the pinned prompt pair; 0 = all

    void validate() const;
};

/// OpenAI-compatible HTTP(S) chat-completions client.
class HttpBackend : public ChatBackend {
public:
    explicit HttpBackend(TransportConfig config);
    std::string complete(const std::vector<ChatMessage>& messages) override;

    /// Request body as sent on the wire.
    static std::string request_body(const TransportConfig& config, const std::vector<ChatMessage>& messages);
    /// Extracts choices[0].message.content; throws BackendError on malformed bodies.
    static std::string parse_response(const std::string& body);

private:
    TransportConfig config_;
    std::string api_key_;
    std::string endpoint_;
};

/// Replies with a fixed text, or echoes the last message when `reply` is empty.
class EchoBackend : public ChatBackend {
public:
    explicit EchoBackend(std::string reply = "") : reply_(std::move(reply)) {}
    std::string complete(const std::vector<ChatMessage>& messages) override;

private:
    std::string reply_;
};

/// Fails the first `failures` calls (retryable), then replies with `reply`.
class FlakyBackend : public ChatBackend {
public:
    FlakyBackend(int failures, std::string reply) : remaining_failures_(failures), reply_(std::move(reply)) {}
    std::string complete(const std::vector<ChatMessage>& messages) override;
    int calls() const { return calls_; }

private:
    int remaining_failures_;
    std::string reply_;
    int calls_ = 0;
};

/// Always fails with a retryable error.
class DownBackend : public ChatBackend {
public:
    std::string complete(const std::vector<ChatMessage>& messages) override;
    int calls() const { return calls_; }

private:
    int calls_ = 0;
};

/// Returns the replies in order; once exhausted, keeps returning the last one.
class ScriptedBackend : public ChatBackend {
public:
    explicit ScriptedBackend(std::vector<std::string> replies);
    std::string complete(const std::vector<ChatMessage>& messages) override;
    /// Histories received so far, one per call.
    const std::vector<std::vector<ChatMessage>>& requests() const { return requests_; }

private:
    std::vector<std::string> replies_;
    std::size_t next_ = 0;
    std::vector<std::vector<ChatMessage>> requests_;
};

/// Process-wide sliding-window limit on requests per minute.
class RateLimiter {
public:
    static RateLimiter& global();
    void set_limit(int requests_per_minute);
    void acquire();

private:
    std::mutex mutex_;
    int limit_ = 0;
    std::vector<std::chrono::steady_clock::time_point> recent_;
};

/// Creates the backend named by `kind`: "http", "echo", "down", "flaky:<n>", or
/// "scripted:<path>" (one reply per line).
std::unique_ptr<ChatBackend> make_backend(const std::string& kind, const TransportConfig& config);

// ---------------------------------------------------------------------------
// Transcript and session

struct Turn {
    int index = 0;
    std::string role;     // "user" or "assistant"
    std::string content;
    std::string timestamp;  // UTC, ISO 8601 with milliseconds
    std::string error;      // set on a failed assistant turn (content is then empty)
    int attempts = 0;       // transport attempts, assistant turns only
};

std::string utc_timestamp();

/// One JSON object per line: {run_id, turn_index, role, content, timestamp[, error]}.
std::string turn_to_jsonl(const std::string& run_id, const Turn& turn);
std::vector<Turn> load_transcript(const std::string& path);

/// Kinds chosen in a persisted transcript: every assistant reply after the first
/// (the acknowledgment), parsed with the same rules as live selection.
std::vector<acq::Kind> replay_selections(const std::vector<Turn>& turns, const std::vector<acq::Kind>& portfolio);

struct ChatResult {
    std::string reply;
    int attempts = 0;
};

struct TokenUsage {
    long new_tokens = 0;         // this turn's message and reply only
    long cumulative_tokens = 0;  // everything sent (history included) plus replies
};

/// Rough count used for budgeting: ceil(characters / 4).
long estimate_tokens(const std::string& text);

class ChatSession {
public:
    using Sleeper = std::function<void(double seconds)>;

    ChatSession(std::string run_id, std::shared_ptr<ChatBackend> backend, TransportConfig config,
                std::string transcript_path = "");

    /// Replaces the real sleep between retries (tests pass a recorder).
    void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }

    /// Sends `message` with the retained history and appends both turns. After the last
    /// attempt fails, an empty assistant turn with the error is appended and TransportError
    /// is thrown; failed pairs are never resent as history.
    ChatResult chat_turn(const std::string& message);

    /// History sent with the next request: the first two turns stay pinned and at most
    /// `history_window` later turns follow.
    std::vector<ChatMessage> history() const;

    /// Continues an interrupted conversation: the transcript file is rewritten with
    /// `turns` and failed pairs are excluded from history as they were originally.
    void restore(std::vector<Turn> turns);

    const std::vector<Turn>& turns() const { return turns_; }
    const std::string& run_id() const { return run_id_; }
    const TokenUsage& usage() const { return usage_; }
    long last_new_tokens() const { return last_new_tokens_; }

private:
    void append(Turn turn);

    std::string run_id_;
    std::shared_ptr<ChatBackend> backend_;
    TransportConfig config_;
    std::string transcript_path_;
    bool transcript_open_ = false;
    std::vector<Turn> turns_;
    std::vector<bool> in_history_;
    TokenUsage usage_;
    long last_new_tokens_ = 0;
    Sleeper sleeper_;
};

/// Sends the initial prompt and records the acknowledgment. Returns false (and logs)
/// when the transport fails; the session stays usable.
bool start_conversation(ChatSession& session, const std::string& task_context = "");

struct Selection {
    ParsedDecision decision;
    bool transport_failed = false;
    std::string error;
};

/// Renders the snapshot, asks the model and parses the reply. Never throws: any failure
/// becomes a UCB fallback.
Selection llm_select(const StateSnapshot& snapshot, ChatSession& session, const std::vector<acq::Kind>& portfolio);

}  // namespace lmabo::llm
