#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "hoitag/scene.hpp"
#include "hoitag/vocab.hpp"

namespace hoitag {

struct JudgeScore {
    double coi = 0.0;
    double bma = 0.0;
    double tdo = 0.0;
    std::string judge_id;
    std::string raw_response;
};

struct JudgeItem {
    std::string scene_description;
    std::string caption;
};

struct JudgeConfig {
    std::string endpoint;  // scheme://host[:port]/path
    std::string api_key;
    std::string model_id;
    std::vector<std::string> generator_ids;
    int max_parse_retries = 3;
    int max_network_retries = 4;
    double backoff_seconds = 0.5;
    double timeout_seconds = 60.0;
    int concurrency = 1;
};

class JudgeConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class JudgeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reads JUDGE_ENDPOINT, JUDGE_API_KEY and JUDGE_MODEL_ID.
inline JudgeConfig judge_config_from_env() {
    JudgeConfig c;
    auto get = [](const char* name) {
        const char* v = std::getenv(name);
        return v ? std::string(v) : std::string();
    };
    c.endpoint = get("JUDGE_ENDPOINT");
    c.api_key = get("JUDGE_API_KEY");
    c.model_id = get("JUDGE_MODEL_ID");
    if (c.endpoint.empty()) throw JudgeConfigError("JUDGE_ENDPOINT is not set");
    if (c.model_id.empty()) throw JudgeConfigError("JUDGE_MODEL_ID is not set");
    return c;
}

inline constexpr const char* kJudgeRubricPrompt =
    "You are grading a generated description of a surveillance image against the scene's ground truth.\n"
    "Score each dimension with an integer from 1 (worst) to 10 (best).\n"
    "CoI (correctness of information): are the entities and facts stated correct?\n"
    "BMA (behavior mapping accuracy): are the interactions between entities attributed correctly?\n"
    "TDO (threat detail orientation): are threatening behaviors reported without misdetection or omission?\n"
    "Answer with exactly three lines:\nCoI: <1-10>\nBMA: <1-10>\nTDO: <1-10>";

/// Ground-truth entities and interactions as plain lines for the judge.
inline std::string scene_description(const HoiPairRecord& r, const Vocabulary& vocab) {
    std::string s = "Entities:";
    for (const auto& e : r.entities) s += " " + vocab.entities.at(static_cast<std::size_t>(e.class_id));
    s += "\nInteractions:";
    if (r.triples.empty()) s += " none";
    for (const auto& t : r.triples) {
        const EntityRecord* h = r.entity(t.human_idx);
        const EntityRecord* o = r.entity(t.object_idx);
        if (!h || !o) continue;
        for (int a : t.action_ids)
            s += "\n- " + vocab.entities.at(static_cast<std::size_t>(h->class_id)) + " " +
                 vocab.actions.at(static_cast<std::size_t>(a)) + " " +
                 vocab.entities.at(static_cast<std::size_t>(o->class_id));
    }
    s += r.is_threat ? "\nThreat: yes" : "\nThreat: no";
    return s;
}

inline nlohmann::json judge_request_body(const JudgeItem& item, const std::string& model_id) {
    return {{"model", model_id},
            {"messages",
             {{{"role", "system"}, {"content", kJudgeRubricPrompt}},
              {{"role", "user"},
               {"content", "Scene ground truth:\n" + item.scene_description + "\n\nCandidate description:\n" +
                               item.caption}}}}};
}

/// The three scores, or nothing when a line is missing or out of [1,10].
inline std::optional<JudgeScore> parse_judge_response(const std::string& text, const std::string& judge_id) {
    static const std::regex coi(R"(CoI\s*:\s*(\d+))"), bma(R"(BMA\s*:\s*(\d+))"), tdo(R"(TDO\s*:\s*(\d+))");
    auto grab = [&](const std::regex& re) -> std::optional<double> {
        std::smatch m;
        if (!std::regex_search(text, m, re)) return std::nullopt;
        const std::string digits = m[1].str();
        if (digits.size() > 2) return std::nullopt;
        const int v = std::stoi(digits);
        if (v < 1 || v > 10) return std::nullopt;
        return static_cast<double>(v);
    };
    const auto c = grab(coi), b = grab(bma), t = grab(tdo);
    if (!c || !b || !t) return std::nullopt;
    return JudgeScore{*c, *b, *t, judge_id, text};
}

/// Message content of a chat-completion response; the raw body otherwise.
inline std::string completion_text(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        return body;
    }
}

namespace judge_detail {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) throw JudgeConfigError("judge endpoint '" + url + "' has no scheme");
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace judge_detail

/// Scores every item with the configured judge, preserving input order.
/// Malformed completions are re-requested up to max_parse_retries times;
/// transport failures and 429/5xx replies back off exponentially.
inline std::vector<JudgeScore> judge_scores(const std::vector<JudgeItem>& items, const JudgeConfig& cfg) {
    if (cfg.model_id.empty()) throw JudgeConfigError("judge model id is empty");
    for (const auto& g : cfg.generator_ids)
        if (g == cfg.model_id)
            throw JudgeConfigError("judge '" + cfg.model_id +
                                   "' also produced the captions under review; pick a different judge");
    const auto ep = judge_detail::split_endpoint(cfg.endpoint);

    auto score_one = [&](const JudgeItem& item) {
        httplib::Client client(ep.origin);
        const auto secs = std::chrono::duration<double>(cfg.timeout_seconds);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
        httplib::Headers headers;
        if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
        const std::string body = judge_request_body(item, cfg.model_id).dump();

        std::string last;
        for (int attempt = 0; attempt <= cfg.max_parse_retries; ++attempt) {
            std::string text;
            for (int net = 0;; ++net) {
                auto res = client.Post(ep.path, headers, body, "application/json");
                const bool transient = !res || res->status == 429 || res->status >= 500;
                if (!transient) {
                    if (res->status != 200)
                        throw JudgeError("judge returned HTTP " + std::to_string(res->status) + ": " + res->body);
                    text = completion_text(res->body);
                    break;
                }
                if (net >= cfg.max_network_retries)
                    throw JudgeError(res ? "judge kept failing with HTTP " + std::to_string(res->status)
                                         : "judge unreachable: " + httplib::to_string(res.error()));
                std::this_thread::sleep_for(std::chrono::duration<double>(cfg.backoff_seconds * std::pow(2.0, net)));
            }
            if (auto s = parse_judge_response(text, cfg.model_id)) return *s;
            last = text;
        }
        throw JudgeError("unparseable judge response after " + std::to_string(cfg.max_parse_retries) +
                         " retries: " + last);
    };

    std::vector<JudgeScore> out(items.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            {
                std::lock_guard lock(failure_mu);
                if (failure) return;
            }
            try {
                out[i] = score_one(items[i]);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    const std::size_t n_threads = std::min<std::size_t>(std::max(1, cfg.concurrency), std::max<std::size_t>(1, items.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

}  // namespace hoitag
