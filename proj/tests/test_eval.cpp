#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "hoitag/judge.hpp"
#include "hoitag/report.hpp"
#include "hoitag/rubric.hpp"
#include "hoitag/tag_metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace hoitag;

namespace {

const std::filesystem::path kSource = HOITAG_SOURCE_DIR;

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

HoiPairRecord knife_scene() {
    HoiPairRecord r;
    r.image_id = "k";
    r.entities = {{0, 0, {}}, {1, 0, {}}, {2, 1, {}}};
    r.triples = {{0, 2, {0}}, {0, 1, {3}}};
    r.is_threat = true;
    return r;
}

/// Local chat-completion stand-in on a free port.
class StubJudge {
public:
    explicit StubJudge(std::function<void(const httplib::Request&, httplib::Response&)> handler) {
        server_.Post("/v1/chat/completions", [this, handler](const httplib::Request& q, httplib::Response& s) {
            ++requests;
            handler(q, s);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubJudge() {
        server_.stop();
        thread_.join();
    }
    JudgeConfig config() const {
        JudgeConfig c;
        c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
        c.model_id = "stub-judge";
        c.generator_ids = {"hoitag"};
        c.backoff_seconds = 0.001;
        c.timeout_seconds = 5;
        return c;
    }
    std::atomic<int> requests{0};

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

void reply_with(httplib::Response& s, const std::string& content) {
    nlohmann::json body = {{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
    s.set_content(body.dump(), "application/json");
}

}  // namespace

TEST(TagMetrics, WorkedExamples) {
    auto r = tag_metrics({{"A", "B", "C"}}, {{"A", "B", "D"}});
    EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.jaccard, 0.5);

    r = tag_metrics({{"x", "y", "z"}}, {{"y"}});
    EXPECT_EQ(r.top_k[1], 0.0);
    EXPECT_EQ(r.top_k[3], 1.0);
    EXPECT_EQ(r.top_k[5], 1.0);

    r = tag_metrics({{"a"}, {"b", "c"}, {}}, {{"a"}, {"b", "c"}, {}});
    for (double v : {r.precision, r.recall, r.f1, r.jaccard, r.top_k[1], r.top_k[3], r.top_k[5]}) EXPECT_EQ(v, 1.0);
    EXPECT_EQ(r.n_samples, 3u);

    EXPECT_THROW(tag_metrics({{"a"}}, {}), std::invalid_argument);
    EXPECT_THROW(tag_metrics({}, {}), std::invalid_argument);
}

TEST(TagMetrics, MatchesBruteForceAndProperties) {
    Rng rng(17);
    const std::vector<std::string> pool{"a", "b", "c", "d", "e", "f", "g"};
    for (int inst = 0; inst < 100; ++inst) {
        const int n = rng.uniform_int(1, 6);
        std::vector<std::vector<std::string>> pred(n);
        std::vector<std::set<std::string>> truth(n);
        for (int i = 0; i < n; ++i) {
            for (int k = rng.uniform_int(0, 6); k > 0; --k) pred[i].push_back(pool[rng.uniform_int(0, 6)]);
            for (int k = rng.uniform_int(0, 4); k > 0; --k) truth[i].insert(pool[rng.uniform_int(0, 6)]);
        }
        const auto got = tag_metrics(pred, truth), want = hoitag::testing::brute_force_tag_metrics(pred, truth);
        EXPECT_EQ(got.precision, want.precision);
        EXPECT_EQ(got.recall, want.recall);
        EXPECT_EQ(got.jaccard, want.jaccard);
        EXPECT_EQ(got.f1, want.f1);
        EXPECT_EQ(got.top_k, want.top_k);
        EXPECT_LE(got.top_k.at(1), got.top_k.at(3));
        EXPECT_LE(got.top_k.at(3), got.top_k.at(5));
        EXPECT_LE(got.jaccard, std::min(got.precision, got.recall) + 1e-15);
        if (got.precision + got.recall > 0) {
            EXPECT_NEAR(got.f1, 2 * got.precision * got.recall / (got.precision + got.recall), 1e-15);
        }
    }
}

TEST(Rubric, OwnCaptionScoresOne) {
    const Vocabulary v = Vocabulary::standard();
    const Tokenizer tok = Tokenizer::for_vocabulary(v);
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto rec = build_synthetic_scene(s, {}).second;
        const auto sc = rubric_scores(align_caption(rec, v, tok).text, rec, v);
        ASSERT_EQ(sc, (RubricScore{1.0, 1.0, 1.0})) << rec.image_id;
    }
}

TEST(Rubric, HandBuiltFixtures) {
    const Vocabulary v = Vocabulary::standard();
    const auto r = knife_scene();
    const auto none = rubric_scores("Nothing to see here.", r, v);
    EXPECT_EQ(none.coi_proxy, 0.0);
    EXPECT_EQ(none.bma_proxy, 0.0);
    EXPECT_EQ(none.tdo_proxy, 0.0);

    // Truth triples: (person hold knife), (person attack person). One action swapped.
    const auto swapped =
        rubric_scores("The scene shows a person and a knife. The person carry the knife. The person attack the person.", r, v);
    EXPECT_EQ(swapped.coi_proxy, 1.0);
    EXPECT_DOUBLE_EQ(swapped.bma_proxy, 0.5);
    EXPECT_EQ(swapped.tdo_proxy, 1.0);

    const auto extra = rubric_scores("The person hold and attack the knife. A gun.", r, v);
    // Mentions {person, knife, gun} vs {person, knife}: P 2/3, R 1 -> 0.8.
    EXPECT_DOUBLE_EQ(extra.coi_proxy, 0.8);
    // Extracted {hold knife, attack knife} vs truth {hold knife, attack person}: 1 of 2 each way.
    EXPECT_DOUBLE_EQ(extra.bma_proxy, 0.5);
    EXPECT_EQ(extra.tdo_proxy, 1.0);

    HoiPairRecord calm = r;
    calm.triples = {{0, 2, {0}}};
    calm.is_threat = false;
    EXPECT_EQ(rubric_scores("The person.", calm, v).tdo_proxy, 1.0);

    EXPECT_EQ(extract_triples("The person hold the knife", v).size(), 0u);
    EXPECT_EQ(extract_triples("The car hijack the wall.", v),
              (std::set<TripleName>{{"car", "hijack", "wall"}}));
    const auto m = mean_rubric({{1, 0, 0.5}, {0, 1, 0.5}});
    EXPECT_EQ(m, (RubricScore{0.5, 0.5, 0.5}));
}

TEST(Report, PublishedRowsRenderByteExact) {
    const auto t1 = build_report(read_score_csv(kSource / "tests/fixtures/table1_scores.csv"));
    EXPECT_EQ(t1.text, slurp(kSource / "tests/golden/table1_report.txt"));
    EXPECT_NE(t1.text.find("Ours         | 5.68 5.43 4.78 "), std::string::npos);
    const auto t2 = build_tag_report(read_tag_csv(kSource / "tests/fixtures/table2_tags.csv"));
    EXPECT_EQ(t2.text, slurp(kSource / "tests/golden/table2_report.txt"));
    EXPECT_NE(t2.text.find("Tag2Text | 0.40/0.19/0.24 "), std::string::npos);
    const auto t3 = build_report(read_score_csv(kSource / "tests/fixtures/table3_ablation.csv"));
    EXPECT_EQ(t3.text, slurp(kSource / "tests/golden/table3_report.txt"));
}

TEST(Report, CsvRoundTrip) {
    const auto dir = hoitag::testing::temp_dir("report");
    const auto table = read_score_csv(kSource / "tests/fixtures/table1_scores.csv");
    const auto r = build_report(table);
    std::ofstream(dir / "again.csv") << r.csv;
    const auto back = read_score_csv(dir / "again.csv");
    EXPECT_EQ(back.metrics, table.metrics);
    ASSERT_EQ(back.rows.size(), table.rows.size());
    for (std::size_t i = 0; i < back.rows.size(); ++i) EXPECT_EQ(back.rows[i].values, table.rows[i].values);
    EXPECT_EQ(build_report(back).text, r.text);

    const auto tags = build_tag_report(read_tag_csv(kSource / "tests/fixtures/table2_tags.csv"));
    std::ofstream(dir / "tags.csv") << tags.csv;
    EXPECT_EQ(build_tag_report(read_tag_csv(dir / "tags.csv")).text, tags.text);

    std::ofstream(dir / "bad.csv") << "dataset,model,CoI\nd,m,abc\n";
    EXPECT_THROW(read_score_csv(dir / "bad.csv"), ReportError);
    std::ofstream(dir / "ragged.csv") << "dataset,model,CoI\nd,m\n";
    EXPECT_THROW(read_score_csv(dir / "ragged.csv"), ReportError);
}

TEST(Report, BestFlagsAndDegenerateTables) {
    ScoreTable one{{"coi_proxy", "bma_proxy", "tdo_proxy"}, {{"synthetic", "Ours", {0.9, 0.8, 0.7}}}};
    const auto single = build_report(one);
    EXPECT_NE(single.text.find("Ours  | 0.90      0.80      0.70\n"), std::string::npos);
    EXPECT_NE(single.text.find("best synthetic/bma_proxy: Ours (0.80)"), std::string::npos);
    EXPECT_EQ(single.csv, "dataset,model,coi_proxy,bma_proxy,tdo_proxy\nsynthetic,Ours,0.9,0.8,0.7\n");

    ScoreTable two = one;
    two.rows.push_back({"synthetic", "Other", {0.1, 0.2, 0.3}});
    const auto rendered = build_report(two).text;
    for (const char* m : {"coi_proxy", "bma_proxy", "tdo_proxy"})
        EXPECT_NE(rendered.find(std::string("best synthetic/") + m + ": Ours ("), std::string::npos);

    EXPECT_THROW(build_report(ScoreTable{{"x"}, {}}), ReportError);
    EXPECT_THROW(build_report(ScoreTable{{"x"}, {{"d", "m", {1, 2}}}}), ReportError);
}

TEST(Judge, ParsesScoreLines) {
    const auto s = parse_judge_response("CoI: 5 BMA: 5 TDO: 5", "j");
    ASSERT_TRUE(s);
    EXPECT_EQ(s->coi, 5);
    EXPECT_EQ(s->bma, 5);
    EXPECT_EQ(s->tdo, 5);
    EXPECT_EQ(s->judge_id, "j");
    EXPECT_TRUE(parse_judge_response("CoI: 10\nBMA:1\nTDO : 7", "j"));
    EXPECT_FALSE(parse_judge_response("CoI: 5 BMA: 5", "j"));
    EXPECT_FALSE(parse_judge_response("CoI: 0 BMA: 5 TDO: 5", "j"));
    EXPECT_FALSE(parse_judge_response("CoI: 11 BMA: 5 TDO: 5", "j"));
}

TEST(Judge, SelfPreferenceGuardSendsNothing) {
    StubJudge stub([](const httplib::Request&, httplib::Response& s) { reply_with(s, "CoI: 5 BMA: 5 TDO: 5"); });
    auto cfg = stub.config();
    cfg.generator_ids.push_back(cfg.model_id);
    EXPECT_THROW(judge_scores({{"scene", "caption"}}, cfg), JudgeConfigError);
    EXPECT_EQ(stub.requests.load(), 0);
}

TEST(Judge, StubRoundTripAndRequestShape) {
    const Vocabulary v = Vocabulary::standard();
    const auto desc = scene_description(knife_scene(), v);
    EXPECT_NE(desc.find("- person attack person"), std::string::npos);
    nlohmann::json seen;
    StubJudge stub([&](const httplib::Request& q, httplib::Response& s) {
        seen = nlohmann::json::parse(q.body);
        reply_with(s, "CoI: 5\nBMA: 5\nTDO: 5");
    });
    const auto out = judge_scores({{desc, "The person attack the person."}}, stub.config());
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].coi, 5);
    EXPECT_EQ(out[0].judge_id, "stub-judge");
    EXPECT_EQ(seen["model"], "stub-judge");
    ASSERT_EQ(seen["messages"].size(), 2u);
    EXPECT_EQ(seen["messages"][0]["role"], "system");
    EXPECT_EQ(seen["messages"][0]["content"], kJudgeRubricPrompt);
    EXPECT_NE(seen["messages"][1]["content"].get<std::string>().find("The person attack the person."),
              std::string::npos);
}

TEST(Judge, MissingScoreFailsAfterRetries) {
    StubJudge stub([](const httplib::Request&, httplib::Response& s) { reply_with(s, "CoI: 5 BMA: 5"); });
    EXPECT_THROW(judge_scores({{"scene", "caption"}}, stub.config()), JudgeError);
    EXPECT_EQ(stub.requests.load(), 1 + 3);
}

TEST(Judge, TransientErrorsBackOffThenSucceed) {
    std::atomic<int> calls{0};
    StubJudge stub([&](const httplib::Request&, httplib::Response& s) {
        if (calls++ < 2) {
            s.status = 503;
            return;
        }
        reply_with(s, "CoI: 7 BMA: 6 TDO: 5");
    });
    const auto out = judge_scores({{"scene", "caption"}}, stub.config());
    EXPECT_EQ(out[0].bma, 6);
    EXPECT_EQ(stub.requests.load(), 3);

    StubJudge down([](const httplib::Request&, httplib::Response& s) { s.status = 500; });
    auto cfg = down.config();
    cfg.max_network_retries = 2;
    EXPECT_THROW(judge_scores({{"scene", "caption"}}, cfg), JudgeError);
    EXPECT_EQ(down.requests.load(), 3);

    StubJudge denied([](const httplib::Request&, httplib::Response& s) { s.status = 401; });
    EXPECT_THROW(judge_scores({{"scene", "caption"}}, denied.config()), JudgeError);
    EXPECT_EQ(denied.requests.load(), 1);
}

TEST(Judge, ConcurrentResultsKeepInputOrder) {
    StubJudge stub([](const httplib::Request& q, httplib::Response& s) {
        const auto body = nlohmann::json::parse(q.body);
        const std::string content = body["messages"][1]["content"];
        const int k = std::stoi(content.substr(content.rfind('\n') + 1));
        std::this_thread::sleep_for(std::chrono::milliseconds((7 - k % 7) * 3));
        reply_with(s, "CoI: " + std::to_string(k % 10 + 1) + " BMA: 1 TDO: 1");
    });
    auto cfg = stub.config();
    cfg.concurrency = 4;
    std::vector<JudgeItem> items;
    for (int k = 0; k < 20; ++k) items.push_back({"scene", std::to_string(k)});
    const auto out = judge_scores(items, cfg);
    ASSERT_EQ(out.size(), 20u);
    for (int k = 0; k < 20; ++k) EXPECT_EQ(out[static_cast<std::size_t>(k)].coi, k % 10 + 1);
}

TEST(Judge, UnreachableEndpointIsAnError) {
    JudgeConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/none";
    cfg.model_id = "j";
    cfg.max_network_retries = 1;
    cfg.backoff_seconds = 0.001;
    cfg.timeout_seconds = 1;
    EXPECT_THROW(judge_scores({{"s", "c"}}, cfg), JudgeError);
    cfg.endpoint = "https://127.0.0.1:1/none";
    try {
        judge_scores({{"s", "c"}}, cfg);
        ADD_FAILURE() << "expected JudgeError";
    } catch (const JudgeError& e) {
        EXPECT_NE(std::string(e.what()).find("unreachable"), std::string::npos) << e.what();
    }
}
