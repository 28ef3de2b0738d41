#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hoitag/dataset.hpp"
#include "test_support.hpp"

using namespace hoitag;

namespace {

HoiPairRecord record_from_json(const nlohmann::json& j) {
    HoiPairRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    for (const auto& e : j.at("entities")) {
        const auto b = e.at("box");
        r.entities.push_back({e.at("id").get<int>(), e.at("class_id").get<int>(),
                              Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()}});
    }
    for (const auto& t : j.at("triples"))
        r.triples.push_back({t.at("h").get<int>(), t.at("o").get<int>(), t.at("actions").get<std::vector<int>>()});
    r.is_threat = j.at("is_threat").get<bool>();
    return r;
}

bool brute_force_threat(const HoiPairRecord& r, const Vocabulary& v) {
    for (const auto& t : r.triples)
        for (int a : t.action_ids)
            for (const auto& name : v.threat_actions)
                if (v.actions[static_cast<std::size_t>(a)] == name) return true;
    return false;
}

std::string read_all(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Scene, SeedZeroMatchesGolden) {
    std::ifstream in(std::filesystem::path(HOITAG_SOURCE_DIR) / "tests/golden/scene_seed0.json");
    ASSERT_TRUE(in);
    const auto golden = record_from_json(nlohmann::json::parse(in));
    EXPECT_EQ(build_synthetic_scene(0, {}).second, golden);
}

TEST(Scene, DeterministicAndWellFormed) {
    const GeneratorConfig cfg;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto a = build_synthetic_scene(s, cfg), b = build_synthetic_scene(s, cfg);
        EXPECT_EQ(a.first, b.first);
        EXPECT_EQ(a.second, b.second);
        const auto& [img, rec] = a;
        EXPECT_EQ(img.size, 64);
        EXPECT_EQ(img.pixels.size(), 64u * 64u * 3u);
        for (double p : img.pixels) {
            ASSERT_GE(p, 0.0);
            ASSERT_LE(p, 1.0);
        }
        EXPECT_GE(rec.entities.size(), 1u);
        EXPECT_TRUE(record_violations(rec, cfg.vocab).empty());
        for (const auto& e : rec.entities) {
            EXPECT_LT(e.box.x_min, e.box.x_max);
            EXPECT_LT(e.box.y_min, e.box.y_max);
        }
    }
}

TEST(Scene, SingleEntityHasNoTriples) {
    GeneratorConfig cfg;
    cfg.min_entities = cfg.max_entities = 1;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto rec = build_synthetic_scene(s, cfg).second;
        EXPECT_EQ(rec.entities.size(), 1u);
        EXPECT_TRUE(rec.triples.empty());
        EXPECT_FALSE(rec.is_threat);
    }
}

TEST(Scene, RejectsOverpackedConfigs) {
    GeneratorConfig cfg;
    cfg.max_entities = glyph_capacity(cfg.resolution) + 1;
    EXPECT_THROW(build_synthetic_scene(0, cfg), std::invalid_argument);
    cfg = {};
    cfg.resolution = 40;
    EXPECT_THROW(build_synthetic_scene(0, cfg), std::invalid_argument);
    cfg = {};
    cfg.min_entities = 3;
    cfg.max_entities = 2;
    EXPECT_THROW(build_synthetic_scene(0, cfg), std::invalid_argument);
}

TEST(Scene, ThreatFlagAndEntityStatistics) {
    const GeneratorConfig cfg;
    double entities = 0;
    const int n = 2000;
    std::set<int> threat_actions_seen;
    for (int s = 0; s < n; ++s) {
        const auto rec = build_synthetic_scene(derive_seed(99, static_cast<std::uint64_t>(s)), cfg).second;
        entities += static_cast<double>(rec.entities.size());
        ASSERT_EQ(rec.is_threat, brute_force_threat(rec, cfg.vocab)) << rec.image_id;
        for (const auto& t : rec.triples)
            for (int a : t.action_ids)
                if (cfg.vocab.is_threat_action(a)) threat_actions_seen.insert(a);
    }
    EXPECT_NEAR(entities / n, cfg.target_mean_entities, 0.5);
    EXPECT_EQ(threat_actions_seen.size(), cfg.vocab.threat_actions.size());
}

TEST(Caption, TemplateSentences) {
    const Vocabulary v = Vocabulary::standard();
    const Tokenizer tok = Tokenizer::for_vocabulary(v);
    HoiPairRecord r;
    r.image_id = "x";
    r.entities = {{0, 0, {}}, {1, 2, {}}};
    r.triples = {{0, 1, {4}}};
    r.is_threat = true;
    const auto c = align_caption(r, v, tok);
    EXPECT_EQ(c.text, "The scene shows a person and a gun. The person shoot the gun. A threat is detected.");
    EXPECT_EQ(tok.detokenize(c.token_ids), c.text);
    EXPECT_TRUE(validate_alignment(r, c, v).empty());

    r.triples.clear();
    r.is_threat = false;
    const auto bare = align_caption(r, v, tok);
    EXPECT_EQ(bare.text, "The scene shows a person and a gun. No threat is detected.");
    EXPECT_TRUE(validate_alignment(r, bare, v).empty());

    r.entities.push_back({2, 4, {}});
    r.triples = {{2, 0, {0}}, {0, 1, {0, 1}}};
    const auto two = align_caption(r, v, tok);
    EXPECT_EQ(two.text,
              "The scene shows a person, a gun and a bag. The person hold and carry the gun. "
              "The bag hold the person. No threat is detected.");
}

TEST(Caption, ViolationsNameMissingElements) {
    const Vocabulary v = Vocabulary::standard();
    const Tokenizer tok = Tokenizer::for_vocabulary(v);
    HoiPairRecord r;
    r.entities = {{0, 0, {}}, {1, 1, {}}};
    r.triples = {{0, 1, {3}}};
    r.is_threat = true;
    auto c = align_caption(r, v, tok);

    auto dropped = c;
    dropped.text = "The scene shows a person and a knife. The person the knife.";
    auto viol = validate_alignment(r, dropped, v);
    ASSERT_EQ(viol.size(), 1u);
    EXPECT_NE(viol[0].find("attack"), std::string::npos);

    auto renamed = c;
    renamed.text = "The scene shows a person and a gun. The person attack the gun.";
    viol = validate_alignment(r, renamed, v);
    ASSERT_EQ(viol.size(), 1u);
    EXPECT_NE(viol[0].find("knife"), std::string::npos);
}

TEST(Caption, ThousandGeneratedPairsAlign) {
    const GeneratorConfig cfg;
    const Tokenizer tok = Tokenizer::for_vocabulary(cfg.vocab);
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto rec = build_synthetic_scene(derive_seed(3, s), cfg).second;
        const auto cap = align_caption(rec, cfg.vocab, tok);
        ASSERT_TRUE(validate_alignment(rec, cap, cfg.vocab).empty()) << cap.text;
        ASSERT_EQ(tok.detokenize(cap.token_ids), cap.text);
        for (int id : cap.token_ids) ASSERT_NE(id, special::kUnk);
    }
}

TEST(Tokenizer, SpecialsAndFileRoundTrip) {
    const Tokenizer tok = Tokenizer::for_vocabulary(Vocabulary::standard());
    EXPECT_EQ(tok.size(), 31u);
    EXPECT_EQ(tok.token(special::kHoi), "[HOI]");
    EXPECT_EQ(tok.id("zebra"), special::kUnk);
    const auto dir = hoitag::testing::temp_dir("tok");
    tok.save((dir / "vocab.txt").string());
    const Tokenizer back = Tokenizer::load((dir / "vocab.txt").string());
    EXPECT_EQ(back.tokens(), tok.tokens());
    EXPECT_THROW(Tokenizer({"[PAD]", "[BOS]"}), std::invalid_argument);
    EXPECT_THROW(Tokenizer({"[PAD]", "[BOS]", "[EOS]", "[HOI]", "[SEP]", "[UNK]", "a", "a"}), std::invalid_argument);
}

TEST(Dataset, SplitCountsForSeedSeven) {
    const auto splits = build_splits({100, 20, 20}, 0.4, 7);
    ASSERT_EQ(splits.size(), 3u);
    std::set<std::string> ids;
    std::size_t total = 0;
    const std::size_t sizes[] = {100, 20, 20};
    const std::size_t threats[] = {40, 8, 8};
    for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_EQ(splits[s].records.size(), sizes[s]);
        std::size_t t = 0;
        for (const auto& [r, c] : splits[s].records) {
            ids.insert(r.image_id);
            t += r.is_threat ? 1 : 0;
            EXPECT_EQ(r.is_threat, brute_force_threat(r, splits[s].vocab));
        }
        EXPECT_EQ(t, threats[s]);
        total += sizes[s];
        EXPECT_TRUE(manifest_violations(splits[s]).empty());
    }
    EXPECT_EQ(ids.size(), 140u);
    EXPECT_EQ(total, 140u);
}

TEST(Dataset, ExtremeThreatRatios) {
    for (const auto& m : build_splits({15, 5, 5}, 0.0, 1))
        for (const auto& [r, c] : m.records) EXPECT_FALSE(r.is_threat);
    for (const auto& m : build_splits({15, 5, 5}, 1.0, 1))
        for (const auto& [r, c] : m.records) EXPECT_TRUE(r.is_threat);
    EXPECT_THROW(build_splits({1, 1, 1}, 1.5, 1), std::invalid_argument);
}

TEST(Dataset, ImagesRegenerateFromSeeds) {
    std::vector<SceneImage> seen;
    const auto splits = build_splits({6, 2, 2}, 0.4, 11, {}, [&](const SceneImage& img) { seen.push_back(img); });
    ASSERT_EQ(seen.size(), 10u);
    const auto dir = hoitag::testing::temp_dir("png");
    std::size_t k = 0;
    for (const auto& m : splits)
        for (const auto& [r, c] : m.records) {
            const SceneImage& img = seen[k++];
            EXPECT_EQ(img.image_id, r.image_id);
            EXPECT_EQ(regenerate_image(r, {}), img);
            write_png(image_path(dir, r.image_id).string(), img);
            const SceneImage back = read_png(image_path(dir, r.image_id).string(), r.image_id);
            EXPECT_EQ(back, img);
        }
}

TEST(Dataset, SerializationRoundTrip) {
    const auto dir = hoitag::testing::temp_dir("serialize");
    for (const auto& m : build_splits({12, 3, 3}, 0.4, 5)) {
        const auto p = dir / (m.split + ".jsonl");
        serialize_dataset(m, p);
        EXPECT_EQ(load_dataset(p), m);
        serialize_dataset(load_dataset(p), dir / "again.jsonl");
        EXPECT_EQ(read_all(p), read_all(dir / "again.jsonl"));
    }
    DatasetManifest empty;
    empty.split = "val";
    serialize_dataset(empty, dir / "empty.jsonl");
    const std::string text = read_all(dir / "empty.jsonl");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
    EXPECT_NE(text.find("\"schema\":\"td-hoi/1\""), std::string::npos);
    EXPECT_EQ(load_dataset(dir / "empty.jsonl"), empty);
}

TEST(Dataset, SchemaErrorsCiteLineAndField) {
    const auto dir = hoitag::testing::temp_dir("schema");
    const auto m = build_splits({3, 0, 0}, 0.4, 2)[0];
    serialize_dataset(m, dir / "ok.jsonl");
    std::vector<std::string> lines;
    {
        std::ifstream in(dir / "ok.jsonl");
        for (std::string l; std::getline(in, l);) lines.push_back(l);
    }
    ASSERT_EQ(lines.size(), 4u);
    auto write_with = [&](std::size_t idx, const std::string& replacement) {
        auto copy = lines;
        copy[idx] = replacement;
        std::ofstream out(dir / "bad.jsonl");
        for (const auto& l : copy) out << l << '\n';
    };
    auto expect_error = [&](std::size_t line, const std::string& field) {
        try {
            load_dataset(dir / "bad.jsonl");
            ADD_FAILURE() << "no error for field " << field;
        } catch (const SchemaError& e) {
            EXPECT_EQ(e.line(), line);
            EXPECT_EQ(e.field(), field);
            EXPECT_NE(std::string(e.what()).find("line " + std::to_string(line)), std::string::npos);
        }
    };

    auto j = nlohmann::ordered_json::parse(lines[2]);
    j.erase("triples");
    write_with(2, j.dump());
    expect_error(3, "triples");

    j = nlohmann::ordered_json::parse(lines[1]);
    j["is_threat"] = "yes";
    write_with(1, j.dump());
    expect_error(2, "is_threat");

    auto h = nlohmann::ordered_json::parse(lines[0]);
    h["schema"] = "td-hoi/0";
    write_with(0, h.dump());
    expect_error(1, "schema");

    write_with(3, "{not json");
    EXPECT_THROW(load_dataset(dir / "bad.jsonl"), SchemaError);
}
