#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "hoitag/caption_decoder.hpp"
#include "hoitag/hoi_encoder.hpp"
#include "hoitag/nn.hpp"
#include "hoitag/tokenizer.hpp"
#include "hoitag/vocab.hpp"

namespace hoitag {

inline constexpr const char* kCheckpointVersion = "hoi2threat-ckpt/1";

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void to_json(nlohmann::json& j, const HoiConfig& c) {
    j = {{"d", c.d},
         {"K", c.interaction_queries},
         {"M", c.entity_queries},
         {"gamma", c.num_actions},
         {"C", c.num_classes},
         {"tau", c.tau},
         {"lambda_box", c.lambda_box},
         {"resolution", c.resolution},
         {"patch", c.patch},
         {"depth", c.depth},
         {"heads", c.heads},
         {"ffn", c.ffn},
         {"box_loss", c.box_loss},
         {"no_entity_weight", c.no_entity_weight}};
}

inline void from_json(const nlohmann::json& j, HoiConfig& c) {
    c.d = j.value("d", c.d);
    c.interaction_queries = j.value("K", c.interaction_queries);
    c.entity_queries = j.value("M", c.entity_queries);
    c.num_actions = j.value("gamma", c.num_actions);
    c.num_classes = j.value("C", c.num_classes);
    c.tau = j.value("tau", c.tau);
    c.lambda_box = j.value("lambda_box", c.lambda_box);
    c.resolution = j.value("resolution", c.resolution);
    c.patch = j.value("patch", c.patch);
    c.depth = j.value("depth", c.depth);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.box_loss = j.value("box_loss", c.box_loss);
    c.no_entity_weight = j.value("no_entity_weight", c.no_entity_weight);
}

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
    j = {{"visual_dim", c.visual_dim}, {"grid", c.grid},         {"d_f", c.d_f},
         {"layers", c.layers},         {"heads", c.heads},       {"ffn", c.ffn},
         {"max_tags", c.max_tags},     {"without_pos", c.without_pos}};
}

inline void from_json(const nlohmann::json& j, FusionConfig& c) {
    c.visual_dim = j.value("visual_dim", c.visual_dim);
    c.grid = j.value("grid", c.grid);
    c.d_f = j.value("d_f", c.d_f);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.max_tags = j.value("max_tags", c.max_tags);
    c.without_pos = j.value("without_pos", c.without_pos);
}

inline void to_json(nlohmann::json& j, const CaptionConfig& c) {
    j = {{"vocab_size", c.vocab_size}, {"d_f", c.d_f},         {"layers", c.layers},
         {"heads", c.heads},           {"ffn", c.ffn},         {"max_len", c.max_len},
         {"fusion", c.fusion},         {"without_hoi_tag", c.without_hoi_tag}};
}

inline void from_json(const nlohmann::json& j, CaptionConfig& c) {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_f = j.value("d_f", c.d_f);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.max_len = j.value("max_len", c.max_len);
    if (j.contains("fusion")) c.fusion = j.at("fusion").get<FusionConfig>();
    c.without_hoi_tag = j.value("without_hoi_tag", c.without_hoi_tag);
}

inline void to_json(nlohmann::json& j, const Vocabulary& v) {
    j = {{"entities", v.entities}, {"actions", v.actions}, {"threat_actions", v.threat_actions}};
}

inline void from_json(const nlohmann::json& j, Vocabulary& v) {
    v.entities = j.at("entities").get<std::vector<std::string>>();
    v.actions = j.at("actions").get<std::vector<std::string>>();
    v.threat_actions = j.at("threat_actions").get<std::vector<std::string>>();
}

/// A HOI encoder, optionally with its caption model, sharing one store.
struct ModelBundle {
    Vocabulary vocab = Vocabulary::standard();
    HoiConfig hoi;
    std::optional<CaptionConfig> caption;
    std::vector<std::string> tokens;
    ParamStore store;
    std::unique_ptr<HoiEncoder> hoi_model;
    std::unique_ptr<CaptionModel> caption_model;

    Tokenizer tokenizer() const { return tokens.empty() ? Tokenizer::for_vocabulary(vocab) : Tokenizer(tokens); }

    static std::unique_ptr<ModelBundle> create(const Vocabulary& vocab, const HoiConfig& hoi, std::uint64_t seed) {
        auto b = std::make_unique<ModelBundle>();
        b->vocab = vocab;
        b->hoi = hoi;
        b->hoi.num_classes = vocab.entities.size();
        b->hoi.num_actions = vocab.actions.size();
        b->tokens = Tokenizer::for_vocabulary(vocab).tokens();
        Rng rng(seed);
        b->hoi_model = std::make_unique<HoiEncoder>(b->store, b->hoi, rng);
        return b;
    }

    void add_caption(const CaptionConfig& cfg, std::uint64_t seed) {
        if (caption_model) throw std::logic_error("bundle already holds a caption model");
        caption = cfg;
        caption->vocab_size = tokens.size();
        caption->fusion.visual_dim = hoi.d;
        caption->fusion.grid = hoi.grid();
        caption->fusion.d_f = caption->d_f;
        Rng rng(seed);
        caption_model = std::make_unique<CaptionModel>(store, *caption, rng);
    }
};

inline nlohmann::json bundle_config_json(const ModelBundle& b) {
    nlohmann::json j;
    j["hoi"] = b.hoi;
    if (b.caption) j["caption"] = *b.caption;
    j["vocab"] = b.vocab;
    j["tokens"] = b.tokens;
    return j;
}

/// One JSON header line (version, config, tensor index) followed by the
/// tensors as raw little-endian float64 in index order.
inline void save_checkpoint(const ModelBundle& b, const std::filesystem::path& path) {
    nlohmann::ordered_json header;
    header["version"] = kCheckpointVersion;
    header["config"] = bundle_config_json(b);
    auto index = nlohmann::ordered_json::array();
    std::size_t offset = 0;
    for (const auto& p : b.store.all()) {
        index.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", offset}});
        offset += p.value.size();
    }
    header["tensors"] = std::move(index);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
        out << header.dump() << '\n';
        for (const auto& p : b.store.all()) {
            for (double v : p.value.values()) {
                std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
                unsigned char bytes[8];
                for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(bits >> (8 * k));
                out.write(reinterpret_cast<const char*>(bytes), 8);
            }
        }
        if (!out) throw CheckpointError("write failed for checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::unique_ptr<ModelBundle> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw CheckpointError("empty checkpoint " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }
    if (header.value("version", std::string()) != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version '" + header.value("version", std::string()) + "'");
    auto b = std::make_unique<ModelBundle>();
    try {
        const auto& cfg = header.at("config");
        b->vocab = cfg.at("vocab").get<Vocabulary>();
        b->hoi = cfg.at("hoi").get<HoiConfig>();
        b->tokens = cfg.at("tokens").get<std::vector<std::string>>();
        Rng rng(0);
        b->hoi_model = std::make_unique<HoiEncoder>(b->store, b->hoi, rng);
        if (cfg.contains("caption")) {
            b->caption = cfg.at("caption").get<CaptionConfig>();
            b->caption_model = std::make_unique<CaptionModel>(b->store, *b->caption, rng);
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("malformed checkpoint config: " + std::string(e.what()));
    }
    const auto& tensors = header.at("tensors");
    if (tensors.size() != b->store.size())
        throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, config expects " +
                              std::to_string(b->store.size()));
    for (const auto& t : tensors) {
        const auto name = t.at("name").get<std::string>();
        const auto idx = b->store.find(name);
        if (!idx) throw CheckpointError("checkpoint tensor '" + name + "' is unknown to the configured model");
        Param& p = b->store.at(*idx);
        if (t.at("rows").get<std::size_t>() != p.value.rows() || t.at("cols").get<std::size_t>() != p.value.cols())
            throw CheckpointError("checkpoint tensor '" + name + "' has shape " + std::to_string(t.at("rows").get<std::size_t>()) +
                                  "x" + std::to_string(t.at("cols").get<std::size_t>()) + ", expected " +
                                  p.value.shape_str());
        for (double& v : p.value.values()) {
            unsigned char bytes[8];
            if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("truncated checkpoint " + path.string());
            std::uint64_t bits = 0;
            for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
            v = std::bit_cast<double>(bits);
        }
    }
    return b;
}

}  // namespace hoitag
