#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hoitag/caption_decoder.hpp"
#include "hoitag/checkpoint.hpp"
#include "hoitag/dataset.hpp"
#include "hoitag/hoi_losses.hpp"
#include "hoitag/optim.hpp"
#include "hoitag/tag_metrics.hpp"
#include "hoitag/tags.hpp"

namespace hoitag {

struct Ablations {
    bool without_hoi_tag = false;
    bool without_pos = false;
    friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct TrainConfig {
    std::string stage = "hoi";
    int epochs = 10;
    double lr_hoi = 5e-6;
    double lr_caption = 1e-4;
    int batch_size = 8;
    std::uint64_t seed = 0;
    Ablations ablations;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    bool train_decoder_ffn = false;
    HoiConfig hoi;
    CaptionConfig caption;

    AdamWConfig optimizer(double lr) const { return AdamWConfig{lr, beta1, beta2, eps, weight_decay}; }
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void validate(const TrainConfig& c) {
    if (c.stage != "hoi" && c.stage != "caption") throw ConfigError("stage must be 'hoi' or 'caption', got '" + c.stage + "'");
    if (c.epochs < 1) throw ConfigError("epochs must be at least 1, got " + std::to_string(c.epochs));
    if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1, got " + std::to_string(c.batch_size));
    if (!(c.lr_hoi > 0.0) || !(c.lr_caption > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(c.clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (!(c.hoi.tau > 0.0)) throw ConfigError("tau must be positive");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"stage", c.stage},
         {"epochs", c.epochs},
         {"lr_hoi", c.lr_hoi},
         {"lr_caption", c.lr_caption},
         {"batch_size", c.batch_size},
         {"seed", c.seed},
         {"ablations", {{"without_hoi_tag", c.ablations.without_hoi_tag}, {"without_pos", c.ablations.without_pos}}},
         {"optimizer",
          {{"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}, {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm}}},
         {"train_decoder_ffn", c.train_decoder_ffn},
         {"hoi", c.hoi},
         {"caption", c.caption}};
}

namespace trainer_detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

}  // namespace trainer_detail

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    using trainer_detail::reject_unknown;
    reject_unknown(j,
                   {"stage", "epochs", "lr_hoi", "lr_caption", "batch_size", "seed", "ablations", "optimizer",
                    "train_decoder_ffn", "hoi", "caption"},
                   "config");
    try {
        c.stage = j.value("stage", c.stage);
        c.epochs = j.value("epochs", c.epochs);
        c.lr_hoi = j.value("lr_hoi", c.lr_hoi);
        c.lr_caption = j.value("lr_caption", c.lr_caption);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.seed = j.value("seed", c.seed);
        if (j.contains("ablations")) {
            const auto& a = j.at("ablations");
            reject_unknown(a, {"without_hoi_tag", "without_pos"}, "config.ablations");
            c.ablations.without_hoi_tag = a.value("without_hoi_tag", c.ablations.without_hoi_tag);
            c.ablations.without_pos = a.value("without_pos", c.ablations.without_pos);
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            reject_unknown(o, {"beta1", "beta2", "eps", "weight_decay", "clip_norm"}, "config.optimizer");
            c.beta1 = o.value("beta1", c.beta1);
            c.beta2 = o.value("beta2", c.beta2);
            c.eps = o.value("eps", c.eps);
            c.weight_decay = o.value("weight_decay", c.weight_decay);
            c.clip_norm = o.value("clip_norm", c.clip_norm);
        }
        c.train_decoder_ffn = j.value("train_decoder_ffn", c.train_decoder_ffn);
        if (j.contains("hoi")) c.hoi = j.at("hoi").get<HoiConfig>();
        if (j.contains("caption")) c.caption = j.at("caption").get<CaptionConfig>();
    } catch (const nlohmann::json::type_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return j.get<TrainConfig>();
}

// ---------------------------------------------------------------------------
// Training log

struct TrainLogRow {
    long step = 0;
    std::string stage;
    double loss_total = 0, loss_loc = 0, loss_act = 0, loss_box = 0, loss_lm = 0, lr = 0, seconds = 0;
};

struct TrainLog {
    std::vector<TrainLogRow> rows;
    std::vector<double> epoch_means;
    std::map<std::string, double> final_metrics;

    void append(TrainLogRow r) {
        if (!rows.empty() && r.step <= rows.back().step) throw std::logic_error("train log steps must increase");
        rows.push_back(std::move(r));
    }

    static constexpr const char* kHeader = "step,stage,loss_total,loss_loc,loss_act,loss_box,loss_lm,lr,seconds";

    std::string csv() const {
        std::string out = std::string(kHeader) + "\n";
        char buf[512];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%ld,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", r.step, r.stage.c_str(),
                          r.loss_total, r.loss_loc, r.loss_act, r.loss_box, r.loss_lm, r.lr, r.seconds);
            out += buf;
        }
        return out;
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << csv();
    }

    static TrainLog read_csv(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        std::string line;
        if (!std::getline(in, line) || line != kHeader)
            throw std::runtime_error(path.string() + ": not a training log (bad header)");
        TrainLog log;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::vector<std::string> f;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) f.push_back(cell);
            if (f.size() != 9) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 9 fields");
            try {
                TrainLogRow r{std::stol(f[0]), f[1],
                              std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                              std::stod(f[6]), std::stod(f[7]), std::stod(f[8])};
                log.append(std::move(r));
            } catch (const std::invalid_argument&) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
            }
        }
        return log;
    }
};

// ---------------------------------------------------------------------------
// Images

using ImageLoader = std::function<SceneImage(const HoiPairRecord&)>;

/// Images stored as <dir>/<image_id>.png.
inline ImageLoader directory_images(std::filesystem::path dir) {
    return [dir = std::move(dir)](const HoiPairRecord& r) {
        const auto p = image_path(dir, r.image_id);
        if (!std::filesystem::exists(p)) throw std::runtime_error("missing image file " + p.string());
        return read_png(p.string(), r.image_id);
    };
}

/// Images re-rendered from each record's scene seed.
inline ImageLoader regenerated_images(GeneratorConfig base = {}) {
    return [base = std::move(base)](const HoiPairRecord& r) { return regenerate_image(r, base); };
}

using Progress = std::function<void(const std::string&)>;

struct StageResult {
    std::unique_ptr<ModelBundle> model;
    TrainLog log;
};

namespace trainer_detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0x5EED0000ULL + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline void check_finite(double v, long step, const std::string& what) {
    if (!std::isfinite(v))
        throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + what + " is " +
                               (std::isnan(v) ? "NaN" : "infinite"));
}

}  // namespace trainer_detail

inline std::set<std::string> truth_tag_set(const HoiPairRecord& r, const Vocabulary& vocab) {
    std::set<std::string> out;
    for (const auto& t : ground_truth_tags(r, vocab)) out.insert(canonical_tag(t));
    return out;
}

struct DecodeThresholds {
    double action = 0.5;
    double entity = 0.5;
};

/// Decoded tags for one image, best first.
inline std::vector<HoiTag> detect_tags(const ModelBundle& b, const SceneImage& img, DecodeThresholds th = {}) {
    NoGradGuard ng;
    Graph g(b.store);
    const auto f = b.hoi_model->forward(g, img);
    return tags_from_decoded(decode_predictions(f.prediction, th.action, th.entity), b.vocab);
}

/// Tag metrics of the detector's decoded triples against a manifest.
inline TagMetricsReport evaluate_triples(const ModelBundle& b, const DatasetManifest& m, const ImageLoader& images,
                                         DecodeThresholds th = {}) {
    std::vector<std::vector<std::string>> pred;
    std::vector<std::set<std::string>> truth;
    for (const auto& [r, c] : m.records) {
        std::vector<std::string> p;
        for (const auto& t : detect_tags(b, images(r), th)) p.push_back(canonical_tag(t));
        pred.push_back(std::move(p));
        truth.push_back(truth_tag_set(r, m.vocab));
    }
    return tag_metrics(pred, truth);
}

/// Supervised detector training: Hungarian loss plus the entity set loss,
/// AdamW with global-norm clipping, checkpoint rewritten after every epoch.
inline StageResult train_hoi_stage(const DatasetManifest& m, const ImageLoader& images, const TrainConfig& cfg,
                                   const std::filesystem::path& out_dir, const Progress& progress = {}) {
    using namespace trainer_detail;
    validate(cfg);
    if (m.records.empty()) throw std::invalid_argument("train hoi: manifest has no records");
    std::filesystem::create_directories(out_dir);
    TrainConfig resolved = cfg;
    resolved.stage = "hoi";
    write_json(out_dir / "config.json", resolved);

    StageResult res;
    res.model = ModelBundle::create(m.vocab, cfg.hoi, derive_seed(cfg.seed, 1));
    ModelBundle& b = *res.model;
    std::vector<SceneImage> imgs;
    for (const auto& [r, c] : m.records) imgs.push_back(images(r));

    AdamW opt(b.store, cfg.optimizer(cfg.lr_hoi));
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = m.records.size(), bs = static_cast<std::size_t>(cfg.batch_size);
    HoiLossConfig lc{b.hoi.tau, b.hoi.lambda_box, b.hoi.box_loss};
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = epoch_order(n, cfg.seed, epoch);
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            const double inv = 1.0 / static_cast<double>(end - start);
            GradBuffer grads;
            TrainLogRow row;
            row.step = ++step;
            row.stage = "hoi";
            row.lr = cfg.lr_hoi;
            for (std::size_t k = start; k < end; ++k) {
                const auto& rec = m.records[order[k]].first;
                Graph g(b.store);
                const auto f = b.hoi_model->forward(g, imgs[order[k]]);
                const auto ent = entity_set_loss(f.entities, rec, b.hoi.no_entity_weight);
                const auto h = loss_hungarian(f.prediction, f.pointers, f.entities, rec, ent.slot_of, lc);
                const Var total = add(h.total, ent.loss);
                check_finite(total.item(), step, "loss");
                backward(scale(total, inv));
                g.accumulate(grads);
                row.loss_total += total.item() * inv;
                row.loss_loc += h.parts.loss_loc * inv;
                row.loss_act += h.parts.loss_act * inv;
                row.loss_box += h.parts.loss_box * inv;
            }
            check_finite(clip_grad_norm(b.store, grads, cfg.clip_norm), step, "gradient norm");
            opt.step(b.store, grads);
            epoch_sum += row.loss_total * static_cast<double>(end - start);
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            res.log.append(std::move(row));
        }
        res.log.epoch_means.push_back(epoch_sum / static_cast<double>(n));
        save_checkpoint(b, out_dir / "hoi.ckpt");
        res.log.write_csv(out_dir / "train_log.csv");
        if (progress) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "hoi epoch %d/%d mean loss %.4f", epoch, cfg.epochs, res.log.epoch_means.back());
            progress(buf);
        }
    }
    const auto rep = evaluate_triples(b, m, [&](const HoiPairRecord& r) {
        for (std::size_t i = 0; i < n; ++i)
            if (m.records[i].first.image_id == r.image_id) return imgs[i];
        return images(r);
    });
    res.log.final_metrics = {{"train_triple_precision", rep.precision},
                             {"train_triple_recall", rep.recall},
                             {"train_triple_f1", rep.f1},
                             {"epoch_mean_loss_first", res.log.epoch_means.front()},
                             {"epoch_mean_loss_last", res.log.epoch_means.back()}};
    write_json(out_dir / "metrics.json", res.log.final_metrics);
    return res;
}

/// Visual tokens of the frozen detector backbone.
inline Matrix visual_features(const ModelBundle& b, const SceneImage& img) {
    NoGradGuard ng;
    Graph g(b.store);
    return b.hoi_model->encode_backbone(g, img).tokens.value();
}

/// Fine-tunes the fusion encoder and the unfrozen decoder subset on
/// ground-truth tags; detector parameters stay frozen.
inline StageResult train_caption_stage(const DatasetManifest& m, const ImageLoader& images,
                                       std::unique_ptr<ModelBundle> hoi, const TrainConfig& cfg,
                                       const std::filesystem::path& out_dir, const Progress& progress = {}) {
    using namespace trainer_detail;
    validate(cfg);
    if (m.records.empty()) throw std::invalid_argument("train caption: manifest has no records");
    if (!hoi || !hoi->hoi_model) throw CheckpointError("train caption: no detector checkpoint");
    if (hoi->caption_model) throw CheckpointError("train caption: expected a detector-stage checkpoint");
    if (hoi->vocab != m.vocab) throw CheckpointError("train caption: checkpoint vocabulary differs from the manifest's");
    std::filesystem::create_directories(out_dir);
    TrainConfig resolved = cfg;
    resolved.stage = "caption";
    resolved.hoi = hoi->hoi;

    StageResult res;
    res.model = std::move(hoi);
    ModelBundle& b = *res.model;
    CaptionConfig cc = cfg.caption;
    cc.without_hoi_tag = cfg.ablations.without_hoi_tag;
    cc.fusion.without_pos = cfg.ablations.without_pos;
    b.add_caption(cc, derive_seed(cfg.seed, 2));
    resolved.caption = *b.caption;
    write_json(out_dir / "config.json", resolved);

    for (std::size_t i = 0; i < b.store.size(); ++i) b.store.at(i).trainable = false;
    for (const auto& p : CaptionModel::trainable_prefixes(*b.caption, cfg.train_decoder_ffn)) b.store.set_trainable(p, true);

    const Tokenizer tok = b.tokenizer();
    std::vector<Matrix> vis;
    std::vector<std::vector<int>> tags, targets;
    for (const auto& [r, c] : m.records) {
        const SceneImage img = images(r);
        if (img.size != static_cast<int>(b.hoi.resolution))
            throw CheckpointError("train caption: image resolution " + std::to_string(img.size) +
                                  " differs from the checkpoint's " + std::to_string(b.hoi.resolution));
        vis.push_back(visual_features(b, img));
        tags.push_back(serialize_hoi_tags(ground_truth_tags(r, m.vocab), tok, b.caption->fusion.max_tags));
        targets.push_back(caption_targets(c));
        if (targets.back().size() > b.caption->max_len)
            throw std::invalid_argument("train caption: caption of " + r.image_id + " exceeds max_len");
    }

    AdamW opt(b.store, cfg.optimizer(cfg.lr_caption));
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = m.records.size(), bs = static_cast<std::size_t>(cfg.batch_size);
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = epoch_order(n, cfg.seed, epoch);
        double epoch_sum = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            const std::size_t end = std::min(n, start + bs);
            const double inv = 1.0 / static_cast<double>(end - start);
            GradBuffer grads;
            TrainLogRow row;
            row.step = ++step;
            row.stage = "caption";
            row.lr = cfg.lr_caption;
            for (std::size_t k = start; k < end; ++k) {
                const std::size_t i = order[k];
                Graph g(b.store);
                const auto ctx = b.caption_model->encode(g, constant(vis[i]), tags[i]);
                const Var loss = lm_loss(b.caption_model->teacher_forced(g, ctx, targets[i]), targets[i]);
                check_finite(loss.item(), step, "loss");
                backward(scale(loss, inv));
                g.accumulate(grads);
                row.loss_lm += loss.item() * inv;
            }
            row.loss_total = row.loss_lm;
            check_finite(clip_grad_norm(b.store, grads, cfg.clip_norm), step, "gradient norm");
            opt.step(b.store, grads);
            epoch_sum += row.loss_total * static_cast<double>(end - start);
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            res.log.append(std::move(row));
        }
        res.log.epoch_means.push_back(epoch_sum / static_cast<double>(n));
        save_checkpoint(b, out_dir / "caption.ckpt");
        res.log.write_csv(out_dir / "train_log.csv");
        if (progress) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "caption epoch %d/%d mean loss %.4f", epoch, cfg.epochs,
                          res.log.epoch_means.back());
            progress(buf);
        }
    }
    double acc = 0.0;
    {
        NoGradGuard ng;
        for (std::size_t i = 0; i < n; ++i) {
            Graph g(b.store);
            const auto ctx = b.caption_model->encode(g, constant(vis[i]), tags[i]);
            acc += token_accuracy(b.caption_model->teacher_forced(g, ctx, targets[i]).value(), targets[i]);
        }
    }
    res.log.final_metrics = {{"train_token_accuracy", acc / static_cast<double>(n)},
                             {"epoch_mean_loss_first", res.log.epoch_means.front()},
                             {"epoch_mean_loss_last", res.log.epoch_means.back()}};
    write_json(out_dir / "metrics.json", res.log.final_metrics);
    return res;
}

// ---------------------------------------------------------------------------
// Inference

struct InferenceRecord {
    std::string image_id;
    std::vector<std::string> tags;
    std::string caption;
    bool is_threat_pred = false;
    friend bool operator==(const InferenceRecord&, const InferenceRecord&) = default;
};

struct InferenceOptions {
    GenerationConfig generation;
    DecodeThresholds thresholds;
};

/// Detect, serialize tags, fuse and caption one image.
inline InferenceRecord infer_one(const ModelBundle& b, const HoiPairRecord& r, const SceneImage& img,
                                 const InferenceOptions& opt = {}) {
    NoGradGuard ng;
    Graph g(b.store);
    const auto f = b.hoi_model->forward(g, img);
    const auto decoded = decode_predictions(f.prediction, opt.thresholds.action, opt.thresholds.entity);
    const auto tags = tags_from_decoded(decoded, b.vocab);
    InferenceRecord out;
    out.image_id = r.image_id;
    for (const auto& t : tags) out.tags.push_back(canonical_tag(t));
    for (const auto& d : decoded) out.is_threat_pred = out.is_threat_pred || b.vocab.is_threat_action(d.action);
    if (b.caption_model) {
        const Tokenizer tok = b.tokenizer();
        const auto ctx =
            b.caption_model->encode(g, f.features.tokens, serialize_hoi_tags(tags, tok, b.caption->fusion.max_tags));
        out.caption = tok.detokenize(b.caption_model->generate(g, ctx, opt.generation));
    }
    return out;
}

inline std::vector<InferenceRecord> run_inference(const DatasetManifest& m, const ImageLoader& images,
                                                  const ModelBundle& b, const InferenceOptions& opt = {}) {
    std::vector<InferenceRecord> out;
    for (const auto& [r, c] : m.records) out.push_back(infer_one(b, r, images(r), opt));
    return out;
}

inline nlohmann::ordered_json inference_json(const InferenceRecord& r) {
    nlohmann::ordered_json j;
    j["image_id"] = r.image_id;
    j["tags"] = r.tags;
    j["caption"] = r.caption;
    j["is_threat_pred"] = r.is_threat_pred;
    return j;
}

inline void write_inference_jsonl(const std::filesystem::path& path, const std::vector<InferenceRecord>& recs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : recs) out << inference_json(r).dump() << '\n';
}

inline std::vector<InferenceRecord> read_inference_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<InferenceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            InferenceRecord r;
            r.image_id = j.at("image_id").get<std::string>();
            r.tags = j.at("tags").get<std::vector<std::string>>();
            r.caption = j.value("caption", std::string());
            r.is_threat_pred = j.value("is_threat_pred", false);
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError(lineno, "<record>", e.what());
        }
    }
    return out;
}

}  // namespace hoitag
