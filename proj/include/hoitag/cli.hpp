#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hoitag/dataset.hpp"
#include "hoitag/judge.hpp"
#include "hoitag/plots.hpp"
#include "hoitag/png_io.hpp"
#include "hoitag/report.hpp"
#include "hoitag/rubric.hpp"
#include "hoitag/tag_metrics.hpp"
#include "hoitag/trainer.hpp"

namespace hoitag {

namespace fs = std::filesystem;

/// Settings of the `ablate` command; the stage lengths and learning rates
/// default to the desk-scale profile under which the 100-scene comparison
/// was validated.
struct AblationConfig {
    std::uint64_t seed = 7;
    int hoi_epochs = 30;
    int caption_epochs = 15;
    double lr_hoi = 1e-3;
    double lr_caption = 1e-3;
    int batch_size = 8;
    std::string eval_split = "test";
};

struct AblationResult {
    ScoreTable table;
    RenderedReport report;
    std::map<std::string, RubricScore> scores;  // by variant name
    TagMetricsReport detector;
};

inline const std::vector<std::pair<std::string, Ablations>>& ablation_variants() {
    static const std::vector<std::pair<std::string, Ablations>> v{{"Ours (without hoi tag)", {true, false}},
                                                                   {"Ours (without pos)", {false, true}},
                                                                   {"Ours", {false, false}}};
    return v;
}

inline DatasetManifest load_split(const fs::path& data_dir, const std::string& split) {
    if (!valid_split_name(split)) throw std::invalid_argument("unknown split '" + split + "'");
    return load_dataset(data_dir / (split + ".jsonl"));
}

inline std::vector<RubricScore> score_inference(const std::vector<InferenceRecord>& pred, const DatasetManifest& truth) {
    std::map<std::string, const InferenceRecord*> by_id;
    for (const auto& p : pred) by_id[p.image_id] = &p;
    std::vector<RubricScore> out;
    for (const auto& [r, c] : truth.records) {
        const auto it = by_id.find(r.image_id);
        if (it == by_id.end()) throw std::runtime_error("no prediction for image " + r.image_id);
        out.push_back(rubric_scores(it->second->caption, r, truth.vocab));
    }
    return out;
}

/// The detector is trained once; each variant then trains its own caption
/// stage from that checkpoint, captions the evaluation split and is scored
/// with the offline rubric.
inline AblationResult run_ablation(const fs::path& data_dir, const fs::path& out_dir, const AblationConfig& ac,
                                   const Progress& progress = {}) {
    const auto train = load_split(data_dir, "train");
    const auto eval = load_split(data_dir, ac.eval_split);
    const auto images = directory_images(data_dir);
    fs::create_directories(out_dir);

    TrainConfig base;
    base.seed = ac.seed;
    base.batch_size = ac.batch_size;
    base.lr_hoi = ac.lr_hoi;
    base.lr_caption = ac.lr_caption;
    TrainConfig hc = base;
    hc.stage = "hoi";
    hc.epochs = ac.hoi_epochs;
    train_hoi_stage(train, images, hc, out_dir / "hoi", progress);

    AblationResult res;
    res.detector = evaluate_triples(*load_checkpoint(out_dir / "hoi" / "hoi.ckpt"), eval, images);
    res.table.metrics = {"coi_proxy", "bma_proxy", "tdo_proxy"};
    std::size_t k = 0;
    for (const auto& [name, abl] : ablation_variants()) {
        TrainConfig cc = base;
        cc.stage = "caption";
        cc.epochs = ac.caption_epochs;
        cc.ablations = abl;
        const fs::path dir = out_dir / ("variant_" + std::to_string(k++));
        auto stage = train_caption_stage(train, images, load_checkpoint(out_dir / "hoi" / "hoi.ckpt"), cc, dir, progress);
        const auto pred = run_inference(eval, images, *stage.model);
        write_inference_jsonl(dir / "inference.jsonl", pred);
        const RubricScore m = mean_rubric(score_inference(pred, eval));
        res.scores[name] = m;
        res.table.rows.push_back(ScoreRow{"synthetic-" + ac.eval_split, name, {m.coi_proxy, m.bma_proxy, m.tdo_proxy}});
        if (progress) progress(name + ": coi " + std::to_string(m.coi_proxy) + " bma " + std::to_string(m.bma_proxy));
    }
    res.report = build_report(res.table);
    std::ofstream(out_dir / "ablation.txt", std::ios::binary) << res.report.text;
    std::ofstream(out_dir / "ablation.csv", std::ios::binary) << res.report.csv;
    emit_metric_plot(res.table, out_dir, "Ablation (rubric proxies)");
    return res;
}

namespace cli_detail {

/// Domain failures reported with exit status 1.
class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DomainError("cannot write " + p.string());
    out << s;
}

/// Every option of `app` with its effective value, for the run record.
inline nlohmann::ordered_json resolved_options(const CLI::App& app) {
    nlohmann::ordered_json j;
    for (const CLI::Option* o : app.get_options()) {
        if (o->get_lnames().empty()) continue;
        const std::string key = o->get_lnames().front();
        if (key == "help" || key == "help-all") continue;
        if (o->count() > 0) {
            const auto r = o->results();
            if (o->get_type_size() == 0)
                j[key] = true;
            else if (r.size() == 1)
                j[key] = r.front();
            else
                j[key] = r;
        } else if (o->get_type_size() == 0) {
            j[key] = false;
        } else if (!o->get_default_str().empty()) {
            j[key] = o->get_default_str();
        }
    }
    return j;
}

inline void record_run(const fs::path& dir, const std::string& command, const CLI::App& app,
                       const nlohmann::json& extra = nullptr) {
    fs::create_directories(dir);
    nlohmann::ordered_json j;
    j["command"] = command;
    j["options"] = resolved_options(app);
    if (!extra.is_null()) j["resolved"] = extra;
    write_text(dir / "run_config.json", j.dump(2) + "\n");
}

/// Tags per image from either an inference JSONL or a dataset JSONL.
inline std::vector<std::pair<std::string, std::vector<std::string>>> read_tag_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DomainError("cannot open " + p.string());
    std::string first;
    std::getline(in, first);
    in.close();
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    bool is_dataset = false;
    try {
        is_dataset = !first.empty() && nlohmann::json::parse(first).contains("schema");
    } catch (const nlohmann::json::exception&) {
        throw DomainError(p.string() + ": line 1 is not JSON");
    }
    if (is_dataset) {
        const auto m = load_dataset(p);
        for (const auto& [r, c] : m.records) {
            std::vector<std::string> tags;
            for (const auto& t : ground_truth_tags(r, m.vocab)) tags.push_back(canonical_tag(t));
            out.emplace_back(r.image_id, std::move(tags));
        }
    } else {
        for (auto& r : read_inference_jsonl(p)) out.emplace_back(r.image_id, std::move(r.tags));
    }
    return out;
}

inline std::string format_tag_metrics(const TagMetricsReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "samples   %zu\nprecision %.4f\nrecall    %.4f\nf1        %.4f\njaccard   %.4f\ntop1      %.4f\n"
                  "top3      %.4f\ntop5      %.4f\n",
                  r.n_samples, r.precision, r.recall, r.f1, r.jaccard, r.top_k.at(1), r.top_k.at(3), r.top_k.at(5));
    return buf;
}

/// Training flags mirroring TrainConfig; explicit flags override --config.
struct TrainFlags {
    std::string config;
    int epochs = 0;
    double lr_hoi = 0, lr_caption = 0, weight_decay = 0, clip_norm = 0;
    int batch_size = 0;
    std::uint64_t seed = 0;
    bool without_hoi_tag = false, without_pos = false, train_decoder_ffn = false;
    std::map<std::string, CLI::Option*> opts;

    void attach(CLI::App* app, bool caption) {
        app->add_option("--config", config, "JSON file mirroring the training config")->check(CLI::ExistingFile);
        opts["epochs"] = app->add_option("--epochs", epochs, "training epochs (>= 1)");
        opts["lr_hoi"] = app->add_option("--lr-hoi", lr_hoi, "detector learning rate");
        opts["lr_caption"] = app->add_option("--lr-caption", lr_caption, "caption-stage learning rate");
        opts["batch_size"] = app->add_option("--batch-size", batch_size, "samples per optimizer step");
        opts["seed"] = app->add_option("--seed", seed, "seed for initialization and shuffling");
        opts["weight_decay"] = app->add_option("--weight-decay", weight_decay, "decoupled weight decay");
        opts["clip_norm"] = app->add_option("--clip-norm", clip_norm, "global gradient-norm clip");
        if (caption) {
            opts["without_hoi_tag"] = app->add_flag("--without-hoi-tag", without_hoi_tag, "feed only the bare [HOI] token");
            opts["without_pos"] = app->add_flag("--without-pos", without_pos, "drop visual position embeddings");
            opts["train_decoder_ffn"] =
                app->add_flag("--train-decoder-ffn", train_decoder_ffn, "also fine-tune decoder feed-forward blocks");
        }
    }

    bool given(const std::string& k) const {
        const auto it = opts.find(k);
        return it != opts.end() && it->second->count() > 0;
    }

    TrainConfig resolve(const std::string& stage) const {
        TrainConfig c = config.empty() ? TrainConfig{} : load_train_config(config);
        c.stage = stage;
        if (given("epochs")) c.epochs = epochs;
        if (given("lr_hoi")) c.lr_hoi = lr_hoi;
        if (given("lr_caption")) c.lr_caption = lr_caption;
        if (given("batch_size")) c.batch_size = batch_size;
        if (given("seed")) c.seed = seed;
        if (given("weight_decay")) c.weight_decay = weight_decay;
        if (given("clip_norm")) c.clip_norm = clip_norm;
        if (given("without_hoi_tag")) c.ablations.without_hoi_tag = without_hoi_tag;
        if (given("without_pos")) c.ablations.without_pos = without_pos;
        if (given("train_decoder_ffn")) c.train_decoder_ffn = train_decoder_ffn;
        validate(c);
        return c;
    }
};

}  // namespace cli_detail

/// Entry point of the command-line tool. Returns 0 on success, 1 on domain
/// errors and 2 on usage errors.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace cli_detail;
    CLI::App app{"Threat-scene HOI tagging and captioning toolkit", "hoitag"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for every subcommand");
    Progress progress = [&err](const std::string& s) { err << s << std::endl; };

    // dataset
    auto* dataset = app.add_subcommand("dataset", "build or validate synthetic datasets")->require_subcommand(1);
    auto* ds_build = dataset->add_subcommand("build", "render splits, manifests and images");
    std::string db_out;
    std::size_t n_train = 100, n_val = 20, n_test = 20;
    std::uint64_t db_seed = 7;
    double threat_ratio = 0.4;
    ds_build->add_option("--out", db_out, "output directory")->required();
    ds_build->add_option("--train", n_train, "train scenes")->capture_default_str();
    ds_build->add_option("--val", n_val, "validation scenes")->capture_default_str();
    ds_build->add_option("--test", n_test, "test scenes")->capture_default_str();
    ds_build->add_option("--seed", db_seed, "master seed")->capture_default_str();
    ds_build->add_option("--threat-ratio", threat_ratio, "fraction of threat scenes per split")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));

    auto* ds_validate = dataset->add_subcommand("validate", "check manifests and images");
    std::string dv_data;
    ds_validate->add_option("--data", dv_data, "dataset directory")->required()->check(CLI::ExistingDirectory);

    // train
    auto* train = app.add_subcommand("train", "run a training stage")->require_subcommand(1);
    auto* tr_hoi = train->add_subcommand("hoi", "supervised detector training");
    auto* tr_cap = train->add_subcommand("caption", "fusion and decoder fine-tuning on a frozen detector");
    std::string th_data, th_out, tc_data, tc_out, tc_ckpt;
    TrainFlags th_flags, tc_flags;
    tr_hoi->add_option("--data", th_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    tr_hoi->add_option("--out", th_out, "run directory")->required();
    th_flags.attach(tr_hoi, false);
    tr_cap->add_option("--data", tc_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    tr_cap->add_option("--hoi-checkpoint", tc_ckpt, "detector checkpoint")->required()->check(CLI::ExistingFile);
    tr_cap->add_option("--out", tc_out, "run directory")->required();
    tc_flags.attach(tr_cap, true);

    // infer
    auto* infer = app.add_subcommand("infer", "detect, tag and caption a dataset split");
    std::string in_data, in_ckpt, in_out, in_split = "test", in_mode = "greedy";
    std::size_t in_beam = 1, in_max_len = 64;
    double in_penalty = 1.0, in_act = 0.5, in_ent = 0.5;
    infer->add_option("--data", in_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    infer->add_option("--checkpoint", in_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
    infer->add_option("--out", in_out, "output JSONL")->required();
    infer->add_option("--split", in_split, "split to run on")->capture_default_str()->check(CLI::IsMember({"train", "val", "test"}));
    infer->add_option("--mode", in_mode, "decoding mode")->capture_default_str()->check(CLI::IsMember({"greedy", "beam"}));
    infer->add_option("--beam-width", in_beam, "beam width")->capture_default_str()->check(CLI::PositiveNumber);
    infer->add_option("--max-len", in_max_len, "generation length limit")->capture_default_str()->check(CLI::PositiveNumber);
    infer->add_option("--length-penalty", in_penalty, "beam length-penalty exponent")->capture_default_str();
    infer->add_option("--action-threshold", in_act, "action probability threshold")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    infer->add_option("--entity-threshold", in_ent, "entity confidence threshold")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));

    // eval
    auto* eval = app.add_subcommand("eval", "score predictions")->require_subcommand(1);
    auto* ev_tags = eval->add_subcommand("tags", "tag precision, recall, F1, Jaccard and Top-K");
    auto* ev_rubric = eval->add_subcommand("rubric", "offline caption rubric");
    auto* ev_judge = eval->add_subcommand("judge", "caption scores from an external judge model");
    std::string et_pred, et_truth, et_out, er_pred, er_truth, er_out, er_model = "model", ej_pred, ej_truth, ej_out,
                                                                         ej_model = "model";
    std::vector<std::string> ej_generators;
    int ej_concurrency = 1;
    ev_tags->add_option("--pred", et_pred, "inference JSONL")->required()->check(CLI::ExistingFile);
    ev_tags->add_option("--truth", et_truth, "dataset or inference JSONL")->required()->check(CLI::ExistingFile);
    ev_tags->add_option("--out", et_out, "directory for metric files");
    ev_rubric->add_option("--pred", er_pred, "inference JSONL")->required()->check(CLI::ExistingFile);
    ev_rubric->add_option("--truth", er_truth, "dataset JSONL")->required()->check(CLI::ExistingFile);
    ev_rubric->add_option("--model", er_model, "model name for the CSV")->capture_default_str();
    ev_rubric->add_option("--out", er_out, "directory for score files");
    ev_judge->add_option("--pred", ej_pred, "inference JSONL")->required()->check(CLI::ExistingFile);
    ev_judge->add_option("--truth", ej_truth, "dataset JSONL")->required()->check(CLI::ExistingFile);
    ev_judge->add_option("--model", ej_model, "model name for the CSV")->capture_default_str();
    ev_judge->add_option("--generator-id", ej_generators, "ids of models that produced the captions")->required();
    ev_judge->add_option("--concurrency", ej_concurrency, "parallel requests")->capture_default_str()->check(CLI::PositiveNumber);
    ev_judge->add_option("--out", ej_out, "directory for score files");

    // report
    auto* report = app.add_subcommand("report", "render comparison tables from CSV");
    std::vector<std::string> rp_scores, rp_tags;
    std::string rp_out;
    report->add_option("--scores", rp_scores, "CSV dataset,model,<metrics>")->check(CLI::ExistingFile);
    report->add_option("--tags", rp_tags, "CSV model,precision,recall,f1,jaccard,top1,top3,top5")->check(CLI::ExistingFile);
    report->add_option("--out", rp_out, "output directory");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "full model against without_hoi_tag and without_pos");
    std::string ab_data, ab_out = "ablation";
    AblationConfig ac;
    ablate->add_option("--data", ab_data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ablate->add_option("--out", ab_out, "run directory")->capture_default_str();
    ablate->add_option("--seed", ac.seed, "seed")->capture_default_str();
    ablate->add_option("--hoi-epochs", ac.hoi_epochs, "detector epochs")->capture_default_str()->check(CLI::PositiveNumber);
    ablate->add_option("--caption-epochs", ac.caption_epochs, "caption epochs per variant")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    ablate->add_option("--lr-hoi", ac.lr_hoi, "detector learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    ablate->add_option("--lr-caption", ac.lr_caption, "caption learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    ablate->add_option("--batch-size", ac.batch_size, "batch size")->capture_default_str()->check(CLI::PositiveNumber);
    ablate->add_option("--eval-split", ac.eval_split, "held-out split")->capture_default_str()->check(CLI::IsMember({"val", "test"}));

    // plot
    auto* plot = app.add_subcommand("plot", "emit SVG figures")->require_subcommand(1);
    auto* pl_loss = plot->add_subcommand("loss", "loss curve from a training log");
    auto* pl_abl = plot->add_subcommand("ablation", "grouped bars from a score CSV");
    std::string pl_log, pl_csv, pl_out_l, pl_out_a;
    pl_loss->add_option("--log", pl_log, "train_log.csv")->required()->check(CLI::ExistingFile);
    pl_loss->add_option("--out", pl_out_l, "output directory")->required();
    pl_abl->add_option("--report", pl_csv, "score CSV")->required()->check(CLI::ExistingFile);
    pl_abl->add_option("--out", pl_out_a, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* where = &app;
        for (const CLI::App* s = &app;;) {
            const auto subs = s->get_subcommands();
            if (subs.empty()) break;
            s = subs.front();
            where = s;
        }
        err << where->help();
        return 2;
    }

    try {
        if (ds_build->parsed()) {
            const fs::path dir = db_out;
            fs::create_directories(dir);
            const auto splits = build_splits({n_train, n_val, n_test}, threat_ratio, db_seed, {},
                                             [&](const SceneImage& img) {
                                                 write_png(image_path(dir, img.image_id).string(), img);
                                             });
            for (const auto& m : splits) serialize_dataset(m, dir / (m.split + ".jsonl"));
            Tokenizer::for_vocabulary(splits.front().vocab).save((dir / "vocab.txt").string());
            record_run(dir, "dataset build", *ds_build);
            out << "wrote " << n_train + n_val + n_test << " scenes to " << dir.string() << "\n";
            return 0;
        }
        if (ds_validate->parsed()) {
            const fs::path dir = dv_data;
            std::size_t problems = 0, checked = 0;
            for (const char* split : {"train", "val", "test"}) {
                const auto p = dir / (std::string(split) + ".jsonl");
                if (!fs::exists(p)) {
                    err << p.string() << ": missing\n";
                    ++problems;
                    continue;
                }
                const auto m = load_dataset(p);
                if (m.split != split) {
                    err << p.string() << ": header names split '" << m.split << "'\n";
                    ++problems;
                }
                for (const auto& v : manifest_violations(m)) {
                    err << p.string() << ": " << v << "\n";
                    ++problems;
                }
                for (const auto& [r, c] : m.records) {
                    ++checked;
                    const auto img = image_path(dir, r.image_id);
                    if (!fs::exists(img)) {
                        err << r.image_id << ": missing image " << img.string() << "\n";
                        ++problems;
                    } else if (read_png(img.string(), r.image_id) != regenerate_image(r, GeneratorConfig{.vocab = m.vocab})) {
                        err << r.image_id << ": image does not match its scene seed\n";
                        ++problems;
                    }
                }
            }
            if (problems > 0) throw DomainError(std::to_string(problems) + " problem(s) found");
            out << "ok: " << checked << " records valid\n";
            return 0;
        }
        if (tr_hoi->parsed()) {
            const TrainConfig c = th_flags.resolve("hoi");
            record_run(th_out, "train hoi", *tr_hoi, c);
            const auto r = train_hoi_stage(load_split(th_data, "train"), directory_images(th_data), c, th_out, progress);
            out << "train_triple_f1 " << r.log.final_metrics.at("train_triple_f1") << "\n";
            return 0;
        }
        if (tr_cap->parsed()) {
            const TrainConfig c = tc_flags.resolve("caption");
            record_run(tc_out, "train caption", *tr_cap, c);
            const auto r = train_caption_stage(load_split(tc_data, "train"), directory_images(tc_data),
                                               load_checkpoint(tc_ckpt), c, tc_out, progress);
            out << "train_token_accuracy " << r.log.final_metrics.at("train_token_accuracy") << "\n";
            return 0;
        }
        if (infer->parsed()) {
            InferenceOptions opt;
            opt.generation.mode = in_mode == "beam" ? GenerationConfig::Mode::Beam : GenerationConfig::Mode::Greedy;
            opt.generation.beam_width = in_beam;
            opt.generation.max_len = in_max_len;
            opt.generation.length_penalty = in_penalty;
            opt.thresholds = {in_act, in_ent};
            if (!(in_act > 0.0 && in_act < 1.0) || !(in_ent > 0.0 && in_ent < 1.0))
                throw DomainError("thresholds must lie strictly between 0 and 1");
            const auto bundle = load_checkpoint(in_ckpt);
            const auto recs = run_inference(load_split(in_data, in_split), directory_images(in_data), *bundle, opt);
            const fs::path o = in_out;
            if (o.has_parent_path()) fs::create_directories(o.parent_path());
            write_inference_jsonl(o, recs);
            record_run(o.has_parent_path() ? o.parent_path() : fs::path("."), "infer", *infer);
            out << "wrote " << recs.size() << " records to " << o.string() << "\n";
            return 0;
        }
        if (ev_tags->parsed()) {
            const auto pred = read_tag_file(et_pred);
            const auto truth = read_tag_file(et_truth);
            std::map<std::string, const std::vector<std::string>*> by_id;
            for (const auto& [id, tags] : pred) by_id[id] = &tags;
            std::vector<std::vector<std::string>> p;
            std::vector<std::set<std::string>> t;
            for (const auto& [id, tags] : truth) {
                const auto it = by_id.find(id);
                if (it == by_id.end()) throw DomainError("no prediction for image " + id);
                p.push_back(*it->second);
                t.emplace_back(tags.begin(), tags.end());
            }
            if (p.size() != pred.size()) throw DomainError("predictions include images absent from the truth file");
            const auto rep = tag_metrics(p, t);
            const std::string text = format_tag_metrics(rep);
            out << text;
            if (!et_out.empty()) {
                write_text(fs::path(et_out) / "tag_metrics.txt", text);
                write_text(fs::path(et_out) / "tag_metrics.csv",
                           build_tag_report({TagRow{"model", rep}}).csv);
                record_run(et_out, "eval tags", *ev_tags);
            }
            return 0;
        }
        if (ev_rubric->parsed()) {
            const auto truth = load_dataset(er_truth);
            const auto m = mean_rubric(score_inference(read_inference_jsonl(er_pred), truth));
            ScoreTable t{{"coi_proxy", "bma_proxy", "tdo_proxy"},
                         {ScoreRow{"synthetic-" + truth.split, er_model, {m.coi_proxy, m.bma_proxy, m.tdo_proxy}}}};
            const auto rep = build_report(t);
            out << rep.text;
            if (!er_out.empty()) {
                write_text(fs::path(er_out) / "rubric.csv", rep.csv);
                record_run(er_out, "eval rubric", *ev_rubric);
            }
            return 0;
        }
        if (ev_judge->parsed()) {
            JudgeConfig jc = judge_config_from_env();
            jc.generator_ids = ej_generators;
            jc.concurrency = ej_concurrency;
            const auto truth = load_dataset(ej_truth);
            const auto pred = read_inference_jsonl(ej_pred);
            std::map<std::string, const InferenceRecord*> by_id;
            for (const auto& p : pred) by_id[p.image_id] = &p;
            std::vector<JudgeItem> items;
            for (const auto& [r, c] : truth.records) {
                const auto it = by_id.find(r.image_id);
                if (it == by_id.end()) throw DomainError("no prediction for image " + r.image_id);
                items.push_back({scene_description(r, truth.vocab), it->second->caption});
            }
            const auto scores = judge_scores(items, jc);
            double coi = 0, bma = 0, tdo = 0;
            for (const auto& s : scores) {
                coi += s.coi;
                bma += s.bma;
                tdo += s.tdo;
            }
            const double n = std::max<std::size_t>(1, scores.size());
            const auto rep = build_report(
                ScoreTable{{"CoI", "BMA", "TDO"}, {ScoreRow{"synthetic-" + truth.split, ej_model, {coi / n, bma / n, tdo / n}}}});
            out << rep.text;
            if (!ej_out.empty()) {
                write_text(fs::path(ej_out) / "judge.csv", rep.csv);
                std::string raw;
                for (std::size_t i = 0; i < scores.size(); ++i)
                    raw += nlohmann::json({{"image_id", truth.records[i].first.image_id},
                                           {"judge_id", scores[i].judge_id},
                                           {"coi", scores[i].coi},
                                           {"bma", scores[i].bma},
                                           {"tdo", scores[i].tdo},
                                           {"raw_response", scores[i].raw_response}})
                               .dump() +
                           "\n";
                write_text(fs::path(ej_out) / "judge_raw.jsonl", raw);
                record_run(ej_out, "eval judge", *ev_judge);
            }
            return 0;
        }
        if (report->parsed()) {
            if (rp_scores.empty() && rp_tags.empty()) {
                err << "error: report needs --scores and/or --tags\n\n" << report->help();
                return 2;
            }
            std::string text, csv_scores, csv_tags;
            if (!rp_scores.empty()) {
                ScoreTable all;
                for (const auto& f : rp_scores) {
                    auto t = read_score_csv(f);
                    if (all.metrics.empty()) all.metrics = t.metrics;
                    if (t.metrics != all.metrics) throw DomainError(f + ": metric columns differ from the first file");
                    all.rows.insert(all.rows.end(), t.rows.begin(), t.rows.end());
                }
                const auto r = build_report(all);
                text += r.text;
                csv_scores = r.csv;
            }
            if (!rp_tags.empty()) {
                std::vector<TagRow> all;
                for (const auto& f : rp_tags) {
                    auto t = read_tag_csv(f);
                    all.insert(all.end(), t.begin(), t.end());
                }
                const auto r = build_tag_report(all);
                text += (text.empty() ? "" : "\n") + r.text;
                csv_tags = r.csv;
            }
            out << text;
            if (!rp_out.empty()) {
                write_text(fs::path(rp_out) / "report.txt", text);
                if (!csv_scores.empty()) write_text(fs::path(rp_out) / "report_scores.csv", csv_scores);
                if (!csv_tags.empty()) write_text(fs::path(rp_out) / "report_tags.csv", csv_tags);
                record_run(rp_out, "report", *report);
            }
            return 0;
        }
        if (ablate->parsed()) {
            record_run(ab_out, "ablate", *ablate);
            const auto r = run_ablation(ab_data, ab_out, ac, progress);
            out << r.report.text;
            return 0;
        }
        if (pl_loss->parsed()) {
            const auto p = emit_loss_plot(TrainLog::read_csv(pl_log), pl_out_l);
            record_run(pl_out_l, "plot loss", *pl_loss);
            out << "wrote " << p.string() << "\n";
            return 0;
        }
        if (pl_abl->parsed()) {
            const auto p = emit_metric_plot(read_score_csv(pl_csv), pl_out_a);
            record_run(pl_out_a, "plot ablation", *pl_abl);
            out << "wrote " << p.string() << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace hoitag
