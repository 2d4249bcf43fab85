// Command-line front end: corpus building, the three training stages,
// restoration, evaluation, sweeps and report rendering.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mimood/corpus.hpp"
#include "mimood/eval.hpp"
#include "mimood/plot.hpp"
#include "mimood/restoration.hpp"
#include "mimood/training.hpp"

namespace fs = std::filesystem;
using namespace mimood;
using nlohmann::json;

namespace {

fs::path resolve_out(const std::string& p) {
    fs::path path(p);
    const char* root = std::getenv("MIMOOD_OUT_ROOT");
    if (root && *root && path.is_relative()) return fs::path(root) / path;
    return path;
}

json load_json_file(const std::string& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot open config file: " + p);
    json j;
    f >> j;
    return j;
}

void write_json_file(const fs::path& p, const json& j) {
    std::ofstream f(p);
    if (!f) throw IoError("cannot write " + p.string());
    f << j.dump(2) << "\n";
}

std::vector<float> parse_float_list(const std::string& csv) {
    std::vector<float> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stof(tok));
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    for (float v : parse_float_list(csv)) out.push_back(static_cast<int>(v));
    return out;
}

std::vector<ImageSample> load_split(const fs::path& corpus_dir, Split split) {
    auto all = corpus::load_corpus(corpus_dir);
    std::vector<ImageSample> out;
    for (auto& s : all)
        if (s.split == split) out.push_back(std::move(s));
    require(!out.empty(), "corpus has no samples in split '" + split_name(split) + "'");
    return out;
}

void append_history_csv(const fs::path& path, const std::vector<float>& losses, int64_t from) {
    bool fresh = !fs::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw IoError("cannot write " + path.string());
    if (fresh) f << "step,loss\n";
    for (size_t i = 0; i < losses.size(); ++i)
        f << (from + static_cast<int64_t>(i)) << "," << losses[i] << "\n";
}

struct BrushFlags {
    float min_coverage = -1.0f, max_coverage = -1.0f;

    masks::BrushParams resolve(masks::BrushParams base) const {
        if (min_coverage >= 0.0f) base.min_coverage = min_coverage;
        if (max_coverage >= 0.0f) base.max_coverage = max_coverage;
        return base;
    }
};

json brush_to_json(const masks::BrushParams& b) {
    return {{"min_walks", b.min_walks},       {"max_walks", b.max_walks},
            {"min_steps", b.min_steps},       {"max_steps", b.max_steps},
            {"min_width", b.min_width},       {"max_width", b.max_width},
            {"min_coverage", b.min_coverage}, {"max_coverage", b.max_coverage}};
}

masks::BrushParams brush_from_json(const json& j) {
    masks::BrushParams b;
    b.min_walks = j.at("min_walks");
    b.max_walks = j.at("max_walks");
    b.min_steps = j.at("min_steps");
    b.max_steps = j.at("max_steps");
    b.min_width = j.at("min_width");
    b.max_width = j.at("max_width");
    b.min_coverage = j.at("min_coverage");
    b.max_coverage = j.at("max_coverage");
    return b;
}

// ---------------------------------------------------------------------------
// corpus build
// ---------------------------------------------------------------------------

struct CorpusArgs {
    std::string out;
    int train = 200, val = 30, test = 30;
    int size = 64, f = 4;
    int64_t seed = 0;
};

int cmd_corpus_build(const CorpusArgs& a) {
    fs::path dir = resolve_out(a.out);
    fs::create_directories(dir);

    std::vector<ImageSample> samples;
    int64_t next = a.seed;
    for (int i = 0; i < a.train; ++i) {
        auto s = corpus::generate_healthy(next++, a.size, a.f);
        s.split = Split::train;
        samples.push_back(std::move(s));
    }
    // val and test carry injected anomalies with exact ground truth; val is
    // the tuning split for the lambda/R/T sweep
    for (int i = 0; i < a.val; ++i) {
        auto h = corpus::generate_healthy(next, a.size, a.f);
        auto s = corpus::inject_anomaly(h, next + 1000000);
        ++next;
        s.split = Split::val;
        samples.push_back(std::move(s));
    }
    for (int i = 0; i < a.test; ++i) {
        auto h = corpus::generate_healthy(next, a.size, a.f);
        auto s = corpus::inject_anomaly(h, next + 1000000);
        ++next;
        s.split = Split::test;
        samples.push_back(std::move(s));
    }
    corpus::save_corpus(samples, dir);

    json cfg = {{"command", "corpus build"}, {"train", a.train}, {"val", a.val},
                {"test", a.test},            {"size", a.size},   {"f", a.f},
                {"seed", a.seed}};
    write_json_file(dir / "corpus.config.json", cfg);
    std::cout << "corpus: " << samples.size() << " samples written to " << dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string corpus, out, config_file, ckpt_vqvae;
    int steps = -1, batch = -1, stop_at = -1;
    float lr = -1.0f;
    int k_size = -1, d = -1, f = -1, depth = -1, dim = -1, heads = -1;
    float drop_path = -1.0f;
    int64_t seed = 0;
    bool resume = false;
    BrushFlags brush;
};

std::vector<const Mat*> train_images(const std::vector<ImageSample>& samples) {
    std::vector<const Mat*> out;
    for (const auto& s : samples) out.push_back(&s.pixels);
    return out;
}

int cmd_train_vqvae(const TrainArgs& a) {
    fs::path out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);
    fs::path ckpt_path = out_dir / "vqvae.ckpt";

    // on resume the checkpoint supplies the baseline config; flags may extend
    // the schedule but not change the architecture
    bool resuming = a.resume && fs::exists(ckpt_path);
    std::optional<Checkpoint> old;
    tokenizer::VqvaeConfig cfg;
    if (resuming) {
        old.emplace(Checkpoint::load(ckpt_path));
        cfg = tokenizer::VqvaeConfig::from_json(old->config.at("vqvae"));
        require(a.f <= 0 || a.f == cfg.f, "train vqvae: --f differs from checkpoint");
        require(a.k_size <= 0 || a.k_size == cfg.k_size, "train vqvae: --k differs from checkpoint");
        require(a.d <= 0 || a.d == cfg.d, "train vqvae: --d differs from checkpoint");
    }
    if (!a.config_file.empty()) {
        json j = load_json_file(a.config_file);
        if (j.contains("vqvae")) j = j["vqvae"];
        if (!resuming) {
            if (j.contains("f")) cfg.f = j["f"];
            if (j.contains("k_size")) cfg.k_size = j["k_size"];
            if (j.contains("d")) cfg.d = j["d"];
            if (j.contains("channels")) cfg.channels = j["channels"].get<std::vector<int>>();
            if (j.contains("beta")) cfg.beta = j["beta"];
        }
        if (j.contains("steps")) cfg.steps = j["steps"];
        if (j.contains("batch")) cfg.batch = j["batch"];
        if (j.contains("lr")) cfg.opt.lr = j["lr"];
    }
    if (a.f > 0) cfg.f = a.f;
    if (a.k_size > 0) cfg.k_size = a.k_size;
    if (a.d > 0) cfg.d = a.d;
    if (a.steps > 0) cfg.steps = a.steps;
    if (a.batch > 0) cfg.batch = a.batch;
    if (a.lr > 0) cfg.opt.lr = a.lr;
    cfg.opt.total_steps = cfg.steps;
    if (!resuming) {
        // default channel ladder scales with the number of stages
        int stages = 0;
        for (int x = cfg.f; x > 1; x >>= 1) ++stages;
        if (static_cast<int>(cfg.channels.size()) != stages) {
            cfg.channels.clear();
            for (int i = 0; i < stages; ++i) cfg.channels.push_back(32 << std::min(i, 2));
        }
    }
    cfg.validate();

    auto samples = load_split(a.corpus, Split::train);
    auto images = train_images(samples);

    tokenizer::Vqvae model;
    Rng master(static_cast<uint64_t>(a.seed));
    Rng data_rng = master.stream(1);
    int64_t from = 0;

    if (resuming) {
        model = tokenizer::Vqvae::from_checkpoint(*old);
        model.set_training_schedule(cfg.steps, cfg.batch, cfg.opt);
        optim::AdamW opt(model.parameters(), cfg.opt);
        from = training::load_state(*old, opt, data_rng);
        int64_t target = a.stop_at > 0 ? std::min(a.stop_at, cfg.steps) : cfg.steps;
        if (from >= target) {
            std::cout << "train vqvae: checkpoint already at step " << from << ", nothing to do\n";
            return 0;
        }
        auto hist = training::vqvae_steps(model, opt, images, data_rng, from, target);
        Checkpoint ck;
        model.save_params(ck);
        training::save_state(ck, opt, data_rng);
        ck.save(ckpt_path);
        append_history_csv(out_dir / "vqvae.history.csv", hist, from);
    } else {
        Rng init_rng = master.stream(0);
        model.setup(cfg, init_rng);
        optim::AdamW opt(model.parameters(), cfg.opt);
        int64_t target = a.stop_at > 0 ? std::min(a.stop_at, cfg.steps) : cfg.steps;
        auto hist = training::vqvae_steps(model, opt, images, data_rng, 0, target);
        Checkpoint ck;
        model.save_params(ck);
        training::save_state(ck, opt, data_rng);
        ck.save(ckpt_path);
        fs::remove(out_dir / "vqvae.history.csv");
        append_history_csv(out_dir / "vqvae.history.csv", hist, 0);
    }

    json resolved = model.config().to_json();
    resolved["seed"] = a.seed;
    resolved["corpus"] = a.corpus;
    if (resuming && fs::exists(out_dir / "vqvae.config.json")) {
        // keep the original seed on record; the rng state continues from the
        // checkpoint regardless of the flag value
        json prev = load_json_file((out_dir / "vqvae.config.json").string());
        if (prev.contains("seed")) resolved["seed"] = prev["seed"];
    }
    write_json_file(out_dir / "vqvae.config.json", resolved);
    std::cout << "train vqvae: " << model.config().steps << " steps, checkpoint at " << ckpt_path
              << "\n";
    return 0;
}

int cmd_train_transformer(const TrainArgs& a, bool is_mvtm) {
    const std::string stage = is_mvtm ? "mvtm" : "atd";
    fs::path out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);
    fs::path ckpt_path = out_dir / (stage + ".ckpt");

    nn::TransformerConfig base;
    int steps = 2000, batch = 8;
    optim::OptimizerConfig opt_cfg;
    opt_cfg.lr = 1e-3f;
    masks::BrushParams default_brush =
        is_mvtm ? masks::mvtm_brush_defaults() : masks::atd_brush_defaults();

    // on resume, schedule and brush baseline come from the checkpoint
    bool resuming = a.resume && fs::exists(ckpt_path);
    int64_t seed_used = a.seed;
    std::optional<Checkpoint> old;
    if (resuming) {
        old.emplace(Checkpoint::load(ckpt_path));
        const json& t = old->config.at("train");
        steps = t.at("steps");
        batch = t.at("batch");
        opt_cfg.lr = t.at("lr");
        seed_used = t.at("seed");
        default_brush = brush_from_json(t.at("brush"));
    }
    if (!a.config_file.empty()) {
        json j = load_json_file(a.config_file);
        if (j.contains(stage)) j = j[stage];
        if (j.contains("depth")) base.depth = j["depth"];
        if (j.contains("dim")) base.dim = j["dim"];
        if (j.contains("heads")) base.heads = j["heads"];
        if (j.contains("mlp_ratio")) base.mlp_ratio = j["mlp_ratio"];
        if (j.contains("drop_path")) base.drop_path = j["drop_path"];
        if (j.contains("steps")) steps = j["steps"];
        if (j.contains("batch")) batch = j["batch"];
        if (j.contains("lr")) opt_cfg.lr = j["lr"];
    }
    if (a.depth > 0) base.depth = a.depth;
    if (a.dim > 0) base.dim = a.dim;
    if (a.heads > 0) base.heads = a.heads;
    if (a.drop_path >= 0.0f) base.drop_path = a.drop_path;
    if (a.steps > 0) steps = a.steps;
    if (a.batch > 0) batch = a.batch;
    if (a.lr > 0) opt_cfg.lr = a.lr;
    opt_cfg.total_steps = steps;
    const int64_t target = a.stop_at > 0 ? std::min(a.stop_at, steps) : steps;

    masks::BrushParams brush = a.brush.resolve(default_brush);
    brush.validate();

    require(!a.ckpt_vqvae.empty(), "train " + stage + ": --ckpt-vqvae is required");
    tokenizer::Vqvae vqvae = tokenizer::Vqvae::from_checkpoint(Checkpoint::load(a.ckpt_vqvae));
    auto samples = load_split(a.corpus, Split::train);
    auto grids = training::tokenize_all(vqvae, train_images(samples));
    const int gh = grids.front().h, gw = grids.front().w;

    Rng master(static_cast<uint64_t>(a.seed));
    Rng data_rng = master.stream(1);
    int64_t from = 0;
    std::vector<float> hist;

    mvtm::MvtmModel mvtm_model;
    atd::AtdModel atd_model;

    auto finish = [&](Checkpoint& ck, optim::AdamW& opt) {
        ck.config["train"] = {{"steps", steps},      {"batch", batch},
                              {"lr", opt_cfg.lr},    {"seed", seed_used},
                              {"brush", brush_to_json(brush)}};
        training::save_state(ck, opt, data_rng);
        ck.save(ckpt_path);
        append_history_csv(out_dir / (stage + ".history.csv"), hist, from);
        json resolved = ck.config;
        resolved.erase("rng_state");
        write_json_file(out_dir / (stage + ".config.json"), resolved);
        std::cout << "train " << stage << ": step " << (from + static_cast<int64_t>(hist.size()))
                  << ", checkpoint at " << ckpt_path << "\n";
    };

    if (!resuming) fs::remove(out_dir / (stage + ".history.csv"));

    if (is_mvtm) {
        if (resuming) {
            mvtm_model = mvtm::MvtmModel::from_checkpoint(*old);
            optim::AdamW opt(mvtm_model.net.parameters(), opt_cfg);
            from = training::load_state(*old, opt, data_rng);
            if (from >= target) {
                std::cout << "train mvtm: checkpoint already at step " << from << "\n";
                return 0;
            }
            hist = training::mvtm_steps(mvtm_model, opt, grids, brush, batch, data_rng, from, target);
            Checkpoint ck;
            mvtm_model.save(ck);
            finish(ck, opt);
        } else {
            Rng init_rng = master.stream(0);
            mvtm_model.setup(vqvae.config().k_size, gh, gw, base, init_rng);
            optim::AdamW opt(mvtm_model.net.parameters(), opt_cfg);
            hist = training::mvtm_steps(mvtm_model, opt, grids, brush, batch, data_rng, 0, target);
            Checkpoint ck;
            mvtm_model.save(ck);
            finish(ck, opt);
        }
    } else {
        if (resuming) {
            atd_model = atd::AtdModel::from_checkpoint(*old);
            optim::AdamW opt(atd_model.net.parameters(), opt_cfg);
            from = training::load_state(*old, opt, data_rng);
            if (from >= target) {
                std::cout << "train atd: checkpoint already at step " << from << "\n";
                return 0;
            }
            hist = training::atd_steps(atd_model, opt, grids, brush, batch, data_rng, from, target);
            Checkpoint ck;
            atd_model.save(ck);
            finish(ck, opt);
        } else {
            Rng init_rng = master.stream(0);
            atd_model.setup(vqvae.config().k_size, gh, gw, base, init_rng);
            optim::AdamW opt(atd_model.net.parameters(), opt_cfg);
            hist = training::atd_steps(atd_model, opt, grids, brush, batch, data_rng, 0, target);
            Checkpoint ck;
            atd_model.save(ck);
            finish(ck, opt);
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// restore
// ---------------------------------------------------------------------------

struct PipelineArgs {
    std::string corpus, ckpt_vqvae, ckpt_mvtm, ckpt_atd, out;
    std::string split = "test";
    restoration::RestorationConfig cfg;
    int64_t seed = 0;
};

struct LoadedModels {
    tokenizer::Vqvae vqvae;
    mvtm::MvtmModel mvtm_model;
    atd::AtdModel atd_model;
    restoration::Models models;

    explicit LoadedModels(const PipelineArgs& a)
        : vqvae(tokenizer::Vqvae::from_checkpoint(Checkpoint::load(a.ckpt_vqvae))),
          mvtm_model(mvtm::MvtmModel::from_checkpoint(Checkpoint::load(a.ckpt_mvtm))),
          atd_model(atd::AtdModel::from_checkpoint(Checkpoint::load(a.ckpt_atd))) {
        models = {&vqvae, &mvtm_model, &atd_model};
        models.validate();
    }
};

int cmd_restore(const PipelineArgs& a) {
    a.cfg.validate();
    fs::path out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);

    LoadedModels lm(a);
    auto samples = load_split(a.corpus, split_from_name(a.split));

    json summary;
    summary["config"] = a.cfg.to_json();
    summary["seed"] = a.seed;
    summary["split"] = a.split;
    summary["corpus"] = a.corpus;
    summary["f"] = lm.vqvae.config().f;
    auto sample_list = json::array();

    Rng master(static_cast<uint64_t>(a.seed));
    double total_s = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        Rng sample_rng = master.stream(static_cast<uint64_t>(i));
        auto result = restoration::run_pipeline(s.pixels, lm.models, a.cfg, sample_rng);
        // initial token-level detector view, kept for the report panels
        auto p0 = atd::predict_anomaly(lm.vqvae.encode(s.pixels), lm.atd_model);

        write_f32(out_dir / (s.id + ".as.f32"), result.as_map);
        Mat p0m(p0.h, p0.w);
        std::copy(p0.cells.begin(), p0.cells.end(), p0m.data());
        write_f32(out_dir / (s.id + ".atd.f32"), p0m);
        for (int r = 0; r < a.cfg.restorations; ++r)
            write_f32(out_dir / (s.id + ".restoration-" + std::to_string(r) + ".f32"),
                      result.restorations[static_cast<size_t>(r)]);

        json js = {{"id", s.id},
                   {"h", s.pixels.rows()},
                   {"w", s.pixels.cols()},
                   {"atd_forwards", result.atd_forwards},
                   {"mvtm_forwards", result.mvtm_forwards},
                   {"timing", {{"restore_s", result.timing.restore_s},
                               {"score_s", result.timing.score_s},
                               {"total_s", result.timing.total_s}}}};
        sample_list.push_back(js);
        total_s += result.timing.total_s;
    }
    summary["samples"] = sample_list;
    summary["total_s"] = total_s;
    write_json_file(out_dir / "summary.json", summary);
    write_json_file(out_dir / "restore.config.json", summary["config"]);
    std::cout << "restore: " << samples.size() << " samples in " << total_s << " s, outputs in "
              << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval_token(const PipelineArgs& a, const std::string& out_file) {
    tokenizer::Vqvae vqvae = tokenizer::Vqvae::from_checkpoint(Checkpoint::load(a.ckpt_vqvae));
    atd::AtdModel atd_model = atd::AtdModel::from_checkpoint(Checkpoint::load(a.ckpt_atd));
    auto samples = load_split(a.corpus, split_from_name(a.split));
    auto report = eval::evaluate_tokens(atd_model, vqvae, samples);
    report.config_echo = {{"split", a.split}, {"corpus", a.corpus}};
    json j = metrics::report_to_json(report);
    std::cout << j.dump(2) << "\n";
    if (!out_file.empty()) write_json_file(resolve_out(out_file), j);
    return 0;
}

int cmd_eval_pixel(const std::string& corpus_dir, const std::string& scores_dir,
                   const std::string& out_file) {
    fs::path sdir = resolve_out(scores_dir);
    json summary = load_json_file((sdir / "summary.json").string());

    auto all = corpus::load_corpus(corpus_dir);
    std::vector<Mat> as_maps;
    std::vector<MaskGrid> gts;
    double timing = summary.value("total_s", 0.0);
    for (const auto& js : summary.at("samples")) {
        std::string id = js.at("id");
        auto it = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.id == id; });
        require(it != all.end(), "eval pixel: sample " + id + " not found in corpus");
        if (!it->gt_mask) continue;
        as_maps.push_back(read_f32(sdir / (id + ".as.f32"), js.at("h"), js.at("w")));
        gts.push_back(*it->gt_mask);
    }
    require(!as_maps.empty(), "eval pixel: no annotated samples among the scored ids");

    auto report = eval::evaluate_pixels(as_maps, gts, timing);
    report.config_echo = summary.at("config");
    json j = metrics::report_to_json(report);
    std::cout << j.dump(2) << "\n";
    if (!out_file.empty()) write_json_file(resolve_out(out_file), j);
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep(const PipelineArgs& a, const std::string& axis, const std::string& values_csv) {
    require(axis == "lambda" || axis == "R" || axis == "T", "sweep: axis must be lambda, R or T");
    auto values = parse_float_list(values_csv);
    require(!values.empty(), "sweep: --values must be a nonempty list");

    fs::path out_dir = resolve_out(a.out);
    fs::create_directories(out_dir);
    LoadedModels lm(a);
    auto samples = load_split(a.corpus, split_from_name(a.split));

    std::ofstream csv(out_dir / "sweep.csv");
    if (!csv) throw IoError("cannot write sweep.csv");
    csv << "axis,value,best_dice,best_threshold,ap,auroc,restore_s\n";

    std::vector<double> xs, dices;
    json rows = json::array();
    for (float v : values) {
        restoration::RestorationConfig cfg = a.cfg;
        if (axis == "lambda") cfg.lambda = v;
        if (axis == "R") cfg.restorations = static_cast<int>(v);
        if (axis == "T") cfg.iterations = static_cast<int>(v);
        cfg.validate();

        std::vector<Mat> as_maps;
        std::vector<MaskGrid> gts;
        double restore_s = 0.0;
        Rng master(static_cast<uint64_t>(a.seed));
        for (size_t i = 0; i < samples.size(); ++i) {
            if (!samples[i].gt_mask) continue;
            auto result = restoration::run_pipeline(samples[i].pixels, lm.models, cfg,
                                                    master.stream(static_cast<uint64_t>(i)));
            as_maps.push_back(result.as_map);
            gts.push_back(*samples[i].gt_mask);
            restore_s += result.timing.total_s;
        }
        require(!as_maps.empty(), "sweep: split has no annotated samples");
        auto report = eval::evaluate_pixels(as_maps, gts, restore_s);

        csv << axis << "," << v << "," << *report.best_dice << "," << *report.best_threshold << ","
            << report.ap << "," << report.auroc << "," << restore_s << "\n";
        xs.push_back(v);
        dices.push_back(*report.best_dice);
        json row = metrics::report_to_json(report);
        row["axis"] = axis;
        row["value"] = v;
        rows.push_back(row);
        std::cout << axis << "=" << v << " dice=" << *report.best_dice << " ap=" << report.ap
                  << " auroc=" << report.auroc << "\n";
    }

    plot::write_svg_line(out_dir / "sweep.svg", xs, dices, axis, "best DICE",
                         "best DICE vs " + axis);
    size_t best = 0;
    for (size_t i = 1; i < dices.size(); ++i)
        if (dices[i] > dices[best]) best = i;
    json out = {{"axis", axis},
                {"values", values},
                {"best_value", values[best]},
                {"best_dice", dices[best]},
                {"rows", rows},
                {"base_config", a.cfg.to_json()},
                {"seed", a.seed},
                {"split", a.split}};
    write_json_file(out_dir / "sweep.json", out);
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

int cmd_report(const std::string& run_dir, const std::string& corpus_dir, const std::string& out) {
    fs::path rdir = resolve_out(run_dir);
    fs::path odir = out.empty() ? rdir : resolve_out(out);
    fs::create_directories(odir);
    json summary = load_json_file((rdir / "summary.json").string());
    auto cfg = restoration::RestorationConfig::from_json(summary.at("config"));
    int f = summary.at("f");
    auto all = corpus::load_corpus(corpus_dir);

    std::ofstream txt(odir / "report.txt");
    if (!txt) throw IoError("cannot write report.txt");
    txt << "restoration report\n";
    txt << "samples: " << summary.at("samples").size() << "  R=" << cfg.restorations
        << "  T=" << cfg.iterations << "  lambda=" << cfg.lambda << "\n\n";

    for (const auto& js : summary.at("samples")) {
        std::string id = js.at("id");
        int h = js.at("h"), w = js.at("w");
        auto it = std::find_if(all.begin(), all.end(), [&](const auto& s) { return s.id == id; });
        require(it != all.end(), "report: sample " + id + " not found in corpus");

        Mat atd_grid = read_f32(rdir / (id + ".atd.f32"), h / f, w / f);
        Grid<float> pg(h / f, w / f);
        std::copy(atd_grid.data(), atd_grid.data() + atd_grid.size(), pg.cells.begin());

        // panel layout: original, detector view, R restorations, R residuals
        std::vector<Mat> panels{it->pixels, plot::upsample_grid(pg, f)};
        std::vector<Mat> restorations;
        for (int r = 0; r < cfg.restorations; ++r)
            restorations.push_back(read_f32(rdir / (id + ".restoration-" + std::to_string(r) + ".f32"), h, w));
        for (const auto& r : restorations) panels.push_back(r);
        for (const auto& r : restorations) {
            Mat res = restoration::avg_pool(
                restoration::min_pool((r - it->pixels).cwiseAbs(), cfg.min_pool), cfg.avg_pool);
            panels.push_back(plot::for_display(res));
        }
        plot::write_pgm(odir / (id + ".pgm"), plot::hstack(panels));

        Mat as = read_f32(rdir / (id + ".as.f32"), h, w);
        txt << id << ": panels=" << panels.size() << " max_as=" << as.maxCoeff()
            << " mean_as=" << as.mean() << " atd_forwards=" << js.at("atd_forwards")
            << " mvtm_forwards=" << js.at("mvtm_forwards") << "\n";
    }
    std::cout << "report: wrote panels for " << summary.at("samples").size() << " samples to "
              << odir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked token in-painting pipeline for unsupervised anomaly detection"};
    app.require_subcommand(1);

    // corpus build
    CorpusArgs ca;
    auto* corpus_cmd = app.add_subcommand("corpus", "corpus management");
    corpus_cmd->require_subcommand(1);
    auto* build = corpus_cmd->add_subcommand("build", "generate a synthetic phantom corpus");
    build->add_option("--out", ca.out, "output directory")->required();
    build->add_option("--train", ca.train, "healthy training samples");
    build->add_option("--val", ca.val, "annotated validation samples");
    build->add_option("--test", ca.test, "annotated test samples");
    build->add_option("--size", ca.size, "image side length");
    build->add_option("--f", ca.f, "tokenizer downscale factor (shape constraint)");
    build->add_option("--seed", ca.seed, "master seed");

    // train
    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train one pipeline stage");
    train_cmd->require_subcommand(1);
    std::vector<CLI::App*> stages;
    for (const char* name : {"vqvae", "mvtm", "atd"}) {
        auto* st = train_cmd->add_subcommand(name, std::string("train the ") + name);
        st->add_option("--corpus", ta.corpus, "corpus directory")->required();
        st->add_option("--out", ta.out, "output directory")->required();
        st->add_option("--config", ta.config_file, "JSON config file (flags override)");
        st->add_option("--steps", ta.steps, "total training steps (schedule horizon)");
        st->add_option("--stop-at", ta.stop_at, "pause after this many steps (resume later)");
        st->add_option("--batch", ta.batch, "batch size");
        st->add_option("--lr", ta.lr, "peak learning rate");
        st->add_option("--seed", ta.seed, "master seed");
        st->add_flag("--resume", ta.resume, "continue from an existing checkpoint");
        stages.push_back(st);
    }
    stages[0]->add_option("--f", ta.f, "downscale factor");
    stages[0]->add_option("--k", ta.k_size, "codebook size");
    stages[0]->add_option("--d", ta.d, "latent depth");
    for (int i : {1, 2}) {
        stages[i]->add_option("--ckpt-vqvae", ta.ckpt_vqvae, "tokenizer checkpoint")->required();
        stages[i]->add_option("--depth", ta.depth, "transformer depth");
        stages[i]->add_option("--dim", ta.dim, "transformer width");
        stages[i]->add_option("--heads", ta.heads, "attention heads");
        stages[i]->add_option("--drop-path", ta.drop_path, "stochastic depth rate");
        stages[i]->add_option("--min-coverage", ta.brush.min_coverage, "brush coverage floor");
        stages[i]->add_option("--max-coverage", ta.brush.max_coverage, "brush coverage ceiling");
    }

    // restore
    PipelineArgs ra;
    auto* restore = app.add_subcommand("restore", "run the restoration pipeline over a split");
    restore->add_option("--corpus", ra.corpus, "corpus directory")->required();
    restore->add_option("--ckpt-vqvae", ra.ckpt_vqvae, "tokenizer checkpoint")->required();
    restore->add_option("--ckpt-mvtm", ra.ckpt_mvtm, "in-painting checkpoint")->required();
    restore->add_option("--ckpt-atd", ra.ckpt_atd, "detector checkpoint")->required();
    restore->add_option("--out", ra.out, "output directory")->required();
    restore->add_option("--split", ra.split, "corpus split (train|val|test)");
    restore->add_option("--lambda", ra.cfg.lambda, "flagging threshold");
    restore->add_option("--T", ra.cfg.iterations, "flag-and-resample iterations");
    restore->add_option("--R", ra.cfg.restorations, "independent restorations");
    restore->add_option("--temperature", ra.cfg.temperature, "sampling temperature");
    restore->add_option("--min-pool", ra.cfg.min_pool, "min-pool kernel");
    restore->add_option("--avg-pool", ra.cfg.avg_pool, "average-pool kernel");
    restore->add_option("--aggregate", ra.cfg.aggregate, "residual aggregation (mean|median|min)");
    restore->add_option("--seed", ra.seed, "master seed");

    // eval
    PipelineArgs ea;
    std::string eval_level, eval_scores, eval_out;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate token- or pixel-level detection");
    eval_cmd->add_option("--level", eval_level, "token or pixel")->required();
    eval_cmd->add_option("--corpus", ea.corpus, "corpus directory")->required();
    eval_cmd->add_option("--split", ea.split, "corpus split");
    eval_cmd->add_option("--ckpt-vqvae", ea.ckpt_vqvae, "tokenizer checkpoint (token level)");
    eval_cmd->add_option("--ckpt-atd", ea.ckpt_atd, "detector checkpoint (token level)");
    eval_cmd->add_option("--scores", eval_scores, "restore output directory (pixel level)");
    eval_cmd->add_option("--out", eval_out, "write the report JSON here as well");

    // sweep
    PipelineArgs sa;
    sa.split = "val";
    std::string sweep_axis, sweep_values;
    auto* sweep = app.add_subcommand("sweep", "sweep one pipeline hyperparameter");
    sweep->add_option("--axis", sweep_axis, "lambda, R or T")->required();
    sweep->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep->add_option("--corpus", sa.corpus, "corpus directory")->required();
    sweep->add_option("--ckpt-vqvae", sa.ckpt_vqvae, "tokenizer checkpoint")->required();
    sweep->add_option("--ckpt-mvtm", sa.ckpt_mvtm, "in-painting checkpoint")->required();
    sweep->add_option("--ckpt-atd", sa.ckpt_atd, "detector checkpoint")->required();
    sweep->add_option("--out", sa.out, "output directory")->required();
    sweep->add_option("--split", sa.split, "corpus split");
    sweep->add_option("--lambda", sa.cfg.lambda, "flagging threshold (fixed axes)");
    sweep->add_option("--T", sa.cfg.iterations, "iterations (fixed axes)");
    sweep->add_option("--R", sa.cfg.restorations, "restorations (fixed axes)");
    sweep->add_option("--temperature", sa.cfg.temperature, "sampling temperature");
    sweep->add_option("--aggregate", sa.cfg.aggregate, "residual aggregation");
    sweep->add_option("--seed", sa.seed, "master seed");

    // report
    std::string rep_run, rep_corpus, rep_out;
    auto* report = app.add_subcommand("report", "render qualitative panels for a restore run");
    report->add_option("--run", rep_run, "restore output directory")->required();
    report->add_option("--corpus", rep_corpus, "corpus directory")->required();
    report->add_option("--out", rep_out, "panel output directory (defaults to the run dir)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (build->parsed()) return cmd_corpus_build(ca);
        if (stages[0]->parsed()) return cmd_train_vqvae(ta);
        if (stages[1]->parsed()) return cmd_train_transformer(ta, true);
        if (stages[2]->parsed()) return cmd_train_transformer(ta, false);
        if (restore->parsed()) return cmd_restore(ra);
        if (eval_cmd->parsed()) {
            if (eval_level == "token") return cmd_eval_token(ea, eval_out);
            if (eval_level == "pixel") return cmd_eval_pixel(ea.corpus, eval_scores, eval_out);
            throw ConfigError("eval: --level must be token or pixel");
        }
        if (sweep->parsed()) return cmd_sweep(sa, sweep_axis, sweep_values);
        if (report->parsed()) return cmd_report(rep_run, rep_corpus, rep_out);
    } catch (const std::exception& e) {
        std::cerr << "{\"error\": " << json(std::string(e.what())).dump() << "}\n";
        return 1;
    }
    std::cerr << "{\"error\": \"no command\"}\n";
    return 1;
}
