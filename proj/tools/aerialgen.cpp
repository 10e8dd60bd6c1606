// Command-line front end for corpus building, training, synthesis, scoring
// and the region-search service.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "aerialgen/augment/mixup.hpp"
#include "aerialgen/core/error.hpp"
#include "aerialgen/core/image.hpp"
#include "aerialgen/core/parallel.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/eval/metrics.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/prompt/describe.hpp"
#include "aerialgen/search/service.hpp"
#include "aerialgen/stage1/train.hpp"
#include "aerialgen/stage2/ablation.hpp"
#include "aerialgen/stage2/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aerialgen;

namespace {

json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

template <class Config>
Config load_config(const std::string& path) {
    if (path.empty()) return Config{};
    return read_json(path).get<Config>();
}

forge::Manifest load_manifest(const fs::path& p) {
    auto m = forge::Manifest::load(fs::is_directory(p) ? p / "manifest.json" : p);
    return m;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// --- forge -----------------------------------------------------------------

struct ForgeSynthArgs {
    std::string config, out;
    int samples = 500;
    std::uint64_t seed = 1;
    unsigned workers   = 0;
};

void forge_synth(const ForgeSynthArgs& a) {
    std::vector<forge::SyntheticCityConfig> cities;
    if (!a.config.empty()) {
        const json j = read_json(a.config);
        const json& list = j.is_object() ? j.at("cities") : j;
        for (const auto& c : list) cities.push_back(c.get<forge::SyntheticCityConfig>());
    } else {
        for (const auto& name : forge::SyntheticCityConfig::preset_names()) {
            cities.push_back(forge::SyntheticCityConfig::preset(name, a.seed, a.samples));
        }
    }
    const auto m = forge::build_synthetic_corpus(cities, a.out, a.workers);
    spdlog::info("wrote {} samples to {}", m.samples.size(), a.out);
}

void forge_split(const std::string& manifest_path, const std::string& protocol, const std::string& train_cities,
                 const std::string& test_cities) {
    const fs::path path = fs::is_directory(manifest_path) ? fs::path(manifest_path) / "manifest.json" : fs::path(manifest_path);
    auto m              = forge::Manifest::load(path);
    forge::apply_protocol(m, forge::parse_protocol(protocol), split_list(train_cities), split_list(test_cities));
    m.save(path);
    std::map<std::string, int> counts;
    for (const auto& [id, s] : m.splits) ++counts[forge::to_string(s)];
    spdlog::info("protocol {}: train {} test {} excluded {}", protocol, counts["train"], counts["test"], counts["excluded"]);
}

// --- descriptions ----------------------------------------------------------

void gen_descriptions(const std::string& manifest_path, const std::string& mode, const std::string& cache_dir) {
    const fs::path path = fs::is_directory(manifest_path) ? fs::path(manifest_path) / "manifest.json" : fs::path(manifest_path);
    auto m              = forge::Manifest::load(path);
    prompt::DescriptionCache cache(cache_dir.empty() ? m.root / "descriptions" : fs::path(cache_dir));
    std::unique_ptr<prompt::DescriptionClient> client;
    if (mode == "synthetic") {
        client = std::make_unique<prompt::SyntheticDescriptionClient>(
            [&m](const std::string& id) { return m.load_layout(m.find(id)); });
    } else if (mode == "remote") {
        client = std::make_unique<prompt::RemoteDescriptionClient>(
            prompt::RemoteConfig::from_environment(), [&m](const std::string& id) {
                return encode_png(m.load_ground(m.find(id)));
            });
    } else {
        throw ConfigError("unknown description mode " + mode);
    }
    // Remote endpoints are rate limited; keep them sequential.
    const int fresh = stage2::describe_manifest(m, *client, &cache, mode == "remote" ? 1 : 0);
    m.save(path);
    spdlog::info("{} descriptions ({} newly generated)", m.samples.size(), fresh);
}

// --- stage 1 ---------------------------------------------------------------

struct TrainStage1Args {
    std::string manifest, config, out = "stage1.ckpt";
    std::uint64_t seed = 1;
    int steps          = -1;
    double max_minutes = 0;
    int limit          = 0;
};

void train_stage1_cmd(const TrainStage1Args& a) {
    auto config = load_config<stage1::Stage1Config>(a.config);
    config.seed = a.seed;
    if (a.steps >= 0) config.steps = a.steps;
    const auto m     = load_manifest(a.manifest);
    const auto train = stage1::load_examples(m, forge::Split::train, config, a.limit);
    stage1::Stage1Model model(config);
    stage1::TrainOptions opts;
    opts.max_seconds = a.max_minutes * 60.0;
    const auto result = stage1::train_stage1(model, train, opts);
    stage1::save_checkpoint(model, a.out, result.steps_run);
    stage1::write_loss_curve(fs::path(a.out).string() + ".loss.csv", result.loss_curve);
    spdlog::info("stage1: {} steps in {:.0f}s, saved {}", result.steps_run, result.seconds, a.out);
}

void eval_stage1_cmd(const std::string& ckpt, const std::string& manifest, std::string split,
                     const std::vector<double>& fovs, const std::string& out, int limit) {
    if (split == "val") {
        // The corpus has no separate validation split.
        spdlog::warn("no validation split in the manifest; evaluating the held-out test split");
        split = "test";
    }
    const auto model = stage1::load_checkpoint(ckpt);
    const auto m     = load_manifest(manifest);
    const auto ex    = stage1::load_examples(m, forge::parse_split(split), model->config(), limit);
    json report{{"checkpoint", ckpt}, {"split", split}, {"samples", ex.size()}, {"fov", json::object()}};
    for (double fov : fovs) {
        const auto metrics = stage1::evaluate_stage1(*model, ex, fov);
        report["fov"][std::to_string(static_cast<int>(fov))] = metrics;
        spdlog::info("FOV {}: mIoU {:.4f} AvgF1 {:.4f}", fov, metrics.miou, metrics.avg_f1);
    }
    if (out.empty()) {
        std::cout << report.dump(2) << '\n';
    } else {
        write_json(out, report);
    }
}

// --- stage 2 ---------------------------------------------------------------

struct TrainStage2Args {
    std::string manifest, config, out = "stage2.ckpt", prompt_mode, stage1;
    std::uint64_t seed = 1;
    int steps          = -1;
    double max_minutes = 0;
    int limit          = 0;
};

void train_stage2_cmd(const TrainStage2Args& a) {
    auto config = load_config<stage2::Stage2Config>(a.config);
    config.seed = a.seed;
    if (!a.prompt_mode.empty()) config.prompt_mode = a.prompt_mode;
    if (a.steps >= 0) config.steps = a.steps;
    std::unique_ptr<stage1::Stage1Model> layout_model;
    if (!a.stage1.empty()) {
        layout_model           = stage1::load_checkpoint(a.stage1);
        config.teacher_layouts = false;
    }
    const auto m     = load_manifest(a.manifest);
    const auto train = stage2::load_stage2_examples(m, forge::Split::train, config, a.limit, layout_model.get());
    stage2::Stage2Model model(config);
    stage2::Stage2TrainOptions opts;
    opts.max_seconds  = a.max_minutes * 60.0;
    const auto result = stage2::train_stage2(model, train, opts);
    stage2::save_checkpoint(model, a.out, result.steps_run);
    stage1::write_loss_curve(fs::path(a.out).string() + ".loss.csv", result.loss_curve);
    spdlog::info("stage2 ({} prompts): {} steps in {:.0f}s, saved {}", config.prompt_mode, result.steps_run, result.seconds,
                 a.out);
}

struct SynthesizeArgs {
    std::string ckpt, layout, prompt, out, manifest, split = "train";
    std::uint64_t seed = 0;
    int steps          = 0;
    double guidance    = -1;
    int limit          = 0;
};

void synthesize_cmd(const SynthesizeArgs& a) {
    const auto model = stage2::load_checkpoint(a.ckpt);
    if (!a.manifest.empty()) {
        // One image per sample, written as {out}/{id}.png.
        const auto m   = load_manifest(a.manifest);
        const auto ex  = stage2::load_stage2_examples(m, forge::parse_split(a.split), model->config(), a.limit);
        constexpr std::size_t kBatch = 10;
        fs::create_directories(a.out);
        for (std::size_t i = 0; i < ex.size(); i += kBatch) {
            std::vector<stage2::SynthesisRequest> reqs;
            for (std::size_t j = i; j < std::min(ex.size(), i + kBatch); ++j) {
                reqs.push_back({ex[j].layout, ex[j].prompt, derive_seed({a.seed, hash_string(ex[j].id)}), a.steps, a.guidance});
            }
            const auto imgs = stage2::sample_batch(*model, reqs);
            for (std::size_t j = 0; j < imgs.size(); ++j) write_png(fs::path(a.out) / (ex[i + j].id + ".png"), imgs[j]);
            spdlog::info("synthesized {}/{}", std::min(ex.size(), i + kBatch), ex.size());
        }
        return;
    }
    if (a.layout.empty()) throw ConfigError("synthesize needs --layout or --manifest");
    const LayoutMap layout = quantize_palette(read_png(a.layout));
    write_png(a.out, stage2::sample(*model, {layout, a.prompt, a.seed, a.steps, a.guidance}));
    spdlog::info("wrote {}", a.out);
}

struct AblateArgs {
    std::string manifest, config, out = "prompt_ablation.json", embedder, arms = "constant,city,raw,dynamic";
    int steps          = -1;
    double max_minutes = 0;
    int train_limit = 0, eval_limit = 100;
    std::uint64_t seed = 1;
};

void ablate_cmd(const AblateArgs& a) {
    auto config = load_config<stage2::Stage2Config>(a.config);
    config.seed = a.seed;
    if (a.steps >= 0) config.steps = a.steps;
    const auto m = load_manifest(a.manifest);
    std::unique_ptr<eval::CvglEmbedder> emb;
    stage2::AblationOptions opts;
    opts.arms        = split_list(a.arms);
    opts.train_limit = a.train_limit;
    opts.eval_limit  = a.eval_limit;
    opts.train.max_seconds = a.max_minutes * 60.0;
    if (!a.embedder.empty()) {
        emb          = eval::load_embedder(a.embedder);
        opts.embedder = emb.get();
    }
    const auto report = stage2::run_prompt_ablation(m, config, opts);
    write_json(a.out, report);
    for (const auto& row : report["arms"]) {
        spdlog::info("{:>8}: reseg mIoU {:.4f}", row["arm"].get<std::string>(), row["resegmentation"]["miou"].get<double>());
    }
}

// --- embedder, scoring, augmentation ---------------------------------------

struct TrainEmbedderArgs {
    std::string manifest, config, out = "embedder.ckpt", protocol;
    std::uint64_t seed = 1;
    int steps          = -1;
    double max_minutes = 0;
};

void train_embedder_cmd(const TrainEmbedderArgs& a) {
    auto config = load_config<eval::CvglConfig>(a.config);
    config.seed = a.seed;
    if (a.steps >= 0) config.steps = a.steps;
    auto m = load_manifest(a.manifest);
    if (!a.protocol.empty()) forge::apply_protocol(m, forge::parse_protocol(a.protocol));
    const auto train = eval::load_cvgl_pairs(m, forge::Split::train, config);
    const auto test  = eval::load_cvgl_pairs(m, forge::Split::test, config);
    eval::CvglEmbedder model(config);
    eval::CvglTrainOptions opts;
    opts.max_seconds  = a.max_minutes * 60.0;
    const auto result = eval::train_cvgl(model, train, opts);
    const auto recall = eval::evaluate_recall(model, test);
    model.heldout_recall = recall.r1;
    eval::save_embedder(model, a.out);
    spdlog::info("embedder: {} steps, held-out {}, gate {}", result.steps_run, recall.to_json().dump(),
                 model.gate_passed() ? "passed" : "FAILED");
}

struct ScoreArgs {
    std::string real, fake, embedder, metrics = "sim_s,sim_c,fid_safa,psnr,ssim", out = "report.json";
    bool force = false;
};

// --real is a corpus (manifest root); every {id}.png in --fake is paired with
// that sample's aerial and ground view.
void score_cmd(const ScoreArgs& a) {
    const auto emb = eval::load_embedder(a.embedder);
    emb->require_gate(a.force);
    const auto m = load_manifest(a.real);
    std::vector<const forge::SampleRecord*> recs;
    std::vector<fs::path> fakes;
    for (const auto& e : fs::directory_iterator(a.fake)) {
        if (e.path().extension() != ".png") continue;
        try {
            recs.push_back(&m.find(e.path().stem().string()));
            fakes.push_back(e.path());
        } catch (const std::exception&) {
            spdlog::warn("{} has no matching sample in the corpus", e.path().filename().string());
        }
    }
    if (recs.empty()) throw IoError("no synthesized images in " + a.fake + " match the corpus");
    const auto wanted = split_list(a.metrics);
    auto want         = [&](const std::string& k) { return std::find(wanted.begin(), wanted.end(), k) != wanted.end(); };

    const std::size_t n = recs.size();
    std::vector<Tensor> ra(n), rg(n), fa(n);
    double psnr_sum = 0, ssim_sum = 0;
    std::mutex mu;
    parallel_for(static_cast<int>(n), [&](int i) {
        const Image real = m.load_aerial(*recs[static_cast<std::size_t>(i)]);
        Image fake       = read_png(fakes[static_cast<std::size_t>(i)]);
        if (fake.height != real.height || fake.width != real.width) fake = resize(fake, real.height, real.width);
        ra[static_cast<std::size_t>(i)] = emb->preprocess_aerial(real);
        fa[static_cast<std::size_t>(i)] = emb->preprocess_aerial(fake);
        rg[static_cast<std::size_t>(i)] = emb->preprocess_ground(m.load_ground(*recs[static_cast<std::size_t>(i)]));
        const double p = want("psnr") ? eval::psnr(real, fake) : 0.0;
        const double s = want("ssim") ? eval::ssim(real, fake) : 0.0;
        std::lock_guard lock(mu);
        psnr_sum += p;
        ssim_sum += s;
    });
    auto ptrs = [](const std::vector<Tensor>& v) {
        std::vector<const Tensor*> p;
        for (const auto& t : v) p.push_back(&t);
        return p;
    };
    const auto real_f = emb->aerial_features(ptrs(ra));
    const auto fake_f = emb->aerial_features(ptrs(fa));
    json report{{"N", n}, {"embedder_fingerprint", emb->fingerprint()}};
    for (const auto& k : wanted) {
        if (k == "sim_s") report[k] = eval::sim_same(real_f, fake_f);
        else if (k == "sim_c") report[k] = eval::sim_cross(emb->ground_features(ptrs(rg)), fake_f);
        else if (k == "fid_safa") report[k] = eval::fid_safa(real_f, fake_f);
        else if (k == "psnr") report[k] = psnr_sum / static_cast<double>(n);
        else if (k == "ssim") report[k] = ssim_sum / static_cast<double>(n);
        else throw ConfigError("unknown metric " + k);
    }
    write_json(a.out, report);
    std::cout << report.dump(2) << '\n';
}

struct AugmentArgs {
    std::string manifest, fake, config, out = "augment_report.json", sweep, protocols = "same_area,cross_area";
    double po = 0.6, lambda = 0.5;
    bool sample_lambda = false;
    std::uint64_t seed = 1;
    int steps          = -1;
};

void augment_cmd(const AugmentArgs& a) {
    auto config = load_config<eval::CvglConfig>(a.config);
    config.seed = a.seed;
    if (a.steps >= 0) config.steps = a.steps;
    const auto m = load_manifest(a.manifest);
    if (!a.sweep.empty()) {
        std::vector<double> ps;
        for (const auto& s : split_list(a.sweep)) ps.push_back(std::stod(s));
        std::vector<forge::Protocol> protos;
        for (const auto& s : split_list(a.protocols)) protos.push_back(forge::parse_protocol(s));
        write_json(a.out, augment::mixup_sweep(m, a.fake, config, ps, a.lambda, protos));
        return;
    }
    augment::MixupConfig mix;
    mix.p_o           = a.po;
    mix.lambda        = a.lambda;
    mix.sample_lambda = a.sample_lambda;
    mix.seed          = a.seed;
    const auto run    = augment::train_cvgl_with_aug(m, a.fake, config, mix);
    json row          = run.recall.to_json();
    row["protocol"]   = forge::to_string(m.protocol);
    row["p_o"]        = a.po;
    row["lambda"]     = a.lambda;
    row["mixed"]      = run.mixed;
    write_json(a.out, json{{"rows", json::array({row})}});
}

// --- search ----------------------------------------------------------------

void build_index_cmd(const std::string& aerials, const std::string& embedder, const std::string& out) {
    const auto emb = eval::load_embedder(embedder);
    const auto idx = search::build_index(aerials, *emb);
    idx.save(out);
    spdlog::info("indexed {} aerials into {}", idx.entries.size(), out);
}

search::HttpServer* g_server = nullptr;

void serve_cmd(const std::string& index, const std::string& stage2_ckpt, const std::string& embedder,
               const std::string& host, int port, const search::ServiceOptions& options) {
    auto idx   = std::make_shared<const search::RetrievalIndex>(search::RetrievalIndex::load(index));
    auto model = std::shared_ptr<const stage2::Stage2Model>(stage2::load_checkpoint(stage2_ckpt));
    auto emb   = std::shared_ptr<const eval::CvglEmbedder>(eval::load_embedder(embedder));
    if (idx->embedder_fingerprint != emb->fingerprint()) {
        spdlog::warn("index fingerprint {} differs from embedder {}; /search will answer 409", idx->embedder_fingerprint,
                     emb->fingerprint());
    }
    search::SearchService service(idx, model, emb, options);
    search::HttpServer server(service);
    const int bound = server.bind(host, port);
    g_server        = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    spdlog::info("serving {} entries on http://{}:{}", idx->entries.size(), host, bound);
    server.run();
    g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layout-guided aerial synthesis, cross-view evaluation and region search"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    // forge
    auto* forge_cmd = app.add_subcommand("forge", "Synthetic corpora and splits");
    forge_cmd->require_subcommand(1);
    ForgeSynthArgs fsa;
    auto* synth = forge_cmd->add_subcommand("synth", "Generate a synthetic corpus");
    synth->add_option("--config", fsa.config, "JSON list of city configs (default: four preset cities)");
    synth->add_option("--out", fsa.out, "Output directory")->required();
    synth->add_option("--samples", fsa.samples, "Samples per preset city");
    synth->add_option("--seed", fsa.seed, "Seed for preset cities");
    synth->add_option("--workers", fsa.workers, "Worker threads (0 = all cores)");
    synth->callback([&] { forge_synth(fsa); });

    std::string split_manifest, split_protocol, split_train, split_test;
    auto* split = forge_cmd->add_subcommand("split", "Apply a split protocol to a manifest");
    split->add_option("--manifest", split_manifest)->required();
    split->add_option("--protocol", split_protocol)->required()->check(CLI::IsMember({"same_area", "cross_area"}));
    split->add_option("--train-cities", split_train, "Comma-separated (cross_area)");
    split->add_option("--test-cities", split_test, "Comma-separated (cross_area)");
    split->callback([&] { forge_split(split_manifest, split_protocol, split_train, split_test); });

    // descriptions
    std::string gd_manifest, gd_mode = "synthetic", gd_cache;
    auto* gd = app.add_subcommand("gen-descriptions", "Attach a ground-view description to every sample");
    gd->add_option("--manifest", gd_manifest)->required();
    gd->add_option("--mode", gd_mode)->check(CLI::IsMember({"synthetic", "remote"}));
    gd->add_option("--cache", gd_cache, "Cache directory (default: <corpus>/descriptions)");
    gd->callback([&] { gen_descriptions(gd_manifest, gd_mode, gd_cache); });

    // stage 1
    TrainStage1Args t1;
    auto* ts1 = app.add_subcommand("train-stage1", "Train the ground-to-layout model");
    ts1->add_option("--manifest", t1.manifest)->required();
    ts1->add_option("--config", t1.config, "Stage1 config JSON");
    ts1->add_option("--seed", t1.seed);
    ts1->add_option("--steps", t1.steps, "Override config steps");
    ts1->add_option("--max-minutes", t1.max_minutes, "Wall-clock cap");
    ts1->add_option("--limit", t1.limit, "Use only the first N training samples");
    ts1->add_option("--out", t1.out, "Checkpoint path");
    ts1->callback([&] { train_stage1_cmd(t1); });

    std::string e1_ckpt, e1_manifest, e1_split = "test", e1_out;
    std::vector<double> e1_fov{360};
    int e1_limit = 0;
    auto* es1    = app.add_subcommand("eval-stage1", "Layout metrics of a Stage1 checkpoint");
    es1->add_option("--ckpt", e1_ckpt)->required();
    es1->add_option("--manifest", e1_manifest)->required();
    es1->add_option("--split", e1_split)->check(CLI::IsMember({"train", "val", "test"}));
    es1->add_option("--fov", e1_fov, "One or more of 90 180 270 360")->check(CLI::Range(1.0, 360.0));
    es1->add_option("--limit", e1_limit);
    es1->add_option("--out", e1_out, "Report path (default: stdout)");
    es1->callback([&] { eval_stage1_cmd(e1_ckpt, e1_manifest, e1_split, e1_fov, e1_out, e1_limit); });

    // stage 2
    TrainStage2Args t2;
    auto* ts2 = app.add_subcommand("train-stage2", "Train the layout-conditioned diffusion model");
    ts2->add_option("--manifest", t2.manifest)->required();
    ts2->add_option("--config", t2.config, "Stage2 config JSON");
    ts2->add_option("--prompt-mode", t2.prompt_mode)->check(CLI::IsMember({"constant", "city", "raw", "dynamic"}));
    ts2->add_option("--stage1", t2.stage1, "Condition on layouts predicted by this Stage1 checkpoint");
    ts2->add_option("--seed", t2.seed);
    ts2->add_option("--steps", t2.steps);
    ts2->add_option("--max-minutes", t2.max_minutes);
    ts2->add_option("--limit", t2.limit);
    ts2->add_option("--out", t2.out);
    ts2->callback([&] { train_stage2_cmd(t2); });

    SynthesizeArgs sy;
    auto* syn = app.add_subcommand("synthesize", "Sample aerials from a Stage2 checkpoint");
    syn->add_option("--ckpt", sy.ckpt)->required();
    syn->add_option("--layout", sy.layout, "Palette layout PNG");
    syn->add_option("--prompt", sy.prompt);
    syn->add_option("--seed", sy.seed);
    syn->add_option("--steps", sy.steps, "Sampling steps (0 = config)");
    syn->add_option("--guidance", sy.guidance, "Classifier-free guidance scale (< 0 = config)");
    syn->add_option("--manifest", sy.manifest, "Batch mode: one image per sample of --split");
    syn->add_option("--split", sy.split)->check(CLI::IsMember({"train", "test"}));
    syn->add_option("--limit", sy.limit);
    syn->add_option("--out", sy.out, "PNG path, or directory in batch mode")->required();
    syn->callback([&] { synthesize_cmd(sy); });

    AblateArgs ab;
    auto* abl = app.add_subcommand("ablate-prompts", "Train every prompt arm and write one comparative report");
    abl->add_option("--manifest", ab.manifest)->required();
    abl->add_option("--config", ab.config);
    abl->add_option("--arms", ab.arms);
    abl->add_option("--embedder", ab.embedder, "Adds sim_s, sim_c and fid_safa");
    abl->add_option("--steps", ab.steps);
    abl->add_option("--max-minutes", ab.max_minutes, "Per arm");
    abl->add_option("--train-limit", ab.train_limit);
    abl->add_option("--eval-limit", ab.eval_limit);
    abl->add_option("--seed", ab.seed);
    abl->add_option("--out", ab.out);
    abl->callback([&] { ablate_cmd(ab); });

    // embedder, scoring, augmentation
    TrainEmbedderArgs te;
    auto* tem = app.add_subcommand("train-embedder", "Train the cross-view embedder used for metrics and search");
    tem->add_option("--manifest", te.manifest)->required();
    tem->add_option("--config", te.config);
    tem->add_option("--protocol", te.protocol, "Re-split before training")->check(CLI::IsMember({"same_area", "cross_area"}));
    tem->add_option("--seed", te.seed);
    tem->add_option("--steps", te.steps);
    tem->add_option("--max-minutes", te.max_minutes);
    tem->add_option("--out", te.out);
    tem->callback([&] { train_embedder_cmd(te); });

    ScoreArgs sc;
    auto* sco = app.add_subcommand("score", "Score synthesized aerials against a corpus");
    sco->add_option("--real", sc.real, "Corpus root or manifest")->required();
    sco->add_option("--fake", sc.fake, "Directory of {id}.png")->required();
    sco->add_option("--embedder", sc.embedder)->required();
    sco->add_option("--metrics", sc.metrics);
    sco->add_option("--out", sc.out);
    sco->add_flag("--force", sc.force, "Use an embedder that failed its recall gate");
    sco->callback([&] { score_cmd(sc); });

    AugmentArgs au;
    auto* aug = app.add_subcommand("augment-train", "Train the embedder with synthesized-aerial mixup");
    aug->add_option("--manifest", au.manifest)->required();
    aug->add_option("--fake", au.fake, "Directory of {id}.png for the training split")->required();
    aug->add_option("--config", au.config);
    aug->add_option("--po", au.po)->check(CLI::Range(0.0, 1.0));
    aug->add_option("--lambda", au.lambda)->check(CLI::Range(0.0, 1.0));
    aug->add_flag("--sample-lambda", au.sample_lambda, "Draw lambda from a Beta distribution");
    aug->add_option("--sweep", au.sweep, "Comma-separated p_o values; adds a baseline row");
    aug->add_option("--protocols", au.protocols, "For --sweep");
    aug->add_option("--seed", au.seed);
    aug->add_option("--steps", au.steps);
    aug->add_option("--out", au.out);
    aug->callback([&] { augment_cmd(au); });

    // search
    std::string bi_aerials, bi_embedder, bi_out = "index.json";
    auto* bi = app.add_subcommand("build-index", "Embed a directory of geo-tagged aerials");
    bi->add_option("--aerials", bi_aerials, "Directory searched for aerial.png + meta.json")->required();
    bi->add_option("--embedder", bi_embedder)->required();
    bi->add_option("--out", bi_out);
    bi->callback([&] { build_index_cmd(bi_aerials, bi_embedder, bi_out); });

    std::string sv_index, sv_stage2, sv_embedder, sv_host = "127.0.0.1";
    int sv_port = 8080;
    search::ServiceOptions sv_opts;
    auto* sv = app.add_subcommand("serve", "Run the sketch-to-region search service");
    sv->add_option("--index", sv_index)->required();
    sv->add_option("--stage2", sv_stage2)->required();
    sv->add_option("--embedder", sv_embedder)->required();
    sv->add_option("--host", sv_host);
    sv->add_option("--port", sv_port);
    sv->add_option("--max-concurrent", sv_opts.max_concurrent);
    sv->add_option("--timeout", sv_opts.timeout_seconds, "Seconds per synthesis");
    sv->add_option("--cors-origin", sv_opts.cors_origin);
    sv->callback([&] { serve_cmd(sv_index, sv_stage2, sv_embedder, sv_host, sv_port, sv_opts); });

    app.parse_complete_callback([&] { spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ConfigError& e) {
        spdlog::error("configuration: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
