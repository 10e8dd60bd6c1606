#include "aerialgen/stage2/ablation.hpp"

#include <atomic>

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/parallel.hpp"
#include "aerialgen/eval/metrics.hpp"

namespace aerialgen::stage2 {

using nlohmann::json;

int describe_manifest(forge::Manifest& manifest, prompt::DescriptionClient& client, prompt::DescriptionCache* cache,
                      unsigned workers) {
    std::atomic<int> fresh{0};
    auto& samples = manifest.samples;
    parallel_for(
        static_cast<int>(samples.size()),
        [&](int i) {
            auto& r = samples[static_cast<std::size_t>(i)];
            if (cache && !cache->get(r.id)) fresh.fetch_add(1);
            if (!cache) fresh.fetch_add(1);
            r.description = prompt::describe_ground(r.id, client, cache).text;
        },
        workers);
    return fresh.load();
}

json run_prompt_ablation(const forge::Manifest& manifest, const Stage2Config& base, const AblationOptions& options) {
    if (options.arms.empty()) throw ConfigError("no prompt arms given");
    json rows = json::array();

    // Real features are arm independent.
    eval::FeatureSet real_aerial, real_ground;
    std::vector<const forge::SampleRecord*> eval_recs = manifest.in_split(forge::Split::test);
    if (options.eval_limit > 0 && static_cast<int>(eval_recs.size()) > options.eval_limit) {
        eval_recs.resize(static_cast<std::size_t>(options.eval_limit));
    }
    if (options.embedder) {
        std::vector<Tensor> a, g;
        for (const auto* r : eval_recs) {
            a.push_back(options.embedder->preprocess_aerial(manifest.load_aerial(*r)));
            g.push_back(options.embedder->preprocess_ground(manifest.load_ground(*r)));
        }
        std::vector<const Tensor*> pa, pg;
        for (std::size_t i = 0; i < a.size(); ++i) {
            pa.push_back(&a[i]);
            pg.push_back(&g[i]);
        }
        real_aerial = options.embedder->aerial_features(pa);
        real_ground = options.embedder->ground_features(pg);
    }

    for (const auto& arm : options.arms) {
        Stage2Config config = base;
        config.prompt_mode  = arm;
        const auto train    = load_stage2_examples(manifest, forge::Split::train, config, options.train_limit);
        const auto test     = load_stage2_examples(manifest, forge::Split::test, config, options.eval_limit);
        spdlog::info("prompt arm {}: {} train, {} eval", arm, train.size(), test.size());
        Stage2Model model(config);
        const auto result = train_stage2(model, train, options.train);
        std::vector<Image> outputs;
        const auto seg = evaluate_resegmentation(model, test, options.sample_seed, 10, &outputs);
        json row{{"arm", arm},
                 {"example_prompt", test.empty() ? std::string() : test.front().prompt},
                 {"steps", result.steps_run},
                 {"seconds", result.seconds},
                 {"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()},
                 {"resegmentation", {{"miou", seg.miou}, {"avg_f1", seg.avg_f1}}}};
        if (options.embedder) {
            std::vector<Tensor> f;
            for (const auto& img : outputs) f.push_back(options.embedder->preprocess_aerial(img));
            std::vector<const Tensor*> pf;
            for (const auto& t : f) pf.push_back(&t);
            const auto fake = options.embedder->aerial_features(pf);
            row["sim_s"]    = eval::sim_same(real_aerial, fake);
            row["sim_c"]    = eval::sim_cross(real_ground, fake);
            row["fid_safa"] = eval::fid_safa(real_aerial, fake);
        }
        rows.push_back(row);
    }
    return json{{"arms", rows}, {"seed", base.seed}, {"image_size", base.image_size}};
}

}  // namespace aerialgen::stage2
