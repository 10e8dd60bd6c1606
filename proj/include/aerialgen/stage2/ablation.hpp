#pragma once

// Trains one Stage-II model per prompt arm on the same data and seed and
// reports them side by side.

#include <string>
#include <vector>

#include <json.hpp>

#include "aerialgen/eval/embedder.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/prompt/describe.hpp"
#include "aerialgen/stage2/train.hpp"

namespace aerialgen::stage2 {

// Fills every record's description through `client` (cached when given).
// Returns how many descriptions were newly requested.
int describe_manifest(forge::Manifest& manifest, prompt::DescriptionClient& client, prompt::DescriptionCache* cache,
                      unsigned workers = 0);

struct AblationOptions {
    std::vector<std::string> arms{"constant", "city", "raw", "dynamic"};
    int train_limit = 0;   // 0 = whole train split
    int eval_limit  = 100;
    std::uint64_t sample_seed = 1;
    // Optional: adds sim_s, sim_c and fid_safa on the aerial branch.
    const eval::CvglEmbedder* embedder = nullptr;
    Stage2TrainOptions train;
};

// {arms: [{arm, example_prompt, steps, seconds, final_loss, resegmentation{miou, avg_f1}, ...}]}
nlohmann::json run_prompt_ablation(const forge::Manifest& manifest, const Stage2Config& base,
                                   const AblationOptions& options = {});

}  // namespace aerialgen::stage2
