#include "aerialgen/augment/mixup.hpp"

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/image.hpp"
#include "aerialgen/core/random.hpp"

namespace aerialgen::augment {

void MixupConfig::validate() const {
    if (!(p_o >= 0.0 && p_o <= 1.0)) throw ConfigError("p_o must lie in [0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (sample_lambda && !(beta_a > 0.0 && beta_b > 0.0)) throw ConfigError("beta parameters must be positive");
}

void to_json(nlohmann::json& j, const MixupConfig& c) {
    j = {{"p_o", c.p_o}, {"lambda", c.lambda}, {"sample_lambda", c.sample_lambda},
         {"beta_a", c.beta_a}, {"beta_b", c.beta_b}, {"seed", c.seed}};
}

Tensor mixup_aerial(const Tensor& real, const Tensor& fake, double p_o, double p, double lambda) {
    require_same_shape(real.shape(), fake.shape(), "mixup_aerial");
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p must lie in [0, 1]");
    if (p > p_o) return real;
    const auto l = static_cast<float>(lambda);
    Tensor out(real.shape());
    for (std::size_t i = 0; i < real.numel(); ++i) out[i] = l * fake[i] + (1.0f - l) * real[i];
    return out;
}

MixupSampler::MixupSampler(MixupConfig config, std::vector<Tensor> fakes)
    : config_(config), fakes_(std::move(fakes)), rng_(make_rng({config.seed, hash_string("mixup")})) {
    config_.validate();
}

Tensor MixupSampler::operator()(const Tensor& real, std::size_t index) {
    if (index >= fakes_.size()) throw ConfigError("no synthesized aerial for training pair " + std::to_string(index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // 1 - U lies in (0, 1], so p_o = 0 never mixes.
    const double p = 1.0 - unit(rng_);
    double lambda  = config_.lambda;
    if (config_.sample_lambda) {
        std::gamma_distribution<double> ga(config_.beta_a, 1.0), gb(config_.beta_b, 1.0);
        const double x = ga(rng_), y = gb(rng_);
        lambda         = x + y > 0.0 ? x / (x + y) : 0.5;
    }
    const bool applied = p <= config_.p_o;
    decisions_.push_back({index, p, lambda, applied});
    spdlog::debug("mixup pair {} p {:.3f} lambda {:.3f} applied {}", index, p, lambda, applied);
    return mixup_aerial(real, fakes_[index], config_.p_o, p, lambda);
}

std::vector<Tensor> load_synthesized(const std::filesystem::path& dir, const std::vector<eval::CvglPair>& pairs,
                                     const eval::CvglEmbedder& shape_source) {
    std::vector<std::string> missing;
    for (const auto& p : pairs) {
        if (!std::filesystem::exists(dir / (p.id + ".png"))) missing.push_back(p.id);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
        throw IoError(std::to_string(missing.size()) + " synthesized aerial(s) missing in " + dir.string() + ": " + list);
    }
    std::vector<Tensor> out;
    for (const auto& p : pairs) out.push_back(shape_source.preprocess_aerial(read_png(dir / (p.id + ".png"))));
    return out;
}

AugmentRun train_cvgl_with_aug(const forge::Manifest& manifest, const std::filesystem::path& synthesized_dir,
                               const eval::CvglConfig& config, const MixupConfig& mixup,
                               const eval::CvglTrainOptions& options) {
    mixup.validate();
    AugmentRun run;
    run.embedder      = std::make_unique<eval::CvglEmbedder>(config);
    const auto train  = eval::load_cvgl_pairs(manifest, forge::Split::train, config);
    const auto test   = eval::load_cvgl_pairs(manifest, forge::Split::test, config);
    auto opts         = options;
    std::unique_ptr<MixupSampler> sampler;
    if (mixup.p_o > 0.0) {
        sampler          = std::make_unique<MixupSampler>(mixup, load_synthesized(synthesized_dir, train, *run.embedder));
        opts.aerial_hook = [&sampler](const Tensor& real, std::size_t i) { return (*sampler)(real, i); };
    }
    run.training = eval::train_cvgl(*run.embedder, train, opts);
    run.recall   = eval::evaluate_recall(*run.embedder, test);
    if (sampler) {
        for (const auto& d : sampler->decisions()) run.mixed += d.applied ? 1 : 0;
    }
    return run;
}

nlohmann::json mixup_sweep(const forge::Manifest& manifest, const std::filesystem::path& synthesized_dir,
                           const eval::CvglConfig& config, const std::vector<double>& p_values, double lambda,
                           const std::vector<forge::Protocol>& protocols, const eval::CvglTrainOptions& options) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto protocol : protocols) {
        forge::Manifest m = manifest;
        forge::apply_protocol(m, protocol);
        std::vector<double> ps{0.0};
        ps.insert(ps.end(), p_values.begin(), p_values.end());
        for (double p_o : ps) {
            MixupConfig mc;
            mc.p_o       = p_o;
            mc.lambda    = lambda;
            mc.seed      = config.seed;
            const auto r = train_cvgl_with_aug(m, synthesized_dir, config, mc, options);
            auto row     = r.recall.to_json();
            row["protocol"]  = forge::to_string(protocol);
            row["p_o"]       = p_o;
            row["lambda"]    = lambda;
            row["mixed"]     = r.mixed;
            row["train_steps"] = r.training.steps_run;
            spdlog::info("mixup {} p_o {:.1f}: R@1 {:.3f} R@5 {:.3f}", forge::to_string(protocol), p_o, r.recall.r1,
                         r.recall.r5);
            rows.push_back(std::move(row));
        }
    }
    return {{"lambda", lambda}, {"rows", rows}};
}

}  // namespace aerialgen::augment
