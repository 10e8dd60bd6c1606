#include "aerialgen/stage2/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/parallel.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/prompt/prompt.hpp"
#include "aerialgen/stage1/train.hpp"

namespace aerialgen::stage2 {

using nn::Var;

namespace {

Tensor stack(const std::vector<const Tensor*>& xs) {
    Shape s = xs.front()->shape();
    s.insert(s.begin(), static_cast<int>(xs.size()));
    Tensor out(s);
    const std::size_t per = xs.front()->numel();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        require_same_shape(xs[i]->shape(), xs.front()->shape(), "stack");
        std::copy(xs[i]->data(), xs[i]->data() + per, out.data() + i * per);
    }
    return out;
}

// Conditioning raster at the denoiser resolution.
Tensor condition_for(const LayoutMap& layout, int size) {
    return layout_condition(layout.height == size ? layout : downsample_layout(layout, size));
}

void require_finite(const Tensor& t, const std::string& what) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) throw NumericError(what);
    }
}

}  // namespace

Tensor layout_condition(const LayoutMap& layout) {
    layout.validate();
    Tensor out({3, layout.height, layout.width});
    const std::size_t plane = static_cast<std::size_t>(layout.height) * layout.width;
    for (std::size_t i = 0; i < plane; ++i) {
        const auto& rgb = kPalette[layout.classes[i]];
        for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c) * plane + i] = rgb[c] / 127.5f - 1.0f;
    }
    return out;
}

LayoutMap downsample_layout(const LayoutMap& layout, int size) {
    if (size < 1) throw ConfigError("layout size must be positive");
    if (layout.height != layout.width || layout.height % size) return resize_nearest(layout, size, size);
    const int f = layout.height / size;
    LayoutMap out(size, size);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            std::array<int, kNumClasses> votes{};
            for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) ++votes[layout.at(y * f + dy, x * f + dx)];
            out.at(y, x) = static_cast<std::uint8_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        }
    }
    return out;
}

Tensor aerial_tensor(const Image& aerial, int size) {
    if (aerial.channels != 3) throw ShapeError("aerial must be RGB");
    const Image small = aerial.height == size && aerial.width == size ? aerial : resize(aerial, size, size);
    Tensor out({3, size, size});
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = small.data[i] * 2.0f - 1.0f;
    return out;
}

Image tensor_to_aerial(const Tensor& batch, int index) {
    Image img = tensor_to_image(batch, index);
    for (float& v : img.data) v = std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f);
    return img;
}

std::string build_prompt(const std::string& mode, const std::string& city, const std::string& description,
                         const prompt::TextEmbedder& embedder) {
    const auto tmpl = prompt::parse_template(mode);
    if ((tmpl == prompt::PromptTemplate::raw || tmpl == prompt::PromptTemplate::dynamic) && description.empty()) {
        throw ConfigError("sample in " + city + " has no description; run gen-descriptions for the manifest first");
    }
    std::vector<prompt::KeyPhrase> phrases;
    if (tmpl == prompt::PromptTemplate::dynamic) phrases = prompt::extract_keyphrases_mmr(description, embedder);
    return prompt::assemble_prompt(tmpl, city, phrases, description).rendered;
}

Tensor text_embeddings(const std::vector<std::string>& prompts, int dim) {
    const prompt::HashedTrigramEmbedder embedder(dim);
    Tensor out({static_cast<int>(prompts.size()), dim});
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto e = embedder.embed(prompts[i]);
        for (int k = 0; k < dim; ++k) out[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] = static_cast<float>(e[static_cast<std::size_t>(k)]);
    }
    return out;
}

std::vector<Stage2Example> load_stage2_examples(const forge::Manifest& manifest, forge::Split split,
                                                const Stage2Config& config, int limit,
                                                const stage1::Stage1Model* layout_model) {
    config.validate();
    if (!config.teacher_layouts && layout_model == nullptr) {
        throw ConfigError("predicted layouts requested but no Stage-I model was given");
    }
    auto recs = manifest.in_split(split);
    if (limit > 0 && static_cast<int>(recs.size()) > limit) recs.resize(static_cast<std::size_t>(limit));
    const prompt::HashedTrigramEmbedder embedder;
    std::vector<Stage2Example> out(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        out[i].id     = recs[i]->id;
        out[i].prompt = build_prompt(config.prompt_mode, recs[i]->city, recs[i]->description, embedder);
    }
    parallel_for(static_cast<int>(recs.size()), [&](int i) {
        const auto& r = *recs[static_cast<std::size_t>(i)];
        auto& e       = out[static_cast<std::size_t>(i)];
        e.aerial      = aerial_tensor(manifest.load_aerial(r), config.image_size);
        if (config.teacher_layouts) e.layout = downsample_layout(manifest.load_layout(r), config.image_size);
    });
    if (!config.teacher_layouts) {
        constexpr std::size_t kChunk = 16;
        for (std::size_t i = 0; i < recs.size(); i += kChunk) {
            std::vector<Tensor> inputs;
            const std::size_t end = std::min(recs.size(), i + kChunk);
            for (std::size_t j = i; j < end; ++j) inputs.push_back(layout_model->preprocess(manifest.load_ground(*recs[j])));
            std::vector<const Tensor*> ptrs;
            for (const auto& t : inputs) ptrs.push_back(&t);
            const auto preds = stage1::predict_layouts(*layout_model, ptrs);
            for (std::size_t j = i; j < end; ++j) out[j].layout = downsample_layout(preds[j - i], config.image_size);
        }
    }
    return out;
}

Stage2Example augment(const Stage2Example& e, int quarter_turns, bool mirror) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0 && !mirror) return e;
    const int n = e.layout.height;
    if (e.aerial.dim(1) != n || e.aerial.dim(2) != n || e.layout.width != n) {
        throw ShapeError("stage2 augment expects square aerial and layout of equal size");
    }
    // Source pixel of each destination pixel: mirror x, then rotate (y, x) -> (x, n-1-y) per turn.
    auto source = [&](int y, int x) {
        for (int t = 0; t < quarter_turns; ++t) {
            const int sy = n - 1 - x, sx = y;
            y = sy;
            x = sx;
        }
        if (mirror) x = n - 1 - x;
        return std::pair{y, x};
    };
    Stage2Example out{e.id, Tensor(e.aerial.shape()), LayoutMap(n, n), e.prompt};
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const auto [sy, sx]  = source(y, x);
            out.layout.at(y, x) = e.layout.at(sy, sx);
            for (int c = 0; c < 3; ++c) {
                out.aerial[c * plane + static_cast<std::size_t>(y) * n + x] =
                    e.aerial[c * plane + static_cast<std::size_t>(sy) * n + sx];
            }
        }
    }
    return out;
}

Var denoise_loss(const Var& eps_pred, const Tensor& eps) { return nn::mse_loss(eps_pred, Var(eps)); }

Stage2TrainResult train_stage2(Stage2Model& model, const std::vector<Stage2Example>& train,
                               const Stage2TrainOptions& options) {
    if (train.empty()) throw ConfigError("train_stage2: empty training set");
    const auto& cfg = model.config();
    const int s     = model.latent_size();
    nn::Adam adam(model.params(), {.learning_rate = cfg.learning_rate, .clip_norm = 1.0});
    Rng rng      = make_rng({cfg.seed, hash_string("stage2-train")});
    Rng drop_rng = make_rng({cfg.seed, hash_string("stage2-dropout")});
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::map<std::string, Tensor> text_cache;
    for (const auto& e : train) {
        if (!text_cache.count(e.prompt)) text_cache.emplace(e.prompt, text_embeddings({e.prompt}, cfg.text_dim));
    }

    auto& entries = model.params().entries();
    std::vector<std::vector<float>> shadow;
    for (const auto& [_, v] : entries) shadow.emplace_back(v.value().values().begin(), v.value().values().end());

    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    Stage2TrainResult result;
    const auto start = std::chrono::steady_clock::now();
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Stage2Example> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const auto& e = train[static_cast<std::size_t>(order[cursor++])];
            if (cfg.augment) {
                const int turns   = static_cast<int>(rng() % 4);
                const bool mirror = (rng() & 1) != 0;
                batch.push_back(augment(e, turns, mirror));
            } else {
                batch.push_back(e);
            }
        }
        std::vector<const Tensor*> xs;
        std::vector<Tensor> conds;
        Tensor text({cfg.batch_size, cfg.text_dim});
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto& e = batch[static_cast<std::size_t>(b)];
            xs.push_back(&e.aerial);
            const bool drop_layout = unit(drop_rng) < cfg.layout_dropout;
            const bool drop_text   = unit(drop_rng) < cfg.text_dropout;
            conds.push_back(drop_layout ? Tensor({3, s, s}) : condition_for(e.layout, s));
            if (!drop_text) {
                const Tensor& t = text_cache.at(e.prompt);
                std::copy(t.data(), t.data() + cfg.text_dim, text.data() + static_cast<std::size_t>(b) * cfg.text_dim);
            }
        }
        std::vector<const Tensor*> cond_ptrs;
        for (const auto& c : conds) cond_ptrs.push_back(&c);

        const Tensor z0    = model.codec().encode(stack(xs));
        const auto noised  = draw_noised_batch(z0, model.schedule(), rng);
        const Var pred     = model.forward(Var(noised.z_t), noised.t, Var(text), Var(stack(cond_ptrs)));
        Var loss           = denoise_loss(pred, noised.eps);
        const double lv    = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericError("stage2 loss became non-finite at step " + std::to_string(step));
        loss.backward();
        adam.step();

        const double decay = std::min(cfg.ema_decay, (1.0 + step) / (10.0 + step));
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const float* w = entries[i].second.value().data();
            auto& sh       = shadow[i];
            for (std::size_t j = 0; j < sh.size(); ++j) {
                sh[j] = static_cast<float>(decay * sh[j] + (1.0 - decay) * w[j]);
            }
        }

        result.loss_curve.push_back(lv);
        result.steps_run = step + 1;
        if (options.on_step) options.on_step(step, lv);
        if (options.log_every > 0 && (step + 1) % options.log_every == 0) {
            const int span = std::min<int>(options.log_every, static_cast<int>(result.loss_curve.size()));
            const double avg =
                std::accumulate(result.loss_curve.end() - span, result.loss_curve.end(), 0.0) / span;
            spdlog::info("stage2 step {} loss {:.4f}", step + 1, avg);
        }
        result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        // Stop early if one more step of average length would overrun.
        if (options.max_seconds > 0 &&
            result.seconds + result.seconds / (step + 1) >= options.max_seconds) {
            spdlog::info("stage2 stopping at step {} (time budget)", step + 1);
            break;
        }
    }
    if (cfg.ema_decay > 0.0) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            Var p = entries[i].second;
            std::copy(shadow[i].begin(), shadow[i].end(), p.mutable_value().data());
        }
    }
    return result;
}

std::vector<Image> sample_batch(const Stage2Model& model, const std::vector<SynthesisRequest>& requests) {
    if (requests.empty()) return {};
    const auto& cfg   = model.config();
    const auto& sched = model.schedule();
    const int n = static_cast<int>(requests.size()), s = model.latent_size(), zc = model.codec().latent_channels();
    const int steps = requests.front().steps > 0 ? requests.front().steps : cfg.sample_steps;
    const double guidance =
        requests.front().guidance_scale >= 0.0 ? requests.front().guidance_scale : cfg.guidance_scale;
    for (const auto& r : requests) {
        if ((r.steps > 0 ? r.steps : cfg.sample_steps) != steps ||
            (r.guidance_scale >= 0.0 ? r.guidance_scale : cfg.guidance_scale) != guidance) {
            throw ConfigError("sample_batch: requests must share step count and guidance scale");
        }
    }
    const auto timesteps = sampling_timesteps(sched, steps);

    nn::NoGradGuard guard;
    std::vector<const Tensor*> cond_ptrs;
    std::vector<Tensor> conds;
    std::vector<std::string> prompts;
    for (const auto& r : requests) {
        conds.push_back(condition_for(r.layout, s));
        prompts.push_back(r.prompt);
    }
    for (const auto& c : conds) cond_ptrs.push_back(&c);
    const Var layout(stack(cond_ptrs));
    const Var text(text_embeddings(prompts, cfg.text_dim));
    const Var null_text(Tensor({n, cfg.text_dim}));

    std::vector<Rng> rngs;
    for (const auto& r : requests) rngs.push_back(make_rng({r.seed, hash_string("stage2-sample")}));
    const std::size_t per = static_cast<std::size_t>(zc) * s * s;
    Tensor z({n, zc, s, s});
    for (int i = 0; i < n; ++i) {
        const Tensor e = Tensor::randn({static_cast<int>(per)}, rngs[static_cast<std::size_t>(i)]);
        std::copy(e.data(), e.data() + per, z.data() + static_cast<std::size_t>(i) * per);
    }
    const bool clip = model.codec().mode() == "identity";

    for (int k = steps - 1; k >= 0; --k) {
        const int t            = timesteps[static_cast<std::size_t>(k)];
        const double abar      = sched.alpha_bars[static_cast<std::size_t>(t)];
        const double abar_prev = k > 0 ? sched.alpha_bars[static_cast<std::size_t>(timesteps[static_cast<std::size_t>(k - 1)])] : 1.0;
        const double beta      = 1.0 - abar / abar_prev;
        const std::vector<int> tv(static_cast<std::size_t>(n), t);

        Tensor eps = model.forward(Var(z), tv, text, layout).value();
        if (guidance != 1.0) {
            const Tensor eps_u = model.forward(Var(z), tv, null_text, layout).value();
            for (std::size_t j = 0; j < eps.numel(); ++j) {
                eps[j] = static_cast<float>(eps_u[j] + guidance * (eps[j] - eps_u[j]));
            }
        }
        require_finite(eps, "non-finite denoiser output at sampling step " + std::to_string(steps - k));

        const double c_x0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
        const double c_zt = std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar);
        const double sd   = std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar));
        for (int i = 0; i < n; ++i) {
            float* zi       = z.data() + static_cast<std::size_t>(i) * per;
            const float* ei = eps.data() + static_cast<std::size_t>(i) * per;
            for (std::size_t j = 0; j < per; ++j) {
                double x0 = (zi[j] - std::sqrt(1.0 - abar) * ei[j]) / std::sqrt(abar);
                if (clip) x0 = std::clamp(x0, -1.0, 1.0);
                zi[j] = static_cast<float>(c_x0 * x0 + c_zt * zi[j]);
            }
            if (k > 0) {
                std::normal_distribution<float> normal(0.0f, 1.0f);
                auto& r = rngs[static_cast<std::size_t>(i)];
                for (std::size_t j = 0; j < per; ++j) zi[j] += static_cast<float>(sd) * normal(r);
            }
        }
        require_finite(z, "non-finite sample at step " + std::to_string(steps - k));
    }
    const Tensor x = model.codec().decode(z);
    std::vector<Image> out;
    for (int i = 0; i < n; ++i) out.push_back(tensor_to_aerial(x, i));
    return out;
}

Image sample(const Stage2Model& model, const SynthesisRequest& request) { return sample_batch(model, {request}).front(); }

stage1::SegMetrics evaluate_resegmentation(const Stage2Model& model, const std::vector<Stage2Example>& examples,
                                           std::uint64_t seed, int batch_size, std::vector<Image>* outputs) {
    if (examples.empty()) throw ConfigError("evaluate_resegmentation: no examples");
    stage1::ConfusionMatrix cm;
    for (std::size_t i = 0; i < examples.size(); i += static_cast<std::size_t>(batch_size)) {
        std::vector<SynthesisRequest> reqs;
        const std::size_t end = std::min(examples.size(), i + static_cast<std::size_t>(batch_size));
        for (std::size_t j = i; j < end; ++j) {
            reqs.push_back({examples[j].layout, examples[j].prompt, derive_seed({seed, j})});
        }
        auto images = sample_batch(model, reqs);
        for (std::size_t j = i; j < end; ++j) {
            const LayoutMap seg = quantize_palette(images[j - i]);
            cm.add(examples[j].layout.height == seg.height ? examples[j].layout
                                                           : downsample_layout(examples[j].layout, seg.height),
                   seg);
            if (outputs) outputs->push_back(std::move(images[j - i]));
        }
    }
    return cm.metrics();
}

void save_checkpoint(const Stage2Model& model, const std::filesystem::path& path, int step) {
    model.params().save(path);
    nlohmann::json side{{"kind", "stage2"},
                        {"config", model.config()},
                        {"config_fingerprint", model.config().fingerprint()},
                        {"weights_fingerprint", model.params().fingerprint()},
                        {"seed", model.config().seed},
                        {"step", step}};
    if (const auto* learned = dynamic_cast<const LearnedCodec*>(&model.codec())) {
        learned->save(path.string() + ".codec");
        side["codec_path"] = path.filename().string() + ".codec";
    }
    std::ofstream out(path.string() + ".json");
    if (!out) throw IoError("cannot write checkpoint sidecar for " + path.string());
    out << side.dump(1);
}

std::unique_ptr<Stage2Model> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw IoError("missing checkpoint sidecar " + path.string() + ".json");
    const auto side = nlohmann::json::parse(in);
    if (side.value("kind", std::string()) != "stage2") throw IoError(path.string() + " is not a stage2 checkpoint");
    const auto config = side.at("config").get<Stage2Config>();
    if (config.fingerprint() != side.value("config_fingerprint", std::string())) {
        throw IoError("stage2 checkpoint config fingerprint mismatch");
    }
    auto model = std::make_unique<Stage2Model>(config);
    model->params().load(path);
    if (config.codec == "learned") {
        auto codec = std::make_shared<LearnedCodec>(config.latent_channels);
        codec->load(path.parent_path() / side.at("codec_path").get<std::string>());
        model->set_codec(std::move(codec));
    }
    return model;
}

}  // namespace aerialgen::stage2
