#include "aerialgen/stage1/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/parallel.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/stage1/loss.hpp"

namespace aerialgen::stage1 {

namespace {

LayoutMap target_layout(const LayoutMap& layout, int size) {
    return layout.height == size && layout.width == size ? layout : resize_nearest(layout, size, size);
}

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

}  // namespace

std::vector<Stage1Example> load_examples(const forge::Manifest& manifest, forge::Split split, const Stage1Config& config,
                                         int limit) {
    auto recs = manifest.in_split(split);
    if (limit > 0 && static_cast<int>(recs.size()) > limit) recs.resize(static_cast<std::size_t>(limit));
    std::vector<Stage1Example> out(recs.size());
    const Stage1Model shape_only(config);
    parallel_for(static_cast<int>(recs.size()), [&](int i) {
        const auto& r = *recs[static_cast<std::size_t>(i)];
        auto& e       = out[static_cast<std::size_t>(i)];
        e.id          = r.id;
        const Image ground = manifest.load_ground(r);
        e.input       = shape_only.preprocess(ground);
        e.target      = target_layout(manifest.load_layout(r), config.layout_size);
        e.pool_w      = ground.width / config.input_width;
    });
    return out;
}

std::vector<Stage1Example> make_examples(const std::vector<forge::Sample>& samples, const Stage1Config& config) {
    const Stage1Model shape_only(config);
    std::vector<Stage1Example> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back({s.id, shape_only.preprocess(s.ground), target_layout(s.layout, config.layout_size),
                       std::max(1, s.ground.width / config.input_width)});
    }
    return out;
}

Stage1Example augment(const Stage1Example& e, int quarter_turns, bool mirror) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0 && !mirror) return e;
    const int h = e.input.dim(1), w = e.input.dim(2);
    if (w % 4) throw ShapeError("augment: input width must be divisible by 4");
    const int shift = quarter_turns * w / 4;

    // Mirroring maps azimuth a to -a. A pooled column u is centred on source
    // column f*u + (f-1)/2, whose mirror lands on pooled column W - u - (f-1)/f.
    const int mirror_base = e.pool_w > 1 ? w - 1 : w;
    Stage1Example out{e.id, Tensor(e.input.shape()), e.target, e.pool_w};
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            const float* src = e.input.data() + (static_cast<std::size_t>(c) * h + y) * w;
            float* dst       = out.input.data() + (static_cast<std::size_t>(c) * h + y) * w;
            for (int u = 0; u < w; ++u) {
                const int m = mirror ? (mirror_base - u) % w : u;
                dst[(m + shift) % w] = src[u];
            }
        }
    }
    const int n = e.target.height;
    LayoutMap l = e.target;
    if (mirror) {
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) l.at(y, x) = e.target.at(y, n - 1 - x);
    }
    for (int t = 0; t < quarter_turns; ++t) {
        LayoutMap r(n, n);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) r.at(x, n - 1 - y) = l.at(y, x);
        l = std::move(r);
    }
    out.target = std::move(l);
    return out;
}

TrainResult train_stage1(Stage1Model& model, const std::vector<Stage1Example>& train, const TrainOptions& options) {
    if (train.empty()) throw ConfigError("train_stage1: empty training set");
    const auto& cfg = model.config();
    nn::Adam adam(model.params(), {.learning_rate = cfg.learning_rate, .clip_norm = 5.0});
    Rng rng = make_rng({cfg.seed, hash_string("stage1-train")});
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    TrainResult result;
    const auto start = std::chrono::steady_clock::now();
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<Stage1Example> batch;
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
        std::vector<const LayoutMap*> ys;
        for (const auto& e : batch) {
            xs.push_back(&e.input);
            ys.push_back(&e.target);
        }
        const nn::Var x(stack(xs));
        nn::Var loss    = dice_loss(model.forward(x), one_hot_batch(ys), cfg.dice_epsilon);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericError("stage1 loss became non-finite at step " + std::to_string(step));
        loss.backward();
        adam.step();
        result.loss_curve.push_back(lv);
        result.steps_run = step + 1;
        if (options.on_step) options.on_step(step, lv);
        if (options.log_every > 0 && (step + 1) % options.log_every == 0) {
            double avg = 0;
            const int span = std::min<int>(options.log_every, static_cast<int>(result.loss_curve.size()));
            for (int i = 0; i < span; ++i) avg += result.loss_curve[result.loss_curve.size() - 1 - static_cast<std::size_t>(i)];
            spdlog::info("stage1 step {} dice {:.4f}", step + 1, avg / span);
        }
        result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        // Stop early if one more step of average length would overrun.
        if (options.max_seconds > 0 &&
            result.seconds + result.seconds / (step + 1) >= options.max_seconds) {
            spdlog::info("stage1 stopping at step {} (time budget)", step + 1);
            break;
        }
    }
    return result;
}

std::vector<LayoutMap> predict_layouts(const Stage1Model& model, const std::vector<const Tensor*>& inputs,
                                       double fov_degrees) {
    if (inputs.empty()) return {};
    nn::NoGradGuard guard;
    const nn::Var probs = model.forward(nn::Var(stack(inputs)), fov_degrees);
    const int n = probs.dim(0), k = probs.dim(1), s = probs.dim(2);
    const std::size_t plane = static_cast<std::size_t>(s) * s;
    std::vector<LayoutMap> out;
    for (int i = 0; i < n; ++i) {
        LayoutMap l(s, s);
        const float* p = probs.value().data() + static_cast<std::size_t>(i) * k * plane;
        for (std::size_t x = 0; x < plane; ++x) {
            int best = 0;
            for (int c = 1; c < k; ++c) {
                if (p[static_cast<std::size_t>(c) * plane + x] > p[static_cast<std::size_t>(best) * plane + x]) best = c;
            }
            l.classes[x] = static_cast<std::uint8_t>(best);
        }
        out.push_back(std::move(l));
    }
    return out;
}

SegMetrics evaluate_stage1(const Stage1Model& model, const std::vector<Stage1Example>& examples, double fov_degrees,
                           int batch_size) {
    if (examples.empty()) throw ConfigError("evaluate_stage1: empty split");
    if (!(fov_degrees > 0.0 && fov_degrees <= 360.0)) throw ConfigError("fov must lie in (0, 360]");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < examples.size(); i += static_cast<std::size_t>(batch_size)) {
        std::vector<const Tensor*> xs;
        const std::size_t end = std::min(examples.size(), i + static_cast<std::size_t>(batch_size));
        for (std::size_t j = i; j < end; ++j) xs.push_back(&examples[j].input);
        const auto preds = predict_layouts(model, xs, fov_degrees);
        for (std::size_t j = i; j < end; ++j) cm.add(examples[j].target, preds[j - i]);
    }
    return cm.metrics();
}

void save_checkpoint(const Stage1Model& model, const std::filesystem::path& path, int step) {
    model.params().save(path);
    nlohmann::json side{{"kind", "stage1"},
                        {"config", model.config()},
                        {"config_fingerprint", model.config().fingerprint()},
                        {"weights_fingerprint", model.params().fingerprint()},
                        {"seed", model.config().seed},
                        {"step", step}};
    std::ofstream out(path.string() + ".json");
    if (!out) throw IoError("cannot write checkpoint sidecar for " + path.string());
    out << side.dump(1);
}

std::unique_ptr<Stage1Model> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw IoError("missing checkpoint sidecar " + path.string() + ".json");
    const auto side = nlohmann::json::parse(in);
    if (side.value("kind", std::string()) != "stage1") throw IoError(path.string() + " is not a stage1 checkpoint");
    const auto config = side.at("config").get<Stage1Config>();
    if (config.fingerprint() != side.value("config_fingerprint", std::string())) {
        throw IoError("stage1 checkpoint config fingerprint mismatch");
    }
    auto model = std::make_unique<Stage1Model>(config);
    model->params().load(path);
    return model;
}

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& curve) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step,loss\n";
    for (std::size_t i = 0; i < curve.size(); ++i) out << i + 1 << ',' << curve[i] << '\n';
}

}  // namespace aerialgen::stage1
