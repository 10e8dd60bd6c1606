#include "aerialgen/eval/embedder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/parallel.hpp"
#include "aerialgen/core/random.hpp"

namespace aerialgen::eval {

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

Tensor image_tensor(const Image& img, int h, int w) {
    if (img.channels != 3) throw ShapeError("expected an RGB image");
    const Image r = img.height == h && img.width == w ? img : resize(img, h, w);
    return Tensor({3, h, w}, r.data);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void CvglConfig::validate() const {
    for (int v : {ground_height, ground_width, aerial_size, feature_channels, attention_maps, norm_groups, batch_size}) {
        if (v <= 0) throw ConfigError("cvgl config sizes must be positive");
    }
    for (int c : channels) {
        if (c <= 0 || c % norm_groups) throw ConfigError("cvgl channels must be positive multiples of norm_groups");
    }
    if (ground_height % 8 || ground_width % 8 || aerial_size % 8) throw ConfigError("cvgl inputs must be multiples of 8");
    if (batch_size < 2) throw ConfigError("in-batch negatives need batch_size >= 2");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
}

void to_json(nlohmann::json& j, const CvglConfig& c) {
    j = {{"ground_height", c.ground_height}, {"ground_width", c.ground_width},
         {"aerial_size", c.aerial_size},     {"channels", c.channels},
         {"feature_channels", c.feature_channels}, {"attention_maps", c.attention_maps},
         {"norm_groups", c.norm_groups},     {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},       {"steps", c.steps},
         {"alpha", c.alpha},                 {"augment", c.augment},
         {"seed", c.seed},                   {"gate_recall", c.gate_recall}};
}

void from_json(const nlohmann::json& j, CvglConfig& c) {
    const CvglConfig d;
    c.ground_height    = j.value("ground_height", d.ground_height);
    c.ground_width     = j.value("ground_width", d.ground_width);
    c.aerial_size      = j.value("aerial_size", d.aerial_size);
    c.channels         = j.value("channels", d.channels);
    c.feature_channels = j.value("feature_channels", d.feature_channels);
    c.attention_maps   = j.value("attention_maps", d.attention_maps);
    c.norm_groups      = j.value("norm_groups", d.norm_groups);
    c.learning_rate    = j.value("learning_rate", d.learning_rate);
    c.batch_size       = j.value("batch_size", d.batch_size);
    c.steps            = j.value("steps", d.steps);
    c.alpha            = j.value("alpha", d.alpha);
    c.augment          = j.value("augment", d.augment);
    c.seed             = j.value("seed", d.seed);
    c.gate_recall      = j.value("gate_recall", d.gate_recall);
}

std::string CvglConfig::fingerprint() const {
    nlohmann::json j = *this;
    for (const char* k : {"learning_rate", "batch_size", "steps", "alpha", "augment", "seed", "gate_recall"}) j.erase(k);
    const auto s = j.dump();
    return nn::fnv1a_hex(nn::fnv1a(s.data(), s.size()));
}

CvglEmbedder::Branch CvglEmbedder::make_branch(const std::string& name, int height, int width, bool wrap, Rng& rng) {
    const auto [a, b, c] = config_.channels;
    const int g          = config_.norm_groups;
    Branch br;
    br.c0   = nn::Conv2d(store_, name + ".c0", 3, a, 3, rng, 2, wrap);
    br.n0   = nn::GroupNorm(store_, name + ".n0", a, g);
    br.c1   = nn::Conv2d(store_, name + ".c1", a, b, 3, rng, 2, wrap);
    br.n1   = nn::GroupNorm(store_, name + ".n1", b, g);
    br.c2   = nn::Conv2d(store_, name + ".c2", b, c, 3, rng, 2, wrap);
    br.n2   = nn::GroupNorm(store_, name + ".n2", c, g);
    br.c3   = nn::Conv2d(store_, name + ".c3", c, c, 3, rng, 1, wrap);
    br.n3   = nn::GroupNorm(store_, name + ".n3", c, g);
    br.head = nn::Conv2d(store_, name + ".head", c, config_.feature_channels, 1, rng);
    br.positions = (height / 8) * (width / 8);
    br.att1 = nn::Linear(store_, name + ".att1", br.positions, std::max(1, br.positions / 2), rng);
    br.att2 = nn::Linear(store_, name + ".att2", std::max(1, br.positions / 2), config_.attention_maps * br.positions, rng);
    return br;
}

CvglEmbedder::CvglEmbedder(const CvglConfig& config) : config_(config) {
    config_.validate();
    Rng rng = make_rng({config_.seed, hash_string("cvgl-init")});
    ground_ = make_branch("ground", config_.ground_height, config_.ground_width, true, rng);
    aerial_ = make_branch("aerial", config_.aerial_size, config_.aerial_size, false, rng);
}

Var CvglEmbedder::run_branch(const Branch& b, const Var& x) const {
    const Var centred = nn::add_scalar(nn::scale(x, 2.0f), -1.0f);
    Var h             = nn::silu(b.n0(b.c0(centred)));
    h                 = nn::silu(b.n1(b.c1(h)));
    h                 = nn::silu(b.n2(b.c2(h)));
    h                 = nn::add(h, nn::silu(b.n3(b.c3(h))));
    const Var f       = b.head(h);
    const int n       = f.dim(0);
    if (f.dim(2) * f.dim(3) != b.positions) throw ShapeError("cvgl branch input has the wrong size");
    const Var pooled = nn::reshape(nn::channel_max(f), {n, b.positions});
    const Var att    = nn::reshape(b.att2(nn::silu(b.att1(pooled))), {n, config_.attention_maps, b.positions});
    return nn::l2_normalize_rows(nn::attention_pool(f, att));
}

Var CvglEmbedder::embed_ground(const Var& x) const {
    if (x.shape().size() != 4 || x.dim(1) != 3 || x.dim(2) != config_.ground_height || x.dim(3) != config_.ground_width) {
        throw ShapeError("ground input must be [N, 3, " + std::to_string(config_.ground_height) + ", " +
                         std::to_string(config_.ground_width) + "]");
    }
    return run_branch(ground_, x);
}

Var CvglEmbedder::embed_aerial(const Var& x) const {
    if (x.shape().size() != 4 || x.dim(1) != 3 || x.dim(2) != config_.aerial_size || x.dim(3) != config_.aerial_size) {
        throw ShapeError("aerial input must be [N, 3, " + std::to_string(config_.aerial_size) + ", " +
                         std::to_string(config_.aerial_size) + "]");
    }
    return run_branch(aerial_, x);
}

FeatureSet CvglEmbedder::features(const Branch& b, const std::vector<const Tensor*>& xs) const {
    FeatureSet out;
    nn::NoGradGuard guard;
    constexpr std::size_t kChunk = 32;
    for (std::size_t i = 0; i < xs.size(); i += kChunk) {
        const std::vector<const Tensor*> part(xs.begin() + static_cast<std::ptrdiff_t>(i),
                                              xs.begin() + static_cast<std::ptrdiff_t>(std::min(xs.size(), i + kChunk)));
        const Var x(stack(part));
        const Tensor e = (&b == &ground_ ? embed_ground(x) : embed_aerial(x)).value();
        const int d    = e.dim(1);
        for (std::size_t r = 0; r < part.size(); ++r) {
            out.emplace_back(e.data() + r * static_cast<std::size_t>(d), e.data() + (r + 1) * static_cast<std::size_t>(d));
        }
    }
    return out;
}

FeatureSet CvglEmbedder::ground_features(const std::vector<const Tensor*>& grounds) const { return features(ground_, grounds); }
FeatureSet CvglEmbedder::aerial_features(const std::vector<const Tensor*>& aerials) const { return features(aerial_, aerials); }

Tensor CvglEmbedder::preprocess_ground(const Image& panorama) const {
    return image_tensor(panorama, config_.ground_height, config_.ground_width);
}

Tensor CvglEmbedder::preprocess_aerial(const Image& aerial) const {
    return image_tensor(aerial, config_.aerial_size, config_.aerial_size);
}

std::string CvglEmbedder::fingerprint() const {
    const auto s = config_.fingerprint() + store_.fingerprint();
    return nn::fnv1a_hex(nn::fnv1a(s.data(), s.size()));
}

void CvglEmbedder::require_gate(bool force) const {
    if (gate_passed() || force) return;
    throw ConfigError("embedder held-out R@1 " + std::to_string(heldout_recall) + " is below the gate " +
                      std::to_string(config_.gate_recall) + "; retrain it or pass --force");
}

Var soft_margin_triplet_loss(const Var& g, const Var& a, double alpha) {
    if (g.shape() != a.shape() || g.shape().size() != 2 || g.dim(0) < 2) {
        throw ShapeError("triplet loss needs two [N, D] batches with N >= 2");
    }
    const int n = g.dim(0);
    const Var sim = nn::matmul_nt(g, a);  // sim[i][j] = g_i . a_j
    const Tensor& s = sim.value();
    constexpr double kFloor = 1e-12;
    std::vector<double> d(static_cast<std::size_t>(n) * n);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::sqrt(std::max(2.0 - 2.0 * s[i], kFloor));
    auto at = [&](int i, int j) { return d[static_cast<std::size_t>(i) * n + j]; };

    double total = 0.0;
    std::vector<double> grad_d(d.size(), 0.0);
    const double count = 2.0 * n * (n - 1);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            // Ground query i: negative aerial j. Aerial query i: negative ground j.
            const double x1 = alpha * (at(i, i) - at(i, j));
            const double x2 = alpha * (at(i, i) - at(j, i));
            total += softplus(x1) + softplus(x2);
            const double s1 = alpha * logistic(x1) / count, s2 = alpha * logistic(x2) / count;
            grad_d[static_cast<std::size_t>(i) * n + i] += s1 + s2;
            grad_d[static_cast<std::size_t>(i) * n + j] -= s1;
            grad_d[static_cast<std::size_t>(j) * n + i] -= s2;
        }
    }
    Tensor out({1}, {static_cast<float>(total / count)});
    return nn::make_result(std::move(out), {sim}, [d, grad_d](nn::Node& self) {
        nn::Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        float* g       = in.grad_buffer().data();
        const float up = self.grad[0];
        for (std::size_t i = 0; i < d.size(); ++i) {
            // d = sqrt(2 - 2 s): dd/ds = -1/d (zero on the clamped floor).
            if (d[i] * d[i] > kFloor) g[i] += static_cast<float>(up * grad_d[i] * (-1.0 / d[i]));
        }
    });
}

std::vector<CvglPair> load_cvgl_pairs(const forge::Manifest& manifest, forge::Split split, const CvglConfig& config,
                                      int limit) {
    auto recs = manifest.in_split(split);
    if (limit > 0 && static_cast<int>(recs.size()) > limit) recs.resize(static_cast<std::size_t>(limit));
    std::vector<CvglPair> out(recs.size());
    parallel_for(static_cast<int>(recs.size()), [&](int i) {
        const auto& r = *recs[static_cast<std::size_t>(i)];
        auto& p       = out[static_cast<std::size_t>(i)];
        p.id          = r.id;
        p.ground      = image_tensor(manifest.load_ground(r), config.ground_height, config.ground_width);
        p.aerial      = image_tensor(manifest.load_aerial(r), config.aerial_size, config.aerial_size);
    });
    return out;
}

CvglPair augment(const CvglPair& p, int quarter_turns, bool mirror) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    if (quarter_turns == 0 && !mirror) return p;
    const int h = p.ground.dim(1), w = p.ground.dim(2), n = p.aerial.dim(1);
    if (w % 4) throw ShapeError("ground width must be divisible by 4");
    CvglPair out{p.id, Tensor(p.ground.shape()), Tensor(p.aerial.shape())};
    const int shift = quarter_turns * w / 4;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            const float* src = p.ground.data() + (static_cast<std::size_t>(c) * h + y) * w;
            float* dst       = out.ground.data() + (static_cast<std::size_t>(c) * h + y) * w;
            for (int u = 0; u < w; ++u) dst[((mirror ? (w - 1 - u) : u) + shift) % w] = src[u];
        }
    }
    const std::size_t plane = static_cast<std::size_t>(n) * n;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            int sy = y, sx = x;
            for (int t = 0; t < quarter_turns; ++t) {
                const int ny = n - 1 - sx, nx = sy;
                sy = ny;
                sx = nx;
            }
            if (mirror) sx = n - 1 - sx;
            for (int c = 0; c < 3; ++c) {
                out.aerial[c * plane + static_cast<std::size_t>(y) * n + x] =
                    p.aerial[c * plane + static_cast<std::size_t>(sy) * n + sx];
            }
        }
    }
    return out;
}

CvglTrainResult train_cvgl(CvglEmbedder& model, const std::vector<CvglPair>& train, const CvglTrainOptions& options) {
    const auto& cfg = model.config();
    if (static_cast<int>(train.size()) < 2) throw ConfigError("train_cvgl needs at least two pairs");
    nn::Adam adam(model.params(), {.learning_rate = cfg.learning_rate, .clip_norm = 5.0});
    Rng rng = make_rng({cfg.seed, hash_string("cvgl-train")});
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();
    const int batch    = std::min<int>(cfg.batch_size, static_cast<int>(train.size()));

    CvglTrainResult result;
    const auto start = std::chrono::steady_clock::now();
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<CvglPair> items;
        for (int b = 0; b < batch; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            const auto idx = static_cast<std::size_t>(order[cursor++]);
            CvglPair p     = train[idx];
            if (options.aerial_hook) p.aerial = options.aerial_hook(p.aerial, idx);
            if (cfg.augment) {
                const int turns   = static_cast<int>(rng() % 4);
                const bool mirror = (rng() & 1) != 0;
                p                 = augment(p, turns, mirror);
            }
            items.push_back(std::move(p));
        }
        std::vector<const Tensor*> gs, as;
        for (const auto& p : items) {
            gs.push_back(&p.ground);
            as.push_back(&p.aerial);
        }
        Var loss = soft_margin_triplet_loss(model.embed_ground(Var(stack(gs))), model.embed_aerial(Var(stack(as))),
                                            cfg.alpha);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericError("cvgl loss became non-finite at step " + std::to_string(step));
        loss.backward();
        adam.step();
        result.loss_curve.push_back(lv);
        result.steps_run = step + 1;
        if (options.on_step) options.on_step(step, lv);
        if (options.log_every > 0 && (step + 1) % options.log_every == 0) {
            const int span = std::min<int>(options.log_every, static_cast<int>(result.loss_curve.size()));
            spdlog::info("cvgl step {} loss {:.4f}", step + 1,
                         std::accumulate(result.loss_curve.end() - span, result.loss_curve.end(), 0.0) / span);
        }
        result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (options.max_seconds > 0 && result.seconds >= options.max_seconds) break;
    }
    return result;
}

nlohmann::json RecallReport::to_json() const {
    return {{"queries", queries}, {"R@1", r1}, {"R@5", r5}, {"R@10", r10}, {"R@1%", r1pct}};
}

RecallReport evaluate_recall(const CvglEmbedder& model, const std::vector<CvglPair>& pairs) {
    if (pairs.empty()) throw ConfigError("evaluate_recall: no pairs");
    std::vector<const Tensor*> gs, as;
    for (const auto& p : pairs) {
        gs.push_back(&p.ground);
        as.push_back(&p.aerial);
    }
    const auto q = model.ground_features(gs);
    const auto g = model.aerial_features(as);
    std::vector<int> truth(pairs.size());
    std::iota(truth.begin(), truth.end(), 0);
    const auto ranks = true_match_ranks(q, g, truth);
    auto frac        = [&](int k) {
        return static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [k](int r) { return r < k; })) /
               static_cast<double>(ranks.size());
    };
    RecallReport r;
    r.queries = static_cast<int>(pairs.size());
    r.r1      = frac(1);
    r.r5      = frac(5);
    r.r10     = frac(10);
    r.r1pct   = frac(one_percent_k(static_cast<int>(pairs.size())));
    return r;
}

void save_embedder(const CvglEmbedder& model, const std::filesystem::path& path) {
    model.params().save(path);
    std::ofstream out(path.string() + ".json");
    if (!out) throw IoError("cannot write embedder sidecar for " + path.string());
    out << nlohmann::json{{"kind", "cvgl"},
                          {"config", model.config()},
                          {"config_fingerprint", model.config().fingerprint()},
                          {"fingerprint", model.fingerprint()},
                          {"heldout_recall", model.heldout_recall}}
               .dump(1);
}

std::unique_ptr<CvglEmbedder> load_embedder(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw IoError("missing embedder sidecar " + path.string() + ".json");
    const auto side = nlohmann::json::parse(in);
    if (side.value("kind", std::string()) != "cvgl") throw IoError(path.string() + " is not an embedder checkpoint");
    auto model = std::make_unique<CvglEmbedder>(side.at("config").get<CvglConfig>());
    model->params().load(path);
    if (model->fingerprint() != side.value("fingerprint", std::string())) {
        throw IoError("embedder fingerprint mismatch for " + path.string());
    }
    model->heldout_recall = side.value("heldout_recall", -1.0);
    return model;
}

}  // namespace aerialgen::eval
