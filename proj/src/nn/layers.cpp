#include "aerialgen/nn/layers.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "aerialgen/core/error.hpp"

namespace aerialgen::nn {

namespace {

constexpr char kMagic[4]         = {'A', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

Tensor lecun_uniform(Shape shape, int fan_in, Rng& rng) {
    const float bound = std::sqrt(3.0f / static_cast<float>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -bound, bound);
}

template <class T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("truncated checkpoint");
    return v;
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h   = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a_hex(std::uint64_t hash) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

Var ParamStore::add(const std::string& name, Tensor init) {
    for (const auto& [n, _] : entries_) {
        if (n == name) throw ConfigError("duplicate parameter name " + name);
    }
    Var v(std::move(init), true);
    entries_.emplace_back(name, v);
    return v;
}

const Var& ParamStore::at(const std::string& name) const {
    for (const auto& [n, v] : entries_) {
        if (n == name) return v;
    }
    throw ConfigError("no parameter named " + name);
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.value().numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
}

void ParamStore::assign_from(const ParamStore& other) {
    if (other.entries_.size() != entries_.size()) throw ShapeError("assign_from: parameter count differs");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first != other.entries_[i].first) {
            throw ShapeError("assign_from: name mismatch " + entries_[i].first);
        }
        require_same_shape(entries_[i].second.shape(), other.entries_[i].second.shape(), "assign_from");
        entries_[i].second.mutable_value() = other.entries_[i].second.value();
    }
}

std::string ParamStore::fingerprint() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, v] : entries_) {
        h = fnv1a(name.data(), name.size(), h);
        const Shape& s = v.shape();
        h              = fnv1a(s.data(), s.size() * sizeof(int), h);
        h              = fnv1a(v.value().data(), v.value().numel() * sizeof(float), h);
    }
    return fnv1a_hex(h);
}

void ParamStore::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, v] : entries_) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& s = v.shape();
        write_pod(out, static_cast<std::uint32_t>(s.size()));
        for (int d : s) write_pod(out, static_cast<std::int32_t>(d));
        out.write(reinterpret_cast<const char*>(v.value().data()),
                  static_cast<std::streamsize>(v.value().numel() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

void ParamStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4)) throw IoError(path.string() + " is not a checkpoint");
    if (read_pod<std::uint32_t>(in) != kVersion) throw IoError("unsupported checkpoint version");
    const auto count = read_pod<std::uint32_t>(in);
    if (count != entries_.size()) {
        throw IoError("checkpoint has " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(entries_.size()));
    }
    for (auto& [name, v] : entries_) {
        const auto len = read_pod<std::uint32_t>(in);
        std::string stored(len, '\0');
        in.read(stored.data(), len);
        if (stored != name) throw IoError("checkpoint tensor " + stored + " where " + name + " expected");
        const auto rank = read_pod<std::uint32_t>(in);
        Shape s;
        for (std::uint32_t i = 0; i < rank; ++i) s.push_back(read_pod<std::int32_t>(in));
        if (s != v.shape()) throw IoError("shape mismatch for " + name + ": " + shape_string(s));
        in.read(reinterpret_cast<char*>(v.mutable_value().data()),
                static_cast<std::streamsize>(v.value().numel() * sizeof(float)));
        if (!in) throw IoError("truncated checkpoint " + path.string());
    }
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in_channels, int out_channels, int kernel, Rng& rng,
               int stride, bool wrap_width) {
    const int fan_in = in_channels * kernel * kernel;
    weight  = store.add(name + ".weight", lecun_uniform({out_channels, in_channels, kernel, kernel}, fan_in, rng));
    bias    = store.add(name + ".bias", Tensor({out_channels}));
    options = Conv2dOptions{stride, stride, kernel / 2, kernel / 2, wrap_width};
}

Conv2d Conv2d::zero_initialized(ParamStore& store, const std::string& name, int in_channels, int out_channels) {
    Conv2d c;
    c.weight  = store.add(name + ".weight", Tensor({out_channels, in_channels, 1, 1}));
    c.bias    = store.add(name + ".bias", Tensor({out_channels}));
    c.options = Conv2dOptions{};
    return c;
}

Linear::Linear(ParamStore& store, const std::string& name, int in_features, int out_features, Rng& rng) {
    weight = store.add(name + ".weight", lecun_uniform({out_features, in_features}, in_features, rng));
    bias   = store.add(name + ".bias", Tensor({out_features}));
}

Linear Linear::zero_initialized(ParamStore& store, const std::string& name, int in_features, int out_features) {
    Linear l;
    l.weight = store.add(name + ".weight", Tensor({out_features, in_features}));
    l.bias   = store.add(name + ".bias", Tensor({out_features}));
    return l;
}

GroupNorm::GroupNorm(ParamStore& store, const std::string& name, int channels, int groups_)
    : gamma(store.add(name + ".gamma", Tensor({channels}, 1.0f))),
      beta(store.add(name + ".beta", Tensor({channels}))),
      groups(groups_) {}

Adam::Adam(ParamStore& store, AdamOptions options) : store_(&store), options_(options) {
    for (const auto& [_, v] : store.entries()) {
        m_.emplace_back(v.value().numel(), 0.0f);
        v_.emplace_back(v.value().numel(), 0.0f);
    }
}

void Adam::step() {
    auto& entries = store_->entries();
    if (entries.size() != m_.size()) throw ConfigError("Adam: parameter store changed after construction");
    ++steps_;

    double clip_factor = 1.0;
    if (options_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [_, p] : entries) {
            if (!p.has_grad()) continue;
            for (float g : p.grad().values()) sq += static_cast<double>(g) * g;
        }
        const double norm = std::sqrt(sq);
        if (norm > options_.clip_norm) clip_factor = options_.clip_norm / norm;
    }

    const double b1c = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double b2c = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    const auto lr    = static_cast<float>(options_.learning_rate * std::sqrt(b2c) / b1c);
    const auto b1    = static_cast<float>(options_.beta1);
    const auto b2    = static_cast<float>(options_.beta2);
    const auto eps   = static_cast<float>(options_.eps * std::sqrt(b2c));
    const auto clip  = static_cast<float>(clip_factor);

    for (std::size_t i = 0; i < entries.size(); ++i) {
        Var p = entries[i].second;
        if (!p.has_grad()) continue;
        float* w       = p.mutable_value().data();
        const float* g = p.grad().data();
        auto& m        = m_[i];
        auto& v        = v_[i];
        for (std::size_t j = 0; j < m.size(); ++j) {
            const float gj = g[j] * clip;
            m[j]           = b1 * m[j] + (1.0f - b1) * gj;
            v[j]           = b2 * v[j] + (1.0f - b2) * gj * gj;
            w[j] -= lr * m[j] / (std::sqrt(v[j]) + eps);
        }
        p.zero_grad();
    }
}

}  // namespace aerialgen::nn
