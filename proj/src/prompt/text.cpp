#include "aerialgen/prompt/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_set>

#include "aerialgen/core/error.hpp"

namespace aerialgen::prompt {

namespace {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\'' || c == '-'; }

const std::unordered_set<std::string_view>& stopwords() {
    static const std::unordered_set<std::string_view> words = {
        "a",     "about", "above", "after",  "again", "all",   "also",  "am",    "an",    "and",   "any",   "are",
        "around", "as",   "at",    "be",     "been",  "before", "being", "below", "between", "both", "but",  "by",
        "can",   "could", "did",   "do",     "does",  "down",  "during", "each", "few",   "for",   "from",  "further",
        "had",   "has",   "have",  "having", "he",    "her",   "here",  "hers",  "him",   "his",   "how",   "i",
        "if",    "in",    "into",  "is",     "it",    "its",   "itself", "just", "look",  "looks", "may",   "me",
        "more",  "most",  "my",    "near",   "no",    "nor",   "not",   "of",    "off",   "on",    "once",  "only",
        "or",    "other", "our",   "out",    "over",  "own",   "same",  "she",   "should", "so",   "some",  "such",
        "than",  "that",  "the",   "their",  "them",  "then",  "there", "these", "they",  "this",  "those", "through",
        "to",    "too",   "under", "until",  "up",    "very",  "was",   "we",    "were",  "what",  "when",  "where",
        "which", "while", "who",   "whom",   "why",   "will",  "with",  "within", "would", "you",  "your",  "seems",
        "appears", "visible", "image", "scene", "view", "shows", "lies", "runs", "stands", "located", "side"};
    return words;
}

}  // namespace

HashedTrigramEmbedder::HashedTrigramEmbedder(int dim) : dim_(dim) {
    if (dim <= 0) throw ConfigError("embedder dimension must be positive");
}

Embedding HashedTrigramEmbedder::embed(std::string_view text) const {
    std::string padded = "^^";
    for (unsigned char c : text) padded.push_back(static_cast<char>(std::tolower(c)));
    padded += "$$";
    Embedding v(static_cast<std::size_t>(dim_), 0.0);
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        const std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3));
        v[h % static_cast<std::uint64_t>(dim_)] += (h >> 63) ? 1.0 : -1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) {
        v[0] = 1.0;
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

double cosine(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw ShapeError("cosine: embedding sizes differ");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

bool is_stopword(std::string_view word) { return stopwords().contains(word); }

std::vector<std::vector<std::string>> word_runs(std::string_view text) {
    std::vector<std::vector<std::string>> runs(1);
    std::string word;
    auto flush_word = [&] {
        while (!word.empty() && (word.back() == '\'' || word.back() == '-')) word.pop_back();
        while (!word.empty() && (word.front() == '\'' || word.front() == '-')) word.erase(word.begin());
        if (!word.empty()) runs.back().push_back(word);
        word.clear();
    };
    for (unsigned char c : text) {
        if (is_word_char(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush_word();
            if (!std::isspace(c) && !runs.back().empty()) runs.emplace_back();
        }
    }
    flush_word();
    if (runs.back().empty()) runs.pop_back();
    return runs;
}

std::vector<std::string> candidate_phrases(std::string_view text, int max_n) {
    std::set<std::string> out;
    for (const auto& run : word_runs(text)) {
        // Split each punctuation run further at stopwords.
        std::vector<std::string> segment;
        auto emit = [&] {
            for (std::size_t i = 0; i < segment.size(); ++i) {
                std::string phrase;
                for (int n = 1; n <= max_n && i + n <= segment.size(); ++n) {
                    if (n > 1) phrase += ' ';
                    phrase += segment[i + n - 1];
                    out.insert(phrase);
                }
            }
            segment.clear();
        };
        for (const auto& w : run) {
            if (is_stopword(w) || std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); })) {
                emit();
            } else {
                segment.push_back(w);
            }
        }
        emit();
    }
    return {out.begin(), out.end()};
}

std::vector<int> mmr_select(const std::vector<std::string>& phrases, const std::vector<Embedding>& candidates,
                            const Embedding& query, double lambda, int m) {
    if (phrases.size() != candidates.size()) throw ShapeError("mmr_select: phrases and embeddings differ in count");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("mmr lambda must lie in [0, 1]");
    const int n    = static_cast<int>(candidates.size());
    const int want = std::min(std::max(m, 0), n);
    std::vector<double> relevance(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) relevance[static_cast<std::size_t>(i)] = cosine(candidates[static_cast<std::size_t>(i)], query);

    std::vector<int> selected;
    std::vector<bool> used(static_cast<std::size_t>(n), false);
    std::vector<double> max_sim(static_cast<std::size_t>(n), -1e300);
    auto better = [&](int i, double score, int best, double best_score) {
        if (best < 0) return true;
        if (score != best_score) return score > best_score;
        return phrases[static_cast<std::size_t>(i)] < phrases[static_cast<std::size_t>(best)];
    };
    while (static_cast<int>(selected.size()) < want) {
        int best          = -1;
        double best_score = 0.0;
        for (int i = 0; i < n; ++i) {
            if (used[static_cast<std::size_t>(i)]) continue;
            const double score = selected.empty()
                                     ? relevance[static_cast<std::size_t>(i)]
                                     : lambda * relevance[static_cast<std::size_t>(i)] -
                                           (1.0 - lambda) * max_sim[static_cast<std::size_t>(i)];
            if (better(i, score, best, best_score)) {
                best       = i;
                best_score = score;
            }
        }
        selected.push_back(best);
        used[static_cast<std::size_t>(best)] = true;
        for (int i = 0; i < n; ++i) {
            if (used[static_cast<std::size_t>(i)]) continue;
            max_sim[static_cast<std::size_t>(i)] =
                std::max(max_sim[static_cast<std::size_t>(i)],
                         cosine(candidates[static_cast<std::size_t>(i)], candidates[static_cast<std::size_t>(best)]));
        }
    }
    return selected;
}

std::vector<KeyPhrase> extract_keyphrases_mmr(std::string_view document, const TextEmbedder& embedder,
                                              const MmrOptions& options) {
    if (options.max_n < 1) throw ConfigError("max_n must be at least 1");
    const auto phrases = candidate_phrases(document, options.max_n);
    if (phrases.empty()) return {};
    const Embedding query = embedder.embed(document);
    std::vector<Embedding> embeddings;
    embeddings.reserve(phrases.size());
    for (const auto& p : phrases) embeddings.push_back(embedder.embed(p));
    std::vector<KeyPhrase> out;
    for (int idx : mmr_select(phrases, embeddings, query, options.lambda, options.m)) {
        out.push_back({phrases[static_cast<std::size_t>(idx)], cosine(embeddings[static_cast<std::size_t>(idx)], query)});
    }
    return out;
}

}  // namespace aerialgen::prompt
