#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace aerialgen::prompt {

using Embedding = std::vector<double>;

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    // Unit-norm vector of length dim(); deterministic.
    virtual Embedding embed(std::string_view text) const = 0;
    virtual int dim() const = 0;
};

// Signed feature hashing of lower-cased character trigrams (with boundary
// padding), L2-normalised. Empty input maps to the first basis vector.
class HashedTrigramEmbedder final : public TextEmbedder {
public:
    explicit HashedTrigramEmbedder(int dim = 64);
    Embedding embed(std::string_view text) const override;
    int dim() const override { return dim_; }

private:
    int dim_;
};

double cosine(const Embedding& a, const Embedding& b);

// Lower-cased word runs separated by punctuation; each run is a list of tokens.
std::vector<std::vector<std::string>> word_runs(std::string_view text);
bool is_stopword(std::string_view word);

// Distinct N-grams (1..max_n) inside stopword- and punctuation-free runs,
// sorted lexicographically.
std::vector<std::string> candidate_phrases(std::string_view text, int max_n = 3);

struct KeyPhrase {
    std::string phrase;
    double relevance = 0.0;
};

struct MmrOptions {
    double lambda = 0.3;
    int m         = 5;
    int max_n     = 3;
};

// Greedy MMR over precomputed embeddings. The first pick is the most relevant
// candidate; later picks maximise lambda*rel - (1-lambda)*max_sim_to_selected.
// Exact ties go to the lexicographically smaller phrase. Returns indices in
// selection order.
std::vector<int> mmr_select(const std::vector<std::string>& phrases, const std::vector<Embedding>& candidates,
                            const Embedding& query, double lambda, int m);

std::vector<KeyPhrase> extract_keyphrases_mmr(std::string_view document, const TextEmbedder& embedder,
                                              const MmrOptions& options = {});

}  // namespace aerialgen::prompt
