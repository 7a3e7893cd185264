#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kedit/facts.hpp"
#include "kedit/model.hpp"

namespace kedit {

enum class SetKind {
    original_answer,
    target_answer,
    related,
    factual_related,
    stopwords,
    non_factual,
    unrelated,
    full_vocab,
    custom
};

std::string to_string(SetKind k);
SetKind parse_set_kind(const std::string& s);

// Fixed kinds (custom, full_vocab, stopwords) carry their tokens. The other
// kinds are resolved per record, with grammar-derived kinds needing the
// dataset:
//   factual_related  objects of the record's relation except its answer
//   stopwords        relation filler tokens
//   non_factual      subject and relation words
//   related          union of the three above
//   unrelated        everything else except the answer
struct TokenSet {
    std::string name;
    SetKind kind = SetKind::custom;
    std::vector<int> tokens;
};

TokenSet make_set(SetKind k, const Dataset* grammar = nullptr, int vocab_size = 0);

// Sorted member tokens for one record; throws std::invalid_argument if empty.
std::vector<int> resolve_set(const TokenSet& s, const FactRecord& r, const Dataset* grammar, int vocab_size);

enum class PositionKind { subject_last, prediction };
std::string to_string(PositionKind p);
PositionKind parse_position(const std::string& s);

struct ProbeRow {
    int layer = 0;
    PositionKind position = PositionKind::prediction;
    int pos_index = -1;  // absolute index when every prompt agrees, else -1
    std::string set;
    double mean_prob = 0;
    double mean_rank = 0;
    int n = 0;
};

struct ProbeReport {
    int n_layers = 0;
    int vocab_size = 0;
    std::vector<ProbeRow> rows;  // ordered by layer, position, set

    std::string to_csv() const;
};

// softmax(W_lm final_ln(hidden)).
template <class T>
Vec<T> logit_lens(const Model<T>& m, const Vec<T>& hidden);

// Number of entries strictly greater than dist[token].
template <class T>
int token_rank(const Vec<T>& dist, int token);

template <class T>
ProbeReport trace_flow(const Model<T>& m, const std::vector<FactRecord>& prompts, const std::vector<TokenSet>& sets,
                       const std::vector<PositionKind>& positions, const Dataset* grammar = nullptr);

struct Span {
    int begin = -1, end = -1;  // inclusive layer interval
    bool empty() const { return begin < 0; }
    bool contains(int l) const { return !empty() && begin <= l && l <= end; }
};

struct ContrastRow {
    int layer = 0;
    PositionKind position = PositionKind::prediction;
    std::string set_a, set_b;
    double d_prob = 0, d_rank = 0;
};

struct ContrastReport {
    std::vector<ContrastRow> deltas;
    Span enrichment, promotion;
    double threshold = 0.05;

    nlohmann::json to_json() const;
};

// deltas = a - b row by row (i-th set of a against i-th set of b). Spans use
// the first set pair. A step l (layer l-1 to l) qualifies when a improves by
// at least the threshold and b does not: rank drop of threshold * vocab at the
// subject-last position for steps 1..D/2, probability gain of threshold at
// the prediction position for steps D/2+1..D. Each span is the qualifying run
// with the largest total improvement of a.
ContrastReport contrast(const ProbeReport& a, const ProbeReport& b, double threshold = 0.05);

}  // namespace kedit
