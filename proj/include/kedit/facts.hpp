#pragma once

#include <string>
#include <vector>

#include "kedit/model.hpp"

namespace kedit {

// A prompt with the index range of its subject tokens, [begin, end).
struct Prompt {
    TokenSeq tokens;
    int subject_begin = 0;
    int subject_end = 0;

    int subject_last() const { return subject_end - 1; }
    int prediction() const { return static_cast<int>(tokens.size()) - 1; }
};

struct Neighbor {
    Prompt prompt;
    TokenSeq answer;
};

struct FactRecord {
    std::string id;
    int relation = 0;
    TokenSeq subject;
    Prompt prompt;                  // base prompt x
    TokenSeq answer;                // original answer y
    TokenSeq target;                // counterfactual answer y'
    std::vector<Prompt> paraphrases;
    std::vector<Neighbor> neighbors;

    // Throws std::invalid_argument on a broken invariant.
    void validate(int vocab_size) const;
};

struct Relation {
    std::vector<TokenSeq> templates;  // token sequence following the subject
    std::vector<int> objects;
};

struct Dataset {
    std::vector<FactRecord> records;
    std::vector<Relation> relations;
    std::vector<int> fillers;            // relation filler tokens
    std::vector<TokenSeq> statements;    // each fact in every template, followed by its object
    std::vector<TokenSeq> background;    // random text without subject tokens
    int vocab_size = 0;

    // Tokens that occur in relation templates.
    std::vector<int> structure_tokens() const;
    std::vector<int> subject_tokens() const;
};

}  // namespace kedit
