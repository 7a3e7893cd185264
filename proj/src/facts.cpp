#include <algorithm>
#include <set>
#include <stdexcept>

#include "kedit/facts.hpp"

namespace kedit {

namespace {
void check_prompt(const Prompt& p, int vocab, const std::string& what) {
    if (p.tokens.empty()) throw std::invalid_argument(what + ": empty prompt");
    if (p.subject_begin < 0 || p.subject_end <= p.subject_begin ||
        p.subject_end > static_cast<int>(p.tokens.size()))
        throw std::invalid_argument(what + ": subject span inconsistent with tokens");
    for (int t : p.tokens)
        if (t < 0 || t >= vocab) throw std::invalid_argument(what + ": token id out of range");
}
}  // namespace

void FactRecord::validate(int vocab) const {
    check_prompt(prompt, vocab, id);
    if (answer.empty() || target.empty()) throw std::invalid_argument(id + ": empty answer");
    if (paraphrases.empty()) throw std::invalid_argument(id + ": no paraphrases");
    if (neighbors.empty()) throw std::invalid_argument(id + ": no neighbors");
    for (const auto& p : paraphrases) check_prompt(p, vocab, id + " paraphrase");
    for (const auto& n : neighbors) {
        check_prompt(n.prompt, vocab, id + " neighbor");
        TokenSeq ns(n.prompt.tokens.begin() + n.prompt.subject_begin,
                    n.prompt.tokens.begin() + n.prompt.subject_end);
        if (ns == subject) throw std::invalid_argument(id + ": neighbor shares the subject");
        if (n.answer.empty()) throw std::invalid_argument(id + ": neighbor without answer");
    }
}

std::vector<int> Dataset::structure_tokens() const {
    std::set<int> s;
    for (const auto& r : relations)
        for (const auto& t : r.templates) s.insert(t.begin(), t.end());
    return {s.begin(), s.end()};
}

std::vector<int> Dataset::subject_tokens() const {
    std::set<int> s;
    for (const auto& r : records) s.insert(r.subject.begin(), r.subject.end());
    return {s.begin(), s.end()};
}

}  // namespace kedit
