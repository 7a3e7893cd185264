#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "kedit/probe.hpp"

namespace kedit {

using nlohmann::json;

namespace {

const std::vector<std::pair<SetKind, const char*>> kKinds = {
    {SetKind::original_answer, "original_answer"}, {SetKind::target_answer, "target_answer"},
    {SetKind::related, "related"},                 {SetKind::factual_related, "factual_related"},
    {SetKind::stopwords, "stopwords"},             {SetKind::non_factual, "non_factual"},
    {SetKind::unrelated, "unrelated"},             {SetKind::full_vocab, "full_vocab"},
    {SetKind::custom, "custom"}};

const Dataset& need(const Dataset* g, SetKind k) {
    if (!g) throw std::invalid_argument("token set " + to_string(k) + " needs the dataset grammar");
    return *g;
}

std::set<int> factual(const Dataset& g, const FactRecord& r) {
    if (r.relation < 0 || r.relation >= static_cast<int>(g.relations.size()))
        throw std::invalid_argument(r.id + ": relation not in grammar");
    std::set<int> s(g.relations[r.relation].objects.begin(), g.relations[r.relation].objects.end());
    for (int t : r.answer) s.erase(t);
    return s;
}

std::set<int> non_factual(const Dataset& g, const FactRecord& r) {
    std::set<int> s(r.subject.begin(), r.subject.end());
    for (const auto& t : g.relations.at(r.relation).templates) s.insert(t.begin(), t.end());
    for (int f : g.fillers) s.erase(f);
    for (int t : r.answer) s.erase(t);
    return s;
}

}  // namespace

std::string to_string(SetKind k) {
    for (const auto& [kk, n] : kKinds)
        if (kk == k) return n;
    return "?";
}

SetKind parse_set_kind(const std::string& s) {
    for (const auto& [k, n] : kKinds)
        if (s == n) return k;
    throw std::invalid_argument("unknown token set: " + s);
}

std::string to_string(PositionKind p) { return p == PositionKind::subject_last ? "subject_last" : "prediction"; }

PositionKind parse_position(const std::string& s) {
    if (s == "subject_last") return PositionKind::subject_last;
    if (s == "prediction") return PositionKind::prediction;
    throw std::invalid_argument("unknown position: " + s);
}

TokenSet make_set(SetKind k, const Dataset* g, int vocab) {
    TokenSet s{to_string(k), k, {}};
    if (k == SetKind::full_vocab) {
        if (vocab < 1) throw std::invalid_argument("full_vocab needs the vocabulary size");
        for (int t = 0; t < vocab; ++t) s.tokens.push_back(t);
    } else if (k == SetKind::stopwords) {
        s.tokens = need(g, k).fillers;
        std::sort(s.tokens.begin(), s.tokens.end());
    }
    return s;
}

std::vector<int> resolve_set(const TokenSet& s, const FactRecord& r, const Dataset* g, int vocab) {
    std::set<int> out;
    switch (s.kind) {
        case SetKind::custom:
        case SetKind::full_vocab:
            out.insert(s.tokens.begin(), s.tokens.end());
            break;
        case SetKind::stopwords:
            if (!s.tokens.empty())
                out.insert(s.tokens.begin(), s.tokens.end());
            else
                out.insert(need(g, s.kind).fillers.begin(), g->fillers.end());
            break;
        case SetKind::original_answer:
            out.insert(r.answer[0]);
            break;
        case SetKind::target_answer:
            out.insert(r.target[0]);
            break;
        case SetKind::factual_related:
            out = factual(need(g, s.kind), r);
            break;
        case SetKind::non_factual:
            out = non_factual(need(g, s.kind), r);
            break;
        case SetKind::related: {
            const Dataset& gg = need(g, s.kind);
            out = factual(gg, r);
            const auto nf = non_factual(gg, r);
            out.insert(nf.begin(), nf.end());
            out.insert(gg.fillers.begin(), gg.fillers.end());
            for (int t : r.answer) out.erase(t);
            break;
        }
        case SetKind::unrelated: {
            const Dataset& gg = need(g, s.kind);
            std::set<int> ex = factual(gg, r);
            const auto nf = non_factual(gg, r);
            ex.insert(nf.begin(), nf.end());
            ex.insert(gg.fillers.begin(), gg.fillers.end());
            ex.insert(r.answer.begin(), r.answer.end());
            for (int t = 0; t < vocab; ++t)
                if (!ex.count(t)) out.insert(t);
            break;
        }
    }
    for (int t : out)
        if (t < 0 || t >= vocab) throw std::invalid_argument("token set " + s.name + ": id out of range");
    if (out.empty()) throw std::invalid_argument("token set " + s.name + " is empty for " + r.id);
    return {out.begin(), out.end()};
}

template <class T>
Vec<T> logit_lens(const Model<T>& m, const Vec<T>& h) {
    if (h.size() != m.cfg.d_model) throw std::invalid_argument("logit_lens: hidden has wrong length");
    if (!h.allFinite()) throw std::invalid_argument("logit_lens: non-finite hidden state");
    const Vec<T> x = layernorm<T>(h, m.final_scale, m.final_shift, m.cfg.ln_eps);
    return softmax<T>(m.lm_head * x);
}

template <class T>
int token_rank(const Vec<T>& dist, int token) {
    if (token < 0 || token >= dist.size()) throw std::invalid_argument("token_rank: token out of range");
    const T p = dist[token];
    int r = 0;
    for (Eigen::Index i = 0; i < dist.size(); ++i) r += dist[i] > p;
    return r;
}

std::string ProbeReport::to_csv() const {
    std::ostringstream o;
    o.precision(17);
    o << "layer,position,pos_index,set,mean_prob,mean_rank,n\n";
    for (const auto& r : rows)
        o << r.layer << ',' << to_string(r.position) << ',' << r.pos_index << ',' << r.set << ',' << r.mean_prob
          << ',' << r.mean_rank << ',' << r.n << '\n';
    return o.str();
}

template <class T>
ProbeReport trace_flow(const Model<T>& m, const std::vector<FactRecord>& prompts, const std::vector<TokenSet>& sets,
                       const std::vector<PositionKind>& positions, const Dataset* g) {
    if (prompts.empty()) throw std::invalid_argument("trace_flow: empty prompt list");
    if (sets.empty() || positions.empty()) throw std::invalid_argument("trace_flow: no sets or positions");
    const int D = m.cfg.n_layers, V = m.cfg.vocab_size;
    const std::size_t NP = positions.size(), NS = sets.size(), N = prompts.size();
    const std::size_t cells = static_cast<std::size_t>(D + 1) * NP * NS;

    std::vector<std::vector<std::vector<int>>> members(N, std::vector<std::vector<int>>(NS));
    std::vector<std::vector<int>> pidx(N, std::vector<int>(NP));
    for (std::size_t i = 0; i < N; ++i) {
        const auto& r = prompts[i];
        for (std::size_t s = 0; s < NS; ++s) members[i][s] = resolve_set(sets[s], r, g, V);
        for (std::size_t p = 0; p < NP; ++p) {
            const int idx = positions[p] == PositionKind::subject_last ? r.prompt.subject_last() : r.prompt.prediction();
            if (idx < 0 || idx >= static_cast<int>(r.prompt.tokens.size()))
                throw std::invalid_argument("trace_flow: position not resolvable for " + r.id);
            pidx[i][p] = idx;
        }
    }

    std::vector<std::vector<double>> prob(N, std::vector<double>(cells)), rank(N, std::vector<double>(cells));
    std::vector<std::string> err(N);
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < N; ++i) {
        try {
            const auto fr = forward(m, prompts[i].prompt.tokens, true);
            for (int l = 0; l <= D; ++l)
                for (std::size_t p = 0; p < NP; ++p) {
                    const Vec<T> dist = logit_lens<T>(m, fr.trace->states[l].row(pidx[i][p]).transpose());
                    for (std::size_t s = 0; s < NS; ++s) {
                        double ps = 0;
                        int best = V;
                        for (int t : members[i][s]) {
                            ps += static_cast<double>(dist[t]);
                            best = std::min(best, token_rank<T>(dist, t));
                        }
                        const std::size_t c = (static_cast<std::size_t>(l) * NP + p) * NS + s;
                        prob[i][c] = ps;
                        rank[i][c] = best;
                    }
                }
        } catch (const std::exception& e) {
            err[i] = e.what();
        }
    }
    for (const auto& e : err)
        if (!e.empty()) throw std::invalid_argument(e);

    ProbeReport rep;
    rep.n_layers = D;
    rep.vocab_size = V;
    for (int l = 0; l <= D; ++l)
        for (std::size_t p = 0; p < NP; ++p) {
            int same = pidx[0][p];
            for (std::size_t i = 1; i < N; ++i)
                if (pidx[i][p] != same) same = -1;
            for (std::size_t s = 0; s < NS; ++s) {
                const std::size_t c = (static_cast<std::size_t>(l) * NP + p) * NS + s;
                double sp = 0, sr = 0;
                for (std::size_t i = 0; i < N; ++i) {
                    sp += prob[i][c];
                    sr += rank[i][c];
                }
                rep.rows.push_back({l, positions[p], same, sets[s].name, sp / N, sr / N, static_cast<int>(N)});
            }
        }
    return rep;
}

namespace {

struct Grid {
    std::vector<std::pair<int, PositionKind>> keys;
    std::vector<std::vector<const ProbeRow*>> rows;  // per key, in set order
};

Grid grid_of(const ProbeReport& r) {
    Grid g;
    for (const auto& row : r.rows) {
        const auto key = std::make_pair(row.layer, row.position);
        if (g.keys.empty() || g.keys.back() != key) {
            g.keys.push_back(key);
            g.rows.emplace_back();
        }
        g.rows.back().push_back(&row);
    }
    return g;
}

// Steps lo..hi; improvement of a and b at each step from `gain`.
template <class F>
Span detect(int lo, int hi, double thr, F gain) {
    Span best;
    double best_total = -1;
    int run_begin = -1;
    double run_total = 0;
    for (int l = lo; l <= hi + 1; ++l) {
        bool ok = false;
        double ga = 0;
        if (l <= hi) {
            const auto [a, b] = gain(l);
            ga = a;
            ok = a >= thr && b < thr;
        }
        if (ok) {
            if (run_begin < 0) {
                run_begin = l;
                run_total = 0;
            }
            run_total += ga;
        } else if (run_begin >= 0) {
            if (run_total > best_total) {
                best_total = run_total;
                best = {run_begin, l - 1};
            }
            run_begin = -1;
        }
    }
    return best;
}

}  // namespace

ContrastReport contrast(const ProbeReport& a, const ProbeReport& b, double threshold) {
    const Grid ga = grid_of(a), gb = grid_of(b);
    if (a.n_layers != b.n_layers || ga.keys != gb.keys)
        throw std::invalid_argument("contrast: reports cover different layer/position grids");
    ContrastReport out;
    out.threshold = threshold;
    for (std::size_t k = 0; k < ga.keys.size(); ++k) {
        if (ga.rows[k].size() != gb.rows[k].size())
            throw std::invalid_argument("contrast: reports carry different set counts");
        for (std::size_t s = 0; s < ga.rows[k].size(); ++s) {
            const ProbeRow& ra = *ga.rows[k][s];
            const ProbeRow& rb = *gb.rows[k][s];
            out.deltas.push_back(
                {ra.layer, ra.position, ra.set, rb.set, ra.mean_prob - rb.mean_prob, ra.mean_rank - rb.mean_rank});
        }
    }
    const int D = a.n_layers;
    auto first = [](const Grid& g, int layer, PositionKind p) -> const ProbeRow* {
        for (std::size_t k = 0; k < g.keys.size(); ++k)
            if (g.keys[k] == std::make_pair(layer, p)) return g.rows[k].front();
        return nullptr;
    };
    auto has = [&](PositionKind p) {
        for (int l = 0; l <= D; ++l)
            if (!first(ga, l, p)) return false;
        return true;
    };
    if (has(PositionKind::subject_last)) {
        const double thr = threshold * a.vocab_size;
        out.enrichment = detect(1, D / 2, thr, [&](int l) {
            const auto p = PositionKind::subject_last;
            return std::make_pair(first(ga, l - 1, p)->mean_rank - first(ga, l, p)->mean_rank,
                                  first(gb, l - 1, p)->mean_rank - first(gb, l, p)->mean_rank);
        });
    }
    if (has(PositionKind::prediction)) {
        out.promotion = detect(D / 2 + 1, D, threshold, [&](int l) {
            const auto p = PositionKind::prediction;
            return std::make_pair(first(ga, l, p)->mean_prob - first(ga, l - 1, p)->mean_prob,
                                  first(gb, l, p)->mean_prob - first(gb, l - 1, p)->mean_prob);
        });
    }
    return out;
}

json ContrastReport::to_json() const {
    json d = json::array();
    for (const auto& r : deltas)
        d.push_back({{"layer", r.layer},
                     {"position", to_string(r.position)},
                     {"set_a", r.set_a},
                     {"set_b", r.set_b},
                     {"d_prob", r.d_prob},
                     {"d_rank", r.d_rank}});
    auto span = [](const Span& s) {
        return s.empty() ? json{{"empty", true}} : json{{"empty", false}, {"begin", s.begin}, {"end", s.end}};
    };
    return json{{"deltas", d},
                {"enrichment_span", span(enrichment)},
                {"promotion_span", span(promotion)},
                {"detection_threshold", threshold}};
}

#define KEDIT_PROBE(T)                                                                                     \
    template Vec<T> logit_lens<T>(const Model<T>&, const Vec<T>&);                                         \
    template int token_rank<T>(const Vec<T>&, int);                                                        \
    template ProbeReport trace_flow<T>(const Model<T>&, const std::vector<FactRecord>&,                    \
                                       const std::vector<TokenSet>&, const std::vector<PositionKind>&,     \
                                       const Dataset*);

KEDIT_PROBE(float)
KEDIT_PROBE(double)

}  // namespace kedit
