#include <cmath>
#include <sstream>

#include "kedit/eval.hpp"

namespace kedit {

using nlohmann::json;

std::string to_string(MetricMode m) {
    return m == MetricMode::token_accuracy ? "token_accuracy" : "probability_comparison";
}

double score(double es, double gs, double ls) {
    for (double x : {es, gs, ls})
        if (!(x >= 0 && x <= 1)) throw std::invalid_argument("score: inputs must lie in [0,1]");
    if (es == 0 || gs == 0 || ls == 0) return 0;
    return 3.0 / (1.0 / es + 1.0 / gs + 1.0 / ls);
}

template <class T>
double answer_logprob(const Model<T>& m, const TokenSeq& prompt, const TokenSeq& answer) {
    if (answer.empty()) throw std::invalid_argument("answer_logprob: empty answer");
    TokenSeq toks = prompt;
    toks.insert(toks.end(), answer.begin(), answer.end() - 1);
    const auto r = forward(m, toks);
    double lp = 0;
    const int p0 = static_cast<int>(prompt.size()) - 1;
    for (std::size_t t = 0; t < answer.size(); ++t) {
        const Vec<T> ls = log_softmax<T>(r.logits.row(p0 + static_cast<int>(t)).transpose());
        lp += static_cast<double>(ls[answer[t]]);
    }
    return lp;
}

namespace {

// Fraction of answer tokens that are the teacher-forced argmax.
template <class T>
double token_hits(const Model<T>& m, const TokenSeq& prompt, const TokenSeq& answer) {
    TokenSeq toks = prompt;
    toks.insert(toks.end(), answer.begin(), answer.end() - 1);
    const auto r = forward(m, toks);
    const int p0 = static_cast<int>(prompt.size()) - 1;
    int hit = 0;
    for (std::size_t t = 0; t < answer.size(); ++t)
        hit += argmax<T>(r.logits.row(p0 + static_cast<int>(t)).transpose()) == answer[t];
    return static_cast<double>(hit) / static_cast<double>(answer.size());
}

struct Tally {
    double es = 0, gs = 0, ls = 0;
    int ngs = 0, nls = 0;
};

template <class F>
Metrics aggregate(const std::vector<FactRecord>& records, MetricMode mode, F per_record) {
    if (records.empty()) throw std::invalid_argument("evaluation on an empty dataset");
    std::vector<Tally> t(records.size());
    std::vector<std::string> err(records.size());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < records.size(); ++i) {
        try {
            t[i] = per_record(records[i]);
        } catch (const std::exception& e) {
            err[i] = e.what();
        }
    }
    for (const auto& e : err)
        if (!e.empty()) throw std::invalid_argument(e);
    Metrics out;
    out.mode = mode;
    double es = 0, gs = 0, ls = 0;
    int ng = 0, nl = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        es += t[i].es;
        gs += t[i].gs;
        ls += t[i].ls;
        ng += t[i].ngs;
        nl += t[i].nls;
        out.records.push_back({records[i].id, t[i].es, t[i].ngs ? t[i].gs / t[i].ngs : 0.0,
                               t[i].nls ? t[i].ls / t[i].nls : 0.0});
    }
    out.es = es / static_cast<double>(records.size());
    out.gs = ng ? gs / ng : 0.0;
    out.ls = nl ? ls / nl : 0.0;
    out.score = score(out.es, out.gs, out.ls);
    return out;
}

}  // namespace

template <class T>
Metrics eval_token_accuracy(const Model<T>& m, const std::vector<FactRecord>& records, AnswerField field) {
    return aggregate(records, MetricMode::token_accuracy, [&](const FactRecord& r) {
        const TokenSeq& ans = field == AnswerField::target ? r.target : r.answer;
        if (ans.empty()) throw std::invalid_argument(r.id + ": missing answer field");
        Tally t;
        t.es = token_hits(m, r.prompt.tokens, ans);
        for (const auto& p : r.paraphrases) {
            t.gs += token_hits(m, p.tokens, ans);
            ++t.ngs;
        }
        for (const auto& n : r.neighbors) {
            t.ls += token_hits(m, n.prompt.tokens, n.answer);
            ++t.nls;
        }
        return t;
    });
}

template <class T>
Metrics eval_probability_comparison(const Model<T>& m, const std::vector<FactRecord>& records) {
    return aggregate(records, MetricMode::probability_comparison, [&](const FactRecord& r) {
        if (r.target.empty()) throw std::invalid_argument(r.id + ": missing target answer");
        Tally t;
        auto better = [&](const TokenSeq& prompt, const TokenSeq& a, const TokenSeq& b) {
            return answer_logprob(m, prompt, a) > answer_logprob(m, prompt, b) ? 1.0 : 0.0;
        };
        t.es = better(r.prompt.tokens, r.target, r.answer);
        for (const auto& p : r.paraphrases) {
            t.gs += better(p.tokens, r.target, r.answer);
            ++t.ngs;
        }
        for (const auto& n : r.neighbors) {
            t.ls += better(n.prompt.tokens, n.answer, r.target);
            ++t.nls;
        }
        return t;
    });
}

template <class T>
double recall(const Model<T>& m, const std::vector<FactRecord>& records) {
    if (records.empty()) throw std::invalid_argument("recall on an empty dataset");
    int ok = 0;
    for (const auto& r : records) {
        TokenSeq toks = r.prompt.tokens;
        bool good = true;
        for (int a : r.answer) {
            const auto f = forward(m, toks);
            const int next = argmax<T>(f.logits.row(f.logits.rows() - 1).transpose());
            if (next != a) {
                good = false;
                break;
            }
            toks.push_back(next);
        }
        ok += good;
    }
    return static_cast<double>(ok) / static_cast<double>(records.size());
}

json to_json(const Metrics& m) {
    json recs = json::array();
    for (const auto& r : m.records) recs.push_back({{"id", r.id}, {"es", r.es}, {"gs", r.gs}, {"ls", r.ls}});
    return json{{"mode", to_string(m.mode)}, {"es", m.es},     {"gs", m.gs},
                {"ls", m.ls},                {"score", m.score}, {"records", recs}};
}

std::string metrics_csv(const Metrics& m) {
    std::ostringstream o;
    o.precision(17);
    o << "id,es,gs,ls\n";
    for (const auto& r : m.records) o << r.id << ',' << r.es << ',' << r.gs << ',' << r.ls << '\n';
    return o.str();
}

template <class T>
std::vector<SweepRow> sweep_clamp(const Model<T>& m, const std::vector<FactRecord>& records, const EditCorpus& corpus,
                                  const JeepConfig& cfg, const std::vector<double>& gammas, ClampTarget target) {
    if (gammas.empty()) throw std::invalid_argument("sweep_clamp: no clamp values");
    for (double g : gammas)
        if (!(g > 0)) throw std::invalid_argument("sweep_clamp: clamp values must be > 0");
    std::vector<EditRequest> reqs;
    for (const auto& r : records) reqs.push_back(make_request(r));
    std::vector<SweepRow> rows;
    for (double g : gammas) {
        JeepConfig c = cfg;
        (target == ClampTarget::low ? c.gamma_low : c.gamma_high) = g;
        const auto res = run_variant(m, reqs, corpus, c);
        rows.push_back({g, eval_probability_comparison(res.model, records)});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream o;
    o.precision(17);
    o << "gamma,es,gs,ls,score\n";
    for (const auto& r : rows)
        o << r.gamma << ',' << r.metrics.es << ',' << r.metrics.gs << ',' << r.metrics.ls << ',' << r.metrics.score
          << '\n';
    return o.str();
}

#define KEDIT_EVAL(T)                                                                                         \
    template double answer_logprob<T>(const Model<T>&, const TokenSeq&, const TokenSeq&);                     \
    template Metrics eval_token_accuracy<T>(const Model<T>&, const std::vector<FactRecord>&, AnswerField);    \
    template Metrics eval_probability_comparison<T>(const Model<T>&, const std::vector<FactRecord>&);         \
    template double recall<T>(const Model<T>&, const std::vector<FactRecord>&);                               \
    template std::vector<SweepRow> sweep_clamp<T>(const Model<T>&, const std::vector<FactRecord>&,            \
                                                  const EditCorpus&, const JeepConfig&, const std::vector<double>&, \
                                                  ClampTarget);

KEDIT_EVAL(float)
KEDIT_EVAL(double)

}  // namespace kedit
