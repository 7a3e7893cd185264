#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "kedit/eval.hpp"

namespace kedit {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset gen_synthetic_facts(std::uint64_t seed, const SyntheticOptions& o, int vocab) {
    if (o.n_facts < 1 || o.n_relations < 1 || o.pool_size < 2 || o.n_fillers < 1)
        throw std::invalid_argument("gen_synthetic_facts: counts must be positive");
    if (o.n_neighbors < 2) throw std::invalid_argument("gen_synthetic_facts: at least two neighbors required");
    if (o.background_min < 1 || o.background_max < o.background_min)
        throw std::invalid_argument("gen_synthetic_facts: bad background lengths");
    const int per_rel = o.n_facts / o.n_relations;
    if (per_rel < o.n_neighbors + 1)
        throw std::invalid_argument("gen_synthetic_facts: too few facts per relation for the neighbor count");
    if (o.pool_size < o.n_neighbors + 2)
        throw std::invalid_argument("gen_synthetic_facts: object pool too small to pick distinct targets");

    std::mt19937_64 rng(seed);
    auto uniform = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    std::bernoulli_distribution two(o.two_token_subjects);

    int next = 0;
    auto fresh = [&] {
        if (next >= vocab) throw std::invalid_argument("gen_synthetic_facts: vocabulary exhausted");
        return next++;
    };

    Dataset d;
    d.vocab_size = vocab;
    for (int i = 0; i < o.n_fillers; ++i) d.fillers.push_back(fresh());
    const auto& f = d.fillers;
    const int nf = o.n_fillers;
    for (int r = 0; r < o.n_relations; ++r) {
        const int w0 = fresh(), w1 = fresh(), w2 = fresh();
        Relation rel;
        rel.templates = {{w0, w1}, {f[r % nf], w2, w0}, {w1, f[(r + 3) % nf], w2}};
        for (int k = 0; k < o.pool_size; ++k) rel.objects.push_back(fresh());
        d.relations.push_back(std::move(rel));
    }
    for (int i = 0; i < o.n_facts; ++i) {
        FactRecord rec;
        rec.id = "f" + std::to_string(i);
        rec.relation = i % o.n_relations;
        rec.subject.push_back(fresh());
        if (two(rng)) rec.subject.push_back(fresh());
        const auto& objs = d.relations[rec.relation].objects;
        rec.answer = {objs[uniform(objs.size())]};
        d.records.push_back(std::move(rec));
    }
    auto make_prompt = [](const TokenSeq& subj, const TokenSeq& tmpl) {
        Prompt p;
        p.tokens = subj;
        p.tokens.insert(p.tokens.end(), tmpl.begin(), tmpl.end());
        p.subject_begin = 0;
        p.subject_end = static_cast<int>(subj.size());
        return p;
    };
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        FactRecord& rec = d.records[i];
        const Relation& rel = d.relations[rec.relation];
        rec.prompt = make_prompt(rec.subject, rel.templates[0]);
        for (std::size_t t = 1; t < rel.templates.size(); ++t)
            rec.paraphrases.push_back(make_prompt(rec.subject, rel.templates[t]));
        std::vector<std::size_t> others;
        for (std::size_t j = 0; j < d.records.size(); ++j)
            if (j != i && d.records[j].relation == rec.relation) others.push_back(j);
        std::shuffle(others.begin(), others.end(), rng);
        std::set<int> used(rec.answer.begin(), rec.answer.end());
        for (int k = 0; k < o.n_neighbors; ++k) {
            const FactRecord& g = d.records[others[k]];
            rec.neighbors.push_back({make_prompt(g.subject, rel.templates[0]), g.answer});
            used.insert(g.answer[0]);
        }
        std::vector<int> cand;
        for (int ob : rel.objects)
            if (!used.count(ob)) cand.push_back(ob);
        rec.target = {cand[uniform(cand.size())]};
    }
    for (const auto& rec : d.records)
        for (const auto& t : d.relations[rec.relation].templates) {
            TokenSeq s = rec.subject;
            s.insert(s.end(), t.begin(), t.end());
            s.insert(s.end(), rec.answer.begin(), rec.answer.end());
            d.statements.push_back(std::move(s));
        }
    const auto subj = d.subject_tokens();
    std::vector<int> bg;
    for (int t = 0; t < vocab; ++t)
        if (!std::binary_search(subj.begin(), subj.end(), t)) bg.push_back(t);
    std::uniform_int_distribution<int> len(o.background_min, o.background_max);
    for (int i = 0; i < o.n_background; ++i) {
        TokenSeq s(static_cast<std::size_t>(len(rng)));
        for (int& t : s) t = bg[uniform(bg.size())];
        d.background.push_back(std::move(s));
    }
    for (const auto& r : d.records) r.validate(vocab);
    return d;
}

namespace {

json prompt_json(const Prompt& p) {
    return json{{"tokens", p.tokens}, {"subject_span", {p.subject_begin, p.subject_end}}};
}

Prompt prompt_from(const json& j) {
    Prompt p;
    p.tokens = j.at("tokens").get<TokenSeq>();
    const auto sp = j.at("subject_span").get<std::vector<int>>();
    if (sp.size() != 2) throw std::invalid_argument("subject_span must have two entries");
    p.subject_begin = sp[0];
    p.subject_end = sp[1];
    return p;
}

}  // namespace

json record_to_json(const FactRecord& r) {
    json reph = json::array(), neigh = json::array();
    for (const auto& p : r.paraphrases) reph.push_back(prompt_json(p));
    for (const auto& n : r.neighbors) {
        json nj = prompt_json(n.prompt);
        nj["answer"] = n.answer;
        neigh.push_back(nj);
    }
    return json{{"id", r.id},
                {"relation", r.relation},
                {"subject", r.subject},
                {"src", r.prompt.tokens},
                {"subject_span", {r.prompt.subject_begin, r.prompt.subject_end}},
                {"answers", r.answer},
                {"alt", r.target},
                {"rephrase", reph},
                {"neighborhood", neigh}};
}

FactRecord record_from_json(const json& j) {
    FactRecord r;
    r.id = j.at("id").get<std::string>();
    r.relation = j.value("relation", 0);
    r.subject = j.at("subject").get<TokenSeq>();
    r.prompt = prompt_from(json{{"tokens", j.at("src")}, {"subject_span", j.at("subject_span")}});
    r.answer = j.at("answers").get<TokenSeq>();
    r.target = j.at("alt").get<TokenSeq>();
    for (const auto& p : j.at("rephrase")) r.paraphrases.push_back(prompt_from(p));
    for (const auto& n : j.at("neighborhood")) r.neighbors.push_back({prompt_from(n), n.at("answer").get<TokenSeq>()});
    return r;
}

fs::path grammar_path(const fs::path& jsonl) {
    return jsonl.parent_path() / (jsonl.stem().string() + ".grammar.json");
}

void save_dataset(const Dataset& d, const fs::path& jsonl) {
    {
        std::ofstream f(jsonl, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + jsonl.string());
        for (const auto& r : d.records) f << record_to_json(r).dump() << '\n';
        if (!f) throw std::runtime_error("write failed: " + jsonl.string());
    }
    json rels = json::array();
    for (const auto& r : d.relations) rels.push_back({{"templates", r.templates}, {"objects", r.objects}});
    const json g{{"vocab_size", d.vocab_size},
                 {"fillers", d.fillers},
                 {"relations", rels},
                 {"statements", d.statements},
                 {"background", d.background}};
    const fs::path gp = grammar_path(jsonl);
    std::ofstream f(gp, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + gp.string());
    f << g.dump() << '\n';
}

Dataset load_dataset(const fs::path& jsonl) {
    std::ifstream f(jsonl);
    if (!f) throw std::runtime_error("cannot read dataset " + jsonl.string());
    Dataset d;
    std::string line;
    int ln = 0;
    while (std::getline(f, line)) {
        ++ln;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            d.records.push_back(record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(jsonl.string() + ":" + std::to_string(ln) + ": " + e.what());
        }
    }
    if (d.records.empty()) throw std::runtime_error("dataset " + jsonl.string() + " has no records");
    const fs::path gp = grammar_path(jsonl);
    if (fs::exists(gp)) {
        std::ifstream gf(gp);
        const json g = json::parse(gf);
        d.vocab_size = g.at("vocab_size").get<int>();
        d.fillers = g.at("fillers").get<std::vector<int>>();
        for (const auto& r : g.at("relations"))
            d.relations.push_back({r.at("templates").get<std::vector<TokenSeq>>(), r.at("objects").get<std::vector<int>>()});
        d.statements = g.at("statements").get<std::vector<TokenSeq>>();
        d.background = g.at("background").get<std::vector<TokenSeq>>();
    } else {
        for (const auto& r : d.records) {
            TokenSeq s = r.prompt.tokens;
            s.insert(s.end(), r.answer.begin(), r.answer.end());
            d.statements.push_back(std::move(s));
        }
    }
    return d;
}

EditCorpus edit_corpus(const Dataset& d) {
    EditCorpus c;
    c.stats = d.statements;
    c.stats.insert(c.stats.end(), d.background.begin(), d.background.end());
    c.prefix_source = d.background.empty() ? d.statements : d.background;
    return c;
}

}  // namespace kedit
