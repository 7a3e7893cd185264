// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any hard
// criterion fails.
#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <set>
#include <string>

#include "kedit/editor.hpp"
#include "kedit/eval.hpp"
#include "kedit/model_io.hpp"
#include "kedit/plant.hpp"
#include "kedit/probe.hpp"

using namespace kedit;
using MatD = Mat<double>;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail, bool soft = false) {
    const char* tag = pass ? "PASS" : (soft ? "SOFT-FAIL" : "FAIL");
    std::printf("[%s] criterion %d: %s | %s\n", tag, id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass && !soft) ++failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

MatD randn(std::mt19937_64& rng, int r, int c) {
    std::normal_distribution<double> g;
    MatD m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

// Gauss-Jordan elimination with partial pivoting.
MatD dense_solve(MatD A, MatD B) {
    const Eigen::Index n = A.rows();
    for (Eigen::Index c = 0; c < n; ++c) {
        Eigen::Index piv = c;
        for (Eigen::Index r = c + 1; r < n; ++r)
            if (std::abs(A(r, c)) > std::abs(A(piv, c))) piv = r;
        A.row(c).swap(A.row(piv));
        B.row(c).swap(B.row(piv));
        const double d = A(c, c);
        A.row(c) /= d;
        B.row(c) /= d;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (r == c) continue;
            const double f = A(r, c);
            A.row(r) -= f * A.row(c);
            B.row(r) -= f * B.row(c);
        }
    }
    return B;
}

struct Planted {
    Dataset data;
    Model<double> model;
};

Planted plant(std::uint64_t seed) {
    ModelConfig cfg;
    Planted p{gen_synthetic_facts(seed, {}, cfg.vocab_size), init_random<double>(cfg, seed)};
    std::vector<PlantSpec> specs;
    for (const auto& r : p.data.records) specs.push_back({&r, 2, 6, 1.0});
    PlantOptions po;
    po.structure_tokens = p.data.structure_tokens();
    p.model = plant_facts(p.model, specs, po);
    return p;
}

std::vector<EditRequest> requests(const std::vector<FactRecord>& recs) {
    std::vector<EditRequest> out;
    for (const auto& r : recs) out.push_back(make_request(r));
    return out;
}

void criterion1() {
    const double a = score(0.984, 0.915, 0.269), b = score(0.998, 0.909, 0.731);
    report(1, std::abs(a - 0.515) <= 0.001 && std::abs(b - 0.865) <= 0.001, "score arithmetic",
           fmt("score(0.984,0.915,0.269)=%.4f want 0.515+-0.001; score(0.998,0.909,0.731)=%.4f want 0.865+-0.001",
               a, b));
}

void criterion2() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 16), edits(1, 8);
    double worst = 0, worst_interp = 0;
    for (int t = 0; t < 100; ++t) {
        const int kd = dim(rng), d = dim(rng), m = edits(rng);
        const MatD K = randn(rng, kd, m), R = randn(rng, d, m), M = randn(rng, kd, kd + 2);
        const MatD C0 = M * M.transpose();
        const MatD D = closed_form_update(K, R, C0);
        const MatD oracle = dense_solve(C0 + K * K.transpose(), K * R.transpose()).transpose();
        worst = std::max(worst, (D - oracle).norm() / oracle.norm());
    }
    for (int t = 0; t < 100; ++t) {
        const int kd = dim(rng), d = dim(rng), m = std::min(kd, edits(rng));
        const MatD K = randn(rng, kd, m), R = randn(rng, d, m);
        const MatD D = closed_form_update(K, R, MatD::Zero(kd, kd));
        worst_interp = std::max(worst_interp, (D * K - R).norm() / R.norm());
    }
    report(2, worst <= 1e-8 && worst_interp <= 1e-8, "closed-form oracle",
           fmt("max rel err vs dense solve %.2e (tol 1e-8, 100 instances); C0=0 max |DK-R|/|R| %.2e (tol 1e-8)", worst,
               worst_interp));
}

void criterion3() {
    ModelConfig c;
    c.n_layers = 4;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_mlp = 32;
    c.vocab_size = 40;
    c.max_seq_len = 24;
    InitSpec s;
    s.attn_out_std = s.mlp_out_std = 0.3;
    s.lm_std = 1.0;
    s.residual_scale = 1.0;
    const auto m = init_random<double>(c, 31, s);
    JeepConfig cfg;
    cfg.low_first = 1;
    cfg.low_last = 2;
    cfg.high_first = 3;
    cfg.high_last = 4;
    cfg.ft_layer = 4;
    cfg.alpha_low = 0.5;
    cfg.prefix_lengths = {2, 4};
    EditRequest req{"toy", {11, 12, 13, 14, 15, 16}, 2, 5, {3}, {7, 9}};
    const auto pre = make_prefixes({{20, 21, 22, 23, 24, 25, 26}}, cfg);
    std::mt19937_64 rng(32);
    std::normal_distribution<double> g(0, 0.3);
    Vec<double> lo(16), hi(16);
    for (auto& x : lo) x = g(rng);
    for (auto& x : hi) x = g(rng);
    const auto ev = jeep_loss(m, req, pre, cfg, lo, hi);
    // 12 coordinates of each delta, chosen at random.
    std::vector<int> idx(16);
    for (int i = 0; i < 16; ++i) idx[i] = i;
    const double h = 1e-5;
    Vec<double> ga(24), fd(24);
    int k = 0;
    for (int which = 0; which < 2; ++which) {
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int j = 0; j < 12; ++j, ++k) {
            const int i = idx[j];
            Vec<double> a = which == 0 ? lo : hi, b = a;
            a[i] += h;
            b[i] -= h;
            const double la = which == 0 ? jeep_loss(m, req, pre, cfg, a, hi).loss : jeep_loss(m, req, pre, cfg, lo, a).loss;
            const double lb = which == 0 ? jeep_loss(m, req, pre, cfg, b, hi).loss : jeep_loss(m, req, pre, cfg, lo, b).loss;
            fd[k] = (la - lb) / (2 * h);
            ga[k] = which == 0 ? ev.g_low[i] : ev.g_high[i];
        }
    }
    const double rel = (ga - fd).norm() / fd.norm();
    report(3, rel <= 1e-4, "loss gradients vs central differences",
           fmt("relative error %.2e over 24 coordinates (12 of delta_low, 12 of delta_high; tol 1e-4); "
               "loss terms nll %.3f decay %.3f kl %.3f",
               rel, ev.nll, ev.decay, ev.kl));
}

void criterion4() {
    double worst = 0;
    for (auto layout : {BlockLayout::parallel, BlockLayout::sequential}) {
        ModelConfig c;
        c.layout = layout;
        const auto m = init_random<double>(c, 41);
        std::mt19937_64 rng(42);
        std::uniform_int_distribution<int> len(1, 16), tok(0, c.vocab_size - 1);
        for (int t = 0; t < 100; ++t) {
            TokenSeq p(static_cast<std::size_t>(len(rng)));
            for (int& x : p) x = tok(rng);
            const auto r = forward(m, p, true);
            const Eigen::Index last = r.logits.rows() - 1;
            const Vec<double> lens = logit_lens(m, Vec<double>(r.trace->states[c.n_layers].row(last).transpose()));
            const Vec<double> out = softmax<double>(Vec<double>(r.logits.row(last).transpose()));
            worst = std::max(worst, (lens - out).cwiseAbs().maxCoeff());
        }
    }
    report(4, worst <= 1e-6, "logit lens at the last layer equals the output distribution",
           fmt("max abs diff %.2e over 100 prompts x 2 layouts (tol 1e-6)", worst));
}

void criterion5(const Planted& p) {
    const double rc = recall(p.model, p.data.records);
    const int V = p.model.cfg.vocab_size;
    const TokenSet A = make_set(SetKind::original_answer, &p.data, V), B = make_set(SetKind::target_answer, &p.data, V);
    const std::vector<PositionKind> pos{PositionKind::subject_last, PositionKind::prediction};
    int both = 0, en = 0, pr = 0;
    for (const auto& r : p.data.records) {
        const auto ra = trace_flow(p.model, {r}, {A}, pos, &p.data);
        const auto rb = trace_flow(p.model, {r}, {B}, pos, &p.data);
        const auto c = contrast(ra, rb, 0.05);
        const bool e = c.enrichment.contains(2), q = c.promotion.contains(6);
        en += e;
        pr += q;
        both += e && q;
    }
    const double n = static_cast<double>(p.data.records.size());
    report(5, rc >= 0.95 && both / n >= 0.80, "planted recall and probe signature",
           fmt("recall %.3f (>=0.95); enrich layer 2 in enrichment span and promote layer 6 in promotion span for "
               "%.3f of facts (>=0.80; enrichment %.3f, promotion %.3f)",
               rc, both / n, en / n, pr / n));
}

bool clamps_hold(const EditResult<double>& r, const JeepConfig& c) {
    for (const auto& d : r.deltas) {
        if (d.delta_low.norm() > c.gamma_low * d.h_low.norm() * (1 + 1e-12)) return false;
        if (d.delta_high.norm() > c.gamma_high * d.h_high.norm() * (1 + 1e-12)) return false;
    }
    return !r.deltas.empty();
}

std::set<std::string> changed(Model<double> a, Model<double> b) {
    std::set<std::string> out;
    auto ta = named_tensors(a), tb = named_tensors(b);
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (std::memcmp(ta[i].data, tb[i].data, ta[i].rows * ta[i].cols * sizeof(double)) != 0)
            out.insert(ta[i].name);
    return out;
}

double criterion6(const Planted& p, const std::vector<FactRecord>& recs) {
    JeepConfig c;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = jeep_edit(p.model, requests(recs), edit_corpus(p.data), c);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto m = eval_probability_comparison(r.model, recs);
    const std::set<std::string> want{"layers.0.mlp.w_out", "layers.1.mlp.w_out", "layers.4.mlp.w_out",
                                     "layers.5.mlp.w_out"};
    const bool audit = changed(p.model, r.model) == want &&
                       std::set<std::string>(r.outcome.touched.begin(), r.outcome.touched.end()) == want &&
                       r.outcome.touched.size() == want.size();
    const bool clamps = clamps_hold(r, c);
    report(6, m.es == 1.0 && m.gs >= 0.80 && m.ls >= 0.90 && clamps && audit, "edit efficacy on 10 requests",
           fmt("ES %.3f (=1) GS %.3f (>=0.80) LS %.3f (>=0.90) Score %.3f; clamps %s; touch audit %s; %.1fs", m.es,
               m.gs, m.ls, m.score, clamps ? "hold" : "VIOLATED", audit ? "exact" : "MISMATCH", secs));
    return m.score;
}

void criterion7(const Planted& p, const std::vector<FactRecord>& recs, double jeep) {
    auto run = [&](Variant v) {
        JeepConfig c;
        c.variant = v;
        return eval_probability_comparison(run_variant(p.model, requests(recs), edit_corpus(p.data), c).model, recs)
            .score;
    };
    const double lo = run(Variant::low_only), sep = run(Variant::separate_optimization);
    const bool strict = lo <= jeep && sep <= jeep;
    const bool within = lo <= jeep + 0.02 && sep <= jeep + 0.02;
    report(7, within, "ablation direction (soft, 2 point allowance)",
           fmt("jeep %.3f, low_only %.3f, separate_optimization %.3f; ordering %s", jeep, lo, sep,
               strict ? "holds" : (within ? "within 2 points" : "reversed")),
           true);
}

void criterion8() {
    auto pipeline = [] {
        const Planted p = plant(0);
        const std::vector<FactRecord> recs(p.data.records.begin(), p.data.records.begin() + 10);
        const auto r = jeep_edit(p.model, requests(recs), edit_corpus(p.data), JeepConfig{});
        return to_json(eval_probability_comparison(r.model, recs)).dump(2);
    };
    const std::string a = pipeline(), b = pipeline();
    report(8, a == b, "determinism of plant, edit, eval",
           fmt("metrics JSON %zu bytes, runs %s", a.size(), a == b ? "byte-identical" : "DIFFER"));
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    const Planted p = plant(0);
    criterion5(p);
    const std::vector<FactRecord> recs(p.data.records.begin(), p.data.records.begin() + 10);
    const double jeep = criterion6(p, recs);
    criterion7(p, recs, jeep);
    criterion8();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%d hard failure(s), %.1fs\n", failures, secs);
    return failures ? 1 : 0;
}
