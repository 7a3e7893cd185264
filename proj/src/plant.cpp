#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "kedit/plant.hpp"

namespace kedit {

namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

// v with its component in span(cols of B) removed.
VecD project_off(const VecD& v, const MatD& B) {
    if (B.cols() == 0) return v;
    Eigen::HouseholderQR<MatD> qr(B);
    const MatD Q = qr.householderQ() * MatD::Identity(B.rows(), B.cols());
    return v - Q * (Q.transpose() * v);
}

template <class T>
int predict(const Model<T>& m, const TokenSeq& toks) {
    const auto r = forward(m, toks);
    return argmax<T>(r.logits.row(r.logits.rows() - 1).transpose());
}

struct Layout {
    std::map<int, std::vector<int>> enrich;  // layer -> spec indices
    std::map<int, std::set<int>> promote;    // layer -> objects
    std::set<int> extract;
};

template <class T>
Model<T> plant_once(const Model<T>& base, const std::vector<PlantSpec>& specs, const PlantOptions& o,
                    const Layout& lay, const std::vector<double>& boost) {
    Model<T> m = base;
    const int d = m.cfg.d_model, dm = m.cfg.d_mlp, H = m.cfg.n_heads, dh = m.cfg.head_dim();
    const int C = d - 1;
    const double unit = embedding_unit(base);
    const MatD lm = base.lm_head.template cast<double>();

    std::set<int> objset;
    std::map<int, std::set<int>> pools;
    for (const auto& s : specs) {
        objset.insert(s.fact->answer[0]);
        objset.insert(s.fact->target[0]);
        pools[s.fact->relation].insert({s.fact->answer[0], s.fact->target[0]});
    }
    const std::vector<int> objs(objset.begin(), objset.end());

    const VecD ones = VecD::Ones(d) / std::sqrt(static_cast<double>(d));
    VecD ec = VecD::Zero(d);
    ec[C] = 1;

    // Flag: the direction the unembedding reads least, away from structure tokens.
    MatD B(d, 2 + o.structure_tokens.size());
    B.col(0) = ones;
    B.col(1) = ec;
    for (std::size_t i = 0; i < o.structure_tokens.size(); ++i)
        B.col(2 + i) = base.tok_emb.row(o.structure_tokens[i]).template cast<double>().transpose();
    MatD P = MatD::Identity(d, d);
    {
        Eigen::HouseholderQR<MatD> qr(B);
        const MatD Q = qr.householderQ() * MatD::Identity(d, B.cols());
        P -= Q * Q.transpose();
    }
    Eigen::BDCSVD<MatD> svd(lm * P, Eigen::ComputeThinV);
    const VecD& S = svd.singularValues();
    int fi = 0;
    for (int i = 0; i < S.size(); ++i)
        if (S[i] > 1e-8 * S[0]) fi = i;
    VecD flag = svd.matrixV().col(fi);
    flag.normalize();

    // Write direction per object: zero logit change for the other objects and
    // the fixed directions, and the least squared logit change over the rest
    // of the vocabulary per unit of its own logit.
    const MatD G = lm.transpose() * lm;
    std::map<int, VecD> wdir;
    for (int ob : objs) {
        MatD A(d, objs.size() + 2);
        int c = 0;
        for (int t : objs)
            if (t != ob) A.col(c++) = lm.row(t).transpose();
        A.col(c++) = ones;
        A.col(c++) = ec;
        A.col(c++) = flag;
        Eigen::ColPivHouseholderQR<MatD> qr(A.leftCols(c));
        const int r = static_cast<int>(qr.rank());
        const MatD Q = qr.householderQ();
        const MatD N = Q.rightCols(d - r);
        const VecD y = (N.transpose() * G * N).ldlt().solve(N.transpose() * lm.row(ob).transpose());
        wdir[ob] = (N * y).normalized();
    }

    for (const auto& [l, _] : lay.enrich) {
        m.layers[l - 1].ln2_scale[C] = 0;
        m.layers[l - 1].ln2_shift[C] = 1;
    }
    for (const auto& [l, _] : lay.promote) {
        m.layers[l - 1].ln2_scale[C] = 0;
        m.layers[l - 1].ln2_shift[C] = 1;
    }

    for (const auto& [l, idx] : lay.enrich) {
        auto& L = m.layers[l - 1];
        for (std::size_t j = 0; j < idx.size(); ++j) {
            const PlantSpec& s = specs[idx[j]];
            const FactRecord& f = *s.fact;
            ForwardCache<T> cache;
            forward_cached(m, f.prompt.tokens, {}, cache);
            const int sl = f.prompt.subject_last();
            const VecD h = cache.layers[l - 1].pre2.row(sl).template cast<double>().transpose();
            VecD z = layernorm<double>(h, L.ln2_scale.template cast<double>(),
                                       L.ln2_shift.template cast<double>(), m.cfg.ln_eps);
            z[C] = 0;
            const VecD zh = z.normalized();
            VecD row = zh;
            row[C] = -o.theta;
            L.w_in.row(j) = row.cast<T>().transpose();
            const double act = gelu<double>(zh.dot(z) - o.theta);
            if (!(act > 1e-6))
                throw std::invalid_argument("plant: enrich unit inactive for " + f.id);
            VecD demote = VecD::Zero(d);
            for (int t : pools[f.relation])
                if (t != f.answer[0]) demote += wdir[t];
            const double g = boost[idx[j]] * s.strength * unit;
            VecD v = g * (o.object_write * wdir[f.answer[0]] - o.competitor_write * demote);
            v += (s.strength * unit * o.flag_write - (h + v).dot(flag)) * flag;
            L.w_out.col(j) = (v / act).cast<T>();
        }
    }

    for (int x : lay.extract) {
        auto& L = m.layers[x - 1];
        L.ln1_scale[C] = 0;
        L.ln1_shift[C] = 1;
        L.wq.setZero();
        L.wk.setZero();
        for (int hh = 0; hh < H; ++hh) {
            L.wq(hh * dh, C) = static_cast<T>(o.query_gain);
            L.wk.row(hh * dh) = (o.query_gain * flag).cast<T>().transpose();
        }
        L.wv.setIdentity();
        L.wv(C, C) = 0;
        L.wo = Mat<T>::Identity(d, d) * static_cast<T>(o.copy_gain);
        L.wo(C, C) = 0;
    }

    double smax = 0;
    for (const auto& s : specs) smax = std::max(smax, s.strength);
    MatD fo(d, 2);
    fo.col(0) = flag;
    fo.col(1) = ones;
    // Detectors read the dual basis of the write directions, so each responds
    // to its own object's write and not to the others'.
    MatD W(d, objs.size());
    for (std::size_t i = 0; i < objs.size(); ++i) W.col(i) = wdir[objs[i]];
    const MatD dual = W.completeOrthogonalDecomposition().pseudoInverse().transpose();
    std::map<int, int> col;
    for (std::size_t i = 0; i < objs.size(); ++i) col[objs[i]] = static_cast<int>(i);
    for (const auto& [l, os] : lay.promote) {
        auto& L = m.layers[l - 1];
        int jj = 0;
        for (int ob : os) {
            const int j = dm - 1 - jj++;
            VecD u = dual.col(col[ob]);
            u[C] = 0;
            u = project_off(u, fo).normalized();
            VecD row = o.detect_gain * u;
            row[C] = -o.detect_gain * o.detect_threshold;
            L.w_in.row(j) = row.cast<T>().transpose();
            L.w_out.col(j) = (smax * unit * o.promote_write * wdir[ob]).cast<T>();
        }
    }
    return m;
}

}  // namespace

template <class T>
double embedding_unit(const Model<T>& m) {
    return m.tok_emb.template cast<double>().rowwise().norm().mean() /
           std::sqrt(static_cast<double>(m.cfg.d_model));
}

template <class T>
Model<T> plant_facts(const Model<T>& model, const std::vector<PlantSpec>& specs, const PlantOptions& opt,
                     PlantReport* report) {
    model.check_shapes();
    const int D = model.cfg.n_layers;
    bool any = false;
    std::set<TokenSeq> subjects;
    Layout lay;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const PlantSpec& s = specs[i];
        if (!s.fact) throw std::invalid_argument("plant: spec without fact");
        if (!(s.strength >= 0)) throw std::invalid_argument("plant: strength must be >= 0");
        if (s.enrich_layer < 1 || s.promote_layer > D || s.enrich_layer >= s.promote_layer)
            throw std::invalid_argument("plant: layer out of range for " + s.fact->id);
        if (s.promote_layer - s.enrich_layer < 2)
            throw std::invalid_argument("plant: promote_layer must be at least two above enrich_layer");
        if (!subjects.insert(s.fact->subject).second)
            throw std::invalid_argument("plant: duplicate subject in " + s.fact->id);
        s.fact->validate(model.cfg.vocab_size);
        if (s.strength == 0) continue;
        any = true;
        lay.enrich[s.enrich_layer].push_back(static_cast<int>(i));
        lay.promote[s.promote_layer].insert({s.fact->answer[0], s.fact->target[0]});
        lay.extract.insert((s.enrich_layer + s.promote_layer) / 2);
    }
    if (report) *report = {};
    if (!any) return model;
    for (int x : lay.extract)
        if (lay.enrich.count(x) || lay.promote.count(x))
            throw std::invalid_argument("plant: extraction layer collides with an MLP layer");
    for (int l = 1; l <= D; ++l) {
        const std::size_t ne = lay.enrich.count(l) ? lay.enrich[l].size() : 0;
        const std::size_t np = lay.promote.count(l) ? lay.promote[l].size() : 0;
        if (ne + np > static_cast<std::size_t>(model.cfg.d_mlp))
            throw std::invalid_argument("plant: d_mlp too small for layer " + std::to_string(l));
    }

    std::vector<double> boost(specs.size(), 1.0);
    Model<T> m;
    int round = 0;
    for (;; ++round) {
        m = plant_once(model, specs, opt, lay, boost);
        bool bad = false;
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].strength == 0) continue;
            if (predict(m, specs[i].fact->prompt.tokens) != specs[i].fact->answer[0]) {
                boost[i] *= opt.repair_factor;
                bad = true;
            }
        }
        if (!bad || round >= opt.repair_rounds) break;
    }
    if (report) {
        report->rounds = round + 1;
        for (const auto& s : specs)
            report->recalled += predict(m, s.fact->prompt.tokens) == s.fact->answer[0];
        report->extraction_layers.assign(lay.extract.begin(), lay.extract.end());
    }
    return m;
}

template Model<float> plant_facts<float>(const Model<float>&, const std::vector<PlantSpec>&,
                                         const PlantOptions&, PlantReport*);
template Model<double> plant_facts<double>(const Model<double>&, const std::vector<PlantSpec>&,
                                           const PlantOptions&, PlantReport*);
template double embedding_unit<float>(const Model<float>&);
template double embedding_unit<double>(const Model<double>&);

}  // namespace kedit
