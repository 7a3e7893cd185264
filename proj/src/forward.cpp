#include <cmath>

#include "kedit/kernels.hpp"
#include "kedit/model.hpp"

namespace kedit {

namespace {

template <class T>
void ln_rows(const Mat<T>& X, const Vec<T>& scale, const Vec<T>& shift, double eps, Mat<T>& Y,
             Mat<T>& xhat, Vec<T>& rstd) {
    const Eigen::Index n = X.rows(), d = X.cols();
    Y.resize(n, d);
    xhat.resize(n, d);
    rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = X.row(i).mean();
        T var = 0;
        for (Eigen::Index j = 0; j < d; ++j) var += (X(i, j) - mu) * (X(i, j) - mu);
        var /= static_cast<T>(d);
        const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
        rstd(i) = r;
        for (Eigen::Index j = 0; j < d; ++j) {
            xhat(i, j) = (X(i, j) - mu) * r;
            Y(i, j) = xhat(i, j) * scale(j) + shift(j);
        }
    }
}

template <class T>
void linear(const Mat<T>& X, const Mat<T>& W, Mat<T>& Y) {
    Y.resize(X.rows(), W.rows());
    kernels::matmul_nt(X.data(), W.data(), Y.data(), X.rows(), X.cols(), W.rows());
}

template <class T>
void attention(const Model<T>& m, const Layer<T>& L, LayerCache<T>& c) {
    const int n = static_cast<int>(c.x1.rows());
    const int H = m.cfg.n_heads, dh = m.cfg.head_dim();
    linear(c.x1, L.wq, c.q);
    linear(c.x1, L.wk, c.k);
    linear(c.x1, L.wv, c.v);
    const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(dh));
    c.probs.assign(H, Mat<T>::Zero(n, n));
    c.heads = Mat<T>::Zero(n, m.cfg.d_model);
    for (int h = 0; h < H; ++h) {
        Mat<T>& P = c.probs[h];
        const int o = h * dh;
        for (int i = 0; i < n; ++i) {
            T mx = -std::numeric_limits<T>::infinity();
            for (int j = 0; j <= i; ++j) {
                T s = 0;
                for (int e = 0; e < dh; ++e) s += c.q(i, o + e) * c.k(j, o + e);
                P(i, j) = s * scale;
                mx = std::max(mx, P(i, j));
            }
            T z = 0;
            for (int j = 0; j <= i; ++j) {
                P(i, j) = std::exp(P(i, j) - mx);
                z += P(i, j);
            }
            for (int j = 0; j <= i; ++j) P(i, j) /= z;
            for (int j = 0; j <= i; ++j) {
                const T p = P(i, j);
                for (int e = 0; e < dh; ++e) c.heads(i, o + e) += p * c.v(j, o + e);
            }
        }
    }
    linear(c.heads, L.wo, c.attn);
}

template <class T>
void mlp(const Model<T>& m, const Layer<T>& L, LayerCache<T>& c) {
    ln_rows(c.pre2, L.ln2_scale, L.ln2_shift, m.cfg.ln_eps, c.x2, c.xhat2, c.rstd2);
    linear(c.x2, L.w_in, c.u);
    c.act = c.u.unaryExpr([](T x) { return gelu(x); });
    linear(c.act, L.w_out, c.mlp);
}

}  // namespace

template <class T>
void forward_cached(const Model<T>& m, const TokenSeq& tokens, const std::vector<Injection<T>>& inj,
                    ForwardCache<T>& cache) {
    const int n = static_cast<int>(tokens.size());
    const int D = m.cfg.n_layers, d = m.cfg.d_model;
    if (n < 1) throw ModelError("empty token sequence");
    if (n > m.cfg.max_seq_len)
        throw ModelError("sequence too long: " + std::to_string(n) + " > " +
                         std::to_string(m.cfg.max_seq_len));
    for (int t : tokens)
        if (t < 0 || t >= m.cfg.vocab_size)
            throw ModelError("out-of-vocabulary id: " + std::to_string(t));
    for (const auto& j : inj) {
        if (j.layer < 0 || j.layer > D || j.position < 0 || j.position >= n)
            throw ModelError("injection index out of range");
        if (j.delta.size() != d) throw ModelError("injection has wrong length");
    }
    auto apply = [&](int layer, Mat<T>& h) {
        for (const auto& j : inj)
            if (j.layer == layer) h.row(j.position) += j.delta.transpose();
    };

    cache.states.assign(D + 1, Mat<T>());
    cache.layers.resize(D);
    Mat<T> h(n, d);
    for (int i = 0; i < n; ++i) h.row(i) = m.tok_emb.row(tokens[i]) + m.pos_emb.row(i);
    apply(0, h);
    cache.states[0] = h;
    for (int l = 0; l < D; ++l) {
        const Layer<T>& L = m.layers[l];
        LayerCache<T>& c = cache.layers[l];
        c.h_in = h;
        ln_rows(h, L.ln1_scale, L.ln1_shift, m.cfg.ln_eps, c.x1, c.xhat1, c.rstd1);
        attention(m, L, c);
        if (m.cfg.layout == BlockLayout::parallel)
            c.pre2 = h;
        else
            c.pre2 = h + c.attn;
        mlp(m, L, c);
        h = h + c.attn + c.mlp;
        apply(l + 1, h);
        cache.states[l + 1] = h;
    }
    ln_rows(h, m.final_scale, m.final_shift, m.cfg.ln_eps, cache.xf, cache.xhatf, cache.rstdf);
    linear(cache.xf, m.lm_head, cache.logits);
}

template <class T>
ForwardResult<T> forward(const Model<T>& m, const TokenSeq& tokens, bool capture,
                         const std::vector<Injection<T>>& inj) {
    ForwardCache<T> c;
    forward_cached(m, tokens, inj, c);
    ForwardResult<T> r;
    r.logits = std::move(c.logits);
    if (capture) {
        HiddenTrace<T> tr;
        tr.states = std::move(c.states);
        for (auto& L : c.layers) {
            tr.attn_contrib.push_back(std::move(L.attn));
            tr.mlp_contrib.push_back(std::move(L.mlp));
        }
        r.trace = std::move(tr);
    }
    return r;
}

template void forward_cached<float>(const Model<float>&, const TokenSeq&,
                                    const std::vector<Injection<float>>&, ForwardCache<float>&);
template void forward_cached<double>(const Model<double>&, const TokenSeq&,
                                     const std::vector<Injection<double>>&, ForwardCache<double>&);
template ForwardResult<float> forward<float>(const Model<float>&, const TokenSeq&, bool,
                                             const std::vector<Injection<float>>&);
template ForwardResult<double> forward<double>(const Model<double>&, const TokenSeq&, bool,
                                               const std::vector<Injection<double>>&);

}  // namespace kedit
