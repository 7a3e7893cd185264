#include <algorithm>
#include <cmath>

#include "kedit/kernels.hpp"
#include "kedit/model.hpp"

namespace kedit {

namespace {

// dX for Y = LN(X) given dY, the normalised input and 1/std per row.
template <class T>
Mat<T> ln_backward(const Mat<T>& dY, const Mat<T>& xhat, const Vec<T>& rstd, const Vec<T>& scale) {
    const Eigen::Index n = dY.rows(), d = dY.cols();
    Mat<T> dX(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        T m1 = 0, m2 = 0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const T g = dY(i, j) * scale(j);
            m1 += g;
            m2 += g * xhat(i, j);
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        for (Eigen::Index j = 0; j < d; ++j)
            dX(i, j) = rstd(i) * (dY(i, j) * scale(j) - m1 - xhat(i, j) * m2);
    }
    return dX;
}

// dX = dY * W for Y = X W^T.
template <class T>
Mat<T> linear_back(const Mat<T>& dY, const Mat<T>& W) {
    Mat<T> dX(dY.rows(), W.cols());
    kernels::matmul_nn(dY.data(), W.data(), dX.data(), dY.rows(), dY.cols(), W.cols());
    return dX;
}

// dW = dY^T X for Y = X W^T.
template <class T>
Mat<T> weight_grad(const Mat<T>& dY, const Mat<T>& X) {
    Mat<T> dW(dY.cols(), X.cols());
    kernels::matmul_tn(dY.data(), X.data(), dW.data(), dY.cols(), dY.rows(), X.cols());
    return dW;
}

template <class T>
Mat<T> attention_back(const Model<T>& m, const Layer<T>& L, const LayerCache<T>& c, const Mat<T>& g) {
    const int n = static_cast<int>(c.x1.rows());
    const int H = m.cfg.n_heads, dh = m.cfg.head_dim();
    const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> gheads = linear_back(g, L.wo);
    Mat<T> gq = Mat<T>::Zero(n, m.cfg.d_model), gk = gq, gv = gq;
    std::vector<T> gp(n);
    for (int h = 0; h < H; ++h) {
        const Mat<T>& P = c.probs[h];
        const int o = h * dh;
        for (int i = 0; i < n; ++i) {
            T dotsum = 0;
            for (int j = 0; j <= i; ++j) {
                T s = 0;
                for (int e = 0; e < dh; ++e) s += gheads(i, o + e) * c.v(j, o + e);
                gp[j] = s;
                dotsum += s * P(i, j);
                for (int e = 0; e < dh; ++e) gv(j, o + e) += P(i, j) * gheads(i, o + e);
            }
            for (int j = 0; j <= i; ++j) {
                const T gs = P(i, j) * (gp[j] - dotsum) * scale;
                if (gs == T(0)) continue;
                for (int e = 0; e < dh; ++e) {
                    gq(i, o + e) += gs * c.k(j, o + e);
                    gk(j, o + e) += gs * c.q(i, o + e);
                }
            }
        }
    }
    Mat<T> gx1 = linear_back(gq, L.wq);
    gx1 += linear_back(gk, L.wk);
    gx1 += linear_back(gv, L.wv);
    return ln_backward(gx1, c.xhat1, c.rstd1, L.ln1_scale);
}

}  // namespace

template <class T>
BackwardResult<T> backward(const Model<T>& m, const ForwardCache<T>& cache, const Mat<T>& d_logits,
                           const BackwardRequest& req) {
    const int D = m.cfg.n_layers;
    BackwardResult<T> out;
    out.state_grads.resize(req.state_layers.size());
    // Blocks stop..D must be traversed.
    int stop = D + 1;
    for (int l : req.state_layers) stop = std::min(stop, l + 1);
    if (req.weight_layer >= 1) stop = std::min(stop, req.weight_layer);

    auto store = [&](int layer, const Mat<T>& g) {
        for (std::size_t i = 0; i < req.state_layers.size(); ++i)
            if (req.state_layers[i] == layer) out.state_grads[i] = g;
    };

    Mat<T> gxf = linear_back(d_logits, m.lm_head);
    Mat<T> g = ln_backward(gxf, cache.xhatf, cache.rstdf, m.final_scale);
    store(D, g);
    for (int l = D; l >= stop; --l) {
        const Layer<T>& L = m.layers[l - 1];
        const LayerCache<T>& c = cache.layers[l - 1];
        // MLP branch
        Mat<T> gact = linear_back(g, L.w_out);
        Mat<T> gu = gact;
        for (Eigen::Index i = 0; i < gu.size(); ++i) gu.data()[i] *= gelu_grad(c.u.data()[i]);
        if (l == req.weight_layer) {
            out.d_w_out = weight_grad(g, c.act);
            out.d_w_in = weight_grad(gu, c.x2);
        }
        Mat<T> gpre2 = ln_backward(linear_back(gu, L.w_in), c.xhat2, c.rstd2, L.ln2_scale);
        if (m.cfg.layout == BlockLayout::parallel) {
            Mat<T> gh = g + gpre2;
            gh += attention_back(m, L, c, g);
            g = std::move(gh);
        } else {
            Mat<T> gp = g + gpre2;
            Mat<T> gh = gp + attention_back(m, L, c, gp);
            g = std::move(gh);
        }
        store(l - 1, g);
    }
    return out;
}

template BackwardResult<float> backward<float>(const Model<float>&, const ForwardCache<float>&,
                                               const Mat<float>&, const BackwardRequest&);
template BackwardResult<double> backward<double>(const Model<double>&, const ForwardCache<double>&,
                                                 const Mat<double>&, const BackwardRequest&);

}  // namespace kedit
