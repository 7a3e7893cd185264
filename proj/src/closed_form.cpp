#include <cmath>

#include "kedit/editor.hpp"
#include "kedit/kernels.hpp"

namespace kedit {

namespace {

using MatD = Eigen::MatrixXd;

double rel_residual(const MatD& A, const MatD& X, const MatD& B) {
    const double nb = B.norm();
    return nb == 0 ? (A * X).norm() : (A * X - B).norm() / nb;
}

}  // namespace

Mat<double> closed_form_update(const Mat<double>& K1, const Mat<double>& R, const Mat<double>& C0,
                               SolveInfo* info) {
    const Eigen::Index kd = K1.rows(), m = K1.cols();
    if (R.cols() != m || C0.rows() != kd || C0.cols() != kd)
        throw std::invalid_argument("closed_form_update: inconsistent shapes");
    if (info) *info = {};
    if (m == 0 || R.isZero(0)) return Mat<double>::Zero(R.rows(), kd);

    const MatD A = C0 + K1 * K1.transpose();
    const MatD B = K1 * R.transpose();  // A X = B with X = Delta^T
    MatD X;
    Eigen::LLT<MatD> llt(A);
    if (llt.info() == Eigen::Success) {
        X = llt.solve(B);
        if (X.allFinite() && rel_residual(A, X, B) <= 1e-10) return X.transpose();
    }

    // Ridge fallback, then iterative refinement against the unregularised
    // system. B lies in the range of A, so refinement converges to the
    // minimum-norm solution.
    const double eps = 1e-8 * A.trace() / static_cast<double>(kd);
    if (info) {
        info->ridge = true;
        info->ridge_eps = eps;
    }
    Eigen::LLT<MatD> reg(A + eps * MatD::Identity(kd, kd));
    if (reg.info() != Eigen::Success || !(eps > 0))
        throw EditError("closed_form_update: singular system beyond regularization tolerance");
    X = reg.solve(B);
    for (int it = 0; it < 50 && rel_residual(A, X, B) > 1e-13; ++it) X += reg.solve(B - A * X);
    if (!X.allFinite() || rel_residual(A, X, B) > 1e-6)
        throw EditError("closed_form_update: singular system beyond regularization tolerance");
    return X.transpose();
}

template <class T>
Vec<T> spread_residual(const Vec<T>& v, const Vec<T>& h, int layer, int last_layer, Spread s) {
    if (layer > last_layer) throw std::invalid_argument("spread_residual: layer beyond last layer");
    const double n = static_cast<double>(last_layer - layer + 1);
    const double div = s == Spread::sqrt ? std::sqrt(n) : n;
    return (v - h) / static_cast<T>(div);
}

template <class T>
Vec<T> compute_key(const Model<T>& m, int layer, const TokenSeq& prompt, int position,
                   const std::vector<TokenSeq>& prefixes, bool heads) {
    if (layer < 1 || layer > m.cfg.n_layers) throw std::invalid_argument("compute_key: layer out of range");
    if (prefixes.empty()) throw std::invalid_argument("compute_key: empty prefix list");
    if (position < 0 || position >= static_cast<int>(prompt.size()))
        throw std::invalid_argument("compute_key: position out of range");
    Vec<T> acc;
    ForwardCache<T> c;
    for (const auto& p : prefixes) {
        TokenSeq toks = p;
        toks.insert(toks.end(), prompt.begin(), prompt.end());
        forward_cached(m, toks, {}, c);
        const auto& L = c.layers[layer - 1];
        const Mat<T>& K = heads ? L.heads : L.act;
        const Vec<T> k = K.row(static_cast<Eigen::Index>(p.size()) + position).transpose();
        if (acc.size() == 0)
            acc = k;
        else
            acc += k;
    }
    return acc / static_cast<T>(prefixes.size());
}

template <class T>
Mat<double> estimate_covariance(const Model<T>& m, int layer, const std::vector<TokenSeq>& corpus,
                                double lambda, bool heads) {
    if (corpus.empty()) throw std::invalid_argument("estimate_covariance: empty corpus");
    if (!(lambda >= 0)) throw std::invalid_argument("estimate_covariance: lambda must be >= 0");
    if (layer < 1 || layer > m.cfg.n_layers)
        throw std::invalid_argument("estimate_covariance: layer out of range");
    const Eigen::Index kd = heads ? m.cfg.d_model : m.cfg.d_mlp;
    Mat<double> G = Mat<double>::Zero(kd, kd);
    std::size_t n = 0;
    ForwardCache<T> c;
    for (const auto& s : corpus) {
        if (s.empty()) continue;
        forward_cached(m, s, {}, c);
        const auto& L = c.layers[layer - 1];
        const Mat<double> K = (heads ? L.heads : L.act).template cast<double>();
        kernels::gram_accumulate(K.data(), static_cast<std::size_t>(K.rows()), static_cast<std::size_t>(kd),
                                 G.data());
        n += static_cast<std::size_t>(K.rows());
    }
    if (n == 0) throw std::invalid_argument("estimate_covariance: empty corpus");
    G *= lambda / static_cast<double>(n);
    // Symmetrise away summation-order noise.
    return 0.5 * (G + G.transpose());
}

#define KEDIT_CF(T)                                                                                    \
    template Vec<T> spread_residual<T>(const Vec<T>&, const Vec<T>&, int, int, Spread);                \
    template Vec<T> compute_key<T>(const Model<T>&, int, const TokenSeq&, int,                         \
                                   const std::vector<TokenSeq>&, bool);                                \
    template Mat<double> estimate_covariance<T>(const Model<T>&, int, const std::vector<TokenSeq>&,    \
                                                double, bool);

KEDIT_CF(float)
KEDIT_CF(double)

}  // namespace kedit
