#include <cmath>

#include "kedit/editor.hpp"

namespace kedit {

template <class T>
Model<T> ft_wd_baseline(const Model<T>& m, const std::vector<EditRequest>& reqs, int layer, double lr,
                        int max_steps, double weight_decay, double stop_loss, FtResult* out) {
    if (layer < 1 || layer > m.cfg.n_layers) throw std::invalid_argument("ft_wd: layer out of range");
    if (max_steps < 0 || !(lr >= 0) || !(weight_decay >= 0))
        throw std::invalid_argument("ft_wd: invalid step count, rate or decay");
    for (const auto& r : reqs) r.validate(m.cfg.vocab_size);
    Model<T> e = m;
    FtResult fr;
    if (reqs.empty() || lr == 0) {
        if (out) *out = fr;
        return e;
    }
    const Mat<T> win0 = m.layers[layer - 1].w_in, wout0 = m.layers[layer - 1].w_out;
    const int V = m.cfg.vocab_size;
    ForwardCache<T> c;
    for (int step = 0; step < max_steps; ++step) {
        auto& L = e.layers[layer - 1];
        double nll = 0;
        Mat<T> gin = Mat<T>::Zero(win0.rows(), win0.cols()), gout = Mat<T>::Zero(wout0.rows(), wout0.cols());
        for (const auto& r : reqs) {
            TokenSeq toks = r.prompt;
            toks.insert(toks.end(), r.target.begin(), r.target.end() - 1);
            forward_cached(e, toks, {}, c);
            Mat<T> dl = Mat<T>::Zero(static_cast<Eigen::Index>(toks.size()), V);
            for (std::size_t t = 0; t < r.target.size(); ++t) {
                const int row = r.prediction + static_cast<int>(t);
                const Vec<T> ls = log_softmax<T>(c.logits.row(row).transpose());
                nll -= static_cast<double>(ls[r.target[t]]);
                Vec<T> g = ls.array().exp().matrix();
                g[r.target[t]] -= 1;
                dl.row(row) = g.transpose();
            }
            BackwardRequest br;
            br.weight_layer = layer;
            const auto bw = backward(e, c, dl, br);
            gin += bw.d_w_in;
            gout += bw.d_w_out;
        }
        const Mat<T> din = L.w_in - win0, dout = L.w_out - wout0;
        const double decay = 0.5 * weight_decay * static_cast<double>(din.squaredNorm() + dout.squaredNorm());
        const double loss = nll + decay;
        if (!std::isfinite(loss)) throw EditError("ft_wd: non-finite loss (diverged)");
        fr.loss_curve.push_back(loss);
        if (nll < stop_loss) break;
        const T a = static_cast<T>(lr), w = static_cast<T>(weight_decay);
        L.w_in -= a * (gin + w * din);
        L.w_out -= a * (gout + w * dout);
        ++fr.steps;
    }
    if (out) *out = fr;
    return e;
}

template Model<float> ft_wd_baseline<float>(const Model<float>&, const std::vector<EditRequest>&, int, double,
                                            int, double, double, FtResult*);
template Model<double> ft_wd_baseline<double>(const Model<double>&, const std::vector<EditRequest>&, int,
                                              double, int, double, double, FtResult*);

}  // namespace kedit
