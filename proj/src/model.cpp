#include <cmath>
#include <random>
#include <type_traits>

#include "kedit/model.hpp"

namespace kedit {

std::string to_string(BlockLayout l) { return l == BlockLayout::parallel ? "parallel" : "sequential"; }
std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

BlockLayout parse_layout(const std::string& s) {
    if (s == "parallel") return BlockLayout::parallel;
    if (s == "sequential") return BlockLayout::sequential;
    throw std::invalid_argument("unknown block layout: " + s);
}

Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw std::invalid_argument("unknown precision: " + s);
}

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_mlp < 1 || vocab_size < 1 || max_seq_len < 1)
        throw std::invalid_argument("model config: all counts must be >= 1");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    if (!(ln_eps > 0)) throw std::invalid_argument("model config: layernorm_epsilon must be > 0");
}

template <class T>
Model<T> Model<T>::zeros(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.d_model, dm = cfg.d_mlp;
    Model<T> m;
    m.cfg = cfg;
    m.tok_emb = Mat<T>::Zero(cfg.vocab_size, d);
    m.pos_emb = Mat<T>::Zero(cfg.max_seq_len, d);
    m.layers.resize(cfg.n_layers);
    for (auto& L : m.layers) {
        L.wq = L.wk = L.wv = L.wo = Mat<T>::Zero(d, d);
        L.w_in = Mat<T>::Zero(dm, d);
        L.w_out = Mat<T>::Zero(d, dm);
        L.ln1_scale = L.ln2_scale = Vec<T>::Ones(d);
        L.ln1_shift = L.ln2_shift = Vec<T>::Zero(d);
    }
    m.final_scale = Vec<T>::Ones(d);
    m.final_shift = Vec<T>::Zero(d);
    m.lm_head = Mat<T>::Zero(cfg.vocab_size, d);
    return m;
}

template <class T>
void Model<T>::check_shapes() const {
    cfg.validate();
    auto expect = [](bool ok, const char* what) {
        if (!ok) throw ModelError(std::string("shape mismatch: ") + what);
    };
    const long d = cfg.d_model, dm = cfg.d_mlp;
    expect(tok_emb.rows() == cfg.vocab_size && tok_emb.cols() == d, "tok_emb");
    expect(pos_emb.rows() == cfg.max_seq_len && pos_emb.cols() == d, "pos_emb");
    expect(static_cast<int>(layers.size()) == cfg.n_layers, "layer count");
    for (const auto& L : layers) {
        expect(L.wq.rows() == d && L.wq.cols() == d, "wq");
        expect(L.wk.rows() == d && L.wk.cols() == d, "wk");
        expect(L.wv.rows() == d && L.wv.cols() == d, "wv");
        expect(L.wo.rows() == d && L.wo.cols() == d, "wo");
        expect(L.w_in.rows() == dm && L.w_in.cols() == d, "w_in");
        expect(L.w_out.rows() == d && L.w_out.cols() == dm, "w_out");
        expect(L.ln1_scale.size() == d && L.ln1_shift.size() == d, "ln1");
        expect(L.ln2_scale.size() == d && L.ln2_shift.size() == d, "ln2");
    }
    expect(final_scale.size() == d && final_shift.size() == d, "final_ln");
    expect(lm_head.rows() == cfg.vocab_size && lm_head.cols() == d, "lm_head");
}

template <class T>
bool Model<T>::all_finite() const {
    auto fin = [](const auto& x) { return x.allFinite(); };
    if (!fin(tok_emb) || !fin(pos_emb) || !fin(final_scale) || !fin(final_shift) || !fin(lm_head))
        return false;
    for (const auto& L : layers)
        if (!fin(L.wq) || !fin(L.wk) || !fin(L.wv) || !fin(L.wo) || !fin(L.w_in) || !fin(L.w_out) ||
            !fin(L.ln1_scale) || !fin(L.ln1_shift) || !fin(L.ln2_scale) || !fin(L.ln2_shift))
            return false;
    return true;
}

template <class T>
Model<T> init_random(const ModelConfig& cfg, std::uint64_t seed, const InitSpec& s) {
    Model<T> m = Model<T>::zeros(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    auto fill = [&](Mat<T>& x, double std) {
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(nd(rng) * std);
    };
    const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double ain = s.attn_in_std < 0 ? inv : s.attn_in_std;
    const double min = s.mlp_in_std < 0 ? inv : s.mlp_in_std;
    const double rs = s.residual_scale;
    fill(m.tok_emb, s.tok_std * rs);
    fill(m.pos_emb, s.pos_std * rs);
    fill(m.lm_head, s.lm_std);
    for (auto& L : m.layers) {
        fill(L.wq, ain);
        fill(L.wk, ain);
        fill(L.wv, ain);
        fill(L.wo, s.attn_out_std * rs);
        fill(L.w_in, min);
        fill(L.w_out, s.mlp_out_std * rs);
    }
    return m;
}

template <class T>
std::vector<NamedTensor<T>> named_tensors(Model<T>& m) {
    std::vector<NamedTensor<T>> out;
    auto add = [&](std::string name, auto& x) {
        using X = std::decay_t<decltype(x)>;
        out.push_back({std::move(name), x.data(), x.data(), static_cast<std::size_t>(x.rows()),
                       static_cast<std::size_t>(x.cols()), X::ColsAtCompileTime == 1});
    };
    add("tok_emb", m.tok_emb);
    add("pos_emb", m.pos_emb);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& L = m.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        add(p + "attn.wq", L.wq);
        add(p + "attn.wk", L.wk);
        add(p + "attn.wv", L.wv);
        add(p + "attn.wo", L.wo);
        add(p + "mlp.w_in", L.w_in);
        add(p + "mlp.w_out", L.w_out);
        add(p + "ln1.scale", L.ln1_scale);
        add(p + "ln1.shift", L.ln1_shift);
        add(p + "ln2.scale", L.ln2_scale);
        add(p + "ln2.shift", L.ln2_shift);
    }
    add("final_ln.scale", m.final_scale);
    add("final_ln.shift", m.final_shift);
    add("lm_head", m.lm_head);
    return out;
}

template <class T>
T gelu(T x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T a = static_cast<T>(0.044715);
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(c * (x + a * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
    const T c = static_cast<T>(0.7978845608028654);
    const T a = static_cast<T>(0.044715);
    const T t = std::tanh(c * (x + a * x * x * x));
    const T dt = (static_cast<T>(1) - t * t) * c * (static_cast<T>(1) + static_cast<T>(3) * a * x * x);
    return static_cast<T>(0.5) * (static_cast<T>(1) + t) + static_cast<T>(0.5) * x * dt;
}

template <class T>
Vec<T> layernorm(const Vec<T>& x, const Vec<T>& scale, const Vec<T>& shift, double eps) {
    const T mu = x.mean();
    const Vec<T> c = x.array() - mu;
    const T var = c.squaredNorm() / static_cast<T>(x.size());
    const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(eps));
    return (c.array() * r * scale.array() + shift.array()).matrix();
}

template <class T>
Vec<T> softmax(const Vec<T>& z) {
    const T mx = z.maxCoeff();
    Vec<T> e = (z.array() - mx).exp().matrix();
    return e / e.sum();
}

template <class T>
Vec<T> log_softmax(const Vec<T>& z) {
    const T mx = z.maxCoeff();
    const T lse = mx + std::log((z.array() - mx).exp().sum());
    return (z.array() - lse).matrix();
}

template <class T>
int argmax(const Vec<T>& v) {
    Eigen::Index i = 0;
    v.maxCoeff(&i);
    return static_cast<int>(i);
}

#define KEDIT_MODEL(T)                                                                          \
    template struct Model<T>;                                                                   \
    template Model<T> init_random<T>(const ModelConfig&, std::uint64_t, const InitSpec&);       \
    template std::vector<NamedTensor<T>> named_tensors<T>(Model<T>&);                           \
    template T gelu<T>(T);                                                                      \
    template T gelu_grad<T>(T);                                                                 \
    template Vec<T> layernorm<T>(const Vec<T>&, const Vec<T>&, const Vec<T>&, double);          \
    template Vec<T> softmax<T>(const Vec<T>&);                                                  \
    template Vec<T> log_softmax<T>(const Vec<T>&);                                              \
    template int argmax<T>(const Vec<T>&);

KEDIT_MODEL(float)
KEDIT_MODEL(double)

}  // namespace kedit
