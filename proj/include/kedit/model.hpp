#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace kedit {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using TokenSeq = std::vector<int>;

enum class BlockLayout { parallel, sequential };
enum class Precision { f32, f64 };

std::string to_string(BlockLayout l);
std::string to_string(Precision p);
BlockLayout parse_layout(const std::string& s);
Precision parse_precision(const std::string& s);

struct ModelConfig {
    int n_layers = 8;
    int d_model = 64;
    int n_heads = 4;
    int d_mlp = 256;
    int vocab_size = 256;
    BlockLayout layout = BlockLayout::parallel;
    int max_seq_len = 32;
    double ln_eps = 1e-5;
    Precision precision = Precision::f64;

    int head_dim() const { return d_model / n_heads; }
    // Throws std::invalid_argument on a broken invariant.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct Layer {
    Mat<T> wq, wk, wv, wo;  // d x d, rows are outputs
    Mat<T> w_in;            // d_mlp x d
    Mat<T> w_out;           // d x d_mlp
    Vec<T> ln1_scale, ln1_shift, ln2_scale, ln2_shift;
};

template <class T>
struct Model {
    ModelConfig cfg;
    Mat<T> tok_emb;  // vocab x d
    Mat<T> pos_emb;  // max_seq_len x d
    std::vector<Layer<T>> layers;
    Vec<T> final_scale, final_shift;
    Mat<T> lm_head;  // vocab x d

    // Zero-initialised tensors of the right shapes, unit layernorm scales.
    static Model zeros(const ModelConfig& cfg);
    void check_shapes() const;
    bool all_finite() const;
};

// Standard deviations for random initialisation. `residual_scale` multiplies
// every tensor that writes into the residual stream (embeddings, wo, w_out);
// a pre-layernorm network computes the same function at any such scale.
struct InitSpec {
    double tok_std = 1.0;
    double pos_std = 0.02;
    double attn_in_std = -1.0;  // negative means d^-1/2
    double attn_out_std = 0.005;
    double mlp_in_std = -1.0;   // negative means d^-1/2
    double mlp_out_std = 0.02;
    double lm_std = 0.25;
    double residual_scale = 0.2;
};

template <class T>
Model<T> init_random(const ModelConfig& cfg, std::uint64_t seed, const InitSpec& spec = {});

// Named tensors in a fixed order, as used by the weight directory.
template <class T>
struct NamedTensor {
    std::string name;
    const T* data;
    T* mut;
    std::size_t rows, cols;
    bool vector;
};
template <class T>
std::vector<NamedTensor<T>> named_tensors(Model<T>& m);

// Additive change to a residual state: states[layer][position] += delta.
// layer 0 is the embedding output, layer D the last block's output.
template <class T>
struct Injection {
    int layer;
    int position;
    Vec<T> delta;
};

template <class T>
struct HiddenTrace {
    std::vector<Mat<T>> states;        // D+1 of [n x d]
    std::vector<Mat<T>> attn_contrib;  // D of [n x d]
    std::vector<Mat<T>> mlp_contrib;   // D of [n x d]
};

template <class T>
struct ForwardResult {
    Mat<T> logits;  // n x vocab
    std::optional<HiddenTrace<T>> trace;
};

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class T>
ForwardResult<T> forward(const Model<T>& m, const TokenSeq& tokens, bool capture = false,
                         const std::vector<Injection<T>>& inj = {});

// Intermediate values kept for the backward pass.
template <class T>
struct LayerCache {
    Mat<T> h_in;      // states[l-1]
    Mat<T> x1;        // ln1 output
    Mat<T> xhat1;     // normalised ln1 input
    Vec<T> rstd1;
    Mat<T> q, k, v;   // n x d
    std::vector<Mat<T>> probs;  // per head, n x n
    Mat<T> heads;     // concatenated head outputs, n x d
    Mat<T> attn;      // n x d
    Mat<T> pre2;      // MLP block input state
    Mat<T> x2, xhat2;
    Vec<T> rstd2;
    Mat<T> u;         // n x d_mlp pre-activation
    Mat<T> act;       // n x d_mlp keys
    Mat<T> mlp;       // n x d
};

template <class T>
struct ForwardCache {
    std::vector<Mat<T>> states;  // D+1, after injection
    std::vector<LayerCache<T>> layers;
    Mat<T> xf, xhatf;
    Vec<T> rstdf;
    Mat<T> logits;
};

template <class T>
void forward_cached(const Model<T>& m, const TokenSeq& tokens,
                    const std::vector<Injection<T>>& inj, ForwardCache<T>& cache);

struct BackwardRequest {
    std::vector<int> state_layers;  // residual layers whose gradients are wanted
    int weight_layer = -1;          // 1-based block whose MLP weight grads are wanted
};

template <class T>
struct BackwardResult {
    std::vector<Mat<T>> state_grads;  // aligned with state_layers, each n x d
    Mat<T> d_w_in, d_w_out;
};

// Reverse pass from d(loss)/d(logits).
template <class T>
BackwardResult<T> backward(const Model<T>& m, const ForwardCache<T>& cache,
                           const Mat<T>& d_logits, const BackwardRequest& req);

// Numerics shared by forward, probe and oracles.
template <class T>
T gelu(T x);
template <class T>
T gelu_grad(T x);
template <class T>
Vec<T> layernorm(const Vec<T>& x, const Vec<T>& scale, const Vec<T>& shift, double eps);
template <class T>
Vec<T> softmax(const Vec<T>& z);
template <class T>
Vec<T> log_softmax(const Vec<T>& z);

template <class T>
int argmax(const Vec<T>& v);

}  // namespace kedit
