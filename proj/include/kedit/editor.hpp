#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kedit/facts.hpp"
#include "kedit/model.hpp"

namespace kedit {

enum class Spread { uniform, sqrt };
enum class Variant {
    jeep,
    low_only,
    high_only,
    no_step2,
    no_step3,
    separate_optimization,
    even_spread,
    mhsa_step3,
    ft_wd
};

std::string to_string(Spread s);
std::string to_string(Variant v);
Spread parse_spread(const std::string& s);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();

struct EditError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EditRequest {
    std::string id;
    TokenSeq prompt;
    int subject_last = 0;
    int prediction = 0;
    TokenSeq original;  // y
    TokenSeq target;    // y'

    // Throws std::invalid_argument.
    void validate(int vocab_size) const;
};

EditRequest make_request(const FactRecord& f);

struct JeepConfig {
    int low_first = 1, low_last = 2;    // 1-based MLP blocks, inclusive
    int high_first = 5, high_last = 6;
    double lr = 0.5;
    int max_steps = 30;
    bool empty_prefix = true;
    std::vector<int> prefix_lengths{2, 5, 10};
    std::uint64_t prefix_seed = 7;
    double beta_low = 0.5, beta_high = 0.5;
    double alpha_low = 0.0625;
    double gamma_low = 0.75, gamma_high = 0.25;
    double lambda_low = 100.0, lambda_high = 100.0;
    Spread low_spread = Spread::sqrt;
    Spread high_spread = Spread::uniform;
    Variant variant = Variant::jeep;
    // FT-WD baseline.
    int ft_layer = 6;
    double ft_lr = 0.05;
    int ft_steps = 25;
    double ft_weight_decay = 0.01;
    double ft_stop_loss = 1e-2;

    int prefix_count() const { return static_cast<int>(prefix_lengths.size()) + (empty_prefix ? 1 : 0); }
    // Throws std::invalid_argument.
    void validate(int n_layers) const;
};

nlohmann::json to_json(const JeepConfig& c);
// Fields absent from j keep the values already in c.
void update_from_json(JeepConfig& c, const nlohmann::json& j);

template <class T>
struct DeltaPair {
    Vec<T> delta_low, delta_high;
    Vec<T> v_low, v_high;
    Vec<T> h_low, h_high;  // h_high is the high state with delta_low injected
    std::vector<double> loss_curve;
    bool low_active = true, high_active = true;
};

// Text the editor reads: `stats` feeds the key covariance, `prefix_source`
// supplies prefix tokens.
struct EditCorpus {
    std::vector<TokenSeq> stats;
    std::vector<TokenSeq> prefix_source;
};

// Optionally the empty prefix, then one prefix per configured length with
// tokens drawn uniformly from the source. Deterministic in cfg.prefix_seed.
std::vector<TokenSeq> make_prefixes(const std::vector<TokenSeq>& source, const JeepConfig& cfg);

// Which terms of the joint loss to include.
struct LossMask {
    bool nll = true;
    bool decay = true;
    bool kl = true;
};

template <class T>
struct LossEval {
    double loss = 0, nll = 0, decay = 0, kl = 0;
    Vec<T> g_low, g_high;
    Vec<T> h_high;  // high state of the bare prompt with only delta_low injected
};

// Joint loss at (delta_low, delta_high) with gradients. An empty delta
// disables that injection and its terms.
template <class T>
LossEval<T> jeep_loss(const Model<T>& m, const EditRequest& req, const std::vector<TokenSeq>& prefixes,
                      const JeepConfig& cfg, const Vec<T>& delta_low, const Vec<T>& delta_high,
                      const LossMask& mask = {});

template <class T>
DeltaPair<T> optimize_deltas(const Model<T>& m, const EditRequest& req, const std::vector<TokenSeq>& prefixes,
                             const JeepConfig& cfg, bool use_low = true, bool use_high = true);

// Key at `position` of the prompt averaged over prefixes. With `heads` set the
// key is the concatenated head output feeding W_O of attention, otherwise the
// MLP activation.
template <class T>
Vec<T> compute_key(const Model<T>& m, int layer, const TokenSeq& prompt, int position,
                   const std::vector<TokenSeq>& prefixes, bool heads = false);

// lambda * mean(k k^T) over every position of every corpus sequence.
template <class T>
Mat<double> estimate_covariance(const Model<T>& m, int layer, const std::vector<TokenSeq>& corpus,
                                double lambda, bool heads = false);

struct SolveInfo {
    bool ridge = false;
    double ridge_eps = 0;
};

// Delta solving Delta (C0 + K1 K1^T) = R K1^T. K1 is key_dim x m, R is d x m.
Mat<double> closed_form_update(const Mat<double>& K1, const Mat<double>& R, const Mat<double>& C0,
                               SolveInfo* info = nullptr);

template <class T>
Vec<T> spread_residual(const Vec<T>& v, const Vec<T>& h, int layer, int last_layer, Spread s);

struct LayerLog {
    int layer = 0;
    std::string region;  // "low" or "high"
    std::string tensor;
    double delta_norm = 0;
    bool ridge = false;
    double ridge_eps = 0;
};

struct RequestLog {
    std::string id;
    double delta_low_norm = 0, delta_high_norm = 0;
    std::vector<double> loss_curve;
    bool already_predicted = false;
    double residual_low_before = 0, residual_low_after = 0;
    double residual_high_before = 0, residual_high_after = 0;
};

struct EditOutcome {
    std::string variant;
    nlohmann::json config;
    std::vector<RequestLog> requests;
    std::vector<LayerLog> layers;
    std::vector<std::string> touched;  // tensor names in update order
    std::vector<double> ft_loss_curve;
};

nlohmann::json to_json(const EditOutcome& o);

template <class T>
struct EditResult {
    Model<T> model;
    EditOutcome outcome;
    std::vector<DeltaPair<T>> deltas;
};

// Runs the variant in cfg.variant.
template <class T>
EditResult<T> run_variant(const Model<T>& m, const std::vector<EditRequest>& reqs,
                          const EditCorpus& corpus, const JeepConfig& cfg);

template <class T>
EditResult<T> jeep_edit(const Model<T>& m, const std::vector<EditRequest>& reqs,
                        const EditCorpus& corpus, const JeepConfig& cfg);

struct FtResult {
    std::vector<double> loss_curve;
    int steps = 0;
};

// Gradient descent on the summed target NLL over the layer's MLP weights with
// decay 0.5 * weight_decay * |W - W_start|^2.
template <class T>
Model<T> ft_wd_baseline(const Model<T>& m, const std::vector<EditRequest>& reqs, int layer, double lr,
                        int max_steps, double weight_decay, double stop_loss, FtResult* out = nullptr);

}  // namespace kedit
