#include <algorithm>
#include <cmath>
#include <random>

#include "kedit/editor.hpp"

namespace kedit {

using nlohmann::json;

namespace {

const std::vector<std::pair<Variant, const char*>> kVariantNames = {
    {Variant::jeep, "jeep"},
    {Variant::low_only, "low_only"},
    {Variant::high_only, "high_only"},
    {Variant::no_step2, "no_step2"},
    {Variant::no_step3, "no_step3"},
    {Variant::separate_optimization, "separate_optimization"},
    {Variant::even_spread, "even_spread"},
    {Variant::mhsa_step3, "mhsa_step3"},
    {Variant::ft_wd, "ft_wd"}};

}  // namespace

std::string to_string(Spread s) { return s == Spread::sqrt ? "sqrt" : "uniform"; }

Spread parse_spread(const std::string& s) {
    if (s == "sqrt") return Spread::sqrt;
    if (s == "uniform") return Spread::uniform;
    throw std::invalid_argument("unknown spread schedule: " + s);
}

std::string to_string(Variant v) {
    for (const auto& [k, n] : kVariantNames)
        if (k == v) return n;
    return "?";
}

Variant parse_variant(const std::string& s) {
    for (const auto& [k, n] : kVariantNames)
        if (s == n) return k;
    throw std::invalid_argument("unknown variant: " + s);
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = [] {
        std::vector<Variant> out;
        for (const auto& [k, _] : kVariantNames) out.push_back(k);
        return out;
    }();
    return v;
}

void EditRequest::validate(int vocab) const {
    const int n = static_cast<int>(prompt.size());
    if (n == 0) throw std::invalid_argument(id + ": empty prompt");
    if (subject_last < 0 || subject_last >= n || prediction < 0 || prediction >= n)
        throw std::invalid_argument(id + ": index outside prompt");
    if (target.empty()) throw std::invalid_argument(id + ": empty target");
    if (target == original) throw std::invalid_argument(id + ": target equals original answer");
    for (const TokenSeq* s : {&prompt, &original, &target})
        for (int t : *s)
            if (t < 0 || t >= vocab) throw std::invalid_argument(id + ": token id out of range");
}

EditRequest make_request(const FactRecord& f) {
    EditRequest r;
    r.id = f.id;
    r.prompt = f.prompt.tokens;
    r.subject_last = f.prompt.subject_last();
    r.prediction = f.prompt.prediction();
    r.original = f.answer;
    r.target = f.target;
    return r;
}

void JeepConfig::validate(int D) const {
    auto in = [&](int l) { return l >= 1 && l <= D; };
    if (!in(low_first) || !in(low_last) || !in(high_first) || !in(high_last))
        throw std::invalid_argument("jeep config: layer out of range");
    if (low_first > low_last || high_first > high_last)
        throw std::invalid_argument("jeep config: empty layer interval");
    if (!(low_last < high_first)) throw std::invalid_argument("jeep config: low layers must precede high layers");
    if (!(gamma_low > 0) || !(gamma_high > 0)) throw std::invalid_argument("jeep config: clamp ratios must be > 0");
    for (double c : {lr, beta_low, beta_high, alpha_low, lambda_low, lambda_high, ft_lr, ft_weight_decay})
        if (!(c >= 0)) throw std::invalid_argument("jeep config: coefficients must be >= 0");
    if (max_steps < 0 || ft_steps < 0) throw std::invalid_argument("jeep config: step counts must be >= 0");
    if (prefix_count() < 1) throw std::invalid_argument("jeep config: at least one prefix required");
    for (int l : prefix_lengths)
        if (l < 1) throw std::invalid_argument("jeep config: prefix lengths must be >= 1");
    if (!in(ft_layer)) throw std::invalid_argument("jeep config: ft_layer out of range");
}

json to_json(const JeepConfig& c) {
    return json{{"low_layers", {c.low_first, c.low_last}},
                {"high_layers", {c.high_first, c.high_last}},
                {"lr", c.lr},
                {"max_steps", c.max_steps},
                {"empty_prefix", c.empty_prefix},
                {"prefix_lengths", c.prefix_lengths},
                {"prefix_seed", c.prefix_seed},
                {"beta_low", c.beta_low},
                {"beta_high", c.beta_high},
                {"alpha_low", c.alpha_low},
                {"gamma_low", c.gamma_low},
                {"gamma_high", c.gamma_high},
                {"lambda_low", c.lambda_low},
                {"lambda_high", c.lambda_high},
                {"low_spread", to_string(c.low_spread)},
                {"high_spread", to_string(c.high_spread)},
                {"variant", to_string(c.variant)},
                {"ft_layer", c.ft_layer},
                {"ft_lr", c.ft_lr},
                {"ft_steps", c.ft_steps},
                {"ft_weight_decay", c.ft_weight_decay},
                {"ft_stop_loss", c.ft_stop_loss}};
}

void update_from_json(JeepConfig& c, const json& j) {
    static const std::vector<std::string> known = {
        "low_layers", "high_layers", "lr", "max_steps", "empty_prefix", "prefix_lengths", "prefix_seed",
        "beta_low", "beta_high", "alpha_low", "gamma_low", "gamma_high", "lambda_low", "lambda_high",
        "low_spread", "high_spread", "variant", "ft_layer", "ft_lr", "ft_steps", "ft_weight_decay",
        "ft_stop_loss"};
    for (const auto& [k, _] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw std::invalid_argument("unknown edit config key: " + k);
    auto pair = [&](const char* k, int& a, int& b) {
        if (!j.contains(k)) return;
        const auto v = j.at(k).get<std::vector<int>>();
        if (v.size() != 2) throw std::invalid_argument(std::string(k) + " must have two entries");
        a = v[0];
        b = v[1];
    };
    pair("low_layers", c.low_first, c.low_last);
    pair("high_layers", c.high_first, c.high_last);
    auto get = [&](const char* k, auto& dst) {
        if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
    };
    get("lr", c.lr);
    get("max_steps", c.max_steps);
    get("empty_prefix", c.empty_prefix);
    get("prefix_lengths", c.prefix_lengths);
    get("prefix_seed", c.prefix_seed);
    get("beta_low", c.beta_low);
    get("beta_high", c.beta_high);
    get("alpha_low", c.alpha_low);
    get("gamma_low", c.gamma_low);
    get("gamma_high", c.gamma_high);
    get("lambda_low", c.lambda_low);
    get("lambda_high", c.lambda_high);
    if (j.contains("low_spread")) c.low_spread = parse_spread(j.at("low_spread").get<std::string>());
    if (j.contains("high_spread")) c.high_spread = parse_spread(j.at("high_spread").get<std::string>());
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
    get("ft_layer", c.ft_layer);
    get("ft_lr", c.ft_lr);
    get("ft_steps", c.ft_steps);
    get("ft_weight_decay", c.ft_weight_decay);
    get("ft_stop_loss", c.ft_stop_loss);
}

std::vector<TokenSeq> make_prefixes(const std::vector<TokenSeq>& source, const JeepConfig& cfg) {
    std::vector<TokenSeq> out;
    if (cfg.empty_prefix) out.emplace_back();
    if (cfg.prefix_lengths.empty()) return out;
    std::vector<int> pool;
    for (const auto& s : source) pool.insert(pool.end(), s.begin(), s.end());
    if (pool.empty()) throw std::invalid_argument("make_prefixes: empty prefix source");
    std::mt19937_64 rng(cfg.prefix_seed);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int len : cfg.prefix_lengths) {
        TokenSeq p(static_cast<std::size_t>(len));
        for (int& t : p) t = pool[pick(rng)];
        out.push_back(std::move(p));
    }
    return out;
}

template <class T>
LossEval<T> jeep_loss(const Model<T>& m, const EditRequest& req, const std::vector<TokenSeq>& prefixes,
                      const JeepConfig& cfg, const Vec<T>& dlow, const Vec<T>& dhigh, const LossMask& mask) {
    if (prefixes.empty()) throw std::invalid_argument("jeep_loss: empty prefix list");
    const int d = m.cfg.d_model, V = m.cfg.vocab_size;
    const bool lo = dlow.size() > 0, hi = dhigh.size() > 0;
    const int Llo = cfg.low_last, Lhi = cfg.high_last;
    LossEval<T> out;
    out.g_low = Vec<T>::Zero(lo ? d : 0);
    out.g_high = Vec<T>::Zero(hi ? d : 0);
    const double P = static_cast<double>(prefixes.size());
    const int k = static_cast<int>(req.target.size());

    ForwardCache<T> c;
    if (mask.nll) {
        for (const auto& p : prefixes) {
            const int off = static_cast<int>(p.size());
            TokenSeq toks = p;
            toks.insert(toks.end(), req.prompt.begin(), req.prompt.end());
            toks.insert(toks.end(), req.target.begin(), req.target.end() - 1);
            std::vector<Injection<T>> inj;
            if (lo) inj.push_back({Llo, off + req.subject_last, dlow});
            if (hi) inj.push_back({Lhi, off + req.prediction, dhigh});
            forward_cached(m, toks, inj, c);
            Mat<T> dl = Mat<T>::Zero(static_cast<Eigen::Index>(toks.size()), V);
            for (int t = 0; t < k; ++t) {
                const int row = off + req.prediction + t;
                const Vec<T> z = c.logits.row(row).transpose();
                const Vec<T> ls = log_softmax<T>(z);
                out.nll -= static_cast<double>(ls[req.target[t]]) / P;
                Vec<T> g = ls.array().exp().matrix();
                g[req.target[t]] -= 1;
                dl.row(row) = (g / static_cast<T>(P)).transpose();
            }
            BackwardRequest br;
            if (lo) br.state_layers.push_back(Llo);
            if (hi) br.state_layers.push_back(Lhi);
            const auto bw = backward(m, c, dl, br);
            int gi = 0;
            if (lo) out.g_low += bw.state_grads[gi++].row(off + req.subject_last).transpose();
            if (hi) out.g_high += bw.state_grads[gi++].row(off + req.prediction).transpose();
        }
    }
    if (mask.decay) {
        auto decay = [&](const Vec<T>& dv, double beta, Vec<T>& g) {
            const double n = static_cast<double>(dv.norm());
            out.decay += beta * n;
            if (n > 0) g += (dv * static_cast<T>(beta / n));
        };
        if (lo) decay(dlow, cfg.beta_low, out.g_low);
        if (hi) decay(dhigh, cfg.beta_high, out.g_high);
    }
    if (lo) {
        // Bare prompt with only the low delta: KL at subject last, and the high state.
        forward_cached(m, req.prompt, {{Llo, req.subject_last, dlow}}, c);
        out.h_high = c.states[Lhi].row(req.prediction).transpose();
        if (mask.kl && cfg.alpha_low > 0) {
            const Vec<T> lp = log_softmax<T>(c.logits.row(req.subject_last).transpose());
            const auto base = forward(m, req.prompt);
            const Vec<T> lp0 = log_softmax<T>(base.logits.row(req.subject_last).transpose());
            const Vec<T> p = lp.array().exp().matrix();
            const T kl = p.dot(lp - lp0);
            out.kl = cfg.alpha_low * static_cast<double>(kl);
            Mat<T> dl = Mat<T>::Zero(static_cast<Eigen::Index>(req.prompt.size()), V);
            dl.row(req.subject_last) =
                (static_cast<T>(cfg.alpha_low) * p.array() * ((lp - lp0).array() - kl)).matrix().transpose();
            BackwardRequest br;
            br.state_layers = {Llo};
            const auto bw = backward(m, c, dl, br);
            out.g_low += bw.state_grads[0].row(req.subject_last).transpose();
        }
    } else {
        const auto base = forward(m, req.prompt, true);
        out.h_high = base.trace->states[Lhi].row(req.prediction).transpose();
    }
    out.loss = out.nll + out.decay + out.kl;
    return out;
}

namespace {

template <class T>
void clamp_norm(Vec<T>& v, double radius) {
    const double n = static_cast<double>(v.norm());
    if (n > radius && n > 0) v *= static_cast<T>(radius / n);
}

}  // namespace

template <class T>
DeltaPair<T> optimize_deltas(const Model<T>& m, const EditRequest& req, const std::vector<TokenSeq>& prefixes,
                             const JeepConfig& cfg, bool use_low, bool use_high) {
    const int d = m.cfg.d_model;
    const int Llo = cfg.low_last, Lhi = cfg.high_last;
    const auto base = forward(m, req.prompt, true);
    DeltaPair<T> dp;
    dp.low_active = use_low;
    dp.high_active = use_high;
    dp.h_low = base.trace->states[Llo].row(req.subject_last).transpose();
    const double r_low = cfg.gamma_low * static_cast<double>(dp.h_low.norm());
    Vec<T> dlo = Vec<T>::Zero(use_low ? d : 0), dhi = Vec<T>::Zero(use_high ? d : 0);
    for (int step = 0; step < cfg.max_steps; ++step) {
        const LossEval<T> ev = jeep_loss(m, req, prefixes, cfg, dlo, dhi);
        if (!std::isfinite(ev.loss)) throw EditError(req.id + ": non-finite loss (diverged)");
        dp.loss_curve.push_back(ev.loss);
        if (use_low) {
            dlo -= static_cast<T>(cfg.lr) * ev.g_low;
            clamp_norm(dlo, r_low);
        }
        if (use_high) {
            dhi -= static_cast<T>(cfg.lr) * ev.g_high;
            clamp_norm(dhi, cfg.gamma_high * static_cast<double>(ev.h_high.norm()));
        }
        if (!dlo.allFinite() || !dhi.allFinite()) throw EditError(req.id + ": non-finite delta (diverged)");
    }
    // The high target sits on top of the state the low delta produces.
    if (use_low) {
        ForwardCache<T> c;
        forward_cached(m, req.prompt, {{Llo, req.subject_last, dlo}}, c);
        dp.h_high = c.states[Lhi].row(req.prediction).transpose();
    } else {
        dp.h_high = base.trace->states[Lhi].row(req.prediction).transpose();
    }
    if (use_high) clamp_norm(dhi, cfg.gamma_high * static_cast<double>(dp.h_high.norm()));
    dp.delta_low = use_low ? dlo : Vec<T>::Zero(d);
    dp.delta_high = use_high ? dhi : Vec<T>::Zero(d);
    dp.v_low = dp.h_low + dp.delta_low;
    dp.v_high = dp.h_high + dp.delta_high;
    return dp;
}

namespace {

std::string wout_name(int layer) { return "layers." + std::to_string(layer - 1) + ".mlp.w_out"; }
std::string wo_name(int layer) { return "layers." + std::to_string(layer - 1) + ".attn.wo"; }

template <class T>
Vec<T> state_at(const Model<T>& m, const TokenSeq& prompt, int layer, int pos) {
    const auto r = forward(m, prompt, true);
    return r.trace->states[layer].row(pos).transpose();
}

struct Region {
    int first, last;
    bool low;  // subject-last position when set, prediction otherwise
    double lambda;
    Spread spread;
    bool heads;
};

template <class T>
void update_region(Model<T>& m, const std::vector<EditRequest>& reqs, const std::vector<Vec<T>>& targets,
                   const Region& rg, const std::vector<TokenSeq>& prefixes, const EditCorpus& corpus,
                   EditOutcome& log) {
    const std::size_t n = reqs.size();
    auto pos = [&](const EditRequest& r) { return rg.low ? r.subject_last : r.prediction; };
    auto residual = [&](std::size_t i) {
        return static_cast<double>((targets[i] - state_at(m, reqs[i].prompt, rg.last, pos(reqs[i]))).norm());
    };
    for (std::size_t i = 0; i < n; ++i)
        (rg.low ? log.requests[i].residual_low_before : log.requests[i].residual_high_before) = residual(i);
    for (int l = rg.first; l <= rg.last; ++l) {
        const Mat<double> C0 = estimate_covariance(m, l, corpus.stats, rg.lambda, rg.heads);
        const Eigen::Index kd = C0.rows();
        Mat<double> K1(kd, static_cast<Eigen::Index>(n)), R(m.cfg.d_model, static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
            const auto& r = reqs[i];
            K1.col(i) = compute_key(m, l, r.prompt, pos(r), prefixes, rg.heads).template cast<double>();
            const Vec<T> h = state_at(m, r.prompt, rg.last, pos(r));
            R.col(i) = spread_residual(targets[i], h, l, rg.last, rg.spread).template cast<double>();
        }
        SolveInfo info;
        const Mat<double> Dl = closed_form_update(K1, R, C0, &info);
        Mat<T>& W = rg.heads ? m.layers[l - 1].wo : m.layers[l - 1].w_out;
        W += Dl.cast<T>();
        LayerLog ll;
        ll.layer = l;
        ll.region = rg.low ? "low" : "high";
        ll.tensor = rg.heads ? wo_name(l) : wout_name(l);
        ll.delta_norm = Dl.norm();
        ll.ridge = info.ridge;
        ll.ridge_eps = info.ridge_eps;
        log.layers.push_back(ll);
        log.touched.push_back(ll.tensor);
    }
    for (std::size_t i = 0; i < n; ++i)
        (rg.low ? log.requests[i].residual_low_after : log.requests[i].residual_high_after) = residual(i);
}

template <class T>
std::vector<DeltaPair<T>> step1(const Model<T>& m, const std::vector<EditRequest>& reqs,
                                const std::vector<TokenSeq>& prefixes, const JeepConfig& cfg, bool lo, bool hi) {
    std::vector<DeltaPair<T>> out(reqs.size());
    std::vector<std::string> err(reqs.size());
    // Requests are independent against the frozen model.
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        try {
            out[i] = optimize_deltas(m, reqs[i], prefixes, cfg, lo, hi);
        } catch (const std::exception& e) {
            err[i] = e.what();
        }
    }
    for (const auto& e : err)
        if (!e.empty()) throw EditError(e);
    return out;
}

template <class T>
void log_deltas(EditOutcome& log, const std::vector<DeltaPair<T>>& dps, bool lo, bool hi) {
    for (std::size_t i = 0; i < dps.size(); ++i) {
        auto& r = log.requests[i];
        if (lo) r.delta_low_norm = static_cast<double>(dps[i].delta_low.norm());
        if (hi) r.delta_high_norm = static_cast<double>(dps[i].delta_high.norm());
        r.loss_curve.insert(r.loss_curve.end(), dps[i].loss_curve.begin(), dps[i].loss_curve.end());
    }
}

template <class T>
EditResult<T> start(const Model<T>& m, const std::vector<EditRequest>& reqs, const JeepConfig& cfg) {
    m.check_shapes();
    cfg.validate(m.cfg.n_layers);
    for (const auto& r : reqs) r.validate(m.cfg.vocab_size);
    EditResult<T> res{m, {}, {}};
    res.outcome.variant = to_string(cfg.variant);
    res.outcome.config = to_json(cfg);
    for (const auto& r : reqs) {
        RequestLog rl;
        rl.id = r.id;
        const auto f = forward(m, r.prompt);
        rl.already_predicted = argmax<T>(f.logits.row(r.prediction).transpose()) == r.target[0];
        res.outcome.requests.push_back(rl);
    }
    return res;
}

}  // namespace

template <class T>
EditResult<T> jeep_edit(const Model<T>& m, const std::vector<EditRequest>& reqs, const EditCorpus& corpus,
                        const JeepConfig& cfg) {
    EditResult<T> res = start(m, reqs, cfg);
    if (reqs.empty()) return res;
    const Variant v = cfg.variant;
    if (v == Variant::ft_wd || v == Variant::separate_optimization)
        throw std::invalid_argument("jeep_edit: variant " + to_string(v) + " runs through run_variant");
    const auto prefixes = make_prefixes(corpus.prefix_source, cfg);
    const bool lo = v != Variant::high_only, hi = v != Variant::low_only;
    res.deltas = step1(m, reqs, prefixes, cfg, lo, hi);
    log_deltas(res.outcome, res.deltas, lo, hi);
    const Spread ls = v == Variant::even_spread ? Spread::uniform : cfg.low_spread;
    if (lo && v != Variant::no_step2) {
        std::vector<Vec<T>> t;
        for (const auto& d : res.deltas) t.push_back(d.v_low);
        update_region(res.model, reqs, t, {cfg.low_first, cfg.low_last, true, cfg.lambda_low, ls, false},
                      prefixes, corpus, res.outcome);
    }
    if (hi && v != Variant::no_step3) {
        std::vector<Vec<T>> t;
        for (const auto& d : res.deltas) t.push_back(d.v_high);
        update_region(res.model, reqs, t,
                      {cfg.high_first, cfg.high_last, false, cfg.lambda_high, cfg.high_spread,
                       v == Variant::mhsa_step3},
                      prefixes, corpus, res.outcome);
    }
    return res;
}

template <class T>
EditResult<T> run_variant(const Model<T>& m, const std::vector<EditRequest>& reqs, const EditCorpus& corpus,
                          const JeepConfig& cfg) {
    if (cfg.variant == Variant::ft_wd) {
        EditResult<T> res = start(m, reqs, cfg);
        if (reqs.empty()) return res;
        FtResult fr;
        res.model = ft_wd_baseline(m, reqs, cfg.ft_layer, cfg.ft_lr, cfg.ft_steps, cfg.ft_weight_decay,
                                   cfg.ft_stop_loss, &fr);
        res.outcome.ft_loss_curve = fr.loss_curve;
        if (fr.steps > 0) {
            const std::string p = "layers." + std::to_string(cfg.ft_layer - 1) + ".mlp.";
            res.outcome.touched = {p + "w_in", p + "w_out"};
        }
        return res;
    }
    if (cfg.variant != Variant::separate_optimization) return jeep_edit(m, reqs, corpus, cfg);

    EditResult<T> res = start(m, reqs, cfg);
    if (reqs.empty()) return res;
    const auto prefixes = make_prefixes(corpus.prefix_source, cfg);
    auto low = step1(m, reqs, prefixes, cfg, true, false);
    log_deltas(res.outcome, low, true, false);
    {
        std::vector<Vec<T>> t;
        for (const auto& d : low) t.push_back(d.v_low);
        update_region(res.model, reqs, t, {cfg.low_first, cfg.low_last, true, cfg.lambda_low, cfg.low_spread, false},
                      prefixes, corpus, res.outcome);
    }
    auto high = step1(res.model, reqs, prefixes, cfg, false, true);
    log_deltas(res.outcome, high, false, true);
    {
        std::vector<Vec<T>> t;
        for (const auto& d : high) t.push_back(d.v_high);
        update_region(res.model, reqs, t,
                      {cfg.high_first, cfg.high_last, false, cfg.lambda_high, cfg.high_spread, false}, prefixes,
                      corpus, res.outcome);
    }
    res.deltas.resize(reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        res.deltas[i] = low[i];
        res.deltas[i].high_active = true;
        res.deltas[i].delta_high = high[i].delta_high;
        res.deltas[i].v_high = high[i].v_high;
        res.deltas[i].h_high = high[i].h_high;
        res.deltas[i].loss_curve.insert(res.deltas[i].loss_curve.end(), high[i].loss_curve.begin(),
                                        high[i].loss_curve.end());
    }
    return res;
}

json to_json(const EditOutcome& o) {
    json reqs = json::array();
    for (const auto& r : o.requests)
        reqs.push_back({{"id", r.id},
                        {"delta_low_norm", r.delta_low_norm},
                        {"delta_high_norm", r.delta_high_norm},
                        {"loss_curve", r.loss_curve},
                        {"already_predicted", r.already_predicted},
                        {"residual_low_before", r.residual_low_before},
                        {"residual_low_after", r.residual_low_after},
                        {"residual_high_before", r.residual_high_before},
                        {"residual_high_after", r.residual_high_after}});
    json layers = json::array();
    json ridge = json::array();
    for (const auto& l : o.layers) {
        layers.push_back({{"layer", l.layer}, {"region", l.region}, {"tensor", l.tensor}, {"delta_norm", l.delta_norm}});
        if (l.ridge) ridge.push_back({{"layer", l.layer}, {"tensor", l.tensor}, {"epsilon", l.ridge_eps}});
    }
    json j{{"variant", o.variant}, {"config", o.config},          {"requests", reqs},
           {"layers", layers},     {"ridge_events", ridge},       {"touched", o.touched}};
    if (!o.ft_loss_curve.empty()) j["ft_loss_curve"] = o.ft_loss_curve;
    return j;
}

#define KEDIT_EDITOR(T)                                                                                        \
    template LossEval<T> jeep_loss<T>(const Model<T>&, const EditRequest&, const std::vector<TokenSeq>&,       \
                                      const JeepConfig&, const Vec<T>&, const Vec<T>&, const LossMask&);       \
    template DeltaPair<T> optimize_deltas<T>(const Model<T>&, const EditRequest&,                              \
                                             const std::vector<TokenSeq>&, const JeepConfig&, bool, bool);     \
    template EditResult<T> jeep_edit<T>(const Model<T>&, const std::vector<EditRequest>&, const EditCorpus&,   \
                                        const JeepConfig&);                                                    \
    template EditResult<T> run_variant<T>(const Model<T>&, const std::vector<EditRequest>&, const EditCorpus&, \
                                          const JeepConfig&);

KEDIT_EDITOR(float)
KEDIT_EDITOR(double)

}  // namespace kedit
