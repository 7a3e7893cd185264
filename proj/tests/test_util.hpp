#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "kedit/eval.hpp"
#include "kedit/model.hpp"
#include "kedit/plant.hpp"

namespace kedit::testing {

inline ModelConfig tiny_config(BlockLayout layout = BlockLayout::parallel, int n_layers = 4) {
    ModelConfig c;
    c.n_layers = n_layers;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_mlp = 32;
    c.vocab_size = 40;
    c.max_seq_len = 24;
    c.layout = layout;
    return c;
}

// Random init with larger residual writes so every block matters.
template <class T>
Model<T> busy_model(const ModelConfig& c, std::uint64_t seed) {
    InitSpec s;
    s.attn_out_std = 0.3;
    s.mlp_out_std = 0.3;
    s.pos_std = 0.3;
    s.lm_std = 1.0;
    s.residual_scale = 1.0;
    return init_random<T>(c, seed, s);
}

inline TokenSeq random_tokens(std::mt19937_64& rng, int n, int vocab) {
    std::uniform_int_distribution<int> u(0, vocab - 1);
    TokenSeq t(static_cast<std::size_t>(n));
    for (int& x : t) x = u(rng);
    return t;
}

struct Planted {
    Dataset data;
    Model<double> model;
    PlantReport report;
};

// The standard 8-layer, d_model 64, vocab 256 harness with 50 facts.
inline Planted make_planted(std::uint64_t seed = 0, BlockLayout layout = BlockLayout::parallel) {
    ModelConfig cfg;
    cfg.layout = layout;
    Planted p{gen_synthetic_facts(seed, {}, cfg.vocab_size), {}, {}};
    const Model<double> base = init_random<double>(cfg, seed);
    std::vector<PlantSpec> specs;
    for (const auto& r : p.data.records) specs.push_back({&r, 2, 6, 1.0});
    PlantOptions po;
    po.structure_tokens = p.data.structure_tokens();
    p.model = plant_facts(base, specs, po, &p.report);
    return p;
}

inline const Planted& shared_planted() {
    static const Planted p = make_planted();
    return p;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("kedit_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace kedit::testing
