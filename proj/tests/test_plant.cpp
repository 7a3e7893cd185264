#include <cstring>
#include <set>

#include <gtest/gtest.h>

#include "kedit/eval.hpp"
#include "kedit/model_io.hpp"
#include "kedit/plant.hpp"
#include "kedit/probe.hpp"
#include "test_util.hpp"

using namespace kedit;
using kedit::testing::make_planted;
using kedit::testing::shared_planted;

namespace {

std::set<std::string> changed(Model<double> a, Model<double> b) {
    std::set<std::string> out;
    auto ta = named_tensors(a), tb = named_tensors(b);
    for (std::size_t i = 0; i < ta.size(); ++i)
        if (std::memcmp(ta[i].data, tb[i].data, ta[i].rows * ta[i].cols * sizeof(double)) != 0)
            out.insert(ta[i].name);
    return out;
}

}  // namespace

TEST(Plant, RecallsFactsBothLayouts) {
    for (auto layout : {BlockLayout::parallel, BlockLayout::sequential}) {
        const auto p = make_planted(1, layout);
        const double rc = recall(p.model, p.data.records);
        EXPECT_GE(rc, 0.95) << to_string(layout);
        EXPECT_EQ(p.report.recalled, static_cast<int>(rc * 50 + 0.5));
        EXPECT_EQ(p.report.extraction_layers, std::vector<int>{4});
    }
}

TEST(Plant, ZeroStrengthIsIdentity) {
    const auto& p = shared_planted();
    const auto base = init_random<double>(ModelConfig{}, 0);
    std::vector<PlantSpec> specs;
    for (const auto& r : p.data.records) specs.push_back({&r, 2, 6, 0.0});
    const auto out = plant_facts(base, specs);
    EXPECT_EQ(model_hash(out), model_hash(base));
}

TEST(Plant, OnlyDesignatedLayersChange) {
    const auto& p = shared_planted();
    const auto base = init_random<double>(ModelConfig{}, 0);
    const std::set<std::string> allowed{
        "layers.1.mlp.w_in",   "layers.1.mlp.w_out",   "layers.1.ln2.scale",  "layers.1.ln2.shift",
        "layers.3.attn.wq",    "layers.3.attn.wk",     "layers.3.attn.wv",    "layers.3.attn.wo",
        "layers.3.ln1.scale",  "layers.3.ln1.shift",   "layers.5.mlp.w_in",   "layers.5.mlp.w_out",
        "layers.5.ln2.scale",  "layers.5.ln2.shift"};
    for (const auto& name : changed(base, p.model)) EXPECT_TRUE(allowed.count(name)) << name;
}

TEST(Plant, ObjectProbabilityRisesAcrossEnrichLayer) {
    const auto& d = shared_planted().data;
    const auto base = init_random<double>(ModelConfig{}, 3);
    const FactRecord& f = d.records[0];
    const auto m = plant_facts(base, {{&f, 2, 6, 1.0}});
    const auto r = forward(m, f.prompt.tokens, true);
    const int sl = f.prompt.subject_last();
    auto prob = [&](int l) {
        const Vec<double> h = r.trace->states[l].row(sl).transpose();
        const Vec<double> z = m.lm_head * layernorm<double>(h, m.final_scale, m.final_shift, m.cfg.ln_eps);
        return softmax<double>(z)[f.answer[0]];
    };
    EXPECT_GT(prob(2), prob(1));
    EXPECT_GT(prob(2), 0.5);
    EXPECT_EQ(recall(m, {f}), 1.0);
}

TEST(Plant, Errors) {
    const auto& d = shared_planted().data;
    const auto base = init_random<double>(ModelConfig{}, 0);
    const FactRecord* f = &d.records[0];
    EXPECT_THROW(plant_facts(base, {{f, 0, 6, 1.0}}), std::invalid_argument);
    EXPECT_THROW(plant_facts(base, {{f, 2, 9, 1.0}}), std::invalid_argument);
    EXPECT_THROW(plant_facts(base, {{f, 6, 2, 1.0}}), std::invalid_argument);
    EXPECT_THROW(plant_facts(base, {{f, 2, 3, 1.0}}), std::invalid_argument);
    EXPECT_THROW(plant_facts(base, {{f, 2, 6, -1.0}}), std::invalid_argument);
    EXPECT_THROW(plant_facts(base, {{f, 2, 6, 1.0}, {f, 2, 6, 1.0}}), std::invalid_argument);
    // The second fact's extraction layer is block 2, the first fact's enrich block.
    EXPECT_THROW(plant_facts(base, {{f, 2, 6, 1.0}, {&d.records[1], 1, 3, 1.0}}), std::invalid_argument);
}

TEST(Plant, EmbeddingUnitIsResidualScale) {
    const auto m = init_random<double>(ModelConfig{}, 0);
    // tok_std 1 times residual_scale 0.2, up to sampling noise.
    EXPECT_NEAR(embedding_unit(m), 0.2, 0.01);
}
