#include <cstring>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "kedit/model_io.hpp"
#include "test_util.hpp"

using namespace kedit;
using kedit::testing::TempDir;
namespace fs = std::filesystem;

namespace {

ModelConfig small() {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.n_heads = 2;
    c.d_mlp = 12;
    c.vocab_size = 10;
    c.max_seq_len = 6;
    c.layout = BlockLayout::sequential;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

nlohmann::json manifest(const fs::path& dir) {
    std::ifstream f(dir / "manifest.json");
    return nlohmann::json::parse(f);
}

void write_manifest(const fs::path& dir, const nlohmann::json& j) {
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    f << j.dump(2);
}

}  // namespace

TEST(ModelIO, RoundTripIsBitExact) {
    TempDir td("io");
    auto m = init_random<double>(small(), 5);
    save_model(m, td.path());
    auto back = load_model<double>(td.path());
    EXPECT_EQ(back.cfg, m.cfg);
    auto a = named_tensors(m);
    auto b = named_tensors(back);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(a[i].name, b[i].name);
        const std::size_t bytes = a[i].rows * a[i].cols * sizeof(double);
        EXPECT_EQ(0, std::memcmp(a[i].data, b[i].data, bytes)) << a[i].name;
        // Raw file: little-endian row-major values, no header.
        const std::string raw = slurp(td.path() / (a[i].name + ".bin"));
        ASSERT_EQ(raw.size(), bytes);
        EXPECT_EQ(0, std::memcmp(raw.data(), a[i].data, bytes)) << a[i].name;
    }
    EXPECT_EQ(model_hash(m), model_hash(back));
}

TEST(ModelIO, ManifestCarriesConfigAndShapes) {
    TempDir td("io");
    auto m = init_random<float>(small(), 6);
    save_model(m, td.path());
    const auto j = manifest(td.path());
    EXPECT_EQ(j.at("format_version"), kFormatVersion);
    EXPECT_EQ(j.at("precision"), "f32");
    EXPECT_EQ(config_from_json(j.at("config")).d_model, 8);
    EXPECT_EQ(j.at("config").at("block_layout"), "sequential");
    EXPECT_EQ(j.at("tensors").at("layers.1.mlp.w_in"), nlohmann::json({12, 8}));
    EXPECT_EQ(j.at("tensors").at("final_ln.scale"), nlohmann::json({8}));
    EXPECT_EQ(stored_precision(td.path()), Precision::f32);
    for (const auto& t : named_tensors(m)) EXPECT_TRUE(fs::exists(td.path() / (t.name + ".bin"))) << t.name;
}

TEST(ModelIO, CrossPrecisionLoadCasts) {
    TempDir td("io");
    auto m = init_random<float>(small(), 7);
    save_model(m, td.path());
    const auto d = load_model<double>(td.path());
    EXPECT_EQ(d.tok_emb.cast<float>(), m.tok_emb);
    EXPECT_EQ(d.cfg.precision, Precision::f64);
}

TEST(ModelIO, ShapeMismatchIsReported) {
    TempDir td("io");
    save_model(init_random<double>(small(), 8), td.path());
    auto j = manifest(td.path());
    j["tensors"]["layers.0.attn.wq"] = {8, 7};
    write_manifest(td.path(), j);
    try {
        load_model<double>(td.path());
        FAIL() << "expected a shape mismatch";
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
    }
}

TEST(ModelIO, CorruptLengthIsReported) {
    TempDir td("io");
    save_model(init_random<double>(small(), 9), td.path());
    fs::resize_file(td.path() / "lm_head.bin", 8 * 8 * 10 - 8);
    try {
        load_model<double>(td.path());
        FAIL() << "expected a length error";
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("corrupt length"), std::string::npos);
    }
}

TEST(ModelIO, MissingPiecesAreReported) {
    TempDir td("io");
    EXPECT_THROW(load_model<double>(td.path()), ModelError);
    save_model(init_random<double>(small(), 10), td.path());
    fs::remove(td.path() / "layers.1.mlp.w_out.bin");
    try {
        load_model<double>(td.path());
        FAIL() << "expected a missing tensor";
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("layers.1.mlp.w_out"), std::string::npos);
    }
    auto j = manifest(td.path());
    j["tensors"].erase("pos_emb");
    write_manifest(td.path(), j);
    EXPECT_THROW(load_model<double>(td.path()), ModelError);
    std::ofstream(td.path() / "manifest.json") << "{not json";
    EXPECT_THROW(load_model<double>(td.path()), ModelError);
}

TEST(ModelIO, HashTracksEveryByte) {
    auto m = init_random<double>(small(), 11);
    const auto h = model_hash(m);
    m.layers[1].ln2_shift[3] += 1e-300;
    EXPECT_NE(h, model_hash(m));
}
