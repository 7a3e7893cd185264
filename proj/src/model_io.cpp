#include <bit>
#include <cstring>
#include <fstream>

#include "kedit/model_io.hpp"

namespace kedit {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

json config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},     {"d_model", c.d_model},
                {"n_heads", c.n_heads},       {"d_mlp", c.d_mlp},
                {"vocab_size", c.vocab_size}, {"block_layout", to_string(c.layout)},
                {"max_seq_len", c.max_seq_len}, {"layernorm_epsilon", c.ln_eps},
                {"numeric_precision", to_string(c.precision)}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_mlp = j.at("d_mlp").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.layout = parse_layout(j.at("block_layout").get<std::string>());
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.ln_eps = j.at("layernorm_epsilon").get<double>();
    c.precision = parse_precision(j.value("numeric_precision", std::string("f64")));
    c.validate();
    return c;
}

template <class T>
static Precision precision_of() {
    return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

template <class T>
void save_model(const Model<T>& m, const fs::path& dir) {
    m.check_shapes();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ModelError("cannot create directory " + dir.string() + ": " + ec.message());
    Model<T>& mm = const_cast<Model<T>&>(m);
    json shapes = json::object();
    for (const auto& t : named_tensors(mm)) {
        const fs::path p = dir / (t.name + ".bin");
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw ModelError("cannot write " + p.string());
        f.write(reinterpret_cast<const char*>(t.data),
                static_cast<std::streamsize>(t.rows * t.cols * sizeof(T)));
        if (!f) throw ModelError("write failed: " + p.string());
        shapes[t.name] = t.vector ? json::array({t.rows}) : json::array({t.rows, t.cols});
    }
    ModelConfig cfg = m.cfg;
    cfg.precision = precision_of<T>();
    json man{{"format_version", kFormatVersion},
             {"config", config_to_json(cfg)},
             {"precision", to_string(cfg.precision)},
             {"tensors", shapes}};
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw ModelError("cannot write " + (dir / "manifest.json").string());
    f << man.dump(2) << "\n";
}

static json read_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    if (!fs::exists(p)) throw ModelError("missing manifest: " + p.string());
    std::ifstream f(p);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ModelError("malformed manifest " + p.string() + ": " + e.what());
    }
}

Precision stored_precision(const fs::path& dir) {
    return parse_precision(read_manifest(dir).at("precision").get<std::string>());
}

template <class S, class T>
static void read_values(const fs::path& p, std::size_t count, T* dst) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ModelError("missing tensor file: " + p.string());
    f.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(f.tellg());
    if (bytes != count * sizeof(S))
        throw ModelError("corrupt length in " + p.string() + ": expected " +
                         std::to_string(count * sizeof(S)) + " bytes, found " + std::to_string(bytes));
    f.seekg(0);
    std::vector<S> buf(count);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    for (std::size_t i = 0; i < count; ++i) dst[i] = static_cast<T>(buf[i]);
}

template <class T>
Model<T> load_model(const fs::path& dir) {
    const json man = read_manifest(dir);
    ModelConfig cfg;
    Precision stored;
    try {
        cfg = config_from_json(man.at("config"));
        stored = parse_precision(man.at("precision").get<std::string>());
    } catch (const std::exception& e) {
        throw ModelError(std::string("invalid manifest: ") + e.what());
    }
    const json shapes = man.contains("tensors") ? man.at("tensors") : json::object();
    Model<T> m = Model<T>::zeros(cfg);
    for (auto& t : named_tensors(m)) {
        if (!shapes.contains(t.name)) throw ModelError("missing tensor: " + t.name);
        std::vector<std::size_t> shp;
        shapes.at(t.name).get_to(shp);
        std::size_t r = shp.empty() ? 0 : shp[0], c = shp.size() > 1 ? shp[1] : 1;
        if (shp.size() != (t.vector ? 1u : 2u) || r != t.rows || c != t.cols)
            throw ModelError("shape mismatch for " + t.name + ": manifest says " +
                             shapes.at(t.name).dump() + ", config implies [" +
                             std::to_string(t.rows) + "," + std::to_string(t.cols) + "]");
        const fs::path p = dir / (t.name + ".bin");
        if (!fs::exists(p)) throw ModelError("missing tensor: " + t.name);
        if (stored == Precision::f32)
            read_values<float>(p, t.rows * t.cols, t.mut);
        else
            read_values<double>(p, t.rows * t.cols, t.mut);
    }
    m.cfg.precision = precision_of<T>();
    return m;
}

template <class T>
std::uint64_t model_hash(const Model<T>& m) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& t : named_tensors(const_cast<Model<T>&>(m))) {
        const auto* b = reinterpret_cast<const unsigned char*>(t.data);
        for (std::size_t i = 0; i < t.rows * t.cols * sizeof(T); ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    }
    return h;
}

template void save_model<float>(const Model<float>&, const fs::path&);
template void save_model<double>(const Model<double>&, const fs::path&);
template Model<float> load_model<float>(const fs::path&);
template Model<double> load_model<double>(const fs::path&);
template std::uint64_t model_hash<float>(const Model<float>&);
template std::uint64_t model_hash<double>(const Model<double>&);

}  // namespace kedit
