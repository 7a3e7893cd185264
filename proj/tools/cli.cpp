#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>

#include <omp.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kedit/editor.hpp"
#include "kedit/eval.hpp"
#include "kedit/kernels.hpp"
#include "kedit/model_io.hpp"
#include "kedit/plant.hpp"
#include "kedit/probe.hpp"

namespace kedit::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Settings {
    std::uint64_t seed = 0;
    Precision precision = Precision::f64;
    int threads = 0;
    ModelConfig model;
    double residual_scale = InitSpec{}.residual_scale;
    SyntheticOptions data;
    int enrich_layer = 2, promote_layer = 6;
    double strength = 1.0;
    JeepConfig edit;
    int n_requests = 10;
    std::vector<std::string> sets{"original_answer", "target_answer"};
    std::vector<std::string> positions{"subject_last", "prediction"};
    std::vector<std::string> contrast;
    double threshold = 0.05;
    std::string mode = "probability";
    std::string field = "target";
    std::vector<double> gammas{0.05, 0.1, 0.25, 0.5, 0.75, 1.0};
    std::string clamp_target = "high";
};

json to_json(const Settings& s) {
    json model = config_to_json(s.model);
    model["residual_scale"] = s.residual_scale;
    return json{{"seed", s.seed},
                {"precision", to_string(s.precision)},
                {"threads", s.threads},
                {"model", model},
                {"data",
                 {{"n_facts", s.data.n_facts},
                  {"n_relations", s.data.n_relations},
                  {"pool_size", s.data.pool_size},
                  {"n_fillers", s.data.n_fillers},
                  {"n_neighbors", s.data.n_neighbors},
                  {"n_background", s.data.n_background}}},
                {"plant",
                 {{"enrich_layer", s.enrich_layer}, {"promote_layer", s.promote_layer}, {"strength", s.strength}}},
                {"edit", kedit::to_json(s.edit)},
                {"n_requests", s.n_requests},
                {"probe",
                 {{"sets", s.sets}, {"positions", s.positions}, {"contrast", s.contrast}, {"threshold", s.threshold}}},
                {"eval", {{"mode", s.mode}, {"field", s.field}}},
                {"sweep", {{"gammas", s.gammas}, {"target", s.clamp_target}}}};
}

template <class V>
void take(const json& j, const char* k, V& dst) {
    if (j.contains(k)) dst = j.at(k).get<V>();
}

void apply(Settings& s, json j) {
    // A run manifest carries its resolved settings under "config".
    if (j.contains("config") && j.contains("command")) j = j.at("config");
    take(j, "seed", s.seed);
    if (j.contains("precision")) s.precision = parse_precision(j.at("precision").get<std::string>());
    take(j, "threads", s.threads);
    if (j.contains("model")) {
        const json& m = j.at("model");
        take(m, "n_layers", s.model.n_layers);
        take(m, "d_model", s.model.d_model);
        take(m, "n_heads", s.model.n_heads);
        take(m, "d_mlp", s.model.d_mlp);
        take(m, "vocab_size", s.model.vocab_size);
        take(m, "max_seq_len", s.model.max_seq_len);
        take(m, "layernorm_epsilon", s.model.ln_eps);
        if (m.contains("block_layout")) s.model.layout = parse_layout(m.at("block_layout").get<std::string>());
        take(m, "residual_scale", s.residual_scale);
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        take(d, "n_facts", s.data.n_facts);
        take(d, "n_relations", s.data.n_relations);
        take(d, "pool_size", s.data.pool_size);
        take(d, "n_fillers", s.data.n_fillers);
        take(d, "n_neighbors", s.data.n_neighbors);
        take(d, "n_background", s.data.n_background);
    }
    if (j.contains("plant")) {
        const json& p = j.at("plant");
        take(p, "enrich_layer", s.enrich_layer);
        take(p, "promote_layer", s.promote_layer);
        take(p, "strength", s.strength);
    }
    if (j.contains("edit")) update_from_json(s.edit, j.at("edit"));
    take(j, "n_requests", s.n_requests);
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        take(p, "sets", s.sets);
        take(p, "positions", s.positions);
        take(p, "contrast", s.contrast);
        take(p, "threshold", s.threshold);
    }
    if (j.contains("eval")) {
        take(j.at("eval"), "mode", s.mode);
        take(j.at("eval"), "field", s.field);
    }
    if (j.contains("sweep")) {
        take(j.at("sweep"), "gammas", s.gammas);
        take(j.at("sweep"), "target", s.clamp_target);
    }
}

// Flags are parsed into scratch storage and applied after the config file.
class Flags {
public:
    template <class V>
    void add(CLI::App* app, const std::string& name, std::function<void(Settings&, const V&)> set,
             const std::string& desc) {
        auto store = std::make_shared<V>();
        CLI::Option* o = app->add_option(name, *store, desc);
        if constexpr (std::is_same_v<V, std::vector<int>> || std::is_same_v<V, std::vector<double>> ||
                      std::is_same_v<V, std::vector<std::string>>)
            o->delimiter(',');
        setters_.push_back([o, store, set](Settings& s) {
            if (o->count() > 0) set(s, *store);
        });
    }
    void apply(Settings& s) const {
        for (const auto& f : setters_) f(s);
    }

private:
    std::vector<std::function<void(Settings&)>> setters_;
};

struct Paths {
    std::string out, model, dataset;
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

void make_out(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
}

fs::path dataset_path(const Paths& p) {
    if (!p.dataset.empty()) return p.dataset;
    return fs::path(p.model) / "dataset.jsonl";
}

std::vector<FactRecord> first_records(const Dataset& d, int n) {
    if (n <= 0 || n >= static_cast<int>(d.records.size())) return d.records;
    return {d.records.begin(), d.records.begin() + n};
}

void copy_dataset(const fs::path& src, const fs::path& dir) {
    fs::copy_file(src, dir / "dataset.jsonl", fs::copy_options::overwrite_existing);
    if (fs::exists(grammar_path(src)))
        fs::copy_file(grammar_path(src), grammar_path(dir / "dataset.jsonl"), fs::copy_options::overwrite_existing);
}

std::string summary(const Metrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "ES=%.3f GS=%.3f LS=%.3f Score=%.3f", m.es, m.gs, m.ls, m.score);
    return buf;
}

template <class T>
json cmd_plant(const Settings& s, const Paths& p, std::ostream& out) {
    if (p.out.empty()) throw std::runtime_error("plant: --out is required");
    const fs::path dir = p.out;
    make_out(dir);
    ModelConfig cfg = s.model;
    cfg.precision = s.precision;
    const Dataset data = gen_synthetic_facts(s.seed, s.data, cfg.vocab_size);
    InitSpec init;
    init.residual_scale = s.residual_scale;
    const Model<T> base = init_random<T>(cfg, s.seed, init);
    std::vector<PlantSpec> specs;
    for (const auto& r : data.records) specs.push_back({&r, s.enrich_layer, s.promote_layer, s.strength});
    PlantOptions po;
    po.structure_tokens = data.structure_tokens();
    PlantReport rep;
    const Model<T> m = plant_facts(base, specs, po, &rep);
    save_model(m, dir);
    save_dataset(data, dir / "dataset.jsonl");
    const double rc = recall(m, data.records);
    char buf[128];
    std::snprintf(buf, sizeof buf, "planted %zu facts: recall=%.3f repair_rounds=%d", data.records.size(), rc,
                  rep.rounds);
    out << buf << "\n";
    return json{{"outputs", {dir.string(), (dir / "dataset.jsonl").string()}}, {"recall", rc}};
}

template <class T>
json cmd_probe(const Settings& s, const Paths& p, std::ostream& out) {
    if (p.out.empty()) throw std::runtime_error("probe: --out is required");
    const Model<T> m = load_model<T>(p.model);
    const Dataset data = load_dataset(dataset_path(p));
    const int V = m.cfg.vocab_size;
    std::vector<TokenSet> sets;
    for (const auto& n : s.sets) sets.push_back(make_set(parse_set_kind(n), &data, V));
    std::vector<PositionKind> pos;
    for (const auto& n : s.positions) pos.push_back(parse_position(n));
    const fs::path dir = p.out;
    make_out(dir);
    const ProbeReport rep = trace_flow(m, data.records, sets, pos, &data);
    write_text(dir / "probe.csv", rep.to_csv());
    json outputs = {(dir / "probe.csv").string()};
    if (!s.contrast.empty()) {
        if (s.contrast.size() != 2) throw std::runtime_error("probe: --contrast takes two set names");
        const auto ra = trace_flow(m, data.records, {make_set(parse_set_kind(s.contrast[0]), &data, V)}, pos, &data);
        const auto rb = trace_flow(m, data.records, {make_set(parse_set_kind(s.contrast[1]), &data, V)}, pos, &data);
        const ContrastReport cr = contrast(ra, rb, s.threshold);
        write_text(dir / "contrast.json", cr.to_json().dump(2) + "\n");
        outputs.push_back((dir / "contrast.json").string());
        auto span = [](const Span& sp) {
            return sp.empty() ? std::string("empty") : "[" + std::to_string(sp.begin) + "," + std::to_string(sp.end) + "]";
        };
        out << "enrichment_span=" << span(cr.enrichment) << " promotion_span=" << span(cr.promotion) << "\n";
    }
    out << "wrote " << rep.rows.size() << " probe rows\n";
    return json{{"outputs", outputs}};
}

template <class T>
json cmd_edit(const Settings& s, const Paths& p, std::ostream& out) {
    if (p.out.empty()) throw std::runtime_error("edit: --out is required");
    const Model<T> m = load_model<T>(p.model);
    const fs::path dpath = dataset_path(p);
    const Dataset data = load_dataset(dpath);
    std::vector<EditRequest> reqs;
    for (const auto& r : first_records(data, s.n_requests)) reqs.push_back(make_request(r));
    const auto res = run_variant(m, reqs, edit_corpus(data), s.edit);
    const fs::path dir = p.out;
    make_out(dir);
    save_model(res.model, dir);
    write_text(dir / "outcome.json", kedit::to_json(res.outcome).dump(2) + "\n");
    copy_dataset(dpath, dir);
    out << "edited " << reqs.size() << " requests with " << to_string(s.edit.variant) << "; touched "
        << res.outcome.touched.size() << " tensors\n";
    return json{{"outputs", {dir.string(), (dir / "outcome.json").string()}}};
}

template <class T>
json cmd_eval(const Settings& s, const Paths& p, std::ostream& out) {
    if (p.out.empty()) throw std::runtime_error("eval: --out is required");
    const Model<T> m = load_model<T>(p.model);
    const Dataset data = load_dataset(dataset_path(p));
    const auto recs = first_records(data, s.n_requests);
    Metrics met;
    if (s.mode == "probability")
        met = eval_probability_comparison(m, recs);
    else if (s.mode == "token")
        met = eval_token_accuracy(m, recs, s.field == "original" ? AnswerField::original : AnswerField::target);
    else
        throw std::runtime_error("eval: unknown mode " + s.mode);
    const fs::path dir = p.out;
    make_out(dir);
    write_text(dir / "metrics.json", kedit::to_json(met).dump(2) + "\n");
    write_text(dir / "metrics.csv", metrics_csv(met));
    out << summary(met) << "\n";
    return json{{"outputs", {(dir / "metrics.json").string(), (dir / "metrics.csv").string()}}};
}

template <class T>
json cmd_sweep(const Settings& s, const Paths& p, std::ostream& out) {
    if (p.out.empty()) throw std::runtime_error("sweep: --out is required");
    const Model<T> m = load_model<T>(p.model);
    const Dataset data = load_dataset(dataset_path(p));
    const auto recs = first_records(data, s.n_requests);
    if (s.clamp_target != "low" && s.clamp_target != "high")
        throw std::runtime_error("sweep: --target must be low or high");
    const auto rows = sweep_clamp(m, recs, edit_corpus(data), s.edit, s.gammas,
                                  s.clamp_target == "low" ? ClampTarget::low : ClampTarget::high);
    const fs::path dir = p.out;
    make_out(dir);
    write_text(dir / "sweep.csv", sweep_csv(rows));
    json js = json::array();
    for (const auto& r : rows) {
        js.push_back({{"gamma", r.gamma}, {"metrics", kedit::to_json(r.metrics)}});
        char buf[48];
        std::snprintf(buf, sizeof buf, "gamma=%.4g ", r.gamma);
        out << buf << summary(r.metrics) << "\n";
    }
    write_text(dir / "sweep.json", js.dump(2) + "\n");
    return json{{"outputs", {(dir / "sweep.csv").string(), (dir / "sweep.json").string()}}};
}

using Handler = json (*)(const Settings&, const Paths&, std::ostream&);

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Probe and edit factual knowledge in small decoder-only transformers", "kedit"};
    app.require_subcommand(1);
    app.fallthrough();
    Flags flags;
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags override it)");
    flags.add<std::uint64_t>(&app, "--seed", [](Settings& s, const std::uint64_t& v) { s.seed = v; }, "Random seed");
    flags.add<std::string>(
        &app, "--precision", [](Settings& s, const std::string& v) { s.precision = parse_precision(v); },
        "f32 or f64");
    flags.add<int>(&app, "--threads", [](Settings& s, const int& v) { s.threads = v; }, "OpenMP threads (0: default)");

    Paths paths;
    auto io = [&](CLI::App* c, bool needs_model) {
        c->add_option("--out", paths.out, "Output directory");
        if (needs_model) {
            c->add_option("--model", paths.model, "Weight directory")->required();
            c->add_option("--dataset", paths.dataset, "Dataset JSONL (default: <model>/dataset.jsonl)");
        }
    };
    auto edit_flags = [&](CLI::App* c) {
        flags.add<std::string>(c, "--variant", [](Settings& s, const std::string& v) { s.edit.variant = parse_variant(v); },
                               "jeep, low_only, high_only, no_step2, no_step3, separate_optimization, "
                               "even_spread, mhsa_step3 or ft_wd");
        flags.add<int>(c, "--n-requests", [](Settings& s, const int& v) { s.n_requests = v; },
                       "Use the first N records (0: all)");
        flags.add<std::vector<int>>(c, "--low-layers", [](Settings& s, const std::vector<int>& v) {
            if (v.size() != 2) throw std::invalid_argument("--low-layers takes first,last");
            s.edit.low_first = v[0];
            s.edit.low_last = v[1];
        }, "first,last low MLP layers");
        flags.add<std::vector<int>>(c, "--high-layers", [](Settings& s, const std::vector<int>& v) {
            if (v.size() != 2) throw std::invalid_argument("--high-layers takes first,last");
            s.edit.high_first = v[0];
            s.edit.high_last = v[1];
        }, "first,last high MLP layers");
        flags.add<double>(c, "--lr", [](Settings& s, const double& v) { s.edit.lr = v; }, "Delta learning rate");
        flags.add<int>(c, "--steps", [](Settings& s, const int& v) { s.edit.max_steps = v; }, "Delta optimization steps");
        flags.add<double>(c, "--gamma-low", [](Settings& s, const double& v) { s.edit.gamma_low = v; }, "Low clamp ratio");
        flags.add<double>(c, "--gamma-high", [](Settings& s, const double& v) { s.edit.gamma_high = v; }, "High clamp ratio");
        flags.add<double>(c, "--lambda-low", [](Settings& s, const double& v) { s.edit.lambda_low = v; }, "Low covariance scale");
        flags.add<double>(c, "--lambda-high", [](Settings& s, const double& v) { s.edit.lambda_high = v; }, "High covariance scale");
    };

    CLI::App* plant = app.add_subcommand("plant", "Build a model with planted facts and its dataset");
    io(plant, false);
    flags.add<int>(plant, "--n-layers", [](Settings& s, const int& v) { s.model.n_layers = v; }, "Layers");
    flags.add<int>(plant, "--d-model", [](Settings& s, const int& v) { s.model.d_model = v; }, "Residual width");
    flags.add<int>(plant, "--n-heads", [](Settings& s, const int& v) { s.model.n_heads = v; }, "Attention heads");
    flags.add<int>(plant, "--d-mlp", [](Settings& s, const int& v) { s.model.d_mlp = v; }, "MLP width");
    flags.add<int>(plant, "--vocab", [](Settings& s, const int& v) { s.model.vocab_size = v; }, "Vocabulary size");
    flags.add<int>(plant, "--max-seq-len", [](Settings& s, const int& v) { s.model.max_seq_len = v; }, "Context length");
    flags.add<std::string>(plant, "--layout", [](Settings& s, const std::string& v) { s.model.layout = parse_layout(v); },
                           "parallel or sequential");
    flags.add<int>(plant, "--n-facts", [](Settings& s, const int& v) { s.data.n_facts = v; }, "Facts to generate");
    flags.add<int>(plant, "--n-relations", [](Settings& s, const int& v) { s.data.n_relations = v; }, "Relations");
    flags.add<int>(plant, "--enrich-layer", [](Settings& s, const int& v) { s.enrich_layer = v; }, "Enrich MLP layer");
    flags.add<int>(plant, "--promote-layer", [](Settings& s, const int& v) { s.promote_layer = v; }, "Promote MLP layer");
    flags.add<double>(plant, "--strength", [](Settings& s, const double& v) { s.strength = v; }, "Planting strength");

    CLI::App* probe = app.add_subcommand("probe", "Logit-lens probe of token sets across layers");
    io(probe, true);
    flags.add<std::vector<std::string>>(probe, "--sets", [](Settings& s, const std::vector<std::string>& v) { s.sets = v; },
                                        "Comma-separated token sets");
    flags.add<std::vector<std::string>>(probe, "--positions",
                                        [](Settings& s, const std::vector<std::string>& v) { s.positions = v; },
                                        "subject_last,prediction");
    flags.add<std::vector<std::string>>(probe, "--contrast",
                                        [](Settings& s, const std::vector<std::string>& v) { s.contrast = v; },
                                        "Two token sets to contrast, e.g. original_answer,target_answer");
    flags.add<double>(probe, "--threshold", [](Settings& s, const double& v) { s.threshold = v; }, "Stage threshold");

    CLI::App* edit = app.add_subcommand("edit", "Edit a model and write the edited weights");
    io(edit, true);
    edit_flags(edit);

    CLI::App* eval = app.add_subcommand("eval", "Efficacy, generalization and locality metrics");
    io(eval, true);
    flags.add<int>(eval, "--n-requests", [](Settings& s, const int& v) { s.n_requests = v; },
                   "Evaluate the first N records (0: all)");
    flags.add<std::string>(eval, "--mode", [](Settings& s, const std::string& v) { s.mode = v; }, "probability or token");
    flags.add<std::string>(eval, "--field", [](Settings& s, const std::string& v) { s.field = v; },
                           "Answer field for token mode: target or original");

    CLI::App* sweep = app.add_subcommand("sweep", "Clamp-ratio sweep");
    io(sweep, true);
    edit_flags(sweep);
    flags.add<std::vector<double>>(sweep, "--gammas", [](Settings& s, const std::vector<double>& v) { s.gammas = v; },
                                   "Comma-separated clamp ratios");
    flags.add<std::string>(sweep, "--target", [](Settings& s, const std::string& v) { s.clamp_target = v; },
                           "Clamp swept: high or low");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    const auto t0 = std::chrono::steady_clock::now();
    CLI::App* cmd = app.get_subcommands().front();
    try {
        Settings s;
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw std::runtime_error("cannot read config " + config_path);
            apply(s, json::parse(f));
        }
        flags.apply(s);
        if (s.threads > 0) {
            kernels::set_threads(s.threads);
            omp_set_num_threads(s.threads);
        }
        const std::string name = cmd->get_name();
        const bool f64 = s.precision == Precision::f64;
        Handler h = nullptr;
        if (name == "plant") h = f64 ? cmd_plant<double> : cmd_plant<float>;
        if (name == "probe") h = f64 ? cmd_probe<double> : cmd_probe<float>;
        if (name == "edit") h = f64 ? cmd_edit<double> : cmd_edit<float>;
        if (name == "eval") h = f64 ? cmd_eval<double> : cmd_eval<float>;
        if (name == "sweep") h = f64 ? cmd_sweep<double> : cmd_sweep<float>;
        const json res = h(s, paths, out);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json inputs = json::object();
        if (!paths.model.empty()) inputs["model"] = paths.model;
        if (name != "plant" && (!paths.model.empty() || !paths.dataset.empty()))
            inputs["dataset"] = dataset_path(paths).string();
        if (!config_path.empty()) inputs["config"] = config_path;
        json man{{"command", name},
                 {"artifact_version", kVersion},
                 {"seed", s.seed},
                 {"config", to_json(s)},
                 {"inputs", inputs},
                 {"outputs", res.at("outputs")},
                 {"wall_clock_seconds", secs}};
        write_text(fs::path(paths.out) / "run_manifest.json", man.dump(2) + "\n");
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace kedit::cli
