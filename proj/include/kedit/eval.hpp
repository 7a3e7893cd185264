#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kedit/editor.hpp"
#include "kedit/facts.hpp"
#include "kedit/model.hpp"

namespace kedit {

struct SyntheticOptions {
    int n_facts = 50;
    int n_relations = 5;
    int pool_size = 8;      // objects per relation
    int n_fillers = 8;
    int n_neighbors = 3;
    int n_background = 200;
    int background_min = 4, background_max = 12;
    double two_token_subjects = 0.4;
};

// Word-level grammar: prompts are <subject> <relation phrase>; each relation
// has three phrasings, the first is the base prompt and the others are the
// paraphrases. Targets are drawn from the relation's object pool, avoiding the
// answer and every neighbor's answer. Throws std::invalid_argument when the
// vocabulary runs out or a relation has too few facts for its neighbors.
Dataset gen_synthetic_facts(std::uint64_t seed, const SyntheticOptions& opt, int vocab_size);

nlohmann::json record_to_json(const FactRecord& r);
FactRecord record_from_json(const nlohmann::json& j);

// Records go to the JSONL file; the grammar and corpus go to <stem>.grammar.json
// beside it.
void save_dataset(const Dataset& d, const std::filesystem::path& jsonl);
// Reads the grammar file when present; without it the statistics corpus is
// rebuilt from the records.
Dataset load_dataset(const std::filesystem::path& jsonl);
std::filesystem::path grammar_path(const std::filesystem::path& jsonl);

EditCorpus edit_corpus(const Dataset& d);

enum class MetricMode { token_accuracy, probability_comparison };
enum class AnswerField { original, target };
std::string to_string(MetricMode m);

struct RecordMetrics {
    std::string id;
    double es = 0, gs = 0, ls = 0;
};

struct Metrics {
    double es = 0, gs = 0, ls = 0, score = 0;
    MetricMode mode = MetricMode::probability_comparison;
    std::vector<RecordMetrics> records;
};

nlohmann::json to_json(const Metrics& m);
std::string metrics_csv(const Metrics& m);

// Harmonic mean of the three rates, 0 if any is 0. Throws on inputs outside [0,1].
double score(double es, double gs, double ls);

// Teacher-forced log-probability of `answer` after `prompt`.
template <class T>
double answer_logprob(const Model<T>& m, const TokenSeq& prompt, const TokenSeq& answer);

// Per-token argmax accuracy under teacher forcing. ES and GS use the chosen
// answer field, LS the neighbors' own answers.
template <class T>
Metrics eval_token_accuracy(const Model<T>& m, const std::vector<FactRecord>& records,
                            AnswerField field = AnswerField::target);

// ES/GS: P(y'|.) > P(y|.); LS: P(true|neighbor) > P(y'|neighbor). Strict.
template <class T>
Metrics eval_probability_comparison(const Model<T>& m, const std::vector<FactRecord>& records);

// Fraction of records whose greedy continuation of the base prompt is the answer.
template <class T>
double recall(const Model<T>& m, const std::vector<FactRecord>& records);

struct SweepRow {
    double gamma = 0;
    Metrics metrics;
};

enum class ClampTarget { low, high };

// For each value, edit a copy of the model with that clamp ratio on the chosen
// region, then probability-comparison metrics on the edited records. The
// default sweeps the high-layer clamp, as in the clamp-ratio study.
template <class T>
std::vector<SweepRow> sweep_clamp(const Model<T>& m, const std::vector<FactRecord>& records, const EditCorpus& corpus,
                                  const JeepConfig& cfg, const std::vector<double>& gammas,
                                  ClampTarget target = ClampTarget::high);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace kedit
