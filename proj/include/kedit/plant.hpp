#pragma once

#include <vector>

#include "kedit/facts.hpp"
#include "kedit/model.hpp"

namespace kedit {

struct PlantSpec {
    const FactRecord* fact = nullptr;
    int enrich_layer = 2;   // 1-based block
    int promote_layer = 6;  // 1-based block
    double strength = 1.0;
};

// Circuit constants. Output magnitudes are in units of the mean token
// embedding scale so planting behaves the same at any residual scale.
struct PlantOptions {
    double flag_write = 7.0;       // flag component written by the enrich unit
    double object_write = 12.0;    // object direction written by the enrich unit
    double competitor_write = 3.0; // same-relation competitors pushed down
    double theta = 4.0;            // enrich unit threshold
    double query_gain = 6.0;       // extraction head query/key gain
    double copy_gain = 3.0;        // extraction head output gain
    double detect_gain = 1.5;      // promote unit input gain
    double detect_threshold = 0.5;
    double promote_write = 30.0;
    int repair_rounds = 4;
    double repair_factor = 1.5;
    std::vector<int> structure_tokens;  // kept out of the flag direction
};

struct PlantReport {
    int rounds = 0;
    int recalled = 0;
    std::vector<int> extraction_layers;
};

// Writes each fact into the model as an enrich unit (enrich_layer MLP, subject
// last position), a flag-seeking attention head in the middle layer between
// enrich and promote, and one promote unit per object (promote_layer MLP).
// Facts the result fails to recall are re-planted with a larger write, up to
// repair_rounds times. Throws std::invalid_argument on bad layers, duplicate
// subjects or insufficient MLP width.
template <class T>
Model<T> plant_facts(const Model<T>& model, const std::vector<PlantSpec>& specs,
                     const PlantOptions& opt = {}, PlantReport* report = nullptr);

// Mean token-embedding norm divided by sqrt(d_model).
template <class T>
double embedding_unit(const Model<T>& m);

}  // namespace kedit
