#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "kedit/model.hpp"

namespace kedit {

inline constexpr int kFormatVersion = 1;

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

// Weight directory: manifest.json plus one raw little-endian row-major file
// per tensor, named <tensor>.bin.
template <class T>
void save_model(const Model<T>& m, const std::filesystem::path& dir);

template <class T>
Model<T> load_model(const std::filesystem::path& dir);

// Precision tag stored in a directory's manifest.
Precision stored_precision(const std::filesystem::path& dir);

// FNV-1a over every tensor's bytes in manifest order.
template <class T>
std::uint64_t model_hash(const Model<T>& m);

}  // namespace kedit
