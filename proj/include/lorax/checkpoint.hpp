#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lorax/backbone.hpp"
#include "lorax/expansion.hpp"
#include "lorax/lora.hpp"
#include "lorax/rehearsal.hpp"

namespace lorax {

using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

/// Binary tensor file: magic "LRXT0001", u32 count, then per tensor a u32
/// name length, the name, u64 rows, u64 cols and rows * cols little-endian
/// f64 values in row-major order.
void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors);
/// Throws DataError for unreadable or malformed files.
std::map<std::string, Matrix> read_tensors(const std::filesystem::path& path);

void save_backbone(const std::filesystem::path& dir, const Backbone& backbone);
/// Reads backbone.json and backbone.lrxt from `dir`.
Backbone load_backbone(const std::filesystem::path& dir);

/// adapters.json (site -> kind, rank, scale) plus adapters.lrxt (A and B).
void save_adapters(const std::filesystem::path& dir, const AdapterSet& adapters);
/// The returned set is frozen.
AdapterSet load_adapters(const std::filesystem::path& dir);

/// Layout: manifest.json, backbone/, task_<i>/ (adapters or a backbone copy),
/// classifier.lrxt. The base backbone is stored once for all tasks.
void save_model(const std::filesystem::path& dir, const IncrementalModel& model);
IncrementalModel load_model(const std::filesystem::path& dir);

/// buffer.json with the budget and the herding-ordered refs per class.
void save_buffer(const std::filesystem::path& path, const ExemplarBuffer& buffer);
ExemplarBuffer load_buffer(const std::filesystem::path& path);

}  // namespace lorax
