#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "lorax/backbone.hpp"
#include "lorax/data.hpp"
#include "lorax/engine.hpp"

namespace lorax {

/// Everything needed to reproduce a run. Serialized as config.json.
struct RunConfig {
    // Scenario file: a data manifest ({"tasks": [...]}) or a synthetic stream
    // description ({"synthetic": {...}}). Empty means the synthetic stream
    // below.
    std::string scenario_path;
    StreamConfig stream;
    Strategy strategy;
    std::size_t budget = 40;
    TrainingConfig training;
    BackboneConfig backbone;
    PretrainConfig pretrain;
    std::uint64_t seed = 0;
    std::string out_dir = "run";

    void validate() const;  // throws ConfigError
};

nlohmann::ordered_json to_json(const BackboneConfig& config);
/// `where` names the enclosing field for error messages.
BackboneConfig backbone_config_from_json(const nlohmann::json& j, const std::string& file, const std::string& where);

nlohmann::ordered_json to_json(const StreamConfig& config);
StreamConfig stream_config_from_json(const nlohmann::json& j, const std::string& file, const std::string& where);

nlohmann::ordered_json to_json(const RunConfig& config);
/// Missing fields keep their defaults; unknown fields and wrong types raise
/// ParseError naming the field.
RunConfig run_config_from_json(const nlohmann::json& j, const std::string& file);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// The configured stream: the manifest or synthetic description named by
/// scenario_path, or the inline synthetic stream.
Scenario build_scenario(const RunConfig& config);
/// Backbone from the config, pretrained when configured.
Backbone build_base(const RunConfig& config);

/// Runs the configured strategy and attaches the config snapshot.
RunRecord execute(const RunConfig& config);
RunRecord execute(const RunConfig& config, const Scenario& scenario, const Backbone& base);

}  // namespace lorax
