#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lorax/engine.hpp"
#include "lorax/run_config.hpp"

namespace lorax {

/// Writes config.json, matrix.csv, strict_matrix.csv, metrics.json,
/// params.json, record.json and checkpoints/ into `dir`.
void write_run(const std::filesystem::path& dir, const RunConfig& config, const RunRecord& record);

struct ReportRow {
    std::string run;       // directory name
    std::string strategy;
    std::string backbone;  // e.g. "vit d4 e64 p4"
    std::string setting;   // strategy-specific knobs
    std::optional<double> aa;
    std::optional<double> aaf;
    std::optional<double> bwt;
    std::size_t trainable_params = 0;  // during the final episode
};

/// Reads a run directory written by write_run. Metrics come from matrix.csv.
ReportRow load_report_row(const std::filesystem::path& run_dir);

/// Percentage with two decimals, or "N/A".
std::string format_percent(const std::optional<double>& value);

/// Orders rows by strategy (lorax, finetune, der, oracle), then run name.
void sort_rows(std::vector<ReportRow>& rows);
std::string render_markdown(const std::vector<ReportRow>& rows);
std::string render_csv(const std::vector<ReportRow>& rows);

/// Long-format heatmap data "task,episode,accuracy" for the defined cells.
std::string heatmap_csv(const AccuracyMatrix& matrix);

struct ParamReport {
    int tasks = 0;
    std::vector<std::size_t> lorax_trainable;      // per task
    std::vector<std::size_t> full_rank_trainable;  // per task
    std::vector<std::size_t> finetune_trainable;   // per task
    std::size_t lorax_adapter_params = 0;          // adapters of one task
    std::size_t backbone_params = 0;
    std::size_t lorax_total = 0;      // stored after all tasks
    std::size_t full_rank_total = 0;  // stored after all tasks
    std::size_t image_parameter_equivalent = 0;
    double lorax_task_exemplar_equivalents = 0.0;  // one task's adapters, in images
};

/// Parameter accounting for `tasks` tasks of `classes_per_task` classes.
ParamReport compute_param_report(const BackboneConfig& backbone, const LoraSettings& lora, int tasks,
                                 int classes_per_task = 2);
std::string render_param_report(const ParamReport& report);

}  // namespace lorax
