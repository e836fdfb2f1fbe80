#include "lorax/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lorax/checkpoint.hpp"
#include "lorax/errors.hpp"

namespace lorax {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing run file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int strategy_rank(const std::string& s) {
    static const std::vector<std::string> order{"lorax", "finetune", "der", "oracle"};
    auto it = std::find(order.begin(), order.end(), s);
    return static_cast<int>(it - order.begin());
}

std::string describe_backbone(const BackboneConfig& b) {
    return fmt::format("vit d{} e{} p{}", b.depth, b.embed_dim, b.patch_size);
}

std::string describe_setting(const RunConfig& c) {
    switch (c.strategy.kind) {
        case StrategyKind::Lorax:
            return fmt::format("r={} combo={} lambda={} B={}", c.strategy.lora.rank, to_string(c.strategy.lora.combo),
                               c.strategy.lambda, c.budget);
        case StrategyKind::FullRankExpansion: return fmt::format("lambda={} B={}", c.strategy.lambda, c.budget);
        case StrategyKind::Finetune: return fmt::format("B={}", c.budget);
        case StrategyKind::Oracle: return "joint";
    }
    return "";
}

std::size_t simulate(Architecture arch, const BackboneConfig& backbone, const LoraSettings& lora, int tasks,
                     int classes_per_task, std::vector<std::size_t>& per_task) {
    IncrementalModel model(arch, std::make_shared<Backbone>(build_backbone(backbone)));
    for (int t = 0; t < tasks; ++t) {
        std::vector<int> classes;
        for (int k = 0; k < classes_per_task; ++k) classes.push_back(t * classes_per_task + k);
        switch (arch) {
            case Architecture::Lorax: model.add_task(lora, classes, static_cast<std::uint64_t>(t)); break;
            case Architecture::FullRankExpansion: model.add_full_rank_task(classes, static_cast<std::uint64_t>(t)); break;
            case Architecture::SingleBackbone: model.add_shared_task(classes, static_cast<std::uint64_t>(t)); break;
        }
        per_task.push_back(model.count_trainable());
        model.finish_task();
    }
    return model.total_parameters();
}

}  // namespace

void write_run(const fs::path& dir, const RunConfig& config, const RunRecord& record) {
    fs::create_directories(dir);
    write_text(dir / "config.json",
               (record.config_snapshot.empty() ? to_json(config).dump(2) : record.config_snapshot) + "\n");
    write_text(dir / "matrix.csv", record.accuracy.to_csv());
    write_text(dir / "strict_matrix.csv", record.strict_accuracy.to_csv());
    write_text(dir / "metrics.json", metrics_to_json(summarize(record.accuracy)) + "\n");

    ordered_json params;
    params["strategy"] = to_string(config.strategy.kind);
    params["trainable_per_task"] = record.trainable_params_per_task;
    params["total_params"] = record.total_params;
    params["backbone_params"] = record.model ? record.model->base().parameter_count() : 0;
    write_text(dir / "params.json", params.dump(2) + "\n");

    ordered_json rec;
    rec["seed"] = record.seed;
    rec["wall_time_seconds"] = record.wall_time;
    write_text(dir / "record.json", rec.dump(2) + "\n");

    if (record.model) save_model(dir / "checkpoints" / "model", *record.model);
    save_buffer(dir / "checkpoints" / "buffer.json", record.buffer);
}

ReportRow load_report_row(const fs::path& run_dir) {
    ReportRow row;
    row.run = run_dir.filename().string();
    if (row.run.empty()) row.run = run_dir.parent_path().filename().string();
    if (!fs::exists(run_dir / "config.json")) throw DataError("not a run directory: " + run_dir.string());
    const RunConfig config = load_run_config(run_dir / "config.json");
    row.strategy = to_string(config.strategy.kind);
    row.backbone = describe_backbone(config.backbone);
    row.setting = describe_setting(config);
    const MetricSummary m = summarize(AccuracyMatrix::from_csv(read_text(run_dir / "matrix.csv")));
    row.aa = m.aa;
    row.aaf = m.aaf;
    row.bwt = m.bwt;
    const fs::path params_path = run_dir / "params.json";
    json params;
    try {
        params = json::parse(read_text(params_path));
        const auto counts = params.at("trainable_per_task").get<std::vector<std::size_t>>();
        row.trainable_params = counts.empty() ? 0 : counts.back();
    } catch (const json::exception& e) {
        throw ParseError(params_path.string(), "trainable_per_task", e.what());
    }
    return row;
}

std::string format_percent(const std::optional<double>& value) {
    if (!value) return "N/A";
    return fmt::format("{:.2f}", *value * 100.0);
}

void sort_rows(std::vector<ReportRow>& rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
        const int ra = strategy_rank(a.strategy);
        const int rb = strategy_rank(b.strategy);
        if (ra != rb) return ra < rb;
        return a.run < b.run;
    });
}

std::string render_markdown(const std::vector<ReportRow>& rows) {
    std::string out = "| Run | CIL | Model | Setting | AA | AAF | BWT | Trainable params |\n";
    out += "|---|---|---|---|---:|---:|---:|---:|\n";
    for (const auto& r : rows) {
        out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} |\n", r.run, r.strategy, r.backbone, r.setting,
                           format_percent(r.aa), format_percent(r.aaf), format_percent(r.bwt), r.trainable_params);
    }
    return out;
}

std::string render_csv(const std::vector<ReportRow>& rows) {
    std::string out = "run,strategy,backbone,setting,AA,AAF,BWT,trainable_params\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},\"{}\",{},{},{},{}\n", r.run, r.strategy, r.backbone, r.setting,
                           format_percent(r.aa), format_percent(r.aaf), format_percent(r.bwt), r.trainable_params);
    }
    return out;
}

std::string heatmap_csv(const AccuracyMatrix& matrix) {
    std::string out = "task,episode,accuracy\n";
    for (int i = 1; i <= matrix.size(); ++i) {
        for (int j = i; j <= matrix.size(); ++j) {
            if (matrix.defined(i, j)) out += fmt::format("{},{},{:.17g}\n", i, j, matrix.at(i, j));
        }
    }
    return out;
}

ParamReport compute_param_report(const BackboneConfig& backbone, const LoraSettings& lora, int tasks,
                                 int classes_per_task) {
    if (tasks < 1) throw ConfigError("parameter report needs at least one task");
    if (classes_per_task < 1) throw ConfigError("tasks need at least one class");
    ParamReport r;
    r.tasks = tasks;
    r.lorax_total = simulate(Architecture::Lorax, backbone, lora, tasks, classes_per_task, r.lorax_trainable);
    r.full_rank_total =
        simulate(Architecture::FullRankExpansion, backbone, lora, tasks, classes_per_task, r.full_rank_trainable);
    simulate(Architecture::SingleBackbone, backbone, lora, tasks, classes_per_task, r.finetune_trainable);
    const Backbone b = build_backbone(backbone);
    r.backbone_params = b.parameter_count();
    for (const auto& site : list_sites(b, lora.combo)) r.lorax_adapter_params += lora_site_parameter_count(site, lora.rank);
    r.image_parameter_equivalent = image_parameter_equivalent(backbone.image_size, backbone.image_size, backbone.channels);
    r.lorax_task_exemplar_equivalents =
        exemplar_image_equivalents(r.lorax_adapter_params, backbone.image_size, backbone.image_size, backbone.channels);
    return r;
}

std::string render_param_report(const ParamReport& r) {
    auto join = [](const std::vector<std::size_t>& v) {
        std::string s;
        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
        return s;
    };
    std::string out;
    out += fmt::format("backbone parameters:              {}\n", r.backbone_params);
    out += fmt::format("adapter parameters per task:      {}\n", r.lorax_adapter_params);
    out += fmt::format("trainable per task (lorax):       {}\n", join(r.lorax_trainable));
    out += fmt::format("trainable per task (der):         {}\n", join(r.full_rank_trainable));
    out += fmt::format("trainable per task (finetune):    {}\n", join(r.finetune_trainable));
    if (!r.full_rank_trainable.empty() && r.full_rank_trainable.back() > 0) {
        out += fmt::format("lorax / der (final task):         {:.2f}%\n",
                           100.0 * static_cast<double>(r.lorax_trainable.back()) /
                               static_cast<double>(r.full_rank_trainable.back()));
    }
    out += fmt::format("total after {} tasks (lorax):      {}\n", r.tasks, r.lorax_total);
    out += fmt::format("total after {} tasks (der):        {}\n", r.tasks, r.full_rank_total);
    out += fmt::format("parameters per stored image:      {}\n", r.image_parameter_equivalent);
    out += fmt::format("one task's adapters, in images:   {:.2f}\n", r.lorax_task_exemplar_equivalents);
    return out;
}

}  // namespace lorax
