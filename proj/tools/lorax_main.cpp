// lorax: run, sweep, report, params, generate.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lorax/errors.hpp"
#include "lorax/report.hpp"
#include "lorax/run_config.hpp"

namespace fs = std::filesystem;
using namespace lorax;

namespace {

// Flags shared by run, sweep, params and generate. Only flags that were given
// override the base config.
struct Overrides {
    std::string config_path;
    std::string scenario;
    std::string strategy;
    int rank = 0;
    std::string combo;
    double lambda = 0;
    double alpha = 0;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    int epochs = 0;
    double lr = 0;
    int batch_size = 0;
    std::string out;
    bool allow_resize = false;
    int depth = 0, embed_dim = 0, patch_size = 0, heads = 0, image_size = 0;
    int tasks = 0, samples_per_class = 0;
    double amplitude = 0, noise = 0;
    int pretrain_tasks = 0, pretrain_epochs = 0;

    CLI::Option* o_scenario = nullptr;
    CLI::Option *o_strategy = nullptr, *o_rank = nullptr, *o_combo = nullptr, *o_lambda = nullptr,
                *o_alpha = nullptr;
    CLI::Option *o_budget = nullptr, *o_seed = nullptr, *o_epochs = nullptr, *o_lr = nullptr, *o_batch = nullptr;
    CLI::Option *o_out = nullptr, *o_resize = nullptr;
    CLI::Option *o_depth = nullptr, *o_embed = nullptr, *o_patch = nullptr, *o_heads = nullptr, *o_image = nullptr;
    CLI::Option *o_tasks = nullptr, *o_spc = nullptr, *o_amp = nullptr, *o_noise = nullptr;
    CLI::Option *o_ptasks = nullptr, *o_pepochs = nullptr;

    void add_backbone(CLI::App* app) {
        o_depth = app->add_option("--depth", depth, "transformer blocks");
        o_embed = app->add_option("--embed-dim", embed_dim, "embedding width");
        o_patch = app->add_option("--patch-size", patch_size, "patch side in pixels");
        o_heads = app->add_option("--heads", heads, "attention heads");
        o_image = app->add_option("--image-size", image_size, "backbone input side in pixels");
    }

    void add_stream(CLI::App* app) {
        o_tasks = app->add_option("--tasks", tasks, "synthetic tasks");
        o_spc = app->add_option("--samples-per-class", samples_per_class, "synthetic images per class");
        o_amp = app->add_option("--amplitude", amplitude, "fingerprint amplitude, 8-bit levels");
        o_noise = app->add_option("--noise", noise, "pixel noise sigma, 8-bit levels");
        o_seed = app->add_option("--seed", seed, "run and stream seed");
    }

    void add_run(CLI::App* app) {
        app->add_option("--config", config_path, "config.json to start from (e.g. a stored snapshot)");
        o_scenario = app->add_option("--scenario", scenario, "manifest or synthetic scenario JSON");
        o_strategy = app->add_option("--strategy", strategy, "lorax, finetune, der or oracle");
        o_rank = app->add_option("--rank", rank, "LoRA rank");
        o_combo = app->add_option("--combo", combo, "v, qk, qkv or all");
        o_lambda = app->add_option("--lambda", lambda, "diversity loss weight");
        o_alpha = app->add_option("--alpha", alpha, "LoRA scale");
        o_budget = app->add_option("--budget", budget, "exemplar budget");
        o_epochs = app->add_option("--epochs", epochs, "epochs per task");
        o_lr = app->add_option("--lr", lr, "learning rate");
        o_batch = app->add_option("--batch-size", batch_size, "batch size");
        o_out = app->add_option("--out", out, "output directory");
        o_resize = app->add_option("--allow-resize", allow_resize, "resize before cropping (true/false)");
        o_ptasks = app->add_option("--pretrain-tasks", pretrain_tasks, "pretext tasks for the base (0 = off)");
        o_pepochs = app->add_option("--pretrain-epochs", pretrain_epochs, "pretext training epochs");
        add_backbone(app);
        add_stream(app);
    }

    static bool given(const CLI::Option* o) { return o != nullptr && o->count() > 0; }

    RunConfig apply(RunConfig c) const {
        if (given(o_scenario)) c.scenario_path = scenario;
        if (given(o_strategy)) c.strategy.kind = parse_strategy(strategy);
        if (given(o_rank)) c.strategy.lora.rank = rank;
        if (given(o_combo)) c.strategy.lora.combo = parse_combo(combo);
        if (given(o_lambda)) c.strategy.lambda = lambda;
        if (given(o_alpha)) c.strategy.lora.scale = alpha;
        if (given(o_budget)) c.budget = budget;
        if (given(o_seed)) {
            c.seed = seed;
            c.stream.seed = seed;
        }
        if (given(o_epochs)) c.training.epochs = epochs;
        if (given(o_lr)) c.training.learning_rate = lr;
        if (given(o_batch)) c.training.batch_size = batch_size;
        if (given(o_out)) c.out_dir = out;
        if (given(o_resize)) c.training.preprocess.allow_resize = allow_resize;
        if (given(o_depth)) c.backbone.depth = depth;
        if (given(o_embed)) c.backbone.embed_dim = embed_dim;
        if (given(o_patch)) c.backbone.patch_size = patch_size;
        if (given(o_heads)) c.backbone.heads = heads;
        if (given(o_image)) {
            c.backbone.image_size = image_size;
            if (!given(o_scenario) && c.stream.image_size < image_size) c.stream.image_size = image_size;
        }
        if (given(o_tasks)) c.stream.num_tasks = tasks;
        if (given(o_spc)) c.stream.samples_per_class = samples_per_class;
        if (given(o_amp)) c.stream.amplitude = amplitude;
        if (given(o_noise)) c.stream.noise = noise;
        if (given(o_ptasks)) c.pretrain.tasks = pretrain_tasks;
        if (given(o_pepochs)) c.pretrain.epochs = pretrain_epochs;
        return c;
    }

    RunConfig resolve() const {
        RunConfig base;
        if (!config_path.empty()) base = load_run_config(config_path);
        RunConfig c = apply(base);
        c.validate();
        return c;
    }
};

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
}

void print_summary(const std::string& label, const RunRecord& record) {
    const MetricSummary m = summarize(record.accuracy);
    std::cout << label << ": AA " << format_percent(m.aa) << "  AAF " << format_percent(m.aaf) << "  BWT "
              << format_percent(m.bwt) << "  (" << record.wall_time << " s)\n";
}

int cmd_run(const Overrides& o) {
    const RunConfig config = o.resolve();
    const RunRecord record = execute(config);
    write_run(config.out_dir, config, record);
    print_summary(config.out_dir, record);
    return kExitOk;
}

std::string value_label(const std::string& axis, const std::string& value) { return axis + "_" + value; }

int cmd_sweep(const Overrides& o, const std::string& axis, const std::vector<std::string>& values) {
    const RunConfig base_config = o.resolve();
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    // stream and base are shared by every point of the sweep
    const Scenario scenario = build_scenario(base_config);
    const Backbone base = build_base(base_config);

    std::vector<ReportRow> rows;
    for (const auto& v : values) {
        RunConfig c = base_config;
        try {
            if (axis == "rank") {
                c.strategy.lora.rank = std::stoi(v);
            } else if (axis == "combo") {
                c.strategy.lora.combo = parse_combo(v);
            } else if (axis == "lambda") {
                c.strategy.lambda = std::stod(v);
            } else if (axis == "budget") {
                c.budget = static_cast<std::size_t>(std::stoull(v));
            } else {
                throw ConfigError("unknown sweep axis '" + axis + "' (rank, combo, lambda, budget)");
            }
        } catch (const std::logic_error&) {
            throw ConfigError("bad " + axis + " value '" + v + "'");
        }
        const fs::path dir = fs::path(base_config.out_dir) / value_label(axis, v);
        c.out_dir = dir.string();
        c.validate();
        const RunRecord record = execute(c, scenario, base);
        write_run(dir, c, record);
        print_summary(dir.string(), record);
        rows.push_back(load_report_row(dir));
    }
    sort_rows(rows);
    const std::string md = render_markdown(rows);
    write_file(fs::path(base_config.out_dir) / "report.md", md);
    write_file(fs::path(base_config.out_dir) / "report.csv", render_csv(rows));
    std::cout << "\n" << md;
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& csv, const std::string& markdown,
               const std::string& heatmap_dir) {
    std::vector<ReportRow> rows;
    for (const auto& d : dirs) {
        rows.push_back(load_report_row(d));
        if (!heatmap_dir.empty()) {
            std::ifstream in(fs::path(d) / "matrix.csv", std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            write_file(fs::path(heatmap_dir) / (rows.back().run + ".csv"), heatmap_csv(AccuracyMatrix::from_csv(ss.str())));
        }
    }
    sort_rows(rows);
    const std::string md = render_markdown(rows);
    std::cout << md;
    if (!csv.empty()) write_file(csv, render_csv(rows));
    if (!markdown.empty()) write_file(markdown, md);
    return kExitOk;
}

int cmd_params(const Overrides& o) {
    const RunConfig c = o.resolve();
    const int tasks = c.stream.num_tasks;
    std::cout << "rank " << c.strategy.lora.rank << ", combo " << to_string(c.strategy.lora.combo) << ", " << tasks
              << " tasks\n";
    std::cout << render_param_report(compute_param_report(c.backbone, c.strategy.lora, tasks));
    return kExitOk;
}

int cmd_generate(const Overrides& o) {
    const RunConfig c = o.resolve();
    export_stream(generate_stream(c.stream), c.out_dir, c.stream.name);
    std::cout << "wrote " << c.stream.num_tasks << " tasks to " << c.out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LoRAX class-incremental learning toolkit"};
    app.require_subcommand(1);

    Overrides run_opts;
    auto* run = app.add_subcommand("run", "train one strategy over a scenario and store the run");
    run_opts.add_run(run);

    Overrides sweep_opts;
    std::string axis;
    std::vector<std::string> values;
    auto* sweep = app.add_subcommand("sweep", "one run per value of rank, combo, lambda or budget");
    sweep_opts.add_run(sweep);
    sweep->add_option("--axis", axis, "rank, combo, lambda or budget")->required();
    sweep->add_option("--values", values, "values to try")->required()->delimiter(',');

    std::vector<std::string> dirs;
    std::string csv, markdown, heatmap_dir;
    auto* report = app.add_subcommand("report", "comparison table over run directories");
    report->add_option("dirs", dirs, "run directories")->required();
    report->add_option("--csv", csv, "also write the table as CSV");
    report->add_option("--markdown", markdown, "also write the table as markdown");
    report->add_option("--heatmap-dir", heatmap_dir, "write per-run heatmap data here");

    Overrides params_opts;
    auto* params = app.add_subcommand("params", "parameter accounting for a backbone and adapter setting");
    params_opts.add_run(params);

    Overrides gen_opts;
    auto* generate = app.add_subcommand("generate", "write a synthetic stream as PNG folders plus manifest");
    gen_opts.add_run(generate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) return cmd_run(run_opts);
        if (*sweep) return cmd_sweep(sweep_opts, axis, values);
        if (*report) return cmd_report(dirs, csv, markdown, heatmap_dir);
        if (*params) return cmd_params(params_opts);
        if (*generate) return cmd_generate(gen_opts);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
