#include "lorax/run_config.hpp"

#include <fstream>
#include <set>
#include <type_traits>

#include "lorax/errors.hpp"

namespace lorax {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads optional fields of one JSON object with type checks, then rejects
// any field it was never asked about.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string file, std::string where)
        : j_(j), file_(std::move(file)), where_(std::move(where)) {
        if (!j_.is_object()) throw ParseError(file_, where_.empty() ? "<document>" : where_, "expected an object");
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return;
        const json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ParseError(file_, path(key), "expected true or false");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ParseError(file_, path(key), "expected an integer");
            if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
                throw ParseError(file_, path(key), "expected a non-negative integer");
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ParseError(file_, path(key), "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ParseError(file_, path(key), "expected a string");
        }
        out = v.get<T>();
    }

    const json* object(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (seen_.count(key) == 0) throw ParseError(file_, path(key), "unknown field");
        }
    }

    const std::string& file() const { return file_; }

private:
    const json& j_;
    std::string file_;
    std::string where_;
    std::set<std::string> seen_;
};

template <class Fn>
auto as_config(const std::string& file, const std::string& field, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        throw ParseError(file, field, e.what());
    }
}

ordered_json to_json(const FingerprintSpec& f) {
    ordered_json j;
    j["type"] = to_string(f.type);
    j["seed"] = f.seed;
    j["amplitude"] = f.amplitude;
    j["period"] = f.period;
    j["period2"] = f.period2;
    j["orientation"] = f.orientation;
    j["phase"] = f.phase;
    j["offset_x"] = f.offset_x;
    j["offset_y"] = f.offset_y;
    return j;
}

FingerprintSpec fingerprint_from_json(const json& j, const std::string& file, const std::string& where) {
    ObjectReader r(j, file, where);
    FingerprintSpec f;
    std::string type = to_string(f.type);
    r.get("type", type);
    f.type = as_config(file, r.path("type"), [&] { return parse_pattern(type); });
    r.get("seed", f.seed);
    r.get("amplitude", f.amplitude);
    r.get("period", f.period);
    r.get("period2", f.period2);
    r.get("orientation", f.orientation);
    r.get("phase", f.phase);
    r.get("offset_x", f.offset_x);
    r.get("offset_y", f.offset_y);
    r.finish();
    return f;
}

std::string absolute_or_empty(const std::string& p) {
    if (p.empty()) return p;
    return fs::absolute(p).lexically_normal().string();
}

}  // namespace

void RunConfig::validate() const {
    backbone.validate();
    stream.validate();
    strategy.validate();
    TrainingConfig t = training;
    t.preprocess.target_size = backbone.image_size;
    t.validate();
    if (scenario_path.empty()) {
        if (stream.image_size < backbone.image_size) {
            throw ConfigError("stream images (" + std::to_string(stream.image_size) + " px) are smaller than the " +
                              std::to_string(backbone.image_size) + " px backbone input");
        }
        if (stream.channels != backbone.channels) throw ConfigError("stream and backbone channel counts differ");
    }
    if (pretrain.tasks < 0 || pretrain.samples_per_class < 2 || pretrain.epochs < 1 || !(pretrain.learning_rate > 0)) {
        throw ConfigError("invalid pretraining settings");
    }
    if (out_dir.empty()) throw ConfigError("output directory must not be empty");
}

ordered_json to_json(const BackboneConfig& c) {
    ordered_json j;
    j["image_size"] = c.image_size;
    j["patch_size"] = c.patch_size;
    j["channels"] = c.channels;
    j["depth"] = c.depth;
    j["embed_dim"] = c.embed_dim;
    j["heads"] = c.heads;
    j["mlp_ratio"] = c.mlp_ratio;
    j["fused_blocks"] = c.fused_blocks;
    j["input_mean"] = c.input_mean;
    j["input_std"] = c.input_std;
    j["seed"] = c.seed;
    return j;
}

BackboneConfig backbone_config_from_json(const json& j, const std::string& file, const std::string& where) {
    ObjectReader r(j, file, where);
    BackboneConfig c;
    r.get("image_size", c.image_size);
    r.get("patch_size", c.patch_size);
    r.get("channels", c.channels);
    r.get("depth", c.depth);
    r.get("embed_dim", c.embed_dim);
    r.get("heads", c.heads);
    r.get("mlp_ratio", c.mlp_ratio);
    r.get("fused_blocks", c.fused_blocks);
    r.get("input_mean", c.input_mean);
    r.get("input_std", c.input_std);
    r.get("seed", c.seed);
    r.finish();
    return c;
}

ordered_json to_json(const StreamConfig& c) {
    ordered_json j;
    j["name"] = c.name;
    j["num_tasks"] = c.num_tasks;
    j["samples_per_class"] = c.samples_per_class;
    j["test_fraction"] = c.test_fraction;
    j["image_size"] = c.image_size;
    j["channels"] = c.channels;
    j["seed"] = c.seed;
    j["amplitude"] = c.amplitude;
    j["noise"] = c.noise;
    j["background_contrast"] = c.background_contrast;
    ordered_json fps = ordered_json::object();
    for (const auto& [index, spec] : c.fingerprint_overrides) fps[std::to_string(index)] = to_json(spec);
    j["fingerprints"] = fps;
    return j;
}

StreamConfig stream_config_from_json(const json& j, const std::string& file, const std::string& where) {
    ObjectReader r(j, file, where);
    StreamConfig c;
    r.get("name", c.name);
    r.get("num_tasks", c.num_tasks);
    r.get("samples_per_class", c.samples_per_class);
    r.get("test_fraction", c.test_fraction);
    r.get("image_size", c.image_size);
    r.get("channels", c.channels);
    r.get("seed", c.seed);
    r.get("amplitude", c.amplitude);
    r.get("noise", c.noise);
    r.get("background_contrast", c.background_contrast);
    if (const json* fps = r.object("fingerprints")) {
        const std::string fp_where = r.path("fingerprints");
        if (!fps->is_object()) throw ParseError(file, fp_where, "expected an object keyed by task index");
        for (const auto& [key, spec] : fps->items()) {
            int index = -1;
            try {
                std::size_t used = 0;
                index = std::stoi(key, &used);
                if (used != key.size()) index = -1;
            } catch (const std::exception&) {
                index = -1;
            }
            if (index < 0) throw ParseError(file, fp_where + "." + key, "keys must be 0-based task indices");
            c.fingerprint_overrides[index] = fingerprint_from_json(spec, file, fp_where + "." + key);
        }
    }
    r.finish();
    return c;
}

ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    ordered_json scenario;
    scenario["path"] = c.scenario_path.empty() ? ordered_json(nullptr) : ordered_json(c.scenario_path);
    scenario["synthetic"] = to_json(c.stream);
    j["scenario"] = scenario;

    ordered_json strategy;
    strategy["kind"] = to_string(c.strategy.kind);
    strategy["rank"] = c.strategy.lora.rank;
    strategy["combo"] = to_string(c.strategy.lora.combo);
    strategy["scale"] = c.strategy.lora.scale;
    strategy["lambda"] = c.strategy.lambda;
    j["strategy"] = strategy;
    j["budget"] = c.budget;

    ordered_json training;
    training["epochs"] = c.training.epochs;
    training["batch_size"] = c.training.batch_size;
    training["learning_rate"] = c.training.learning_rate;
    training["momentum"] = c.training.momentum;
    training["head_lr_scale"] = c.training.head_lr_scale;
    training["allow_resize"] = c.training.preprocess.allow_resize;
    training["resize_factor"] = c.training.preprocess.resize_factor;
    j["training"] = training;

    j["backbone"] = to_json(c.backbone);
    ordered_json pretrain;
    pretrain["tasks"] = c.pretrain.tasks;
    pretrain["samples_per_class"] = c.pretrain.samples_per_class;
    pretrain["epochs"] = c.pretrain.epochs;
    pretrain["learning_rate"] = c.pretrain.learning_rate;
    pretrain["seed"] = c.pretrain.seed;
    j["pretrain"] = pretrain;
    j["seed"] = c.seed;
    j["out"] = c.out_dir;
    return j;
}

RunConfig run_config_from_json(const json& j, const std::string& file) {
    ObjectReader r(j, file, "");
    RunConfig c;
    if (const json* s = r.object("scenario")) {
        ObjectReader sr(*s, file, "scenario");
        sr.get("path", c.scenario_path);
        if (const json* syn = sr.object("synthetic")) c.stream = stream_config_from_json(*syn, file, "scenario.synthetic");
        sr.finish();
    }
    if (const json* s = r.object("strategy")) {
        ObjectReader sr(*s, file, "strategy");
        std::string kind = to_string(c.strategy.kind);
        std::string combo = to_string(c.strategy.lora.combo);
        sr.get("kind", kind);
        sr.get("rank", c.strategy.lora.rank);
        sr.get("combo", combo);
        sr.get("scale", c.strategy.lora.scale);
        sr.get("lambda", c.strategy.lambda);
        sr.finish();
        c.strategy.kind = as_config(file, "strategy.kind", [&] { return parse_strategy(kind); });
        c.strategy.lora.combo = as_config(file, "strategy.combo", [&] { return parse_combo(combo); });
    }
    r.get("budget", c.budget);
    if (const json* t = r.object("training")) {
        ObjectReader tr(*t, file, "training");
        tr.get("epochs", c.training.epochs);
        tr.get("batch_size", c.training.batch_size);
        tr.get("learning_rate", c.training.learning_rate);
        tr.get("momentum", c.training.momentum);
        tr.get("head_lr_scale", c.training.head_lr_scale);
        tr.get("allow_resize", c.training.preprocess.allow_resize);
        tr.get("resize_factor", c.training.preprocess.resize_factor);
        tr.finish();
    }
    if (const json* b = r.object("backbone")) c.backbone = backbone_config_from_json(*b, file, "backbone");
    if (const json* p = r.object("pretrain")) {
        ObjectReader pr(*p, file, "pretrain");
        pr.get("tasks", c.pretrain.tasks);
        pr.get("samples_per_class", c.pretrain.samples_per_class);
        pr.get("epochs", c.pretrain.epochs);
        pr.get("learning_rate", c.pretrain.learning_rate);
        pr.get("seed", c.pretrain.seed);
        pr.finish();
    }
    r.get("seed", c.seed);
    r.get("out", c.out_dir);
    r.finish();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), "<document>", e.what());
    }
    return run_config_from_json(j, path.string());
}

void save_run_config(const fs::path& path, const RunConfig& config) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << to_json(config).dump(2) << "\n";
    if (!out) throw DataError("cannot write " + path.string());
}

Scenario build_scenario(const RunConfig& config) {
    config.validate();
    Scenario s;
    s.budget = config.budget;
    s.training = config.training;
    s.training.preprocess.target_size = config.backbone.image_size;
    s.seed = config.seed;
    if (config.scenario_path.empty()) {
        s.name = config.stream.name;
        s.tasks = generate_stream(config.stream);
        return s;
    }
    const fs::path path = config.scenario_path;
    std::ifstream in(path);
    if (!in) throw DataError("scenario file not found: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), "<document>", e.what());
    }
    if (doc.is_object() && doc.contains("synthetic")) {
        ObjectReader r(doc, path.string(), "");
        std::string name;
        r.get("name", name);
        StreamConfig stream = stream_config_from_json(*r.object("synthetic"), path.string(), "synthetic");
        r.finish();
        s.name = name.empty() ? stream.name : name;
        s.tasks = generate_stream(stream);
        return s;
    }
    ManifestOptions options;
    options.channels = config.backbone.channels;
    options.test_fraction = config.stream.test_fraction;
    options.split_seed = config.seed;
    s.name = doc.is_object() && doc.contains("scenario") && doc["scenario"].is_string()
                 ? doc["scenario"].get<std::string>()
                 : path.stem().string();
    s.tasks = load_manifest(path, options);
    return s;
}

Backbone build_base(const RunConfig& config) {
    config.backbone.validate();
    return pretrained_backbone(config.backbone, config.pretrain);
}

RunRecord execute(const RunConfig& config) {
    const Scenario scenario = build_scenario(config);
    const Backbone base = build_base(config);
    return execute(config, scenario, base);
}

RunRecord execute(const RunConfig& config, const Scenario& scenario, const Backbone& base) {
    config.validate();
    if (!(base.config() == config.backbone)) throw ConfigError("backbone does not match the run configuration");
    RunConfig snapshot = config;
    snapshot.scenario_path = absolute_or_empty(config.scenario_path);
    // the config wins over whatever the caller's scenario carried
    Scenario s = scenario;
    s.budget = config.budget;
    s.training = config.training;
    s.training.preprocess.target_size = config.backbone.image_size;
    s.seed = config.seed;
    RunRecord record = run_scenario(s, config.strategy, base);
    record.config_snapshot = to_json(snapshot).dump(2);
    return record;
}

}  // namespace lorax
