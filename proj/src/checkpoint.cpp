#include "lorax/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lorax/errors.hpp"
#include "lorax/run_config.hpp"

namespace lorax {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'R', 'X', 'T', '0', '0', '0', '1'};

template <class T>
void put(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const fs::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw DataError("truncated tensor file " + path.string());
    }
    return value;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("missing checkpoint file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string(), "<document>", e.what());
    }
}

void write_json(const fs::path& path, const ordered_json& j) {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("cannot write " + path.string());
}

const Matrix& tensor(const std::map<std::string, Matrix>& tensors, const std::string& name, const fs::path& file) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError("tensor '" + name + "' missing from " + file.string());
    return it->second;
}

SiteKind parse_site_kind(const std::string& text, const fs::path& file) {
    for (SiteKind k : {SiteKind::QK, SiteKind::V, SiteKind::QKV, SiteKind::POS}) {
        if (text == to_string(k)) return k;
    }
    throw ParseError(file.string(), "kind", "unknown site kind '" + text + "'");
}

Architecture parse_architecture(const std::string& text, const fs::path& file) {
    for (Architecture a : {Architecture::Lorax, Architecture::FullRankExpansion, Architecture::SingleBackbone}) {
        if (text == to_string(a)) return a;
    }
    throw ParseError(file.string(), "architecture", "unknown architecture '" + text + "'");
}

template <class T>
T field(const json& j, const std::string& key, const fs::path& file) {
    if (!j.contains(key)) throw ParseError(file.string(), key, "missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(file.string(), key, e.what());
    }
}

}  // namespace

void write_tensors(const fs::path& path, const NamedTensors& tensors) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write tensor file " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!out) throw DataError("failed writing tensor file " + path.string());
}

std::map<std::string, Matrix> read_tensors(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("missing tensor file " + path.string());
    char magic[sizeof(kMagic)];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError(path.string() + " is not a tensor file");
    }
    const auto count = get<std::uint32_t>(in, path);
    std::map<std::string, Matrix> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get<std::uint32_t>(in, path);
        if (len > 4096) throw DataError("corrupt tensor name in " + path.string());
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw DataError("truncated tensor file " + path.string());
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (1u << 28)) {
            throw DataError("implausible tensor shape in " + path.string());
        }
        Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
            throw DataError("truncated tensor file " + path.string());
        }
        if (!out.emplace(name, std::move(m)).second) {
            throw DataError("duplicate tensor '" + name + "' in " + path.string());
        }
    }
    return out;
}

void save_backbone(const fs::path& dir, const Backbone& backbone) {
    fs::create_directories(dir);
    NamedTensors tensors;
    backbone.params().visit([&](const std::string& name, const Matrix& m) { tensors.emplace_back(name, m); });
    write_tensors(dir / "backbone.lrxt", tensors);
    write_json(dir / "backbone.json", to_json(backbone.config()));
}

Backbone load_backbone(const fs::path& dir) {
    const fs::path cfg_path = dir / "backbone.json";
    const BackboneConfig config = backbone_config_from_json(read_json(cfg_path), cfg_path.string(), "");
    const fs::path tensor_path = dir / "backbone.lrxt";
    const auto tensors = read_tensors(tensor_path);
    BackboneParams params = build_backbone(config).params();
    std::size_t used = 0;
    params.visit([&](const std::string& name, Matrix& m) {
        const Matrix& stored = tensor(tensors, name, tensor_path);
        if (stored.rows() != m.rows() || stored.cols() != m.cols()) {
            throw DataError("tensor '" + name + "' in " + tensor_path.string() + " has the wrong shape");
        }
        m = stored;
        ++used;
    });
    if (used != tensors.size()) throw DataError(tensor_path.string() + " holds tensors the backbone does not use");
    return Backbone(config, std::move(params));
}

void save_adapters(const fs::path& dir, const AdapterSet& adapters) {
    fs::create_directories(dir);
    NamedTensors tensors;
    ordered_json sites = ordered_json::object();
    for (const auto& [id, ad] : adapters.adapters()) {
        tensors.emplace_back(id + ".A", ad.A);
        tensors.emplace_back(id + ".B", ad.B);
        sites[id] = {{"kind", to_string(ad.kind)}, {"rank", ad.rank}, {"scale", ad.scale}};
    }
    write_tensors(dir / "adapters.lrxt", tensors);
    ordered_json doc;
    doc["task_id"] = adapters.task_id();
    doc["sites"] = sites;
    write_json(dir / "adapters.json", doc);
}

AdapterSet load_adapters(const fs::path& dir) {
    const fs::path meta_path = dir / "adapters.json";
    const json meta = read_json(meta_path);
    const fs::path tensor_path = dir / "adapters.lrxt";
    const auto tensors = read_tensors(tensor_path);
    AdapterSet set(field<int>(meta, "task_id", meta_path));
    if (!meta.contains("sites") || !meta["sites"].is_object()) {
        throw ParseError(meta_path.string(), "sites", "expected an object");
    }
    for (const auto& [id, site] : meta["sites"].items()) {
        LoraAdapter ad;
        ad.site_id = id;
        ad.kind = parse_site_kind(field<std::string>(site, "kind", meta_path), meta_path);
        ad.rank = field<int>(site, "rank", meta_path);
        ad.scale = field<double>(site, "scale", meta_path);
        ad.A = tensor(tensors, id + ".A", tensor_path);
        ad.B = tensor(tensors, id + ".B", tensor_path);
        if (ad.A.rows() != ad.rank || ad.B.cols() != ad.rank) {
            throw DataError("adapter '" + id + "' does not match its declared rank");
        }
        set.insert(std::move(ad));
    }
    set.freeze();
    return set;
}

void save_model(const fs::path& dir, const IncrementalModel& model) {
    if (model.training_active()) throw StateError("cannot checkpoint a model while a task is training");
    fs::create_directories(dir);
    save_backbone(dir / "backbone", model.base());
    ordered_json tasks = ordered_json::array();
    for (std::size_t i = 0; i < model.extractors().size(); ++i) {
        const TaskExtractor& ext = model.extractors()[i];
        const fs::path task_dir = dir / ("task_" + std::to_string(i + 1));
        ordered_json entry;
        entry["task_id"] = ext.task_id;
        if (ext.adapters) {
            save_adapters(task_dir, *ext.adapters);
            entry["extractor"] = "adapters";
        } else if (ext.owns_backbone) {
            save_backbone(task_dir, *ext.backbone);
            entry["extractor"] = "backbone";
        } else {
            fs::create_directories(task_dir);
            entry["extractor"] = "base";
        }
        tasks.push_back(entry);
    }
    const ExpandingClassifier& clf = model.classifier();
    write_tensors(dir / "classifier.lrxt", {{"weight", clf.weight}, {"bias", clf.bias}});
    ordered_json doc;
    doc["architecture"] = to_string(model.architecture());
    doc["class_ids"] = clf.class_ids;
    doc["task_classes"] = model.task_classes();
    doc["extractors"] = tasks;
    write_json(dir / "manifest.json", doc);
}

IncrementalModel load_model(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    const json doc = read_json(manifest_path);
    const Architecture arch = parse_architecture(field<std::string>(doc, "architecture", manifest_path), manifest_path);
    auto base = std::make_shared<Backbone>(load_backbone(dir / "backbone"));
    if (!doc.contains("extractors") || !doc["extractors"].is_array()) {
        throw ParseError(manifest_path.string(), "extractors", "expected an array");
    }
    std::vector<TaskExtractor> extractors;
    for (std::size_t i = 0; i < doc["extractors"].size(); ++i) {
        const json& entry = doc["extractors"][i];
        const fs::path task_dir = dir / ("task_" + std::to_string(i + 1));
        TaskExtractor ext;
        ext.task_id = field<int>(entry, "task_id", manifest_path);
        const std::string kind = field<std::string>(entry, "extractor", manifest_path);
        if (kind == "adapters") {
            ext.adapters = load_adapters(task_dir);
            ext.backbone = base;
        } else if (kind == "backbone") {
            auto own = std::make_shared<Backbone>(load_backbone(task_dir));
            if (arch == Architecture::FullRankExpansion) own->freeze();
            ext.backbone = std::move(own);
            ext.owns_backbone = true;
        } else if (kind == "base") {
            ext.backbone = base;
        } else {
            throw ParseError(manifest_path.string(), "extractors[" + std::to_string(i) + "].extractor",
                             "unknown extractor kind '" + kind + "'");
        }
        extractors.push_back(std::move(ext));
    }
    const fs::path clf_path = dir / "classifier.lrxt";
    const auto tensors = read_tensors(clf_path);
    ExpandingClassifier clf;
    clf.weight = tensor(tensors, "weight", clf_path);
    clf.bias = tensor(tensors, "bias", clf_path);
    clf.class_ids = field<std::vector<int>>(doc, "class_ids", manifest_path);
    auto task_classes = field<std::vector<std::vector<int>>>(doc, "task_classes", manifest_path);
    return IncrementalModel::restore(arch, std::move(base), std::move(extractors), std::move(clf),
                                     std::move(task_classes));
}

void save_buffer(const fs::path& path, const ExemplarBuffer& buffer) {
    ordered_json classes = ordered_json::object();
    for (const auto& [c, refs] : buffer.per_class()) {
        ordered_json list = ordered_json::array();
        for (const auto& r : refs) list.push_back({{"uid", r.uid}, {"source", r.source}});
        classes[std::to_string(c)] = list;
    }
    ordered_json doc;
    doc["budget"] = buffer.budget();
    doc["quota"] = buffer.quota();
    doc["classes"] = classes;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_json(path, doc);
}

ExemplarBuffer load_buffer(const fs::path& path) {
    const json doc = read_json(path);
    ExemplarBuffer buffer(field<std::size_t>(doc, "budget", path));
    if (!doc.contains("classes") || !doc["classes"].is_object()) {
        throw ParseError(path.string(), "classes", "expected an object");
    }
    for (const auto& [key, list] : doc["classes"].items()) {
        int c = 0;
        try {
            c = std::stoi(key);
        } catch (const std::exception&) {
            throw ParseError(path.string(), "classes." + key, "class keys must be integers");
        }
        auto& refs = buffer.mutable_per_class()[c];
        for (const auto& r : list) {
            refs.push_back({field<std::uint64_t>(r, "uid", path), field<std::string>(r, "source", path)});
        }
    }
    return buffer;
}

}  // namespace lorax
