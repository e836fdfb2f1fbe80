#include "lorax/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lorax/errors.hpp"
#include "lorax/rng.hpp"

namespace lorax {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kMaxFingerprintSimilarity = 0.5;

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Smooth field: a coarse uniform grid upsampled bilinearly.
Matrix smooth_field(Rng& rng, int size, int grid) {
    Matrix coarse(grid, grid);
    for (Eigen::Index i = 0; i < coarse.size(); ++i) coarse.data()[i] = rng.uniform(-1.0, 1.0);
    return resize_bilinear(coarse, size, size);
}

Image render(Rng& rng, const StreamConfig& cfg, const Matrix* pattern) {
    Image img(cfg.image_size, cfg.image_size, cfg.channels);
    const double brightness = 128.0 + rng.uniform(-20.0, 20.0);
    for (int c = 0; c < cfg.channels; ++c) {
        const Matrix field = smooth_field(rng, cfg.image_size, 4);
        for (int y = 0; y < cfg.image_size; ++y) {
            for (int x = 0; x < cfg.image_size; ++x) {
                double v = brightness + cfg.background_contrast * field(y, x) + rng.normal(0.0, cfg.noise);
                if (pattern != nullptr) v += (*pattern)(y, x);
                img.at(c, y, x) = quantize(v);
            }
        }
    }
    return img;
}

std::vector<fs::path> png_files(const fs::path& dir, std::vector<std::string>& missing) {
    std::vector<fs::path> files;
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) {
        missing.push_back(dir.string());
        return files;
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) missing.push_back(dir.string() + " (no PNG images)");
    return files;
}

std::vector<std::string> string_list(const nlohmann::json& obj, const std::string& key, const std::string& where,
                                     const std::string& file, bool required) {
    if (!obj.contains(key)) {
        if (required) throw ParseError(file, where + "." + key, "missing");
        return {};
    }
    const auto& v = obj.at(key);
    if (!v.is_array()) throw ParseError(file, where + "." + key, "expected an array of directory paths");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string()) {
            throw ParseError(file, where + "." + key + "[" + std::to_string(i) + "]", "expected a string");
        }
        out.push_back(v[i].get<std::string>());
    }
    if (required && out.empty()) throw ParseError(file, where + "." + key, "must list at least one directory");
    return out;
}

}  // namespace

const char* to_string(PatternType type) {
    switch (type) {
        case PatternType::HighFrequencyPeriodic: return "high_frequency_periodic";
        case PatternType::Checker: return "checker";
        case PatternType::FrequencyNotch: return "frequency_notch";
    }
    return "?";
}

PatternType parse_pattern(const std::string& text) {
    if (text == "high_frequency_periodic") return PatternType::HighFrequencyPeriodic;
    if (text == "checker") return PatternType::Checker;
    if (text == "frequency_notch") return PatternType::FrequencyNotch;
    throw ConfigError("unknown fingerprint pattern '" + text + "'");
}

FingerprintSpec make_fingerprint(std::uint64_t task_seed, int task_index, double amplitude) {
    Rng rng(derive_seed(task_seed, 0xF1D6));
    FingerprintSpec spec;
    spec.seed = task_seed;
    spec.amplitude = amplitude;
    spec.orientation = static_cast<int>(rng.uniform_index(4));
    spec.offset_x = static_cast<int>(rng.uniform_index(4));
    spec.offset_y = static_cast<int>(rng.uniform_index(4));
    switch (task_index % 3) {
        case 0: {
            spec.type = PatternType::HighFrequencyPeriodic;
            const std::size_t cycles = 2 + rng.uniform_index(3);  // per 8 pixels
            spec.period = 8.0 / static_cast<double>(cycles);
            // Phases on the sampling grid keep the pattern's full amplitude.
            spec.phase = cycles == 4 ? std::numbers::pi * static_cast<double>(rng.uniform_index(2))
                                     : kTwoPi * static_cast<double>(rng.uniform_index(8)) / 8.0;
            break;
        }
        case 1:
            spec.type = PatternType::Checker;
            spec.period = 2.0 * static_cast<double>(1 + rng.uniform_index(2));
            break;
        default:
            spec.type = PatternType::FrequencyNotch;
            spec.period = 8.0 / static_cast<double>(2 + rng.uniform_index(2));
            spec.period2 = 8.0 / static_cast<double>(2 + rng.uniform_index(2));
            spec.phase = rng.uniform(0.0, kTwoPi);
            break;
    }
    return spec;
}

double fingerprint_similarity(const FingerprintSpec& a, const FingerprintSpec& b) {
    // Power spectra of one 8 x 8 tile; every pattern repeats on that grid.
    auto power = [](const FingerprintSpec& spec) {
        FingerprintSpec unit = spec;
        unit.amplitude = 1.0;
        const Matrix tile = fingerprint_pattern(unit, 8, 8);
        std::vector<double> p(64, 0.0);
        for (int u = 0; u < 8; ++u) {
            for (int v = 0; v < 8; ++v) {
                double re = 0.0;
                double im = 0.0;
                for (int y = 0; y < 8; ++y) {
                    for (int x = 0; x < 8; ++x) {
                        const double angle = -kTwoPi * (u * y + v * x) / 8.0;
                        re += tile(y, x) * std::cos(angle);
                        im += tile(y, x) * std::sin(angle);
                    }
                }
                p[static_cast<std::size_t>(u * 8 + v)] = re * re + im * im;
            }
        }
        return p;
    };
    const auto pa = power(a);
    const auto pb = power(b);
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        dot += pa[i] * pb[i];
        na += pa[i] * pa[i];
        nb += pb[i] * pb[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

Matrix fingerprint_pattern(const FingerprintSpec& spec, int height, int width) {
    if (spec.period < 2.0) throw ConfigError("fingerprint period must be at least 2 pixels");
    Matrix p(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double v = 0.0;
            switch (spec.type) {
                case PatternType::HighFrequencyPeriodic: {
                    int u = x;
                    if (spec.orientation == 1) u = y;
                    else if (spec.orientation == 2) u = x + y;
                    else if (spec.orientation == 3) u = x - y;
                    v = std::cos(kTwoPi * u / spec.period + spec.phase);
                    break;
                }
                case PatternType::Checker: {
                    const int cell = std::max(1, static_cast<int>(spec.period / 2.0));
                    const int parity = ((x + spec.offset_x) / cell + (y + spec.offset_y) / cell) % 2;
                    v = parity == 0 ? 1.0 : -1.0;
                    break;
                }
                case PatternType::FrequencyNotch:
                    v = std::numbers::sqrt2 / 2.0 * (std::cos(kTwoPi * (x / spec.period + y / spec.period2) + spec.phase) +
                               std::cos(kTwoPi * (x / spec.period2 - y / spec.period) + 2.0 * spec.phase));
                    break;
            }
            p(y, x) = spec.amplitude * v;
        }
    }
    return p;
}

std::vector<int> TaskSpec::class_ids() const {
    std::vector<int> out;
    for (const auto& c : classes) out.push_back(c.id);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> TaskSpec::real_ids() const {
    std::vector<int> out;
    for (const auto& c : classes) {
        if (c.real) out.push_back(c.id);
    }
    return out;
}

void TaskSpec::validate() const {
    bool has_real = false;
    bool has_fake = false;
    for (const auto& c : classes) (c.real ? has_real : has_fake) = true;
    if (!has_real || !has_fake) {
        throw DataError("task '" + name + "' needs at least one real and one fake class");
    }
    std::set<int> ids;
    for (const auto& c : classes) ids.insert(c.id);
    for (const auto* split : {&train, &test}) {
        for (const auto& s : *split) {
            if (ids.count(s.label) == 0) throw DataError("task '" + name + "' has a sample with a foreign label");
        }
    }
}

void StreamConfig::validate() const {
    if (num_tasks < 1) throw ConfigError("num_tasks must be positive");
    if (samples_per_class < 2) throw ConfigError("samples_per_class must be at least 2");
    if (image_size < 4) throw ConfigError("image_size must be at least 4");
    if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
    if (amplitude < 0.0 || noise < 0.0) throw ConfigError("amplitude and noise must be non-negative");
}

std::vector<TaskSpec> generate_stream(const StreamConfig& cfg) {
    cfg.validate();
    const int test_count =
        std::clamp(static_cast<int>(std::lround(cfg.samples_per_class * cfg.test_fraction)), 1,
                   cfg.samples_per_class - 1);
    const int train_count = cfg.samples_per_class - test_count;
    std::vector<TaskSpec> tasks;
    std::uint64_t uid = 0;
    for (int t = 0; t < cfg.num_tasks; ++t) {
        const std::uint64_t task_seed = derive_seed(cfg.seed, 0x7A5C, static_cast<std::uint64_t>(t));
        TaskSpec task;
        task.task_id = t + 1;
        task.name = cfg.name + "_task" + std::to_string(t + 1);
        task.samples_per_class = cfg.samples_per_class;
        auto override_it = cfg.fingerprint_overrides.find(t);
        if (override_it != cfg.fingerprint_overrides.end()) {
            task.fingerprint = override_it->second;
        } else {
            // Redraw until the spectrum differs from every earlier task. When
            // the task's own family runs out of variants the other families
            // are tried too; the least similar draw is kept.
            double best_similarity = 2.0;
            for (std::uint64_t attempt = 0; attempt < 128 && best_similarity > kMaxFingerprintSimilarity; ++attempt) {
                const std::uint64_t seed = attempt == 0 ? task_seed : derive_seed(task_seed, 0xA77, attempt);
                const int family = attempt < 64 ? t : t + 1 + static_cast<int>(attempt % 2);
                const FingerprintSpec candidate = make_fingerprint(seed, family, cfg.amplitude);
                double similarity = 0.0;
                for (const auto& earlier : tasks) {
                    similarity = std::max(similarity, fingerprint_similarity(candidate, *earlier.fingerprint));
                }
                if (similarity < best_similarity) {
                    best_similarity = similarity;
                    task.fingerprint = candidate;
                }
            }
        }
        task.classes = {{2 * t, task.name + "/real", true}, {2 * t + 1, task.name + "/fake", false}};
        const Matrix pattern = fingerprint_pattern(*task.fingerprint, cfg.image_size, cfg.image_size);

        for (const auto& cls : task.classes) {
            Rng rng(derive_seed(task_seed, 0x5A3, static_cast<std::uint64_t>(cls.id)));
            for (int i = 0; i < cfg.samples_per_class; ++i) {
                Sample s;
                s.uid = uid++;
                s.label = cls.id;
                s.task_index = t;
                const bool is_test = i >= train_count;
                s.source = "synthetic:" + cls.name + (is_test ? "/test/" : "/train/") + std::to_string(i);
                s.image = render(rng, cfg, cls.real ? nullptr : &pattern);
                (is_test ? task.test : task.train).push_back(std::move(s));
            }
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

std::vector<TaskSpec> generate_stream(int num_tasks, int samples_per_class, int image_size, std::uint64_t seed) {
    StreamConfig cfg;
    cfg.num_tasks = num_tasks;
    cfg.samples_per_class = samples_per_class;
    cfg.image_size = image_size;
    cfg.seed = seed;
    return generate_stream(cfg);
}

std::vector<TaskSpec> load_manifest(const fs::path& path, const ManifestOptions& options) {
    const std::string file = path.string();
    std::ifstream in(path);
    if (!in) throw DataError("manifest not found: " + file);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(file, "<document>", std::string("invalid JSON at byte ") + std::to_string(e.byte) + ": " +
                                                 e.what());
    }
    if (!doc.is_object()) throw ParseError(file, "<document>", "expected a JSON object");
    if (!doc.contains("tasks") || !doc["tasks"].is_array() || doc["tasks"].empty()) {
        throw ParseError(file, "tasks", "expected a non-empty array");
    }
    if (doc.contains("scenario") && !doc["scenario"].is_string()) {
        throw ParseError(file, "scenario", "expected a string");
    }
    const fs::path root = path.parent_path();
    std::vector<std::string> missing;
    std::vector<TaskSpec> tasks;
    std::uint64_t uid = 0;
    for (std::size_t t = 0; t < doc["tasks"].size(); ++t) {
        const auto& entry = doc["tasks"][t];
        const std::string where = "tasks[" + std::to_string(t) + "]";
        if (!entry.is_object()) throw ParseError(file, where, "expected an object");
        if (!entry.contains("name") || !entry["name"].is_string()) throw ParseError(file, where + ".name", "missing");
        TaskSpec task;
        task.task_id = static_cast<int>(t) + 1;
        task.name = entry["name"].get<std::string>();
        const int real_id = 2 * static_cast<int>(t);
        const int fake_id = real_id + 1;
        task.classes = {{real_id, task.name + "/real", true}, {fake_id, task.name + "/fake", false}};

        const auto real_dirs = string_list(entry, "real_dirs", where, file, true);
        const auto fake_dirs = string_list(entry, "fake_dirs", where, file, true);
        const auto test_real = string_list(entry, "test_real_dirs", where, file, false);
        const auto test_fake = string_list(entry, "test_fake_dirs", where, file, false);
        const bool explicit_split = !test_real.empty() || !test_fake.empty();
        if (explicit_split && (test_real.empty() || test_fake.empty())) {
            throw ParseError(file, where, "test_real_dirs and test_fake_dirs must be given together");
        }

        auto collect = [&](const std::vector<std::string>& dirs) {
            std::vector<fs::path> files;
            for (const auto& d : dirs) {
                auto found = png_files(root / d, missing);
                files.insert(files.end(), found.begin(), found.end());
            }
            return files;
        };
        auto add = [&](const std::vector<fs::path>& files, int label, std::vector<Sample>& out) {
            for (const auto& f : files) {
                Sample s;
                s.uid = uid++;
                s.label = label;
                s.task_index = static_cast<int>(t);
                s.source = f.string();
                out.push_back(std::move(s));
            }
        };
        for (const auto& [dirs, test_dirs, label] :
             {std::tuple{real_dirs, test_real, real_id}, std::tuple{fake_dirs, test_fake, fake_id}}) {
            auto files = collect(dirs);
            if (explicit_split) {
                add(files, label, task.train);
                add(collect(test_dirs), label, task.test);
            } else {
                Rng rng(derive_seed(options.split_seed, static_cast<std::uint64_t>(label)));
                rng.shuffle(files);
                const std::size_t n_test =
                    files.size() < 2 ? 0
                                     : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(
                                                                    files.size() * options.test_fraction)));
                std::vector<fs::path> test(files.begin(), files.begin() + static_cast<std::ptrdiff_t>(n_test));
                std::vector<fs::path> train(files.begin() + static_cast<std::ptrdiff_t>(n_test), files.end());
                std::sort(test.begin(), test.end());
                std::sort(train.begin(), train.end());
                add(train, label, task.train);
                add(test, label, task.test);
            }
        }
        tasks.push_back(std::move(task));
    }
    if (!missing.empty()) {
        std::ostringstream msg;
        msg << "manifest " << file << " references missing data:";
        for (const auto& m : missing) msg << "\n  " << m;
        throw DataError(msg.str());
    }
    for (auto& task : tasks) {
        for (auto* split : {&task.train, &task.test}) {
            for (auto& s : *split) s.image = read_png(s.source, options.channels);
        }
        task.samples_per_class = static_cast<int>((task.train.size() + task.test.size()) / task.classes.size());
        task.validate();
    }
    return tasks;
}

void export_stream(const std::vector<TaskSpec>& tasks, const fs::path& dir, const std::string& scenario) {
    nlohmann::ordered_json doc;
    doc["scenario"] = scenario;
    doc["tasks"] = nlohmann::json::array();
    for (const auto& task : tasks) {
        const std::string base = "task_" + std::to_string(task.task_id);
        std::map<int, bool> is_real;
        for (const auto& c : task.classes) is_real[c.id] = c.real;
        for (const auto& [split, samples] : {std::pair{"train", &task.train}, std::pair{"test", &task.test}}) {
            fs::create_directories(dir / base / split / "real");
            fs::create_directories(dir / base / split / "fake");
            for (const auto& s : *samples) {
                char name[32];
                std::snprintf(name, sizeof(name), "%08llu.png", static_cast<unsigned long long>(s.uid));
                write_png(dir / base / split / (is_real[s.label] ? "real" : "fake") / name, s.image);
            }
        }
        nlohmann::ordered_json entry;
        entry["name"] = task.name;
        entry["real_dirs"] = {base + "/train/real"};
        entry["fake_dirs"] = {base + "/train/fake"};
        entry["test_real_dirs"] = {base + "/test/real"};
        entry["test_fake_dirs"] = {base + "/test/fake"};
        doc["tasks"].push_back(entry);
    }
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    out << doc.dump(2) << "\n";
    if (!out) throw DataError("cannot write manifest in " + dir.string());
}

Matrix resize_bilinear(const Matrix& plane, int out_h, int out_w) {
    const int in_h = static_cast<int>(plane.rows());
    const int in_w = static_cast<int>(plane.cols());
    const double sy = static_cast<double>(in_h) / out_h;
    const double sx = static_cast<double>(in_w) / out_w;
    Matrix out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            const double top = (1.0 - wx) * plane(y0, x0) + wx * plane(y0, x1);
            const double bottom = (1.0 - wx) * plane(y1, x0) + wx * plane(y1, x1);
            out(y, x) = (1.0 - wy) * top + wy * bottom;
        }
    }
    return out;
}

RowVector preprocess(const Image& image, const PreprocessOptions& options) {
    const int target = options.target_size;
    if (target <= 0) throw ConfigError("target size must be positive");
    if (image.width < target || image.height < target) {
        throw DataError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                        " is smaller than the " + std::to_string(target) + "x" + std::to_string(target) +
                        " crop");
    }
    if (options.allow_resize && options.resize_factor < 1) throw ConfigError("resize factor must be >= 1");
    const int top = (image.height - target) / 2;
    const int left = (image.width - target) / 2;
    RowVector out(static_cast<Eigen::Index>(image.channels) * target * target);
    for (int c = 0; c < image.channels; ++c) {
        Matrix plane(image.height, image.width);
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) plane(y, x) = image.at(c, y, x) / 255.0;
        }
        if (options.allow_resize) {
            const int small_h = std::max(1, image.height / options.resize_factor);
            const int small_w = std::max(1, image.width / options.resize_factor);
            plane = resize_bilinear(resize_bilinear(plane, small_h, small_w), image.height, image.width);
        }
        for (int y = 0; y < target; ++y) {
            for (int x = 0; x < target; ++x) {
                out(static_cast<Eigen::Index>(c) * target * target + y * target + x) = plane(top + y, left + x);
            }
        }
    }
    return out;
}

Matrix preprocess_batch(const std::vector<const Sample*>& samples, const PreprocessOptions& options) {
    if (samples.empty()) return Matrix(0, 0);
    Matrix out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        RowVector row = preprocess(samples[i]->image, options);
        if (i == 0) out.resize(static_cast<Eigen::Index>(samples.size()), row.size());
        if (row.size() != out.cols()) throw DataError("images in a batch have different sizes");
        out.row(static_cast<Eigen::Index>(i)) = row;
    }
    return out;
}

}  // namespace lorax
