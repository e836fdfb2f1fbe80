#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lorax/backbone.hpp"
#include "lorax/image_io.hpp"

namespace lorax {

struct Sample {
    std::uint64_t uid = 0;
    int label = 0;
    int task_index = 0;  // 0-based position in the stream
    std::string source;  // file path, or a synthetic descriptor
    Image image;
};

struct ClassInfo {
    int id = 0;
    std::string name;
    bool real = false;
};

enum class PatternType { HighFrequencyPeriodic, Checker, FrequencyNotch };

const char* to_string(PatternType type);
PatternType parse_pattern(const std::string& text);

/// Additive zero-mean artifact a synthetic generator leaves on its images.
struct FingerprintSpec {
    std::uint64_t seed = 0;
    PatternType type = PatternType::HighFrequencyPeriodic;
    double amplitude = 6.0;  // in 8-bit intensity levels
    double period = 2.0;     // pixels per cycle (checker: two cells)
    double period2 = 3.0;    // second peak of a frequency-notch pattern
    int orientation = 0;     // 0: along x, 1: along y, 2: diagonal, 3: anti-diagonal
    double phase = 0.0;
    int offset_x = 0;
    int offset_y = 0;

    double spatial_frequency() const { return 1.0 / period; }
};

/// Deterministic fingerprint for task `task_index`; the pattern family cycles
/// through periodic, checker and frequency-notch. Every pattern repeats on an
/// 8-pixel grid, like upsampling artifacts of a generator with stride 2.
FingerprintSpec make_fingerprint(std::uint64_t task_seed, int task_index, double amplitude);

/// Pattern values (before quantization) for an image of the given size.
Matrix fingerprint_pattern(const FingerprintSpec& spec, int height, int width);

/// Cosine similarity of the two patterns' power spectra, in [0, 1]. Streams
/// redraw fingerprints so every pair stays at or below 0.5.
double fingerprint_similarity(const FingerprintSpec& a, const FingerprintSpec& b);

struct TaskSpec {
    int task_id = 1;
    std::string name;
    std::vector<ClassInfo> classes;
    std::vector<Sample> train;
    std::vector<Sample> test;
    int samples_per_class = 0;
    std::optional<FingerprintSpec> fingerprint;

    std::vector<int> class_ids() const;
    std::vector<int> real_ids() const;
    void validate() const;  // throws DataError
};

struct StreamConfig {
    std::string name = "synthetic";
    int num_tasks = 4;
    int samples_per_class = 250;  // before the train/test split
    double test_fraction = 0.15;
    int image_size = 32;
    int channels = 1;
    std::uint64_t seed = 0;
    double amplitude = 6.0;
    double noise = 2.0;                 // per-pixel gaussian noise, 8-bit levels
    double background_contrast = 50.0;  // amplitude of the smooth background field
    std::map<int, FingerprintSpec> fingerprint_overrides;  // by 0-based task index

    void validate() const;  // throws ConfigError
};

/// Synthetic stream: task t has a real class (smooth background only) and a
/// fake class (background plus fingerprint P_t). Labels are 2t (real) and
/// 2t + 1 (fake) for 0-based t.
std::vector<TaskSpec> generate_stream(const StreamConfig& config);
std::vector<TaskSpec> generate_stream(int num_tasks, int samples_per_class, int image_size, std::uint64_t seed);

struct ManifestOptions {
    int channels = 1;
    double test_fraction = 0.15;
    std::uint64_t split_seed = 0;
};

/// Loads {scenario, tasks: [{name, real_dirs, fake_dirs[, test_real_dirs,
/// test_fake_dirs]}]} with directories of PNG files, relative to the manifest.
/// Malformed documents raise ParseError naming the field; missing directories
/// or images raise DataError listing every missing path.
std::vector<TaskSpec> load_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});

/// Writes the stream as PNG directories plus manifest.json in `dir`, keeping
/// the train/test split explicit so load_manifest reproduces it.
void export_stream(const std::vector<TaskSpec>& tasks, const std::filesystem::path& dir,
                   const std::string& scenario);

struct PreprocessOptions {
    int target_size = 32;
    bool allow_resize = false;
    int resize_factor = 2;
};

/// Center crop to target_size with values scaled to [0, 1], flattened (C, H, W).
/// With allow_resize the image is first shrunk by resize_factor and enlarged
/// back with bilinear interpolation. Throws DataError for images smaller than
/// the target.
RowVector preprocess(const Image& image, const PreprocessOptions& options);
Matrix preprocess_batch(const std::vector<const Sample*>& samples, const PreprocessOptions& options);

/// Bilinear resampling with half-pixel centers.
Matrix resize_bilinear(const Matrix& plane, int out_height, int out_width);

}  // namespace lorax
