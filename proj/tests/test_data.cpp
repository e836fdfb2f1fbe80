#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "lorax/data.hpp"
#include "lorax/errors.hpp"
#include "test_util.hpp"

using namespace lorax;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lorax_data_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<const Sample*> of_label(const std::vector<Sample>& xs, int label) {
    std::vector<const Sample*> out;
    for (const auto& s : xs)
        if (s.label == label) out.push_back(&s);
    return out;
}

// Energy of the plane's 2-D DFT at frequencies with max(|u|, |v|) above a
// quarter of the sampling rate.
double top_band_energy(const Matrix& plane) {
    const int n = static_cast<int>(plane.rows());
    const double mean = plane.mean();
    double energy = 0.0;
    for (int u = 0; u < n; ++u) {
        for (int v = 0; v < n; ++v) {
            const int fu = std::min(u, n - u);
            const int fv = std::min(v, n - v);
            if (std::max(fu, fv) <= n / 4) continue;
            double re = 0.0, im = 0.0;
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    const double a = -2.0 * std::numbers::pi * (static_cast<double>(u * y + v * x) / n);
                    re += (plane(y, x) - mean) * std::cos(a);
                    im += (plane(y, x) - mean) * std::sin(a);
                }
            }
            energy += re * re + im * im;
        }
    }
    return energy;
}

Matrix as_plane(const RowVector& v, int n) {
    Matrix m(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) m(y, x) = v(y * n + x);
    return m;
}

}  // namespace

TEST_CASE("stream structure") {
    const auto tasks = generate_stream(4, 20, 32, 1);
    REQUIRE(tasks.size() == 4);
    std::set<int> all, real;
    for (const auto& t : tasks) {
        for (int c : t.class_ids()) CHECK(all.insert(c).second);
        for (int c : t.real_ids()) real.insert(c);
        CHECK(t.train.size() + t.test.size() == 40);
        CHECK(t.fingerprint.has_value());
    }
    CHECK(all.size() == 8);
    CHECK(real.size() == 4);
}

TEST_CASE("split is 85/15") {
    const auto tasks = generate_stream(1, 200, 32, 3);
    CHECK(tasks[0].test.size() == 2 * 30);
    CHECK(tasks[0].train.size() == 2 * 170);
}

TEST_CASE("generation is deterministic per seed") {
    const auto a = generate_stream(2, 10, 32, 5);
    const auto b = generate_stream(2, 10, 32, 5);
    const auto c = generate_stream(2, 10, 32, 6);
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t i = 0; i < a[t].train.size(); ++i) {
            CHECK(a[t].train[i].image == b[t].train[i].image);
            CHECK(a[t].train[i].label == b[t].train[i].label);
        }
    }
    CHECK_FALSE(a[0].train[0].image == c[0].train[0].image);
}

TEST_CASE("fingerprints are distinct, periodic ones are high frequency") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        StreamConfig cfg;
        cfg.num_tasks = 6;
        cfg.samples_per_class = 2;
        cfg.seed = seed;
        const auto tasks = generate_stream(cfg);
        for (std::size_t i = 0; i < tasks.size(); ++i) {
            const auto& f = *tasks[i].fingerprint;
            if (f.type == PatternType::HighFrequencyPeriodic) CHECK(f.period <= 4.0);
            for (std::size_t j = 0; j < i; ++j) CHECK(fingerprint_similarity(f, *tasks[j].fingerprint) <= 0.5);
        }
    }
}

TEST_CASE("fingerprint is zero mean: class mean brightness differs by less than 3 sigma") {
    StreamConfig cfg;
    cfg.num_tasks = 3;
    cfg.samples_per_class = 1000;
    cfg.seed = 21;
    for (const auto& task : generate_stream(cfg)) {
        std::vector<Sample> all = task.train;
        all.insert(all.end(), task.test.begin(), task.test.end());
        double stats[2][2] = {{0, 0}, {0, 0}};  // sum, sum of squares per class
        int counts[2] = {0, 0};
        for (const auto& s : all) {
            double m = 0.0;
            for (auto p : s.image.pixels) m += p;
            m /= static_cast<double>(s.image.pixels.size());
            const int k = s.label % 2;
            stats[k][0] += m;
            stats[k][1] += m * m;
            ++counts[k];
        }
        CHECK(counts[0] == 1000);
        double mean[2], var[2];
        for (int k = 0; k < 2; ++k) {
            mean[k] = stats[k][0] / counts[k];
            var[k] = stats[k][1] / counts[k] - mean[k] * mean[k];
        }
        const double sigma = std::sqrt(var[0] / counts[0] + var[1] / counts[1]);
        CHECK(std::abs(mean[0] - mean[1]) < 3.0 * sigma);
    }
}

TEST_CASE("a linear probe on raw pixels separates real from fake") {
    StreamConfig cfg;  // default amplitude and noise
    cfg.num_tasks = 3;
    cfg.seed = 4;
    PreprocessOptions pre;
    for (const auto& task : generate_stream(cfg)) {
        std::vector<const Sample*> train, test;
        for (const auto& s : task.train) train.push_back(&s);
        for (const auto& s : task.test) test.push_back(&s);
        const Matrix xtr = preprocess_batch(train, pre);
        const Matrix xte = preprocess_batch(test, pre);
        const RowVector mu = xtr.colwise().mean();
        const Matrix c = xtr.rowwise() - mu;
        Eigen::VectorXd y(c.rows());
        for (Eigen::Index i = 0; i < c.rows(); ++i) y(i) = train[static_cast<std::size_t>(i)]->label % 2 ? 1.0 : -1.0;
        // ridge regression on centered pixels
        const Eigen::MatrixXd gram = c.transpose() * c + 1.0 * Eigen::MatrixXd::Identity(c.cols(), c.cols());
        const Eigen::VectorXd w = gram.ldlt().solve(c.transpose() * y);
        const Eigen::VectorXd score = (xte.rowwise() - mu) * w;
        int correct = 0;
        for (Eigen::Index i = 0; i < score.size(); ++i) {
            const bool fake = test[static_cast<std::size_t>(i)]->label % 2 == 1;
            correct += (score(i) > 0) == fake;
        }
        const double acc = static_cast<double>(correct) / static_cast<double>(score.size());
        INFO("task " << task.task_id << " accuracy " << acc);
        CHECK(acc > 0.9);
    }
}

TEST_CASE("crop without resize keeps pixel values") {
    Image img(36, 36, 1);
    for (int y = 0; y < 36; ++y)
        for (int x = 0; x < 36; ++x) img.at(0, y, x) = static_cast<std::uint8_t>((7 * y + 3 * x) % 256);
    PreprocessOptions opt;
    opt.target_size = 32;
    const RowVector v = preprocess(img, opt);
    REQUIRE(v.size() == 32 * 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) CHECK(v(y * 32 + x) == img.at(0, y + 2, x + 2) / 255.0);

    Image same(32, 32, 1);
    for (std::size_t i = 0; i < same.pixels.size(); ++i) same.pixels[i] = static_cast<std::uint8_t>(i % 251);
    const RowVector id = preprocess(same, opt);
    for (std::size_t i = 0; i < same.pixels.size(); ++i) CHECK(id(static_cast<Eigen::Index>(i)) == same.pixels[i] / 255.0);

    CHECK_THROWS_AS(preprocess(Image(28, 28, 1), opt), DataError);
}

TEST_CASE("resize removes most high-frequency fingerprint energy") {
    for (auto type : {PatternType::HighFrequencyPeriodic, PatternType::Checker}) {
        FingerprintSpec f;
        f.type = type;
        f.amplitude = 20.0;
        f.period = 2.0;
        f.orientation = 0;
        const Matrix pattern = fingerprint_pattern(f, 32, 32);
        Image img(32, 32, 1);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) img.at(0, y, x) = static_cast<std::uint8_t>(std::lround(128.0 + pattern(y, x)));
        PreprocessOptions crop;
        PreprocessOptions resize;
        resize.allow_resize = true;
        const double before = top_band_energy(as_plane(preprocess(img, crop), 32));
        const double after = top_band_energy(as_plane(preprocess(img, resize), 32));
        CHECK(before > 0.0);
        CHECK(after <= 0.5 * before);
    }
}

TEST_CASE("bilinear resize keeps constants") {
    const Matrix plane = Matrix::Constant(8, 8, 0.3);
    const Matrix r = resize_bilinear(plane, 4, 4);
    CHECK((r.array() - 0.3).abs().maxCoeff() < 1e-15);
    CHECK((resize_bilinear(r, 8, 8).array() - 0.3).abs().maxCoeff() < 1e-15);
}

TEST_CASE("export and ingest round trip") {
    const fs::path dir = scratch("roundtrip");
    const auto tasks = generate_stream(2, 12, 32, 8);
    export_stream(tasks, dir, "rt");
    const auto loaded = load_manifest(dir / "manifest.json");
    REQUIRE(loaded.size() == tasks.size());
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        CHECK(loaded[t].class_ids() == tasks[t].class_ids());
        CHECK(loaded[t].real_ids() == tasks[t].real_ids());
        for (int label : tasks[t].class_ids()) {
            for (auto split : {&TaskSpec::train, &TaskSpec::test}) {
                const auto a = of_label(tasks[t].*split, label);
                const auto b = of_label(loaded[t].*split, label);
                REQUIRE(a.size() == b.size());
                for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->image == b[i]->image);
            }
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("manifest errors") {
    const fs::path dir = scratch("manifest");
    auto write = [&](const std::string& text) {
        std::ofstream(dir / "manifest.json") << text;
        return dir / "manifest.json";
    };
    CHECK_THROWS_AS(load_manifest(dir / "absent.json"), DataError);
    CHECK_THROWS_AS(load_manifest(write("{ not json")), ParseError);
    CHECK_THROWS_AS(load_manifest(write(R"({"tasks": []})")), ParseError);
    try {
        load_manifest(write(R"({"tasks": [{"name": "a", "real_dirs": "x", "fake_dirs": ["y"]}]})"));
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.field().find("real_dirs") != std::string::npos);
    }
    try {
        load_manifest(write(R"({"tasks": [{"name": "a", "real_dirs": ["nope_r"], "fake_dirs": ["nope_f"]}]})"));
        FAIL("expected a data error");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("nope_r") != std::string::npos);
        CHECK(msg.find("nope_f") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("stream config validation") {
    StreamConfig cfg;
    cfg.num_tasks = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(generate_stream(2, 0, 32, 1), ConfigError);
}
