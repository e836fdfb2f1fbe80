#include "lorax/metrics.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "lorax/errors.hpp"

namespace lorax {

AccuracyMatrix::AccuracyMatrix(int n) : n_(n) {
    if (n < 1) throw ConfigError("accuracy matrix needs at least one task");
    cells_.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
}

const AccuracyMatrix::Cell& AccuracyMatrix::cell(int task, int episode) const {
    if (task < 1 || episode < 1 || task > n_ || episode > n_) {
        throw InputError("accuracy index (" + std::to_string(task) + ", " + std::to_string(episode) +
                         ") outside a " + std::to_string(n_) + "x" + std::to_string(n_) + " matrix");
    }
    return cells_[static_cast<std::size_t>(task - 1) * static_cast<std::size_t>(n_) +
                  static_cast<std::size_t>(episode - 1)];
}

AccuracyMatrix::Cell& AccuracyMatrix::cell(int task, int episode) {
    return const_cast<Cell&>(static_cast<const AccuracyMatrix*>(this)->cell(task, episode));
}

void AccuracyMatrix::set(int task, int episode, AccuracyCount count) {
    if (count.total == 0 || count.correct > count.total) throw DataError("accuracy count is invalid");
    set_value(task, episode, count.value());
    cell(task, episode).count = count;
}

void AccuracyMatrix::set_value(int task, int episode, double value) {
    if (episode < task) throw InputError("accuracy is defined only once the task has been trained");
    if (!(value >= 0.0 && value <= 1.0)) throw DataError("accuracy must lie in [0, 1]");
    Cell& c = cell(task, episode);
    c.set = true;
    c.value = value;
    c.count.reset();
}

bool AccuracyMatrix::defined(int task, int episode) const { return cell(task, episode).set; }

double AccuracyMatrix::at(int task, int episode) const {
    const Cell& c = cell(task, episode);
    if (!c.set) {
        throw UndefinedMetricError("A[" + std::to_string(task) + "][" + std::to_string(episode) + "] is not set");
    }
    return c.value;
}

std::optional<AccuracyCount> AccuracyMatrix::count(int task, int episode) const {
    return cell(task, episode).count;
}

bool AccuracyMatrix::complete() const {
    for (int j = 1; j <= n_; ++j) {
        for (int i = 1; i <= j; ++i) {
            if (!defined(i, j)) return false;
        }
    }
    return true;
}

std::string AccuracyMatrix::to_csv() const {
    std::ostringstream out;
    out << "task";
    for (int j = 1; j <= n_; ++j) out << ",episode_" << j;
    out << '\n';
    char buf[64];
    for (int i = 1; i <= n_; ++i) {
        out << i;
        for (int j = 1; j <= n_; ++j) {
            out << ',';
            if (j >= i && defined(i, j)) {
                std::snprintf(buf, sizeof(buf), "%.17g", at(i, j));
                out << buf;
            }
        }
        out << '\n';
    }
    return out.str();
}

AccuracyMatrix AccuracyMatrix::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("matrix.csv", "header", "empty file");
    int n = 0;
    for (char c : line) n += c == ',' ? 1 : 0;
    if (n < 1) throw ParseError("matrix.csv", "header", "no episode columns");
    AccuracyMatrix m(n);
    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        if (row > n) throw ParseError("matrix.csv", "row " + std::to_string(row), "more rows than episodes");
        std::istringstream fields(line);
        std::string field;
        std::getline(fields, field, ',');
        for (int j = 1; j <= n; ++j) {
            if (!std::getline(fields, field, ',')) field.clear();
            if (field.empty()) continue;
            try {
                std::size_t used = 0;
                const double v = std::stod(field, &used);
                if (used != field.size()) throw std::invalid_argument(field);
                m.set_value(row, j, v);
            } catch (const std::logic_error&) {
                throw ParseError("matrix.csv", "row " + std::to_string(row) + " column " + std::to_string(j),
                                 "not a number: '" + field + "'");
            }
        }
    }
    if (row != n) throw ParseError("matrix.csv", "rows", "expected " + std::to_string(n) + " task rows");
    return m;
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& other) const {
    if (n_ != other.n_) return false;
    for (int i = 1; i <= n_; ++i) {
        for (int j = 1; j <= n_; ++j) {
            const Cell& a = cell(i, j);
            const Cell& b = other.cell(i, j);
            if (a.set != b.set || (a.set && a.value != b.value)) return false;
        }
    }
    return true;
}

bool multi_real_correct(int predicted, int truth, const MultiRealMap& map) {
    if (predicted == truth) return true;
    return map.authentic_ids.count(predicted) != 0 && map.authentic_ids.count(truth) != 0;
}

AccuracyCount task_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                            const MultiRealMap& map) {
    if (predicted.size() != truth.size()) throw InputError("prediction and label counts differ");
    AccuracyCount count{0, truth.size()};
    for (std::size_t i = 0; i < truth.size(); ++i) count.correct += multi_real_correct(predicted[i], truth[i], map);
    return count;
}

AccuracyCount strict_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size()) throw InputError("prediction and label counts differ");
    AccuracyCount count{0, truth.size()};
    for (std::size_t i = 0; i < truth.size(); ++i) count.correct += predicted[i] == truth[i];
    return count;
}

double average_accuracy(const AccuracyMatrix& a) {
    const int n = a.size();
    double outer = 0.0;
    for (int i = 1; i <= n; ++i) {
        double inner = 0.0;
        for (int j = 1; j <= i; ++j) inner += a.at(j, i);
        outer += inner / i;
    }
    return outer / n;
}

double average_accuracy_final(const AccuracyMatrix& a) {
    const int n = a.size();
    double sum = 0.0;
    for (int i = 1; i <= n; ++i) sum += a.at(i, n);
    return sum / n;
}

double backward_transfer(const AccuracyMatrix& a) {
    const int n = a.size();
    if (n < 2) throw UndefinedMetricError("backward transfer needs at least two tasks");
    double sum = 0.0;
    for (int i = 1; i < n; ++i) sum += a.at(i, n) - a.at(i, i);
    return sum / (n - 1);
}

MetricSummary summarize(const AccuracyMatrix& a) {
    MetricSummary s;
    s.n = a.size();
    auto attempt = [](auto fn, const AccuracyMatrix& m) -> std::optional<double> {
        try {
            return fn(m);
        } catch (const UndefinedMetricError&) {
            return std::nullopt;
        }
    };
    s.aa = attempt(average_accuracy, a);
    s.aaf = attempt(average_accuracy_final, a);
    s.bwt = attempt(backward_transfer, a);
    return s;
}

std::string metrics_to_json(const MetricSummary& s) {
    nlohmann::ordered_json j;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
        else j[key] = nullptr;
    };
    put("AA", s.aa);
    put("AAF", s.aaf);
    put("BWT", s.bwt);
    j["n"] = s.n;
    return j.dump(2) + "\n";
}

MetricSummary metrics_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("metrics.json", "<document>", e.what());
    }
    MetricSummary s;
    auto get = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key)) throw ParseError("metrics.json", key, "missing");
        if (j[key].is_null()) return std::nullopt;
        return j[key].get<double>();
    };
    s.aa = get("AA");
    s.aaf = get("AAF");
    s.bwt = get("BWT");
    if (!j.contains("n")) throw ParseError("metrics.json", "n", "missing");
    s.n = j["n"].get<int>();
    return s;
}

}  // namespace lorax
