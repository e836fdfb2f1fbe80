#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lorax {

struct AccuracyCount {
    std::size_t correct = 0;
    std::size_t total = 0;

    double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// A[i][j] (1-based): accuracy on task i after training task j, defined for
/// i <= j. Cells filled from counts keep the exact ratio.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(int n = 1);

    int size() const { return n_; }
    void set(int task, int episode, AccuracyCount count);
    void set_value(int task, int episode, double value);
    bool defined(int task, int episode) const;
    double at(int task, int episode) const;  // throws UndefinedMetricError when unset
    std::optional<AccuracyCount> count(int task, int episode) const;
    // Every cell with task <= episode is set.
    bool complete() const;

    /// Rows are tasks, columns episodes; cells with episode < task are blank.
    std::string to_csv() const;
    static AccuracyMatrix from_csv(const std::string& text);

    bool operator==(const AccuracyMatrix& other) const;

private:
    struct Cell {
        bool set = false;
        double value = 0.0;
        std::optional<AccuracyCount> count;
    };
    const Cell& cell(int task, int episode) const;
    Cell& cell(int task, int episode);

    int n_;
    std::vector<Cell> cells_;
};

struct MultiRealMap {
    std::set<int> authentic_ids;
};

/// Exact match, or both labels authentic.
bool multi_real_correct(int predicted, int truth, const MultiRealMap& map);

AccuracyCount task_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth,
                            const MultiRealMap& map);
AccuracyCount strict_accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

double average_accuracy(const AccuracyMatrix& a);        // AA
double average_accuracy_final(const AccuracyMatrix& a);  // AAF
double backward_transfer(const AccuracyMatrix& a);       // BWT, needs n >= 2

struct MetricSummary {
    int n = 0;
    std::optional<double> aa;
    std::optional<double> aaf;
    std::optional<double> bwt;
};

/// Computes whichever metrics the matrix supports.
MetricSummary summarize(const AccuracyMatrix& a);

/// Flat JSON object {"AA", "AAF", "BWT", "n"}; undefined metrics are null.
std::string metrics_to_json(const MetricSummary& summary);
MetricSummary metrics_from_json(const std::string& text);

}  // namespace lorax
