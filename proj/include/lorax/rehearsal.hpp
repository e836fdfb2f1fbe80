#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lorax/backbone.hpp"

namespace lorax {

struct Sample;

/// Reference to a stored training sample. Exemplars keep references, never
/// cached features.
struct SampleRef {
    std::uint64_t uid = 0;
    std::string source;

    bool operator==(const SampleRef&) const = default;
};

/// Greedy herding over the rows of `features`: step m picks the unselected
/// row whose inclusion brings the running mean closest (squared L2) to the
/// mean of all rows. Ties go to the lowest index. Throws DataError when empty.
std::vector<std::size_t> herd_order(const Matrix& features);

/// Embeds a list of samples, one row per sample.
using FeatureFn = std::function<Matrix(const std::vector<const Sample*>&)>;

class ExemplarBuffer {
public:
    explicit ExemplarBuffer(std::size_t budget = 0) : budget_(budget) {}

    std::size_t budget() const { return budget_; }
    void set_budget(std::size_t budget) { budget_ = budget; }

    // Class id -> refs in herding order.
    const std::map<int, std::vector<SampleRef>>& per_class() const { return per_class_; }
    std::map<int, std::vector<SampleRef>>& mutable_per_class() { return per_class_; }
    std::size_t size() const;
    std::size_t num_classes() const { return per_class_.size(); }
    // floor(budget / classes seen), or 0 with no classes.
    std::size_t quota() const;

private:
    std::size_t budget_;
    std::map<int, std::vector<SampleRef>> per_class_;
};

/// Adds every class of `classes` with its herding order computed from
/// `features` over the task's samples of that class, then trims to budget.
/// Throws DataError when a class is already buffered.
void update_buffer(ExemplarBuffer& buffer, const std::vector<Sample>& task_samples,
                   const std::vector<int>& classes, const FeatureFn& features);

/// Keeps the first min(quota, available) refs of every class.
void trim_to_budget(ExemplarBuffer& buffer);

/// D^t together with the buffered exemplars, in a seeded shuffled order.
/// `lookup` resolves exemplar uids; unresolved refs raise DataError.
std::vector<const Sample*> training_set(const ExemplarBuffer& buffer, const std::vector<Sample>& task_samples,
                                        const std::function<const Sample*(std::uint64_t)>& lookup,
                                        std::uint64_t seed);

}  // namespace lorax
