#include "lorax/rehearsal.hpp"

#include <limits>

#include "lorax/data.hpp"
#include "lorax/errors.hpp"
#include "lorax/rng.hpp"

namespace lorax {

std::vector<std::size_t> herd_order(const Matrix& features) {
    const Eigen::Index n = features.rows();
    if (n == 0) throw DataError("herding needs at least one feature vector");
    RowVector mean = RowVector::Zero(features.cols());
    for (Eigen::Index i = 0; i < n; ++i) mean += features.row(i);
    mean /= static_cast<double>(n);

    std::vector<std::size_t> order;
    order.reserve(static_cast<std::size_t>(n));
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    RowVector running = RowVector::Zero(features.cols());
    for (Eigen::Index step = 0; step < n; ++step) {
        const double count = static_cast<double>(step + 1);
        double best_dist = std::numeric_limits<double>::infinity();
        Eigen::Index best = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (taken[static_cast<std::size_t>(i)]) continue;
            const double dist = (mean - (running + features.row(i)) / count).squaredNorm();
            if (best < 0 || dist < best_dist) {
                best_dist = dist;
                best = i;
            }
        }
        taken[static_cast<std::size_t>(best)] = true;
        running += features.row(best);
        order.push_back(static_cast<std::size_t>(best));
    }
    return order;
}

std::size_t ExemplarBuffer::size() const {
    std::size_t n = 0;
    for (const auto& [c, refs] : per_class_) n += refs.size();
    return n;
}

std::size_t ExemplarBuffer::quota() const {
    return per_class_.empty() ? 0 : budget_ / per_class_.size();
}

void update_buffer(ExemplarBuffer& buffer, const std::vector<Sample>& task_samples,
                   const std::vector<int>& classes, const FeatureFn& features) {
    for (int c : classes) {
        if (buffer.per_class().count(c) != 0) {
            throw DataError("class " + std::to_string(c) + " is already in the exemplar buffer");
        }
    }
    auto& per_class = buffer.mutable_per_class();
    for (int c : classes) {
        std::vector<const Sample*> members;
        for (const auto& s : task_samples) {
            if (s.label == c) members.push_back(&s);
        }
        std::vector<SampleRef>& refs = per_class[c];
        // With no budget nothing survives trimming, so skip the embedding work.
        if (members.empty() || buffer.budget() == 0) continue;
        const Matrix f = features(members);
        if (f.rows() != static_cast<Eigen::Index>(members.size())) {
            throw InputError("feature function returned the wrong number of rows");
        }
        for (std::size_t idx : herd_order(f)) refs.push_back({members[idx]->uid, members[idx]->source});
    }
    trim_to_budget(buffer);
}

void trim_to_budget(ExemplarBuffer& buffer) {
    const std::size_t q = buffer.quota();
    for (auto& [c, refs] : buffer.mutable_per_class()) {
        if (refs.size() > q) refs.resize(q);
    }
}

std::vector<const Sample*> training_set(const ExemplarBuffer& buffer, const std::vector<Sample>& task_samples,
                                        const std::function<const Sample*(std::uint64_t)>& lookup,
                                        std::uint64_t seed) {
    std::vector<const Sample*> out;
    out.reserve(task_samples.size() + buffer.size());
    for (const auto& s : task_samples) out.push_back(&s);
    for (const auto& [c, refs] : buffer.per_class()) {
        for (const auto& ref : refs) {
            const Sample* s = lookup(ref.uid);
            if (s == nullptr) throw DataError("exemplar " + std::to_string(ref.uid) + " cannot be resolved");
            if (s->label != c) throw DataError("exemplar label does not match its buffer class");
            out.push_back(s);
        }
    }
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

}  // namespace lorax
