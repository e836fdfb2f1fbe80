#pragma once

#include <vector>

#include "lorax/backbone.hpp"

namespace lorax {

struct LossConfig {
    double lambda = 0.1;
    std::vector<int> current_task_classes;

    void validate() const;  // throws ConfigError
};

/// Maps global labels onto diversity-head targets: 0 for any class outside
/// the current task, 1..n for the current task's classes in ascending order.
class DivTargetMap {
public:
    /// `has_old_classes` is false on the first task, where the diversity
    /// loss is undefined.
    DivTargetMap(std::vector<int> current_classes, bool has_old_classes);

    int target(int label) const;
    int width() const { return static_cast<int>(current_.size()) + 1; }
    bool has_old_classes() const { return has_old_; }
    const std::vector<int>& current_classes() const { return current_; }

private:
    std::vector<int> current_;
    bool has_old_;
};

RowVector softmax(const Eigen::Ref<const RowVector>& logits);
Matrix softmax_rows(const Matrix& logits);

/// -log p[label]. Throws DataError for labels outside class_ids.
double clf_loss(const Eigen::Ref<const RowVector>& probabilities, int label, const std::vector<int>& class_ids);
/// Batch mean of the above, one probability row per label.
double clf_loss(const Matrix& probabilities, const std::vector<int>& labels, const std::vector<int>& class_ids);

double div_loss(const Eigen::Ref<const RowVector>& div_logits, int label, const DivTargetMap& map);
double div_loss(const Matrix& div_logits, const std::vector<int>& labels, const DivTargetMap& map);

/// clf + lambda * div.
double total_loss(double clf, double div, double lambda);

/// Row indices into class_ids for each label. Throws DataError on unknown labels.
std::vector<int> label_indices(const std::vector<int>& labels, const std::vector<int>& class_ids);

/// Gradient of the batch-mean cross-entropy w.r.t. the logits:
/// (softmax(logits) - onehot(target)) / batch.
Matrix cross_entropy_logit_grad(const Matrix& probabilities, const std::vector<int>& targets);

}  // namespace lorax
