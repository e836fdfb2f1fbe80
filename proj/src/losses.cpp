#include "lorax/losses.hpp"

#include <algorithm>
#include <cmath>

#include "lorax/errors.hpp"

namespace lorax {

void LossConfig::validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda must be finite and non-negative");
}

DivTargetMap::DivTargetMap(std::vector<int> current_classes, bool has_old_classes)
    : current_(std::move(current_classes)), has_old_(has_old_classes) {
    std::sort(current_.begin(), current_.end());
    if (std::adjacent_find(current_.begin(), current_.end()) != current_.end()) {
        throw DataError("current task lists a class twice");
    }
}

int DivTargetMap::target(int label) const {
    auto it = std::lower_bound(current_.begin(), current_.end(), label);
    if (it != current_.end() && *it == label) return static_cast<int>(it - current_.begin()) + 1;
    return 0;
}

RowVector softmax(const Eigen::Ref<const RowVector>& logits) {
    const double mx = logits.maxCoeff();
    RowVector e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) out.row(r) = softmax(logits.row(r));
    return out;
}

std::vector<int> label_indices(const std::vector<int>& labels, const std::vector<int>& class_ids) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (int label : labels) {
        auto it = std::find(class_ids.begin(), class_ids.end(), label);
        if (it == class_ids.end()) throw DataError("label " + std::to_string(label) + " is not a known class");
        out.push_back(static_cast<int>(it - class_ids.begin()));
    }
    return out;
}

double clf_loss(const Eigen::Ref<const RowVector>& probabilities, int label, const std::vector<int>& class_ids) {
    const int idx = label_indices({label}, class_ids).front();
    if (probabilities.size() != static_cast<Eigen::Index>(class_ids.size())) {
        throw InputError("probability width does not match the number of classes");
    }
    return -std::log(probabilities(idx));
}

double clf_loss(const Matrix& probabilities, const std::vector<int>& labels, const std::vector<int>& class_ids) {
    if (probabilities.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty()) {
        throw InputError("one probability row per label is required");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sum += clf_loss(probabilities.row(static_cast<Eigen::Index>(i)), labels[i], class_ids);
    }
    return sum / static_cast<double>(labels.size());
}

double div_loss(const Eigen::Ref<const RowVector>& logits, int label, const DivTargetMap& map) {
    if (!map.has_old_classes()) throw StateError("diversity loss is undefined on the first task");
    if (logits.size() != map.width()) throw InputError("diversity logits must have |Y^t| + 1 entries");
    const RowVector p = softmax(logits);
    return -std::log(p(map.target(label)));
}

double div_loss(const Matrix& logits, const std::vector<int>& labels, const DivTargetMap& map) {
    if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty()) {
        throw InputError("one logit row per label is required");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sum += div_loss(logits.row(static_cast<Eigen::Index>(i)), labels[i], map);
    }
    return sum / static_cast<double>(labels.size());
}

double total_loss(double clf, double div, double lambda) {
    if (!std::isfinite(clf) || !std::isfinite(div)) throw NumericError("loss component is not finite");
    if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda must be finite and non-negative");
    return clf + lambda * div;
}

Matrix cross_entropy_logit_grad(const Matrix& probabilities, const std::vector<int>& targets) {
    Matrix g = probabilities;
    for (std::size_t i = 0; i < targets.size(); ++i) g(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
    return g / static_cast<double>(targets.size());
}

}  // namespace lorax
