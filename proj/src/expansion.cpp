#include "lorax/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "lorax/errors.hpp"
#include "lorax/losses.hpp"
#include "lorax/rng.hpp"

namespace lorax {

namespace {

void fill_uniform(Rng& rng, Eigen::Block<Matrix> block, double bound) {
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
        for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = rng.uniform(-bound, bound);
    }
}

}  // namespace

const char* to_string(Architecture arch) {
    switch (arch) {
        case Architecture::Lorax: return "lorax";
        case Architecture::FullRankExpansion: return "full_rank";
        case Architecture::SingleBackbone: return "single_backbone";
    }
    return "?";
}

Matrix TaskExtractor::embed(const Matrix& images) const {
    if (adapters) return adapted_forward(*backbone, *adapters, images);
    return forward(*backbone, images);
}

std::size_t TaskExtractor::stored_parameter_count() const {
    std::size_t n = 0;
    if (adapters) n += adapters->parameter_count();
    if (owns_backbone) n += backbone->parameter_count();
    return n;
}

std::size_t TaskExtractor::trainable_parameter_count() const {
    if (frozen) return 0;
    if (adapters) return count_trainable(*adapters);
    if (owns_backbone) return backbone->parameter_count();
    return 0;
}

int ExpandingClassifier::index_of(int label) const {
    auto it = std::find(class_ids.begin(), class_ids.end(), label);
    return it == class_ids.end() ? -1 : static_cast<int>(it - class_ids.begin());
}

int argmax_lowest(const Eigen::Ref<const RowVector>& row) {
    int best = 0;
    for (Eigen::Index i = 1; i < row.size(); ++i) {
        if (row(i) > row(best)) best = static_cast<int>(i);
    }
    return best;
}

IncrementalModel::IncrementalModel(Architecture arch, std::shared_ptr<Backbone> base)
    : arch_(arch), base_(std::move(base)) {
    if (!base_) throw ConfigError("model requires a backbone");
    // The pretrained backbone is never trained directly; expansion and
    // fine-tuning train copies of it.
    base_->freeze();
    clf_.weight.resize(0, 0);
    clf_.bias.resize(1, 0);
}

TaskExtractor& IncrementalModel::current_extractor() {
    if (extractors_.empty()) throw StateError("no extractor registered");
    return extractors_.back();
}

void IncrementalModel::check_new_classes(const std::vector<int>& new_classes) const {
    if (new_classes.empty()) throw DataError("a task must introduce at least one class");
    std::set<int> unique(new_classes.begin(), new_classes.end());
    if (unique.size() != new_classes.size()) throw DataError("task lists a class twice");
    for (int c : new_classes) {
        if (clf_.index_of(c) >= 0) {
            throw DataError("class " + std::to_string(c) + " was already introduced by an earlier task");
        }
    }
    if (training_) throw StateError("previous task is still training; call finish_task first");
    if (!extractors_.empty() && !extractors_.back().frozen) {
        throw StateError("previous extractor is not frozen");
    }
}

void IncrementalModel::expand_classifier(const std::vector<int>& classes, bool widen, std::uint64_t seed) {
    const int old_c = clf_.num_classes();
    const int old_f = clf_.input_width();
    const int new_c = old_c + static_cast<int>(classes.size());
    const int new_f = widen ? old_f + embed_dim() : std::max(old_f, embed_dim());
    Matrix weight(new_c, new_f);
    Matrix bias = Matrix::Zero(1, new_c);
    Rng rng(derive_seed(seed, 0xC1F));
    const double bound = 1.0 / std::sqrt(static_cast<double>(new_f));
    fill_uniform(rng, weight.block(0, 0, new_c, new_f), bound);
    if (old_c > 0) {
        weight.block(0, 0, old_c, old_f) = clf_.weight;
        bias.leftCols(old_c) = clf_.bias;
    }
    clf_.weight = std::move(weight);
    clf_.bias = std::move(bias);
    clf_.class_ids.insert(clf_.class_ids.end(), classes.begin(), classes.end());
}

void IncrementalModel::init_diversity_head(const std::vector<int>& classes, std::uint64_t seed) {
    DiversityHead head;
    const int outputs = static_cast<int>(classes.size()) + 1;
    head.weight.resize(outputs, embed_dim());
    Rng rng(derive_seed(seed, 0xD17));
    fill_uniform(rng, head.weight.block(0, 0, outputs, embed_dim()),
                 1.0 / std::sqrt(static_cast<double>(embed_dim())));
    head.bias = Matrix::Zero(1, outputs);
    head.task_classes = classes;
    div_ = std::move(head);
}

void IncrementalModel::add_task(const LoraSettings& lora, const std::vector<int>& new_classes,
                                std::uint64_t seed) {
    if (arch_ != Architecture::Lorax) throw StateError("add_task requires the LoRA expansion architecture");
    check_new_classes(new_classes);
    std::vector<int> sorted = new_classes;
    std::sort(sorted.begin(), sorted.end());
    const int task_id = num_tasks() + 1;

    TaskExtractor ext;
    ext.task_id = task_id;
    ext.backbone = base_;
    ext.adapters = init_adapter_set(*base_, lora.combo, lora.rank, lora.scale, derive_seed(seed, 0xADA), task_id);
    extractors_.push_back(std::move(ext));
    expand_classifier(sorted, true, seed);
    div_.reset();
    if (task_id > 1) init_diversity_head(sorted, seed);
    task_classes_.push_back(sorted);
    training_ = true;
}

void IncrementalModel::add_full_rank_task(const std::vector<int>& new_classes, std::uint64_t seed) {
    if (arch_ != Architecture::FullRankExpansion) {
        throw StateError("add_full_rank_task requires the full-rank expansion architecture");
    }
    check_new_classes(new_classes);
    std::vector<int> sorted = new_classes;
    std::sort(sorted.begin(), sorted.end());
    const int task_id = num_tasks() + 1;

    TaskExtractor ext;
    ext.task_id = task_id;
    ext.backbone = std::make_shared<Backbone>(base_->clone());
    ext.owns_backbone = true;
    extractors_.push_back(std::move(ext));
    expand_classifier(sorted, true, seed);
    div_.reset();
    if (task_id > 1) init_diversity_head(sorted, seed);
    task_classes_.push_back(sorted);
    training_ = true;
}

void IncrementalModel::add_shared_task(const std::vector<int>& new_classes, std::uint64_t seed) {
    if (arch_ != Architecture::SingleBackbone) {
        throw StateError("add_shared_task requires the single-backbone architecture");
    }
    check_new_classes(new_classes);
    if (!extractors_.empty()) extractors_.back().frozen = false;
    std::vector<int> sorted = new_classes;
    std::sort(sorted.begin(), sorted.end());
    if (extractors_.empty()) {
        TaskExtractor ext;
        ext.task_id = 1;
        ext.backbone = std::make_shared<Backbone>(base_->clone());
        ext.owns_backbone = true;
        extractors_.push_back(std::move(ext));
    }
    expand_classifier(sorted, false, seed);
    task_classes_.push_back(sorted);
    training_ = true;
}

void IncrementalModel::finish_task() {
    if (!training_) throw StateError("no task is training");
    TaskExtractor& ext = extractors_.back();
    ext.frozen = true;
    if (ext.adapters) ext.adapters->freeze();
    if (ext.owns_backbone && arch_ == Architecture::FullRankExpansion) ext.backbone->freeze();
    div_.reset();
    training_ = false;
}

Matrix IncrementalModel::super_feature(const Matrix& images) const {
    if (extractors_.empty()) throw StateError("super-feature requested before any extractor was registered");
    const int d = embed_dim();
    Matrix out(images.rows(), super_feature_width());
    for (std::size_t i = 0; i < extractors_.size(); ++i) {
        out.middleCols(static_cast<Eigen::Index>(i) * d, d) = extractors_[i].embed(images);
    }
    return out;
}

Matrix IncrementalModel::logits_from_features(const Matrix& features) const {
    if (features.cols() != clf_.input_width()) {
        throw InputError("super-feature width " + std::to_string(features.cols()) +
                         " does not match classifier input " + std::to_string(clf_.input_width()));
    }
    Matrix logits = features * clf_.weight.transpose();
    logits.rowwise() += clf_.bias.row(0);
    return logits;
}

Matrix IncrementalModel::predict_proba(const Matrix& images) const {
    return softmax_rows(logits_from_features(super_feature(images)));
}

std::vector<int> IncrementalModel::classify_from_features(const Matrix& features) const {
    const Matrix logits = logits_from_features(features);
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        out[static_cast<std::size_t>(r)] = clf_.class_ids[static_cast<std::size_t>(argmax_lowest(logits.row(r)))];
    }
    return out;
}

std::vector<int> IncrementalModel::classify(const Matrix& images) const {
    return classify_from_features(super_feature(images));
}

Matrix IncrementalModel::div_logits_from_embedding(const Matrix& newest) const {
    if (!training_ || !div_) {
        throw StateError("diversity head exists only while training a task after the first");
    }
    Matrix logits = newest * div_->weight.transpose();
    logits.rowwise() += div_->bias.row(0);
    return logits;
}

Matrix IncrementalModel::div_logits(const Matrix& images) const {
    if (!training_ || !div_) {
        throw StateError("diversity head exists only while training a task after the first");
    }
    return div_logits_from_embedding(extractors_.back().embed(images));
}

std::size_t IncrementalModel::count_trainable() const {
    if (!training_) return 0;
    std::size_t n = clf_.parameter_count();
    if (div_) n += div_->parameter_count();
    n += extractors_.back().trainable_parameter_count();
    return n;
}

std::size_t IncrementalModel::total_parameters() const {
    std::size_t n = base_->parameter_count() + clf_.parameter_count();
    for (const auto& e : extractors_) n += e.stored_parameter_count();
    if (div_) n += div_->parameter_count();
    return n;
}

IncrementalModel IncrementalModel::restore(Architecture arch, std::shared_ptr<Backbone> base,
                                           std::vector<TaskExtractor> extractors, ExpandingClassifier clf,
                                           std::vector<std::vector<int>> task_classes) {
    IncrementalModel model(arch, std::move(base));
    for (auto& e : extractors) {
        if (!e.backbone) e.backbone = model.base_;
        e.frozen = true;
        if (e.adapters) {
            check_compatible(*e.backbone, *e.adapters);
            e.adapters->freeze();
        }
    }
    model.extractors_ = std::move(extractors);
    if (clf.weight.cols() != model.super_feature_width() || clf.weight.rows() != clf.num_classes()) {
        throw InputError("restored classifier does not match the extractor layout");
    }
    model.clf_ = std::move(clf);
    model.task_classes_ = std::move(task_classes);
    return model;
}

}  // namespace lorax
