#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "lorax/backbone.hpp"
#include "lorax/lora.hpp"

namespace lorax {

/// How the model grows per task.
enum class Architecture {
    Lorax,              // one LoRA adapter set per task over a shared frozen backbone
    FullRankExpansion,  // one full trainable backbone copy per task
    SingleBackbone,     // one backbone trained every task; only the head grows
};

const char* to_string(Architecture arch);

struct LoraSettings {
    int rank = 4;
    AdapterCombo combo = AdapterCombo::ALL;
    double scale = 1.0;
};

struct TaskExtractor {
    int task_id = 0;
    std::optional<AdapterSet> adapters;
    std::shared_ptr<Backbone> backbone;
    bool owns_backbone = false;
    bool frozen = false;

    int out_dim() const { return backbone->config().embed_dim; }
    Matrix embed(const Matrix& images) const;
    // Parameters this extractor adds on top of the shared backbone.
    std::size_t stored_parameter_count() const;
    std::size_t trainable_parameter_count() const;
};

/// Unified head over the super-feature. Row k scores class_ids[k].
struct ExpandingClassifier {
    Matrix weight;  // C x F
    Matrix bias;    // 1 x C
    std::vector<int> class_ids;

    int num_classes() const { return static_cast<int>(class_ids.size()); }
    int input_width() const { return static_cast<int>(weight.cols()); }
    // Index of `label` in class_ids, or -1.
    int index_of(int label) const;
    std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

/// Auxiliary head over the newest embedding: output 0 stands for every old
/// class, outputs 1..n for the current task's classes in ascending order.
struct DiversityHead {
    Matrix weight;  // (n + 1) x d
    Matrix bias;    // 1 x (n + 1)
    std::vector<int> task_classes;

    std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

class IncrementalModel {
public:
    IncrementalModel(Architecture arch, std::shared_ptr<Backbone> base);

    Architecture architecture() const { return arch_; }
    const Backbone& base() const { return *base_; }
    std::shared_ptr<Backbone> base_ptr() const { return base_; }

    /// Registers a new LoRA extractor (Lorax architecture only), expands the
    /// classifier and creates the diversity head from the second task on.
    void add_task(const LoraSettings& lora, const std::vector<int>& new_classes, std::uint64_t seed);
    /// Registers a full trainable backbone copy (FullRankExpansion only).
    void add_full_rank_task(const std::vector<int>& new_classes, std::uint64_t seed);
    /// Adds classes to the single shared extractor (SingleBackbone only).
    void add_shared_task(const std::vector<int>& new_classes, std::uint64_t seed);

    /// Freezes the current extractor and drops the diversity head.
    void finish_task();
    bool training_active() const { return training_; }

    int num_tasks() const { return static_cast<int>(task_classes_.size()); }
    const std::vector<std::vector<int>>& task_classes() const { return task_classes_; }
    const std::vector<TaskExtractor>& extractors() const { return extractors_; }
    TaskExtractor& current_extractor();
    const ExpandingClassifier& classifier() const { return clf_; }
    ExpandingClassifier& mutable_classifier() { return clf_; }
    const std::optional<DiversityHead>& diversity_head() const { return div_; }
    std::optional<DiversityHead>& mutable_diversity_head() { return div_; }
    int embed_dim() const { return base_->config().embed_dim; }
    int super_feature_width() const { return static_cast<int>(extractors_.size()) * embed_dim(); }

    /// E(x): embeddings of every extractor, concatenated in task order.
    Matrix super_feature(const Matrix& images) const;
    Matrix logits_from_features(const Matrix& super_features) const;
    Matrix predict_proba(const Matrix& images) const;
    std::vector<int> classify(const Matrix& images) const;
    std::vector<int> classify_from_features(const Matrix& super_features) const;
    Matrix div_logits(const Matrix& images) const;
    Matrix div_logits_from_embedding(const Matrix& newest_embedding) const;

    /// Parameters updated while the current task trains.
    std::size_t count_trainable() const;
    /// Everything stored after training (diversity head excluded once dropped).
    std::size_t total_parameters() const;

    /// Reassembles a model from stored parts.
    static IncrementalModel restore(Architecture arch, std::shared_ptr<Backbone> base,
                                    std::vector<TaskExtractor> extractors, ExpandingClassifier clf,
                                    std::vector<std::vector<int>> task_classes);

private:
    void check_new_classes(const std::vector<int>& new_classes) const;
    void expand_classifier(const std::vector<int>& sorted_classes, bool widen, std::uint64_t seed);
    void init_diversity_head(const std::vector<int>& sorted_classes, std::uint64_t seed);

    Architecture arch_;
    std::shared_ptr<Backbone> base_;
    std::vector<TaskExtractor> extractors_;
    ExpandingClassifier clf_;
    std::optional<DiversityHead> div_;
    std::vector<std::vector<int>> task_classes_;
    bool training_ = false;
};

/// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(const Eigen::Ref<const RowVector>& row);

}  // namespace lorax
