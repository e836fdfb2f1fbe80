#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "lorax/backbone.hpp"
#include "lorax/data.hpp"
#include "lorax/expansion.hpp"
#include "lorax/lora.hpp"
#include "lorax/metrics.hpp"
#include "lorax/rehearsal.hpp"

namespace lorax {

enum class StrategyKind { Lorax, Finetune, FullRankExpansion, Oracle };

const char* to_string(StrategyKind kind);
/// Accepts lorax, finetune, der (or full_rank) and oracle. Throws ConfigError.
StrategyKind parse_strategy(const std::string& text);

struct Strategy {
    StrategyKind kind = StrategyKind::Lorax;
    LoraSettings lora;
    double lambda = 0.1;  // weight of the diversity loss

    void validate() const;  // throws ConfigError
};

struct TrainingConfig {
    int epochs = 20;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    // Learning rate of the classifier heads relative to learning_rate.
    double head_lr_scale = 1.0;
    PreprocessOptions preprocess;

    void validate() const;  // throws ConfigError
};

struct Scenario {
    std::string name;
    std::vector<TaskSpec> tasks;
    std::size_t budget = 0;
    TrainingConfig training;
    std::uint64_t seed = 0;

    /// Class sets must be disjoint and every task must declare its real
    /// classes. Throws DataError.
    void validate() const;
    MultiRealMap multi_real_map() const;
};

struct RunRecord {
    AccuracyMatrix accuracy{1};         // multi-real
    AccuracyMatrix strict_accuracy{1};  // exact label match
    std::vector<std::size_t> trainable_params_per_task;
    std::size_t total_params = 0;
    double wall_time = 0.0;  // seconds
    std::uint64_t seed = 0;
    std::string config_snapshot;
    std::shared_ptr<IncrementalModel> model;
    ExemplarBuffer buffer;
};

/// Sample registry plus caches for one run. Preprocessed images are cached by
/// uid; embeddings are cached per extractor only while that extractor is
/// frozen.
class TrainingContext {
public:
    explicit TrainingContext(PreprocessOptions preprocess = {});

    const PreprocessOptions& preprocess() const { return preprocess_; }
    void register_samples(const std::vector<Sample>& samples);
    /// Registered sample by uid, or null.
    const Sample* lookup(std::uint64_t uid) const;

    Matrix images(const std::vector<const Sample*>& samples);
    Matrix embeddings(const IncrementalModel& model, std::size_t extractor, const std::vector<const Sample*>& samples);
    Matrix super_features(const IncrementalModel& model, const std::vector<const Sample*>& samples);
    void invalidate(std::size_t extractor);

private:
    PreprocessOptions preprocess_;
    std::unordered_map<std::uint64_t, const Sample*> samples_;
    std::unordered_map<std::uint64_t, RowVector> image_cache_;
    std::vector<std::unordered_map<std::uint64_t, RowVector>> feature_cache_;
};

/// Loss terms and gradients for one batch. Tensors that are frozen receive
/// zero gradients.
struct GradientSet {
    double loss = 0.0;
    double clf_loss = 0.0;
    double div_loss = 0.0;
    Matrix clf_weight;
    Matrix clf_bias;
    Matrix div_weight;  // empty without a diversity head
    Matrix div_bias;
    std::vector<AdapterGrads> adapters;       // per extractor (empty map without adapters)
    std::vector<BackboneParams> backbones;    // per extractor owning a backbone (else empty)
    BackboneParams base;                      // shared pretrained backbone, always frozen
};

/// clf + lambda * div on a batch of preprocessed images, with every
/// extractor evaluated from scratch.
double batch_loss(const IncrementalModel& model, const Matrix& images, const std::vector<int>& labels,
                  double lambda);
GradientSet compute_gradients(const IncrementalModel& model, const Matrix& images, const std::vector<int>& labels,
                              double lambda);

struct EpisodeConfig {
    Strategy strategy;
    TrainingConfig training;
    std::uint64_t seed = 0;
};

struct EpisodeStats {
    std::size_t trainable_params = 0;
    double final_loss = 0.0;
};

/// Algorithm 1 for one task: new adapters, classifier expansion, diversity
/// head from the second task on, training on D^t and the exemplars, freezing,
/// buffer update and trim. Throws StateError on violated preconditions.
EpisodeStats run_episode_lorax(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                               const EpisodeConfig& config, TrainingContext& context);
/// Single backbone trained on every task; only the classifier grows.
EpisodeStats run_episode_finetune(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                                  const EpisodeConfig& config, TrainingContext& context);
/// A new full backbone copy per task with the same heads as LoRAX.
EpisodeStats run_episode_full_rank(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                                   const EpisodeConfig& config, TrainingContext& context);

/// Multi-real and strict accuracy of the model on a task's test split.
std::pair<AccuracyCount, AccuracyCount> evaluate_task(const IncrementalModel& model, const TaskSpec& task,
                                                      const MultiRealMap& map, TrainingContext& context);

struct RunHooks {
    // Called after each episode has been evaluated (1-based episode).
    std::function<void(int, const IncrementalModel&, const ExemplarBuffer&)> on_episode_end;
};

/// Drives the episodes, evaluating every seen task after each one.
RunRecord run_scenario(const Scenario& scenario, const Strategy& strategy, const Backbone& base,
                       const RunHooks& hooks = {});
/// One model trained jointly on every task; only the final column of the
/// accuracy matrix is filled.
RunRecord run_oracle(const Scenario& scenario, const Backbone& base, const RunHooks& hooks = {});

struct PretrainConfig {
    int tasks = 0;  // 0 disables pretraining
    int samples_per_class = 120;
    int epochs = 8;
    double learning_rate = 0.05;
    std::uint64_t seed = 0x9E7;

    bool enabled() const { return tasks > 0; }
};

/// Backbone built from `config` and, when enabled, trained jointly on a
/// separately seeded synthetic stream standing in for a pretrained network.
Backbone pretrained_backbone(const BackboneConfig& config, const PretrainConfig& pretrain);

}  // namespace lorax
