#include "lorax/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include "lorax/errors.hpp"
#include "lorax/losses.hpp"
#include "lorax/rng.hpp"
#include "vit_kernel.hpp"

namespace lorax {

namespace {

constexpr Eigen::Index kEmbedChunk = 128;

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
    std::vector<const Sample*> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

std::vector<int> labels_of(const std::vector<const Sample*>& samples) {
    std::vector<int> out;
    out.reserve(samples.size());
    for (const Sample* s : samples) out.push_back(s->label);
    return out;
}

// Loss and gradients for a batch. `prefix` holds the embeddings of every
// extractor before the newest one (B x c*d) when the caller has them cached.
// With `fill_frozen` false, frozen tensors get no gradient entry at all.
GradientSet gradients_impl(const IncrementalModel& model, const Matrix& images, const std::vector<int>& labels,
                           double lambda, const Matrix* prefix, bool fill_frozen) {
    const auto& extractors = model.extractors();
    if (extractors.empty()) throw StateError("model has no extractor");
    if (static_cast<std::size_t>(images.rows()) != labels.size()) {
        throw InputError("batch has " + std::to_string(images.rows()) + " images but " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t current = extractors.size() - 1;
    const TaskExtractor& ext = extractors[current];
    const bool trainable = model.training_active() && !ext.frozen;
    const int d = model.embed_dim();
    const Eigen::Index rows = images.rows();

    Matrix super(rows, model.super_feature_width());
    if (current > 0) {
        if (prefix != nullptr) {
            super.leftCols(static_cast<Eigen::Index>(current) * d) = *prefix;
        } else {
            for (std::size_t i = 0; i < current; ++i) {
                super.middleCols(static_cast<Eigen::Index>(i) * d, d) = extractors[i].embed(images);
            }
        }
    }

    const auto resolved = detail::resolve_adapters(*ext.backbone, ext.adapters ? &*ext.adapters : nullptr);
    detail::ForwardTrace trace;
    const Matrix newest = detail::vit_forward(ext.backbone->config(), ext.backbone->params(), resolved, images,
                                              trainable ? &trace : nullptr);
    super.rightCols(d) = newest;

    const ExpandingClassifier& clf = model.classifier();
    const Matrix probs = softmax_rows(model.logits_from_features(super));
    GradientSet g;
    g.clf_loss = clf_loss(probs, labels, clf.class_ids);
    const Matrix dlogits = cross_entropy_logit_grad(probs, label_indices(labels, clf.class_ids));
    const bool heads_trainable = model.training_active();
    if (heads_trainable) {
        g.clf_weight = dlogits.transpose() * super;
        g.clf_bias = dlogits.colwise().sum();
    } else {
        g.clf_weight = Matrix::Zero(clf.weight.rows(), clf.weight.cols());
        g.clf_bias = Matrix::Zero(1, clf.bias.cols());
    }
    Matrix d_newest = (dlogits * clf.weight).rightCols(d);

    const auto& div = model.diversity_head();
    if (div) {
        const DivTargetMap map(div->task_classes, true);
        const Matrix div_logits = model.div_logits_from_embedding(newest);
        g.div_loss = div_loss(div_logits, labels, map);
        std::vector<int> targets;
        targets.reserve(labels.size());
        for (int label : labels) targets.push_back(map.target(label));
        const Matrix ddiv = lambda * cross_entropy_logit_grad(softmax_rows(div_logits), targets);
        g.div_weight = ddiv.transpose() * newest;
        g.div_bias = ddiv.colwise().sum();
        d_newest += ddiv * div->weight;
    }
    g.loss = total_loss(g.clf_loss, g.div_loss, lambda);

    g.adapters.resize(extractors.size());
    g.backbones.resize(extractors.size());
    if (trainable) {
        if (ext.adapters) {
            g.adapters[current] = zero_adapter_grads(*ext.adapters);
            detail::vit_backward(ext.backbone->config(), ext.backbone->params(), resolved, trace, d_newest, nullptr,
                                 &g.adapters[current]);
        } else if (ext.owns_backbone) {
            g.backbones[current] = ext.backbone->params().zeros_like();
            detail::vit_backward(ext.backbone->config(), ext.backbone->params(), resolved, trace, d_newest,
                                 &g.backbones[current], nullptr);
        }
    }
    if (fill_frozen) {
        for (std::size_t i = 0; i < extractors.size(); ++i) {
            if (i == current && trainable) continue;
            if (extractors[i].adapters) g.adapters[i] = zero_adapter_grads(*extractors[i].adapters);
            if (extractors[i].owns_backbone) g.backbones[i] = extractors[i].backbone->params().zeros_like();
        }
        g.base = model.base().params().zeros_like();
    }
    return g;
}

// SGD with momentum: v <- mu v + g; p <- p - lr * scale * v.
class Sgd {
public:
    explicit Sgd(double momentum) : momentum_(momentum) {}

    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
              const std::vector<double>& scales, double lr) {
        if (params.size() != grads.size()) throw StateError("optimizer parameter and gradient lists differ");
        if (velocity_.empty()) {
            for (const Matrix* p : params) velocity_.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity_[i] = momentum_ * velocity_[i] + *grads[i];
            *params[i] -= (lr * scales[i]) * velocity_[i];
        }
    }

private:
    double momentum_;
    std::vector<Matrix> velocity_;
};

struct TensorList {
    std::vector<Matrix*> params;
    std::vector<double> scales;
};

// Trainable tensors of the current episode, in a fixed order that
// gradient_list mirrors.
TensorList trainable_tensors(IncrementalModel& model, double head_scale) {
    TensorList out;
    auto add = [&](Matrix& m, double scale) {
        out.params.push_back(&m);
        out.scales.push_back(scale);
    };
    add(model.mutable_classifier().weight, head_scale);
    add(model.mutable_classifier().bias, head_scale);
    if (auto& div = model.mutable_diversity_head()) {
        add(div->weight, head_scale);
        add(div->bias, head_scale);
    }
    TaskExtractor& ext = model.current_extractor();
    if (ext.adapters) {
        for (auto& [id, ad] : ext.adapters->mutable_adapters()) {
            add(ad.A, 1.0);
            add(ad.B, 1.0);
        }
    } else if (ext.owns_backbone) {
        ext.backbone->mutable_params().visit([&](const std::string&, Matrix& m) { add(m, 1.0); });
    }
    return out;
}

std::vector<const Matrix*> gradient_list(GradientSet& g, const IncrementalModel& model) {
    std::vector<const Matrix*> out{&g.clf_weight, &g.clf_bias};
    if (model.diversity_head()) {
        out.push_back(&g.div_weight);
        out.push_back(&g.div_bias);
    }
    const std::size_t current = model.extractors().size() - 1;
    const TaskExtractor& ext = model.extractors()[current];
    if (ext.adapters) {
        for (auto& [id, grad] : g.adapters[current]) {
            out.push_back(&grad.dA);
            out.push_back(&grad.dB);
        }
    } else if (ext.owns_backbone) {
        const BackboneParams& bp = g.backbones[current];
        bp.visit([&](const std::string&, const Matrix& m) { out.push_back(&m); });
    }
    return out;
}

// Trains the newest extractor and the heads on `data`. Returns the mean loss
// of the last epoch.
double train_current(IncrementalModel& model, const std::vector<const Sample*>& data, double lambda,
                     const TrainingConfig& tc, std::uint64_t seed, TrainingContext& context) {
    if (data.empty()) throw DataError("no training samples for this episode");
    const std::size_t current = model.extractors().size() - 1;
    context.invalidate(current);
    const int d = model.embed_dim();
    const Eigen::Index prefix_width = static_cast<Eigen::Index>(current) * d;

    // Frozen extractors never change, so their embeddings are computed once.
    Matrix prefix(static_cast<Eigen::Index>(data.size()), prefix_width);
    for (std::size_t i = 0; i < current; ++i) {
        prefix.middleCols(static_cast<Eigen::Index>(i) * d, d) = context.embeddings(model, i, data);
    }

    TensorList tensors = trainable_tensors(model, tc.head_lr_scale);
    Sgd sgd(tc.momentum);
    const std::size_t batch = static_cast<std::size_t>(tc.batch_size);
    const std::size_t steps_per_epoch = (data.size() + batch - 1) / batch;
    const double total_steps = static_cast<double>(steps_per_epoch) * tc.epochs;
    std::size_t step = 0;
    double epoch_loss = 0.0;

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        Rng rng(derive_seed(seed, 0xE90C, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<const Sample*> members;
            Matrix batch_prefix(static_cast<Eigen::Index>(end - start), prefix_width);
            for (std::size_t k = start; k < end; ++k) {
                members.push_back(data[order[k]]);
                if (prefix_width > 0) {
                    batch_prefix.row(static_cast<Eigen::Index>(k - start)) =
                        prefix.row(static_cast<Eigen::Index>(order[k]));
                }
            }
            GradientSet g = gradients_impl(model, context.images(members), labels_of(members), lambda,
                                           current > 0 ? &batch_prefix : nullptr, false);
            if (!std::isfinite(g.loss)) {
                throw NumericError("training loss became non-finite in epoch " + std::to_string(epoch + 1));
            }
            const double lr =
                0.5 * tc.learning_rate * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
            sgd.step(tensors.params, gradient_list(g, model), tensors.scales, lr);
            epoch_loss += g.loss * static_cast<double>(end - start);
            ++step;
        }
        epoch_loss /= static_cast<double>(data.size());
    }
    return epoch_loss;
}

void check_episode_preconditions(const IncrementalModel& model, Architecture expected, const char* strategy) {
    if (model.architecture() != expected) {
        throw StateError(std::string(strategy) + " episode needs a " + to_string(expected) + " model, got " +
                         to_string(model.architecture()));
    }
    if (model.training_active()) throw StateError("previous episode was not finished");
    if (!model.base().frozen()) throw StateError("pretrained backbone must be frozen");
    for (const auto& e : model.extractors()) {
        if (!e.frozen) throw StateError("extractor of task " + std::to_string(e.task_id) + " is not frozen");
    }
}

EpisodeStats finish_episode(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                            const EpisodeConfig& config, TrainingContext& context) {
    EpisodeStats stats;
    stats.trainable_params = model.count_trainable();
    const auto data = training_set(buffer, task.train,
                                   [&](std::uint64_t uid) { return context.lookup(uid); },
                                   derive_seed(config.seed, 0x7D5));
    stats.final_loss =
        train_current(model, data, config.strategy.lambda, config.training, derive_seed(config.seed, 0x7A1), context);
    model.finish_task();
    update_buffer(buffer, task.train, task.class_ids(),
                  [&](const std::vector<const Sample*>& samples) { return context.super_features(model, samples); });
    return stats;
}

}  // namespace

const char* to_string(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::Lorax: return "lorax";
        case StrategyKind::Finetune: return "finetune";
        case StrategyKind::FullRankExpansion: return "der";
        case StrategyKind::Oracle: return "oracle";
    }
    return "?";
}

StrategyKind parse_strategy(const std::string& text) {
    std::string t = text;
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "lorax") return StrategyKind::Lorax;
    if (t == "finetune" || t == "fine-tune" || t == "ft") return StrategyKind::Finetune;
    if (t == "der" || t == "full_rank" || t == "full-rank") return StrategyKind::FullRankExpansion;
    if (t == "oracle") return StrategyKind::Oracle;
    throw ConfigError("unknown strategy '" + text + "' (expected lorax, finetune, der or oracle)");
}

void Strategy::validate() const {
    if (kind == StrategyKind::Lorax && lora.rank < 1) throw ConfigError("LoRA rank must be at least 1");
    if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("lambda must be finite and non-negative");
    if (!std::isfinite(lora.scale)) throw ConfigError("LoRA scale must be finite");
}

void TrainingConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
    if (!(head_lr_scale > 0.0)) throw ConfigError("head learning-rate scale must be positive");
    if (preprocess.target_size < 1) throw ConfigError("crop size must be positive");
    if (preprocess.resize_factor < 1) throw ConfigError("resize factor must be at least 1");
}

void Scenario::validate() const {
    if (tasks.empty()) throw DataError("scenario '" + name + "' has no tasks");
    std::set<int> seen;
    for (const auto& task : tasks) {
        task.validate();
        if (task.train.empty() || task.test.empty()) {
            throw DataError("task '" + task.name + "' needs both train and test samples");
        }
        for (int c : task.class_ids()) {
            if (!seen.insert(c).second) {
                throw DataError("class " + std::to_string(c) + " of task '" + task.name +
                                "' already appears in an earlier task");
            }
        }
    }
}

MultiRealMap Scenario::multi_real_map() const {
    MultiRealMap map;
    for (const auto& task : tasks) {
        for (int id : task.real_ids()) map.authentic_ids.insert(id);
    }
    return map;
}

TrainingContext::TrainingContext(PreprocessOptions preprocess) : preprocess_(preprocess) {}

void TrainingContext::register_samples(const std::vector<Sample>& samples) {
    for (const auto& s : samples) {
        auto [it, inserted] = samples_.emplace(s.uid, &s);
        if (!inserted && it->second != &s) throw DataError("duplicate sample uid " + std::to_string(s.uid));
    }
}

const Sample* TrainingContext::lookup(std::uint64_t uid) const {
    auto it = samples_.find(uid);
    return it == samples_.end() ? nullptr : it->second;
}

Matrix TrainingContext::images(const std::vector<const Sample*>& samples) {
    Matrix out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto it = image_cache_.find(samples[i]->uid);
        if (it == image_cache_.end()) {
            it = image_cache_.emplace(samples[i]->uid, lorax::preprocess(samples[i]->image, preprocess_)).first;
        }
        if (i == 0) out.resize(static_cast<Eigen::Index>(samples.size()), it->second.size());
        out.row(static_cast<Eigen::Index>(i)) = it->second;
    }
    return out;
}

Matrix TrainingContext::embeddings(const IncrementalModel& model, std::size_t extractor,
                                   const std::vector<const Sample*>& samples) {
    const auto& extractors = model.extractors();
    if (extractor >= extractors.size()) throw InputError("extractor index out of range");
    const TaskExtractor& ext = extractors[extractor];
    const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
    Matrix out(n, model.embed_dim());
    if (n == 0) return out;

    if (!ext.frozen) {
        for (Eigen::Index start = 0; start < n; start += kEmbedChunk) {
            const Eigen::Index len = std::min(kEmbedChunk, n - start);
            std::vector<const Sample*> chunk(samples.begin() + start, samples.begin() + start + len);
            out.middleRows(start, len) = ext.embed(images(chunk));
        }
        return out;
    }

    if (feature_cache_.size() < extractors.size()) feature_cache_.resize(extractors.size());
    auto& cache = feature_cache_[extractor];
    std::vector<const Sample*> missing;
    std::set<std::uint64_t> queued;
    for (const Sample* s : samples) {
        if (cache.count(s->uid) == 0 && queued.insert(s->uid).second) missing.push_back(s);
    }
    for (std::size_t start = 0; start < missing.size(); start += static_cast<std::size_t>(kEmbedChunk)) {
        const std::size_t end = std::min(missing.size(), start + static_cast<std::size_t>(kEmbedChunk));
        std::vector<const Sample*> chunk(missing.begin() + static_cast<std::ptrdiff_t>(start),
                                         missing.begin() + static_cast<std::ptrdiff_t>(end));
        const Matrix e = ext.embed(images(chunk));
        for (std::size_t k = 0; k < chunk.size(); ++k) cache[chunk[k]->uid] = e.row(static_cast<Eigen::Index>(k));
    }
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = cache.at(samples[static_cast<std::size_t>(i)]->uid);
    return out;
}

Matrix TrainingContext::super_features(const IncrementalModel& model, const std::vector<const Sample*>& samples) {
    const int d = model.embed_dim();
    Matrix out(static_cast<Eigen::Index>(samples.size()), model.super_feature_width());
    for (std::size_t i = 0; i < model.extractors().size(); ++i) {
        out.middleCols(static_cast<Eigen::Index>(i) * d, d) = embeddings(model, i, samples);
    }
    return out;
}

void TrainingContext::invalidate(std::size_t extractor) {
    if (extractor < feature_cache_.size()) feature_cache_[extractor].clear();
}

double batch_loss(const IncrementalModel& model, const Matrix& images, const std::vector<int>& labels,
                  double lambda) {
    const Matrix super = model.super_feature(images);
    const double clf =
        clf_loss(softmax_rows(model.logits_from_features(super)), labels, model.classifier().class_ids);
    double div = 0.0;
    if (const auto& head = model.diversity_head()) {
        const DivTargetMap map(head->task_classes, true);
        div = div_loss(model.div_logits_from_embedding(super.rightCols(model.embed_dim())), labels, map);
    }
    return total_loss(clf, div, lambda);
}

GradientSet compute_gradients(const IncrementalModel& model, const Matrix& images, const std::vector<int>& labels,
                              double lambda) {
    return gradients_impl(model, images, labels, lambda, nullptr, true);
}

EpisodeStats run_episode_lorax(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                               const EpisodeConfig& config, TrainingContext& context) {
    check_episode_preconditions(model, Architecture::Lorax, "LoRAX");
    config.strategy.validate();
    context.register_samples(task.train);
    context.register_samples(task.test);
    model.add_task(config.strategy.lora, task.class_ids(), derive_seed(config.seed, 0xADD));
    return finish_episode(model, buffer, task, config, context);
}

EpisodeStats run_episode_finetune(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                                  const EpisodeConfig& config, TrainingContext& context) {
    check_episode_preconditions(model, Architecture::SingleBackbone, "fine-tuning");
    config.strategy.validate();
    context.register_samples(task.train);
    context.register_samples(task.test);
    model.add_shared_task(task.class_ids(), derive_seed(config.seed, 0xADD));
    return finish_episode(model, buffer, task, config, context);
}

EpisodeStats run_episode_full_rank(IncrementalModel& model, ExemplarBuffer& buffer, const TaskSpec& task,
                                   const EpisodeConfig& config, TrainingContext& context) {
    check_episode_preconditions(model, Architecture::FullRankExpansion, "full-rank expansion");
    config.strategy.validate();
    context.register_samples(task.train);
    context.register_samples(task.test);
    model.add_full_rank_task(task.class_ids(), derive_seed(config.seed, 0xADD));
    return finish_episode(model, buffer, task, config, context);
}

std::pair<AccuracyCount, AccuracyCount> evaluate_task(const IncrementalModel& model, const TaskSpec& task,
                                                      const MultiRealMap& map, TrainingContext& context) {
    const auto samples = pointers(task.test);
    if (samples.empty()) throw DataError("task '" + task.name + "' has no test samples");
    const std::vector<int> predicted = model.classify_from_features(context.super_features(model, samples));
    const std::vector<int> truth = labels_of(samples);
    return {task_accuracy(predicted, truth, map), strict_accuracy(predicted, truth)};
}

RunRecord run_scenario(const Scenario& scenario, const Strategy& strategy, const Backbone& base,
                       const RunHooks& hooks) {
    if (strategy.kind == StrategyKind::Oracle) return run_oracle(scenario, base, hooks);
    scenario.validate();
    scenario.training.validate();
    strategy.validate();
    const auto started = std::chrono::steady_clock::now();

    Architecture arch = Architecture::Lorax;
    if (strategy.kind == StrategyKind::Finetune) arch = Architecture::SingleBackbone;
    if (strategy.kind == StrategyKind::FullRankExpansion) arch = Architecture::FullRankExpansion;

    RunRecord record;
    record.seed = scenario.seed;
    record.model = std::make_shared<IncrementalModel>(arch, std::make_shared<Backbone>(base.clone()));
    record.buffer = ExemplarBuffer(scenario.budget);
    const int n = static_cast<int>(scenario.tasks.size());
    record.accuracy = AccuracyMatrix(n);
    record.strict_accuracy = AccuracyMatrix(n);
    const MultiRealMap map = scenario.multi_real_map();
    TrainingContext context(scenario.training.preprocess);
    IncrementalModel& model = *record.model;

    for (int j = 0; j < n; ++j) {
        const TaskSpec& task = scenario.tasks[static_cast<std::size_t>(j)];
        EpisodeConfig config{strategy, scenario.training,
                             derive_seed(scenario.seed, 0xE915, static_cast<std::uint64_t>(j))};
        EpisodeStats stats;
        switch (strategy.kind) {
            case StrategyKind::Lorax: stats = run_episode_lorax(model, record.buffer, task, config, context); break;
            case StrategyKind::Finetune:
                stats = run_episode_finetune(model, record.buffer, task, config, context);
                break;
            case StrategyKind::FullRankExpansion:
                stats = run_episode_full_rank(model, record.buffer, task, config, context);
                break;
            case StrategyKind::Oracle: break;
        }
        record.trainable_params_per_task.push_back(stats.trainable_params);
        for (int i = 0; i <= j; ++i) {
            auto [multi, strict] = evaluate_task(model, scenario.tasks[static_cast<std::size_t>(i)], map, context);
            record.accuracy.set(i + 1, j + 1, multi);
            record.strict_accuracy.set(i + 1, j + 1, strict);
        }
        if (hooks.on_episode_end) hooks.on_episode_end(j + 1, model, record.buffer);
    }
    record.total_params = model.total_parameters();
    record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return record;
}

RunRecord run_oracle(const Scenario& scenario, const Backbone& base, const RunHooks& hooks) {
    scenario.validate();
    scenario.training.validate();
    const auto started = std::chrono::steady_clock::now();

    RunRecord record;
    record.seed = scenario.seed;
    record.model =
        std::make_shared<IncrementalModel>(Architecture::SingleBackbone, std::make_shared<Backbone>(base.clone()));
    IncrementalModel& model = *record.model;
    const int n = static_cast<int>(scenario.tasks.size());
    record.accuracy = AccuracyMatrix(n);
    record.strict_accuracy = AccuracyMatrix(n);
    TrainingContext context(scenario.training.preprocess);

    std::vector<int> classes;
    std::vector<const Sample*> data;
    for (const auto& task : scenario.tasks) {
        context.register_samples(task.train);
        context.register_samples(task.test);
        for (int c : task.class_ids()) classes.push_back(c);
        for (const auto& s : task.train) data.push_back(&s);
    }
    const std::uint64_t seed = derive_seed(scenario.seed, 0x0AC1E);
    model.add_shared_task(classes, derive_seed(seed, 0xADD));
    record.trainable_params_per_task.push_back(model.count_trainable());
    Rng rng(derive_seed(seed, 0x7D5));
    rng.shuffle(data);
    train_current(model, data, 0.0, scenario.training, derive_seed(seed, 0x7A1), context);
    model.finish_task();

    const MultiRealMap map = scenario.multi_real_map();
    for (int i = 0; i < n; ++i) {
        auto [multi, strict] = evaluate_task(model, scenario.tasks[static_cast<std::size_t>(i)], map, context);
        record.accuracy.set(i + 1, n, multi);
        record.strict_accuracy.set(i + 1, n, strict);
    }
    if (hooks.on_episode_end) hooks.on_episode_end(n, model, record.buffer);
    record.total_params = model.total_parameters();
    record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return record;
}

Backbone pretrained_backbone(const BackboneConfig& config, const PretrainConfig& pretrain) {
    Backbone backbone = build_backbone(config);
    if (!pretrain.enabled()) return backbone;

    StreamConfig stream;
    stream.name = "pretext";
    stream.num_tasks = pretrain.tasks;
    stream.samples_per_class = pretrain.samples_per_class;
    stream.image_size = config.image_size;
    stream.channels = config.channels;
    stream.seed = pretrain.seed;
    std::vector<TaskSpec> tasks = generate_stream(stream);

    // Pretext labels: 0 for every real image, t + 1 for the fakes of task t.
    std::vector<Sample> samples;
    for (auto& task : tasks) {
        for (auto& s : task.train) {
            s.label = s.label % 2 == 0 ? 0 : s.task_index + 1;
            samples.push_back(std::move(s));
        }
    }
    std::vector<int> classes;
    for (int c = 0; c <= pretrain.tasks; ++c) classes.push_back(c);

    IncrementalModel model(Architecture::SingleBackbone, std::make_shared<Backbone>(std::move(backbone)));
    model.add_shared_task(classes, derive_seed(pretrain.seed, 0xADD));
    TrainingConfig tc;
    tc.epochs = pretrain.epochs;
    tc.learning_rate = pretrain.learning_rate;
    tc.preprocess.target_size = config.image_size;
    TrainingContext context(tc.preprocess);
    context.register_samples(samples);
    train_current(model, pointers(samples), 0.0, tc, derive_seed(pretrain.seed, 0x7A1), context);
    model.finish_task();
    return model.extractors().front().backbone->clone();
}

}  // namespace lorax
