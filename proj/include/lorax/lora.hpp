#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "lorax/backbone.hpp"

namespace lorax {

/// Low-rank update for one weight site: effective weight W + scale * B * A,
/// with A (rank x k) and B (d x rank).
struct LoraAdapter {
    std::string site_id;
    SiteKind kind = SiteKind::V;
    Matrix A;
    Matrix B;
    int rank = 0;
    double scale = 1.0;
    bool frozen = false;

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(A.size() + B.size());
    }
    Matrix delta() const { return scale * (B * A); }
};

/// The adapters owned by one task. All adapters share the set's frozen state.
class AdapterSet {
public:
    AdapterSet() = default;
    explicit AdapterSet(int task_id) : task_id_(task_id) {}

    int task_id() const { return task_id_; }
    void set_task_id(int task_id) { task_id_ = task_id; }

    const std::map<std::string, LoraAdapter>& adapters() const { return adapters_; }
    // Throws StateError when frozen.
    std::map<std::string, LoraAdapter>& mutable_adapters();
    const LoraAdapter* find(const std::string& site_id) const;
    void insert(LoraAdapter adapter);

    bool frozen() const { return frozen_; }
    void freeze();

    bool empty() const { return adapters_.empty(); }
    std::size_t size() const { return adapters_.size(); }
    // Stored parameters, frozen or not.
    std::size_t parameter_count() const;

private:
    int task_id_ = 1;
    std::map<std::string, LoraAdapter> adapters_;
    bool frozen_ = false;
};

struct LoraGrad {
    Matrix dA;
    Matrix dB;
};

using AdapterGrads = std::map<std::string, LoraGrad>;

AdapterGrads zero_adapter_grads(const AdapterSet& adapters);

/// B starts at zero so the adapted model initially equals the backbone; A is
/// drawn uniformly from (-1/sqrt(k), 1/sqrt(k)).
AdapterSet init_adapter_set(const Backbone& backbone, AdapterCombo combo, int rank,
                            double scale, std::uint64_t seed, int task_id = 1);

/// Rows of `inputs` mapped through the adapted linear site:
/// X W^T + scale * (X A^T) B^T. Computed without forming W + BA.
Matrix adapted_site_forward(const Matrix& weight, const LoraAdapter& adapter, const Matrix& inputs);

/// Embeddings of the backbone with the adapter set applied at its sites.
Matrix adapted_forward(const Backbone& backbone, const AdapterSet& adapters, const Matrix& images);

/// New unfrozen backbone whose site weights are W + scale * B * A.
/// Throws StateError if the set is still trainable.
Backbone merge(const Backbone& backbone, const AdapterSet& adapters);

/// Throws InputError if any adapter names a site the backbone lacks or has
/// the wrong shape.
void check_compatible(const Backbone& backbone, const AdapterSet& adapters);

/// Trainable (unfrozen) parameter count: r * (d + k) summed over sites, or 0
/// for a frozen set.
std::size_t count_trainable(const AdapterSet& adapters);

/// r * (d + k) for one site.
std::size_t lora_site_parameter_count(const WeightSite& site, int rank);

inline constexpr std::size_t kBytesPerParameter = 4;

/// Number of 4-byte parameters occupying the same memory as one 8-bit image.
/// A 224 x 224 x 3 image gives 37,632.
std::size_t image_parameter_equivalent(int height, int width, int channels);

/// How many stored exemplar images `parameters` is worth in memory.
double exemplar_image_equivalents(std::size_t parameters, int height, int width, int channels);

}  // namespace lorax
