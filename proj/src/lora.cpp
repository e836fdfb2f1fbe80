#include "lorax/lora.hpp"

#include <algorithm>
#include <cmath>

#include "lorax/errors.hpp"
#include "lorax/rng.hpp"
#include "vit_kernel.hpp"

namespace lorax {

std::map<std::string, LoraAdapter>& AdapterSet::mutable_adapters() {
    if (frozen_) throw StateError("adapter set for task " + std::to_string(task_id_) + " is frozen");
    return adapters_;
}

const LoraAdapter* AdapterSet::find(const std::string& site_id) const {
    auto it = adapters_.find(site_id);
    return it == adapters_.end() ? nullptr : &it->second;
}

void AdapterSet::insert(LoraAdapter adapter) {
    if (frozen_) throw StateError("cannot add adapters to a frozen set");
    adapter.frozen = false;
    std::string id = adapter.site_id;
    adapters_.insert_or_assign(std::move(id), std::move(adapter));
}

void AdapterSet::freeze() {
    frozen_ = true;
    for (auto& [id, ad] : adapters_) ad.frozen = true;
}

std::size_t AdapterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [id, ad] : adapters_) n += ad.parameter_count();
    return n;
}

AdapterSet init_adapter_set(const Backbone& backbone, AdapterCombo combo, int rank, double scale,
                            std::uint64_t seed, int task_id) {
    if (rank < 1) throw ConfigError("LoRA rank must be at least 1");
    if (!std::isfinite(scale)) throw ConfigError("LoRA scale must be finite");
    const auto sites = list_sites(backbone, combo);
    if (sites.empty()) {
        throw ConfigError(std::string("adapter combination '") + to_string(combo) +
                          "' selects no sites on this backbone");
    }
    for (const auto& site : sites) {
        if (rank > std::min(site.rows, site.cols)) {
            throw ConfigError("rank " + std::to_string(rank) + " exceeds min(d, k) = " +
                              std::to_string(std::min(site.rows, site.cols)) + " at site " + site.site_id);
        }
    }
    AdapterSet set(task_id);
    Rng rng(derive_seed(seed, 0x10AA));
    for (const auto& site : sites) {
        LoraAdapter ad;
        ad.site_id = site.site_id;
        ad.kind = site.kind;
        ad.rank = rank;
        ad.scale = scale;
        const double bound = 1.0 / std::sqrt(static_cast<double>(site.cols));
        ad.A.resize(rank, site.cols);
        for (Eigen::Index i = 0; i < ad.A.size(); ++i) ad.A.data()[i] = rng.uniform(-bound, bound);
        ad.B = Matrix::Zero(site.rows, rank);
        set.insert(std::move(ad));
    }
    return set;
}

AdapterGrads zero_adapter_grads(const AdapterSet& adapters) {
    AdapterGrads grads;
    for (const auto& [id, ad] : adapters.adapters()) {
        grads[id] = LoraGrad{Matrix::Zero(ad.A.rows(), ad.A.cols()), Matrix::Zero(ad.B.rows(), ad.B.cols())};
    }
    return grads;
}

Matrix adapted_site_forward(const Matrix& weight, const LoraAdapter& adapter, const Matrix& inputs) {
    if (inputs.cols() != weight.cols() || adapter.A.cols() != weight.cols() ||
        adapter.B.rows() != weight.rows() || adapter.A.rows() != adapter.B.cols()) {
        throw InputError("adapter shapes do not match site weight at " + adapter.site_id);
    }
    Matrix out = inputs * weight.transpose();
    Matrix low = inputs * adapter.A.transpose();
    out.noalias() += (adapter.scale * low) * adapter.B.transpose();
    return out;
}

void check_compatible(const Backbone& backbone, const AdapterSet& adapters) {
    for (const auto& [id, ad] : adapters.adapters()) {
        if (!backbone.has_site(id)) throw InputError("adapter site '" + id + "' not present in backbone");
        const WeightSite& site = backbone.site(id);
        if (ad.B.rows() != site.rows || ad.A.cols() != site.cols || ad.A.rows() != ad.rank ||
            ad.B.cols() != ad.rank) {
            throw InputError("adapter at '" + id + "' has shape incompatible with the site");
        }
    }
}

Matrix adapted_forward(const Backbone& backbone, const AdapterSet& adapters, const Matrix& images) {
    const auto resolved = detail::resolve_adapters(backbone, &adapters);
    return detail::vit_forward(backbone.config(), backbone.params(), resolved, images, nullptr);
}

Backbone merge(const Backbone& backbone, const AdapterSet& adapters) {
    if (!adapters.frozen()) throw StateError("cannot merge an adapter set that is still trainable");
    check_compatible(backbone, adapters);
    Backbone merged = backbone.clone();
    for (const auto& [id, ad] : adapters.adapters()) {
        merged.set_weight(id, backbone.weight(id) + ad.delta());
    }
    return merged;
}

std::size_t count_trainable(const AdapterSet& adapters) {
    return adapters.frozen() ? 0 : adapters.parameter_count();
}

std::size_t lora_site_parameter_count(const WeightSite& site, int rank) {
    return static_cast<std::size_t>(rank) * static_cast<std::size_t>(site.rows + site.cols);
}

std::size_t image_parameter_equivalent(int height, int width, int channels) {
    return static_cast<std::size_t>(height) * width * channels / kBytesPerParameter;
}

double exemplar_image_equivalents(std::size_t parameters, int height, int width, int channels) {
    const double image_bytes = static_cast<double>(height) * width * channels;
    return static_cast<double>(parameters) * kBytesPerParameter / image_bytes;
}

}  // namespace lorax
