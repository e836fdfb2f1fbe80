#pragma once

// Batched forward and backward passes of the transformer backbone with
// optional low-rank adapters. Internal to lorax_core.

#include <map>
#include <string>
#include <vector>

#include "lorax/backbone.hpp"
#include "lorax/lora.hpp"

namespace lorax::detail {

struct BlockTrace {
    Matrix input;
    Matrix xhat1;
    Eigen::VectorXd rstd1;
    Matrix h1;
    // h1 * A^T for each adapted linear site, keyed by site kind.
    Matrix qk_low, v_low, qkv_low;
    Matrix qkv;  // (rows x 3d): Q | K | V
    std::vector<Matrix> attn;  // per (sample, head): T x T probabilities
    Matrix attn_out;  // concatenated head outputs before projection
    Matrix xhat2;
    Eigen::VectorXd rstd2;
    Matrix h2;
    Matrix pre_gelu;
    Matrix hidden;
};

struct ForwardTrace {
    int batch = 0;
    Matrix patches;
    std::vector<BlockTrace> blocks;
    Matrix cls_xhat;
    Eigen::VectorXd cls_rstd;
};

struct SiteAdapters {
    const LoraAdapter* qk = nullptr;
    const LoraAdapter* v = nullptr;
    const LoraAdapter* qkv = nullptr;
    const LoraAdapter* pos = nullptr;
};

// Resolves the adapter set onto blocks. Throws InputError for unknown sites.
std::vector<SiteAdapters> resolve_adapters(const Backbone& backbone, const AdapterSet* adapters);

// `trace` may be null for inference.
Matrix vit_forward(const BackboneConfig& config, const BackboneParams& params,
                   const std::vector<SiteAdapters>& adapters, const Matrix& images,
                   ForwardTrace* trace);

// Accumulates gradients of a scalar loss given d(loss)/d(embedding).
// `param_grads` (full backbone gradient) and `adapter_grads` may each be null
// to skip that family of gradients.
void vit_backward(const BackboneConfig& config, const BackboneParams& params,
                  const std::vector<SiteAdapters>& adapters, const ForwardTrace& trace,
                  const Matrix& d_embed, BackboneParams* param_grads, AdapterGrads* adapter_grads);

}  // namespace lorax::detail
