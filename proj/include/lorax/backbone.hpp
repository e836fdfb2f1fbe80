#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace lorax {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Shape of the desk-scale vision transformer.
///
/// The first `depth - fused_blocks` blocks are "gated" blocks: separate
/// query/key (`attn.qk`) and value (`attn.v`) projections plus a learned
/// per-head positional-bias matrix (`attn.pos`) added to the attention
/// logits. The trailing `fused_blocks` blocks are plain self-attention with a
/// single fused `attn.qkv` projection.
struct BackboneConfig {
    int image_size = 32;
    int patch_size = 4;
    int channels = 1;
    int depth = 4;
    int embed_dim = 64;
    int heads = 4;
    int mlp_ratio = 4;
    int fused_blocks = 0;
    // Fixed standardization applied to pixel values before patch embedding.
    double input_mean = 0.5;
    double input_std = 0.25;
    std::uint64_t seed = 0;

    int patches_per_side() const { return image_size / patch_size; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }
    int tokens() const { return num_patches() + 1; }
    int patch_dim() const { return patch_size * patch_size * channels; }
    int input_dim() const { return image_size * image_size * channels; }
    int head_dim() const { return embed_dim / heads; }

    // Throws ConfigError.
    void validate() const;

    bool operator==(const BackboneConfig&) const = default;
};

enum class SiteKind { QK, V, QKV, POS };

const char* to_string(SiteKind kind);

struct WeightSite {
    std::string site_id;
    SiteKind kind;
    int block = 0;
    int rows = 0;  // d (output width)
    int cols = 0;  // k (input width)

    std::size_t parameter_count() const { return static_cast<std::size_t>(rows) * cols; }
};

enum class AdapterCombo { V, QK, QKV, ALL };

const char* to_string(AdapterCombo combo);
AdapterCombo parse_combo(std::string_view text);  // throws ConfigError

struct BlockParams {
    bool gated = true;
    Matrix norm1_g, norm1_b;
    Matrix qk_w, qk_b;  // gated only: (2d x d), (1 x 2d)
    Matrix v_w, v_b;    // gated only: (d x d), (1 x d)
    Matrix pos;         // gated only: (heads*T x T)
    Matrix qkv_w, qkv_b;  // fused only: (3d x d), (1 x 3d)
    Matrix proj_w, proj_b;
    Matrix norm2_g, norm2_b;
    Matrix fc1_w, fc1_b;
    Matrix fc2_w, fc2_b;
};

/// Every tensor of the backbone. Vectors are stored as 1 x n matrices so all
/// parameters can be visited uniformly.
struct BackboneParams {
    Matrix patch_w, patch_b;
    Matrix cls_token;
    Matrix pos_embed;
    std::vector<BlockParams> blocks;
    Matrix norm_g, norm_b;

    using Visitor = std::function<void(const std::string&, Matrix&)>;
    using ConstVisitor = std::function<void(const std::string&, const Matrix&)>;
    void visit(const Visitor& fn);
    void visit(const ConstVisitor& fn) const;

    std::size_t parameter_count() const;
    BackboneParams zeros_like() const;
    bool bit_equal(const BackboneParams& other) const;
};

class Backbone {
public:
    Backbone(BackboneConfig config, BackboneParams params);

    const BackboneConfig& config() const { return config_; }
    const std::vector<WeightSite>& sites() const { return sites_; }
    const WeightSite& site(std::string_view site_id) const;  // throws InputError
    bool has_site(std::string_view site_id) const;

    const Matrix& weight(std::string_view site_id) const;
    const BackboneParams& params() const { return params_; }
    // Mutable access for training; throws StateError once frozen.
    BackboneParams& mutable_params();
    void set_weight(std::string_view site_id, const Matrix& value);

    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }
    // Returns an unfrozen deep copy.
    Backbone clone() const;

    std::size_t parameter_count() const { return params_.parameter_count(); }
    // Parameters in the adaptable attention matrices plus positional biases.
    std::size_t attention_parameter_count() const;

private:
    Matrix& site_matrix(std::string_view site_id);

    BackboneConfig config_;
    BackboneParams params_;
    std::vector<WeightSite> sites_;
    bool frozen_ = false;
};

Backbone build_backbone(const BackboneConfig& config);

std::vector<WeightSite> list_sites(const Backbone& backbone, AdapterCombo selector);

/// Embeds a batch of images. `images` holds one flattened (C, H, W) image per
/// row with values already preprocessed; the result has one embedding per row.
Matrix forward(const Backbone& backbone, const Matrix& images);

}  // namespace lorax
