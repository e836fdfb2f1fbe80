#include "lorax/backbone.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "lorax/errors.hpp"
#include "lorax/rng.hpp"
#include "vit_kernel.hpp"

namespace lorax {

namespace {

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i) + "."; }

Matrix xavier(Rng& rng, int rows, int cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    return m;
}

Matrix gaussian(Rng& rng, int rows, int cols, double stddev) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
    return m;
}

// Per-head locality prior over the patch grid: head h prefers nearby patches
// with strength growing in h. The class token row and column start at zero.
Matrix locality_bias(const BackboneConfig& cfg) {
    const int T = cfg.tokens();
    const int pps = cfg.patches_per_side();
    Matrix pos = Matrix::Zero(static_cast<Eigen::Index>(cfg.heads) * T, T);
    for (int h = 0; h < cfg.heads; ++h) {
        const double strength = 0.5 * (h + 1) / cfg.heads;
        for (int i = 0; i < cfg.num_patches(); ++i) {
            for (int j = 0; j < cfg.num_patches(); ++j) {
                const int dy = i / pps - j / pps;
                const int dx = i % pps - j % pps;
                pos(static_cast<Eigen::Index>(h) * T + 1 + i, 1 + j) = -strength * (dx * dx + dy * dy);
            }
        }
    }
    return pos;
}

template <class Params, class Fn>
void visit_impl(Params& p, Fn&& fn) {
    fn("patch_embed.weight", p.patch_w);
    fn("patch_embed.bias", p.patch_b);
    fn("cls_token", p.cls_token);
    fn("pos_embed", p.pos_embed);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = block_prefix(i);
        fn(pre + "norm1.weight", b.norm1_g);
        fn(pre + "norm1.bias", b.norm1_b);
        if (b.gated) {
            fn(pre + "attn.qk", b.qk_w);
            fn(pre + "attn.qk.bias", b.qk_b);
            fn(pre + "attn.v", b.v_w);
            fn(pre + "attn.v.bias", b.v_b);
            fn(pre + "attn.pos", b.pos);
        } else {
            fn(pre + "attn.qkv", b.qkv_w);
            fn(pre + "attn.qkv.bias", b.qkv_b);
        }
        fn(pre + "attn.proj", b.proj_w);
        fn(pre + "attn.proj.bias", b.proj_b);
        fn(pre + "norm2.weight", b.norm2_g);
        fn(pre + "norm2.bias", b.norm2_b);
        fn(pre + "mlp.fc1", b.fc1_w);
        fn(pre + "mlp.fc1.bias", b.fc1_b);
        fn(pre + "mlp.fc2", b.fc2_w);
        fn(pre + "mlp.fc2.bias", b.fc2_b);
    }
    fn("norm.weight", p.norm_g);
    fn("norm.bias", p.norm_b);
}

}  // namespace

void BackboneConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive, got " + std::to_string(v));
    };
    positive(image_size, "image_size");
    positive(patch_size, "patch_size");
    positive(channels, "channels");
    positive(depth, "depth");
    positive(embed_dim, "embed_dim");
    positive(heads, "heads");
    positive(mlp_ratio, "mlp_ratio");
    if (!(input_std > 0.0) || !std::isfinite(input_mean)) throw ConfigError("input standardization must be finite with std > 0");
    if (image_size % patch_size != 0) {
        throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                          std::to_string(patch_size));
    }
    if (embed_dim % heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                          std::to_string(heads));
    }
    if (fused_blocks < 0 || fused_blocks > depth) {
        throw ConfigError("fused_blocks must lie in [0, depth]");
    }
}

const char* to_string(SiteKind kind) {
    switch (kind) {
        case SiteKind::QK: return "QK";
        case SiteKind::V: return "V";
        case SiteKind::QKV: return "QKV";
        case SiteKind::POS: return "POS";
    }
    return "?";
}

const char* to_string(AdapterCombo combo) {
    switch (combo) {
        case AdapterCombo::V: return "v";
        case AdapterCombo::QK: return "qk";
        case AdapterCombo::QKV: return "qkv";
        case AdapterCombo::ALL: return "all";
    }
    return "?";
}

AdapterCombo parse_combo(std::string_view text) {
    std::string lower(text);
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "v") return AdapterCombo::V;
    if (lower == "qk") return AdapterCombo::QK;
    if (lower == "qkv") return AdapterCombo::QKV;
    if (lower == "all") return AdapterCombo::ALL;
    throw ConfigError("unknown adapter combination '" + std::string(text) + "' (expected v, qk, qkv, all)");
}

void BackboneParams::visit(const Visitor& fn) { visit_impl(*this, fn); }

void BackboneParams::visit(const ConstVisitor& fn) const { visit_impl(*this, fn); }

std::size_t BackboneParams::parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

BackboneParams BackboneParams::zeros_like() const {
    BackboneParams z = *this;
    z.visit([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
}

bool BackboneParams::bit_equal(const BackboneParams& other) const {
    std::vector<const Matrix*> mine;
    visit([&](const std::string&, const Matrix& m) { mine.push_back(&m); });
    std::size_t i = 0;
    bool equal = true;
    other.visit([&](const std::string&, const Matrix& m) {
        if (i >= mine.size() || mine[i]->rows() != m.rows() || mine[i]->cols() != m.cols() ||
            !(mine[i]->array() == m.array()).all()) {
            equal = false;
        }
        ++i;
    });
    return equal && i == mine.size();
}

Backbone::Backbone(BackboneConfig config, BackboneParams params)
    : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if (static_cast<int>(params_.blocks.size()) != config_.depth) {
        throw ConfigError("parameter blocks do not match configured depth");
    }
    const int d = config_.embed_dim;
    const int T = config_.tokens();
    for (std::size_t i = 0; i < params_.blocks.size(); ++i) {
        const std::string pre = block_prefix(i) + "attn.";
        const int block = static_cast<int>(i);
        if (params_.blocks[i].gated) {
            sites_.push_back({pre + "qk", SiteKind::QK, block, 2 * d, d});
            sites_.push_back({pre + "v", SiteKind::V, block, d, d});
            sites_.push_back({pre + "pos", SiteKind::POS, block, config_.heads * T, T});
        } else {
            sites_.push_back({pre + "qkv", SiteKind::QKV, block, 3 * d, d});
        }
    }
}

const WeightSite& Backbone::site(std::string_view site_id) const {
    for (const auto& s : sites_) {
        if (s.site_id == site_id) return s;
    }
    throw InputError("backbone has no weight site '" + std::string(site_id) + "'");
}

bool Backbone::has_site(std::string_view site_id) const {
    for (const auto& s : sites_) {
        if (s.site_id == site_id) return true;
    }
    return false;
}

const Matrix& Backbone::weight(std::string_view site_id) const {
    return const_cast<Backbone*>(this)->site_matrix(site_id);
}

Matrix& Backbone::site_matrix(std::string_view site_id) {
    const WeightSite& s = site(site_id);
    BlockParams& b = params_.blocks[static_cast<std::size_t>(s.block)];
    switch (s.kind) {
        case SiteKind::QK: return b.qk_w;
        case SiteKind::V: return b.v_w;
        case SiteKind::QKV: return b.qkv_w;
        case SiteKind::POS: return b.pos;
    }
    throw InputError("unreachable site kind");
}

BackboneParams& Backbone::mutable_params() {
    if (frozen_) throw StateError("backbone is frozen");
    return params_;
}

void Backbone::set_weight(std::string_view site_id, const Matrix& value) {
    if (frozen_) throw StateError("backbone is frozen");
    Matrix& m = site_matrix(site_id);
    if (m.rows() != value.rows() || m.cols() != value.cols()) {
        throw InputError("shape mismatch writing site '" + std::string(site_id) + "'");
    }
    m = value;
}

Backbone Backbone::clone() const { return Backbone(config_, params_); }

std::size_t Backbone::attention_parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : params_.blocks) {
        n += static_cast<std::size_t>(b.qk_w.size() + b.v_w.size() + b.pos.size() + b.qkv_w.size());
    }
    return n;
}

Backbone build_backbone(const BackboneConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, 0xBAC4B0E));
    const int d = config.embed_dim;
    const int hidden = d * config.mlp_ratio;
    const int T = config.tokens();

    BackboneParams p;
    p.patch_w = xavier(rng, d, config.patch_dim());
    p.patch_b = Matrix::Zero(1, d);
    p.cls_token = gaussian(rng, 1, d, 0.02);
    p.pos_embed = gaussian(rng, T, d, 0.02);
    const int gated_blocks = config.depth - config.fused_blocks;
    for (int i = 0; i < config.depth; ++i) {
        BlockParams b;
        b.gated = i < gated_blocks;
        b.norm1_g = Matrix::Ones(1, d);
        b.norm1_b = Matrix::Zero(1, d);
        if (b.gated) {
            b.qk_w = xavier(rng, 2 * d, d);
            b.qk_b = Matrix::Zero(1, 2 * d);
            b.v_w = xavier(rng, d, d);
            b.v_b = Matrix::Zero(1, d);
            b.pos = locality_bias(config);
        } else {
            b.qkv_w = xavier(rng, 3 * d, d);
            b.qkv_b = Matrix::Zero(1, 3 * d);
        }
        b.proj_w = xavier(rng, d, d);
        b.proj_b = Matrix::Zero(1, d);
        b.norm2_g = Matrix::Ones(1, d);
        b.norm2_b = Matrix::Zero(1, d);
        b.fc1_w = xavier(rng, hidden, d);
        b.fc1_b = Matrix::Zero(1, hidden);
        b.fc2_w = xavier(rng, d, hidden);
        b.fc2_b = Matrix::Zero(1, d);
        p.blocks.push_back(std::move(b));
    }
    p.norm_g = Matrix::Ones(1, d);
    p.norm_b = Matrix::Zero(1, d);
    return Backbone(config, std::move(p));
}

std::vector<WeightSite> list_sites(const Backbone& backbone, AdapterCombo selector) {
    std::vector<WeightSite> out;
    for (const auto& s : backbone.sites()) {
        bool keep = false;
        switch (selector) {
            case AdapterCombo::V: keep = s.kind == SiteKind::V; break;
            case AdapterCombo::QK: keep = s.kind == SiteKind::QK; break;
            case AdapterCombo::QKV: keep = s.kind == SiteKind::QKV; break;
            case AdapterCombo::ALL: keep = true; break;
        }
        if (keep) out.push_back(s);
    }
    return out;
}

Matrix forward(const Backbone& backbone, const Matrix& images) {
    const std::vector<detail::SiteAdapters> none(static_cast<std::size_t>(backbone.config().depth));
    return detail::vit_forward(backbone.config(), backbone.params(), none, images, nullptr);
}

}  // namespace lorax
