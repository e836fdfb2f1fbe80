#include "vit_kernel.hpp"

#include <cmath>
#include <numbers>

#include "lorax/errors.hpp"

namespace lorax::detail {

namespace {

constexpr double kLayerNormEps = 1e-6;

Matrix patchify(const BackboneConfig& cfg, const Matrix& images) {
    const int batch = static_cast<int>(images.rows());
    const int side = cfg.image_size;
    const int ps = cfg.patch_size;
    const int pps = cfg.patches_per_side();
    const int num_patches = cfg.num_patches();
    Matrix out(static_cast<Eigen::Index>(batch) * num_patches, cfg.patch_dim());
    for (int s = 0; s < batch; ++s) {
        for (int py = 0; py < pps; ++py) {
            for (int px = 0; px < pps; ++px) {
                const Eigen::Index row = static_cast<Eigen::Index>(s) * num_patches + py * pps + px;
                int col = 0;
                for (int c = 0; c < cfg.channels; ++c) {
                    for (int iy = 0; iy < ps; ++iy) {
                        const int base = c * side * side + (py * ps + iy) * side + px * ps;
                        for (int ix = 0; ix < ps; ++ix) {
                            out(row, col++) = (images(s, base + ix) - cfg.input_mean) / cfg.input_std;
                        }
                    }
                }
            }
        }
    }
    return out;
}

Matrix linear(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    return y;
}

// y = x W^T + b + scale (x A^T) B^T; stores x A^T in `low` when adapted.
Matrix adapted_linear(const Matrix& x, const Matrix& w, const Matrix& b,
                      const LoraAdapter* adapter, Matrix* low) {
    Matrix y = linear(x, w, b);
    if (adapter != nullptr) {
        Matrix xa = x * adapter->A.transpose();
        y.noalias() += (adapter->scale * xa) * adapter->B.transpose();
        if (low != nullptr) *low = std::move(xa);
    }
    return y;
}

Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& xhat,
                  Eigen::VectorXd& rstd) {
    const Eigen::Index rows = x.rows();
    const double width = static_cast<double>(x.cols());
    xhat.resize(rows, x.cols());
    rstd.resize(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const double mean = x.row(r).sum() / width;
        const double var = (x.row(r).array() - mean).square().sum() / width;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd(r) = inv;
        xhat.row(r) = (x.row(r).array() - mean) * inv;
    }
    Matrix y = xhat.array().rowwise() * g.row(0).array();
    y.rowwise() += b.row(0);
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Eigen::VectorXd& rstd,
                           const Matrix& g, Matrix* dg, Matrix* db) {
    if (dg != nullptr) dg->row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
    if (db != nullptr) db->row(0) += dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * g.row(0).array();
    const double width = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() / width;
        const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / width;
        dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

void softmax_rows(Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double mx = m.row(r).maxCoeff();
        m.row(r) = (m.row(r).array() - mx).exp();
        m.row(r) /= m.row(r).sum();
    }
}

// Backward of an adapted linear site. Returns d(input).
Matrix adapted_linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w,
                               const LoraAdapter* adapter, const Matrix& low, Matrix* dw,
                               Matrix* db, AdapterGrads* adapter_grads) {
    if (dw != nullptr) dw->noalias() += dy.transpose() * x;
    if (db != nullptr) db->row(0) += dy.colwise().sum();
    Matrix dx = dy * w;
    if (adapter != nullptr) {
        Matrix dyb = dy * adapter->B;
        if (adapter_grads != nullptr) {
            auto it = adapter_grads->find(adapter->site_id);
            if (it != adapter_grads->end()) {
                it->second.dB.noalias() += adapter->scale * (dy.transpose() * low);
                it->second.dA.noalias() += adapter->scale * (dyb.transpose() * x);
            }
        }
        dx.noalias() += (adapter->scale * dyb) * adapter->A;
    }
    return dx;
}

Matrix effective_pos(const BlockParams& blk, const LoraAdapter* adapter) {
    if (adapter == nullptr) return blk.pos;
    return blk.pos + adapter->delta();
}

}  // namespace

std::vector<SiteAdapters> resolve_adapters(const Backbone& backbone, const AdapterSet* adapters) {
    std::vector<SiteAdapters> out(static_cast<std::size_t>(backbone.config().depth));
    if (adapters == nullptr) return out;
    check_compatible(backbone, *adapters);
    for (const auto& [id, ad] : adapters->adapters()) {
        const WeightSite& site = backbone.site(id);
        SiteAdapters& slot = out[static_cast<std::size_t>(site.block)];
        switch (site.kind) {
            case SiteKind::QK: slot.qk = &ad; break;
            case SiteKind::V: slot.v = &ad; break;
            case SiteKind::QKV: slot.qkv = &ad; break;
            case SiteKind::POS: slot.pos = &ad; break;
        }
    }
    return out;
}

Matrix vit_forward(const BackboneConfig& cfg, const BackboneParams& params,
                   const std::vector<SiteAdapters>& adapters, const Matrix& images,
                   ForwardTrace* trace) {
    if (images.cols() != cfg.input_dim()) {
        throw InputError("image width " + std::to_string(images.cols()) + " does not match " +
                         std::to_string(cfg.input_dim()) + " = channels * image_size^2");
    }
    const int batch = static_cast<int>(images.rows());
    const int T = cfg.tokens();
    const int P = cfg.num_patches();
    const int d = cfg.embed_dim;
    const int heads = cfg.heads;
    const int dh = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix patches = patchify(cfg, images);
    Matrix embedded = linear(patches, params.patch_w, params.patch_b);

    Matrix x(static_cast<Eigen::Index>(batch) * T, d);
    for (int s = 0; s < batch; ++s) {
        const Eigen::Index base = static_cast<Eigen::Index>(s) * T;
        x.row(base) = params.cls_token.row(0) + params.pos_embed.row(0);
        x.block(base + 1, 0, P, d) =
            embedded.block(static_cast<Eigen::Index>(s) * P, 0, P, d) + params.pos_embed.bottomRows(P);
    }
    if (trace != nullptr) {
        trace->batch = batch;
        trace->patches = std::move(patches);
        trace->blocks.assign(params.blocks.size(), BlockTrace{});
    }

    for (std::size_t bi = 0; bi < params.blocks.size(); ++bi) {
        const BlockParams& blk = params.blocks[bi];
        const SiteAdapters& ad = adapters[bi];
        BlockTrace local;
        BlockTrace& bt = trace != nullptr ? trace->blocks[bi] : local;

        Matrix h1 = layer_norm(x, blk.norm1_g, blk.norm1_b, bt.xhat1, bt.rstd1);
        Matrix qkv(x.rows(), 3 * d);
        if (blk.gated) {
            qkv.leftCols(2 * d) = adapted_linear(h1, blk.qk_w, blk.qk_b, ad.qk, &bt.qk_low);
            qkv.rightCols(d) = adapted_linear(h1, blk.v_w, blk.v_b, ad.v, &bt.v_low);
        } else {
            qkv = adapted_linear(h1, blk.qkv_w, blk.qkv_b, ad.qkv, &bt.qkv_low);
        }
        Matrix pos;
        if (blk.gated) pos = effective_pos(blk, ad.pos);

        Matrix heads_out(x.rows(), d);
        if (trace != nullptr) bt.attn.resize(static_cast<std::size_t>(batch) * heads);
        for (int s = 0; s < batch; ++s) {
            const Eigen::Index base = static_cast<Eigen::Index>(s) * T;
            for (int h = 0; h < heads; ++h) {
                auto q = qkv.block(base, h * dh, T, dh);
                auto k = qkv.block(base, d + h * dh, T, dh);
                auto v = qkv.block(base, 2 * d + h * dh, T, dh);
                Matrix scores = (q * k.transpose()) * att_scale;
                if (blk.gated) scores += pos.block(static_cast<Eigen::Index>(h) * T, 0, T, T);
                softmax_rows(scores);
                heads_out.block(base, h * dh, T, dh).noalias() = scores * v;
                if (trace != nullptr) bt.attn[static_cast<std::size_t>(s) * heads + h] = std::move(scores);
            }
        }
        Matrix x1 = x + linear(heads_out, blk.proj_w, blk.proj_b);
        Matrix h2 = layer_norm(x1, blk.norm2_g, blk.norm2_b, bt.xhat2, bt.rstd2);
        Matrix pre = linear(h2, blk.fc1_w, blk.fc1_b);
        Matrix hidden = pre.unaryExpr([](double v) { return gelu(v); });
        Matrix x2 = x1 + linear(hidden, blk.fc2_w, blk.fc2_b);

        if (trace != nullptr) {
            bt.input = std::move(x);
            bt.h1 = std::move(h1);
            bt.qkv = std::move(qkv);
            bt.attn_out = std::move(heads_out);
            bt.h2 = std::move(h2);
            bt.pre_gelu = std::move(pre);
            bt.hidden = std::move(hidden);
        }
        x = std::move(x2);
    }

    Matrix cls(batch, d);
    for (int s = 0; s < batch; ++s) cls.row(s) = x.row(static_cast<Eigen::Index>(s) * T);
    Matrix xhat;
    Eigen::VectorXd rstd;
    Matrix out = layer_norm(cls, params.norm_g, params.norm_b, xhat, rstd);
    if (trace != nullptr) {
        trace->cls_xhat = std::move(xhat);
        trace->cls_rstd = std::move(rstd);
    }
    return out;
}

void vit_backward(const BackboneConfig& cfg, const BackboneParams& params,
                  const std::vector<SiteAdapters>& adapters, const ForwardTrace& trace,
                  const Matrix& d_embed, BackboneParams* grads, AdapterGrads* adapter_grads) {
    const int batch = trace.batch;
    const int T = cfg.tokens();
    const int P = cfg.num_patches();
    const int d = cfg.embed_dim;
    const int heads = cfg.heads;
    const int dh = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool want_params = grads != nullptr;

    // Blocks below the lowest adapted block need no gradient unless the full
    // backbone is being trained.
    int lowest = 0;
    if (!want_params) {
        lowest = static_cast<int>(params.blocks.size());
        if (adapter_grads != nullptr) {
            for (int bi = 0; bi < static_cast<int>(adapters.size()); ++bi) {
                const SiteAdapters& a = adapters[static_cast<std::size_t>(bi)];
                if (a.qk || a.v || a.qkv || a.pos) {
                    lowest = bi;
                    break;
                }
            }
        }
        if (lowest >= static_cast<int>(params.blocks.size())) return;
    }

    Matrix dcls = layer_norm_backward(d_embed, trace.cls_xhat, trace.cls_rstd, params.norm_g,
                                      want_params ? &grads->norm_g : nullptr,
                                      want_params ? &grads->norm_b : nullptr);
    Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(batch) * T, d);
    for (int s = 0; s < batch; ++s) dx.row(static_cast<Eigen::Index>(s) * T) = dcls.row(s);

    for (int bi = static_cast<int>(params.blocks.size()) - 1; bi >= lowest; --bi) {
        const std::size_t ub = static_cast<std::size_t>(bi);
        const BlockParams& blk = params.blocks[ub];
        const BlockTrace& bt = trace.blocks[ub];
        const SiteAdapters& ad = adapters[ub];
        BlockParams* g = want_params ? &grads->blocks[ub] : nullptr;

        // MLP branch.
        if (g != nullptr) {
            g->fc2_w.noalias() += dx.transpose() * bt.hidden;
            g->fc2_b.row(0) += dx.colwise().sum();
        }
        Matrix dhidden = dx * blk.fc2_w;
        Matrix dpre = dhidden.array() * bt.pre_gelu.unaryExpr([](double v) { return gelu_grad(v); }).array();
        if (g != nullptr) {
            g->fc1_w.noalias() += dpre.transpose() * bt.h2;
            g->fc1_b.row(0) += dpre.colwise().sum();
        }
        Matrix dh2 = dpre * blk.fc1_w;
        Matrix dx1 = dx + layer_norm_backward(dh2, bt.xhat2, bt.rstd2, blk.norm2_g,
                                              g ? &g->norm2_g : nullptr, g ? &g->norm2_b : nullptr);

        // Attention branch.
        if (g != nullptr) {
            g->proj_w.noalias() += dx1.transpose() * bt.attn_out;
            g->proj_b.row(0) += dx1.colwise().sum();
        }
        Matrix dheads = dx1 * blk.proj_w;
        Matrix dqkv(dx1.rows(), 3 * d);
        Matrix dpos;
        if (blk.gated) dpos = Matrix::Zero(blk.pos.rows(), blk.pos.cols());
        for (int s = 0; s < batch; ++s) {
            const Eigen::Index base = static_cast<Eigen::Index>(s) * T;
            for (int h = 0; h < heads; ++h) {
                const Matrix& att = bt.attn[static_cast<std::size_t>(s) * heads + h];
                auto q = bt.qkv.block(base, h * dh, T, dh);
                auto k = bt.qkv.block(base, d + h * dh, T, dh);
                auto v = bt.qkv.block(base, 2 * d + h * dh, T, dh);
                auto dout = dheads.block(base, h * dh, T, dh);
                Matrix datt = dout * v.transpose();
                dqkv.block(base, 2 * d + h * dh, T, dh).noalias() = att.transpose() * dout;
                Eigen::VectorXd inner = (datt.array() * att.array()).rowwise().sum();
                Matrix dscores = att.array() * (datt.colwise() - inner).array();
                if (blk.gated) dpos.block(static_cast<Eigen::Index>(h) * T, 0, T, T) += dscores;
                dqkv.block(base, h * dh, T, dh).noalias() = (dscores * k) * att_scale;
                dqkv.block(base, d + h * dh, T, dh).noalias() = (dscores.transpose() * q) * att_scale;
            }
        }

        Matrix dh1;
        if (blk.gated) {
            if (g != nullptr) g->pos += dpos;
            if (ad.pos != nullptr && adapter_grads != nullptr) {
                auto it = adapter_grads->find(ad.pos->site_id);
                if (it != adapter_grads->end()) {
                    it->second.dB.noalias() += ad.pos->scale * (dpos * ad.pos->A.transpose());
                    it->second.dA.noalias() += ad.pos->scale * (ad.pos->B.transpose() * dpos);
                }
            }
            Matrix dqk = dqkv.leftCols(2 * d);
            Matrix dv = dqkv.rightCols(d);
            dh1 = adapted_linear_backward(dqk, bt.h1, blk.qk_w, ad.qk, bt.qk_low,
                                          g ? &g->qk_w : nullptr, g ? &g->qk_b : nullptr, adapter_grads);
            dh1 += adapted_linear_backward(dv, bt.h1, blk.v_w, ad.v, bt.v_low,
                                           g ? &g->v_w : nullptr, g ? &g->v_b : nullptr, adapter_grads);
        } else {
            dh1 = adapted_linear_backward(dqkv, bt.h1, blk.qkv_w, ad.qkv, bt.qkv_low,
                                          g ? &g->qkv_w : nullptr, g ? &g->qkv_b : nullptr, adapter_grads);
        }
        dx = dx1 + layer_norm_backward(dh1, bt.xhat1, bt.rstd1, blk.norm1_g,
                                       g ? &g->norm1_g : nullptr, g ? &g->norm1_b : nullptr);
    }

    if (!want_params) return;
    Matrix dembedded(static_cast<Eigen::Index>(batch) * P, d);
    for (int s = 0; s < batch; ++s) {
        const Eigen::Index base = static_cast<Eigen::Index>(s) * T;
        grads->cls_token.row(0) += dx.row(base);
        grads->pos_embed += dx.block(base, 0, T, d);
        dembedded.block(static_cast<Eigen::Index>(s) * P, 0, P, d) = dx.block(base + 1, 0, P, d);
    }
    grads->patch_w.noalias() += dembedded.transpose() * trace.patches;
    grads->patch_b.row(0) += dembedded.colwise().sum();
}

}  // namespace lorax::detail
