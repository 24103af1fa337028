#include "adsc/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace adsc {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kRopeBase = 10000.0;

double lora_scale_factor(const ModelConfig& cfg) {
    return cfg.lora_rank > 0 ? cfg.lora_scale / static_cast<double>(cfg.lora_rank) : 0.0;
}

// y = x * diag(gain) / rms(x) per row
Matrix rmsnorm(const Matrix& x, const Vector& gain) {
    Matrix y(x.rows(), x.cols());
    const double inv_d = 1.0 / static_cast<double>(x.cols());
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        const double rms = std::sqrt(x.row(i).squaredNorm() * inv_d + kNormEps);
        y.row(i) = x.row(i).cwiseProduct(gain.transpose()) / rms;
    }
    return y;
}

// accumulates into dx (same rows) and optionally dgain
void rmsnorm_backward(const Matrix& x, const Vector& gain, const Matrix& dy, Matrix& dx,
                      Vector* dgain) {
    const std::int64_t d = x.cols();
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::int64_t i = 0; i < x.rows(); ++i) {
        const double rms = std::sqrt(x.row(i).squaredNorm() * inv_d + kNormEps);
        Eigen::RowVectorXd gdy = dy.row(i).cwiseProduct(gain.transpose());
        const double dot = gdy.dot(x.row(i));
        dx.row(i) += gdy / rms - x.row(i) * (dot * inv_d / (rms * rms * rms));
        if (dgain) *dgain += (x.row(i) / rms).cwiseProduct(dy.row(i)).transpose();
    }
}

std::vector<std::int64_t> row_positions(const SequenceLayout& layout) {
    std::vector<std::int64_t> pos(static_cast<std::size_t>(layout.total()));
    for (std::int64_t i = 0; i < layout.total(); ++i)
        pos[static_cast<std::size_t>(i)] = layout.position_of(i);
    return pos;
}

// in-place rotary rotation per original position id; inverse rotates back
void apply_rope(Matrix& m, const std::vector<std::int64_t>& positions, std::int64_t heads,
                std::int64_t head_dim, bool inverse) {
    const std::int64_t half = head_dim / 2;
    for (std::int64_t i = 0; i < m.rows(); ++i) {
        const double p = static_cast<double>(positions[static_cast<std::size_t>(i)]);
        for (std::int64_t h = 0; h < heads; ++h) {
            const std::int64_t base = h * head_dim;
            for (std::int64_t pair = 0; pair < half; ++pair) {
                const double theta =
                    std::pow(kRopeBase, -2.0 * static_cast<double>(pair) /
                                            static_cast<double>(head_dim));
                const double a = p * theta;
                const double c = std::cos(a);
                const double s = inverse ? -std::sin(a) : std::sin(a);
                const std::int64_t j0 = base + 2 * pair;
                const double x = m(i, j0), y = m(i, j0 + 1);
                m(i, j0) = c * x - s * y;
                m(i, j0 + 1) = s * x + c * y;
            }
        }
    }
}

// q = a*w + scale*(a*down)*up
Matrix project(const Matrix& a, const Matrix& w, const Matrix& down, const Matrix& up,
               double scale, FlopCounter* counter) {
    if (counter) counter->gemm(a.rows(), w.rows(), w.cols());
    Matrix q = a * w;
    if (down.size() > 0) {
        if (counter) {
            counter->gemm(a.rows(), down.rows(), down.cols());
            counter->gemm(a.rows(), up.rows(), up.cols());
        }
        q.noalias() += scale * ((a * down) * up);
    }
    return q;
}

void project_backward(const Matrix& a, const Matrix& dq, const Matrix& w, const Matrix& down,
                      const Matrix& up, double scale, Matrix& da, Matrix* dw, Matrix* ddown,
                      Matrix* dup) {
    da.noalias() += dq * w.transpose();
    if (dw) dw->noalias() += a.transpose() * dq;
    if (down.size() > 0) {
        const Matrix dq_upT = dq * up.transpose();  // rows x rank
        da.noalias() += scale * (dq_upT * down.transpose());
        if (ddown) ddown->noalias() += scale * (a.transpose() * dq_upT);
        if (dup) dup->noalias() += scale * ((a * down).transpose() * dq);
    }
}

Matrix silu(const Matrix& u) {
    return u.array() / (1.0 + (-u.array()).exp());
}

Matrix silu_grad(const Matrix& u) {
    Eigen::ArrayXXd sg = 1.0 / (1.0 + (-u.array()).exp());
    return sg * (1.0 + u.array() * (1.0 - sg));
}

struct AttnCache {
    Matrix a;
    Matrix q, k, v;    // post-adapter, pre-rotation
    Matrix qr, kr;     // post-rotation
    std::vector<Matrix> alpha;
    Matrix concat;
};

struct FfnCache {
    Matrix f, u, vup, z;
};

struct LayerCacheEntry {
    SequenceLayout layout;
    Matrix x;
    AttnCache attn;
    Matrix h2;
    FfnCache ffn;
    std::vector<std::int64_t> keep;
};

Matrix attention_core(const Matrix& x, const SequenceLayout& layout, const LayerParams& lp,
                      const ModelConfig& cfg, AttnCache* cache, Matrix* mean_attn,
                      FlopCounter* counter) {
    if (!x.allFinite()) throw NumericError("attention input contains non-finite values");
    const std::int64_t t = x.rows();
    const std::int64_t dh = cfg.head_dim();
    const double scale = lora_scale_factor(cfg);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix q = project(x, lp.wq, lp.lora_q_down, lp.lora_q_up, scale, counter);
    Matrix k = project(x, lp.wk, lp.lora_k_down, lp.lora_k_up, scale, counter);
    Matrix v = project(x, lp.wv, lp.lora_v_down, lp.lora_v_up, scale, counter);

    Matrix qr = q, kr = k;
    if (cfg.pos_encoding == PosEncoding::kRope) {
        const auto positions = row_positions(layout);
        apply_rope(qr, positions, cfg.heads, dh, false);
        apply_rope(kr, positions, cfg.heads, dh, false);
    }

    Matrix concat(t, cfg.width);
    if (mean_attn) *mean_attn = Matrix::Zero(t, t);
    std::vector<Matrix> alphas;
    if (cache) alphas.reserve(static_cast<std::size_t>(cfg.heads));

    for (std::int64_t h = 0; h < cfg.heads; ++h) {
        const auto qh = qr.middleCols(h * dh, dh);
        const auto kh = kr.middleCols(h * dh, dh);
        const auto vh = v.middleCols(h * dh, dh);
        if (counter) counter->gemm(t, dh, t);
        Matrix s = (qh * kh.transpose()) * inv_sqrt_dh;
        Matrix alpha = Matrix::Zero(t, t);
        for (std::int64_t i = 0; i < t; ++i) {
            auto row = s.row(i).segment(0, i + 1);
            const double m = row.maxCoeff();
            Eigen::RowVectorXd e = (row.array() - m).exp();
            alpha.row(i).segment(0, i + 1) = e / e.sum();
        }
        if (counter) counter->gemm(t, t, dh);
        concat.middleCols(h * dh, dh).noalias() = alpha * vh;
        if (mean_attn) *mean_attn += alpha / static_cast<double>(cfg.heads);
        if (cache) alphas.push_back(std::move(alpha));
    }

    Matrix out = project(concat, lp.wo, lp.lora_o_down, lp.lora_o_up, scale, counter);
    if (cache) {
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->qr = std::move(qr);
        cache->kr = std::move(kr);
        cache->alpha = std::move(alphas);
        cache->concat = std::move(concat);
    }
    return out;
}

Matrix ffn_core(const Matrix& f, const LayerParams& lp, bool gated, FfnCache* cache,
                FlopCounter* counter) {
    Matrix u, vup, z;
    if (gated) {
        if (counter) {
            counter->gemm(f.rows(), lp.ffn_gate.rows(), lp.ffn_gate.cols());
            counter->gemm(f.rows(), lp.ffn_up.rows(), lp.ffn_up.cols());
        }
        u = f * lp.ffn_gate;
        vup = f * lp.ffn_up;
        z = silu(u).cwiseProduct(vup);
    } else {
        if (counter) counter->gemm(f.rows(), lp.ffn_up.rows(), lp.ffn_up.cols());
        u = f * lp.ffn_up;
        z = silu(u);
    }
    if (counter) counter->gemm(z.rows(), lp.ffn_down.rows(), lp.ffn_down.cols());
    Matrix y = z * lp.ffn_down;
    if (cache) {
        cache->u = std::move(u);
        cache->vup = std::move(vup);
        cache->z = std::move(z);
    }
    return y;
}

}  // namespace

struct ForwardCache {
    Sample sample;
    SequenceLayout layout0;
    std::vector<LayerCacheEntry> layers;
    Matrix h_last;
    SequenceLayout layout_last;
    std::vector<std::int64_t> logit_rows;
    Matrix hnorm_rows;
    Matrix logits;
    bool loss_recorded = false;
    Matrix dlogits;
    double loss = 0.0;
};

std::int64_t SequenceLayout::position_of(std::int64_t row) const {
    if (row < 0 || row >= total()) throw InvalidArgument("row out of range");
    if (row < n_vision()) return vision_positions[static_cast<std::size_t>(row)];
    return text_start + (row - n_vision());
}

void SequenceLayout::validate() const {
    if (text_start < 0) throw InvalidArgument("text_start must be >= 0");
    if (prompt_len < 1) throw InvalidArgument("prompt_len must be >= 1");
    if (response_len < 0) throw InvalidArgument("response_len must be >= 0");
    std::int64_t prev = -1;
    for (std::int64_t p : vision_positions) {
        if (p <= prev) throw InvalidArgument("vision positions must be strictly increasing");
        if (p < 0 || p >= text_start)
            throw InvalidArgument("vision position outside [0, text_start)");
        prev = p;
    }
}

SequenceLayout initial_layout(std::int64_t n_vision, std::int64_t prompt_len,
                              std::int64_t response_len) {
    SequenceLayout layout;
    layout.vision_positions.resize(static_cast<std::size_t>(n_vision));
    for (std::int64_t i = 0; i < n_vision; ++i)
        layout.vision_positions[static_cast<std::size_t>(i)] = i;
    layout.text_start = n_vision;
    layout.prompt_len = prompt_len;
    layout.response_len = response_len;
    layout.validate();
    return layout;
}

std::pair<Matrix, SequenceLayout> embed(const Sample& sample, const Parameters& params) {
    const auto& cfg = params.config;
    const std::int64_t nv = sample.vision_features.rows();
    if (nv > 0 && sample.vision_features.cols() != cfg.vision_width)
        throw InvalidArgument("vision feature width mismatch");
    if (!sample.vision_features.allFinite())
        throw NumericError("vision features contain non-finite values");
    if (sample.prompt_ids.empty()) throw InvalidArgument("prompt must be non-empty");

    auto layout = initial_layout(nv, static_cast<std::int64_t>(sample.prompt_ids.size()),
                                 static_cast<std::int64_t>(sample.response_ids.size()));
    if (layout.text_start + layout.n_text() > cfg.max_positions)
        throw InvalidArgument("sequence exceeds max_positions");

    Matrix x(layout.total(), cfg.width);
    for (std::int64_t i = 0; i < nv; ++i)
        x.row(i) = sample.vision_features.row(i) * params.projector_w +
                   params.projector_b.transpose();
    auto embed_text = [&](std::int64_t row, int id) {
        if (id < 0 || id >= cfg.vocab)
            throw InvalidArgument("token id " + std::to_string(id) + " outside vocab");
        x.row(row) = params.embedding.row(id);
    };
    std::int64_t row = nv;
    for (int id : sample.prompt_ids) embed_text(row++, id);
    for (int id : sample.response_ids) embed_text(row++, id);

    if (cfg.pos_encoding == PosEncoding::kLearned) {
        for (std::int64_t i = 0; i < layout.total(); ++i)
            x.row(i) += params.pos_table.row(layout.position_of(i));
    }
    return {std::move(x), std::move(layout)};
}

Matrix causal_attention(const Matrix& x, const SequenceLayout& layout, const LayerParams& lp,
                        const ModelConfig& cfg, Matrix* mean_attn) {
    if (x.rows() != layout.total()) throw InvalidArgument("hidden rows do not match layout");
    return attention_core(x, layout, lp, cfg, nullptr, mean_attn, nullptr);
}

void prune_states(Matrix& hidden, SequenceLayout& layout, const std::vector<std::int64_t>& keep) {
    if (keep.empty()) throw ScheduleDegenerate("prune would keep zero vision tokens");
    const std::int64_t nv = layout.n_vision();
    std::int64_t prev = -1;
    for (std::int64_t idx : keep) {
        if (idx <= prev) throw InvalidArgument("keep indices must be strictly increasing");
        if (idx < 0 || idx >= nv)
            throw InvalidArgument("keep index " + std::to_string(idx) +
                                  " outside the vision span");
        prev = idx;
    }
    const std::int64_t k = static_cast<std::int64_t>(keep.size());
    Matrix next(k + layout.n_text(), hidden.cols());
    std::vector<std::int64_t> pos(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
        next.row(j) = hidden.row(keep[static_cast<std::size_t>(j)]);
        pos[static_cast<std::size_t>(j)] =
            layout.vision_positions[static_cast<std::size_t>(keep[static_cast<std::size_t>(j)])];
    }
    next.bottomRows(layout.n_text()) = hidden.bottomRows(layout.n_text());
    hidden = std::move(next);
    layout.vision_positions = std::move(pos);
}

ForwardResult decoder_forward(const Sample& sample, const Parameters& params,
                              const PruneSchedule* sched, const ForwardOptions& opts) {
    const auto& cfg = params.config;
    cfg.validate();
    if (opts.differentiable && opts.hook)
        throw InvalidArgument("baseline hooks are eval-only");
    if (sched && opts.hook)
        throw InvalidArgument("combine either built-in pruning or a hook, not both");

    std::vector<std::int64_t> planned;
    if (sched) {
        sched->validate();
        if (sched->depth != cfg.depth)
            throw InvalidArgument("schedule depth does not match model depth");
        if (sched->n0 != sample.vision_features.rows())
            throw InvalidArgument("schedule n0 does not match the sample's vision tokens");
        planned = layer_token_counts(*sched);  // throws if degenerate
    }

    ForwardResult fr;
    auto cache = opts.differentiable ? std::make_shared<ForwardCache>() : nullptr;

    auto [x, layout] = embed(sample, params);
    if (cache) {
        cache->sample = sample;
        cache->layout0 = layout;
    }
    if (opts.hook) (*opts.hook)(0, x, layout, fr.trace);

    std::size_t next_prune = 0;
    for (std::int64_t l = 1; l <= cfg.depth; ++l) {
        const auto& lp = params.layers[static_cast<std::size_t>(l - 1)];
        fr.trace.layer_counts.push_back(layout.n_vision());

        LayerCacheEntry* lc = nullptr;
        if (cache) {
            cache->layers.emplace_back();
            lc = &cache->layers.back();
            lc->layout = layout;
            lc->x = x;
        }

        Matrix a = rmsnorm(x, lp.attn_gain);
        const bool capture = opts.capture_layers.count(l) > 0;
        Matrix mean_attn;
        Matrix attn_out = attention_core(a, layout, lp, cfg, lc ? &lc->attn : nullptr,
                                         capture ? &mean_attn : nullptr, opts.counter);
        if (capture) fr.trace.attention[l] = std::move(mean_attn);
        if (lc) lc->attn.a = std::move(a);

        Matrix h2 = x + attn_out;
        Matrix f = rmsnorm(h2, lp.ffn_gain);
        Matrix y = ffn_core(f, lp, cfg.gated_ffn, lc ? &lc->ffn : nullptr, opts.counter);
        if (lc) {
            lc->h2 = h2;
            lc->ffn.f = std::move(f);
        }
        x = h2 + y;
        fr.trace.layer_checksums.push_back(x.squaredNorm());

        if (sched && next_prune < sched->prune_layers.size() &&
            sched->prune_layers[next_prune] == l) {
            // planned[l] is the count entering layer l+1, i.e. what survives this prune
            const std::int64_t k = planned[static_cast<std::size_t>(l)];
            const auto keep = retained_indices(layout.n_vision(), k);
            prune_states(x, layout, keep);
            if (lc) lc->keep = keep;
            ++next_prune;
        }
        if (opts.hook) (*opts.hook)(l, x, layout, fr.trace);
    }

    // logits
    const std::int64_t t = layout.total();
    std::vector<std::int64_t> rows;
    if (opts.logits == LogitsMode::kLastRow) {
        rows.push_back(t - 1);
    } else {
        const std::int64_t r = layout.response_len;
        for (std::int64_t j = 0; j < r; ++j) rows.push_back(t - r - 1 + j);
    }
    Matrix x_rows(static_cast<std::int64_t>(rows.size()), cfg.width);
    for (std::size_t j = 0; j < rows.size(); ++j)
        x_rows.row(static_cast<std::int64_t>(j)) = x.row(rows[j]);
    Matrix hnorm = rmsnorm(x_rows, params.final_gain);
    if (opts.counter) opts.counter->gemm(hnorm.rows(), cfg.width, cfg.vocab);
    fr.logits = hnorm * params.head;
    fr.trace.logit_rows = rows;
    fr.final_layout = layout;

    if (cache) {
        cache->h_last = std::move(x);
        cache->layout_last = fr.final_layout;
        cache->logit_rows = rows;
        cache->hnorm_rows = std::move(hnorm);
        cache->logits = fr.logits;
        fr.cache = cache;
    }
    return fr;
}

double response_loss(const Matrix& logits, const std::vector<int>& targets) {
    if (targets.empty()) throw InvalidArgument("empty response span");
    if (logits.rows() != static_cast<std::int64_t>(targets.size()))
        throw InvalidArgument("logit rows do not match target count");
    double loss = 0.0;
    for (std::int64_t i = 0; i < logits.rows(); ++i) {
        const int y = targets[static_cast<std::size_t>(i)];
        if (y < 0 || y >= logits.cols()) throw InvalidArgument("target id outside vocab");
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        loss += lse - logits(i, y);
    }
    loss /= static_cast<double>(logits.rows());
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    return loss;
}

double response_loss(ForwardResult& fr, const std::vector<int>& targets) {
    const double loss = response_loss(fr.logits, targets);
    if (fr.cache) {
        auto& c = *fr.cache;
        const auto r = fr.logits.rows();
        c.dlogits = Matrix::Zero(r, fr.logits.cols());
        for (std::int64_t i = 0; i < r; ++i) {
            const double m = fr.logits.row(i).maxCoeff();
            Eigen::RowVectorXd e = (fr.logits.row(i).array() - m).exp();
            c.dlogits.row(i) = e / (e.sum() * static_cast<double>(r));
            c.dlogits(i, targets[static_cast<std::size_t>(i)]) -= 1.0 / static_cast<double>(r);
        }
        c.loss = loss;
        c.loss_recorded = true;
    }
    return loss;
}

Parameters backward(const ForwardResult& fr, const Parameters& params, bool frozen_backbone) {
    if (!fr.cache) throw StateError("backward requires a differentiable forward");
    const auto& c = *fr.cache;
    if (!c.loss_recorded) throw StateError("backward requires a recorded loss");
    const auto& cfg = params.config;
    const bool bb = !frozen_backbone;  // accumulate backbone grads?
    const double scale = lora_scale_factor(cfg);

    Parameters g = zero_parameters(cfg);

    // head and final norm, on the logit rows only
    Matrix dhn = c.dlogits * params.head.transpose();
    if (bb) g.head.noalias() += c.hnorm_rows.transpose() * c.dlogits;

    Matrix x_rows(static_cast<std::int64_t>(c.logit_rows.size()), cfg.width);
    for (std::size_t j = 0; j < c.logit_rows.size(); ++j)
        x_rows.row(static_cast<std::int64_t>(j)) = c.h_last.row(c.logit_rows[j]);
    Matrix dx_rows = Matrix::Zero(x_rows.rows(), cfg.width);
    rmsnorm_backward(x_rows, params.final_gain, dhn, dx_rows, bb ? &g.final_gain : nullptr);

    Matrix dx = Matrix::Zero(c.h_last.rows(), cfg.width);
    for (std::size_t j = 0; j < c.logit_rows.size(); ++j)
        dx.row(c.logit_rows[j]) += dx_rows.row(static_cast<std::int64_t>(j));

    for (std::int64_t l = cfg.depth - 1; l >= 0; --l) {
        const auto& lc = c.layers[static_cast<std::size_t>(l)];
        const auto& lp = params.layers[static_cast<std::size_t>(l)];
        auto& gl = g.layers[static_cast<std::size_t>(l)];

        // undo the prune: scatter gradients back to pre-prune rows
        if (!lc.keep.empty()) {
            const std::int64_t nv_before =
                static_cast<std::int64_t>(lc.layout.vision_positions.size());
            const std::int64_t k = static_cast<std::int64_t>(lc.keep.size());
            const std::int64_t n_text = lc.layout.n_text();
            Matrix expanded = Matrix::Zero(nv_before + n_text, cfg.width);
            for (std::int64_t j = 0; j < k; ++j)
                expanded.row(lc.keep[static_cast<std::size_t>(j)]) = dx.row(j);
            expanded.bottomRows(n_text) = dx.bottomRows(n_text);
            dx = std::move(expanded);
        }

        // ffn branch: x_next = h2 + ffn(rmsnorm(h2))
        Matrix dh2 = dx;  // residual path
        {
            const auto& fc = lc.ffn;
            Matrix dz = dx * lp.ffn_down.transpose();
            if (bb) gl.ffn_down.noalias() += fc.z.transpose() * dx;
            Matrix df;
            if (cfg.gated_ffn) {
                Matrix su = silu(fc.u);
                Matrix du = dz.cwiseProduct(fc.vup).cwiseProduct(silu_grad(fc.u));
                Matrix dvup = dz.cwiseProduct(su);
                df.noalias() = du * lp.ffn_gate.transpose();
                df.noalias() += dvup * lp.ffn_up.transpose();
                if (bb) {
                    gl.ffn_gate.noalias() += fc.f.transpose() * du;
                    gl.ffn_up.noalias() += fc.f.transpose() * dvup;
                }
            } else {
                Matrix du = dz.cwiseProduct(silu_grad(fc.u));
                df.noalias() = du * lp.ffn_up.transpose();
                if (bb) gl.ffn_up.noalias() += fc.f.transpose() * du;
            }
            rmsnorm_backward(lc.h2, lp.ffn_gain, df, dh2, bb ? &gl.ffn_gain : nullptr);
        }

        // attention branch: h2 = x + attn(rmsnorm(x))
        Matrix dxl = dh2;  // residual path
        {
            const auto& ac = lc.attn;
            const std::int64_t t = ac.a.rows();
            const std::int64_t dh_ = cfg.head_dim();
            const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh_));

            // output projection
            Matrix dconcat = Matrix::Zero(t, cfg.width);
            project_backward(ac.concat, dh2, lp.wo, lp.lora_o_down, lp.lora_o_up, scale, dconcat,
                             bb ? &gl.wo : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_o_down : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_o_up : nullptr);

            Matrix dqr = Matrix::Zero(t, cfg.width);
            Matrix dkr = Matrix::Zero(t, cfg.width);
            Matrix dv = Matrix::Zero(t, cfg.width);
            for (std::int64_t h = 0; h < cfg.heads; ++h) {
                const auto& alpha = ac.alpha[static_cast<std::size_t>(h)];
                const auto vh = ac.v.middleCols(h * dh_, dh_);
                const auto qh = ac.qr.middleCols(h * dh_, dh_);
                const auto kh = ac.kr.middleCols(h * dh_, dh_);
                const auto doh = dconcat.middleCols(h * dh_, dh_);

                dv.middleCols(h * dh_, dh_).noalias() = alpha.transpose() * doh;
                Matrix dalpha = doh * vh.transpose();
                Matrix ds = Matrix::Zero(t, t);
                for (std::int64_t i = 0; i < t; ++i) {
                    const auto arow = alpha.row(i).segment(0, i + 1);
                    const auto darow = dalpha.row(i).segment(0, i + 1);
                    const double dot = arow.dot(darow);
                    ds.row(i).segment(0, i + 1) =
                        (arow.array() * (darow.array() - dot)).matrix();
                }
                dqr.middleCols(h * dh_, dh_).noalias() = (ds * kh) * inv_sqrt_dh;
                dkr.middleCols(h * dh_, dh_).noalias() = (ds.transpose() * qh) * inv_sqrt_dh;
            }

            if (cfg.pos_encoding == PosEncoding::kRope) {
                const auto positions = row_positions(lc.layout);
                apply_rope(dqr, positions, cfg.heads, dh_, true);
                apply_rope(dkr, positions, cfg.heads, dh_, true);
            }

            Matrix da = Matrix::Zero(t, cfg.width);
            project_backward(ac.a, dqr, lp.wq, lp.lora_q_down, lp.lora_q_up, scale, da,
                             bb ? &gl.wq : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_q_down : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_q_up : nullptr);
            project_backward(ac.a, dkr, lp.wk, lp.lora_k_down, lp.lora_k_up, scale, da,
                             bb ? &gl.wk : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_k_down : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_k_up : nullptr);
            project_backward(ac.a, dv, lp.wv, lp.lora_v_down, lp.lora_v_up, scale, da,
                             bb ? &gl.wv : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_v_down : nullptr,
                             cfg.lora_rank > 0 ? &gl.lora_v_up : nullptr);

            rmsnorm_backward(lc.x, lp.attn_gain, da, dxl, bb ? &gl.attn_gain : nullptr);
        }
        dx = std::move(dxl);
    }

    // embedding stage
    const auto& s = c.sample;
    const std::int64_t nv = s.vision_features.rows();
    for (std::int64_t i = 0; i < nv; ++i) {
        g.projector_w.noalias() += s.vision_features.row(i).transpose() * dx.row(i);
        g.projector_b += dx.row(i).transpose();
    }
    if (bb) {
        std::int64_t row = nv;
        for (int id : s.prompt_ids) g.embedding.row(id) += dx.row(row++);
        for (int id : s.response_ids) g.embedding.row(id) += dx.row(row++);
        if (cfg.pos_encoding == PosEncoding::kLearned) {
            for (std::int64_t i = 0; i < c.layout0.total(); ++i)
                g.pos_table.row(c.layout0.position_of(i)) += dx.row(i);
        }
    }
    return g;
}

GradCheckReport fd_compare(const Sample& sample, Parameters& params, const PruneSchedule* sched,
                           const Parameters& grads, bool frozen_backbone, double eps) {
    auto loss_of = [&]() {
        ForwardOptions o;
        auto fr = decoder_forward(sample, params, sched, o);
        return response_loss(fr.logits, sample.response_ids);
    };
    Parameters grads_copy = grads;
    auto pv = tensor_views(params);
    auto gv = tensor_views(grads_copy);
    GradCheckReport rep;
    for (std::size_t ti = 0; ti < pv.size(); ++ti) {
        if (!tensor_trainable(pv[ti].name, frozen_backbone)) continue;
        for (std::int64_t idx = 0; idx < pv[ti].size(); ++idx) {
            const double saved = pv[ti].data[idx];
            pv[ti].data[idx] = saved + eps;
            const double lp = loss_of();
            pv[ti].data[idx] = saved - eps;
            const double lm = loss_of();
            pv[ti].data[idx] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            const double ad = gv[ti].data[idx];
            const double rel =
                std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1.0});
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_tensor = pv[ti].name;
                rep.worst_index = idx;
                rep.ad_value = ad;
                rep.fd_value = fd;
            }
        }
    }
    return rep;
}

GradCheckReport grad_check(const Sample& sample, Parameters& params, const PruneSchedule* sched,
                           bool frozen_backbone, double eps) {
    ForwardOptions o;
    o.differentiable = true;
    auto fr = decoder_forward(sample, params, sched, o);
    response_loss(fr, sample.response_ids);
    const Parameters grads = backward(fr, params, frozen_backbone);
    return fd_compare(sample, params, sched, grads, frozen_backbone, eps);
}

std::vector<int> greedy_decode(const Parameters& params, const Matrix& vision_features,
                               const std::vector<int>& prompt_ids, std::int64_t n_steps,
                               const PruneSchedule* sched, const ForwardOptions& opts) {
    Sample s;
    s.vision_features = vision_features;
    s.prompt_ids = prompt_ids;
    for (std::int64_t step = 0; step < n_steps; ++step) {
        ForwardOptions o = opts;
        o.differentiable = false;
        o.logits = LogitsMode::kLastRow;
        auto fr = decoder_forward(s, params, sched, o);
        Eigen::Index best = 0;
        fr.logits.row(0).maxCoeff(&best);
        s.response_ids.push_back(static_cast<int>(best));
    }
    return s.response_ids;
}

}  // namespace adsc
