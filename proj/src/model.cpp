#include "adsc/model.hpp"

#include <cmath>

#include "adsc/rng.hpp"

namespace adsc {

void ModelConfig::validate() const {
    if (depth < 0) throw InvalidArgument("depth must be >= 0");
    if (width < 1) throw InvalidArgument("width must be >= 1");
    if (heads < 1 || width % heads != 0)
        throw InvalidArgument("heads must divide width");
    if (pos_encoding == PosEncoding::kRope && head_dim() % 2 != 0)
        throw InvalidArgument("rotary encoding needs an even head dim");
    if (ffn_width < 1) throw InvalidArgument("ffn_width must be >= 1");
    if (vocab < 2) throw InvalidArgument("vocab must be >= 2");
    if (max_positions < 1) throw InvalidArgument("max_positions must be >= 1");
    if (vision_width < 1) throw InvalidArgument("vision_width must be >= 1");
    if (lora_rank < 0) throw InvalidArgument("lora_rank must be >= 0");
    if (!std::isfinite(lora_scale)) throw InvalidArgument("lora_scale must be finite");
}

Parameters zero_parameters(const ModelConfig& config) {
    config.validate();
    Parameters p;
    p.config = config;
    const auto d = config.width;
    p.embedding = Matrix::Zero(config.vocab, d);
    p.projector_w = Matrix::Zero(config.vision_width, d);
    p.projector_b = Vector::Zero(d);
    if (config.pos_encoding == PosEncoding::kLearned)
        p.pos_table = Matrix::Zero(config.max_positions, d);
    p.layers.resize(static_cast<std::size_t>(config.depth));
    for (auto& lp : p.layers) {
        lp.wq = Matrix::Zero(d, d);
        lp.wk = Matrix::Zero(d, d);
        lp.wv = Matrix::Zero(d, d);
        lp.wo = Matrix::Zero(d, d);
        lp.attn_gain = Vector::Zero(d);
        lp.ffn_gain = Vector::Zero(d);
        if (config.gated_ffn) lp.ffn_gate = Matrix::Zero(d, config.ffn_width);
        lp.ffn_up = Matrix::Zero(d, config.ffn_width);
        lp.ffn_down = Matrix::Zero(config.ffn_width, d);
        if (config.lora_rank > 0) {
            const auto r = config.lora_rank;
            lp.lora_q_down = Matrix::Zero(d, r); lp.lora_q_up = Matrix::Zero(r, d);
            lp.lora_k_down = Matrix::Zero(d, r); lp.lora_k_up = Matrix::Zero(r, d);
            lp.lora_v_down = Matrix::Zero(d, r); lp.lora_v_up = Matrix::Zero(r, d);
            lp.lora_o_down = Matrix::Zero(d, r); lp.lora_o_up = Matrix::Zero(r, d);
        }
    }
    p.final_gain = Vector::Zero(d);
    p.head = Matrix::Zero(d, config.vocab);
    return p;
}

namespace {

void fill_normal(Matrix& m, Rng& rng, double stddev) {
    for (std::int64_t i = 0; i < m.rows(); ++i)
        for (std::int64_t j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, stddev);
}

}  // namespace

Parameters init_parameters(const ModelConfig& config, std::uint64_t seed) {
    Parameters p = zero_parameters(config);
    const double d = static_cast<double>(config.width);
    const double inv_sqrt_d = 1.0 / std::sqrt(d);
    const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(config.ffn_width));
    const double inv_sqrt_v = 1.0 / std::sqrt(static_cast<double>(config.vision_width));

    std::uint64_t stream = 0;
    auto next_rng = [&]() { return Rng(derive_seed(seed, 0xC0DE, stream++)); };

    // unit-RMS rows everywhere: token rows then match what the vision
    // projector produces, and the first pre-norm runs well away from its
    // epsilon floor (which matters for finite-difference conditioning)
    { Rng r = next_rng(); fill_normal(p.embedding, r, 1.0); }
    { Rng r = next_rng(); fill_normal(p.projector_w, r, inv_sqrt_v); }
    if (p.pos_table.size() > 0) { Rng r = next_rng(); fill_normal(p.pos_table, r, 0.1); }
    for (auto& lp : p.layers) {
        Rng r = next_rng();
        fill_normal(lp.wq, r, inv_sqrt_d);
        fill_normal(lp.wk, r, inv_sqrt_d);
        fill_normal(lp.wv, r, inv_sqrt_d);
        fill_normal(lp.wo, r, inv_sqrt_d);
        lp.attn_gain.setOnes();
        lp.ffn_gain.setOnes();
        if (lp.ffn_gate.size() > 0) fill_normal(lp.ffn_gate, r, inv_sqrt_d);
        fill_normal(lp.ffn_up, r, inv_sqrt_d);
        fill_normal(lp.ffn_down, r, inv_sqrt_f);
        if (config.lora_rank > 0) {
            fill_normal(lp.lora_q_down, r, inv_sqrt_d);
            fill_normal(lp.lora_k_down, r, inv_sqrt_d);
            fill_normal(lp.lora_v_down, r, inv_sqrt_d);
            fill_normal(lp.lora_o_down, r, inv_sqrt_d);
            // up-matrices stay zero: adapters start as the identity
        }
    }
    p.final_gain.setOnes();
    { Rng r = next_rng(); fill_normal(p.head, r, inv_sqrt_d); }
    return p;
}

namespace {

void add_view(std::vector<TensorView>& out, const std::string& name, Matrix& m) {
    if (m.size() == 0) return;
    out.push_back({name, m.data(), m.rows(), m.cols(), 2});
}

void add_view(std::vector<TensorView>& out, const std::string& name, Vector& v) {
    if (v.size() == 0) return;
    out.push_back({name, v.data(), v.rows(), 1, 1});
}

}  // namespace

std::vector<TensorView> tensor_views(Parameters& p) {
    std::vector<TensorView> out;
    add_view(out, "embedding", p.embedding);
    add_view(out, "projector.w", p.projector_w);
    add_view(out, "projector.b", p.projector_b);
    add_view(out, "pos_table", p.pos_table);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        auto& lp = p.layers[i];
        const std::string pre = "layer" + std::to_string(i) + ".";
        add_view(out, pre + "attn_gain", lp.attn_gain);
        add_view(out, pre + "wq", lp.wq);
        add_view(out, pre + "wk", lp.wk);
        add_view(out, pre + "wv", lp.wv);
        add_view(out, pre + "wo", lp.wo);
        add_view(out, pre + "lora_q_down", lp.lora_q_down);
        add_view(out, pre + "lora_q_up", lp.lora_q_up);
        add_view(out, pre + "lora_k_down", lp.lora_k_down);
        add_view(out, pre + "lora_k_up", lp.lora_k_up);
        add_view(out, pre + "lora_v_down", lp.lora_v_down);
        add_view(out, pre + "lora_v_up", lp.lora_v_up);
        add_view(out, pre + "lora_o_down", lp.lora_o_down);
        add_view(out, pre + "lora_o_up", lp.lora_o_up);
        add_view(out, pre + "ffn_gain", lp.ffn_gain);
        add_view(out, pre + "ffn_gate", lp.ffn_gate);
        add_view(out, pre + "ffn_up", lp.ffn_up);
        add_view(out, pre + "ffn_down", lp.ffn_down);
    }
    add_view(out, "final_gain", p.final_gain);
    add_view(out, "head", p.head);
    return out;
}

bool tensor_trainable(const std::string& name, bool frozen_backbone) {
    if (!frozen_backbone) return true;
    return name.rfind("projector.", 0) == 0 || name.find(".lora_") != std::string::npos;
}

Parameters lora_merge(const Parameters& params) {
    Parameters out = params;
    if (params.config.lora_rank == 0) return out;
    const double scale = params.config.lora_scale / static_cast<double>(params.config.lora_rank);
    for (auto& lp : out.layers) {
        lp.wq += scale * lp.lora_q_down * lp.lora_q_up;
        lp.wk += scale * lp.lora_k_down * lp.lora_k_up;
        lp.wv += scale * lp.lora_v_down * lp.lora_v_up;
        lp.wo += scale * lp.lora_o_down * lp.lora_o_up;
        lp.lora_q_down.setZero(); lp.lora_q_up.setZero();
        lp.lora_k_down.setZero(); lp.lora_k_up.setZero();
        lp.lora_v_down.setZero(); lp.lora_v_up.setZero();
        lp.lora_o_down.setZero(); lp.lora_o_up.setZero();
    }
    return out;
}

}  // namespace adsc
