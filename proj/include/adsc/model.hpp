#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adsc/types.hpp"

namespace adsc {

enum class PosEncoding { kRope, kLearned };

struct ModelConfig {
    std::int64_t depth = 0;
    std::int64_t width = 0;
    std::int64_t heads = 1;
    std::int64_t ffn_width = 0;
    std::int64_t vocab = 0;
    std::int64_t max_positions = 0;
    std::int64_t vision_width = 0;
    std::int64_t lora_rank = 0;
    double lora_scale = 1.0;
    bool gated_ffn = true;
    PosEncoding pos_encoding = PosEncoding::kRope;

    std::int64_t head_dim() const { return width / heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
    Matrix wq, wk, wv, wo;        // width x width
    Vector attn_gain, ffn_gain;   // width
    Matrix ffn_gate;              // width x ffn_width (gated only)
    Matrix ffn_up;                // width x ffn_width
    Matrix ffn_down;              // ffn_width x width
    // adapter pairs, down: width x rank, up: rank x width (empty when rank 0)
    Matrix lora_q_down, lora_q_up;
    Matrix lora_k_down, lora_k_up;
    Matrix lora_v_down, lora_v_up;
    Matrix lora_o_down, lora_o_up;
};

struct Parameters {
    ModelConfig config;
    Matrix embedding;     // vocab x width
    Matrix projector_w;   // vision_width x width
    Vector projector_b;   // width
    Matrix pos_table;     // max_positions x width (learned positions only)
    std::vector<LayerParams> layers;
    Vector final_gain;    // width
    Matrix head;          // width x vocab
};

// All tensors allocated with the right shapes, zero-filled.
Parameters zero_parameters(const ModelConfig& config);

// Random init. Adapter up-matrices start at zero so adapters begin as the
// identity; norm gains start at one.
Parameters init_parameters(const ModelConfig& config, std::uint64_t seed);

// Flat view over every tensor, in a fixed enumeration order (checkpoint and
// optimizer state both key off this order). Data is contiguous; element
// (i, j) lives at data[i + j * rows] (column-major).
struct TensorView {
    std::string name;
    double* data = nullptr;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    int rank = 2;

    std::int64_t size() const { return rows * cols; }
    double& at(std::int64_t i, std::int64_t j) const { return data[i + j * rows]; }
};

std::vector<TensorView> tensor_views(Parameters& params);

// Which tensors the optimizer may touch. Frozen-backbone mode trains only
// the adapters and the vision projector.
bool tensor_trainable(const std::string& name, bool frozen_backbone);

// Fold adapters into the base projections: W <- W + (scale / rank) * down * up,
// then zero the adapter pairs. rank 0 returns the input unchanged.
Parameters lora_merge(const Parameters& params);

}  // namespace adsc
