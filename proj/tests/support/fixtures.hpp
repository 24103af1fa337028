#pragma once

#include <cstdint>

#include "adsc/decoder.hpp"
#include "adsc/model.hpp"
#include "adsc/rng.hpp"

namespace fixtures {

inline adsc::ModelConfig small_config() {
    adsc::ModelConfig cfg;
    cfg.depth = 3;
    cfg.width = 8;
    cfg.heads = 2;
    cfg.ffn_width = 16;
    cfg.vocab = 12;
    cfg.max_positions = 64;
    cfg.vision_width = 5;
    return cfg;
}

// init_parameters leaves adapter up-matrices at zero; give them small random
// values so the adapter path actually contributes in architecture tests.
inline void activate_adapters(adsc::Parameters& params, std::uint64_t seed) {
    adsc::Rng rng(seed);
    for (auto& lp : params.layers)
        for (adsc::Matrix* m : {&lp.lora_q_up, &lp.lora_k_up, &lp.lora_v_up, &lp.lora_o_up})
            for (std::int64_t j = 0; j < m->size(); ++j) m->data()[j] = 0.1 * rng.normal();
}

inline adsc::Sample random_sample(adsc::Rng& rng, const adsc::ModelConfig& cfg,
                                  std::int64_t n_vision, std::int64_t prompt_len,
                                  std::int64_t response_len) {
    adsc::Sample s;
    s.vision_features = adsc::Matrix(n_vision, cfg.vision_width);
    for (std::int64_t i = 0; i < s.vision_features.size(); ++i)
        s.vision_features.data()[i] = rng.normal();
    for (std::int64_t i = 0; i < prompt_len; ++i)
        s.prompt_ids.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab))));
    for (std::int64_t i = 0; i < response_len; ++i)
        s.response_ids.push_back(
            static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab))));
    return s;
}

}  // namespace fixtures
