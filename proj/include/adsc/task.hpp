#pragma once

#include <cstdint>

#include "adsc/decoder.hpp"
#include "adsc/model.hpp"
#include "adsc/rng.hpp"

namespace adsc {

// Procedural grid-location question. A marker glyph sits in one cell of a
// g x g grid; each cell contributes one vision token carrying that cell's
// fixed pattern plus scene content (marker, distractor glyphs, noise). The
// prompt is a fixed template and the answer is the single token naming the
// marker cell. Token ids [0, g^2) are cell labels, the next prompt_tokens
// ids are the template words.
struct TaskSpec {
    std::int64_t grid = 4;
    std::int64_t vision_width = 8;
    std::int64_t prompt_tokens = 3;
    std::int64_t decoys = 2;   // distractor glyphs placed in non-marker cells
    double noise = 0.1;        // iid per-feature noise

    std::int64_t n_cells() const { return grid * grid; }
    std::int64_t n_vision() const { return n_cells(); }
    std::int64_t min_vocab() const { return n_cells() + prompt_tokens; }

    void validate() const;
    // model compatibility: vocab, vision width, position room
    void check_model(const ModelConfig& cfg) const;
};

struct SyntheticSample {
    Sample sample;
    std::uint64_t seed = 0;
    std::int64_t marker_cell = -1;
};

// Deterministic: the same (spec, seed) regenerates the sample bit-identically.
SyntheticSample gen_sample(const TaskSpec& spec, std::uint64_t seed);

// The fixed per-cell pattern and glyph vectors (exposed for tests).
Vector cell_pattern(const TaskSpec& spec, std::int64_t cell);
Vector marker_glyph(const TaskSpec& spec);
Vector decoy_glyph(const TaskSpec& spec);

// Shared per-sample seed streams. Every evaluation path uses the eval
// stream, so compared methods see identical scenes.
std::uint64_t eval_sample_seed(std::uint64_t eval_seed, std::int64_t index);
std::uint64_t train_sample_seed(std::uint64_t seed, std::int64_t step, std::int64_t index);

}  // namespace adsc
