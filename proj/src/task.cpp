#include "adsc/task.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace adsc {

namespace {

constexpr std::uint64_t kPatternTag = 0x9a77e21;
constexpr std::uint64_t kSceneTag = 0x5ce7e;
constexpr std::int64_t kMarkerId = 1'000'003;
constexpr std::int64_t kDecoyId = 1'000'007;
// glyphs stand out against the unit-scale cell patterns
constexpr double kGlyphGain = 2.0;

Vector fixed_vector(std::uint64_t tag, std::int64_t id, std::int64_t width, double gain) {
    Rng rng(derive_seed(tag, static_cast<std::uint64_t>(id)));
    Vector v(width);
    for (std::int64_t i = 0; i < width; ++i) v[i] = gain * rng.normal();
    return v;
}

}  // namespace

void TaskSpec::validate() const {
    if (grid < 2) throw InvalidArgument("grid must be at least 2x2");
    if (vision_width < 1) throw InvalidArgument("vision_width must be >= 1");
    if (prompt_tokens < 1) throw InvalidArgument("prompt_tokens must be >= 1");
    if (decoys < 0 || decoys > n_cells() - 1)
        throw InvalidArgument("decoys must fit in the non-marker cells");
    if (!(noise >= 0.0) || !std::isfinite(noise))
        throw InvalidArgument("noise must be finite and >= 0");
}

void TaskSpec::check_model(const ModelConfig& cfg) const {
    validate();
    if (cfg.vocab < min_vocab())
        throw ConfigError("vocab too small for the cell labels and template");
    if (cfg.vision_width != vision_width)
        throw ConfigError("model vision_width does not match the task");
    if (cfg.max_positions < n_vision() + prompt_tokens + 1)
        throw ConfigError("max_positions too small for the task layout");
}

Vector cell_pattern(const TaskSpec& spec, std::int64_t cell) {
    if (cell < 0 || cell >= spec.n_cells()) throw InvalidArgument("cell out of range");
    return fixed_vector(kPatternTag, cell, spec.vision_width, 1.0);
}

Vector marker_glyph(const TaskSpec& spec) {
    return fixed_vector(kPatternTag, kMarkerId, spec.vision_width, kGlyphGain);
}

Vector decoy_glyph(const TaskSpec& spec) {
    return fixed_vector(kPatternTag, kDecoyId, spec.vision_width, kGlyphGain);
}

SyntheticSample gen_sample(const TaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(derive_seed(seed, kSceneTag));

    const std::int64_t cells = spec.n_cells();
    const std::int64_t marker = static_cast<std::int64_t>(
        rng.below(static_cast<std::uint64_t>(cells)));

    std::vector<std::int64_t> others;
    for (std::int64_t c = 0; c < cells; ++c)
        if (c != marker) others.push_back(c);
    for (std::int64_t i = 0; i < spec.decoys; ++i) {
        const std::int64_t j =
            i + static_cast<std::int64_t>(
                    rng.below(static_cast<std::uint64_t>(others.size() - i)));
        std::swap(others[static_cast<std::size_t>(i)], others[static_cast<std::size_t>(j)]);
    }
    std::vector<bool> has_decoy(static_cast<std::size_t>(cells), false);
    for (std::int64_t i = 0; i < spec.decoys; ++i)
        has_decoy[static_cast<std::size_t>(others[static_cast<std::size_t>(i)])] = true;

    const Vector marker_v = marker_glyph(spec);
    const Vector decoy_v = decoy_glyph(spec);

    SyntheticSample out;
    out.seed = seed;
    out.marker_cell = marker;
    out.sample.vision_features = Matrix(cells, spec.vision_width);
    for (std::int64_t c = 0; c < cells; ++c) {
        Vector row = cell_pattern(spec, c);
        if (c == marker) row += marker_v;
        if (has_decoy[static_cast<std::size_t>(c)]) row += decoy_v;
        for (std::int64_t j = 0; j < spec.vision_width; ++j)
            row[j] += spec.noise * rng.normal();
        out.sample.vision_features.row(c) = row.transpose();
    }
    for (std::int64_t t = 0; t < spec.prompt_tokens; ++t)
        out.sample.prompt_ids.push_back(static_cast<int>(cells + t));
    out.sample.response_ids.push_back(static_cast<int>(marker));
    return out;
}

std::uint64_t eval_sample_seed(std::uint64_t eval_seed, std::int64_t index) {
    return derive_seed(eval_seed, 0xea10, static_cast<std::uint64_t>(index));
}

std::uint64_t train_sample_seed(std::uint64_t seed, std::int64_t step, std::int64_t index) {
    return derive_seed(seed, 0x7217 + static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(index));
}

}  // namespace adsc
