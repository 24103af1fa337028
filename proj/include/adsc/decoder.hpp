#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <vector>

#include "adsc/model.hpp"
#include "adsc/schedule.hpp"
#include "adsc/types.hpp"

namespace adsc {

// Residence bookkeeping for one sequence: which vision tokens are still
// present and what their *original* position ids are. Text spans sit after
// the vision span and never shrink. Position ids are never re-indexed.
struct SequenceLayout {
    std::vector<std::int64_t> vision_positions;  // strictly increasing, in [0, text_start)
    std::int64_t text_start = 0;                 // original id of the first text row
    std::int64_t prompt_len = 0;
    std::int64_t response_len = 0;

    std::int64_t n_vision() const { return static_cast<std::int64_t>(vision_positions.size()); }
    std::int64_t n_text() const { return prompt_len + response_len; }
    std::int64_t total() const { return n_vision() + n_text(); }
    std::int64_t position_of(std::int64_t row) const;
    void validate() const;
};

SequenceLayout initial_layout(std::int64_t n_vision, std::int64_t prompt_len,
                              std::int64_t response_len);

struct Sample {
    Matrix vision_features;  // n_vision x vision_width
    std::vector<int> prompt_ids;
    std::vector<int> response_ids;
};

// Counts scalar multiplications (as 2 FLOPs each) at the decoder-stack
// matrix-product sites: q/k/v/o projections, score and value products,
// adapters, feed-forward matrices, and the output head. Embedding, the
// vision projector, rotations, normalization, softmax, and activations are
// not matrix products under this convention and are not counted.
struct FlopCounter {
    std::uint64_t flops = 0;
    void gemm(std::int64_t m, std::int64_t k, std::int64_t n) {
        flops += 2ull * static_cast<std::uint64_t>(m) * static_cast<std::uint64_t>(k) *
                 static_cast<std::uint64_t>(n);
    }
};

enum class LogitsMode {
    kResponse,  // one row per response token, shifted to the predicting row
    kLastRow,   // single row at the end of the sequence (next-token)
};

struct ForwardTrace {
    std::vector<std::int64_t> layer_counts;   // resident vision tokens at each layer input
    std::vector<double> layer_checksums;      // sum of squares of hidden after each layer
    std::map<std::int64_t, Matrix> attention; // mean-over-heads probs for captured layers
    std::vector<std::int64_t> logit_rows;     // residence rows the logits were read at
};

// Mutation hook for training-free baseline policies, applied after the given
// layer (0 = after embedding, before the first block). May drop or rewrite
// vision rows via (hidden, layout); sees captured attention through the trace.
using LayerHook = std::function<void(std::int64_t layer, Matrix& hidden, SequenceLayout& layout,
                                     const ForwardTrace& trace)>;

struct ForwardOptions {
    bool differentiable = false;
    LogitsMode logits = LogitsMode::kResponse;
    std::set<std::int64_t> capture_layers;
    FlopCounter* counter = nullptr;
    const LayerHook* hook = nullptr;  // eval-only; rejected in differentiable mode
};

struct ForwardCache;  // recorded activations; defined in decoder.cpp

struct ForwardResult {
    Matrix logits;  // rows x vocab, rows per LogitsMode
    ForwardTrace trace;
    SequenceLayout final_layout;
    std::shared_ptr<ForwardCache> cache;  // present iff differentiable
};

// Embed one sample: vision rows through the projector (plus bias), text rows
// through the embedding table; learned positions added per original id.
std::pair<Matrix, SequenceLayout> embed(const Sample& sample, const Parameters& params);

// One multi-head causal self-attention application on pre-normalized input
// (adapters and rotary positions included, pre-norm and residual excluded).
// mean_attn, when non-null, receives the mean-over-heads probabilities.
Matrix causal_attention(const Matrix& x, const SequenceLayout& layout, const LayerParams& lp,
                        const ModelConfig& cfg, Matrix* mean_attn = nullptr);

// Drop vision rows of `hidden`, keeping the residence indices in `keep`
// (sorted, strictly increasing). Text rows are always kept; original position
// ids of survivors are preserved in the layout.
void prune_states(Matrix& hidden, SequenceLayout& layout, const std::vector<std::int64_t>& keep);

// Full causal decoder pass. `sched` (nullable = no pruning) drives built-in
// position-based pruning after each listed layer; the selection depends only
// on token counts, never on attention content.
ForwardResult decoder_forward(const Sample& sample, const Parameters& params,
                              const PruneSchedule* sched, const ForwardOptions& opts = {});

// Mean next-token cross-entropy over response positions only. The
// kResponse-mode logit rows are already shifted, so row t scores response
// token t. The differentiable variant records the loss gradient in the cache.
double response_loss(const Matrix& logits, const std::vector<int>& targets);
double response_loss(ForwardResult& fr, const std::vector<int>& targets);

// Exact reverse-mode gradients for the recorded forward. Requires a
// differentiable forward with a recorded loss; throws StateError otherwise.
// Pass the same parameters the forward ran with. In frozen-backbone mode
// only adapter and projector gradients are accumulated.
Parameters backward(const ForwardResult& fr, const Parameters& params, bool frozen_backbone);

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_tensor;
    std::int64_t worst_index = -1;
    double ad_value = 0.0;
    double fd_value = 0.0;
    std::int64_t checked = 0;
};

// Compare `grads` against central finite differences of the full
// forward+loss pipeline. Relative error per entry is
// |ad - fd| / max(|ad|, |fd|, 1). Only trainable tensors are checked.
GradCheckReport fd_compare(const Sample& sample, Parameters& params, const PruneSchedule* sched,
                           const Parameters& grads, bool frozen_backbone, double eps);

// backward() followed by fd_compare().
GradCheckReport grad_check(const Sample& sample, Parameters& params, const PruneSchedule* sched,
                           bool frozen_backbone, double eps = 1e-5);

// Greedy argmax decoding of `n_steps` tokens (ties break to the lower id).
// Re-runs the forward per step; no KV reuse.
std::vector<int> greedy_decode(const Parameters& params, const Matrix& vision_features,
                               const std::vector<int>& prompt_ids, std::int64_t n_steps,
                               const PruneSchedule* sched, const ForwardOptions& opts = {});

}  // namespace adsc
