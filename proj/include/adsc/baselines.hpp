#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adsc/decoder.hpp"
#include "adsc/schedule.hpp"
#include "adsc/task.hpp"

namespace adsc {

// Training-free pruning heuristics evaluated against ADSC at matched
// per-layer budgets. attention_rank keeps the most-attended tokens (needs
// the debug attention capture), similarity_merge folds near-duplicate
// tokens together, random keeps a seeded random subset and
// uniform_untrained applies ADSC's own positional rule to a model that
// never trained under pruning.
enum class PolicyKind { kAttentionRank, kSimilarityMerge, kRandom, kUniformUntrained };

const char* policy_name(PolicyKind kind);

struct BaselinePolicy {
    PolicyKind kind = PolicyKind::kRandom;
    std::vector<std::int64_t> layers;        // application points, strictly increasing;
                                             // 0 = right after embedding (not for attention_rank)
    std::vector<std::int64_t> keep_counts;   // resident vision tokens after each application
    std::uint64_t seed = 0;                  // random-selection stream

    void validate(std::int64_t depth, std::int64_t n0) const;
};

// Policy hitting the same layers and survivor counts as the schedule, so
// the per-layer budgets match exactly.
BaselinePolicy matched_policy(PolicyKind kind, const PruneSchedule& sched,
                              std::uint64_t seed = 0);

// Resident vision count at each layer input under the policy (depth
// entries), the parity counterpart of layer_token_counts.
std::vector<std::int64_t> policy_layer_counts(const BaselinePolicy& policy, std::int64_t n0,
                                              std::int64_t depth);

// Rank vision tokens by mean attention received from the text rows at the
// given layer (mean over heads and queries); keep the k best, ties to the
// lower index. Requires that layer's captured attention in the trace;
// throws UnavailableError without it, which is exactly what a fused
// attention kernel path would hit.
std::vector<std::int64_t> attention_score_prune(const ForwardTrace& trace,
                                                const SequenceLayout& layout,
                                                std::int64_t layer, std::int64_t k);

// Merge the m most cosine-similar (even-index, odd-index) vision-token
// pairs, one match per token, most similar first, ties by lower indices.
// The odd partner becomes the pair mean and keeps its position; the even
// partner is dropped. Text rows are untouched.
void similarity_merge(Matrix& hidden, SequenceLayout& layout, std::int64_t m_pairs);

// The policy as a forward hook plus the capture set it needs. The sample
// seed feeds the random policy so selections are reproducible per scene.
LayerHook policy_hook(const BaselinePolicy& policy, std::uint64_t sample_seed);
std::set<std::int64_t> policy_capture_layers(const BaselinePolicy& policy);

// Greedy exact-match accuracy of the checkpoint under the policy, on the
// shared held-out eval stream. `budget` is the ADSC average being compared
// against; a policy whose own layer average strays from it by a token or
// more is a configuration mistake.
double run_baseline_eval(const Parameters& params, const TaskSpec& task,
                         const BaselinePolicy& policy, double budget,
                         std::int64_t n_samples, std::uint64_t seed);

}  // namespace adsc
