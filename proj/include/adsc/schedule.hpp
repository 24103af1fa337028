#pragma once

#include <cstdint>
#include <vector>

#include "adsc/types.hpp"

namespace adsc {

// Position-based vision-token pruning plan for a decoder of `depth` layers.
// `prune_layers` lists the layers whose *output* is downsampled: layer l in
// prune_layers means layer l+1 sees floor((1 - ratio) * n_l) vision tokens.
// Text tokens are never touched.
struct PruneSchedule {
    std::int64_t n0 = 0;               // vision tokens entering layer 1
    std::int64_t depth = 0;            // decoder layers
    double ratio = 0.0;                // drop ratio r in (0, 1)
    std::vector<std::int64_t> prune_layers;  // strictly increasing, in [1, depth-1]

    void validate() const;
    bool empty() const { return prune_layers.empty(); }
};

struct SolveResult {
    double ratio = 0.0;
    double achieved_avg = 0.0;
    // set when no ratio puts the layer-average within 0.5 tokens of the target
    bool approximate = false;
};

struct CurriculumPhase {
    double budget_multiplier = 1.0;
    double step_fraction = 0.0;
};

// Phased training plan. Default validation enforces the reverse-curriculum
// shape: multipliers non-decreasing and <= 1, fractions summing to 1.
// allow_standard widens the multiplier bound for decreasing >1 plans.
struct CurriculumPlan {
    std::vector<CurriculumPhase> phases;
    PruneSchedule target;
    bool allow_standard = false;

    void validate() const;
};

// Result of resolving one curriculum phase into a concrete schedule.
struct PhaseSchedule {
    PruneSchedule schedule;
    double phase_budget = 0.0;    // multiplier * target average
    double achieved_avg = 0.0;
    bool approximate = false;
};

// Default reverse curriculum: multipliers (0.8, 0.9, 1.0), equal thirds.
std::vector<CurriculumPhase> default_curriculum();

// Default prune layers: depth * {1/4, 1/2, 3/4}, floored, deduplicated,
// clamped to [1, depth-1].
std::vector<std::int64_t> default_prune_layers(std::int64_t depth);

// Uniform retained positions: index_j = floor((j + 0.5) * n / k), j = 0..k-1.
// Exact integer evaluation; strictly increasing; k == n gives the identity.
std::vector<std::int64_t> retained_indices(std::int64_t n, std::int64_t k);

// Vision-token count at the *input* of each layer 1..depth. Throws
// ScheduleDegenerate if any count reaches zero.
std::vector<std::int64_t> layer_token_counts(const PruneSchedule& sched);

// Token budget: mean of per-layer input counts.
double average_vision_tokens(const std::vector<std::int64_t>& counts);

// Invert the floor rule: find the smallest ratio whose layer-average lands
// within 0.5 tokens of target_avg (bisection; the average is a step function
// of r so the result is the left edge of the achieving plateau). If no
// plateau lands inside the window, returns the closest achievable average
// with `approximate` set. Throws InfeasibleBudget when the target is above
// n0 or below the minimum achievable average by more than 0.5.
SolveResult solve_drop_ratio(double target_avg,
                             const std::vector<std::int64_t>& prune_layers,
                             std::int64_t depth, std::int64_t n0);

// Resolve every curriculum phase to a schedule sharing the target's layers.
// The final phase with multiplier 1.0 returns the target schedule unchanged.
std::vector<PhaseSchedule> curriculum_schedules(const CurriculumPlan& plan);

}  // namespace adsc
