#include "adsc/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace adsc {

namespace {

constexpr double kRatioMin = 1e-9;
constexpr double kRatioMax = 1.0 - 1e-9;
constexpr double kBudgetTol = 0.5;

// counts with no degeneracy check; used by the solver to probe the whole
// ratio range (a zero simply marks the ratio invalid)
std::vector<std::int64_t> raw_counts(std::int64_t n0, std::int64_t depth, double ratio,
                                     const std::vector<std::int64_t>& prune_layers) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(depth));
    std::int64_t cur = n0;
    std::size_t next = 0;
    for (std::int64_t l = 1; l <= depth; ++l) {
        counts[static_cast<std::size_t>(l - 1)] = cur;
        if (next < prune_layers.size() && prune_layers[next] == l) {
            cur = static_cast<std::int64_t>(std::floor((1.0 - ratio) * static_cast<double>(cur)));
            ++next;
        }
    }
    return counts;
}

bool all_positive(const std::vector<std::int64_t>& counts) {
    return std::all_of(counts.begin(), counts.end(), [](std::int64_t c) { return c > 0; });
}

double avg_at(double ratio, std::int64_t n0, std::int64_t depth,
              const std::vector<std::int64_t>& prune_layers) {
    return average_vision_tokens(raw_counts(n0, depth, ratio, prune_layers));
}

void check_prune_layers(const std::vector<std::int64_t>& prune_layers, std::int64_t depth) {
    std::int64_t prev = 0;
    for (std::int64_t l : prune_layers) {
        if (l < 1 || l > depth - 1)
            throw InvalidArgument("prune layer " + std::to_string(l) + " outside [1, depth-1]");
        if (l <= prev) throw InvalidArgument("prune layers must be strictly increasing");
        prev = l;
    }
}

}  // namespace

void PruneSchedule::validate() const {
    if (n0 < 1) throw InvalidArgument("n0 must be >= 1");
    if (depth < 1) throw InvalidArgument("depth must be >= 1");
    if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("ratio must be in (0, 1)");
    check_prune_layers(prune_layers, depth);
}

void CurriculumPlan::validate() const {
    if (phases.empty()) throw InvalidArgument("curriculum needs at least one phase");
    target.validate();
    double frac_sum = 0.0;
    double prev_mult = 0.0;
    for (const auto& p : phases) {
        if (p.budget_multiplier <= 0.0) throw InvalidArgument("budget multiplier must be > 0");
        if (!allow_standard) {
            if (p.budget_multiplier > 1.0)
                throw InvalidArgument("budget multiplier > 1 (set the standard-curriculum flag to allow)");
            if (p.budget_multiplier < prev_mult)
                throw InvalidArgument("budget multipliers must be non-decreasing");
        }
        if (p.step_fraction <= 0.0) throw InvalidArgument("step fraction must be > 0");
        frac_sum += p.step_fraction;
        prev_mult = p.budget_multiplier;
    }
    if (std::abs(frac_sum - 1.0) > 1e-9)
        throw InvalidArgument("step fractions must sum to 1");
}

std::vector<CurriculumPhase> default_curriculum() {
    return {{0.8, 1.0 / 3.0}, {0.9, 1.0 / 3.0}, {1.0, 1.0 / 3.0}};
}

std::vector<std::int64_t> default_prune_layers(std::int64_t depth) {
    std::set<std::int64_t> layers;
    for (int q = 1; q <= 3; ++q) {
        std::int64_t l = depth * q / 4;
        if (l >= 1 && l <= depth - 1) layers.insert(l);
    }
    return {layers.begin(), layers.end()};
}

std::vector<std::int64_t> retained_indices(std::int64_t n, std::int64_t k) {
    if (n < 1) throw InvalidArgument("retained_indices: n must be >= 1");
    if (k < 1 || k > n)
        throw InvalidArgument("retained_indices: k must be in [1, n], got k=" + std::to_string(k) +
                              " n=" + std::to_string(n));
    std::vector<std::int64_t> idx(static_cast<std::size_t>(k));
    for (std::int64_t j = 0; j < k; ++j) {
        // floor((j + 0.5) * n / k) computed exactly in integers
        idx[static_cast<std::size_t>(j)] = (2 * j + 1) * n / (2 * k);
    }
    return idx;
}

std::vector<std::int64_t> layer_token_counts(const PruneSchedule& sched) {
    sched.validate();
    auto counts = raw_counts(sched.n0, sched.depth, sched.ratio, sched.prune_layers);
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] <= 0)
            throw ScheduleDegenerate("vision count reaches 0 at layer " + std::to_string(i + 1));
    }
    return counts;
}

double average_vision_tokens(const std::vector<std::int64_t>& counts) {
    if (counts.empty()) throw InvalidArgument("average over empty count list");
    double sum = 0.0;
    for (std::int64_t c : counts) sum += static_cast<double>(c);
    return sum / static_cast<double>(counts.size());
}

SolveResult solve_drop_ratio(double target_avg, const std::vector<std::int64_t>& prune_layers,
                             std::int64_t depth, std::int64_t n0) {
    if (n0 < 1) throw InvalidArgument("n0 must be >= 1");
    if (depth < 1) throw InvalidArgument("depth must be >= 1");
    check_prune_layers(prune_layers, depth);
    if (target_avg < 1.0 || target_avg > static_cast<double>(n0))
        throw InfeasibleBudget("target average " + std::to_string(target_avg) +
                               " outside [1, n0=" + std::to_string(n0) + "]");

    if (prune_layers.empty()) {
        if (std::abs(static_cast<double>(n0) - target_avg) > kBudgetTol)
            throw InfeasibleBudget("no prune layers: average is fixed at n0");
        return {kRatioMin, static_cast<double>(n0), false};
    }

    // largest ratio keeping every count positive (validity is monotone in r)
    double vlo = kRatioMin, vhi = kRatioMax;
    if (!all_positive(raw_counts(n0, depth, kRatioMax, prune_layers))) {
        for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (vlo + vhi);
            if (all_positive(raw_counts(n0, depth, mid, prune_layers)))
                vlo = mid;
            else
                vhi = mid;
        }
    } else {
        vlo = kRatioMax;
    }
    const double r_max_valid = vlo;
    if (!all_positive(raw_counts(n0, depth, r_max_valid, prune_layers)))
        throw InfeasibleBudget("every ratio collapses some layer to zero vision tokens");

    const double min_avg = avg_at(r_max_valid, n0, depth, prune_layers);
    const double max_avg = avg_at(kRatioMin, n0, depth, prune_layers);
    if (target_avg < min_avg - kBudgetTol)
        throw InfeasibleBudget("target average " + std::to_string(target_avg) +
                               " below minimum achievable " + std::to_string(min_avg));

    SolveResult res;
    if (target_avg >= max_avg - kBudgetTol) {
        // at or above the top plateau: smallest representable ratio
        res.ratio = kRatioMin;
        res.achieved_avg = max_avg;
        res.approximate = std::abs(max_avg - target_avg) > kBudgetTol;
        return res;
    }

    // smallest r with avg(r) <= target + tol; avg is non-increasing in r
    double lo = kRatioMin, hi = r_max_valid;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (avg_at(mid, n0, depth, prune_layers) <= target_avg + kBudgetTol)
            hi = mid;
        else
            lo = mid;
    }
    const double got = avg_at(hi, n0, depth, prune_layers);
    if (std::abs(got - target_avg) <= kBudgetTol) {
        return {hi, got, false};
    }
    // the average jumped over the window; report whichever side is closer
    const double above = avg_at(lo, n0, depth, prune_layers);
    if (std::abs(above - target_avg) < std::abs(got - target_avg) &&
        all_positive(raw_counts(n0, depth, lo, prune_layers))) {
        return {lo, above, true};
    }
    return {hi, got, true};
}

std::vector<PhaseSchedule> curriculum_schedules(const CurriculumPlan& plan) {
    plan.validate();
    const double target_avg = average_vision_tokens(layer_token_counts(plan.target));
    std::vector<PhaseSchedule> out;
    out.reserve(plan.phases.size());
    for (const auto& phase : plan.phases) {
        PhaseSchedule ps;
        ps.phase_budget = phase.budget_multiplier * target_avg;
        if (phase.budget_multiplier == 1.0) {
            ps.schedule = plan.target;
            ps.achieved_avg = target_avg;
            ps.approximate = false;
        } else {
            const auto solved = solve_drop_ratio(ps.phase_budget, plan.target.prune_layers,
                                                 plan.target.depth, plan.target.n0);
            ps.schedule = plan.target;
            ps.schedule.ratio = solved.ratio;
            ps.achieved_avg = solved.achieved_avg;
            ps.approximate = solved.approximate;
        }
        out.push_back(std::move(ps));
    }
    return out;
}

}  // namespace adsc
