#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adsc/decoder.hpp"
#include "adsc/model.hpp"
#include "adsc/schedule.hpp"

namespace adsc {

// Analytical compute/memory accounting for one deployment: a model, the
// per-layer resident vision counts, a text prompt of n_text tokens, and
// decode_tokens generated tokens. Multiply-accumulate counts as 2 FLOPs;
// normalization, softmax, rotations and activations are excluded, matching
// the instrumented counter's convention.
struct CostScenario {
    ModelConfig model;
    std::vector<std::int64_t> vision_counts;  // per layer input; size == model.depth
    std::int64_t n_text = 0;
    std::int64_t decode_tokens = 0;
    std::int64_t bytes_per_element = 2;

    void validate() const;
};

// Scenario assembly; sched == nullptr means no pruning (n0 everywhere).
CostScenario make_scenario(const ModelConfig& model, const PruneSchedule* sched,
                           std::int64_t n0, std::int64_t n_text, std::int64_t decode_tokens,
                           std::int64_t bytes_per_element = 2);

// 7B-class reference dimensions used for the desk-scale efficiency study.
ModelConfig preset_7b();

// Prompt-processing cost: per layer (8d^2 + 6*d*ffn)*n_l + 4*d*n_l^2 with
// n_l = vision_counts[l] + n_text (4*d*ffn for the ungated form), plus one
// output-head evaluation 2*d*vocab.
double prefill_flops(const CostScenario& s);

// Generation cost: for each produced token t in 1..D, per layer, the linear
// term for one token plus attention 4*d*(n_l + t) against the resident
// cache (self included). No head term by convention.
double decode_flops(const CostScenario& s);

double total_flops(const CostScenario& s);

// Runs a real forward (last-row logits, no adapters assumed) counting every
// matrix product, for cross-checking the formula. Equals prefill_flops of
// the matching scenario exactly when lora_rank is 0.
std::uint64_t instrumented_flop_count(const Sample& sample, const Parameters& params,
                                      const PruneSchedule* sched);

// Peak cache footprint at the end of decode:
// sum over layers of (n_l + D) * 2 * d * bytes_per_element.
double kv_peak_bytes(const CostScenario& s);

// Cache footprint after each decode step (index 0 = end of prefill).
std::vector<double> kv_bytes_per_step(const CostScenario& s);

// One efficiency tier: a vision-token budget evaluated under its own
// prune-layer placement.
struct CostTier {
    double budget = 0.0;  // target average resident vision tokens
    std::vector<std::int64_t> prune_layers;
};

// Prune-layer placement for the desk-scale tiers: stride depth/4, starting
// at depth/4, depth/8, depth/16 for tiers 0, 1, 2.
std::vector<std::int64_t> tier_prune_layers(std::int64_t depth, int tier);

struct CostRow {
    std::string method;
    double budget = 0.0;        // achieved average vision tokens
    double prefill = 0.0;       // FLOPs
    double decode = 0.0;        // FLOPs
    double total = 0.0;         // FLOPs
    double kv_bytes = 0.0;
    double flops_rel_pct = 0.0; // vs the first (baseline) row; baseline = 100
    double kv_rel_pct = 0.0;
};

struct CostReport {
    std::int64_t n_text = 0;
    std::int64_t decode_tokens = 0;
    std::vector<CostRow> rows;                     // rows[0] is the baseline
    std::vector<std::vector<double>> kv_steps;     // per row, per decode step
};

CostReport build_cost_report(const ModelConfig& model, std::int64_t n0,
                             const std::vector<CostTier>& tiers, std::int64_t n_text,
                             std::int64_t decode_tokens, std::int64_t bytes_per_element = 2);

// CSV columns: budget, tflops, flops_rel_pct, kv_mb, kv_rel_pct (MB = 1e6
// bytes). JSON carries exact byte counts alongside.
std::string cost_report_csv(const CostReport& report);
std::string cost_report_json(const CostReport& report);

// Reference efficiency figures for the 7B-class deployment the analytical
// model is validated against: relative percentages per tier and absolute
// totals (TFLOPs, MB).
struct EfficiencyTargets {
    std::vector<double> budgets;        // {192, 128, 64}
    std::vector<double> rel_flops_pct;  // {46.3, 37.7, 29.0}
    std::vector<double> rel_kv_pct;     // {43.3, 34.7, 26.2}
    double base_tflops = 0.0;           // 9.85
    std::vector<double> tier_tflops;    // {4.56, 3.71, 2.85}
    double base_kv_mb = 0.0;            // 784.3
    std::vector<double> tier_kv_mb;     // {339.5, 272.0, 205.2}
};
EfficiencyTargets reference_efficiency_targets();

// Grid search for the prompt/decode lengths that best reproduce the
// reference percentages; minimizes the worst absolute deviation over the
// six relative cells (ties resolve to the smallest n_text, then decode).
struct CalibrationResult {
    std::int64_t n_text = 0;
    std::int64_t decode_tokens = 0;
    double max_residual_pp = 0.0;
    std::vector<double> flops_residual_pp;  // signed, per tier
    std::vector<double> kv_residual_pp;
    bool within_tolerance = false;
};

CalibrationResult calibrate(const ModelConfig& model, std::int64_t n0,
                            const std::vector<CostTier>& tiers,
                            const EfficiencyTargets& targets, std::int64_t n_text_lo,
                            std::int64_t n_text_hi, std::int64_t decode_lo,
                            std::int64_t decode_hi, double tolerance_pp);

}  // namespace adsc
