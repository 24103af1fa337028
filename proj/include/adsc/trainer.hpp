#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adsc/model.hpp"
#include "adsc/schedule.hpp"
#include "adsc/task.hpp"

namespace adsc {

// Supervised fine-tuning of the toy decoder on the grid task, optionally
// under a pruning schedule and a phased budget curriculum. Only response
// tokens contribute to the loss. With frozen_backbone only the adapters and
// the vision projector move.
struct TrainConfig {
    ModelConfig model;
    TaskSpec task;
    CurriculumPlan plan;  // target schedule plus the phase shape

    std::int64_t steps = 0;
    std::int64_t batch_size = 1;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    bool cosine_decay = true;
    std::uint64_t seed = 0;
    bool frozen_backbone = true;
    std::int64_t eval_every = 0;  // 0 disables periodic evaluation
    std::int64_t eval_samples = 64;
    bool timing = false;  // off keeps wall_ms at 0 so logs are byte-stable

    void validate() const;
};

struct MetricsRow {
    std::int64_t step = 0;   // 1-based
    std::int64_t phase = 0;  // 0-based phase index
    double budget = 0.0;     // achieved average vision tokens in force
    double loss = 0.0;
    double eval_acc = -1.0;  // negative = not measured at this step
    double wall_ms = 0.0;
};

struct TrainResult {
    Parameters params;
    std::vector<MetricsRow> metrics;
};

// CSV with header step,phase,budget,loss,eval_acc,wall_ms; unmeasured
// accuracy cells are left empty.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

// Direct training at the target schedule (single phase).
TrainResult train(const TrainConfig& config);

// Phased training over plan's budgets on one parameter state; a plan with
// the single multiplier 1.0 reproduces train() bit-exactly.
TrainResult run_curriculum(const TrainConfig& config);

// Greedy exact-match accuracy over freshly generated held-out scenes.
// `sched` nullptr evaluates at full tokens.
double evaluate(const Parameters& params, const TaskSpec& task, const PruneSchedule* sched,
                std::int64_t n_samples, std::uint64_t seed);

}  // namespace adsc
