#include "adsc/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>

#include "adsc/decoder.hpp"

namespace adsc {

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

struct PhaseSlice {
    PruneSchedule schedule;
    double budget = 0.0;       // achieved average in this phase
    std::int64_t end = 0;      // exclusive global step bound
};

std::vector<PhaseSlice> slice_phases(const TrainConfig& cfg,
                                     const std::vector<PhaseSchedule>& phases) {
    if (cfg.steps < static_cast<std::int64_t>(phases.size()))
        throw ConfigError("fewer steps than curriculum phases");
    std::vector<PhaseSlice> out;
    double cum = 0.0;
    for (std::size_t p = 0; p < phases.size(); ++p) {
        cum += cfg.plan.phases[p].step_fraction;
        PhaseSlice s;
        s.schedule = phases[p].schedule;
        s.budget = phases[p].achieved_avg;
        s.end = p + 1 == phases.size()
                    ? cfg.steps
                    : std::llround(cum * static_cast<double>(cfg.steps));
        out.push_back(s);
    }
    return out;
}

TrainResult run_phases(const TrainConfig& cfg, const std::vector<PhaseSchedule>& phases) {
    cfg.validate();
    const auto slices = slice_phases(cfg, phases);

    TrainResult result;
    result.params = init_parameters(cfg.model, cfg.seed);
    Parameters m = zero_parameters(cfg.model);
    Parameters v = zero_parameters(cfg.model);
    auto theta_views = tensor_views(result.params);
    auto m_views = tensor_views(m);
    auto v_views = tensor_views(v);

    const auto t0 = std::chrono::steady_clock::now();
    std::size_t phase = 0;
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        while (step >= slices[phase].end) ++phase;
        const PhaseSlice& active = slices[phase];
        const PruneSchedule* sched = active.schedule.empty() ? nullptr : &active.schedule;

        // batch gradient, fixed in-order summation
        Parameters gsum = zero_parameters(cfg.model);
        auto g_views = tensor_views(gsum);
        double loss_sum = 0.0;
        for (std::int64_t i = 0; i < cfg.batch_size; ++i) {
            const auto s = gen_sample(cfg.task, train_sample_seed(cfg.seed, step, i));
            ForwardOptions opts;
            opts.differentiable = true;
            auto fr = decoder_forward(s.sample, result.params, sched, opts);
            const double loss = response_loss(fr, s.sample.response_ids);
            if (!std::isfinite(loss))
                throw NumericError("training diverged: non-finite loss at step " +
                                   std::to_string(step + 1));
            loss_sum += loss;
            auto grads = backward(fr, result.params, cfg.frozen_backbone);
            const auto from = tensor_views(grads);
            for (std::size_t t = 0; t < g_views.size(); ++t)
                for (std::int64_t k = 0; k < g_views[t].size(); ++k)
                    g_views[t].data[k] += from[t].data[k];
        }
        const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        const double mean_loss = loss_sum * inv_b;

        const double decay =
            cfg.cosine_decay
                ? 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                        static_cast<double>(cfg.steps)))
                : 1.0;
        const double lr = cfg.learning_rate * decay;
        const double t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);

        for (std::size_t ti = 0; ti < theta_views.size(); ++ti) {
            if (!tensor_trainable(theta_views[ti].name, cfg.frozen_backbone)) continue;
            double* th = theta_views[ti].data;
            double* mm = m_views[ti].data;
            double* vv = v_views[ti].data;
            const double* gg = g_views[ti].data;
            for (std::int64_t k = 0; k < theta_views[ti].size(); ++k) {
                const double g = gg[k] * inv_b;
                mm[k] = cfg.beta1 * mm[k] + (1.0 - cfg.beta1) * g;
                vv[k] = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * g * g;
                const double mhat = mm[k] / bc1;
                const double vhat = vv[k] / bc2;
                th[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                               cfg.weight_decay * th[k]);
            }
        }

        MetricsRow row;
        row.step = step + 1;
        row.phase = static_cast<std::int64_t>(phase);
        row.budget = active.budget;
        row.loss = mean_loss;
        const bool eval_now =
            cfg.eval_every > 0 &&
            ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps);
        if (eval_now)
            row.eval_acc =
                evaluate(result.params, cfg.task, sched, cfg.eval_samples, cfg.seed);
        if (cfg.timing)
            row.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        result.metrics.push_back(row);
    }
    return result;
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    task.validate();
    task.check_model(model);
    plan.validate();
    if (plan.target.n0 != task.n_vision())
        throw ConfigError("target schedule n0 does not match the task's vision tokens");
    if (plan.target.depth != model.depth)
        throw ConfigError("target schedule depth does not match the model");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be finite and >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
        throw ConfigError("weight_decay must be finite and >= 0");
    if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
    if (eval_every > 0 && eval_samples < 1)
        throw ConfigError("eval_samples must be >= 1 when periodic eval is on");
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "step,phase,budget,loss,eval_acc,wall_ms\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "," + std::to_string(r.phase) + "," +
               fmt("%.4f", r.budget) + "," + fmt("%.8f", r.loss) + ",";
        if (r.eval_acc >= 0.0) out += fmt("%.6f", r.eval_acc);
        out += "," + fmt("%.3f", r.wall_ms) + "\n";
    }
    return out;
}

TrainResult train(const TrainConfig& config) {
    CurriculumPlan direct;
    direct.target = config.plan.target;
    direct.phases = {{1.0, 1.0}};
    TrainConfig cfg = config;
    cfg.plan = direct;
    return run_phases(cfg, curriculum_schedules(direct));
}

TrainResult run_curriculum(const TrainConfig& config) {
    config.validate();
    return run_phases(config, curriculum_schedules(config.plan));
}

double evaluate(const Parameters& params, const TaskSpec& task, const PruneSchedule* sched,
                std::int64_t n_samples, std::uint64_t seed) {
    task.check_model(params.config);
    if (n_samples < 1) throw InvalidArgument("need at least one evaluation sample");
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        const auto s = gen_sample(task, eval_sample_seed(seed, i));
        const auto pred = greedy_decode(
            params, s.sample.vision_features, s.sample.prompt_ids,
            static_cast<std::int64_t>(s.sample.response_ids.size()), sched);
        if (pred == s.sample.response_ids) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n_samples);
}

}  // namespace adsc
