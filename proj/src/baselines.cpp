#include "adsc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adsc {

const char* policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::kAttentionRank: return "attention_rank";
        case PolicyKind::kSimilarityMerge: return "similarity_merge";
        case PolicyKind::kRandom: return "random";
        case PolicyKind::kUniformUntrained: return "uniform_untrained";
    }
    throw InvalidArgument("unknown policy kind");
}

void BaselinePolicy::validate(std::int64_t depth, std::int64_t n0) const {
    if (depth < 1 || n0 < 1) throw InvalidArgument("policy needs a real model and scene");
    if (layers.empty()) throw InvalidArgument("policy needs at least one application layer");
    if (layers.size() != keep_counts.size())
        throw InvalidArgument("one keep count per application layer");
    std::int64_t prev = -1;
    std::int64_t cur = n0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::int64_t l = layers[i];
        const std::int64_t k = keep_counts[i];
        if (l <= prev) throw InvalidArgument("application layers must be strictly increasing");
        if (l < 0 || l > depth - 1)
            throw InvalidArgument("application layers must lie in [0, depth-1]");
        if (kind == PolicyKind::kAttentionRank && l == 0)
            throw InvalidArgument("attention ranking needs a layer with attention");
        if (k < 1) throw InvalidArgument("keep counts must be positive");
        if (k > cur) throw InvalidArgument("keep counts cannot grow the vision span");
        if (kind == PolicyKind::kSimilarityMerge && cur - k > cur / 2)
            throw InvalidArgument("merge cannot fold more than half the tokens at once");
        prev = l;
        cur = k;
    }
}

BaselinePolicy matched_policy(PolicyKind kind, const PruneSchedule& sched, std::uint64_t seed) {
    sched.validate();
    const auto counts = layer_token_counts(sched);
    BaselinePolicy p;
    p.kind = kind;
    p.seed = seed;
    p.layers = sched.prune_layers;
    for (std::int64_t l : sched.prune_layers)
        p.keep_counts.push_back(counts[static_cast<std::size_t>(l)]);
    p.validate(sched.depth, sched.n0);
    return p;
}

std::vector<std::int64_t> policy_layer_counts(const BaselinePolicy& policy, std::int64_t n0,
                                              std::int64_t depth) {
    policy.validate(depth, n0);
    std::vector<std::int64_t> out;
    std::int64_t cur = n0;
    std::size_t pi = 0;
    if (policy.layers[0] == 0) {
        cur = policy.keep_counts[0];
        pi = 1;
    }
    for (std::int64_t l = 1; l <= depth; ++l) {
        out.push_back(cur);
        if (pi < policy.layers.size() && policy.layers[pi] == l) {
            cur = policy.keep_counts[pi];
            ++pi;
        }
    }
    return out;
}

std::vector<std::int64_t> attention_score_prune(const ForwardTrace& trace,
                                                const SequenceLayout& layout,
                                                std::int64_t layer, std::int64_t k) {
    layout.validate();
    if (layer < 1) throw InvalidArgument("attention ranking needs a layer with attention");
    const std::int64_t nv = layout.n_vision();
    const std::int64_t nt = layout.n_text();
    if (k < 1 || k > nv) throw InvalidArgument("keep count out of range");

    const auto it = trace.attention.find(layer);
    if (it == trace.attention.end())
        throw UnavailableError(
            "attention probabilities were not captured at this layer; fused attention "
            "kernels never materialize them, so this ranking path is unavailable");
    const Matrix& attn = it->second;
    if (attn.rows() != layout.total() || attn.cols() != layout.total())
        throw InvalidArgument("captured attention does not match the residence layout");

    std::vector<double> score(static_cast<std::size_t>(nv), 0.0);
    for (std::int64_t v = 0; v < nv; ++v) {
        double s = 0.0;
        for (std::int64_t q = nv; q < layout.total(); ++q) s += attn(q, v);
        score[static_cast<std::size_t>(v)] = s / static_cast<double>(nt);
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(nv));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

void similarity_merge(Matrix& hidden, SequenceLayout& layout, std::int64_t m_pairs) {
    layout.validate();
    if (hidden.rows() != layout.total())
        throw InvalidArgument("hidden state does not match the layout");
    const std::int64_t nv = layout.n_vision();
    if (m_pairs < 0 || m_pairs > nv / 2)
        throw InvalidArgument("cannot merge more pairs than the parity split allows");
    if (m_pairs == 0) return;

    struct Pair {
        std::int64_t a, b;
        double sim;
    };
    std::vector<Pair> pairs;
    for (std::int64_t a = 0; a < nv; a += 2) {
        const double na = hidden.row(a).norm();
        for (std::int64_t b = 1; b < nv; b += 2) {
            const double nb = hidden.row(b).norm();
            const double denom = na * nb;
            const double sim = denom > 0.0 ? hidden.row(a).dot(hidden.row(b)) / denom : 0.0;
            pairs.push_back({a, b, sim});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& x, const Pair& y) {
        if (x.sim != y.sim) return x.sim > y.sim;
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });

    std::vector<bool> used(static_cast<std::size_t>(nv), false);
    std::vector<std::int64_t> dropped;
    std::int64_t taken = 0;
    for (const auto& p : pairs) {
        if (taken == m_pairs) break;
        if (used[static_cast<std::size_t>(p.a)] || used[static_cast<std::size_t>(p.b)])
            continue;
        used[static_cast<std::size_t>(p.a)] = used[static_cast<std::size_t>(p.b)] = true;
        hidden.row(p.b) = 0.5 * (hidden.row(p.a) + hidden.row(p.b));
        dropped.push_back(p.a);
        ++taken;
    }

    std::sort(dropped.begin(), dropped.end());
    std::vector<std::int64_t> keep;
    std::size_t di = 0;
    for (std::int64_t v = 0; v < nv; ++v) {
        if (di < dropped.size() && dropped[di] == v) {
            ++di;
            continue;
        }
        keep.push_back(v);
    }
    prune_states(hidden, layout, keep);
}

LayerHook policy_hook(const BaselinePolicy& policy, std::uint64_t sample_seed) {
    return [policy, sample_seed](std::int64_t layer, Matrix& hidden, SequenceLayout& layout,
                                 const ForwardTrace& trace) {
        const auto it = std::find(policy.layers.begin(), policy.layers.end(), layer);
        if (it == policy.layers.end()) return;
        const std::int64_t target =
            policy.keep_counts[static_cast<std::size_t>(it - policy.layers.begin())];
        const std::int64_t cur = layout.n_vision();
        if (target > cur)
            throw InvalidArgument("policy keep count exceeds the resident vision span");
        if (target == cur) return;

        switch (policy.kind) {
            case PolicyKind::kAttentionRank: {
                const auto keep = attention_score_prune(trace, layout, layer, target);
                prune_states(hidden, layout, keep);
                break;
            }
            case PolicyKind::kSimilarityMerge:
                similarity_merge(hidden, layout, cur - target);
                break;
            case PolicyKind::kRandom: {
                Rng rng(derive_seed(policy.seed, sample_seed, static_cast<std::uint64_t>(layer)));
                std::vector<std::int64_t> idx(static_cast<std::size_t>(cur));
                std::iota(idx.begin(), idx.end(), 0);
                for (std::int64_t i = 0; i < target; ++i) {
                    const std::int64_t j =
                        i + static_cast<std::int64_t>(
                                rng.below(static_cast<std::uint64_t>(cur - i)));
                    std::swap(idx[static_cast<std::size_t>(i)],
                              idx[static_cast<std::size_t>(j)]);
                }
                idx.resize(static_cast<std::size_t>(target));
                std::sort(idx.begin(), idx.end());
                prune_states(hidden, layout, idx);
                break;
            }
            case PolicyKind::kUniformUntrained: {
                const auto keep = retained_indices(cur, target);
                prune_states(hidden, layout, keep);
                break;
            }
        }
    };
}

std::set<std::int64_t> policy_capture_layers(const BaselinePolicy& policy) {
    if (policy.kind != PolicyKind::kAttentionRank) return {};
    return {policy.layers.begin(), policy.layers.end()};
}

double run_baseline_eval(const Parameters& params, const TaskSpec& task,
                         const BaselinePolicy& policy, double budget,
                         std::int64_t n_samples, std::uint64_t seed) {
    task.check_model(params.config);
    if (n_samples < 1) throw InvalidArgument("need at least one evaluation sample");
    const auto counts = policy_layer_counts(policy, task.n_vision(), params.config.depth);
    const double avg = average_vision_tokens(counts);
    if (std::abs(avg - budget) >= 1.0)
        throw ConfigError("policy averages " + std::to_string(avg) +
                          " vision tokens but is compared against " + std::to_string(budget));

    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n_samples; ++i) {
        const auto s = gen_sample(task, eval_sample_seed(seed, i));
        const LayerHook hook = policy_hook(policy, s.seed);
        ForwardOptions opts;
        opts.hook = &hook;
        opts.capture_layers = policy_capture_layers(policy);
        const auto pred = greedy_decode(
            params, s.sample.vision_features, s.sample.prompt_ids,
            static_cast<std::int64_t>(s.sample.response_ids.size()), nullptr, opts);
        if (pred == s.sample.response_ids) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n_samples);
}

}  // namespace adsc
