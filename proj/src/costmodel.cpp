#include "adsc/costmodel.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "json.hpp"

namespace adsc {

namespace {

double linear_coef(const ModelConfig& m) {
    const double d = static_cast<double>(m.width);
    const double f = static_cast<double>(m.ffn_width);
    return 8.0 * d * d + (m.gated_ffn ? 6.0 : 4.0) * d * f;
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace

void CostScenario::validate() const {
    model.validate();
    if (static_cast<std::int64_t>(vision_counts.size()) != model.depth)
        throw InvalidArgument("vision_counts must have one entry per layer");
    for (std::int64_t c : vision_counts)
        if (c < 1) throw InvalidArgument("vision counts must be positive");
    if (n_text < 1) throw InvalidArgument("n_text must be >= 1");
    if (decode_tokens < 0) throw InvalidArgument("decode_tokens must be >= 0");
    if (bytes_per_element < 1) throw InvalidArgument("bytes_per_element must be >= 1");
}

CostScenario make_scenario(const ModelConfig& model, const PruneSchedule* sched,
                           std::int64_t n0, std::int64_t n_text, std::int64_t decode_tokens,
                           std::int64_t bytes_per_element) {
    CostScenario s;
    s.model = model;
    s.n_text = n_text;
    s.decode_tokens = decode_tokens;
    s.bytes_per_element = bytes_per_element;
    if (sched) {
        if (sched->depth != model.depth)
            throw InvalidArgument("schedule depth does not match the model");
        if (sched->n0 != n0) throw InvalidArgument("schedule n0 does not match the scenario");
        s.vision_counts = layer_token_counts(*sched);
    } else {
        if (n0 < 1) throw InvalidArgument("n0 must be >= 1");
        s.vision_counts.assign(static_cast<std::size_t>(model.depth), n0);
    }
    s.validate();
    return s;
}

ModelConfig preset_7b() {
    ModelConfig m;
    m.depth = 32;
    m.width = 4096;
    m.heads = 32;
    m.ffn_width = 11008;
    m.vocab = 32000;
    m.max_positions = 8192;
    m.vision_width = 1024;
    m.gated_ffn = true;
    return m;
}

double prefill_flops(const CostScenario& s) {
    s.validate();
    const double d = static_cast<double>(s.model.width);
    const double lin = linear_coef(s.model);
    double flops = 0.0;
    for (std::int64_t c : s.vision_counts) {
        const double n = static_cast<double>(c + s.n_text);
        flops += lin * n + 4.0 * d * n * n;
    }
    flops += 2.0 * d * static_cast<double>(s.model.vocab);
    return flops;
}

double decode_flops(const CostScenario& s) {
    s.validate();
    const double d = static_cast<double>(s.model.width);
    const double lin = linear_coef(s.model);
    double flops = 0.0;
    for (std::int64_t t = 1; t <= s.decode_tokens; ++t)
        for (std::int64_t c : s.vision_counts)
            flops += lin + 4.0 * d * static_cast<double>(c + s.n_text + t);
    return flops;
}

double total_flops(const CostScenario& s) { return prefill_flops(s) + decode_flops(s); }

std::uint64_t instrumented_flop_count(const Sample& sample, const Parameters& params,
                                      const PruneSchedule* sched) {
    FlopCounter counter;
    ForwardOptions opts;
    opts.logits = LogitsMode::kLastRow;
    opts.counter = &counter;
    decoder_forward(sample, params, sched, opts);
    return counter.flops;
}

double kv_peak_bytes(const CostScenario& s) {
    s.validate();
    const double per_token =
        2.0 * static_cast<double>(s.model.width) * static_cast<double>(s.bytes_per_element);
    double bytes = 0.0;
    for (std::int64_t c : s.vision_counts)
        bytes += static_cast<double>(c + s.n_text + s.decode_tokens) * per_token;
    return bytes;
}

std::vector<double> kv_bytes_per_step(const CostScenario& s) {
    s.validate();
    const double per_token =
        2.0 * static_cast<double>(s.model.width) * static_cast<double>(s.bytes_per_element);
    std::vector<double> out;
    for (std::int64_t t = 0; t <= s.decode_tokens; ++t) {
        double bytes = 0.0;
        for (std::int64_t c : s.vision_counts)
            bytes += static_cast<double>(c + s.n_text + t) * per_token;
        out.push_back(bytes);
    }
    return out;
}

std::vector<std::int64_t> tier_prune_layers(std::int64_t depth, int tier) {
    if (depth < 2) throw InvalidArgument("depth must be >= 2 to place prune layers");
    if (tier < 0 || tier > 2) throw InvalidArgument("tier must be 0, 1 or 2");
    std::int64_t start = depth / (4ll << tier);
    if (start < 1) start = 1;
    const std::int64_t stride = std::max<std::int64_t>(depth / 4, 1);
    std::vector<std::int64_t> layers;
    for (int i = 0; i < 3; ++i) {
        const std::int64_t l = start + stride * i;
        if (l >= 1 && l <= depth - 1 && (layers.empty() || l > layers.back()))
            layers.push_back(l);
    }
    return layers;
}

CostReport build_cost_report(const ModelConfig& model, std::int64_t n0,
                             const std::vector<CostTier>& tiers, std::int64_t n_text,
                             std::int64_t decode_tokens, std::int64_t bytes_per_element) {
    CostReport rep;
    rep.n_text = n_text;
    rep.decode_tokens = decode_tokens;

    const auto base =
        make_scenario(model, nullptr, n0, n_text, decode_tokens, bytes_per_element);
    CostRow b;
    b.method = "baseline";
    b.budget = static_cast<double>(n0);
    b.prefill = prefill_flops(base);
    b.decode = decode_flops(base);
    b.total = b.prefill + b.decode;
    b.kv_bytes = kv_peak_bytes(base);
    b.flops_rel_pct = 100.0;
    b.kv_rel_pct = 100.0;
    rep.rows.push_back(b);
    rep.kv_steps.push_back(kv_bytes_per_step(base));

    for (const auto& tier : tiers) {
        const auto solved = solve_drop_ratio(tier.budget, tier.prune_layers, model.depth, n0);
        const PruneSchedule sched{n0, model.depth, solved.ratio, tier.prune_layers};
        const auto scen =
            make_scenario(model, &sched, n0, n_text, decode_tokens, bytes_per_element);
        CostRow r;
        r.method = "ADSC";
        r.budget = solved.achieved_avg;
        r.prefill = prefill_flops(scen);
        r.decode = decode_flops(scen);
        r.total = r.prefill + r.decode;
        r.kv_bytes = kv_peak_bytes(scen);
        r.flops_rel_pct = 100.0 * r.total / b.total;
        r.kv_rel_pct = 100.0 * r.kv_bytes / b.kv_bytes;
        rep.rows.push_back(r);
        rep.kv_steps.push_back(kv_bytes_per_step(scen));
    }
    return rep;
}

std::string cost_report_csv(const CostReport& report) {
    std::string out = "budget,tflops,flops_rel_pct,kv_mb,kv_rel_pct\n";
    for (const auto& r : report.rows) {
        out += fmt("%.4f", r.budget) + "," + fmt("%.6f", r.total / 1e12) + "," +
               fmt("%.3f", r.flops_rel_pct) + "," + fmt("%.3f", r.kv_bytes / 1e6) + "," +
               fmt("%.3f", r.kv_rel_pct) + "\n";
    }
    return out;
}

std::string cost_report_json(const CostReport& report) {
    nlohmann::json j;
    j["n_text"] = report.n_text;
    j["decode_tokens"] = report.decode_tokens;
    j["rows"] = nlohmann::json::array();
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& r = report.rows[i];
        nlohmann::json row;
        row["method"] = r.method;
        row["budget"] = r.budget;
        row["prefill_flops"] = r.prefill;
        row["decode_flops"] = r.decode;
        row["total_flops"] = r.total;
        row["kv_bytes"] = r.kv_bytes;
        row["flops_rel_pct"] = r.flops_rel_pct;
        row["kv_rel_pct"] = r.kv_rel_pct;
        row["kv_bytes_per_step"] = report.kv_steps[i];
        j["rows"].push_back(row);
    }
    return j.dump(2) + "\n";
}

EfficiencyTargets reference_efficiency_targets() {
    EfficiencyTargets t;
    t.budgets = {192.0, 128.0, 64.0};
    t.rel_flops_pct = {46.3, 37.7, 29.0};
    t.rel_kv_pct = {43.3, 34.7, 26.2};
    t.base_tflops = 9.85;
    t.tier_tflops = {4.56, 3.71, 2.85};
    t.base_kv_mb = 784.3;
    t.tier_kv_mb = {339.5, 272.0, 205.2};
    return t;
}

CalibrationResult calibrate(const ModelConfig& model, std::int64_t n0,
                            const std::vector<CostTier>& tiers,
                            const EfficiencyTargets& targets, std::int64_t n_text_lo,
                            std::int64_t n_text_hi, std::int64_t decode_lo,
                            std::int64_t decode_hi, double tolerance_pp) {
    if (n_text_lo > n_text_hi || decode_lo > decode_hi || n_text_lo < 1 || decode_lo < 0)
        throw InvalidArgument("empty calibration search range");
    if (tiers.size() != targets.rel_flops_pct.size() ||
        tiers.size() != targets.rel_kv_pct.size())
        throw InvalidArgument("tier count does not match target count");

    // per-tier counts are independent of the searched lengths
    std::vector<std::vector<std::int64_t>> tier_counts;
    for (const auto& tier : tiers) {
        const auto solved = solve_drop_ratio(tier.budget, tier.prune_layers, model.depth, n0);
        const PruneSchedule sched{n0, model.depth, solved.ratio, tier.prune_layers};
        tier_counts.push_back(layer_token_counts(sched));
    }

    CalibrationResult best;
    double best_dev = 1e300;
    for (std::int64_t nt = n_text_lo; nt <= n_text_hi; ++nt) {
        for (std::int64_t dd = decode_lo; dd <= decode_hi; ++dd) {
            CostScenario base;
            base.model = model;
            base.vision_counts.assign(static_cast<std::size_t>(model.depth), n0);
            base.n_text = nt;
            base.decode_tokens = dd;
            const double base_fl = total_flops(base);
            const double base_kv = kv_peak_bytes(base);

            double dev = 0.0;
            std::vector<double> fres, kres;
            for (std::size_t i = 0; i < tiers.size(); ++i) {
                CostScenario s = base;
                s.vision_counts = tier_counts[i];
                const double f = 100.0 * total_flops(s) / base_fl - targets.rel_flops_pct[i];
                const double k = 100.0 * kv_peak_bytes(s) / base_kv - targets.rel_kv_pct[i];
                fres.push_back(f);
                kres.push_back(k);
                dev = std::max({dev, std::abs(f), std::abs(k)});
            }
            if (dev < best_dev) {
                best_dev = dev;
                best.n_text = nt;
                best.decode_tokens = dd;
                best.flops_residual_pp = fres;
                best.kv_residual_pp = kres;
            }
        }
    }
    best.max_residual_pp = best_dev;
    best.within_tolerance = best_dev <= tolerance_pp;
    return best;
}

}  // namespace adsc
