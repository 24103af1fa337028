#include "adsc/cli.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "adsc/baselines.hpp"
#include "adsc/checkpoint.hpp"
#include "adsc/costmodel.hpp"
#include "adsc/schedule.hpp"
#include "adsc/task.hpp"
#include "adsc/trainer.hpp"
#include "adsc/types.hpp"

namespace adsc {
namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

std::string join(const std::vector<std::int64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(v[i]);
    }
    return s;
}

std::string utc_timestamp() {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------- config

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// `--set section.key=value`; the value is parsed as JSON, with unquoted
// strings passing through verbatim.
void apply_override(Json& doc, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like section.key=value: " + spec);
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);

    std::vector<std::string> keys;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        keys.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    for (const auto& k : keys)
        if (k.empty()) throw ConfigError("override path has an empty segment: " + path);

    Json* node = &doc;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        Json& child = (*node)[keys[i]];
        if (child.is_null()) child = Json::object();
        if (!child.is_object())
            throw ConfigError("override path crosses a non-object value: " + path);
        node = &child;
    }
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    (*node)[keys.back()] = std::move(value);
}

// Reject keys the command does not know. The schema mirrors the accepted
// shape: object values recurse, an array holding an object prototype
// validates each element, scalar leaves accept anything (type errors
// surface when the value is read).
void check_keys(const Json& doc, const Json& schema, const std::string& prefix) {
    for (const auto& [key, value] : doc.items()) {
        if (!schema.contains(key)) throw ConfigError("unknown config key: " + prefix + key);
        const Json& spec = schema.at(key);
        if (spec.is_object()) {
            if (!value.is_object())
                throw ConfigError("config key " + prefix + key + " must be an object");
            check_keys(value, spec, prefix + key + ".");
        } else if (spec.is_array() && !spec.empty() && spec.front().is_object() &&
                   value.is_array()) {
            for (const auto& elem : value) {
                if (!elem.is_object())
                    throw ConfigError("entries under " + prefix + key + " must be objects");
                check_keys(elem, spec.front(), prefix + key + ".");
            }
        }
    }
}

Json load_config(const std::string& path, const std::vector<std::string>& overrides,
                 const Json& schema) {
    Json doc = Json::object();
    if (!path.empty()) {
        doc = Json::parse(read_file(path), nullptr, false);
        if (doc.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
        if (!doc.is_object()) throw ConfigError("config file must hold a JSON object: " + path);
    }
    for (const auto& o : overrides) apply_override(doc, o);
    check_keys(doc, schema, "");
    return doc;
}

template <typename T>
T convert(const Json& v, const std::string& what) {
    try {
        return v.get<T>();
    } catch (const Json::exception&) {
        throw ConfigError("config value " + what + " has the wrong type");
    }
}

const Json& need(const Json& sec, const char* key, const std::string& where) {
    if (!sec.contains(key)) throw ConfigError("missing config value: " + where + "." + key);
    return sec.at(key);
}

template <typename T>
T get_req(const Json& sec, const char* key, const std::string& where) {
    return convert<T>(need(sec, key, where), where + "." + key);
}

template <typename T>
T get_or(const Json& sec, const char* key, T fallback, const std::string& where) {
    if (!sec.contains(key)) return fallback;
    return convert<T>(sec.at(key), where + "." + std::string(key));
}

Json section(const Json& doc, const char* key) {
    return doc.contains(key) ? doc.at(key) : Json::object();
}

const Json& need_section(const Json& doc, const char* key) {
    if (!doc.contains(key) || !doc.at(key).is_object())
        throw ConfigError(std::string("missing config section: ") + key);
    return doc.at(key);
}

std::optional<std::uint64_t> env_seed_override() {
    const char* s = std::getenv("ADSC_SEED");
    if (!s || !*s) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (errno != 0 || end == s || *end != '\0' || std::strchr(s, '-') != nullptr)
        throw ConfigError("ADSC_SEED must be a nonnegative integer");
    return static_cast<std::uint64_t>(v);
}

// ---------------------------------------------------------------- schemas

const Json& model_schema() {
    static const Json s = {
        {"depth", 0},       {"width", 0},         {"heads", 0},
        {"ffn_width", 0},   {"vocab", 0},         {"max_positions", 0},
        {"vision_width", 0}, {"lora_rank", 0},    {"lora_scale", 0.0},
        {"gated_ffn", false}, {"pos_encoding", ""},
    };
    return s;
}

const Json& task_schema() {
    static const Json s = {
        {"grid", 0}, {"vision_width", 0}, {"prompt_tokens", 0}, {"decoys", 0}, {"noise", 0.0},
    };
    return s;
}

const Json& schedule_schema() {
    static const Json s = {
        {"n0", 0}, {"depth", 0}, {"layers", Json::array({0})},
        {"ratio", 0.0}, {"target_avg", 0.0},
    };
    return s;
}

const Json& curriculum_schema() {
    static const Json s = {
        {"phases", Json::array({Json{{"multiplier", 0.0}, {"fraction", 0.0}}})},
        {"allow_standard", false},
    };
    return s;
}

const Json& train_schema() {
    static const Json s = {
        {"steps", 0},        {"batch_size", 0},      {"learning_rate", 0.0},
        {"beta1", 0.0},      {"beta2", 0.0},         {"adam_eps", 0.0},
        {"weight_decay", 0.0}, {"cosine_decay", false}, {"seed", 0},
        {"frozen_backbone", false}, {"eval_every", 0}, {"eval_samples", 0},
        {"timing", false},
    };
    return s;
}

const Json& eval_schema() {
    static const Json s = {
        {"checkpoint", ""}, {"n_samples", 0}, {"seed", 0},
    };
    return s;
}

const Json& compare_schema() {
    static const Json s = {
        {"full_checkpoint", ""}, {"adsc_checkpoint", ""}, {"n_samples", 0},
        {"seed", 0},             {"policy_seed", 0},      {"methods", Json::array({""})},
    };
    return s;
}

const Json& cost_schema() {
    static const Json s = {
        {"preset", ""},
        {"n0", 0},
        {"n_text", 0},
        {"decode_tokens", 0},
        {"bytes_per_element", 0},
        {"budgets", Json::array({0.0})},
        {"tiers", Json::array({Json{{"budget", 0.0}, {"layers", Json::array({0})}}})},
    };
    return s;
}

const Json& fit_schema() {
    static const Json s = {
        {"n_text_lo", 0}, {"n_text_hi", 0}, {"decode_lo", 0}, {"decode_hi", 0},
        {"tolerance_pp", 0.0},
    };
    return s;
}

// ---------------------------------------------------------------- parsers

ModelConfig parse_model(const Json& m) {
    ModelConfig cfg;
    cfg.depth = get_req<std::int64_t>(m, "depth", "model");
    cfg.width = get_req<std::int64_t>(m, "width", "model");
    cfg.heads = get_req<std::int64_t>(m, "heads", "model");
    cfg.ffn_width = get_req<std::int64_t>(m, "ffn_width", "model");
    cfg.vocab = get_req<std::int64_t>(m, "vocab", "model");
    cfg.max_positions = get_req<std::int64_t>(m, "max_positions", "model");
    cfg.vision_width = get_req<std::int64_t>(m, "vision_width", "model");
    cfg.lora_rank = get_or<std::int64_t>(m, "lora_rank", cfg.lora_rank, "model");
    cfg.lora_scale = get_or<double>(m, "lora_scale", cfg.lora_scale, "model");
    cfg.gated_ffn = get_or<bool>(m, "gated_ffn", cfg.gated_ffn, "model");
    if (m.contains("pos_encoding")) {
        const auto s = convert<std::string>(m.at("pos_encoding"), "model.pos_encoding");
        if (s == "rope")
            cfg.pos_encoding = PosEncoding::kRope;
        else if (s == "learned")
            cfg.pos_encoding = PosEncoding::kLearned;
        else
            throw ConfigError("model.pos_encoding must be \"rope\" or \"learned\"");
    }
    cfg.validate();
    return cfg;
}

TaskSpec parse_task(const Json& t) {
    TaskSpec spec;
    spec.grid = get_or<std::int64_t>(t, "grid", spec.grid, "task");
    spec.vision_width = get_or<std::int64_t>(t, "vision_width", spec.vision_width, "task");
    spec.prompt_tokens = get_or<std::int64_t>(t, "prompt_tokens", spec.prompt_tokens, "task");
    spec.decoys = get_or<std::int64_t>(t, "decoys", spec.decoys, "task");
    spec.noise = get_or<double>(t, "noise", spec.noise, "task");
    spec.validate();
    return spec;
}

std::vector<std::int64_t> parse_int_array(const Json& arr, const std::string& where) {
    if (!arr.is_array()) throw ConfigError(where + " must be an array");
    std::vector<std::int64_t> out;
    for (const auto& e : arr) out.push_back(convert<std::int64_t>(e, where));
    return out;
}

struct ScheduleSetup {
    PruneSchedule sched;
    std::optional<double> target_avg;  // set when the ratio was solved
    SolveResult solved;
};

ScheduleSetup parse_schedule(const Json& s) {
    ScheduleSetup setup;
    setup.sched.n0 = get_req<std::int64_t>(s, "n0", "schedule");
    setup.sched.depth = get_req<std::int64_t>(s, "depth", "schedule");
    setup.sched.prune_layers = parse_int_array(need(s, "layers", "schedule"), "schedule.layers");
    const bool has_ratio = s.contains("ratio");
    const bool has_target = s.contains("target_avg");
    if (has_ratio && has_target)
        throw ConfigError("schedule takes either ratio or target_avg, not both");
    if (has_target) {
        const double target = convert<double>(s.at("target_avg"), "schedule.target_avg");
        setup.solved = solve_drop_ratio(target, setup.sched.prune_layers, setup.sched.depth,
                                        setup.sched.n0);
        setup.sched.ratio = setup.solved.ratio;
        setup.target_avg = target;
    } else if (has_ratio) {
        setup.sched.ratio = convert<double>(s.at("ratio"), "schedule.ratio");
    } else if (setup.sched.prune_layers.empty()) {
        setup.sched.ratio = 0.5;  // nothing is pruned, any interior ratio works
    } else {
        throw ConfigError("schedule needs ratio or target_avg");
    }
    setup.sched.validate();
    return setup;
}

CurriculumPlan parse_plan(const Json& cur, const PruneSchedule& target) {
    CurriculumPlan plan;
    plan.target = target;
    plan.phases = {{1.0, 1.0}};
    if (cur.contains("phases")) {
        const Json& p = cur.at("phases");
        if (p.is_string()) {
            if (convert<std::string>(p, "curriculum.phases") != "default")
                throw ConfigError("curriculum.phases takes an array or \"default\"");
            plan.phases = default_curriculum();
        } else if (p.is_array()) {
            plan.phases.clear();
            for (const auto& e : p) {
                CurriculumPhase phase;
                phase.budget_multiplier = get_req<double>(e, "multiplier", "curriculum.phases");
                phase.step_fraction = get_req<double>(e, "fraction", "curriculum.phases");
                plan.phases.push_back(phase);
            }
        } else {
            throw ConfigError("curriculum.phases takes an array or \"default\"");
        }
    }
    plan.allow_standard = get_or<bool>(cur, "allow_standard", plan.allow_standard, "curriculum");
    return plan;
}

// ---------------------------------------------------------------- outputs

class OutputDir {
  public:
    OutputDir() = default;
    explicit OutputDir(const std::string& dir) : dir_(dir), enabled_(!dir.empty()) {
        if (enabled_) fs::create_directories(dir_);
    }
    bool enabled() const { return enabled_; }
    std::string path_str(const std::string& name) const { return (dir_ / name).string(); }
    void write(const std::string& name, const std::string& content) const {
        if (!enabled_) return;
        std::ofstream f(dir_ / name, std::ios::binary);
        f << content;
        if (!f) throw Error("cannot write " + (dir_ / name).string());
    }

  private:
    fs::path dir_;
    bool enabled_ = false;
};

// Wall-clock facts live only in this sidecar so every other output byte is
// a function of (config, seed).
struct CommandClock {
    std::string started = utc_timestamp();
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
};

void write_meta(const OutputDir& out, const std::string& command, const CommandClock& clock) {
    if (!out.enabled()) return;
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - clock.t0)
                        .count();
    Json meta;
    meta["command"] = command;
    meta["started"] = clock.started;
    meta["finished"] = utc_timestamp();
    meta["duration_ms"] = ms;
    out.write("meta.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------- schedule

void cmd_schedule(std::int64_t n0, std::int64_t depth, const std::string& layers_text,
                  std::optional<double> target, std::optional<double> ratio,
                  const std::string& out_dir) {
    if (target.has_value() == ratio.has_value())
        throw ConfigError("give exactly one of --target-avg or --ratio");

    CommandClock clock;
    PruneSchedule sched;
    sched.n0 = n0;
    sched.depth = depth;
    std::size_t start = 0;
    if (!layers_text.empty()) {
        while (start <= layers_text.size()) {
            const auto comma = layers_text.find(',', start);
            const std::string tok = layers_text.substr(
                start, comma == std::string::npos ? std::string::npos : comma - start);
            errno = 0;
            char* end = nullptr;
            const long long v = std::strtoll(tok.c_str(), &end, 10);
            if (errno != 0 || end == tok.c_str() || *end != '\0')
                throw ConfigError("bad layer list entry: \"" + tok + "\"");
            sched.prune_layers.push_back(v);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }

    SolveResult solved;
    if (target) {
        solved = solve_drop_ratio(*target, sched.prune_layers, sched.depth, sched.n0);
        sched.ratio = solved.ratio;
    } else {
        sched.ratio = *ratio;
    }
    sched.validate();
    const auto counts = layer_token_counts(sched);
    const double avg = average_vision_tokens(counts);

    OutputDir out(out_dir);
    Json rc;
    rc["command"] = "schedule";
    rc["n0"] = n0;
    rc["depth"] = depth;
    rc["layers"] = sched.prune_layers;
    if (target)
        rc["target_avg"] = *target;
    else
        rc["ratio"] = sched.ratio;
    out.write("resolved_config.json", rc.dump(2) + "\n");

    std::ostringstream os;
    if (target) {
        os << "ratio " << fmt("%.6f", sched.ratio) << " (solved for target "
           << fmt("%.4f", *target) << ", achieved " << fmt("%.4f", solved.achieved_avg);
        if (solved.approximate) os << ", nearest achievable";
        os << ")\n";
    } else {
        os << "ratio " << fmt("%.6f", sched.ratio) << "\n";
    }
    os << "layer counts: " << join(counts) << "\n";
    os << "average vision tokens " << fmt("%.4f", avg) << ", compression "
       << fmt("%.2f", static_cast<double>(n0) / avg) << "x\n";

    Json stages = Json::array();
    std::vector<std::int64_t> pos(static_cast<std::size_t>(n0));
    std::iota(pos.begin(), pos.end(), 0);
    for (const std::int64_t l : sched.prune_layers) {
        const std::int64_t before = counts[static_cast<std::size_t>(l - 1)];
        const std::int64_t after = counts[static_cast<std::size_t>(l)];
        const auto keep = retained_indices(before, after);
        std::vector<std::int64_t> next(keep.size());
        for (std::size_t j = 0; j < keep.size(); ++j)
            next[j] = pos[static_cast<std::size_t>(keep[j])];
        os << "after layer " << l << ": keep " << after << " of " << before << ": "
           << join(next) << "\n";
        Json st;
        st["layer"] = l;
        st["before"] = before;
        st["after"] = after;
        st["positions"] = next;
        stages.push_back(st);
        pos = std::move(next);
    }
    std::cout << os.str();

    Json j;
    j["n0"] = sched.n0;
    j["depth"] = sched.depth;
    j["prune_layers"] = sched.prune_layers;
    j["ratio"] = sched.ratio;
    if (target) {
        j["target_avg"] = *target;
        j["achieved_avg"] = solved.achieved_avg;
        j["approximate"] = solved.approximate;
    }
    j["layer_counts"] = counts;
    j["average_vision_tokens"] = avg;
    j["compression"] = static_cast<double>(n0) / avg;
    j["stages"] = stages;
    out.write("schedule.json", j.dump(2) + "\n");
    write_meta(out, "schedule", clock);
}

// ---------------------------------------------------------------- cost

void cmd_cost(const std::string& config_path, const std::vector<std::string>& sets, bool fit,
              const std::string& out_dir) {
    static const Json schema = {
        {"model", model_schema()},
        {"cost", cost_schema()},
        {"fit", fit_schema()},
    };
    CommandClock clock;
    const Json doc = load_config(config_path, sets, schema);
    const Json cost = section(doc, "cost");

    const std::string preset = get_or<std::string>(cost, "preset", "", "cost");
    const bool has_model = doc.contains("model");
    ModelConfig model;
    if (!preset.empty() && has_model)
        throw ConfigError("give either cost.preset or a model section, not both");
    if (!preset.empty()) {
        if (preset != "7b") throw ConfigError("unknown cost.preset: " + preset);
        model = preset_7b();
    } else if (has_model) {
        model = parse_model(doc.at("model"));
    } else {
        throw ConfigError("cost needs cost.preset or a model section");
    }

    const std::int64_t n0 = get_req<std::int64_t>(cost, "n0", "cost");
    const std::int64_t bytes = get_or<std::int64_t>(cost, "bytes_per_element", 2, "cost");

    std::vector<CostTier> tiers;
    if (cost.contains("tiers") && cost.contains("budgets"))
        throw ConfigError("give either cost.budgets or cost.tiers, not both");
    if (cost.contains("tiers")) {
        if (!cost.at("tiers").is_array()) throw ConfigError("cost.tiers must be an array");
        for (const auto& e : cost.at("tiers")) {
            CostTier t;
            t.budget = get_req<double>(e, "budget", "cost.tiers");
            t.prune_layers =
                parse_int_array(need(e, "layers", "cost.tiers"), "cost.tiers.layers");
            tiers.push_back(t);
        }
    } else if (cost.contains("budgets")) {
        if (!cost.at("budgets").is_array()) throw ConfigError("cost.budgets must be an array");
        std::vector<double> budgets;
        for (const auto& e : cost.at("budgets"))
            budgets.push_back(convert<double>(e, "cost.budgets"));
        if (budgets.size() > 3)
            throw ConfigError("cost.budgets takes at most three entries; use cost.tiers for "
                              "custom placements");
        for (std::size_t i = 0; i < budgets.size(); ++i)
            tiers.push_back({budgets[i], tier_prune_layers(model.depth, static_cast<int>(i))});
    }

    OutputDir out(out_dir);
    out.write("resolved_config.json", doc.dump(2) + "\n");

    CostReport report;
    std::string fit_text;
    Json fit_json;
    if (fit) {
        if (cost.contains("n_text") || cost.contains("decode_tokens"))
            throw ConfigError(
                "--fit calibrates the prompt and decode lengths; drop cost.n_text and "
                "cost.decode_tokens");
        const Json fc = section(doc, "fit");
        const double tol = get_or<double>(fc, "tolerance_pp", 2.5, "fit");
        const CalibrationResult res =
            calibrate(model, n0, tiers, reference_efficiency_targets(),
                      get_or<std::int64_t>(fc, "n_text_lo", 30, "fit"),
                      get_or<std::int64_t>(fc, "n_text_hi", 90, "fit"),
                      get_or<std::int64_t>(fc, "decode_lo", 30, "fit"),
                      get_or<std::int64_t>(fc, "decode_hi", 110, "fit"), tol);
        report = build_cost_report(model, n0, tiers, res.n_text, res.decode_tokens, bytes);

        std::ostringstream os;
        os << "calibrated n_text " << res.n_text << " decode_tokens " << res.decode_tokens
           << "\n";
        os << "flops residuals (pp):";
        for (const double r : res.flops_residual_pp) os << ' ' << fmt("%+.2f", r);
        os << "\nkv residuals (pp):";
        for (const double r : res.kv_residual_pp) os << ' ' << fmt("%+.2f", r);
        os << "\nmax residual " << fmt("%.2f", res.max_residual_pp) << "pp ("
           << (res.within_tolerance ? "within" : "exceeds") << " tolerance "
           << fmt("%.2f", tol) << "pp)\n";
        fit_text = os.str();

        fit_json["n_text"] = res.n_text;
        fit_json["decode_tokens"] = res.decode_tokens;
        fit_json["max_residual_pp"] = res.max_residual_pp;
        fit_json["flops_residual_pp"] = res.flops_residual_pp;
        fit_json["kv_residual_pp"] = res.kv_residual_pp;
        fit_json["within_tolerance"] = res.within_tolerance;
    } else {
        const std::int64_t n_text = get_req<std::int64_t>(cost, "n_text", "cost");
        const std::int64_t decode = get_req<std::int64_t>(cost, "decode_tokens", "cost");
        report = build_cost_report(model, n0, tiers, n_text, decode, bytes);
    }

    const std::string csv = cost_report_csv(report);
    if (!fit_text.empty()) std::cout << fit_text;
    std::cout << "n_text " << report.n_text << " decode_tokens " << report.decode_tokens << "\n"
              << csv;
    out.write("cost.csv", csv);
    out.write("cost.json", cost_report_json(report));
    if (fit) out.write("fit.json", fit_json.dump(2) + "\n");
    write_meta(out, "cost", clock);
}

// ---------------------------------------------------------------- train

void cmd_train(const std::string& config_path, const std::vector<std::string>& sets,
               const std::string& out_dir) {
    static const Json schema = {
        {"model", model_schema()},         {"task", task_schema()},
        {"schedule", schedule_schema()},   {"curriculum", curriculum_schema()},
        {"train", train_schema()},
    };
    CommandClock clock;
    Json doc = load_config(config_path, sets, schema);

    TrainConfig cfg;
    cfg.model = parse_model(need_section(doc, "model"));
    cfg.task = parse_task(section(doc, "task"));
    const ScheduleSetup setup = parse_schedule(need_section(doc, "schedule"));
    cfg.plan = parse_plan(section(doc, "curriculum"), setup.sched);

    const Json tr = need_section(doc, "train");
    cfg.steps = get_req<std::int64_t>(tr, "steps", "train");
    cfg.batch_size = get_or<std::int64_t>(tr, "batch_size", cfg.batch_size, "train");
    cfg.learning_rate = get_or<double>(tr, "learning_rate", cfg.learning_rate, "train");
    cfg.beta1 = get_or<double>(tr, "beta1", cfg.beta1, "train");
    cfg.beta2 = get_or<double>(tr, "beta2", cfg.beta2, "train");
    cfg.adam_eps = get_or<double>(tr, "adam_eps", cfg.adam_eps, "train");
    cfg.weight_decay = get_or<double>(tr, "weight_decay", cfg.weight_decay, "train");
    cfg.cosine_decay = get_or<bool>(tr, "cosine_decay", cfg.cosine_decay, "train");
    cfg.seed = get_or<std::uint64_t>(tr, "seed", cfg.seed, "train");
    cfg.frozen_backbone = get_or<bool>(tr, "frozen_backbone", cfg.frozen_backbone, "train");
    cfg.eval_every = get_or<std::int64_t>(tr, "eval_every", cfg.eval_every, "train");
    cfg.eval_samples = get_or<std::int64_t>(tr, "eval_samples", cfg.eval_samples, "train");
    cfg.timing = get_or<bool>(tr, "timing", cfg.timing, "train");
    if (const auto s = env_seed_override()) cfg.seed = *s;
    doc["train"]["seed"] = cfg.seed;

    OutputDir out(out_dir);
    out.write("resolved_config.json", doc.dump(2) + "\n");

    const TrainResult result = run_curriculum(cfg);

    save_checkpoint(out.path_str("checkpoint.bin"), result.params);
    out.write("metrics.csv", metrics_csv(result.metrics));
    write_meta(out, "train", clock);

    if (!result.metrics.empty()) {
        const MetricsRow& last = result.metrics.back();
        std::cout << "trained " << last.step << " steps over " << cfg.plan.phases.size()
                  << (cfg.plan.phases.size() == 1 ? " phase" : " phases") << ", final loss "
                  << fmt("%.8f", last.loss) << "\n";
        for (auto it = result.metrics.rbegin(); it != result.metrics.rend(); ++it) {
            if (it->eval_acc >= 0.0) {
                std::cout << "final eval accuracy " << fmt("%.6f", it->eval_acc) << "\n";
                break;
            }
        }
    }
    std::cout << "checkpoint: " << out.path_str("checkpoint.bin") << "\n";
}

// ---------------------------------------------------------------- eval

void cmd_eval(const std::string& config_path, const std::vector<std::string>& sets,
              const std::string& out_dir) {
    static const Json schema = {
        {"task", task_schema()},
        {"schedule", schedule_schema()},
        {"eval", eval_schema()},
    };
    CommandClock clock;
    Json doc = load_config(config_path, sets, schema);

    const TaskSpec task = parse_task(section(doc, "task"));
    std::optional<ScheduleSetup> setup;
    if (doc.contains("schedule")) setup = parse_schedule(need_section(doc, "schedule"));

    const Json ev = need_section(doc, "eval");
    const std::string ckpt = get_req<std::string>(ev, "checkpoint", "eval");
    const std::int64_t n = get_or<std::int64_t>(ev, "n_samples", 400, "eval");
    std::uint64_t seed = get_or<std::uint64_t>(ev, "seed", 0, "eval");
    if (const auto s = env_seed_override()) seed = *s;
    doc["eval"]["seed"] = seed;

    OutputDir out(out_dir);
    out.write("resolved_config.json", doc.dump(2) + "\n");

    const Parameters params = load_checkpoint(ckpt);
    const PruneSchedule* sched = setup ? &setup->sched : nullptr;
    double budget = static_cast<double>(task.n_vision());
    if (setup) budget = average_vision_tokens(layer_token_counts(setup->sched));
    const double acc = evaluate(params, task, sched, n, seed);

    std::string csv = "budget,n_samples,accuracy\n";
    csv += fmt("%.4f", budget) + "," + std::to_string(n) + "," + fmt("%.6f", acc) + "\n";
    out.write("eval.csv", csv);
    write_meta(out, "eval", clock);
    std::cout << "accuracy " << fmt("%.6f", acc) << " on " << n << " samples (budget "
              << fmt("%.4f", budget) << ")\n";
}

// ---------------------------------------------------------------- compare

void cmd_compare(const std::string& config_path, const std::vector<std::string>& sets,
                 const std::string& out_dir) {
    static const Json schema = {
        {"task", task_schema()},
        {"schedule", schedule_schema()},
        {"compare", compare_schema()},
    };
    CommandClock clock;
    Json doc = load_config(config_path, sets, schema);

    const TaskSpec task = parse_task(section(doc, "task"));
    const ScheduleSetup setup = parse_schedule(need_section(doc, "schedule"));

    const Json cp = need_section(doc, "compare");
    const std::string full_path = get_req<std::string>(cp, "full_checkpoint", "compare");
    const std::string adsc_path = get_req<std::string>(cp, "adsc_checkpoint", "compare");
    const std::int64_t n = get_or<std::int64_t>(cp, "n_samples", 400, "compare");
    std::uint64_t seed = get_or<std::uint64_t>(cp, "seed", 0, "compare");
    const std::uint64_t policy_seed = get_or<std::uint64_t>(cp, "policy_seed", 0, "compare");

    std::vector<std::string> names = {"attention_rank", "similarity_merge", "random"};
    if (cp.contains("methods")) {
        names.clear();
        if (!cp.at("methods").is_array())
            throw ConfigError("compare.methods must be an array of method names");
        for (const auto& e : cp.at("methods"))
            names.push_back(convert<std::string>(e, "compare.methods"));
    }
    std::vector<PolicyKind> kinds;
    for (const auto& name : names) {
        if (name == "attention_rank")
            kinds.push_back(PolicyKind::kAttentionRank);
        else if (name == "similarity_merge")
            kinds.push_back(PolicyKind::kSimilarityMerge);
        else if (name == "random")
            kinds.push_back(PolicyKind::kRandom);
        else if (name == "uniform_untrained")
            kinds.push_back(PolicyKind::kUniformUntrained);
        else if (name == "ADSC")
            throw ConfigError("ADSC is always the first comparison row; list only baselines");
        else
            throw ConfigError("unknown compare method: " + name);
    }
    {
        auto sorted = names;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("duplicate compare method");
    }
    if (const auto s = env_seed_override()) seed = *s;
    doc["compare"]["seed"] = seed;

    OutputDir out(out_dir);
    out.write("resolved_config.json", doc.dump(2) + "\n");

    const Parameters full = load_checkpoint(full_path);
    const Parameters adsc = load_checkpoint(adsc_path);
    const double budget = average_vision_tokens(layer_token_counts(setup.sched));
    const double full_acc = evaluate(full, task, nullptr, n, seed);

    struct Row {
        std::string method;
        double acc = 0.0;
    };
    std::vector<Row> rows;
    rows.push_back({"ADSC", evaluate(adsc, task, &setup.sched, n, seed)});
    for (std::size_t i = 0; i < names.size(); ++i) {
        const BaselinePolicy policy = matched_policy(kinds[i], setup.sched, policy_seed);
        rows.push_back({names[i], run_baseline_eval(full, task, policy, budget, n, seed)});
    }
    double best = rows.front().acc;
    for (const auto& r : rows) best = std::max(best, r.acc);

    std::string csv = "method,budget,accuracy,rel_to_full_pct,best\n";
    Json jrows = Json::array();
    std::ostringstream os;
    os << "full-token anchor " << fmt("%.6f", full_acc) << " (" << n << " samples)\n";
    for (const auto& r : rows) {
        const double rel = full_acc > 0.0 ? r.acc / full_acc * 100.0 : 0.0;
        const bool is_best = r.acc == best;
        csv += r.method + "," + fmt("%.4f", budget) + "," + fmt("%.6f", r.acc) + "," +
               fmt("%.3f", rel) + "," + (is_best ? "1" : "0") + "\n";
        Json jr;
        jr["method"] = r.method;
        jr["accuracy"] = r.acc;
        jr["rel_to_full_pct"] = rel;
        jr["best"] = is_best;
        jrows.push_back(jr);
        os << r.method << ": accuracy " << fmt("%.6f", r.acc) << " (" << fmt("%.3f", rel)
           << "% of full)" << (is_best ? " [best]" : "") << "\n";
    }

    Json j;
    j["budget"] = budget;
    j["n_samples"] = n;
    j["seed"] = seed;
    j["policy_seed"] = policy_seed;
    j["full_accuracy"] = full_acc;
    j["rows"] = jrows;
    out.write("compare.csv", csv);
    out.write("compare.json", j.dump(2) + "\n");
    write_meta(out, "compare", clock);
    std::cout << os.str();
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"ADSC: progressive vision-token pruning for a causal multimodal decoder"};
    app.require_subcommand(1);

    struct {
        std::int64_t n0 = 0;
        std::int64_t depth = 0;
        std::string layers;
        double target_avg = 0.0;
        double ratio = 0.0;
        std::string out;
    } sa;
    auto* sched_cmd = app.add_subcommand("schedule", "solve and report a pruning schedule");
    sched_cmd->add_option("--n0", sa.n0, "initial vision-token count")->required();
    sched_cmd->add_option("--depth", sa.depth, "decoder depth")->required();
    sched_cmd
        ->add_option("--layers", sa.layers, "comma-separated prune layers, empty for none")
        ->required();
    auto* opt_target = sched_cmd->add_option(
        "--target-avg", sa.target_avg, "solve the drop ratio for this layer-average budget");
    auto* opt_ratio = sched_cmd->add_option("--ratio", sa.ratio, "use this drop ratio as given");
    sched_cmd->add_option("--out", sa.out, "directory for schedule.json and sidecars");
    sched_cmd->callback([&] {
        cmd_schedule(sa.n0, sa.depth, sa.layers,
                     opt_target->count() ? std::optional<double>(sa.target_avg) : std::nullopt,
                     opt_ratio->count() ? std::optional<double>(sa.ratio) : std::nullopt,
                     sa.out);
    });

    struct CommonArgs {
        std::string config;
        std::vector<std::string> sets;
        std::string out;
    };

    CommonArgs ca;
    bool fit = false;
    auto* cost_cmd = app.add_subcommand("cost", "analytical FLOPs and KV-cache report");
    cost_cmd->add_option("--config", ca.config, "JSON run config");
    cost_cmd->add_option("--set", ca.sets, "dotted-path override, section.key=value");
    cost_cmd->add_flag("--fit", fit,
                       "calibrate prompt/decode lengths against the reference deployment");
    cost_cmd->add_option("--out", ca.out, "directory for cost.csv, cost.json and sidecars");
    cost_cmd->callback([&] { cmd_cost(ca.config, ca.sets, fit, ca.out); });

    CommonArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train a checkpoint on the marker task");
    train_cmd->add_option("--config", ta.config, "JSON run config");
    train_cmd->add_option("--set", ta.sets, "dotted-path override, section.key=value");
    train_cmd->add_option("--out", ta.out, "directory for checkpoint.bin and metrics.csv")
        ->required();
    train_cmd->callback([&] { cmd_train(ta.config, ta.sets, ta.out); });

    CommonArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "greedy exact-match accuracy of a checkpoint");
    eval_cmd->add_option("--config", ea.config, "JSON run config");
    eval_cmd->add_option("--set", ea.sets, "dotted-path override, section.key=value");
    eval_cmd->add_option("--out", ea.out, "directory for eval.csv")->required();
    eval_cmd->callback([&] { cmd_eval(ea.config, ea.sets, ea.out); });

    CommonArgs pa;
    auto* cmp_cmd =
        app.add_subcommand("compare", "trained model vs training-free pruning baselines");
    cmp_cmd->add_option("--config", pa.config, "JSON run config");
    cmp_cmd->add_option("--set", pa.sets, "dotted-path override, section.key=value");
    cmp_cmd->add_option("--out", pa.out, "directory for compare.csv and compare.json")
        ->required();
    cmp_cmd->callback([&] { cmd_compare(pa.config, pa.sets, pa.out); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const InfeasibleBudget& e) {
        std::cerr << "error: infeasible budget: " << e.what() << "\n";
        return 2;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ScheduleDegenerate& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace adsc
