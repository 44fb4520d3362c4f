// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kvbudget/allocator.hpp"
#include "kvbudget/cachesim.hpp"
#include "kvbudget/importance.hpp"
#include "kvbudget/lorenz.hpp"
#include "kvbudget/toymodel.hpp"
#include "kvbudget/trace.hpp"

namespace kvbudget::cli {

using nlohmann::json;

std::string format_number(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double parse_budget(const std::string& text) {
    std::string body = text;
    double scale = 1.0;
    if (!body.empty() && body.back() == '%') {
        body.pop_back();
        scale = 0.01;
    }
    double value = 0.0;
    const auto res = std::from_chars(body.data(), body.data() + body.size(), value);
    if (body.empty() || res.ec != std::errc{} || res.ptr != body.data() + body.size()) {
        throw ArgumentError("cannot parse budget '" + text + "'");
    }
    value *= scale;
    if (!(value > 0.0) || value > 1.0) {
        throw ArgumentError("budget '" + text + "' outside (0, 1]");
    }
    return value;
}

namespace {

std::vector<std::string> split(const std::string& text, char sep = ',') {
    std::vector<std::string> parts;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, sep)) {
        if (!item.empty()) {
            parts.push_back(item);
        }
    }
    return parts;
}

std::vector<double> parse_reals(const std::string& text) {
    std::vector<double> values;
    for (const auto& part : split(text)) {
        double v = 0.0;
        const auto res = std::from_chars(part.data(), part.data() + part.size(), v);
        if (res.ec != std::errc{} || res.ptr != part.data() + part.size()) {
            throw ArgumentError("cannot parse number '" + part + "'");
        }
        values.push_back(v);
    }
    return values;
}

std::uint64_t default_seed() {
    if (const char* env = std::getenv("KVBUDGET_SEED")) {
        std::uint64_t seed = 0;
        const std::string text(env);
        const auto res = std::from_chars(text.data(), text.data() + text.size(), seed);
        if (res.ec == std::errc{} && res.ptr == text.data() + text.size()) {
            return seed;
        }
        throw ArgumentError("KVBUDGET_SEED must be an unsigned integer");
    }
    return 0;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ArgumentError("cannot write " + path);
    }
    return out;
}

struct ToyFlags {
    Index layers = 8;
    Index heads = 4;
    Index dim = 64;
    Index vocab = 256;
    Index prompt_len = 64;

    void add(CLI::App& app, bool with_prompt) {
        app.add_option("--layers", layers, "toy model layers");
        app.add_option("--heads", heads, "toy model heads");
        app.add_option("--dim", dim, "toy model width");
        app.add_option("--vocab", vocab, "toy model vocabulary size");
        if (with_prompt) {
            app.add_option("--prompt-len", prompt_len, "toy prompt length");
        }
    }

    ToyModelSpec spec(std::uint64_t seed) const { return ToyModelSpec{layers, heads, dim, vocab, seed}; }
};

struct BudgetFlags {
    std::string budget;
    double delta_tol = 0.025;
    Index max_steps = 32;
    Index min_tokens = 1;

    void add(CLI::App& app, bool required) {
        auto* opt = app.add_option("--budget", budget, "compression budget, e.g. 0.5 or 50%");
        if (required) {
            opt->required();
        }
        app.add_option("--delta-tol", delta_tol, "binary search tolerance on sum(R) - rL");
        app.add_option("--max-steps", max_steps, "binary search step cap");
        app.add_option("--layers-min", min_tokens, "minimum tokens kept per layer");
    }

    BudgetSpec spec(double r) const {
        BudgetSpec b{r, delta_tol, max_steps, min_tokens};
        b.validate();
        return b;
    }
};

/// Plans a configuration for one prefill trace.
PrefixConfiguration plan_for(const AttentionTrace& trace, Policy policy, const BudgetSpec& budget,
                             Index sink_count) {
    if (policy == Policy::PrefixKV) {
        return plan_online(priority_sequence(compute_importance(trace)), budget);
    }
    return baseline_config(policy, budget, trace.meta.layers, trace.meta.seq_len,
                           BaselineParams{sink_count});
}

AttentionTrace prefix_of(const AttentionTrace& trace, Index prompt) {
    AttentionTrace prefix;
    prefix.meta = trace.meta;
    prefix.meta.seq_len = prompt;
    for (const auto& layer : trace.attention) {
        auto& out = prefix.attention.emplace_back();
        for (const auto& a : layer) {
            out.push_back(a.topLeftCorner(prompt, prompt));
        }
    }
    return prefix;
}

/// Collects what a command read, wrote and was asked to do, for the run manifest.
struct Manifest {
    std::string command;
    std::vector<std::string> args;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;

    void write(const CLI::App& sub, const std::string& path) const {
        json params = json::object();
        for (const auto* opt : sub.get_options()) {
            if (opt->count() == 0 || opt->get_name() == "--help" || opt->get_name().empty()) {
                continue;
            }
            const auto& results = opt->results();
            std::string joined;
            for (std::size_t i = 0; i < results.size(); ++i) {
                joined += (i ? "," : "") + results[i];
            }
            params[opt->get_single_name()] = opt->get_expected_min() == 0 ? "true" : joined;
        }
        json doc{{"command", command},
                 {"argv", args},
                 {"inputs", inputs},
                 {"params", params},
                 {"outputs", outputs},
                 {"seed", seed},
                 {"tool_version", KVBUDGET_VERSION}};
        auto out = open_output(path);
        out << doc.dump(2) << '\n';
    }
};

void write_manifest(const CLI::App& sub, Manifest manifest, const std::string& manifest_path) {
    const std::string path =
        manifest_path.empty() ? manifest.outputs.front() + ".manifest.json" : manifest_path;
    manifest.outputs.push_back(path);
    manifest.write(sub, path);
}

// ---------------------------------------------------------------------------

struct SynthCommand {
    std::string mode = "dirichlet";
    std::string out;
    std::string concentration;
    std::string label;
    CLI::Option* heads_opt = nullptr;
    Index seq = 64;
    std::optional<std::uint64_t> seed;
    bool kv = false;
    bool shortcut = false;
    ToyFlags toy;

    void add(CLI::App& sub) {
        sub.add_option("--mode", mode, "toy or dirichlet")->check(CLI::IsMember({"toy", "dirichlet"}));
        sub.add_option("--out", out, "output trace file")->required();
        sub.add_option("--concentration", concentration, "per-layer concentration list (dirichlet)");
        sub.add_option("--label", label, "trace label");
        sub.add_option("--seq", seq, "sequence length");
        sub.add_option("--seed", seed, "generator seed");
        sub.add_flag("--kv", kv, "emit key/value vectors (dirichlet)");
        sub.add_flag("--shortcut", shortcut, "write the importance-only form");
        toy.add(sub, false);
        heads_opt = sub.get_option("--heads");
    }

    AttentionTrace build(std::uint64_t s) {
        if (mode == "toy") {
            ToyModel model(toy.spec(s));
            const auto prompt = model.random_prompt(seq, s + 1);
            auto trace = model.forward_trace(prompt);
            if (!label.empty()) {
                trace.meta.label = label;
            }
            return trace;
        }
        std::vector<double> conc = parse_reals(concentration);
        if (conc.empty()) {
            // geometric sweep from concentrated to dispersed
            const Index layers = toy.layers;
            for (Index l = 0; l < layers; ++l) {
                const double t = layers == 1 ? 0.0 : static_cast<double>(l) / static_cast<double>(layers - 1);
                conc.push_back(0.05 * std::pow(100.0, t));
            }
        }
        SynthOptions options;
        options.with_kv = kv;
        options.label = label.empty() ? "dirichlet" : label;
        const Index heads = heads_opt->count() > 0 ? toy.heads : 1;
        return synth_trace(static_cast<Index>(conc.size()), heads, seq, conc, s, options);
    }

    void run(const CLI::App& sub, Manifest manifest, const std::string& manifest_path) {
        const std::uint64_t s = seed.value_or(default_seed());
        auto trace = build(s);
        if (shortcut) {
            trace.importance = compute_importance(trace).raw;
            trace.attention.clear();
            trace.kv.clear();
            trace.features.clear();
        }
        save_trace(trace, out);
        manifest.seed = s;
        manifest.outputs.push_back(out);
        write_manifest(sub, std::move(manifest), manifest_path);
    }
};

struct AnalyzeCommand {
    std::string trace;
    std::string lorenz;
    std::string stats;
    std::optional<Index> layer;

    void add(CLI::App& sub) {
        sub.add_option("trace", trace, "trace file")->required();
        sub.add_option("--lorenz", lorenz, "Lorenz curve CSV (layer,x,y)");
        sub.add_option("--stats", stats, "Gini CSV (layer,gini)");
        sub.add_option("--layer", layer, "only this layer");
    }

    void run(const CLI::App& sub, Manifest manifest, const std::string& manifest_path, std::ostream& out) {
        if (lorenz.empty() && stats.empty()) {
            throw ArgumentError("analyze needs --lorenz and/or --stats");
        }
        const auto t = load_trace(trace);
        const auto seq = priority_sequence(compute_importance(t));
        if (layer && (*layer < 0 || *layer >= seq.layers())) {
            throw ArgumentError("--layer " + std::to_string(*layer) + " out of range");
        }
        const auto all = layer_stats(seq);
        std::vector<LayerStats> selected;
        for (const auto& s : all) {
            if (!layer || s.layer == *layer) {
                selected.push_back(s);
            }
        }
        manifest.inputs.push_back(trace);
        if (!lorenz.empty()) {
            auto f = open_output(lorenz);
            f << "layer,x,y\n";
            for (const auto& s : selected) {
                for (Index j = 0; j < s.curve.size(); ++j) {
                    f << s.layer << ',' << format_number(s.curve.x(j)) << ','
                      << format_number(s.curve.y(j)) << '\n';
                }
            }
            manifest.outputs.push_back(lorenz);
        }
        if (!stats.empty()) {
            auto f = open_output(stats);
            f << "layer,gini\n";
            for (const auto& s : selected) {
                f << s.layer << ',' << format_number(s.gini) << '\n';
            }
            manifest.outputs.push_back(stats);
        }
        for (const auto& s : selected) {
            out << "layer " << s.layer << " gini " << format_number(s.gini) << '\n';
        }
        write_manifest(sub, std::move(manifest), manifest_path);
    }
};

struct PlanCommand {
    std::vector<std::string> traces;
    std::string out;
    std::string policy = "prefixkv";
    std::string method = "per-sample-mean";
    bool offline = false;
    Index sink_count = 4;
    BudgetFlags budget;

    void add(CLI::App& sub) {
        sub.add_option("traces", traces, "trace files")->required();
        sub.add_option("--out", out, "configuration file")->required();
        sub.add_option("--policy", policy, "prefixkv, uniform, pyramid or local")
            ->check(CLI::IsMember({"prefixkv", "uniform", "pyramid", "local"}));
        sub.add_option("--method", method, "offline method: per-sample-mean or pooled-curve")
            ->check(CLI::IsMember({"per-sample-mean", "pooled-curve"}));
        sub.add_flag("--offline", offline, "estimate one configuration from all traces");
        sub.add_option("--sink-count", sink_count, "sink tokens kept by the local policy");
        budget.add(sub, true);
    }

    void run(const CLI::App& sub, Manifest manifest, const std::string& manifest_path, std::ostream& con) {
        const BudgetSpec spec = budget.spec(parse_budget(budget.budget));
        const Policy kind = parse_policy(policy);
        if (traces.size() > 1 && !offline) {
            throw ArgumentError("several traces given; pass --offline to estimate from samples");
        }
        PrefixConfiguration config;
        if (kind == Policy::PrefixKV) {
            std::vector<PrioritySequence> seqs;
            for (const auto& path : traces) {
                seqs.push_back(priority_sequence(compute_importance(load_trace(path))));
            }
            config = offline ? estimate_offline(seqs, spec, parse_offline_method(method))
                             : plan_online(seqs.front(), spec);
        } else {
            const auto t = load_trace(traces.front());
            config = baseline_config(kind, spec, t.meta.layers, t.meta.seq_len, BaselineParams{sink_count});
        }
        save_config(config, out);
        con << "planned " << to_string(config.policy) << " keeping " << config.total_tokens()
            << " tokens\n";
        manifest.inputs = traces;
        manifest.outputs.push_back(out);
        write_manifest(sub, std::move(manifest), manifest_path);
    }
};

struct SimulateCommand {
    std::string config_path;
    std::string trace_path;
    std::string log_path;
    std::string retained_path;
    std::string disturbance_path;
    std::string merge = "none";
    std::string policy;
    Index steps = 32;
    Index protect = 10;
    Index sink_count = 4;
    bool toy_mode = false;
    bool disturb = false;
    std::optional<std::uint64_t> seed;
    BudgetFlags budget;
    ToyFlags toy;

    void add(CLI::App& sub) {
        sub.add_option("--config", config_path, "configuration file");
        sub.add_option("--trace", trace_path, "full-form trace to replay");
        sub.add_flag("--toy", toy_mode, "decode with the toy model instead of a trace");
        sub.add_option("--steps", steps, "decode steps");
        sub.add_option("--merge", merge, "none, position or feature")
            ->check(CLI::IsMember({"none", "position", "feature"}));
        sub.add_option("--protect", protect, "protected window of recent tokens");
        sub.add_option("--policy", policy, "policy when planning in place")
            ->check(CLI::IsMember({"prefixkv", "uniform", "pyramid", "local"}));
        sub.add_option("--sink-count", sink_count, "sink tokens kept by the local policy");
        sub.add_flag("--disturb", disturb, "also report feature disturbance (toy mode)");
        sub.add_option("--log", log_path, "simulation log (JSON lines)")->required();
        sub.add_option("--retained", retained_path, "retained-information CSV");
        sub.add_option("--disturbance", disturbance_path, "disturbance CSV (layer,token_index,mae)");
        sub.add_option("--seed", seed, "toy model seed");
        budget.add(sub, false);
        toy.add(sub, true);
    }

    PrefixConfiguration resolve(const AttentionTrace& prefill) const {
        std::optional<PrefixConfiguration> loaded;
        if (!config_path.empty()) {
            loaded = load_config(config_path);
            if (loaded->layers() != prefill.meta.layers) {
                throw ValidationError("configuration has " + std::to_string(loaded->layers()) +
                                      " layers, trace has " + std::to_string(prefill.meta.layers));
            }
        }
        if (!budget.budget.empty()) {
            const Policy kind = !policy.empty() ? parse_policy(policy)
                                : loaded         ? loaded->policy
                                                 : Policy::PrefixKV;
            const Index sinks = loaded && policy.empty() ? loaded->sink_count : sink_count;
            return plan_for(prefill, kind, budget.spec(parse_budget(budget.budget)), sinks);
        }
        if (!loaded) {
            throw ArgumentError("simulate needs --config or --budget");
        }
        return rescale_config(*loaded, prefill.meta.seq_len);
    }

    void run(const CLI::App& sub, Manifest manifest, const std::string& manifest_path, std::ostream& con) {
        if (toy_mode == !trace_path.empty()) {
            throw ArgumentError("simulate needs exactly one of --trace or --toy");
        }
        if (disturb && !toy_mode) {
            throw ArgumentError("--disturb needs --toy");
        }
        if (disturb && disturbance_path.empty()) {
            throw ArgumentError("--disturb needs --disturbance <csv>");
        }
        const SimulationOptions options{protect, parse_merge_policy(merge)};
        std::vector<StepLog> log;
        std::optional<DisturbanceReport> report;

        if (!toy_mode) {
            const auto trace = load_trace(trace_path);
            if (!trace.has_attention()) {
                throw ValidationError("simulate needs a full-form trace");
            }
            if (steps < 0 || steps >= trace.meta.seq_len) {
                throw ArgumentError("--steps must be smaller than the trace length");
            }
            const auto config = resolve(prefix_of(trace, trace.meta.seq_len - steps));
            log = replay_trace(trace, config, steps, options).log;
            manifest.inputs.push_back(trace_path);
        } else {
            if (steps < 1) {
                throw ArgumentError("--steps must be positive in toy mode");
            }
            const std::uint64_t s = seed.value_or(default_seed());
            manifest.seed = s;
            const ToyModel model(toy.spec(s));
            const auto prompt = model.random_prompt(toy.prompt_len, s + 1);
            const auto config = resolve(model.forward_trace(prompt));
            log = model.decode(prompt, steps, config, options).log;
            if (disturb) {
                report = disturbance(model, prompt, steps, config, options);
            }
        }
        if (!config_path.empty()) {
            manifest.inputs.push_back(config_path);
        }

        {
            auto f = open_output(log_path);
            for (const auto& entry : log) {
                f << step_log_to_json_line(entry) << '\n';
            }
            manifest.outputs.push_back(log_path);
        }
        if (!retained_path.empty()) {
            auto f = open_output(retained_path);
            f << "step,layer,retained_info\n";
            for (const auto& entry : log) {
                for (Index l = 0; l < entry.retained_info.size(); ++l) {
                    f << entry.step << ',' << l << ',' << format_number(entry.retained_info(l)) << '\n';
                }
            }
            manifest.outputs.push_back(retained_path);
        }
        if (report) {
            auto f = open_output(disturbance_path);
            f << "layer,token_index,mae\n";
            for (Index l = 0; l < report->per_token_mae.rows(); ++l) {
                for (Index t = 0; t < report->per_token_mae.cols(); ++t) {
                    f << l << ',' << t << ',' << format_number(report->per_token_mae(l, t)) << '\n';
                }
            }
            manifest.outputs.push_back(disturbance_path);
            con << "mean disturbance " << format_number(report->mean()) << '\n';
        }
        con << "simulated " << log.size() - 1 << " decode steps\n";
        write_manifest(sub, std::move(manifest), manifest_path);
    }
};

struct CompareCommand {
    std::vector<std::string> traces;
    std::string budgets = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9";
    std::string policies = "prefixkv,uniform,pyramid,local";
    std::string merges = "none";
    std::string out;
    Index steps = 0;
    Index protect = 10;
    Index sink_count = 4;
    Index runs = 4;
    Index decode_len = 16;
    bool toy_mode = false;
    std::optional<std::uint64_t> seed;
    BudgetFlags budget_flags;
    ToyFlags toy;

    void add(CLI::App& sub) {
        sub.add_option("traces", traces, "trace files");
        sub.add_option("--budgets", budgets, "comma-separated budgets (fractions or percentages)");
        sub.add_option("--policies", policies, "comma-separated policies");
        sub.add_option("--merges", merges, "comma-separated merge modes");
        sub.add_option("--out", out, "comparison CSV")->required();
        sub.add_option("--steps", steps, "decode steps replayed from each trace");
        sub.add_option("--protect", protect, "protected window of recent tokens");
        sub.add_option("--sink-count", sink_count, "sink tokens kept by the local policy");
        sub.add_flag("--toy", toy_mode, "compare on toy-model runs, including disturbance");
        sub.add_option("--runs", runs, "toy-model prompts");
        sub.add_option("--decode-len", decode_len, "toy decode length for disturbance");
        sub.add_option("--seed", seed, "toy model seed");
        sub.add_option("--delta-tol", budget_flags.delta_tol, "binary search tolerance");
        sub.add_option("--max-steps", budget_flags.max_steps, "binary search step cap");
        sub.add_option("--layers-min", budget_flags.min_tokens, "minimum tokens kept per layer");
        toy.add(sub, true);
    }

    void run(const CLI::App& sub, Manifest manifest, const std::string& manifest_path, std::ostream& con) {
        std::vector<double> rs;
        for (const auto& b : split(budgets)) {
            rs.push_back(parse_budget(b));
        }
        if (rs.empty()) {
            throw ArgumentError("empty budget list");
        }
        std::vector<Policy> kinds;
        for (const auto& p : split(policies)) {
            kinds.push_back(parse_policy(p));
        }
        std::vector<MergePolicy> modes;
        for (const auto& m : split(merges)) {
            modes.push_back(parse_merge_policy(m));
        }
        if (kinds.empty() || modes.empty()) {
            throw ArgumentError("empty policy or merge list");
        }
        if (toy_mode == !traces.empty()) {
            throw ArgumentError("compare needs trace files or --toy, not both");
        }

        std::vector<AttentionTrace> loaded;
        std::optional<ToyModel> model;
        std::vector<std::vector<Index>> prompts;
        if (toy_mode) {
            const std::uint64_t s = seed.value_or(default_seed());
            manifest.seed = s;
            model.emplace(toy.spec(s));
            for (Index i = 0; i < runs; ++i) {
                prompts.push_back(model->random_prompt(toy.prompt_len, s + 1 + static_cast<std::uint64_t>(i)));
            }
        } else {
            for (const auto& path : traces) {
                loaded.push_back(load_trace(path));
                if (!loaded.back().has_attention()) {
                    throw ValidationError(path + " is not a full-form trace");
                }
                if (steps < 0 || steps >= loaded.back().meta.seq_len) {
                    throw ArgumentError("--steps must be smaller than every trace length");
                }
            }
            manifest.inputs = traces;
        }

        auto f = open_output(out);
        f << "budget,policy,merge,min_retained,mean_retained,mae\n";
        for (double r : rs) {
            const BudgetSpec spec = budget_flags.spec(r);
            for (Policy kind : kinds) {
                for (MergePolicy mode : modes) {
                    const SimulationOptions options{protect, mode};
                    double min_sum = 0.0;
                    double mean_sum = 0.0;
                    double mae_sum = 0.0;
                    std::size_t count = 0;
                    if (toy_mode) {
                        for (const auto& prompt : prompts) {
                            const auto prefill = model->forward_trace(prompt);
                            const auto config = plan_for(prefill, kind, spec, sink_count);
                            const auto state = prefill_compress(prefill, config, options);
                            const auto info = retained_info(state, compute_importance(prefill));
                            min_sum += info.minCoeff();
                            mean_sum += info.mean();
                            mae_sum += disturbance(*model, prompt, decode_len, config, options).mean();
                            ++count;
                        }
                    } else {
                        for (const auto& trace : loaded) {
                            const Index prompt = trace.meta.seq_len - steps;
                            const auto config = plan_for(prefix_of(trace, prompt), kind, spec, sink_count);
                            const auto replay = replay_trace(trace, config, steps, options);
                            const auto& info = replay.log.back().retained_info;
                            min_sum += info.minCoeff();
                            mean_sum += info.mean();
                            ++count;
                        }
                    }
                    const double n = static_cast<double>(count);
                    f << format_number(r) << ',' << to_string(kind) << ',' << to_string(mode) << ','
                      << format_number(min_sum / n) << ',' << format_number(mean_sum / n) << ','
                      << (toy_mode ? format_number(mae_sum / n) : std::string()) << '\n';
                }
            }
        }
        manifest.outputs.push_back(out);
        con << "compared " << rs.size() << " budgets x " << kinds.size() << " policies x "
            << modes.size() << " merge modes\n";
        write_manifest(sub, std::move(manifest), manifest_path);
    }
};

int run_replay(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
    std::ifstream in(manifest_path);
    if (!in) {
        err << "cannot open manifest " << manifest_path << '\n';
        return kUsage;
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        err << "invalid manifest: " << e.what() << '\n';
        return kValidation;
    }
    if (!doc.contains("argv") || !doc.at("argv").is_array()) {
        err << "manifest has no argv\n";
        return kValidation;
    }
    const auto argv = doc.at("argv").get<std::vector<std::string>>();
    if (!argv.empty() && argv.front() == "replay") {
        err << "manifest records another replay\n";
        return kValidation;
    }
    return run(argv, out, err);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Layer-adaptive KV-cache budgets: analysis, planning and decode simulation", "kvbudget"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(KVBUDGET_VERSION));
    std::string manifest_path;
    app.add_option("--manifest", manifest_path, "run manifest path (default: <output>.manifest.json)");

    SynthCommand synth;
    AnalyzeCommand analyze;
    PlanCommand plan;
    SimulateCommand simulate;
    CompareCommand compare;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic or toy-model trace");
    synth.add(*synth_cmd);
    auto* analyze_cmd = app.add_subcommand("analyze", "Lorenz curves and Gini coefficients");
    analyze.add(*analyze_cmd);
    auto* plan_cmd = app.add_subcommand("plan", "derive a per-layer retention configuration");
    plan.add(*plan_cmd);
    auto* simulate_cmd = app.add_subcommand("simulate", "prefill compression plus decode simulation");
    simulate.add(*simulate_cmd);
    auto* compare_cmd = app.add_subcommand("compare", "budget x policy x merge comparison grid");
    compare.add(*compare_cmd);
    auto* replay_cmd = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    std::string replay_path;
    replay_cmd->add_option("manifest", replay_path, "manifest written by an earlier run")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << KVBUDGET_VERSION << '\n';
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return kUsage;
    }

    if (replay_cmd->parsed()) {
        return run_replay(replay_path, out, err);
    }

    Manifest manifest;
    manifest.args = args;
    try {
        if (synth_cmd->parsed()) {
            manifest.command = "synth";
            synth.run(*synth_cmd, manifest, manifest_path);
        } else if (analyze_cmd->parsed()) {
            manifest.command = "analyze";
            analyze.run(*analyze_cmd, manifest, manifest_path, out);
        } else if (plan_cmd->parsed()) {
            manifest.command = "plan";
            plan.run(*plan_cmd, manifest, manifest_path, out);
        } else if (simulate_cmd->parsed()) {
            manifest.command = "simulate";
            simulate.run(*simulate_cmd, manifest, manifest_path, out);
        } else if (compare_cmd->parsed()) {
            manifest.command = "compare";
            compare.run(*compare_cmd, manifest, manifest_path, out);
        }
    } catch (const BudgetError& e) {
        err << "infeasible budget: " << e.what() << '\n';
        return kInfeasible;
    } catch (const ArgumentError& e) {
        err << "usage: " << e.what() << '\n';
        return kUsage;
    } catch (const Error& e) {
        err << "invalid input: " << e.what() << '\n';
        return kValidation;
    }
    return kOk;
}

}  // namespace kvbudget::cli
