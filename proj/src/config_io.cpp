// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "kvbudget/allocator.hpp"

namespace kvbudget {

using nlohmann::json;

std::string config_to_json_text(const PrefixConfiguration& config) {
    json doc;
    doc["budget"] = json{{"r", config.budget.r},
                         {"delta_tol", config.budget.delta_tol},
                         {"max_steps", config.budget.max_steps},
                         {"min_tokens_per_layer", config.budget.min_tokens_per_layer}};
    if (config.search) {
        doc["p"] = config.search->p;
        doc["steps"] = config.search->steps;
        doc["delta"] = config.search->delta_final;
        doc["converged"] = config.search->converged;
    } else {
        doc["p"] = nullptr;
        doc["steps"] = nullptr;
        doc["delta"] = nullptr;
        doc["converged"] = nullptr;
    }
    doc["ratios"] = detail::vector_to_json(config.ratios);
    doc["token_counts"] = config.token_counts;
    doc["seq_len"] = config.seq_len;
    doc["source"] = std::string(to_string(config.source));
    doc["samples"] = config.samples;
    doc["policy"] = std::string(to_string(config.policy));
    if (config.policy == Policy::Local) {
        doc["sink_count"] = config.sink_count;
    }
    return doc.dump(2);
}

namespace {

const json& field(const json& doc, const char* name) {
    if (!doc.contains(name)) {
        throw ParseError(std::string("missing field '") + name + "'");
    }
    return doc.at(name);
}

Index read_index(const json& node, const std::string& name) {
    if (!node.is_number_integer()) {
        throw ParseError("field '" + name + "' must be an integer");
    }
    return node.get<Index>();
}

}  // namespace

PrefixConfiguration config_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("configuration document must be a JSON object");
    }
    PrefixConfiguration config;
    const json& budget = field(doc, "budget");
    if (!budget.is_object()) {
        throw ParseError("field 'budget' must be an object");
    }
    config.budget.r = detail::read_number(field(budget, "r"), "budget.r");
    if (budget.contains("delta_tol")) {
        config.budget.delta_tol = detail::read_number(budget.at("delta_tol"), "budget.delta_tol");
    }
    if (budget.contains("max_steps")) {
        config.budget.max_steps = read_index(budget.at("max_steps"), "budget.max_steps");
    }
    if (budget.contains("min_tokens_per_layer")) {
        config.budget.min_tokens_per_layer =
            read_index(budget.at("min_tokens_per_layer"), "budget.min_tokens_per_layer");
    }
    try {
        config.budget.validate();
    } catch (const ArgumentError& e) {
        throw ValidationError(e.what());
    }

    const json& policy = field(doc, "policy");
    if (!policy.is_string()) {
        throw ParseError("field 'policy' must be a string");
    }
    try {
        config.policy = parse_policy(policy.get<std::string>());
    } catch (const ArgumentError& e) {
        throw ParseError(std::string("field 'policy': ") + e.what());
    }

    const json& source = field(doc, "source");
    const std::string source_name = source.is_string() ? source.get<std::string>() : "";
    if (source_name == "online") {
        config.source = ConfigSource::Online;
    } else if (source_name == "offline") {
        config.source = ConfigSource::Offline;
    } else if (source_name == "baseline") {
        config.source = ConfigSource::Baseline;
    } else {
        throw ParseError("field 'source' must be online, offline or baseline");
    }
    if (doc.contains("samples")) {
        config.samples = read_index(doc.at("samples"), "samples");
    }
    if (doc.contains("sink_count")) {
        config.sink_count = read_index(doc.at("sink_count"), "sink_count");
    }
    config.seq_len = read_index(field(doc, "seq_len"), "seq_len");

    if (doc.contains("p") && !doc.at("p").is_null()) {
        SearchResult result;
        result.p = detail::read_number(doc.at("p"), "p");
        result.steps = read_index(field(doc, "steps"), "steps");
        if (doc.contains("delta") && !doc.at("delta").is_null()) {
            result.delta_final = detail::read_number(doc.at("delta"), "delta");
        }
        const json& converged = field(doc, "converged");
        if (!converged.is_boolean()) {
            throw ParseError("field 'converged' must be a boolean");
        }
        result.converged = converged.get<bool>();
        config.search = result;
    }

    const json& ratios = field(doc, "ratios");
    const json& counts = field(doc, "token_counts");
    if (!ratios.is_array() || ratios.empty()) {
        throw ParseError("field 'ratios' must be a nonempty array");
    }
    detail::expect_array(counts, "token_counts", ratios.size());
    config.ratios.resize(static_cast<Index>(ratios.size()));
    for (std::size_t l = 0; l < ratios.size(); ++l) {
        config.ratios(static_cast<Index>(l)) =
            detail::read_number(ratios[l], "ratios[" + std::to_string(l) + "]");
        config.token_counts.push_back(
            read_index(counts[l], "token_counts[" + std::to_string(l) + "]"));
    }

    const Index expected = config.budget.target_tokens(config.layers(), config.seq_len);
    if (config.total_tokens() != expected) {
        throw ValidationError("token_counts sum to " + std::to_string(config.total_tokens()) +
                              ", budget requires " + std::to_string(expected));
    }
    for (Index c : config.token_counts) {
        if (c < 0 || c > config.seq_len) {
            throw ValidationError("token count " + std::to_string(c) + " outside [0, seq_len]");
        }
    }
    return config;
}

PrefixConfiguration load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open configuration file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return config_from_json_text(buffer.str());
}

void save_config(const PrefixConfiguration& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ArgumentError("cannot write configuration file " + path.string());
    }
    out << config_to_json_text(config) << '\n';
}

}  // namespace kvbudget
