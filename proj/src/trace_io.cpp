// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "kvbudget/trace.hpp"

namespace kvbudget {

using nlohmann::json;
using detail::expect_array;
using detail::matrix_from_json;
using detail::matrix_to_json;
using detail::read_number;

namespace {

TraceMeta meta_from_json(const json& doc) {
    if (!doc.contains("meta") || !doc.at("meta").is_object()) {
        throw ParseError("missing object field 'meta'");
    }
    const json& m = doc.at("meta");
    TraceMeta meta;
    for (const char* key : {"layers", "heads", "seq_len"}) {
        if (!m.contains(key) || !m.at(key).is_number_integer()) {
            throw ParseError(std::string("field 'meta.") + key + "' must be an integer");
        }
    }
    meta.layers = m.at("layers").get<Index>();
    meta.heads = m.at("heads").get<Index>();
    meta.seq_len = m.at("seq_len").get<Index>();
    if (m.contains("label")) {
        if (!m.at("label").is_string()) {
            throw ParseError("field 'meta.label' must be a string");
        }
        meta.label = m.at("label").get<std::string>();
    }
    if (m.contains("seed") && !m.at("seed").is_null()) {
        if (!m.at("seed").is_number_unsigned() && !m.at("seed").is_number_integer()) {
            throw ParseError("field 'meta.seed' must be an integer or null");
        }
        meta.seed = m.at("seed").get<std::uint64_t>();
    }
    if (meta.layers < 1 || meta.heads < 1 || meta.seq_len < 1) {
        throw ParseError("fields 'meta.layers', 'meta.heads', 'meta.seq_len' must be positive");
    }
    return meta;
}

json meta_to_json(const TraceMeta& meta) {
    json m;
    m["layers"] = meta.layers;
    m["heads"] = meta.heads;
    m["seq_len"] = meta.seq_len;
    m["label"] = meta.label;
    m["seed"] = meta.seed ? json(*meta.seed) : json(nullptr);
    return m;
}

std::vector<std::vector<Eigen::MatrixXd>> head_matrices(const json& node, const std::string& field,
                                                        std::size_t layers, std::size_t heads) {
    expect_array(node, field, layers);
    std::vector<std::vector<Eigen::MatrixXd>> out(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string lf = field + "[" + std::to_string(l) + "]";
        expect_array(node[l], lf, heads);
        for (std::size_t h = 0; h < heads; ++h) {
            out[l].push_back(matrix_from_json(node[l][h], lf + "[" + std::to_string(h) + "]"));
        }
    }
    return out;
}

}  // namespace

AttentionTrace trace_from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("trace document must be a JSON object");
    }

    AttentionTrace trace;
    trace.meta = meta_from_json(doc);
    const auto layers = static_cast<std::size_t>(trace.meta.layers);
    const auto heads = static_cast<std::size_t>(trace.meta.heads);
    const bool has_attention = doc.contains("attention") && !doc.at("attention").is_null();
    const bool has_importance = doc.contains("importance") && !doc.at("importance").is_null();

    if (has_attention) {
        trace.attention = head_matrices(doc.at("attention"), "attention", layers, heads);
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t h = 0; h < heads; ++h) {
                const auto& a = trace.attention[l][h];
                if (a.rows() != trace.meta.seq_len || a.cols() != trace.meta.seq_len) {
                    throw ParseError("field 'attention[" + std::to_string(l) + "][" +
                                     std::to_string(h) + "]' must be seq_len x seq_len");
                }
            }
        }
    } else if (has_importance) {
        Eigen::MatrixXd imp = matrix_from_json(doc.at("importance"), "importance");
        if (imp.rows() != trace.meta.layers || imp.cols() != trace.meta.seq_len) {
            throw ParseError("field 'importance' must be layers x seq_len");
        }
        trace.importance = imp;
    } else {
        throw ParseError("trace needs field 'attention' or 'importance'");
    }

    if (doc.contains("kv") && !doc.at("kv").is_null()) {
        const json& kv = doc.at("kv");
        if (!kv.is_object() || !kv.contains("keys") || !kv.contains("values")) {
            throw ParseError("field 'kv' must be an object with 'keys' and 'values'");
        }
        auto keys = head_matrices(kv.at("keys"), "kv.keys", layers, heads);
        auto values = head_matrices(kv.at("values"), "kv.values", layers, heads);
        trace.kv.resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t h = 0; h < heads; ++h) {
                trace.kv[l].push_back(HeadKv{std::move(keys[l][h]), std::move(values[l][h])});
            }
        }
    }

    if (doc.contains("features") && !doc.at("features").is_null()) {
        const json& f = doc.at("features");
        expect_array(f, "features", layers);
        for (std::size_t l = 0; l < layers; ++l) {
            trace.features.push_back(matrix_from_json(f[l], "features[" + std::to_string(l) + "]"));
        }
    }

    validate(trace);
    return trace;
}

std::string trace_to_json_text(const AttentionTrace& trace) {
    json doc;
    doc["meta"] = meta_to_json(trace.meta);
    if (trace.has_attention()) {
        json layers = json::array();
        for (const auto& layer : trace.attention) {
            json hs = json::array();
            for (const auto& a : layer) {
                hs.push_back(matrix_to_json(a));
            }
            layers.push_back(std::move(hs));
        }
        doc["attention"] = std::move(layers);
    } else if (trace.importance) {
        doc["importance"] = matrix_to_json(*trace.importance);
    }
    if (trace.has_kv()) {
        json keys = json::array();
        json values = json::array();
        for (const auto& layer : trace.kv) {
            json kl = json::array();
            json vl = json::array();
            for (const auto& head : layer) {
                kl.push_back(matrix_to_json(head.keys));
                vl.push_back(matrix_to_json(head.values));
            }
            keys.push_back(std::move(kl));
            values.push_back(std::move(vl));
        }
        doc["kv"] = json{{"dim", trace.kv_dim()}, {"keys", std::move(keys)}, {"values", std::move(values)}};
    } else {
        doc["kv"] = nullptr;
    }
    if (!trace.features.empty()) {
        json fs = json::array();
        for (const auto& f : trace.features) {
            fs.push_back(matrix_to_json(f));
        }
        doc["features"] = std::move(fs);
    } else {
        doc["features"] = nullptr;
    }
    return doc.dump();
}

AttentionTrace load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open trace file " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return trace_from_json_text(buffer.str());
}

void save_trace(const AttentionTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw ArgumentError("cannot write trace file " + path.string());
    }
    out << trace_to_json_text(trace) << '\n';
}

}  // namespace kvbudget
