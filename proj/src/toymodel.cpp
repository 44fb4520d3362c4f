// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/toymodel.hpp"

#include <cmath>
#include <random>

#include "kvbudget/importance.hpp"

namespace kvbudget {

namespace {

Eigen::MatrixXd gaussian(std::mt19937_64& rng, Index rows, Index cols, double scale) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = normal(rng) * scale;
        }
    }
    return m;
}

/// Softmax of scores in place; the result sums to 1.
void softmax(Eigen::VectorXd& scores) {
    const double peak = scores.maxCoeff();
    scores = (scores.array() - peak).exp();
    scores /= scores.sum();
}

StepLog cache_log(const CacheState& state, Index step) {
    StepLog log;
    log.step = step;
    for (const auto& c : state.layer_caches) {
        log.layer_sizes.push_back(static_cast<Index>(c.size()));
    }
    log.evicted = state.last_evictions;
    return log;
}

}  // namespace

ToyModel::ToyModel(const ToyModelSpec& spec) : spec_(spec) {
    if (spec.layers < 1 || spec.heads < 1 || spec.dim < 1 || spec.vocab < 1) {
        throw ArgumentError("toy model dimensions must be positive");
    }
    if (spec.dim % spec.heads != 0) {
        throw ArgumentError("dim must be divisible by heads");
    }
    std::mt19937_64 rng(spec.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.dim));
    const Index hd = head_dim();

    embedding_ = gaussian(rng, spec.vocab, spec.dim, 1.0);
    unembedding_ = gaussian(rng, spec.dim, spec.vocab, scale);
    std::uniform_real_distribution<double> log_gain(std::log(0.25), std::log(4.0));
    layers_.resize(static_cast<std::size_t>(spec.layers));
    for (auto& layer : layers_) {
        for (Index h = 0; h < spec.heads; ++h) {
            layer.query.push_back(gaussian(rng, hd, spec.dim, scale));
            layer.key.push_back(gaussian(rng, hd, spec.dim, scale));
            layer.value.push_back(gaussian(rng, hd, spec.dim, scale));
        }
        layer.output = gaussian(rng, spec.dim, spec.dim, scale);
        layer.gain = std::exp(log_gain(rng));
    }
}

Eigen::VectorXd ToyModel::embed(Index token, Index position) const {
    Eigen::VectorXd x = embedding_.row(token).transpose();
    for (Index i = 0; i < spec_.dim; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(spec_.dim));
        x(i) += std::sin(static_cast<double>(position) * freq);
        if (i + 1 < spec_.dim) {
            x(i + 1) += std::cos(static_cast<double>(position) * freq);
        }
    }
    return x;
}

Index ToyModel::argmax_token(const Eigen::VectorXd& hidden) const {
    const Eigen::VectorXd logits = unembedding_.transpose() * hidden;
    Index best = 0;
    logits.maxCoeff(&best);
    return best;
}

void ToyModel::check_tokens(std::span<const Index> tokens) const {
    for (Index t : tokens) {
        if (t < 0 || t >= spec_.vocab) {
            throw ArgumentError("token id " + std::to_string(t) + " outside the vocabulary");
        }
    }
}

std::vector<Index> ToyModel::random_prompt(Index length, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, spec_.vocab - 1);
    std::vector<Index> tokens(static_cast<std::size_t>(length));
    for (auto& t : tokens) {
        t = pick(rng);
    }
    return tokens;
}

AttentionTrace ToyModel::forward_trace(std::span<const Index> tokens) const {
    if (tokens.empty()) {
        throw ArgumentError("forward pass needs at least one token");
    }
    check_tokens(tokens);
    const auto n = static_cast<Index>(tokens.size());
    const Index hd = head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    AttentionTrace trace;
    trace.meta = TraceMeta{spec_.layers, spec_.heads, n, "toy", spec_.seed};
    trace.attention.resize(layers_.size());
    trace.kv.resize(layers_.size());

    Eigen::MatrixXd hidden(n, spec_.dim);
    for (Index m = 0; m < n; ++m) {
        hidden.row(m) = embed(tokens[static_cast<std::size_t>(m)], m).transpose();
    }

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        Eigen::MatrixXd concat(n, spec_.dim);
        for (Index h = 0; h < spec_.heads; ++h) {
            const auto hi = static_cast<std::size_t>(h);
            const Eigen::MatrixXd q = hidden * layer.query[hi].transpose() * layer.gain;
            Eigen::MatrixXd k = hidden * layer.key[hi].transpose();
            Eigen::MatrixXd v = hidden * layer.value[hi].transpose();
            Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
            for (Index m = 0; m < n; ++m) {
                Eigen::VectorXd scores = k.topRows(m + 1) * q.row(m).transpose() * inv_sqrt;
                softmax(scores);
                a.row(m).head(m + 1) = scores.transpose();
            }
            concat.middleCols(h * hd, hd) = a * v;
            trace.attention[l].push_back(std::move(a));
            trace.kv[l].push_back(HeadKv{std::move(k), std::move(v)});
        }
        hidden += concat * layer.output.transpose();
        trace.features.push_back(hidden);
    }
    return trace;
}

DecodeResult ToyModel::decode(std::span<const Index> prompt, Index steps) const {
    const auto full = baseline_config(Policy::Uniform, BudgetSpec{1.0, 0.0, 1, 1}, spec_.layers,
                                      static_cast<Index>(prompt.size()));
    return decode(prompt, steps, full, SimulationOptions{});
}

DecodeResult ToyModel::decode(std::span<const Index> prompt, Index steps,
                              const PrefixConfiguration& config, const SimulationOptions& options,
                              std::span<const Index> forced) const {
    if (steps < 1) {
        throw ArgumentError("decode needs at least one step");
    }
    if (!forced.empty() && static_cast<Index>(forced.size()) < steps) {
        throw ArgumentError("forced token stream shorter than the number of steps");
    }
    check_tokens(forced);
    const auto prefill = forward_trace(prompt);
    const auto profile = compute_importance(prefill);
    const Index hd = head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    DecodeResult result;
    result.cache = prefill_compress(profile, prefill.kv, config, options);
    auto& state = result.cache;
    result.log.push_back(cache_log(state, 0));
    result.log.back().retained_info = retained_info(state, profile);

    Index next = argmax_token(prefill.features.back().row(prefill.meta.seq_len - 1).transpose());
    for (Index t = 0; t < steps; ++t) {
        const Index token = forced.empty() ? next : forced[static_cast<std::size_t>(t)];
        result.tokens.push_back(token);
        const Index position = state.current_len;
        Eigen::VectorXd hidden = embed(token, position);

        DecodeInput input;
        input.attention.resize(layers_.size());
        Eigen::MatrixXd features(spec_.layers, spec_.dim);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            const auto& cache = state.layer_caches[l];
            const auto live = static_cast<Index>(cache.size());
            Eigen::VectorXd concat(spec_.dim);
            Eigen::MatrixXd new_keys(spec_.heads, hd);
            Eigen::MatrixXd new_values(spec_.heads, hd);
            for (Index h = 0; h < spec_.heads; ++h) {
                const auto hi = static_cast<std::size_t>(h);
                const Eigen::VectorXd q = layer.query[hi] * hidden * layer.gain;
                const Eigen::VectorXd k = layer.key[hi] * hidden;
                const Eigen::VectorXd v = layer.value[hi] * hidden;
                Eigen::VectorXd scores(live + 1);
                for (Index j = 0; j < live; ++j) {
                    scores(j) = cache[static_cast<std::size_t>(j)].keys.row(h).dot(q) * inv_sqrt;
                }
                scores(live) = k.dot(q) * inv_sqrt;
                softmax(scores);
                Eigen::VectorXd out = scores(live) * v;
                for (Index j = 0; j < live; ++j) {
                    out += scores(j) * cache[static_cast<std::size_t>(j)].values.row(h).transpose();
                }
                concat.segment(h * hd, hd) = out;
                new_keys.row(h) = k.transpose();
                new_values.row(h) = v.transpose();
                input.attention[l].push_back(std::move(scores));
            }
            hidden += layer.output * concat;
            features.row(static_cast<Index>(l)) = hidden.transpose();
            input.keys.push_back(std::move(new_keys));
            input.values.push_back(std::move(new_values));
        }
        result.features.push_back(std::move(features));
        next = argmax_token(hidden);

        decode_step(state, input);
        result.log.push_back(cache_log(state, t + 1));
    }
    return result;
}

}  // namespace kvbudget
