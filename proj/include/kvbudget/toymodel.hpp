// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "kvbudget/allocator.hpp"
#include "kvbudget/cachesim.hpp"
#include "kvbudget/common.hpp"
#include "kvbudget/trace.hpp"

namespace kvbudget {

struct ToyModelSpec {
    Index layers = 8;
    Index heads = 4;
    Index dim = 64;
    Index vocab = 256;
    std::uint64_t seed = 0;
};

struct DecodeResult {
    std::vector<Index> tokens;               // tokens fed to the decode passes, in order
    std::vector<Eigen::MatrixXd> features;   // [step], layers x dim post-attention outputs
    std::vector<StepLog> log;                // cache log, step 0 = prefill compression
    CacheState cache;
};

/**
 * Attention-only causal transformer with fixed random weights.
 *
 * Every weight is drawn from N(0, 1/dim) by a seeded generator. Each layer
 * also draws a logit gain (log-uniform in [0.25, 4]) so layers differ in how
 * sharply they attend. No MLP and no normalization: the residual stream is
 * embedding + sinusoidal position + the sum of attention outputs.
 */
class ToyModel {
public:
    explicit ToyModel(const ToyModelSpec& spec);

    const ToyModelSpec& spec() const { return spec_; }
    Index head_dim() const { return spec_.dim / spec_.heads; }

    /// Full causal forward pass, recording attention, per-head keys/values and layer outputs.
    AttentionTrace forward_trace(std::span<const Index> tokens) const;

    /// Greedy decoding over an uncompressed cache.
    DecodeResult decode(std::span<const Index> prompt, Index steps) const;

    /**
     * Greedy decoding with the cache compressed by `config` after prefill and
     * maintained by decode_step afterwards. When `forced` is nonempty its
     * tokens are fed instead of the model's own predictions.
     */
    DecodeResult decode(std::span<const Index> prompt, Index steps,
                        const PrefixConfiguration& config, const SimulationOptions& options,
                        std::span<const Index> forced = {}) const;

    /// Deterministic token ids in [0, vocab).
    std::vector<Index> random_prompt(Index length, std::uint64_t seed) const;

private:
    struct Layer {
        std::vector<Eigen::MatrixXd> query;  // per head, head_dim x dim
        std::vector<Eigen::MatrixXd> key;
        std::vector<Eigen::MatrixXd> value;
        Eigen::MatrixXd output;              // dim x dim
        double gain = 1.0;
    };

    Eigen::VectorXd embed(Index token, Index position) const;
    Index argmax_token(const Eigen::VectorXd& hidden) const;
    void check_tokens(std::span<const Index> tokens) const;

    ToyModelSpec spec_;
    Eigen::MatrixXd embedding_;   // vocab x dim
    Eigen::MatrixXd unembedding_; // dim x vocab
    std::vector<Layer> layers_;
};

struct DisturbanceReport {
    Eigen::VectorXd per_layer_mae;   // mean over decoded tokens
    Eigen::MatrixXd per_token_mae;   // layers x decoded tokens
    double budget = 1.0;

    double mean() const { return per_layer_mae.mean(); }
};

/**
 * Runs the model with a full cache and again under `config`, feeding both the
 * full run's tokens, and reports the mean absolute feature difference per
 * layer and decoded token.
 */
DisturbanceReport disturbance(const ToyModel& model, std::span<const Index> prompt,
                              Index decode_len, const PrefixConfiguration& config,
                              const SimulationOptions& options = {});

DisturbanceReport disturbance(const ToyModel& model, Index prompt_len, Index decode_len,
                              const PrefixConfiguration& config, std::uint64_t prompt_seed,
                              const SimulationOptions& options = {});

}  // namespace kvbudget
