// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbudget/trace.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace kvbudget {

namespace {

std::string where(Index layer, Index head, Index row) {
    std::ostringstream out;
    out << "layer " << layer << " head " << head << " row " << row;
    return out.str();
}

Eigen::VectorXd unit_vector(std::mt19937_64& rng, Index dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(dim);
    for (Index i = 0; i < dim; ++i) {
        v(i) = normal(rng);
    }
    const double norm = v.norm();
    if (norm == 0.0) {
        v.setZero();
        v(0) = 1.0;
        return v;
    }
    return v / norm;
}

}  // namespace

bool AttentionTrace::operator==(const AttentionTrace& other) const {
    if (!(meta == other.meta) || attention.size() != other.attention.size() ||
        importance.has_value() != other.importance.has_value() || kv != other.kv ||
        features.size() != other.features.size()) {
        return false;
    }
    for (std::size_t l = 0; l < attention.size(); ++l) {
        if (attention[l].size() != other.attention[l].size()) {
            return false;
        }
        for (std::size_t h = 0; h < attention[l].size(); ++h) {
            if (attention[l][h] != other.attention[l][h]) {
                return false;
            }
        }
    }
    if (importance && *importance != *other.importance) {
        return false;
    }
    for (std::size_t l = 0; l < features.size(); ++l) {
        if (features[l] != other.features[l]) {
            return false;
        }
    }
    return true;
}

void validate_attention_matrix(const Eigen::MatrixXd& matrix, Index layer, Index head) {
    const Index n = matrix.rows();
    if (matrix.cols() != n) {
        throw ValidationError("attention matrix at layer " + std::to_string(layer) + " head " +
                              std::to_string(head) + " is not square");
    }
    for (Index m = 0; m < n; ++m) {
        double sum = 0.0;
        for (Index col = 0; col < n; ++col) {
            const double a = matrix(m, col);
            if (!std::isfinite(a) || a < 0.0) {
                throw ValidationError("negative or non-finite score at " + where(layer, head, m) +
                                      " column " + std::to_string(col));
            }
            if (col > m && a != 0.0) {
                throw ValidationError("causality violated at " + where(layer, head, m) + " column " +
                                      std::to_string(col));
            }
            sum += a;
        }
        if (std::abs(sum - 1.0) > kRowSumTolerance) {
            std::ostringstream msg;
            msg << "row sum " << sum << " at " << where(layer, head, m);
            throw ValidationError(msg.str());
        }
    }
}

void validate(const AttentionTrace& trace) {
    const auto& meta = trace.meta;
    if (meta.layers < 1 || meta.heads < 1 || meta.seq_len < 1) {
        throw ValidationError("layers, heads and seq_len must be positive");
    }
    const auto layers = static_cast<std::size_t>(meta.layers);
    const auto heads = static_cast<std::size_t>(meta.heads);

    if (trace.has_attention()) {
        if (trace.attention.size() != layers) {
            throw ValidationError("attention has " + std::to_string(trace.attention.size()) +
                                  " layers, meta says " + std::to_string(layers));
        }
        for (std::size_t l = 0; l < layers; ++l) {
            if (trace.attention[l].size() != heads) {
                throw ValidationError("attention layer " + std::to_string(l) + " has " +
                                      std::to_string(trace.attention[l].size()) + " heads");
            }
            for (std::size_t h = 0; h < heads; ++h) {
                const auto& a = trace.attention[l][h];
                if (a.rows() != meta.seq_len) {
                    throw ValidationError("attention matrix at layer " + std::to_string(l) +
                                          " head " + std::to_string(h) + " has " +
                                          std::to_string(a.rows()) + " rows");
                }
                validate_attention_matrix(a, static_cast<Index>(l), static_cast<Index>(h));
            }
        }
    } else {
        if (!trace.importance) {
            throw ValidationError("trace carries neither attention nor importance");
        }
        const auto& imp = *trace.importance;
        if (imp.rows() != meta.layers || imp.cols() != meta.seq_len) {
            throw ValidationError("importance table must be layers x seq_len");
        }
        for (Index l = 0; l < imp.rows(); ++l) {
            for (Index n = 0; n < imp.cols(); ++n) {
                if (!std::isfinite(imp(l, n)) || imp(l, n) < 0.0) {
                    throw ValidationError("negative importance at layer " + std::to_string(l) +
                                          " position " + std::to_string(n));
                }
            }
        }
    }

    if (trace.has_kv()) {
        if (trace.kv.size() != layers) {
            throw ValidationError("kv layer count mismatch");
        }
        const Index dim = trace.kv_dim();
        for (std::size_t l = 0; l < layers; ++l) {
            if (trace.kv[l].size() != heads) {
                throw ValidationError("kv head count mismatch at layer " + std::to_string(l));
            }
            for (std::size_t h = 0; h < heads; ++h) {
                const auto& kv = trace.kv[l][h];
                if (kv.keys.rows() != meta.seq_len || kv.values.rows() != meta.seq_len ||
                    kv.keys.cols() != dim || kv.values.cols() != dim) {
                    throw ValidationError("kv shape mismatch at layer " + std::to_string(l) +
                                          " head " + std::to_string(h));
                }
            }
        }
    }

    if (!trace.features.empty()) {
        if (trace.features.size() != layers) {
            throw ValidationError("features layer count mismatch");
        }
        for (const auto& f : trace.features) {
            if (f.rows() != meta.seq_len || f.cols() != trace.features.front().cols()) {
                throw ValidationError("features shape mismatch");
            }
        }
    }
}

AttentionTrace synth_trace(Index layers, Index heads, Index seq_len,
                           std::span<const double> concentration, std::uint64_t seed,
                           const SynthOptions& options) {
    if (layers < 1 || heads < 1 || seq_len < 1) {
        throw ArgumentError("layers, heads and seq_len must be positive");
    }
    if (static_cast<Index>(concentration.size()) != layers) {
        throw ArgumentError("concentration must have one entry per layer");
    }
    for (double c : concentration) {
        if (!(c > 0.0) || !std::isfinite(c)) {
            throw ArgumentError("concentration values must be positive");
        }
    }
    if (options.with_kv && options.kv_dim < 1) {
        throw ArgumentError("kv_dim must be positive");
    }

    AttentionTrace trace;
    trace.meta = TraceMeta{layers, heads, seq_len, options.label, seed};
    trace.attention.resize(static_cast<std::size_t>(layers));

    std::mt19937_64 rng(seed);
    std::gamma_distribution<double> noise(1.0, 1.0);

    for (Index l = 0; l < layers; ++l) {
        std::gamma_distribution<double> salience_dist(concentration[static_cast<std::size_t>(l)], 1.0);
        Eigen::VectorXd salience(seq_len);
        for (Index n = 0; n < seq_len; ++n) {
            salience(n) = salience_dist(rng);
        }
        auto& layer = trace.attention[static_cast<std::size_t>(l)];
        layer.reserve(static_cast<std::size_t>(heads));
        for (Index h = 0; h < heads; ++h) {
            Eigen::MatrixXd a = Eigen::MatrixXd::Zero(seq_len, seq_len);
            for (Index m = 0; m < seq_len; ++m) {
                double sum = 0.0;
                for (Index n = 0; n <= m; ++n) {
                    a(m, n) = salience(n) * noise(rng);
                    sum += a(m, n);
                }
                if (sum > 0.0 && std::isfinite(sum)) {
                    a.row(m).head(m + 1) /= sum;
                } else {
                    // every draw underflowed; fall back to a uniform row
                    a.row(m).head(m + 1).setConstant(1.0 / static_cast<double>(m + 1));
                }
            }
            layer.push_back(std::move(a));
        }
    }

    if (options.with_kv) {
        trace.kv.resize(static_cast<std::size_t>(layers));
        for (auto& layer : trace.kv) {
            layer.resize(static_cast<std::size_t>(heads));
            for (auto& head : layer) {
                head.keys.resize(seq_len, options.kv_dim);
                head.values.resize(seq_len, options.kv_dim);
                for (Index n = 0; n < seq_len; ++n) {
                    head.keys.row(n) = unit_vector(rng, options.kv_dim).transpose();
                    head.values.row(n) = unit_vector(rng, options.kv_dim).transpose();
                }
            }
        }
    }
    return trace;
}

}  // namespace kvbudget
