// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "kvbudget/common.hpp"

namespace kvbudget::detail {

inline void expect_array(const nlohmann::json& node, const std::string& field, std::size_t size) {
    if (!node.is_array()) {
        throw ParseError("field '" + field + "' must be an array");
    }
    if (node.size() != size) {
        throw ParseError("field '" + field + "' has " + std::to_string(node.size()) +
                         " entries, expected " + std::to_string(size));
    }
}

inline double read_number(const nlohmann::json& node, const std::string& field) {
    if (!node.is_number()) {
        throw ParseError("field '" + field + "' must be a number");
    }
    return node.get<double>();
}

/// Rectangular array of arrays of numbers.
inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& node, const std::string& field) {
    if (!node.is_array()) {
        throw ParseError("field '" + field + "' must be an array of rows");
    }
    const auto rows = node.size();
    const auto cols = rows == 0 ? std::size_t{0} : node[0].size();
    Eigen::MatrixXd out(static_cast<Index>(rows), static_cast<Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        const std::string rf = field + "[" + std::to_string(i) + "]";
        expect_array(node[i], rf, cols);
        for (std::size_t j = 0; j < cols; ++j) {
            out(static_cast<Index>(i), static_cast<Index>(j)) =
                read_number(node[i][j], rf + "[" + std::to_string(j) + "]");
        }
    }
    return out;
}

template <typename Derived>
nlohmann::json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Index j = 0; j < m.cols(); ++j) {
            row.push_back(static_cast<double>(m(i, j)));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

template <typename Derived>
nlohmann::json vector_to_json(const Eigen::MatrixBase<Derived>& v) {
    nlohmann::json out = nlohmann::json::array();
    for (Index i = 0; i < v.size(); ++i) {
        out.push_back(static_cast<double>(v(i)));
    }
    return out;
}

}  // namespace kvbudget::detail
