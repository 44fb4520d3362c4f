// Copyright (C) 2026 The kvbudget Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <vector>

#include "kvbudget/common.hpp"
#include "kvbudget/importance.hpp"

namespace kvbudget {

/// Lorenz curve of a priority sequence: x = (j+1)/N, y = cumulative priority. The origin is implied.
struct LorenzCurve {
    Eigen::VectorXd x;
    Eigen::VectorXd y;

    Index size() const { return x.size(); }
};

struct LayerStats {
    Index layer = 0;
    double gini = 0.0;
    LorenzCurve curve;
};

/// Area under the polyline (0,0), (x0,y0), ..., (xn,yn) by the trapezoidal rule.
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar area_under_polyline(const Eigen::MatrixBase<DerivedX>& x,
                                              const Eigen::MatrixBase<DerivedY>& y) {
    using Scalar = typename DerivedX::Scalar;
    Scalar area(0);
    Scalar px(0);
    Scalar py(0);
    for (Index j = 0; j < x.size(); ++j) {
        area += (x(j) - px) * (y(j) + py) / Scalar(2);
        px = x(j);
        py = y(j);
    }
    return area;
}

/// Twice the area between a descending-sorted Lorenz curve and the equality line, clamped to [0, 1].
template <typename DerivedX, typename DerivedY>
typename DerivedX::Scalar gini_coefficient(const Eigen::MatrixBase<DerivedX>& x,
                                           const Eigen::MatrixBase<DerivedY>& y) {
    using Scalar = typename DerivedX::Scalar;
    const Scalar between = area_under_polyline(x, y) - Scalar(0.5);
    return std::clamp(Scalar(2) * between, Scalar(0), Scalar(1));
}

LorenzCurve lorenz_curve(const PrioritySequence& seq, Index layer);

double gini(const LorenzCurve& curve);

/// Curve and Gini for every layer, in layer order.
std::vector<LayerStats> layer_stats(const PrioritySequence& seq);

}  // namespace kvbudget
