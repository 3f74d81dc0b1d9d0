#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>
#include <ordred/linalg.hpp>

namespace ordred {
namespace knn {

inline int default_k(int n_train)
{
    return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n_train)))));
}

namespace detail {

/// Indices of the k nearest training rows; ties broken by index.
inline std::vector<int> nearest(const Mat& train, const Eigen::Ref<const Vec>& q, int k)
{
    const int n = static_cast<int>(train.rows());
    std::vector<std::pair<double, int>> dist(n);
    for (int i = 0; i < n; ++i) dist[i] = {(train.row(i).transpose() - q).squaredNorm(), i};
    k = std::min(k, n);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::vector<int> out(k);
    for (int t = 0; t < k; ++t) out[t] = dist[t].second;
    return out;
}

} // namespace detail

/// k-NN regression; with zero features every prediction is the training mean.
inline Vec regress(const Mat& train, const Vec& y, const Mat& test, int k)
{
    Vec out(test.rows());
    if (train.cols() == 0) {
        out.setConstant(y.mean());
        return out;
    }
    for (Eigen::Index t = 0; t < test.rows(); ++t) {
        const std::vector<int> nb = detail::nearest(train, test.row(t).transpose(), k);
        double s = 0.0;
        for (int i : nb) s += y(i);
        out(t) = s / static_cast<double>(nb.size());
    }
    return out;
}

/// k-NN majority vote over labels 0..C-1; ties go to the class of the nearest tied neighbor.
inline std::vector<int> classify(const Mat& train, const std::vector<int>& labels, const Mat& test, int k)
{
    const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<int> out(test.rows());
    if (train.cols() == 0) {
        std::vector<int> count(classes, 0);
        for (int l : labels) ++count[l];
        const int best = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
        std::fill(out.begin(), out.end(), best);
        return out;
    }
    for (Eigen::Index t = 0; t < test.rows(); ++t) {
        const std::vector<int> nb = detail::nearest(train, test.row(t).transpose(), k);
        std::vector<int> count(classes, 0);
        for (int i : nb) ++count[labels[i]];
        const int top = *std::max_element(count.begin(), count.end());
        for (int i : nb) {
            if (count[labels[i]] == top) {
                out[t] = labels[i];
                break;
            }
        }
    }
    return out;
}

} // namespace knn
} // namespace ordred
