#pragma once

// Instance-prompt construction: greedy seed-scan grouping of instance
// features by cosine similarity, channel-wise group means, and padding to a
// fixed number of prompt rows.

#include "ipformer/boxes.hpp"
#include "ipformer/tensor.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace ipf {

inline constexpr double kDefaultSimilarityThreshold = 0.9;
inline constexpr int kDefaultMaxPrompts = 80;

/// u.v / (|u||v|), or 0 when either norm is 0.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& u, const Eigen::MatrixBase<DerivedB>& v)
{
    using Scalar = typename DerivedA::Scalar;
    if (u.size() != v.size()) {
        throw DimensionError("cosine_similarity: lengths " + std::to_string(u.size()) + " and " +
                             std::to_string(v.size()));
    }
    const Scalar nu = u.norm();
    const Scalar nv = v.norm();
    if (nu == Scalar(0) || nv == Scalar(0)) return Scalar(0);
    return std::clamp(u.dot(v) / (nu * nv), Scalar(-1), Scalar(1));
}

template <typename Scalar>
struct InstanceGroup {
    Index seed_index = 0;
    std::vector<Index> member_indices; ///< seed first, then scan order
    Vector<Scalar> aggregate;
};

template <typename Scalar>
struct InstancePromptSet {
    RowMatrix<Scalar> tokens; ///< V x D; rows >= valid_count are zero
    Index valid_count = 0;
    double threshold = kDefaultSimilarityThreshold;
};

/// Stable sort into the canonical scan order: frame ascending, score descending.
template <typename Scalar>
void canonical_order(std::vector<InstanceFeature<Scalar>>& features)
{
    std::stable_sort(features.begin(), features.end(), [](const auto& a, const auto& b) {
        if (a.frame != b.frame) return a.frame < b.frame;
        return a.box.score > b.box.score;
    });
}

/// Per-channel mean of the member vectors.
template <typename Scalar>
Vector<Scalar> aggregate_group(std::span<const Vector<Scalar>> members)
{
    if (members.empty()) throw InputError("aggregate_group: empty group");
    Vector<Scalar> acc = Vector<Scalar>::Zero(members.front().size());
    for (const auto& m : members) {
        if (m.size() != acc.size()) throw DimensionError("aggregate_group: member length mismatch");
        acc += m;
    }
    return acc / Scalar(members.size());
}

/// Seed-scan grouping. The first ungrouped valid instance becomes a seed and
/// absorbs every later ungrouped instance whose similarity to it strictly
/// exceeds `threshold`; repeat until every valid instance is grouped.
/// Expects `features` in canonical order; indices refer to positions in it.
template <typename Scalar>
std::vector<InstanceGroup<Scalar>> group_instances(const std::vector<InstanceFeature<Scalar>>& features,
                                                   double threshold = kDefaultSimilarityThreshold)
{
    const std::size_t n = features.size();
    std::vector<char> grouped(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!features[i].valid) grouped[i] = 1;
    }

    std::vector<InstanceGroup<Scalar>> groups;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (grouped[seed]) continue;
        grouped[seed] = 1;
        InstanceGroup<Scalar> g;
        g.seed_index = static_cast<Index>(seed);
        g.member_indices.push_back(g.seed_index);
        for (std::size_t j = seed + 1; j < n; ++j) {
            if (grouped[j]) continue;
            if (cosine_similarity(features[seed].vector, features[j].vector) > Scalar(threshold)) {
                grouped[j] = 1;
                g.member_indices.push_back(static_cast<Index>(j));
            }
        }
        std::vector<Vector<Scalar>> members;
        members.reserve(g.member_indices.size());
        for (Index m : g.member_indices) members.push_back(features[static_cast<std::size_t>(m)].vector);
        g.aggregate = aggregate_group<Scalar>(members);
        groups.push_back(std::move(g));
    }
    return groups;
}

/// Group aggregates in creation order fill rows 0..; groups past v_max are
/// dropped and the remaining rows stay zero.
template <typename Scalar>
InstancePromptSet<Scalar> build_prompt_set(const std::vector<InstanceGroup<Scalar>>& groups, Index v_max, Index dim,
                                           double threshold = kDefaultSimilarityThreshold)
{
    if (v_max < 1) throw InputError("build_prompt_set: v_max must be >= 1");
    InstancePromptSet<Scalar> out;
    out.threshold = threshold;
    out.tokens = RowMatrix<Scalar>::Zero(v_max, dim);
    out.valid_count = std::min<Index>(v_max, static_cast<Index>(groups.size()));
    for (Index i = 0; i < out.valid_count; ++i) {
        const auto& agg = groups[static_cast<std::size_t>(i)].aggregate;
        if (agg.size() != dim) throw DimensionError("build_prompt_set: aggregate length mismatch");
        out.tokens.row(i) = agg.transpose();
    }
    return out;
}

} // namespace ipf
