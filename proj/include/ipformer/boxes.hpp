#pragma once

#include "ipformer/tensor.hpp"

#include <cmath>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace ipf {

/// Normalized [0,1] box with a localization score. Padded boxes are all zero.
struct ScoredBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double score = 0;
    int frame = 0;
    bool padded = false;

    double area() const { return (x2 - x1) * (y2 - y1); }

    static ScoredBox padding(int frame = 0)
    {
        ScoredBox b;
        b.frame = frame;
        b.padded = true;
        return b;
    }

    friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

/// Throws InputError unless 0 <= x1 <= x2 <= 1 and 0 <= y1 <= y2 <= 1.
void validate_box(const ScoredBox& box);

double iou(const ScoredBox& a, const ScoredBox& b);

/// Greedy suppression in descending score order; ties keep input order.
/// A box survives iff its IoU with every kept box is <= iou_threshold.
std::vector<ScoredBox> nms(const std::vector<ScoredBox>& boxes, double iou_threshold);

/// Top-m boxes by score, padded with zero boxes to exactly m entries.
std::vector<ScoredBox> retain_top_m(const std::vector<ScoredBox>& boxes, int m);

/// Box proposal text: one record per line, "frame x1 y1 x2 y2 score",
/// separated by commas and/or whitespace. '#' starts a comment.
std::vector<ScoredBox> parse_proposals(std::istream& in);
std::vector<ScoredBox> read_proposals(const std::filesystem::path& path);
void write_proposals(std::ostream& out, const std::vector<ScoredBox>& boxes);

template <typename Scalar>
struct InstanceFeature {
    Vector<Scalar> vector;
    int frame = 0;
    ScoredBox box;
    bool valid = false;
};

/// Side length of the square patch grid behind `patches` tokens.
inline Index grid_side(Index patches)
{
    const auto side = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(patches))));
    if (side < 1 || side * side != patches) {
        throw DimensionError("patch count " + std::to_string(patches) + " is not a square grid");
    }
    return side;
}

/// Indices of the grid cells pooled for `box`: every cell whose center lies
/// inside the box (bounds inclusive), or the single cell holding the box
/// center when none does.
std::vector<Index> roi_cells(const ScoredBox& box, Index side);

/// Average of the pooled cells of a P x D patch-token map laid out row-major
/// over a sqrt(P) x sqrt(P) grid. Padded boxes give a zero, invalid feature.
template <typename Scalar>
InstanceFeature<Scalar> roi_pool(const Tensor<Scalar>& frame_features, const ScoredBox& box)
{
    if (frame_features.rank() != 2) {
        throw DimensionError("roi_pool expects a P x D feature map, got " + shape_string(frame_features.shape()));
    }
    const Index side = grid_side(frame_features.shape()[0]);
    const Index dim = frame_features.shape()[1];

    InstanceFeature<Scalar> out;
    out.frame = box.frame;
    out.box = box;
    if (box.padded) {
        out.vector = Vector<Scalar>::Zero(dim);
        return out;
    }
    const auto map = frame_features.matrix();
    const auto cells = roi_cells(box, side);
    Vector<Scalar> acc = Vector<Scalar>::Zero(dim);
    for (Index c : cells) acc += map.row(c).transpose();
    out.vector = acc / Scalar(cells.size());
    out.valid = true;
    return out;
}

} // namespace ipf
