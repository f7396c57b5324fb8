#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "scenegate/common.hpp"

namespace scenegate {

// Axis-aligned box in normalized image coordinates; y grows downward.
struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    BoundingBox() = default;
    BoundingBox(double x0, double y0, double x1, double y1)
        : x_min(x0), y_min(y0), x_max(x1), y_max(y1) {
        validate();
    }

    void validate() const {
        if (!(x_min < x_max) || !(y_min < y_max)) {
            throw ContractError("degenerate bounding box (" + std::to_string(x_min) + ", " +
                                std::to_string(y_min) + ", " + std::to_string(x_max) + ", " +
                                std::to_string(y_max) + ")");
        }
        if (x_min < 0.0 || y_min < 0.0 || x_max > 1.0 || y_max > 1.0) {
            throw ContractError("bounding box outside [0,1] normalized coordinates");
        }
    }

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }

    bool operator==(const BoundingBox& o) const {
        return x_min == o.x_min && y_min == o.y_min && x_max == o.x_max && y_max == o.y_max;
    }

    // Non-strict containment of `inner` within this box.
    bool contains(const BoundingBox& inner) const {
        return x_min <= inner.x_min && inner.x_max <= x_max && y_min <= inner.y_min &&
               inner.y_max <= y_max;
    }

    bool strictly_contains(const BoundingBox& inner) const {
        return x_min < inner.x_min && inner.x_max < x_max && y_min < inner.y_min &&
               inner.y_max < y_max;
    }
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
    const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
    const double inter = intersection_area(a, b);
    const double uni = a.area() + b.area() - inter;
    return inter / uni;
}

inline double center_distance(const BoundingBox& a, const BoundingBox& b) {
    const double dx = b.center_x() - a.center_x();
    const double dy = b.center_y() - a.center_y();
    return std::sqrt(dx * dx + dy * dy);
}

// The 12 spatial relation types with their fixed numeric labels.
enum class RelationType : int {
    kInside = 1,
    kSurrounding = 2,
    kRightOf = 3,
    kLeftOf = 4,
    kUnder = 5,
    kAbove = 6,
    kTopRight = 7,
    kBottomRight = 8,
    kTopLeft = 9,
    kBottomLeft = 10,
    kOverlap = 11,
    kSelf = 12,
};

inline constexpr int kNumRelations = 12;

inline int relation_label(RelationType r) { return static_cast<int>(r); }

inline RelationType relation_from_label(int label) {
    if (label < 1 || label > kNumRelations) {
        throw ContractError("relation label " + std::to_string(label) + " outside 1..12");
    }
    return static_cast<RelationType>(label);
}

inline const char* relation_name(RelationType r) {
    static constexpr std::array<const char*, 13> names = {
        "?",         "inside",       "surrounding", "right_of", "left_of",
        "under",     "above",        "top_right",   "bottom_right",
        "top_left",  "bottom_left",  "overlap",     "self"};
    return names[static_cast<std::size_t>(relation_label(r))];
}

// tan(22.5 degrees): half-width of each axis-centered octant.
inline constexpr double kOctantSlope = 0.41421356237309503;

// Relation carried by the directed edge src -> dst:
//   same entity            -> self
//   src strictly contains  -> surrounding; src strictly contained -> inside
//   positive overlap area  -> overlap (covers coincident boxes)
//   disjoint               -> octant of the src-center -> dst-center vector,
//                             45 degrees per sector centered on the axes;
//                             exact boundary angles resolve to the axis
//                             relation. y grows downward, so dy < 0 is above.
inline RelationType classify_relation(const BoundingBox& src, const BoundingBox& dst,
                                      bool same_entity) {
    if (same_entity) return RelationType::kSelf;
    if (src.strictly_contains(dst)) return RelationType::kSurrounding;
    if (dst.strictly_contains(src)) return RelationType::kInside;
    if (intersection_area(src, dst) > 0.0) return RelationType::kOverlap;

    const double dx = dst.center_x() - src.center_x();
    const double dy = dst.center_y() - src.center_y();
    const double ax = std::abs(dx);
    const double ay = std::abs(dy);
    if (ay <= kOctantSlope * ax) {
        return dx > 0.0 ? RelationType::kRightOf : RelationType::kLeftOf;
    }
    if (ax <= kOctantSlope * ay) {
        return dy > 0.0 ? RelationType::kUnder : RelationType::kAbove;
    }
    if (dx > 0.0) {
        return dy > 0.0 ? RelationType::kBottomRight : RelationType::kTopRight;
    }
    return dy > 0.0 ? RelationType::kBottomLeft : RelationType::kTopLeft;
}

}  // namespace scenegate
