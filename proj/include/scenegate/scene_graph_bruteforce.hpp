#pragma once

// Independent reference construction of the scene graph, written against the
// same geometric rules but with a different formulation (angle classification
// via atan2, containment via corner tests, explicit candidate filtering).
// Used by `scene-graph --verify-bruteforce` and by the test suites; it must
// stay structurally independent of scene_graph.hpp's implementation.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "scenegate/scene_graph.hpp"

namespace scenegate::brute_force {

inline bool corner_inside(double x, double y, const BoundingBox& b) {
    return b.x_min <= x && x <= b.x_max && b.y_min <= y && y <= b.y_max;
}

inline bool box_inside(const BoundingBox& inner, const BoundingBox& outer) {
    return corner_inside(inner.x_min, inner.y_min, outer) &&
           corner_inside(inner.x_max, inner.y_max, outer);
}

inline bool box_strictly_inside(const BoundingBox& inner, const BoundingBox& outer) {
    return outer.x_min < inner.x_min && outer.y_min < inner.y_min && inner.x_max < outer.x_max &&
           inner.y_max < outer.y_max;
}

inline double overlap_1d(double a0, double a1, double b0, double b1) {
    const double lo = a0 > b0 ? a0 : b0;
    const double hi = a1 < b1 ? a1 : b1;
    return hi > lo ? hi - lo : 0.0;
}

inline double iou_ref(const BoundingBox& a, const BoundingBox& b) {
    const double inter =
        overlap_1d(a.x_min, a.x_max, b.x_min, b.x_max) * overlap_1d(a.y_min, a.y_max, b.y_min, b.y_max);
    const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
    const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
    return inter / (area_a + area_b - inter);
}

// Octant classification of the direction src-center -> dst-center using the
// polar angle. theta = 0 points +x; positive theta points +y (downward).
// Exact 22.5-degree boundaries fold into the axis-aligned relation.
inline RelationType relation_ref(const BoundingBox& src, const BoundingBox& dst,
                                 bool same_entity) {
    if (same_entity) return RelationType::kSelf;
    if (box_strictly_inside(dst, src)) return RelationType::kSurrounding;
    if (box_strictly_inside(src, dst)) return RelationType::kInside;
    const double inter =
        overlap_1d(src.x_min, src.x_max, dst.x_min, dst.x_max) *
        overlap_1d(src.y_min, src.y_max, dst.y_min, dst.y_max);
    if (inter > 0.0) return RelationType::kOverlap;

    const double dx = 0.5 * (dst.x_min + dst.x_max) - 0.5 * (src.x_min + src.x_max);
    const double dy = 0.5 * (dst.y_min + dst.y_max) - 0.5 * (src.y_min + src.y_max);
    const double deg = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
    if (deg >= -22.5 && deg <= 22.5) return RelationType::kRightOf;
    if (deg > 22.5 && deg < 67.5) return RelationType::kBottomRight;
    if (deg >= 67.5 && deg <= 112.5) return RelationType::kUnder;
    if (deg > 112.5 && deg < 157.5) return RelationType::kBottomLeft;
    if (deg >= 157.5 || deg <= -157.5) return RelationType::kLeftOf;
    if (deg > -157.5 && deg < -112.5) return RelationType::kTopLeft;
    if (deg >= -112.5 && deg <= -67.5) return RelationType::kAbove;
    return RelationType::kTopRight;
}

inline std::size_t owner_ref(const std::vector<BoundingBox>& objects, const BoundingBox& ocr) {
    std::vector<std::size_t> containers;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        if (box_inside(ocr, objects[i])) containers.push_back(i);
    }
    const std::vector<std::size_t>* pool_ids = nullptr;
    std::vector<std::size_t> all_ids(objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) all_ids[i] = i;
    pool_ids = containers.empty() ? &all_ids : &containers;

    std::size_t best = (*pool_ids)[0];
    double best_iou = iou_ref(objects[best], ocr);
    for (std::size_t idx : *pool_ids) {
        const double v = iou_ref(objects[idx], ocr);
        if (v > best_iou) {
            best = idx;
            best_iou = v;
        }
    }
    if (containers.empty() && best_iou == 0.0) {
        best = 0;
        auto dist = [&](std::size_t i) {
            const double cx = 0.5 * (objects[i].x_min + objects[i].x_max);
            const double cy = 0.5 * (objects[i].y_min + objects[i].y_max);
            const double ox = 0.5 * (ocr.x_min + ocr.x_max);
            const double oy = 0.5 * (ocr.y_min + ocr.y_max);
            return std::hypot(cx - ox, cy - oy);
        };
        double best_dist = dist(0);
        for (std::size_t i = 1; i < objects.size(); ++i) {
            if (dist(i) < best_dist) {
                best = i;
                best_dist = dist(i);
            }
        }
    }
    return best;
}

inline SceneGraph build_scene_graph_ref(std::vector<SceneObjectInput> objects,
                                        std::vector<SceneOcrInput> ocrs) {
    if (objects.size() > kMaxSceneGraphObjects) objects.resize(kMaxSceneGraphObjects);
    if (ocrs.size() > kMaxSceneGraphAttributes) ocrs.resize(kMaxSceneGraphAttributes);
    SceneGraph sg;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        sg.objects.push_back({static_cast<int>(i), objects[i].class_label, objects[i].box});
    }
    std::vector<BoundingBox> obj_boxes;
    for (const auto& o : objects) obj_boxes.push_back(o.box);
    for (std::size_t k = 0; k < ocrs.size(); ++k) {
        const std::size_t owner = owner_ref(obj_boxes, ocrs[k].box);
        sg.attributes.push_back({static_cast<int>(objects.size() + k), ocrs[k].text, ocrs[k].box,
                                 static_cast<int>(owner)});
    }
    // Unordered pair sweep emitting both directions, then self and attribute
    // edges last; edge-set comparison is order-insensitive.
    for (std::size_t i = 0; i < objects.size(); ++i) {
        for (std::size_t j = i + 1; j < objects.size(); ++j) {
            sg.edges.push_back({static_cast<int>(i),
                                relation_ref(objects[i].box, objects[j].box, false),
                                static_cast<int>(j)});
            sg.edges.push_back({static_cast<int>(j),
                                relation_ref(objects[j].box, objects[i].box, false),
                                static_cast<int>(i)});
        }
    }
    for (const auto& attr : sg.attributes) {
        sg.edges.push_back({attr.owner_object_id, RelationType::kSurrounding, attr.id});
        sg.edges.push_back({attr.id, RelationType::kInside, attr.owner_object_id});
    }
    for (std::size_t i = 0; i < sg.node_count(); ++i) {
        sg.edges.push_back({static_cast<int>(i), RelationType::kSelf, static_cast<int>(i)});
    }
    return sg;
}

}  // namespace scenegate::brute_force
