#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenegate/common.hpp"
#include "scenegate/geometry.hpp"

namespace scenegate {

inline constexpr std::size_t kMaxSceneGraphObjects = 36;
inline constexpr std::size_t kMaxSceneGraphAttributes = 100;

struct ObjectNode {
    int id = 0;
    std::string class_label;
    BoundingBox box;
};

struct AttributeNode {
    int id = 0;
    std::string ocr_text;
    BoundingBox box;
    int owner_object_id = 0;
};

struct Edge {
    int src = 0;
    RelationType relation = RelationType::kSelf;
    int dst = 0;

    bool operator==(const Edge& o) const {
        return src == o.src && relation == o.relation && dst == o.dst;
    }
    bool operator<(const Edge& o) const {
        if (src != o.src) return src < o.src;
        if (dst != o.dst) return dst < o.dst;
        return relation < o.relation;
    }
};

// Typed scene graph: object nodes, OCR attribute nodes attached to an owner
// object, and relation-labeled directed edges (including one self edge per
// node).
struct SceneGraph {
    std::vector<ObjectNode> objects;
    std::vector<AttributeNode> attributes;
    std::vector<Edge> edges;

    std::size_t node_count() const { return objects.size() + attributes.size(); }
};

// P x P matrix of relation labels in {0} + {1..12}; 0 means no edge and the
// diagonal is constantly 12 (self).
struct AdjacencyMatrix {
    std::size_t n = 0;
    std::vector<int> labels;  // row-major

    int at(std::size_t i, std::size_t j) const { return labels[i * n + j]; }
    int& at(std::size_t i, std::size_t j) { return labels[i * n + j]; }
};

// Owner object for each OCR box. Containing objects win by highest IoU;
// without a container, highest IoU wins, then nearest center, ties to the
// lowest object index.
inline std::vector<std::size_t> assign_ocr_attributes(const std::vector<BoundingBox>& objects,
                                                      const std::vector<BoundingBox>& ocrs) {
    if (objects.empty()) {
        throw ContractError("assign_ocr_attributes requires at least one object");
    }
    std::vector<std::size_t> owners(ocrs.size(), 0);
    for (std::size_t k = 0; k < ocrs.size(); ++k) {
        const BoundingBox& ocr = ocrs[k];
        std::size_t best = objects.size();
        double best_iou = -1.0;
        bool best_contains = false;
        for (std::size_t i = 0; i < objects.size(); ++i) {
            const bool contains = objects[i].contains(ocr);
            const double score = iou(objects[i], ocr);
            if (best == objects.size() || (contains && !best_contains) ||
                (contains == best_contains && score > best_iou)) {
                best = i;
                best_iou = score;
                best_contains = contains;
            }
        }
        if (!best_contains && best_iou <= 0.0) {
            // Every IoU is zero: fall back to nearest center.
            best = 0;
            double best_dist = center_distance(objects[0], ocr);
            for (std::size_t i = 1; i < objects.size(); ++i) {
                const double d = center_distance(objects[i], ocr);
                if (d < best_dist) {
                    best = i;
                    best_dist = d;
                }
            }
        }
        owners[k] = best;
    }
    return owners;
}

// Inputs to the builder: boxes plus their labels/texts, ids implicit by
// position.
struct SceneObjectInput {
    std::string class_label;
    BoundingBox box;
};

struct SceneOcrInput {
    std::string text;
    BoundingBox box;
};

inline SceneGraph build_scene_graph(std::vector<SceneObjectInput> objects,
                                    std::vector<SceneOcrInput> ocrs) {
    if (objects.size() > kMaxSceneGraphObjects) objects.resize(kMaxSceneGraphObjects);
    if (ocrs.size() > kMaxSceneGraphAttributes) ocrs.resize(kMaxSceneGraphAttributes);

    SceneGraph sg;
    sg.objects.reserve(objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) {
        sg.objects.push_back({static_cast<int>(i), objects[i].class_label, objects[i].box});
    }

    std::vector<BoundingBox> object_boxes;
    object_boxes.reserve(objects.size());
    for (const auto& o : objects) object_boxes.push_back(o.box);
    std::vector<BoundingBox> ocr_boxes;
    ocr_boxes.reserve(ocrs.size());
    for (const auto& o : ocrs) ocr_boxes.push_back(o.box);
    const std::vector<std::size_t> owners = assign_ocr_attributes(object_boxes, ocr_boxes);

    const int attr_base = static_cast<int>(objects.size());
    sg.attributes.reserve(ocrs.size());
    for (std::size_t k = 0; k < ocrs.size(); ++k) {
        sg.attributes.push_back({attr_base + static_cast<int>(k), ocrs[k].text, ocrs[k].box,
                                 static_cast<int>(owners[k])});
    }

    for (const auto& node : sg.objects) {
        sg.edges.push_back({node.id, RelationType::kSelf, node.id});
    }
    for (const auto& node : sg.attributes) {
        sg.edges.push_back({node.id, RelationType::kSelf, node.id});
    }
    for (std::size_t i = 0; i < objects.size(); ++i) {
        for (std::size_t j = 0; j < objects.size(); ++j) {
            if (i == j) continue;
            sg.edges.push_back({static_cast<int>(i),
                                classify_relation(objects[i].box, objects[j].box, false),
                                static_cast<int>(j)});
        }
    }
    for (const auto& attr : sg.attributes) {
        sg.edges.push_back({attr.owner_object_id, RelationType::kSurrounding, attr.id});
        sg.edges.push_back({attr.id, RelationType::kInside, attr.owner_object_id});
    }
    return sg;
}

// Node order is objects then attributes, each by ascending id.
inline AdjacencyMatrix adjacency_matrix(const SceneGraph& sg) {
    const std::size_t p = sg.node_count();
    std::map<int, std::size_t> index_of;
    {
        std::vector<int> ids;
        ids.reserve(p);
        for (const auto& o : sg.objects) ids.push_back(o.id);
        std::sort(ids.begin(), ids.end());
        std::vector<int> attr_ids;
        for (const auto& a : sg.attributes) attr_ids.push_back(a.id);
        std::sort(attr_ids.begin(), attr_ids.end());
        ids.insert(ids.end(), attr_ids.begin(), attr_ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i) index_of[ids[i]] = i;
    }
    AdjacencyMatrix adj;
    adj.n = p;
    adj.labels.assign(p * p, 0);
    for (const Edge& e : sg.edges) {
        const auto si = index_of.find(e.src);
        const auto di = index_of.find(e.dst);
        if (si == index_of.end() || di == index_of.end()) {
            throw ContractError("edge references unknown node id");
        }
        adj.at(si->second, di->second) = relation_label(e.relation);
    }
    return adj;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

inline nlohmann::json bbox_to_json(const BoundingBox& b) {
    return nlohmann::json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

inline BoundingBox bbox_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4) {
        throw ParseError(path + ": bbox must be a 4-element array");
    }
    for (const auto& v : j) {
        if (!v.is_number()) throw ParseError(path + ": bbox entries must be numbers");
    }
    try {
        return BoundingBox(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                           j[3].get<double>());
    } catch (const ContractError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline nlohmann::json scene_graph_to_json(const SceneGraph& sg) {
    nlohmann::json j;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : sg.objects) {
        j["objects"].push_back({{"id", o.id}, {"class", o.class_label}, {"bbox", bbox_to_json(o.box)}});
    }
    j["attributes"] = nlohmann::json::array();
    for (const auto& a : sg.attributes) {
        j["attributes"].push_back({{"id", a.id},
                                   {"text", a.ocr_text},
                                   {"bbox", bbox_to_json(a.box)},
                                   {"owner", a.owner_object_id}});
    }
    j["edges"] = nlohmann::json::array();
    for (const Edge& e : sg.edges) {
        j["edges"].push_back(nlohmann::json::array({e.src, relation_label(e.relation), e.dst}));
    }
    return j;
}

inline SceneGraph scene_graph_from_json(const nlohmann::json& j) {
    SceneGraph sg;
    if (!j.is_object()) throw ParseError("$: scene graph must be a JSON object");
    for (const char* key : {"objects", "attributes", "edges"}) {
        if (!j.contains(key) || !j.at(key).is_array()) {
            throw ParseError(std::string("$.") + key + ": missing or not an array");
        }
    }
    std::size_t i = 0;
    for (const auto& o : j.at("objects")) {
        const std::string path = "$.objects[" + std::to_string(i++) + "]";
        if (!o.contains("id") || !o.contains("class") || !o.contains("bbox")) {
            throw ParseError(path + ": object needs id, class, bbox");
        }
        sg.objects.push_back({o.at("id").get<int>(), o.at("class").get<std::string>(),
                              bbox_from_json(o.at("bbox"), path + ".bbox")});
    }
    i = 0;
    for (const auto& a : j.at("attributes")) {
        const std::string path = "$.attributes[" + std::to_string(i++) + "]";
        if (!a.contains("id") || !a.contains("text") || !a.contains("bbox") ||
            !a.contains("owner")) {
            throw ParseError(path + ": attribute needs id, text, bbox, owner");
        }
        sg.attributes.push_back({a.at("id").get<int>(), a.at("text").get<std::string>(),
                                 bbox_from_json(a.at("bbox"), path + ".bbox"),
                                 a.at("owner").get<int>()});
    }
    i = 0;
    for (const auto& e : j.at("edges")) {
        const std::string path = "$.edges[" + std::to_string(i++) + "]";
        if (!e.is_array() || e.size() != 3) {
            throw ParseError(path + ": edge must be [src, label, dst]");
        }
        sg.edges.push_back(
            {e[0].get<int>(), relation_from_label(e[1].get<int>()), e[2].get<int>()});
    }
    return sg;
}

inline std::string scene_graph_to_string(const SceneGraph& sg) {
    return scene_graph_to_json(sg).dump();
}

inline SceneGraph scene_graph_from_string(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("scene graph JSON: ") + e.what());
    }
    return scene_graph_from_json(j);
}

inline bool operator==(const SceneGraph& a, const SceneGraph& b) {
    auto obj_eq = [](const ObjectNode& x, const ObjectNode& y) {
        return x.id == y.id && x.class_label == y.class_label && x.box == y.box;
    };
    auto attr_eq = [](const AttributeNode& x, const AttributeNode& y) {
        return x.id == y.id && x.ocr_text == y.ocr_text && x.box == y.box &&
               x.owner_object_id == y.owner_object_id;
    };
    if (a.objects.size() != b.objects.size() || a.attributes.size() != b.attributes.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
        if (!obj_eq(a.objects[i], b.objects[i])) return false;
    }
    for (std::size_t i = 0; i < a.attributes.size(); ++i) {
        if (!attr_eq(a.attributes[i], b.attributes[i])) return false;
    }
    std::vector<Edge> ea = a.edges, eb = b.edges;
    std::sort(ea.begin(), ea.end());
    std::sort(eb.begin(), eb.end());
    return ea == eb;
}

}  // namespace scenegate
