#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "scenegate/common.hpp"
#include "scenegate/geometry.hpp"
#include "scenegate/rng.hpp"
#include "scenegate/scene_graph.hpp"

namespace scenegate {

// Deterministic stand-in for a pretrained feature extractor: a unit-norm
// vector that depends only on (namespace, text, dim).
inline std::vector<double> pseudo_features(const std::string& text, std::size_t dim,
                                           const std::string& ns) {
    if (dim == 0) throw ContractError("pseudo_features dim must be positive");
    CounterRng rng(text_key(ns, text));
    std::vector<double> v(dim);
    double norm_sq = 0.0;
    for (double& x : v) {
        x = rng.normal();
        norm_sq += x * x;
    }
    if (norm_sq < 1e-24) {
        v[0] = 1.0;
        norm_sq = 1.0;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& x : v) x *= inv;
    return v;
}

namespace pools {

inline const std::vector<std::string>& object_classes() {
    static const std::vector<std::string> classes = {
        "bottle",   "sign",     "book",     "car",      "truck",   "bus",      "shirt",
        "jersey",   "box",      "can",      "poster",   "billboard", "screen", "phone",
        "clock",    "cup",      "jar",      "bag",      "train",   "plane",    "boat",
        "building", "door",     "window",   "label",    "banner",  "card",     "ticket",
        "menu",     "plate",    "helmet",   "cap",      "keyboard", "monitor", "package",
        "magazine", "newspaper", "envelope", "coin",     "badge"};
    return classes;
}

inline const std::vector<std::string>& ocr_words() {
    static const std::vector<std::string> words = {
        "coors",    "light",   "start",    "press",   "stop",    "exit",     "open",
        "closed",   "sale",    "free",     "fresh",   "cold",    "hot",      "new",
        "original", "premium", "classic",  "deluxe",  "super",   "mega",     "ultra",
        "turbo",    "speed",   "racing",   "sport",   "pro",     "max",      "mini",
        "grand",    "royal",   "golden",   "silver",  "north",   "south",    "east",
        "west",     "main",    "central",  "park",    "street",  "avenue",   "road",
        "station",  "airport", "hotel",    "cafe",    "diner",   "pizza",    "burger",
        "taco",     "soda",    "cola",     "juice",   "water",   "milk",     "coffee",
        "tea",      "beer",    "wine",     "express", "local",   "daily",    "weekly",
        "news",     "times",   "post",     "herald",  "tribune", "gazette",  "journal",
        "one",      "two",     "three",    "four",    "five",    "six",      "seven",
        "eight",    "nine",    "zero",     "alpha",   "bravo",   "charlie",  "delta",
        "echo",     "foxtrot", "golf",     "harbor",  "india",   "juliet",   "kilo",
        "lima",     "mike",    "november", "oscar",   "papa",    "quebec",   "romeo",
        "sierra",   "tango",   "uniform",  "victor",  "whiskey", "xray",     "yankee",
        "zulu",     "red",     "blue",     "green",   "yellow",  "orange",   "purple",
        "black",    "white",   "brown",    "pink",    "gray",    "cyan",     "magenta",
        "ten"};
    return words;
}

}  // namespace pools

struct ScenePlacedObject {
    std::string class_label;
    BoundingBox box;
};

struct ScenePlacedOcr {
    std::string text;
    BoundingBox box;
};

// One synthetic example: a laid-out scene, a templated question about the
// text written on one uniquely-classed object, and that object's OCR tokens
// in left-to-right order as the gold answer.
struct SceneInstance {
    std::string scene_id;
    std::vector<ScenePlacedObject> objects;
    std::vector<ScenePlacedOcr> ocr_items;
    std::vector<std::string> question;
    std::vector<std::string> gold_answer;
};

namespace detail {

inline BoundingBox sample_object_box(CounterRng& rng) {
    const double w = rng.uniform(0.10, 0.45);
    const double h = rng.uniform(0.10, 0.45);
    const double x0 = rng.uniform(0.0, 1.0 - w);
    const double y0 = rng.uniform(0.0, 1.0 - h);
    return BoundingBox(x0, y0, x0 + w, y0 + h);
}

// Places a box strictly inside the host, within the horizontal fraction band
// [x_lo, x_hi). Successive tokens of one host are handed disjoint bands so
// they line up left to right like printed text.
inline BoundingBox sample_box_strictly_inside(CounterRng& rng, const BoundingBox& host,
                                              double x_lo, double x_hi) {
    const double span = x_hi - x_lo;
    const double fw = rng.uniform(0.55, 0.92) * span;
    const double fh = rng.uniform(0.15, 0.45);
    const double fx = x_lo + rng.uniform(0.04, 0.96 - fw / span) * span;
    const double fy = rng.uniform(0.02, 0.98 - fh);
    return BoundingBox(host.x_min + fx * host.width(), host.y_min + fy * host.height(),
                       host.x_min + (fx + fw) * host.width(),
                       host.y_min + (fy + fh) * host.height());
}

}  // namespace detail

// Deterministic scene layout for a seed. Every OCR box is strictly inside a
// uniformly chosen host object, and the layout is resampled until IoU
// attribution agrees with the hosting choice for every OCR (so graph
// ownership and question semantics never contradict). The question targets an
// object that has OCR and whose class appears exactly once in the scene.
inline SceneInstance generate_scene(std::uint64_t seed, std::size_t n_obj, std::size_t n_ocr) {
    if (n_obj < 2 || n_obj > 8) {
        throw ContractError("generate_scene: n_obj must be in [2, 8], got " +
                            std::to_string(n_obj));
    }
    if (n_ocr < 1 || n_ocr > 6) {
        throw ContractError("generate_scene: n_ocr must be in [1, 6], got " +
                            std::to_string(n_ocr));
    }
    CounterRng rng(derive_key(seed, "scene"));
    const auto& classes = pools::object_classes();
    const auto& words = pools::ocr_words();

    constexpr int kMaxAttempts = 128;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        SceneInstance scene;
        scene.scene_id = "s" + std::to_string(seed);
        for (std::size_t i = 0; i < n_obj; ++i) {
            scene.objects.push_back(
                {classes[rng.uniform_index(classes.size())], detail::sample_object_box(rng)});
        }
        std::vector<std::size_t> hosts(n_ocr);
        std::vector<std::size_t> word_ids;
        for (std::size_t k = 0; k < n_ocr; ++k) {
            // distinct OCR strings within one scene
            std::size_t w = rng.uniform_index(words.size());
            while (std::find(word_ids.begin(), word_ids.end(), w) != word_ids.end()) {
                w = rng.uniform_index(words.size());
            }
            word_ids.push_back(w);
            hosts[k] = rng.uniform_index(n_obj);
        }
        // Tokens sharing a host occupy disjoint left-to-right bands, in draw
        // order, so multi-token text reads like a line.
        std::vector<std::size_t> host_count(n_obj, 0), host_seen(n_obj, 0);
        for (std::size_t h : hosts) ++host_count[h];
        for (std::size_t k = 0; k < n_ocr; ++k) {
            const std::size_t slot = host_seen[hosts[k]]++;
            const double band = 1.0 / static_cast<double>(host_count[hosts[k]]);
            scene.ocr_items.push_back(
                {words[word_ids[k]],
                 detail::sample_box_strictly_inside(rng, scene.objects[hosts[k]].box,
                                                    slot * band, (slot + 1) * band)});
        }

        {
            std::vector<BoundingBox> obj_boxes;
            for (const auto& o : scene.objects) obj_boxes.push_back(o.box);
            std::vector<BoundingBox> ocr_boxes;
            for (const auto& o : scene.ocr_items) ocr_boxes.push_back(o.box);
            const std::vector<std::size_t> owners = assign_ocr_attributes(obj_boxes, ocr_boxes);
            bool consistent = true;
            for (std::size_t k = 0; k < n_ocr; ++k) {
                if (owners[k] != hosts[k]) consistent = false;
            }
            if (!consistent) continue;
        }

        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < n_obj; ++i) {
            const bool has_ocr = std::find(hosts.begin(), hosts.end(), i) != hosts.end();
            if (!has_ocr) continue;
            std::size_t same_class = 0;
            for (const auto& o : scene.objects) {
                if (o.class_label == scene.objects[i].class_label) ++same_class;
            }
            if (same_class == 1) candidates.push_back(i);
        }
        if (candidates.empty()) continue;
        const std::size_t target = candidates[rng.uniform_index(candidates.size())];

        scene.question = {"what", "is", "written", "on",
                          "the",  scene.objects[target].class_label, "?"};
        std::vector<std::size_t> owned;
        for (std::size_t k = 0; k < n_ocr; ++k) {
            if (hosts[k] == target) owned.push_back(k);
        }
        std::stable_sort(owned.begin(), owned.end(), [&](std::size_t a, std::size_t b) {
            return scene.ocr_items[a].box.center_x() < scene.ocr_items[b].box.center_x();
        });
        for (std::size_t k : owned) scene.gold_answer.push_back(scene.ocr_items[k].text);
        return scene;
    }
    throw GenerationError("generate_scene: no valid question target after " +
                          std::to_string(kMaxAttempts) + " attempts (seed " +
                          std::to_string(seed) + ")");
}

// All question variants a layout supports: one instance per object that owns
// at least one OCR token (by IoU attribution) and whose class is unique in
// the scene. Mirrors real text-VQA data, where one image carries several
// questions; it also makes the question indispensable for telling instances
// apart.
inline std::vector<SceneInstance> expand_questions(const SceneInstance& scene) {
    std::vector<BoundingBox> obj_boxes;
    for (const auto& o : scene.objects) obj_boxes.push_back(o.box);
    std::vector<BoundingBox> ocr_boxes;
    for (const auto& o : scene.ocr_items) ocr_boxes.push_back(o.box);
    const std::vector<std::size_t> owners = assign_ocr_attributes(obj_boxes, ocr_boxes);

    std::vector<SceneInstance> out;
    for (std::size_t target = 0; target < scene.objects.size(); ++target) {
        std::size_t same_class = 0;
        for (const auto& o : scene.objects) {
            if (o.class_label == scene.objects[target].class_label) ++same_class;
        }
        if (same_class != 1) continue;
        std::vector<std::size_t> owned;
        for (std::size_t k = 0; k < scene.ocr_items.size(); ++k) {
            if (owners[k] == target) owned.push_back(k);
        }
        if (owned.empty()) continue;
        std::stable_sort(owned.begin(), owned.end(), [&](std::size_t a, std::size_t b) {
            return scene.ocr_items[a].box.center_x() < scene.ocr_items[b].box.center_x();
        });
        SceneInstance variant = scene;
        variant.question = {"what", "is",  "written",
                            "on",   "the", scene.objects[target].class_label,
                            "?"};
        variant.gold_answer.clear();
        for (std::size_t k : owned) variant.gold_answer.push_back(scene.ocr_items[k].text);
        out.push_back(std::move(variant));
    }
    return out;
}

// n question instances over consecutive layout seeds; every valid question of
// a layout is emitted before moving to the next layout. Per-layout object and
// OCR counts come from a derived stream so the mix is stable for a given base
// seed.
inline std::vector<SceneInstance> generate_dataset(std::uint64_t seed, std::size_t n) {
    std::vector<SceneInstance> out;
    out.reserve(n);
    std::uint64_t layout = 0;
    while (out.size() < n) {
        const std::uint64_t scene_seed = seed + layout;
        ++layout;
        CounterRng counts(derive_key(scene_seed, "counts"));
        const std::size_t n_obj = 2 + counts.uniform_index(7);
        const std::size_t n_ocr = 1 + counts.uniform_index(6);
        const SceneInstance scene = generate_scene(scene_seed, n_obj, n_ocr);
        for (SceneInstance& variant : expand_questions(scene)) {
            if (out.size() == n) break;
            char buf[64];
            std::snprintf(buf, sizeof(buf), "scene-%llu-%06llu",
                          static_cast<unsigned long long>(seed),
                          static_cast<unsigned long long>(out.size()));
            variant.scene_id = buf;
            out.push_back(std::move(variant));
        }
    }
    return out;
}

inline std::string joined_answer(const SceneInstance& scene) {
    std::string out;
    for (std::size_t i = 0; i < scene.gold_answer.size(); ++i) {
        if (i) out.push_back(' ');
        out += scene.gold_answer[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

// word <-> index bijection with fixed reserved slots.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBegin = 1;
    static constexpr int kEnd = 2;
    static constexpr int kUnk = 3;

    Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

    explicit Vocabulary(const std::vector<std::string>& words) {
        words_ = {"<pad>", "<s>", "</s>", "<unk>"};
        for (const std::string& w : words) {
            if (index_.count(w) || w == "<pad>" || w == "<s>" || w == "</s>" || w == "<unk>") {
                continue;
            }
            index_[w] = static_cast<int>(words_.size());
            words_.push_back(w);
        }
        for (int i = 0; i < 4; ++i) index_[words_[i]] = i;
    }

    std::size_t size() const { return words_.size(); }

    int index_of(const std::string& word) const {
        auto it = index_.find(word);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& word) const { return index_.count(word) > 0; }

    const std::string& word_at(int index) const {
        if (index < 0 || static_cast<std::size_t>(index) >= words_.size()) {
            throw ContractError("vocabulary index " + std::to_string(index) + " out of range");
        }
        return words_[static_cast<std::size_t>(index)];
    }

    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

// Question words plus answer words that are not OCR-copyable in their own
// scene, ordered by frequency then lexicographically.
inline Vocabulary build_vocab(const std::vector<SceneInstance>& dataset) {
    if (dataset.empty()) throw ContractError("build_vocab requires a non-empty dataset");
    std::map<std::string, std::size_t> freq;
    for (const SceneInstance& scene : dataset) {
        for (const std::string& w : scene.question) ++freq[w];
        for (const std::string& w : scene.gold_answer) {
            const bool copyable =
                std::any_of(scene.ocr_items.begin(), scene.ocr_items.end(),
                            [&](const ScenePlacedOcr& o) { return o.text == w; });
            if (!copyable) ++freq[w];
        }
    }
    std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> words;
    words.reserve(entries.size());
    for (const auto& [w, c] : entries) words.push_back(w);
    return Vocabulary(words);
}

// ---------------------------------------------------------------------------
// JSON-lines dataset I/O
// ---------------------------------------------------------------------------

inline nlohmann::json scene_to_json(const SceneInstance& scene) {
    nlohmann::json j;
    j["scene_id"] = scene.scene_id;
    j["objects"] = nlohmann::json::array();
    for (const auto& o : scene.objects) {
        j["objects"].push_back({{"class", o.class_label},
                                {"bbox", nlohmann::json::array(
                                             {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max})}});
    }
    j["ocr"] = nlohmann::json::array();
    for (const auto& o : scene.ocr_items) {
        j["ocr"].push_back({{"text", o.text},
                            {"bbox", nlohmann::json::array(
                                         {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max})}});
    }
    j["question"] = scene.question;
    j["answer"] = scene.gold_answer;
    return j;
}

inline BoundingBox scene_bbox_from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 4) throw ParseError(path + ": bbox must be [x0,y0,x1,y1]");
    try {
        return BoundingBox(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
                           j[3].get<double>());
    } catch (const ContractError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline SceneInstance scene_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("$: scene must be a JSON object");
    SceneInstance scene;
    scene.scene_id = j.value("scene_id", std::string("unknown"));
    if (!j.contains("objects") || !j.at("objects").is_array()) {
        throw ParseError("$.objects: missing or not an array");
    }
    std::size_t i = 0;
    for (const auto& o : j.at("objects")) {
        const std::string path = "$.objects[" + std::to_string(i++) + "]";
        if (!o.contains("class") || !o.contains("bbox")) {
            throw ParseError(path + ": object needs class and bbox");
        }
        scene.objects.push_back({o.at("class").get<std::string>(),
                                 scene_bbox_from_json(o.at("bbox"), path + ".bbox")});
    }
    i = 0;
    if (j.contains("ocr")) {
        for (const auto& o : j.at("ocr")) {
            const std::string path = "$.ocr[" + std::to_string(i++) + "]";
            if (!o.contains("text") || !o.contains("bbox")) {
                throw ParseError(path + ": ocr entry needs text and bbox");
            }
            scene.ocr_items.push_back({o.at("text").get<std::string>(),
                                       scene_bbox_from_json(o.at("bbox"), path + ".bbox")});
        }
    }
    if (j.contains("question")) {
        scene.question = j.at("question").get<std::vector<std::string>>();
    }
    if (j.contains("answer")) {
        scene.gold_answer = j.at("answer").get<std::vector<std::string>>();
    }
    return scene;
}

inline void save_dataset(const std::vector<SceneInstance>& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const SceneInstance& scene : dataset) {
        out << scene_to_json(scene).dump() << "\n";
    }
}

inline std::vector<SceneInstance> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path + "'");
    std::vector<SceneInstance> dataset;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            dataset.push_back(scene_from_json(j));
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return dataset;
}

inline bool operator==(const SceneInstance& a, const SceneInstance& b) {
    if (a.scene_id != b.scene_id || a.question != b.question || a.gold_answer != b.gold_answer ||
        a.objects.size() != b.objects.size() || a.ocr_items.size() != b.ocr_items.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.objects.size(); ++i) {
        if (a.objects[i].class_label != b.objects[i].class_label ||
            !(a.objects[i].box == b.objects[i].box)) {
            return false;
        }
    }
    for (std::size_t i = 0; i < a.ocr_items.size(); ++i) {
        if (a.ocr_items[i].text != b.ocr_items[i].text || !(a.ocr_items[i].box == b.ocr_items[i].box)) {
            return false;
        }
    }
    return true;
}

}  // namespace scenegate
