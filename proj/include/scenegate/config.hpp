#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenegate/common.hpp"
#include "scenegate/model.hpp"
#include "scenegate/training.hpp"

namespace scenegate {

// Fully resolved run configuration: model + training knobs, paths and seed.
// Precedence when parsing: preset defaults < config file < flag overrides.
struct RunConfig {
    std::string preset = "best";
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    std::string train_data;
    std::string val_data;
};

namespace detail {

struct ConfigKey {
    std::string name;
    std::function<nlohmann::json(const RunConfig&)> get;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
};

inline std::size_t as_uint(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("config key '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

inline double as_double(const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
    return v.get<double>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& key) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
    return v.get<bool>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& key) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
    return v.get<std::string>();
}

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        auto uint_key = [&k](const std::string& name,
                             std::function<std::size_t&(RunConfig&)> ref) {
            k.push_back({name,
                         [ref](const RunConfig& c) {
                             return nlohmann::json(ref(const_cast<RunConfig&>(c)));
                         },
                         [ref, name](RunConfig& c, const nlohmann::json& v) {
                             ref(c) = as_uint(v, name);
                         }});
        };
        auto double_key = [&k](const std::string& name,
                               std::function<double&(RunConfig&)> ref) {
            k.push_back({name,
                         [ref](const RunConfig& c) {
                             return nlohmann::json(ref(const_cast<RunConfig&>(c)));
                         },
                         [ref, name](RunConfig& c, const nlohmann::json& v) {
                             ref(c) = as_double(v, name);
                         }});
        };
        auto bool_key = [&k](const std::string& name, std::function<bool&(RunConfig&)> ref) {
            k.push_back({name,
                         [ref](const RunConfig& c) {
                             return nlohmann::json(ref(const_cast<RunConfig&>(c)));
                         },
                         [ref, name](RunConfig& c, const nlohmann::json& v) {
                             ref(c) = as_bool(v, name);
                         }});
        };
        auto string_key = [&k](const std::string& name,
                               std::function<std::string&(RunConfig&)> ref) {
            k.push_back({name,
                         [ref](const RunConfig& c) {
                             return nlohmann::json(ref(const_cast<RunConfig&>(c)));
                         },
                         [ref, name](RunConfig& c, const nlohmann::json& v) {
                             ref(c) = as_string(v, name);
                         }});
        };

        k.push_back({"seed",
                     [](const RunConfig& c) { return nlohmann::json(c.seed); },
                     [](RunConfig& c, const nlohmann::json& v) {
                         c.seed = static_cast<std::uint64_t>(as_uint(v, "seed"));
                         c.train.seed = c.seed;
                     }});

        uint_key("d_model", [](RunConfig& c) -> std::size_t& { return c.model.stack.d_model; });
        uint_key("n_mmte", [](RunConfig& c) -> std::size_t& { return c.model.stack.n_mmte; });
        uint_key("n_pra", [](RunConfig& c) -> std::size_t& { return c.model.stack.n_pra; });
        uint_key("n_sra", [](RunConfig& c) -> std::size_t& { return c.model.stack.n_sra; });
        uint_key("heads_sa_ga_mmte",
                 [](RunConfig& c) -> std::size_t& { return c.model.stack.heads_sa_ga_mmte; });
        uint_key("heads_sra", [](RunConfig& c) -> std::size_t& { return c.model.stack.heads_sra; });
        uint_key("heads_pra", [](RunConfig& c) -> std::size_t& { return c.model.stack.heads_pra; });
        uint_key("ffn_mult", [](RunConfig& c) -> std::size_t& { return c.model.stack.ffn_mult; });
        double_key("dropout", [](RunConfig& c) -> double& { return c.model.stack.dropout; });
        double_key("distance_threshold",
                   [](RunConfig& c) -> double& { return c.model.stack.distance_threshold; });
        uint_key("sra_context",
                 [](RunConfig& c) -> std::size_t& { return c.model.stack.sra_context; });
        uint_key("pra_context",
                 [](RunConfig& c) -> std::size_t& { return c.model.stack.pra_context; });
        uint_key("max_question_len",
                 [](RunConfig& c) -> std::size_t& { return c.model.max_question_len; });
        uint_key("max_objects", [](RunConfig& c) -> std::size_t& { return c.model.max_objects; });
        uint_key("max_ocr", [](RunConfig& c) -> std::size_t& { return c.model.max_ocr; });
        uint_key("obj_feature_dim",
                 [](RunConfig& c) -> std::size_t& { return c.model.obj_feature_dim; });
        uint_key("fasttext_dim", [](RunConfig& c) -> std::size_t& { return c.model.fasttext_dim; });
        uint_key("phoc_dim", [](RunConfig& c) -> std::size_t& { return c.model.phoc_dim; });
        uint_key("ocr_enriched_dim",
                 [](RunConfig& c) -> std::size_t& { return c.model.ocr_enriched_dim; });
        uint_key("sg_node_dim", [](RunConfig& c) -> std::size_t& { return c.model.sg_node_dim; });
        uint_key("decoding_steps",
                 [](RunConfig& c) -> std::size_t& { return c.model.decoding_steps; });
        bool_key("disable_sra_mask",
                 [](RunConfig& c) -> bool& { return c.model.disable_sra_mask; });

        double_key("learning_rate",
                   [](RunConfig& c) -> double& { return c.train.learning_rate; });
        uint_key("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
        uint_key("steps", [](RunConfig& c) -> std::size_t& { return c.train.steps; });
        double_key("max_grad_norm",
                   [](RunConfig& c) -> double& { return c.train.max_grad_norm; });
        double_key("warmup_factor",
                   [](RunConfig& c) -> double& { return c.train.warmup_factor; });
        uint_key("warmup_iterations",
                 [](RunConfig& c) -> std::size_t& { return c.train.warmup_iterations; });
        double_key("lr_decay_rate",
                   [](RunConfig& c) -> double& { return c.train.lr_decay_rate; });
        k.push_back({"lr_decay_steps",
                     [](const RunConfig& c) { return nlohmann::json(c.train.lr_decay_steps); },
                     [](RunConfig& c, const nlohmann::json& v) {
                         if (!v.is_array()) {
                             throw ConfigError("config key 'lr_decay_steps' must be an array");
                         }
                         c.train.lr_decay_steps.clear();
                         for (const auto& e : v) {
                             c.train.lr_decay_steps.push_back(as_uint(e, "lr_decay_steps"));
                         }
                     }});
        uint_key("eval_every", [](RunConfig& c) -> std::size_t& { return c.train.eval_every; });
        uint_key("checkpoint_every",
                 [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_every; });
        string_key("train_data", [](RunConfig& c) -> std::string& { return c.train_data; });
        string_key("val_data", [](RunConfig& c) -> std::string& { return c.val_data; });
        return k;
    }();
    return keys;
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["preset"] = cfg.preset;
    for (const auto& key : detail::config_keys()) j[key.name] = key.get(cfg);
    return j;
}

// Hyperparameter defaults straight from the reference configuration.
inline RunConfig preset_table1() {
    RunConfig c;
    c.preset = "table1";
    c.seed = 0;
    c.model.stack.d_model = 768;
    c.model.stack.n_mmte = 2;
    c.model.stack.n_pra = 2;
    c.model.stack.n_sra = 2;
    c.model.stack.heads_sa_ga_mmte = 8;
    c.model.stack.heads_sra = 12;
    c.model.stack.heads_pra = 12;
    c.model.stack.ffn_mult = 4;
    c.model.stack.dropout = 0.1;
    c.model.stack.distance_threshold = 0.5;
    c.model.stack.sra_context = 3;
    c.model.stack.pra_context = 3;
    c.model.max_question_len = 20;
    c.model.max_objects = 100;
    c.model.max_ocr = 50;
    c.model.obj_feature_dim = 2048;
    c.model.fasttext_dim = 300;
    c.model.phoc_dim = 604;
    c.model.ocr_enriched_dim = 2956;
    c.model.sg_node_dim = 300;
    c.model.decoding_steps = 12;
    c.train.learning_rate = 1e-4;
    c.train.batch_size = 8;
    c.train.steps = 1000;
    c.train.max_grad_norm = 0.25;
    c.train.warmup_factor = 0.2;
    c.train.warmup_iterations = 1000;
    c.train.lr_decay_steps = {14000, 19000};
    c.train.lr_decay_rate = 0.1;
    c.train.eval_every = 50;
    c.train.checkpoint_every = 100;
    c.train.seed = 0;
    return c;
}

// Best layer combination: 1 MMTE / 2 PRA / 1 SRA.
inline RunConfig preset_best() {
    RunConfig c = preset_table1();
    c.preset = "best";
    c.model.stack.n_mmte = 1;
    c.model.stack.n_pra = 2;
    c.model.stack.n_sra = 1;
    return c;
}

// Desk-scale preset for tests and the learning demo: d_model 32, shrunken
// feature providers, SRA/PRA fold to 4 heads (the relation windows map onto
// heads modularly), faster optimizer schedule.
inline RunConfig preset_toy() {
    RunConfig c = preset_best();
    c.preset = "toy";
    c.model.stack.d_model = 32;
    c.model.stack.heads_sa_ga_mmte = 8;
    c.model.stack.heads_sra = 4;
    c.model.stack.heads_pra = 4;
    c.model.stack.ffn_mult = 4;
    c.model.obj_feature_dim = 64;
    c.model.fasttext_dim = 32;
    c.model.phoc_dim = 32;
    c.model.ocr_enriched_dim = 64 + 32 + 32 + 4;
    c.model.sg_node_dim = 32;
    c.model.stack.dropout = 0.0;
    c.train.learning_rate = 2e-3;
    c.train.steps = 300;
    c.train.warmup_factor = 0.2;
    c.train.warmup_iterations = 30;
    c.train.lr_decay_steps = {};
    c.train.eval_every = 50;
    return c;
}

inline RunConfig preset_by_name(const std::string& name) {
    if (name == "best") return preset_best();
    if (name == "table1") return preset_table1();
    if (name == "toy") return preset_toy();
    throw ConfigError("unknown preset '" + name + "' (expected best, table1 or toy)");
}

// Applies keys from a JSON object; unknown keys and type mismatches are
// config errors naming the key.
inline void apply_config_json(RunConfig& cfg, const nlohmann::json& j, bool allow_preset_key) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    const auto& keys = detail::config_keys();
    for (const auto& [name, value] : j.items()) {
        if (name == "preset") {
            if (!allow_preset_key) {
                throw ConfigError("config key 'preset' cannot be overridden here");
            }
            continue;  // consumed by the caller before defaults were applied
        }
        bool found = false;
        for (const auto& key : keys) {
            if (key.name == name) {
                key.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unknown config key '" + name + "'");
    }
}

// Resolution order: preset defaults, then config file values, then flag
// overrides. The resolved config is echoed to the run log.
inline RunConfig parse_config(const std::string& config_path, const std::string& preset_flag,
                              const nlohmann::json& flag_overrides) {
    nlohmann::json file_json = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (!text.empty()) {
            try {
                file_json = nlohmann::json::parse(text);
            } catch (const nlohmann::json::parse_error& e) {
                throw ConfigError("config file '" + config_path + "': " + e.what());
            }
        }
        if (!file_json.is_object()) {
            throw ConfigError("config file '" + config_path + "' must hold a JSON object");
        }
    }

    std::string preset = "best";
    if (file_json.contains("preset")) {
        preset = detail::as_string(file_json.at("preset"), "preset");
    }
    if (!preset_flag.empty()) preset = preset_flag;

    RunConfig cfg = preset_by_name(preset);
    apply_config_json(cfg, file_json, true);
    apply_config_json(cfg, flag_overrides, true);
    cfg.train.seed = cfg.seed;
    cfg.model.validate();
    cfg.train.validate();
    log_info("resolved config: " + run_config_to_json(cfg).dump());
    return cfg;
}

// Rebuild a RunConfig from its serialized form (e.g. the config block of a
// checkpoint).
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    std::string preset = "best";
    if (j.is_object() && j.contains("preset")) {
        preset = detail::as_string(j.at("preset"), "preset");
    }
    RunConfig cfg = preset_by_name(preset);
    apply_config_json(cfg, j, true);
    cfg.train.seed = cfg.seed;
    cfg.model.validate();
    cfg.train.validate();
    return cfg;
}

inline SceneGateModel build_model(const RunConfig& cfg, const Vocabulary& vocab) {
    return SceneGateModel(cfg.model, vocab, cfg.seed);
}

}  // namespace scenegate
