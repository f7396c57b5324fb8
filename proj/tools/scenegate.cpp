// scenegate: synthetic text-VQA pipeline driver.
//
// Subcommands: gen-data, scene-graph, train, eval, attn-dump, grad-check.
// Failures print one machine-parsable line: "error: <category>: <message>".

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "scenegate/config.hpp"
#include "scenegate/data.hpp"
#include "scenegate/gradcheck_suite.hpp"
#include "scenegate/metrics.hpp"
#include "scenegate/model.hpp"
#include "scenegate/scene_graph.hpp"
#include "scenegate/scene_graph_bruteforce.hpp"
#include "scenegate/tensor_json.hpp"
#include "scenegate/training.hpp"

namespace {

using namespace scenegate;

// Common config-surface flags; their set values become flag overrides.
struct ConfigFlags {
    std::string config_path;
    std::string preset;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--preset", preset, "preset name: best, table1 or toy");
        cmd->add_option("--seed", seed, "run seed");
    }

    RunConfig resolve(nlohmann::json extra_overrides = nlohmann::json::object()) const {
        if (seed.has_value()) extra_overrides["seed"] = *seed;
        return parse_config(config_path, preset, extra_overrides);
    }
};

void write_json_or_stdout(const nlohmann::json& j, const std::string& path) {
    if (path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
}

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    return j;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// --- gen-data ---------------------------------------------------------------

int cmd_gen_data(std::size_t n, std::uint64_t seed, const std::string& out_path) {
    if (out_path.empty()) throw ConfigError("gen-data requires --out");
    const std::vector<SceneInstance> dataset = generate_dataset(seed, n);
    save_dataset(dataset, out_path);
    log_info("wrote " + std::to_string(dataset.size()) + " scenes to " + out_path);
    return 0;
}

// --- scene-graph --------------------------------------------------------------

SceneGraph build_from_scene(const SceneInstance& scene, bool verify) {
    std::vector<SceneObjectInput> objects;
    for (const auto& o : scene.objects) objects.push_back({o.class_label, o.box});
    std::vector<SceneOcrInput> ocrs;
    for (const auto& o : scene.ocr_items) ocrs.push_back({o.text, o.box});
    SceneGraph sg = build_scene_graph(objects, ocrs);
    if (verify) {
        const SceneGraph ref = brute_force::build_scene_graph_ref(objects, ocrs);
        if (!(sg == ref)) {
            throw ContractError("builder/brute-force mismatch on scene '" + scene.scene_id + "'");
        }
    }
    return sg;
}

int cmd_scene_graph(const std::string& in_path, const std::string& out_path, bool verify) {
    if (in_path.empty()) throw ConfigError("scene-graph requires --in");
    if (ends_with(in_path, ".jsonl")) {
        const std::vector<SceneInstance> scenes = load_dataset(in_path);
        std::ofstream out;
        if (!out_path.empty()) {
            out.open(out_path);
            if (!out) throw DataError("cannot open '" + out_path + "' for writing");
        }
        for (const SceneInstance& scene : scenes) {
            const SceneGraph sg = build_from_scene(scene, verify);
            if (out.is_open()) out << scene_graph_to_string(sg) << "\n";
        }
        log_info("built " + std::to_string(scenes.size()) + " scene graphs" +
                 (verify ? " (brute-force verified)" : ""));
    } else {
        const SceneInstance scene = scene_from_json(load_json_file(in_path));
        const SceneGraph sg = build_from_scene(scene, verify);
        write_json_or_stdout(scene_graph_to_json(sg), out_path);
    }
    return 0;
}

// --- train --------------------------------------------------------------------

int cmd_train(const ConfigFlags& flags, const std::string& data_path,
              const std::string& csv_path, const std::string& ckpt_path,
              std::optional<std::size_t> steps_override) {
    nlohmann::json overrides = nlohmann::json::object();
    if (!data_path.empty()) overrides["train_data"] = data_path;
    if (steps_override.has_value()) overrides["steps"] = *steps_override;
    RunConfig cfg = flags.resolve(overrides);
    if (cfg.train_data.empty()) throw ConfigError("train requires --data or train_data");

    const std::vector<SceneInstance> train_scenes = load_dataset(cfg.train_data);
    if (train_scenes.empty()) throw DataError("training set is empty");
    std::vector<SceneInstance> val_scenes;
    if (!cfg.val_data.empty()) val_scenes = load_dataset(cfg.val_data);

    const Vocabulary vocab = build_vocab(train_scenes);
    SceneGateModel model = build_model(cfg, vocab);

    std::vector<ModelInput> train_inputs;
    std::vector<std::string> train_golds;
    for (const auto& s : train_scenes) {
        train_inputs.push_back(featurize(s, cfg.model, vocab));
        train_golds.push_back(joined_answer(s));
    }
    std::vector<ModelInput> val_inputs;
    std::vector<std::string> val_golds;
    for (const auto& s : val_scenes) {
        val_inputs.push_back(featurize(s, cfg.model, vocab));
        val_golds.push_back(joined_answer(s));
    }

    Trainer trainer(model, cfg.train);
    const TrainOutcome outcome = trainer.run(train_inputs, train_golds, val_inputs, val_golds,
                                             csv_path, ckpt_path, run_config_to_json(cfg));
    log_info("final loss " + Trainer::format_double(outcome.final_loss) + ", train accuracy " +
             Trainer::format_double(outcome.train_report.accuracy));
    return 0;
}

// --- eval ---------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& report_path) {
    if (ckpt_path.empty() || data_path.empty()) {
        throw ConfigError("eval requires --checkpoint and --data");
    }
    const CheckpointData ckpt = load_checkpoint(ckpt_path);
    const RunConfig cfg = run_config_from_json(ckpt.config);
    const Vocabulary vocab(ckpt.vocab_words);
    SceneGateModel model = build_model(cfg, vocab);
    model.load_weights(ckpt.weights);

    const std::vector<SceneInstance> scenes = load_dataset(data_path);
    std::vector<ModelInput> inputs;
    std::vector<std::string> golds;
    for (const auto& s : scenes) {
        inputs.push_back(featurize(s, cfg.model, vocab));
        golds.push_back(joined_answer(s));
    }
    const EvalReport report = evaluate_model(model, inputs, golds);
    write_json_or_stdout(eval_report_to_json(report), report_path);
    return 0;
}

// --- attn-dump ------------------------------------------------------------------

int cmd_attn_dump(const ConfigFlags& flags, const std::string& in_path,
                  const std::string& ckpt_path, const std::string& out_path,
                  const std::string& layer_filter, std::optional<std::size_t> head_filter) {
    if (in_path.empty()) throw ConfigError("attn-dump requires --in");
    const SceneInstance scene = scene_from_json(load_json_file(in_path));
    if (scene.question.empty()) throw DataError("attn-dump scene needs a question");

    RunConfig cfg;
    std::optional<CheckpointData> ckpt;
    if (!ckpt_path.empty()) {
        ckpt = load_checkpoint(ckpt_path);
        cfg = run_config_from_json(ckpt->config);
    } else {
        cfg = flags.resolve();
    }
    const Vocabulary vocab =
        ckpt.has_value() ? Vocabulary(ckpt->vocab_words) : build_vocab({scene});
    SceneGateModel model = build_model(cfg, vocab);
    if (ckpt.has_value()) model.load_weights(ckpt->weights);

    const ModelInput input = featurize(scene, cfg.model, vocab);
    AttnRecorder recorder;
    Tape tape;
    tape.set_recording(false);
    model.forward(tape, input, {}, nullptr, &recorder);

    nlohmann::json records = nlohmann::json::array();
    for (const AttnRecord& r : recorder.records) {
        if (!layer_filter.empty() && r.layer != layer_filter) continue;
        if (head_filter.has_value() && r.head != *head_filter) continue;
        records.push_back({{"layer", r.layer},
                           {"head", r.head},
                           {"seg_q", r.seg_q},
                           {"seg_k", r.seg_k},
                           {"weights", tensor_to_json({r.rows, r.cols}, r.weights)}});
    }
    write_json_or_stdout({{"scene_id", scene.scene_id}, {"records", records}}, out_path);
    return 0;
}

// --- grad-check -----------------------------------------------------------------

int cmd_grad_check(const ConfigFlags& flags, const std::string& out_path) {
    const RunConfig cfg = flags.resolve();
    constexpr double kThreshold = 1e-4;
    constexpr double kStep = 1e-3;

    std::vector<GradCheckResult> all = gradcheck::run_op_checks(cfg.seed, kStep);
    const std::vector<GradCheckResult> model_checks =
        gradcheck::run_model_checks(cfg, cfg.seed, 6, kStep);
    all.insert(all.end(), model_checks.begin(), model_checks.end());

    double worst = 0.0;
    for (const auto& r : all) {
        std::printf("%-28s max_rel_err %.3e\n", r.name.c_str(), r.max_rel_err);
        worst = std::max(worst, r.max_rel_err);
    }
    const bool pass = worst < kThreshold;
    std::printf("grad-check: %zu checks, worst %.3e, threshold %.0e -> %s\n", all.size(), worst,
                kThreshold, pass ? "pass" : "FAIL");
    if (!out_path.empty()) {
        nlohmann::json checks = nlohmann::json::array();
        for (const auto& r : all) {
            checks.push_back({{"name", r.name}, {"max_rel_err", r.max_rel_err}});
        }
        write_json_or_stdout({{"checks", checks},
                              {"max_rel_err", worst},
                              {"threshold", kThreshold},
                              {"pass", pass}},
                             out_path);
    }
    return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scenegate: scene-graph attention text-VQA at desk scale"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (JSON lines)");
    std::size_t gen_n = 500;
    std::uint64_t gen_seed = 7;
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of scenes");
    gen->add_option("--seed", gen_seed, "base seed");
    gen->add_option("--out", gen_out, "output .jsonl path")->required();

    // scene-graph
    auto* sgc = app.add_subcommand("scene-graph", "build a scene graph from a scene JSON");
    std::string sg_in, sg_out;
    bool sg_verify = false;
    sgc->add_option("--in", sg_in, "scene JSON (or .jsonl dataset)")->required();
    sgc->add_option("--out", sg_out, "output path (stdout if omitted)");
    sgc->add_flag("--verify-bruteforce", sg_verify,
                  "cross-check against the independent brute-force builder");

    // train
    auto* tr = app.add_subcommand("train", "train on a dataset; writes metrics CSV + checkpoints");
    ConfigFlags tr_flags;
    tr_flags.attach(tr);
    std::string tr_data, tr_csv, tr_ckpt;
    std::optional<std::size_t> tr_steps;
    tr->add_option("--data", tr_data, "training .jsonl (overrides config train_data)");
    tr->add_option("--out", tr_csv, "metrics CSV path");
    tr->add_option("--checkpoint", tr_ckpt, "checkpoint output path");
    tr->add_option("--n", tr_steps, "train steps (overrides config)");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_report;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "evaluation .jsonl")->required();
    ev->add_option("--report", ev_report, "report JSON path (stdout if omitted)");

    // attn-dump
    auto* ad = app.add_subcommand("attn-dump", "dump per-layer per-head attention matrices");
    ConfigFlags ad_flags;
    ad_flags.attach(ad);
    std::string ad_in, ad_ckpt, ad_out, ad_layer;
    std::optional<std::size_t> ad_head;
    ad->add_option("--in", ad_in, "scene JSON")->required();
    ad->add_option("--checkpoint", ad_ckpt, "checkpoint (fresh init if omitted)");
    ad->add_option("--out", ad_out, "output JSON path (stdout if omitted)");
    ad->add_option("--layer", ad_layer, "only this layer name (e.g. sra.0.attn)");
    ad->add_option("--head", ad_head, "only this head index");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient verification");
    ConfigFlags gc_flags;
    gc_flags.attach(gc);
    std::string gc_out;
    gc->add_option("--out", gc_out, "JSON report path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gen_n, gen_seed, gen_out);
        if (sgc->parsed()) return cmd_scene_graph(sg_in, sg_out, sg_verify);
        if (tr->parsed()) return cmd_train(tr_flags, tr_data, tr_csv, tr_ckpt, tr_steps);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_report);
        if (ad->parsed()) return cmd_attn_dump(ad_flags, ad_in, ad_ckpt, ad_out, ad_layer, ad_head);
        if (gc->parsed()) return cmd_grad_check(gc_flags, gc_out);
    } catch (const scenegate::Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.category(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
