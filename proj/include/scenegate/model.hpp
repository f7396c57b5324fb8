#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenegate/attention.hpp"
#include "scenegate/common.hpp"
#include "scenegate/data.hpp"
#include "scenegate/scene_graph.hpp"
#include "scenegate/tensor.hpp"
#include "scenegate/tensor_json.hpp"

namespace scenegate {

// ---------------------------------------------------------------------------
// Configuration and inputs
// ---------------------------------------------------------------------------

struct ModelConfig {
    LayerStackConfig stack;
    std::size_t max_question_len = 20;
    std::size_t max_objects = 100;
    std::size_t max_ocr = 50;
    std::size_t obj_feature_dim = 2048;  // appearance dim, shared by objects and OCR
    std::size_t fasttext_dim = 300;
    std::size_t phoc_dim = 604;
    // Enriched OCR width; anything beyond the component sum is zero padding.
    std::size_t ocr_enriched_dim = 2956;
    std::size_t sg_node_dim = 300;
    std::size_t decoding_steps = 12;
    bool disable_sra_mask = false;  // ablation switch: SRA bias forced to all-zero

    std::size_t d_model() const { return stack.d_model; }
    std::size_t ocr_component_dim() const { return obj_feature_dim + fasttext_dim + phoc_dim + 4; }

    void validate() const {
        stack.validate();
        if (max_question_len == 0 || max_objects == 0 || max_ocr == 0 || decoding_steps == 0) {
            throw ConfigError("model maxima must be positive");
        }
        if (ocr_enriched_dim < ocr_component_dim()) {
            throw ConfigError("ocr_enriched_dim " + std::to_string(ocr_enriched_dim) +
                              " smaller than component sum " +
                              std::to_string(ocr_component_dim()));
        }
    }
};

struct InputObject {
    std::vector<double> appearance;
    BoundingBox box;
    std::string class_label;
};

struct InputOcr {
    std::string text;
    std::vector<double> appearance;
    std::vector<double> fasttext;
    std::vector<double> phoc;
    BoundingBox box;
};

struct ModelInput {
    std::vector<int> question_token_ids;
    std::vector<InputObject> objects;
    std::vector<InputOcr> ocr_tokens;
    SceneGraph scene_graph;
    std::vector<std::string> gold_answer;  // training only

    void validate(const ModelConfig& cfg) const {
        if (question_token_ids.empty()) throw ContractError("empty question");
        if (question_token_ids.size() > cfg.max_question_len) {
            throw ContractError("question longer than max_question_len");
        }
        if (objects.empty()) throw ContractError("model input needs at least one object");
        if (objects.size() > cfg.max_objects) throw ContractError("too many objects");
        if (ocr_tokens.size() > cfg.max_ocr) throw ContractError("too many ocr tokens");
        for (const auto& o : objects) {
            if (o.appearance.size() != cfg.obj_feature_dim) {
                throw ShapeError("object appearance dim " + std::to_string(o.appearance.size()) +
                                 " != " + std::to_string(cfg.obj_feature_dim));
            }
        }
        for (const auto& o : ocr_tokens) {
            if (o.appearance.size() != cfg.obj_feature_dim ||
                o.fasttext.size() != cfg.fasttext_dim || o.phoc.size() != cfg.phoc_dim) {
                throw ShapeError("ocr feature dims do not match config");
            }
        }
    }
};

// Geometric OCR processing order: a pure function of box coordinates and
// text, so every pipeline stage downstream of it is invariant to the order
// the OCR list arrived in.
inline std::vector<std::size_t> canonical_ocr_ids(const std::vector<BoundingBox>& boxes,
                                                  const std::vector<std::string>& texts) {
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (boxes[a].y_min != boxes[b].y_min) return boxes[a].y_min < boxes[b].y_min;
        if (boxes[a].x_min != boxes[b].x_min) return boxes[a].x_min < boxes[b].x_min;
        if (boxes[a].y_max != boxes[b].y_max) return boxes[a].y_max < boxes[b].y_max;
        if (boxes[a].x_max != boxes[b].x_max) return boxes[a].x_max < boxes[b].x_max;
        if (texts[a] != texts[b]) return texts[a] < texts[b];
        return a < b;
    });
    return order;
}

// Build a ModelInput from a synthetic scene using the deterministic feature
// providers. The scene graph is built over canonically ordered OCR tokens.
inline ModelInput featurize(const SceneInstance& scene, const ModelConfig& cfg,
                            const Vocabulary& vocab) {
    ModelInput input;
    for (std::size_t i = 0; i < scene.question.size() && i < cfg.max_question_len; ++i) {
        input.question_token_ids.push_back(vocab.index_of(scene.question[i]));
    }
    for (std::size_t i = 0; i < scene.objects.size() && i < cfg.max_objects; ++i) {
        const auto& o = scene.objects[i];
        input.objects.push_back(
            {pseudo_features(o.class_label, cfg.obj_feature_dim, "appearance"), o.box,
             o.class_label});
    }
    for (std::size_t i = 0; i < scene.ocr_items.size() && i < cfg.max_ocr; ++i) {
        const auto& o = scene.ocr_items[i];
        input.ocr_tokens.push_back({o.text,
                                    pseudo_features(o.text, cfg.obj_feature_dim, "ocr_appearance"),
                                    pseudo_features(o.text, cfg.fasttext_dim, "fasttext"),
                                    pseudo_features(o.text, cfg.phoc_dim, "phoc"), o.box});
    }
    std::vector<SceneObjectInput> sg_objects;
    for (const auto& o : input.objects) sg_objects.push_back({o.class_label, o.box});
    std::vector<BoundingBox> ocr_boxes;
    std::vector<std::string> ocr_texts;
    for (const auto& o : input.ocr_tokens) {
        ocr_boxes.push_back(o.box);
        ocr_texts.push_back(o.text);
    }
    std::vector<SceneOcrInput> sg_ocrs;
    for (std::size_t k : canonical_ocr_ids(ocr_boxes, ocr_texts)) {
        sg_ocrs.push_back({input.ocr_tokens[k].text, input.ocr_tokens[k].box});
    }
    input.scene_graph = build_scene_graph(std::move(sg_objects), std::move(sg_ocrs));
    input.gold_answer = scene.gold_answer;
    return input;
}

// ---------------------------------------------------------------------------
// Answer units
// ---------------------------------------------------------------------------

// One decoded answer token: either a fixed-vocabulary word or a copy of input
// OCR token `index`.
struct AnswerUnit {
    enum class Kind { kVocab, kOcrCopy };
    Kind kind = Kind::kVocab;
    std::size_t index = 0;

    static AnswerUnit vocab(std::size_t i) { return {Kind::kVocab, i}; }
    static AnswerUnit ocr(std::size_t n) { return {Kind::kOcrCopy, n}; }
    bool operator==(const AnswerUnit& o) const { return kind == o.kind && index == o.index; }
};

// Gold answer words mapped onto the combined output space: OCR-copyable words
// prefer their (first) OCR slot, everything else must be in the vocabulary.
// A trailing end-token unit is appended.
inline std::vector<AnswerUnit> gold_units(const ModelInput& input, const Vocabulary& vocab) {
    std::vector<AnswerUnit> units;
    for (const std::string& w : input.gold_answer) {
        std::optional<std::size_t> ocr_slot;
        for (std::size_t n = 0; n < input.ocr_tokens.size(); ++n) {
            if (input.ocr_tokens[n].text == w) {
                ocr_slot = n;
                break;
            }
        }
        if (ocr_slot.has_value()) {
            units.push_back(AnswerUnit::ocr(*ocr_slot));
        } else if (vocab.contains(w)) {
            units.push_back(AnswerUnit::vocab(static_cast<std::size_t>(vocab.index_of(w))));
        } else {
            throw DataError("gold answer word '" + w + "' is neither in the vocabulary nor among "
                            "the scene's OCR tokens");
        }
    }
    units.push_back(AnswerUnit::vocab(static_cast<std::size_t>(Vocabulary::kEnd)));
    return units;
}

// Per-step decoding state.
struct DecodeState {
    std::size_t step = 0;
    std::vector<AnswerUnit> emitted;
    std::vector<std::string> words;
};

// Greedy decoding loop over a combined vocab+OCR score layout. `step_fn`
// receives the running state and returns scores of length
// vocab.size() + ocr_texts.size(). Vocab picks emit the vocabulary word, OCR
// picks emit the input token text verbatim; decoding halts at the first
// end-token or after max_steps.
template <typename StepFn>
DecodeState greedy_decode(const StepFn& step_fn, const Vocabulary& vocab,
                          const std::vector<std::string>& ocr_texts, std::size_t max_steps) {
    DecodeState state;
    for (std::size_t t = 0; t < max_steps; ++t) {
        const std::vector<double> scores = step_fn(state);
        if (scores.size() != vocab.size() + ocr_texts.size()) {
            throw ContractError("step scores have wrong length");
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < scores.size(); ++i) {
            if (scores[i] > scores[best]) best = i;
        }
        if (best == static_cast<std::size_t>(Vocabulary::kEnd)) break;
        if (best < vocab.size()) {
            state.emitted.push_back(AnswerUnit::vocab(best));
            state.words.push_back(vocab.word_at(static_cast<int>(best)));
        } else {
            const std::size_t n = best - vocab.size();
            state.emitted.push_back(AnswerUnit::ocr(n));
            state.words.push_back(ocr_texts[n]);
        }
    }
    state.step = state.emitted.size();
    return state;
}

// Mean per-step cross-entropy over the combined vocab+OCR score layout under
// teacher forcing.
inline Tensor sequence_loss(Tape& tape, const std::vector<Tensor>& step_logits,
                            const std::vector<AnswerUnit>& targets, std::size_t vocab_size,
                            std::size_t n_ocr) {
    if (step_logits.size() != targets.size() || targets.empty()) {
        throw ContractError("teacher forcing requires one logits row per gold unit");
    }
    std::vector<Tensor> losses;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        std::size_t idx = 0;
        if (targets[t].kind == AnswerUnit::Kind::kVocab) {
            if (targets[t].index >= vocab_size) throw DataError("gold vocab index out of range");
            idx = targets[t].index;
        } else {
            if (targets[t].index >= n_ocr) throw DataError("gold ocr index out of range");
            idx = vocab_size + targets[t].index;
        }
        losses.push_back(cross_entropy(tape, step_logits[t], idx));
    }
    Tensor total = losses[0];
    for (std::size_t t = 1; t < losses.size(); ++t) total = add(tape, total, losses[t]);
    return scale(tape, total, 1.0 / static_cast<double>(losses.size()));
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

struct ForwardOutputs {
    std::vector<Tensor> step_logits;  // each [1 x (vocab_size + n_ocr)]
    std::size_t n_ocr = 0;
};

class SceneGateModel {
public:
    SceneGateModel(const ModelConfig& cfg, const Vocabulary& vocab, std::uint64_t seed)
        : cfg_(cfg), vocab_(vocab) {
        cfg_.validate();
        const Initializer init(derive_key(seed, "model-init"));
        const std::size_t d = cfg_.d_model();
        const std::size_t ff = cfg_.stack.ffn_mult;

        tok_emb_ = init.normal("tok_emb", {vocab_.size(), d}, 0.3);
        pos_emb_ = init.normal("pos_emb", {cfg_.max_question_len, d}, 0.3);
        step_emb_ = init.normal("step_emb", {cfg_.decoding_steps, d}, 0.3);
        seg_emb_ = init.normal("seg_emb", {6, d}, 0.3);

        w_obj_ = init.xavier("enc_obj.w", cfg_.obj_feature_dim + 4, d);
        b_obj_ = init.zeros("enc_obj.b", {d});
        ln_obj_g_ = init.ones("enc_obj.ln.g", {d});
        ln_obj_b_ = init.zeros("enc_obj.ln.b", {d});
        w_ocr_ = init.xavier("enc_ocr.w", cfg_.ocr_enriched_dim, d);
        b_ocr_ = init.zeros("enc_ocr.b", {d});
        ln_ocr_g_ = init.ones("enc_ocr.ln.g", {d});
        ln_ocr_b_ = init.zeros("enc_ocr.ln.b", {d});
        w_sg_ = init.xavier("enc_sg.w", cfg_.sg_node_dim, d);
        b_sg_ = init.zeros("enc_sg.b", {d});

        sa_q_ = SelfAttentionBlock("sa_q", d, cfg_.stack.heads_sa_ga_mmte, ff, init);
        sa_v_ = SelfAttentionBlock("sa_v", d, cfg_.stack.heads_sa_ga_mmte, ff, init);
        ga_ = GuidedAttentionBlock("ga", d, cfg_.stack.heads_sa_ga_mmte, ff, init);
        for (std::size_t i = 0; i < cfg_.stack.n_pra; ++i) {
            pra_layers_.emplace_back("pra." + std::to_string(i), d, cfg_.stack.heads_pra, ff,
                                     init);
        }
        for (std::size_t i = 0; i < cfg_.stack.n_sra; ++i) {
            sra_layers_.emplace_back("sra." + std::to_string(i), d, cfg_.stack.heads_sra, ff,
                                     init);
        }
        for (std::size_t i = 0; i < cfg_.stack.n_mmte; ++i) {
            mmte_layers_.emplace_back("mmte." + std::to_string(i), d,
                                      cfg_.stack.heads_sa_ga_mmte, ff, init);
        }
        sra_assign_ = HeadRelationAssignment::contiguous_windows(cfg_.stack.heads_sra,
                                                                 kNumRelations,
                                                                 cfg_.stack.sra_context);
        pra_assign_ = HeadRelationAssignment::contiguous_windows(cfg_.stack.heads_pra,
                                                                 kNumRelations,
                                                                 cfg_.stack.pra_context);

        w_vocab_ = init.xavier("ptr.w_vocab", d, vocab_.size());
        b_vocab_ = init.zeros("ptr.b_vocab", {vocab_.size()});
        w_dec_ = init.xavier("ptr.w_dec", d, d);
        b_dec_ = init.zeros("ptr.b_dec", {d});
        w_ocr_key_ = init.xavier("ptr.w_ocr", d, d);
        b_ocr_key_ = init.zeros("ptr.b_ocr", {d});

        collect_all_params();
    }

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    const HeadRelationAssignment& sra_assignment() const { return sra_assign_; }
    const HeadRelationAssignment& pra_assignment() const { return pra_assign_; }

    // --- encoders -----------------------------------------------------------

    // Trainable token embedding plus learned positional embedding.
    Tensor encode_question(Tape& tape, const std::vector<int>& token_ids) const {
        if (token_ids.empty()) throw ContractError("encode_question: empty question");
        if (token_ids.size() > cfg_.max_question_len) {
            throw ContractError("encode_question: question longer than max_question_len");
        }
        Tensor tok = embedding_lookup(tape, tok_emb_, token_ids);
        std::vector<int> positions(token_ids.size());
        std::iota(positions.begin(), positions.end(), 0);
        Tensor pos = embedding_lookup(tape, pos_emb_, positions);
        return add(tape, tok, pos);
    }

    // Projection of appearance || bbox to d_model, then layer norm.
    Tensor encode_objects(Tape& tape, const std::vector<InputObject>& objects) const {
        if (objects.empty()) throw ContractError("encode_objects: no objects");
        const std::size_t din = cfg_.obj_feature_dim + 4;
        std::vector<double> rows;
        rows.reserve(objects.size() * din);
        for (const auto& o : objects) {
            if (o.appearance.size() != cfg_.obj_feature_dim) {
                throw ShapeError("object appearance dim mismatch");
            }
            rows.insert(rows.end(), o.appearance.begin(), o.appearance.end());
            rows.push_back(o.box.x_min);
            rows.push_back(o.box.y_min);
            rows.push_back(o.box.x_max);
            rows.push_back(o.box.y_max);
        }
        Tensor x({objects.size(), din}, std::move(rows), false);
        return layer_norm(tape, linear(tape, x, w_obj_, b_obj_), ln_obj_g_, ln_obj_b_);
    }

    // Enriched OCR embedding appearance || fasttext || phoc || bbox (zero
    // padded up to ocr_enriched_dim), projected and normalized. Rows follow
    // the order of `ocrs` as passed.
    Tensor encode_ocr(Tape& tape, const std::vector<InputOcr>& ocrs) const {
        if (ocrs.empty()) throw ContractError("encode_ocr: no ocr tokens");
        const std::size_t din = cfg_.ocr_enriched_dim;
        std::vector<double> rows;
        rows.reserve(ocrs.size() * din);
        for (const auto& o : ocrs) {
            if (o.appearance.size() != cfg_.obj_feature_dim ||
                o.fasttext.size() != cfg_.fasttext_dim || o.phoc.size() != cfg_.phoc_dim) {
                throw ShapeError("ocr feature dims do not match config");
            }
            const std::size_t before = rows.size();
            rows.insert(rows.end(), o.appearance.begin(), o.appearance.end());
            rows.insert(rows.end(), o.fasttext.begin(), o.fasttext.end());
            rows.insert(rows.end(), o.phoc.begin(), o.phoc.end());
            rows.push_back(o.box.x_min);
            rows.push_back(o.box.y_min);
            rows.push_back(o.box.x_max);
            rows.push_back(o.box.y_max);
            rows.resize(before + din, 0.0);
        }
        Tensor x({ocrs.size(), din}, std::move(rows), false);
        return layer_norm(tape, linear(tape, x, w_ocr_, b_ocr_), ln_ocr_g_, ln_ocr_b_);
    }

    // Scene-graph nodes -> semantic base vectors -> d_model rows, in
    // adjacency (objects then attributes) order.
    EntitySequence embed_scene_graph(Tape& tape, const SceneGraph& sg) const {
        const std::size_t p = sg.node_count();
        if (p == 0) throw ContractError("embed_scene_graph: empty scene graph");
        std::vector<double> base;
        base.reserve(p * cfg_.sg_node_dim);
        EntitySequence seq;
        for (const auto& node : sg.objects) {
            const auto v = pseudo_features(node.class_label, cfg_.sg_node_dim, "fasttext");
            base.insert(base.end(), v.begin(), v.end());
            seq.segments.push_back(Segment::kSgObject);
            seq.boxes.emplace_back(node.box);
        }
        for (const auto& node : sg.attributes) {
            const auto v = pseudo_features(node.ocr_text, cfg_.sg_node_dim, "fasttext");
            base.insert(base.end(), v.begin(), v.end());
            seq.segments.push_back(Segment::kSgAttribute);
            seq.boxes.emplace_back(node.box);
        }
        Tensor x({p, cfg_.sg_node_dim}, std::move(base), false);
        seq.features = linear(tape, x, w_sg_, b_sg_);
        return seq;
    }

    // --- full pipeline ------------------------------------------------------

    // OCR tokens are processed internally in a canonical geometric order so
    // the pipeline is invariant to the input list order; scores and copy
    // slots are mapped back to input positions.
    static std::vector<std::size_t> canonical_ocr_order(const std::vector<InputOcr>& ocrs) {
        std::vector<BoundingBox> boxes;
        std::vector<std::string> texts;
        boxes.reserve(ocrs.size());
        texts.reserve(ocrs.size());
        for (const auto& o : ocrs) {
            boxes.push_back(o.box);
            texts.push_back(o.text);
        }
        return canonical_ocr_ids(boxes, texts);
    }

    // Teacher-forced forward over all decoder positions: position 0 is the
    // begin slot, position j consumes fed_units[j-1]. Returns combined
    // vocab+OCR logits per step; causal masking throughout the stack keeps
    // step t independent of fed units with index >= t.
    ForwardOutputs forward_all_steps(Tape& tape, const ModelInput& input,
                                     const std::vector<AnswerUnit>& fed_units,
                                     Dropout* dropout = nullptr,
                                     AttnRecorder* recorder = nullptr) const {
        input.validate(cfg_);
        const std::size_t n_steps = fed_units.size() + 1;
        if (n_steps > cfg_.decoding_steps) {
            throw ContractError("decoder prefix of " + std::to_string(fed_units.size()) +
                                " units exceeds decoding_steps");
        }
        const std::size_t n_obj = input.objects.size();
        const std::size_t n_ocr = input.ocr_tokens.size();
        const std::size_t lq = input.question_token_ids.size();

        // Question branch.
        EntitySequence q_seq;
        q_seq.features = encode_question(tape, input.question_token_ids);
        q_seq.segments.assign(lq, Segment::kQuestion);
        q_seq.boxes.assign(lq, std::nullopt);
        EntitySequence q_sa = sa_q_.forward(tape, q_seq, dropout, recorder);

        // Visual entities; OCR in canonical order.
        const std::vector<std::size_t> canon = canonical_ocr_order(input.ocr_tokens);
        std::vector<std::size_t> canon_pos(n_ocr);
        for (std::size_t k = 0; k < n_ocr; ++k) canon_pos[canon[k]] = k;

        EntitySequence obj_seq;
        obj_seq.features = encode_objects(tape, input.objects);
        obj_seq.segments.assign(n_obj, Segment::kObject);
        for (const auto& o : input.objects) obj_seq.boxes.emplace_back(o.box);

        Tensor ocr_feat;  // [n_ocr x d], canonical order
        EntitySequence ocr_seq;
        if (n_ocr > 0) {
            std::vector<InputOcr> ordered;
            ordered.reserve(n_ocr);
            for (std::size_t k : canon) ordered.push_back(input.ocr_tokens[k]);
            ocr_feat = encode_ocr(tape, ordered);
            ocr_seq.features = ocr_feat;
            ocr_seq.segments.assign(n_ocr, Segment::kOcr);
            for (const auto& o : ordered) ocr_seq.boxes.emplace_back(o.box);
        }

        // Decoder slots: begin + previously fed units, plus step embeddings.
        std::vector<Tensor> dec_rows;
        dec_rows.push_back(embedding_lookup(tape, tok_emb_, {Vocabulary::kBegin}));
        for (const AnswerUnit& u : fed_units) {
            if (u.kind == AnswerUnit::Kind::kVocab) {
                if (u.index >= vocab_.size()) throw ContractError("fed vocab unit out of range");
                dec_rows.push_back(
                    embedding_lookup(tape, tok_emb_, {static_cast<int>(u.index)}));
            } else {
                if (u.index >= n_ocr) throw ContractError("fed ocr unit out of range");
                dec_rows.push_back(slice_rows(tape, ocr_feat, canon_pos[u.index], 1));
            }
        }
        std::vector<int> steps(n_steps);
        std::iota(steps.begin(), steps.end(), 0);
        Tensor dec_feat = add(tape, concat_rows(tape, dec_rows),
                              embedding_lookup(tape, step_emb_, steps));
        EntitySequence dec_seq;
        dec_seq.features = dec_feat;
        dec_seq.segments.assign(n_steps, Segment::kDecoder);
        dec_seq.boxes.assign(n_steps, std::nullopt);

        // Co-attention: self attention over obj||ocr||decoder (decoder kept
        // causal), then question-guided cross attention.
        std::vector<EntitySequence> vis_parts;
        vis_parts.push_back(obj_seq);
        if (n_ocr > 0) vis_parts.push_back(ocr_seq);
        vis_parts.push_back(dec_seq);
        EntitySequence xv = concat_sequences(tape, vis_parts);
        EntitySequence xv_sa = sa_v_.forward_causal(tape, xv, dropout, recorder);
        EntitySequence v_prime = ga_.forward(tape, xv_sa, q_sa, dropout, recorder);

        // Spatial branch over question + guided visual/decoder features.
        EntitySequence f_s = concat_sequences(tape, {q_sa, v_prime});
        for (const PraLayer& layer : pra_layers_) {
            f_s = layer.forward(tape, f_s, pra_assign_, cfg_.stack.distance_threshold, dropout,
                                recorder);
        }

        // Semantic branch over the scene graph.
        EntitySequence f_sg = embed_scene_graph(tape, input.scene_graph);
        const AdjacencyMatrix adj = adjacency_matrix(input.scene_graph);
        for (const SraLayer& layer : sra_layers_) {
            f_sg = layer.forward(tape, f_sg, adj, sra_assign_, dropout, recorder,
                                 cfg_.disable_sra_mask);
        }

        // Fusion along the sequence axis with segment embeddings, then the
        // multimodal encoder stack.
        EntitySequence fused = concat_sequences(tape, {f_s, f_sg});
        std::vector<int> seg_ids;
        seg_ids.reserve(fused.length());
        for (Segment s : fused.segments) seg_ids.push_back(static_cast<int>(s));
        fused.features =
            add(tape, fused.features, embedding_lookup(tape, seg_emb_, seg_ids));
        for (const MmteLayer& layer : mmte_layers_) {
            fused = layer.forward(tape, fused, dropout, recorder);
        }

        // Score head: vocabulary scores from the decoder state, OCR copy
        // scores as a bilinear match against the question-guided OCR rows of
        // the final encoder output (the M4C pointer layout).
        const std::size_t dec_start = lq + n_obj + n_ocr;
        Tensor ocr_keys;
        if (n_ocr > 0) {
            Tensor v_ocr = slice_rows(tape, fused.features, lq + n_obj, n_ocr);
            ocr_keys = linear(tape, v_ocr, w_ocr_key_, b_ocr_key_);
        }
        ForwardOutputs out;
        out.n_ocr = n_ocr;
        for (std::size_t t = 0; t < n_steps; ++t) {
            Tensor z_t = slice_rows(tape, fused.features, dec_start + t, 1);
            Tensor vocab_scores = linear(tape, z_t, w_vocab_, b_vocab_);
            if (n_ocr == 0) {
                out.step_logits.push_back(vocab_scores);
                continue;
            }
            Tensor query = linear(tape, z_t, w_dec_, b_dec_);
            Tensor copy_scores = matmul(tape, query, transpose(tape, ocr_keys));
            copy_scores = gather_cols(tape, copy_scores, canon_pos);
            out.step_logits.push_back(concat_cols(tape, {vocab_scores, copy_scores}));
        }
        return out;
    }

    // Combined next-step scores after the given emitted prefix, as a flat
    // vector of length vocab_size + n_ocr.
    Tensor forward(Tape& tape, const ModelInput& input, const std::vector<AnswerUnit>& prefix,
                   Dropout* dropout = nullptr, AttnRecorder* recorder = nullptr) const {
        ForwardOutputs outs = forward_all_steps(tape, input, prefix, dropout, recorder);
        Tensor last = outs.step_logits.back();
        return reshape(tape, last, {last.numel()});
    }

    // Teacher-forced loss against the mapped gold answer.
    Tensor loss(Tape& tape, const ModelInput& input, Dropout* dropout = nullptr) const {
        const std::vector<AnswerUnit> targets = gold_units(input, vocab_);
        if (targets.size() > cfg_.decoding_steps) {
            throw DataError("gold answer longer than decoding_steps");
        }
        std::vector<AnswerUnit> fed(targets.begin(), targets.end() - 1);
        ForwardOutputs outs = forward_all_steps(tape, input, fed, dropout);
        return sequence_loss(tape, outs.step_logits, targets, vocab_.size(), outs.n_ocr);
    }

    // Greedy decode: argmax over the combined scores each step; OCR hits emit
    // the input token text verbatim and feed its enriched projection forward.
    DecodeState decode(const ModelInput& input) const {
        std::vector<std::string> texts;
        for (const auto& o : input.ocr_tokens) texts.push_back(o.text);
        return greedy_decode(
            [&](const DecodeState& state) {
                Tape tape;
                tape.set_recording(false);
                return forward(tape, input, state.emitted).value();
            },
            vocab_, texts, cfg_.decoding_steps);
    }

    std::string decode_answer(const ModelInput& input) const {
        const DecodeState state = decode(input);
        std::string out;
        for (std::size_t i = 0; i < state.words.size(); ++i) {
            if (i) out.push_back(' ');
            out += state.words[i];
        }
        return out;
    }

    // --- parameters ---------------------------------------------------------

    const std::vector<NamedParam>& params() const { return params_; }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    nlohmann::json weights_to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& p : params_) j[p.name] = tensor_to_json(p.tensor);
        return j;
    }

    void load_weights(const nlohmann::json& j) {
        for (auto& p : params_) {
            if (!j.contains(p.name)) {
                throw ParseError("checkpoint is missing weight '" + p.name + "'");
            }
            Tensor loaded = tensor_from_json(j.at(p.name));
            if (loaded.shape() != p.tensor.shape()) {
                throw ParseError("checkpoint weight '" + p.name + "' has shape " +
                                 shape_str(loaded.shape()) + ", expected " +
                                 shape_str(p.tensor.shape()));
            }
            p.tensor.mutable_value() = loaded.value();
        }
    }

private:
    void collect_all_params() {
        params_.clear();
        params_.push_back({"tok_emb", tok_emb_});
        params_.push_back({"pos_emb", pos_emb_});
        params_.push_back({"step_emb", step_emb_});
        params_.push_back({"seg_emb", seg_emb_});
        params_.push_back({"enc_obj.w", w_obj_});
        params_.push_back({"enc_obj.b", b_obj_});
        params_.push_back({"enc_obj.ln.g", ln_obj_g_});
        params_.push_back({"enc_obj.ln.b", ln_obj_b_});
        params_.push_back({"enc_ocr.w", w_ocr_});
        params_.push_back({"enc_ocr.b", b_ocr_});
        params_.push_back({"enc_ocr.ln.g", ln_ocr_g_});
        params_.push_back({"enc_ocr.ln.b", ln_ocr_b_});
        params_.push_back({"enc_sg.w", w_sg_});
        params_.push_back({"enc_sg.b", b_sg_});
        sa_q_.collect_params(params_);
        sa_v_.collect_params(params_);
        ga_.collect_params(params_);
        for (const auto& l : pra_layers_) l.collect_params(params_);
        for (const auto& l : sra_layers_) l.collect_params(params_);
        for (const auto& l : mmte_layers_) l.collect_params(params_);
        params_.push_back({"ptr.w_vocab", w_vocab_});
        params_.push_back({"ptr.b_vocab", b_vocab_});
        params_.push_back({"ptr.w_dec", w_dec_});
        params_.push_back({"ptr.b_dec", b_dec_});
        params_.push_back({"ptr.w_ocr", w_ocr_key_});
        params_.push_back({"ptr.b_ocr", b_ocr_key_});
    }

    ModelConfig cfg_;
    Vocabulary vocab_;

    Tensor tok_emb_, pos_emb_, step_emb_, seg_emb_;
    Tensor w_obj_, b_obj_, ln_obj_g_, ln_obj_b_;
    Tensor w_ocr_, b_ocr_, ln_ocr_g_, ln_ocr_b_;
    Tensor w_sg_, b_sg_;
    SelfAttentionBlock sa_q_, sa_v_;
    GuidedAttentionBlock ga_;
    std::vector<PraLayer> pra_layers_;
    std::vector<SraLayer> sra_layers_;
    std::vector<MmteLayer> mmte_layers_;
    HeadRelationAssignment sra_assign_, pra_assign_;
    Tensor w_vocab_, b_vocab_, w_dec_, b_dec_, w_ocr_key_, b_ocr_key_;

    std::vector<NamedParam> params_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointSchema = "scenegate-checkpoint-v1";

inline void save_checkpoint(const SceneGateModel& model, const nlohmann::json& config_json,
                            const std::string& path) {
    nlohmann::json j;
    j["schema"] = kCheckpointSchema;
    j["config"] = config_json;
    j["vocab"] = model.vocab().words();
    j["weights"] = model.weights_to_json();
    std::ofstream out(path);
    if (!out) throw DataError("cannot open checkpoint '" + path + "' for writing");
    out << j.dump();
}

struct CheckpointData {
    nlohmann::json config;
    std::vector<std::string> vocab_words;
    nlohmann::json weights;
};

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("checkpoint '" + path + "': " + e.what());
    }
    if (!j.contains("schema") || j.at("schema").get<std::string>() != kCheckpointSchema) {
        throw ParseError("checkpoint '" + path + "' has unknown schema");
    }
    CheckpointData data;
    data.config = j.at("config");
    data.vocab_words = j.at("vocab").get<std::vector<std::string>>();
    data.weights = j.at("weights");
    return data;
}

}  // namespace scenegate
