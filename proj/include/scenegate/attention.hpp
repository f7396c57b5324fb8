#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scenegate/common.hpp"
#include "scenegate/geometry.hpp"
#include "scenegate/rng.hpp"
#include "scenegate/scene_graph.hpp"
#include "scenegate/tensor.hpp"

namespace scenegate {

// ---------------------------------------------------------------------------
// Shared infrastructure: parameters, init, dropout, attention probes
// ---------------------------------------------------------------------------

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Deterministic weight init: every tensor's values depend only on
// (seed, parameter name), independent of construction order.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : seed_(seed) {}

    Tensor xavier(const std::string& name, std::size_t rows, std::size_t cols) const {
        const double stddev = std::sqrt(2.0 / static_cast<double>(rows + cols));
        return normal(name, {rows, cols}, stddev);
    }

    Tensor normal(const std::string& name, std::vector<std::size_t> shape, double stddev) const {
        CounterRng rng(derive_key(seed_, name));
        std::vector<double> v(Tensor::numel_of(shape));
        for (double& x : v) x = rng.normal() * stddev;
        return Tensor(std::move(shape), std::move(v), true);
    }

    Tensor zeros(const std::string&, std::vector<std::size_t> shape) const {
        return Tensor::zeros(std::move(shape), true);
    }

    Tensor ones(const std::string&, std::vector<std::size_t> shape) const {
        return Tensor::ones(std::move(shape), true);
    }

private:
    std::uint64_t seed_;
};

// Per-forward dropout stream. rate 0 (the default) is a no-op; during
// training each application site draws a fresh deterministic sub-seed.
struct Dropout {
    double rate = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    Tensor apply(Tape& tape, const Tensor& x) {
        if (rate == 0.0) return x;
        return dropout_det(tape, x, rate, derive_key(seed, counter++));
    }
};

inline Dropout* no_dropout() { return nullptr; }

// Captured post-softmax attention weights, for mask verification and the
// attn-dump command.
struct AttnRecord {
    std::string layer;
    std::size_t head = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> weights;
    std::vector<std::string> seg_q;
    std::vector<std::string> seg_k;

    double at(std::size_t i, std::size_t j) const { return weights[i * cols + j]; }
};

struct AttnRecorder {
    std::vector<AttnRecord> records;

    void add(const std::string& layer, std::size_t head, const Tensor& probs) {
        AttnRecord r;
        r.layer = layer;
        r.head = head;
        r.rows = probs.extent(0);
        r.cols = probs.extent(1);
        r.weights = probs.value();
        records.push_back(std::move(r));
    }

    // Attach query/key segment tags to the records just written by one layer.
    void annotate_last(std::size_t count, const std::vector<std::string>& seg_q,
                       const std::vector<std::string>& seg_k) {
        for (std::size_t i = records.size() - count; i < records.size(); ++i) {
            records[i].seg_q = seg_q;
            records[i].seg_k = seg_k;
        }
    }
};

// ---------------------------------------------------------------------------
// Sequences and biases
// ---------------------------------------------------------------------------

enum class Segment { kQuestion, kObject, kOcr, kDecoder, kSgObject, kSgAttribute };

inline const char* segment_name(Segment s) {
    switch (s) {
        case Segment::kQuestion: return "question";
        case Segment::kObject: return "object";
        case Segment::kOcr: return "ocr";
        case Segment::kDecoder: return "decoder";
        case Segment::kSgObject: return "sg_object";
        case Segment::kSgAttribute: return "sg_attribute";
    }
    return "?";
}

inline bool segment_has_box(Segment s) {
    return s == Segment::kObject || s == Segment::kOcr || s == Segment::kSgObject ||
           s == Segment::kSgAttribute;
}

inline bool segment_is_visual(Segment s) { return s == Segment::kObject || s == Segment::kOcr; }

// Modality-tagged feature sequence fed to the attention stacks.
struct EntitySequence {
    Tensor features;  // [L x d]
    std::vector<Segment> segments;
    std::vector<std::optional<BoundingBox>> boxes;

    std::size_t length() const { return segments.size(); }

    void validate() const {
        if (features.rank() != 2 || features.extent(0) != segments.size() ||
            boxes.size() != segments.size()) {
            throw ContractError("entity sequence length mismatch");
        }
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (boxes[i].has_value() != segment_has_box(segments[i])) {
                throw ContractError("entity sequence box presence does not match segment at " +
                                    std::to_string(i));
            }
        }
    }

    EntitySequence with_features(Tensor f) const {
        EntitySequence out;
        out.features = std::move(f);
        out.segments = segments;
        out.boxes = boxes;
        return out;
    }

    std::vector<std::string> segment_names() const {
        std::vector<std::string> out;
        out.reserve(segments.size());
        for (Segment s : segments) out.emplace_back(segment_name(s));
        return out;
    }
};

inline EntitySequence concat_sequences(Tape& tape, const std::vector<EntitySequence>& parts) {
    std::vector<Tensor> feats;
    EntitySequence out;
    for (const EntitySequence& p : parts) {
        if (p.length() == 0) continue;
        feats.push_back(p.features);
        out.segments.insert(out.segments.end(), p.segments.begin(), p.segments.end());
        out.boxes.insert(out.boxes.end(), p.boxes.begin(), p.boxes.end());
    }
    out.features = concat_rows(tape, feats);
    return out;
}

// Per-head additive attention mask: entries are 0 (open) or kMaskedBias.
struct AttentionBias {
    std::size_t heads = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    static AttentionBias open(std::size_t heads, std::size_t rows, std::size_t cols) {
        AttentionBias b;
        b.heads = heads;
        b.rows = rows;
        b.cols = cols;
        b.v.assign(heads * rows * cols, 0.0);
        return b;
    }

    double at(std::size_t h, std::size_t i, std::size_t j) const {
        return v[(h * rows + i) * cols + j];
    }
    void mask(std::size_t h, std::size_t i, std::size_t j) {
        v[(h * rows + i) * cols + j] = kMaskedBias;
    }
    bool is_open(std::size_t h, std::size_t i, std::size_t j) const {
        return at(h, i, j) == 0.0;
    }

    Tensor head_tensor(std::size_t h) const {
        return Tensor({rows, cols},
                      std::vector<double>(v.begin() + h * rows * cols,
                                          v.begin() + (h + 1) * rows * cols),
                      false);
    }
};

// ---------------------------------------------------------------------------
// Head -> relation-type windows
// ---------------------------------------------------------------------------

// Head j of an H-head layer attends along a contiguous circular label window
// of size kappa. With H == 12 the window starts at the head index (head j
// permits labels j+1 .. j+kappa circularly), so every label is permitted in
// exactly kappa heads. With fewer heads the windows are strided across the
// label circle (stride 12/H) so each head keeps a selective relation set
// while the twelve labels stay covered.
class HeadRelationAssignment {
public:
    static HeadRelationAssignment contiguous_windows(std::size_t n_heads, std::size_t n_relations,
                                                     std::size_t kappa) {
        if (kappa < 1 || kappa > n_relations) {
            throw ContractError("relation window size " + std::to_string(kappa) +
                                " outside [1, " + std::to_string(n_relations) + "]");
        }
        if (n_heads == 0) throw ContractError("head count must be positive");
        HeadRelationAssignment a;
        a.kappa_ = kappa;
        a.n_relations_ = n_relations;
        a.permitted_.assign(n_heads, std::vector<bool>(n_relations + 1, false));
        const std::size_t stride = std::max<std::size_t>(1, n_relations / n_heads);
        // Strided layouts shift one slot back so one window covers the
        // containment labels {12, 1, 2} exactly, mirroring head 11 of the
        // 12-head layout.
        const std::size_t offset = n_heads == n_relations ? 0 : n_relations - 1;
        for (std::size_t j = 0; j < n_heads; ++j) {
            for (std::size_t i = 0; i < kappa; ++i) {
                const std::size_t label = ((offset + j * stride + i) % n_relations) + 1;
                a.permitted_[j][label] = true;
            }
        }
        return a;
    }

    std::size_t heads() const { return permitted_.size(); }
    std::size_t kappa() const { return kappa_; }

    bool permits(std::size_t head, int label) const {
        if (head >= permitted_.size()) throw ContractError("head index out of range");
        if (label < 1 || static_cast<std::size_t>(label) > n_relations_) return false;
        return permitted_[head][static_cast<std::size_t>(label)];
    }

    std::vector<int> permitted_labels(std::size_t head) const {
        std::vector<int> out;
        for (std::size_t l = 1; l <= n_relations_; ++l) {
            if (permitted_[head][l]) out.push_back(static_cast<int>(l));
        }
        return out;
    }

private:
    std::size_t kappa_ = 0;
    std::size_t n_relations_ = 0;
    std::vector<std::vector<bool>> permitted_;
};

// ---------------------------------------------------------------------------
// Bias builders
// ---------------------------------------------------------------------------

// Scene-graph mask: head h opens (u, v) iff the edge label adj[u][v] is in the
// head's window, or u == v (the self cell is always open so no row can end up
// fully masked).
inline AttentionBias sra_bias(const AdjacencyMatrix& adj, const HeadRelationAssignment& assign) {
    AttentionBias bias = AttentionBias::open(assign.heads(), adj.n, adj.n);
    for (std::size_t h = 0; h < assign.heads(); ++h) {
        for (std::size_t u = 0; u < adj.n; ++u) {
            for (std::size_t v = 0; v < adj.n; ++v) {
                if (u == v) continue;
                const int label = adj.at(u, v);
                if (label == 0 || !assign.permits(h, label)) bias.mask(h, u, v);
            }
        }
    }
    return bias;
}

// Ordinal of each decoder position among decoder positions, -1 elsewhere.
inline std::vector<int> decoder_ordinals(const std::vector<Segment>& segments) {
    std::vector<int> ord(segments.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i] == Segment::kDecoder) ord[i] = next++;
    }
    return ord;
}

// Causality-only mask shared by the fused encoder and the visual self
// attention: decoder position t sees everything except decoder positions
// beyond t; non-decoder positions never see the decoder.
inline AttentionBias decoder_causal_bias(const std::vector<Segment>& segments,
                                         std::size_t heads) {
    const std::size_t n = segments.size();
    const std::vector<int> ord = decoder_ordinals(segments);
    AttentionBias bias = AttentionBias::open(heads, n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || segments[j] != Segment::kDecoder) continue;
            const bool open = segments[i] == Segment::kDecoder && ord[j] <= ord[i];
            if (!open) {
                for (std::size_t h = 0; h < heads; ++h) bias.mask(h, i, j);
            }
        }
    }
    return bias;
}

// Spatial mask over question/visual/decoder positions:
//  - diagonal open in every head;
//  - decoder rows: causal within the decoder, open to everything else;
//  - non-decoder rows: closed toward every decoder position;
//  - visual<->visual: open in head h iff the pairwise box relation lies in the
//    head's window and the centers are within distance_threshold;
//  - any pair involving a question position (non-decoder) stays open.
inline AttentionBias pra_bias(const EntitySequence& seq, const HeadRelationAssignment& assign,
                              double distance_threshold) {
    seq.validate();
    const std::size_t n = seq.length();
    const std::size_t heads = assign.heads();
    for (Segment s : seq.segments) {
        if (s == Segment::kSgObject || s == Segment::kSgAttribute) {
            throw ContractError("pra_bias does not apply to scene-graph node positions");
        }
    }
    const std::vector<int> ord = decoder_ordinals(seq.segments);
    AttentionBias bias = AttentionBias::open(heads, n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const Segment si = seq.segments[i];
            const Segment sj = seq.segments[j];
            if (sj == Segment::kDecoder) {
                const bool open = si == Segment::kDecoder && ord[j] <= ord[i];
                if (!open) {
                    for (std::size_t h = 0; h < heads; ++h) bias.mask(h, i, j);
                }
                continue;
            }
            if (si == Segment::kDecoder) continue;  // decoder reads all inputs
            if (segment_is_visual(si) && segment_is_visual(sj)) {
                const BoundingBox& bi = *seq.boxes[i];
                const BoundingBox& bj = *seq.boxes[j];
                const bool near = center_distance(bi, bj) <= distance_threshold;
                const int label = relation_label(classify_relation(bi, bj, false));
                for (std::size_t h = 0; h < heads; ++h) {
                    if (!near || !assign.permits(h, label)) bias.mask(h, i, j);
                }
            }
            // question<->question, question<->visual: open
        }
    }
    return bias;
}

// ---------------------------------------------------------------------------
// Attention layers
// ---------------------------------------------------------------------------

// Standard multi-head attention with an additive {0, -inf} bias per head.
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;

    MultiHeadAttention(const std::string& name, std::size_t d_model, std::size_t heads,
                       const Initializer& init)
        : name_(name), d_model_(d_model), heads_(heads) {
        if (heads == 0 || d_model % heads != 0) {
            throw ContractError("d_model " + std::to_string(d_model) +
                                " not divisible by head count " + std::to_string(heads));
        }
        wq_ = init.xavier(name + ".wq", d_model, d_model);
        bq_ = init.zeros(name + ".bq", {d_model});
        wk_ = init.xavier(name + ".wk", d_model, d_model);
        bk_ = init.zeros(name + ".bk", {d_model});
        wv_ = init.xavier(name + ".wv", d_model, d_model);
        bv_ = init.zeros(name + ".bv", {d_model});
        wo_ = init.xavier(name + ".wo", d_model, d_model);
        bo_ = init.zeros(name + ".bo", {d_model});
    }

    std::size_t heads() const { return heads_; }

    Tensor forward(Tape& tape, const Tensor& q_src, const Tensor& kv_src,
                   const AttentionBias& bias, Dropout* dropout = nullptr,
                   AttnRecorder* recorder = nullptr) const {
        const std::size_t lq = q_src.extent(0);
        const std::size_t lk = kv_src.extent(0);
        if (bias.heads != heads_ || bias.rows != lq || bias.cols != lk) {
            throw ShapeError("attention bias (" + std::to_string(bias.heads) + ", " +
                             std::to_string(bias.rows) + ", " + std::to_string(bias.cols) +
                             ") does not match heads=" + std::to_string(heads_) + ", Lq=" +
                             std::to_string(lq) + ", Lk=" + std::to_string(lk));
        }
        const std::size_t dh = d_model_ / heads_;
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor q = linear(tape, q_src, wq_, bq_);
        Tensor k = linear(tape, kv_src, wk_, bk_);
        Tensor v = linear(tape, kv_src, wv_, bv_);
        std::vector<Tensor> contexts;
        contexts.reserve(heads_);
        for (std::size_t h = 0; h < heads_; ++h) {
            Tensor qh = slice_cols(tape, q, h * dh, dh);
            Tensor kh = slice_cols(tape, k, h * dh, dh);
            Tensor vh = slice_cols(tape, v, h * dh, dh);
            Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt_dh);
            Tensor probs = softmax_biased(tape, scores, bias.head_tensor(h));
            if (recorder != nullptr) recorder->add(name_, h, probs);
            if (dropout != nullptr) probs = dropout->apply(tape, probs);
            contexts.push_back(matmul(tape, probs, vh));
        }
        return linear(tape, concat_cols(tape, contexts), wo_, bo_);
    }

    void collect_params(std::vector<NamedParam>& out) const {
        out.push_back({name_ + ".wq", wq_});
        out.push_back({name_ + ".bq", bq_});
        out.push_back({name_ + ".wk", wk_});
        out.push_back({name_ + ".bk", bk_});
        out.push_back({name_ + ".wv", wv_});
        out.push_back({name_ + ".bv", bv_});
        out.push_back({name_ + ".wo", wo_});
        out.push_back({name_ + ".bo", bo_});
    }

    const std::string& name() const { return name_; }

private:
    std::string name_;
    std::size_t d_model_ = 0;
    std::size_t heads_ = 0;
    Tensor wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

// Post-norm transformer block: attention, add & norm, feed-forward,
// add & norm.
class EncoderBlock {
public:
    EncoderBlock() = default;

    EncoderBlock(const std::string& name, std::size_t d_model, std::size_t heads,
                 std::size_t ffn_mult, const Initializer& init)
        : name_(name), mha_(name + ".attn", d_model, heads, init) {
        const std::size_t d_ff = d_model * ffn_mult;
        ff_w1_ = init.xavier(name + ".ff.w1", d_model, d_ff);
        ff_b1_ = init.zeros(name + ".ff.b1", {d_ff});
        ff_w2_ = init.xavier(name + ".ff.w2", d_ff, d_model);
        ff_b2_ = init.zeros(name + ".ff.b2", {d_model});
        ln1_g_ = init.ones(name + ".ln1.g", {d_model});
        ln1_b_ = init.zeros(name + ".ln1.b", {d_model});
        ln2_g_ = init.ones(name + ".ln2.g", {d_model});
        ln2_b_ = init.zeros(name + ".ln2.b", {d_model});
    }

    std::size_t heads() const { return mha_.heads(); }

    Tensor forward(Tape& tape, const Tensor& q_src, const Tensor& kv_src,
                   const AttentionBias& bias, Dropout* dropout = nullptr,
                   AttnRecorder* recorder = nullptr) const {
        Tensor attended = mha_.forward(tape, q_src, kv_src, bias, dropout, recorder);
        if (dropout != nullptr) attended = dropout->apply(tape, attended);
        Tensor h = layer_norm(tape, add(tape, q_src, attended), ln1_g_, ln1_b_);
        Tensor f = linear(tape, gelu(tape, linear(tape, h, ff_w1_, ff_b1_)), ff_w2_, ff_b2_);
        if (dropout != nullptr) f = dropout->apply(tape, f);
        return layer_norm(tape, add(tape, h, f), ln2_g_, ln2_b_);
    }

    void collect_params(std::vector<NamedParam>& out) const {
        mha_.collect_params(out);
        out.push_back({name_ + ".ff.w1", ff_w1_});
        out.push_back({name_ + ".ff.b1", ff_b1_});
        out.push_back({name_ + ".ff.w2", ff_w2_});
        out.push_back({name_ + ".ff.b2", ff_b2_});
        out.push_back({name_ + ".ln1.g", ln1_g_});
        out.push_back({name_ + ".ln1.b", ln1_b_});
        out.push_back({name_ + ".ln2.g", ln2_g_});
        out.push_back({name_ + ".ln2.b", ln2_b_});
    }

    const std::string& name() const { return name_; }

private:
    std::string name_;
    MultiHeadAttention mha_;
    Tensor ff_w1_, ff_b1_, ff_w2_, ff_b2_;
    Tensor ln1_g_, ln1_b_, ln2_g_, ln2_b_;
};

// Self attention over one sequence (no mask beyond optional decoder
// causality).
class SelfAttentionBlock {
public:
    SelfAttentionBlock() = default;
    SelfAttentionBlock(const std::string& name, std::size_t d_model, std::size_t heads,
                       std::size_t ffn_mult, const Initializer& init)
        : block_(name, d_model, heads, ffn_mult, init) {}

    EntitySequence forward(Tape& tape, const EntitySequence& x, Dropout* dropout = nullptr,
                           AttnRecorder* recorder = nullptr) const {
        x.validate();
        const AttentionBias bias = AttentionBias::open(block_.heads(), x.length(), x.length());
        return run(tape, x, bias, dropout, recorder);
    }

    // Same block with the decoder-causality mask; used when the sequence
    // carries decoder slots.
    EntitySequence forward_causal(Tape& tape, const EntitySequence& x, Dropout* dropout = nullptr,
                                  AttnRecorder* recorder = nullptr) const {
        x.validate();
        const AttentionBias bias = decoder_causal_bias(x.segments, block_.heads());
        return run(tape, x, bias, dropout, recorder);
    }

    void collect_params(std::vector<NamedParam>& out) const { block_.collect_params(out); }
    const EncoderBlock& block() const { return block_; }

private:
    EntitySequence run(Tape& tape, const EntitySequence& x, const AttentionBias& bias,
                       Dropout* dropout, AttnRecorder* recorder) const {
        Tensor out = block_.forward(tape, x.features, x.features, bias, dropout, recorder);
        if (recorder != nullptr) {
            recorder->annotate_last(block_.heads(), x.segment_names(), x.segment_names());
        }
        return x.with_features(std::move(out));
    }

    EncoderBlock block_;
};

// Cross attention: queries from x, keys/values from y.
class GuidedAttentionBlock {
public:
    GuidedAttentionBlock() = default;
    GuidedAttentionBlock(const std::string& name, std::size_t d_model, std::size_t heads,
                         std::size_t ffn_mult, const Initializer& init)
        : block_(name, d_model, heads, ffn_mult, init) {}

    EntitySequence forward(Tape& tape, const EntitySequence& x, const EntitySequence& y,
                           Dropout* dropout = nullptr, AttnRecorder* recorder = nullptr) const {
        x.validate();
        y.validate();
        if (x.features.extent(1) != y.features.extent(1)) {
            throw ShapeError("guided attention requires matching model dims");
        }
        const AttentionBias bias = AttentionBias::open(block_.heads(), x.length(), y.length());
        Tensor out = block_.forward(tape, x.features, y.features, bias, dropout, recorder);
        if (recorder != nullptr) {
            recorder->annotate_last(block_.heads(), x.segment_names(), y.segment_names());
        }
        return x.with_features(std::move(out));
    }

    void collect_params(std::vector<NamedParam>& out) const { block_.collect_params(out); }
    const EncoderBlock& block() const { return block_; }

private:
    EncoderBlock block_;
};

// Semantic relation-aware layer over scene-graph nodes.
class SraLayer {
public:
    SraLayer() = default;
    SraLayer(const std::string& name, std::size_t d_model, std::size_t heads,
             std::size_t ffn_mult, const Initializer& init)
        : block_(name, d_model, heads, ffn_mult, init) {}

    // `mask_disabled` drops the relation mask (ablation switch): all-zero bias.
    EntitySequence forward(Tape& tape, const EntitySequence& nodes, const AdjacencyMatrix& adj,
                           const HeadRelationAssignment& assign, Dropout* dropout = nullptr,
                           AttnRecorder* recorder = nullptr, bool mask_disabled = false) const {
        nodes.validate();
        if (nodes.length() != adj.n) {
            throw ContractError("scene-graph node sequence length " +
                                std::to_string(nodes.length()) +
                                " does not match adjacency order " + std::to_string(adj.n));
        }
        const AttentionBias bias = mask_disabled
                                       ? AttentionBias::open(block_.heads(), adj.n, adj.n)
                                       : sra_bias(adj, assign);
        Tensor out = block_.forward(tape, nodes.features, nodes.features, bias, dropout, recorder);
        if (recorder != nullptr) {
            recorder->annotate_last(block_.heads(), nodes.segment_names(), nodes.segment_names());
        }
        return nodes.with_features(std::move(out));
    }

    void collect_params(std::vector<NamedParam>& out) const { block_.collect_params(out); }

private:
    EncoderBlock block_;
};

// Positional relation-aware layer over question + visual + decoder positions.
class PraLayer {
public:
    PraLayer() = default;
    PraLayer(const std::string& name, std::size_t d_model, std::size_t heads,
             std::size_t ffn_mult, const Initializer& init)
        : block_(name, d_model, heads, ffn_mult, init) {}

    EntitySequence forward(Tape& tape, const EntitySequence& seq,
                           const HeadRelationAssignment& assign, double distance_threshold,
                           Dropout* dropout = nullptr, AttnRecorder* recorder = nullptr) const {
        const AttentionBias bias = pra_bias(seq, assign, distance_threshold);
        Tensor out = block_.forward(tape, seq.features, seq.features, bias, dropout, recorder);
        if (recorder != nullptr) {
            recorder->annotate_last(block_.heads(), seq.segment_names(), seq.segment_names());
        }
        return seq.with_features(std::move(out));
    }

    void collect_params(std::vector<NamedParam>& out) const { block_.collect_params(out); }

private:
    EncoderBlock block_;
};

// Multimodal encoder layer over the fused sequence: full pairwise attention
// except decoder causality.
class MmteLayer {
public:
    MmteLayer() = default;
    MmteLayer(const std::string& name, std::size_t d_model, std::size_t heads,
              std::size_t ffn_mult, const Initializer& init)
        : block_(name, d_model, heads, ffn_mult, init) {}

    EntitySequence forward(Tape& tape, const EntitySequence& fused, Dropout* dropout = nullptr,
                           AttnRecorder* recorder = nullptr) const {
        fused.validate();
        const AttentionBias bias = decoder_causal_bias(fused.segments, block_.heads());
        Tensor out = block_.forward(tape, fused.features, fused.features, bias, dropout, recorder);
        if (recorder != nullptr) {
            recorder->annotate_last(block_.heads(), fused.segment_names(), fused.segment_names());
        }
        return fused.with_features(std::move(out));
    }

    void collect_params(std::vector<NamedParam>& out) const { block_.collect_params(out); }

private:
    EncoderBlock block_;
};

// Attention stack geometry and mask knobs.
struct LayerStackConfig {
    std::size_t n_mmte = 1;
    std::size_t n_pra = 2;
    std::size_t n_sra = 1;
    std::size_t d_model = 768;
    std::size_t heads_sa_ga_mmte = 8;
    std::size_t heads_sra = 12;
    std::size_t heads_pra = 12;
    std::size_t ffn_mult = 4;
    double dropout = 0.1;
    double distance_threshold = 0.5;
    std::size_t sra_context = 3;  // relation window size per SRA head
    std::size_t pra_context = 3;

    void validate() const {
        for (std::size_t h : {heads_sa_ga_mmte, heads_sra, heads_pra}) {
            if (h == 0 || d_model % h != 0) {
                throw ConfigError("d_model " + std::to_string(d_model) +
                                  " not divisible by head count " + std::to_string(h));
            }
        }
        if (sra_context < 1 || sra_context > kNumRelations || pra_context < 1 ||
            pra_context > kNumRelations) {
            throw ConfigError("attention context must be in [1, 12]");
        }
        if (n_mmte == 0 || n_pra == 0 || n_sra == 0) {
            throw ConfigError("layer counts must be positive");
        }
    }
};

}  // namespace scenegate
