#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scenegate/config.hpp"
#include "scenegate/data.hpp"
#include "scenegate/model.hpp"
#include "scenegate/tensor.hpp"

namespace scenegate {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

namespace gradcheck {

inline Tensor random_tensor(CounterRng& rng, std::vector<std::size_t> shape, double spread = 1.0) {
    std::vector<double> v(Tensor::numel_of(shape));
    for (double& x : v) x = rng.uniform(-spread, spread);
    return Tensor(std::move(shape), std::move(v), false);
}

// Weighted sum of all outputs, so every output element influences the loss
// with a distinct coefficient.
inline Tensor weighted_sum(Tape& tape, const Tensor& out, const Tensor& weights) {
    return sum(tape, mul(tape, out, weights));
}

// Central-difference sweep of every differentiable op against its tape rule,
// random inputs with extents <= 6.
inline std::vector<GradCheckResult> run_op_checks(std::uint64_t seed, double h = 1e-3) {
    CounterRng rng(derive_key(seed, "op-gradcheck"));
    std::vector<GradCheckResult> results;
    auto check = [&](const std::string& name, const TensorFn& f, const Tensor& x) {
        results.push_back({name, grad_check(f, x, h)});
    };

    {
        Tensor a = random_tensor(rng, {3, 4});
        Tensor b = random_tensor(rng, {4, 2});
        Tensor w = random_tensor(rng, {3, 2});
        check("matmul/a",
              [&](Tape& t, const Tensor& x) { return weighted_sum(t, matmul(t, x, b), w); }, a);
        check("matmul/b",
              [&](Tape& t, const Tensor& x) { return weighted_sum(t, matmul(t, a, x), w); }, b);
    }
    {
        Tensor a = random_tensor(rng, {4, 3});
        Tensor w = random_tensor(rng, {3, 4});
        check("transpose",
              [&](Tape& t, const Tensor& x) { return weighted_sum(t, transpose(t, x), w); }, a);
    }
    {
        Tensor a = random_tensor(rng, {2, 5});
        Tensor b = random_tensor(rng, {2, 5});
        Tensor w = random_tensor(rng, {2, 5});
        check("add",
              [&](Tape& t, const Tensor& x) { return weighted_sum(t, add(t, x, b), w); }, a);
        check("mul",
              [&](Tape& t, const Tensor& x) { return weighted_sum(t, mul(t, x, b), w); }, a);
        check("scale",
              [&](Tape& t, const Tensor& x) { return weighted_sum(t, scale(t, x, -1.7), w); }, a);
        check("sum", [&](Tape& t, const Tensor& x) { return sum(t, x); }, a);
        check("reshape",
              [&](Tape& t, const Tensor& x) {
                  return weighted_sum(t, reshape(t, x, {5, 2}),
                                      reshape(t, w, {5, 2}));
              },
              a);
    }
    {
        Tensor a = random_tensor(rng, {5, 4});
        Tensor w_rows = random_tensor(rng, {2, 4});
        Tensor w_cols = random_tensor(rng, {5, 2});
        check("slice_rows",
              [&](Tape& t, const Tensor& x) {
                  return weighted_sum(t, slice_rows(t, x, 1, 2), w_rows);
              },
              a);
        check("slice_cols",
              [&](Tape& t, const Tensor& x) {
                  return weighted_sum(t, slice_cols(t, x, 1, 2), w_cols);
              },
              a);
        const std::vector<std::size_t> idx = {3, 0, 3, 2};
        Tensor w_gather = random_tensor(rng, {5, 4});
        check("gather_cols",
              [&](Tape& t, const Tensor& x) {
                  return weighted_sum(t, gather_cols(t, x, idx), w_gather);
              },
              a);
    }
    {
        Tensor a = random_tensor(rng, {2, 3});
        Tensor b = random_tensor(rng, {2, 3});
        Tensor w = random_tensor(rng, {4, 3});
        check("concat_rows",
              [&](Tape& t, const Tensor& x) {
                  return weighted_sum(t, concat_rows(t, {x, b}), w);
              },
              a);
        Tensor w2 = random_tensor(rng, {2, 6});
        check("concat_cols",
              [&](Tape& t, const Tensor& x) {
                  return weighted_sum(t, concat_cols(t, {x, b}), w2);
              },
              a);
    }
    {
        Tensor x = random_tensor(rng, {3, 4});
        Tensor w = random_tensor(rng, {4, 2});
        Tensor b = random_tensor(rng, {2});
        Tensor wsum = random_tensor(rng, {3, 2});
        check("linear/x",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, linear(t, v, w, b), wsum);
              },
              x);
        check("linear/w",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, linear(t, x, v, b), wsum);
              },
              w);
        check("linear/b",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, linear(t, x, w, v), wsum);
              },
              b);
    }
    {
        Tensor x = random_tensor(rng, {3, 5});
        Tensor gamma = random_tensor(rng, {5});
        Tensor beta = random_tensor(rng, {5});
        Tensor w = random_tensor(rng, {3, 5});
        check("layer_norm/x",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, layer_norm(t, v, gamma, beta), w);
              },
              x);
        check("layer_norm/gamma",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, layer_norm(t, x, v, beta), w);
              },
              gamma);
        check("layer_norm/beta",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, layer_norm(t, x, gamma, v), w);
              },
              beta);
    }
    {
        Tensor x = random_tensor(rng, {2, 6});
        Tensor w = random_tensor(rng, {2, 6});
        check("gelu",
              [&](Tape& t, const Tensor& v) { return weighted_sum(t, gelu(t, v), w); }, x);
        check("dropout_det",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, dropout_det(t, v, 0.3, 1234), w);
              },
              x);
    }
    {
        Tensor logits = random_tensor(rng, {3, 5});
        // one masked column plus a fully open row mix
        Tensor bias = Tensor::zeros({3, 5});
        bias.mutable_value()[2] = kMaskedBias;
        bias.mutable_value()[5 + 4] = kMaskedBias;
        Tensor w = random_tensor(rng, {3, 5});
        check("softmax_biased",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, softmax_biased(t, v, bias), w);
              },
              logits);
    }
    {
        Tensor table = random_tensor(rng, {6, 3});
        const std::vector<int> idx = {4, 0, 4, 2};
        Tensor w = random_tensor(rng, {4, 3});
        check("embedding_lookup",
              [&](Tape& t, const Tensor& v) {
                  return weighted_sum(t, embedding_lookup(t, v, idx), w);
              },
              table);
    }
    {
        Tensor logits = random_tensor(rng, {1, 6});
        check("cross_entropy",
              [&](Tape& t, const Tensor& v) { return cross_entropy(t, v, 2); }, logits);
    }
    return results;
}

// End-to-end check on a 2-object / 2-OCR scene: the tape gradient of the
// training loss for each parameter tensor is compared against central
// differences on a deterministic sample of entries.
inline std::vector<GradCheckResult> run_model_checks(const RunConfig& run_cfg,
                                                     std::uint64_t seed,
                                                     std::size_t probes_per_param = 6,
                                                     double h = 1e-3) {
    RunConfig cfg = run_cfg;
    cfg.seed = seed;

    std::vector<SceneInstance> scenes;
    for (std::uint64_t s = 0; s < 8; ++s) scenes.push_back(generate_scene(1000 + s, 2, 2));
    const Vocabulary vocab = build_vocab(scenes);
    SceneGateModel model(cfg.model, vocab, cfg.seed);
    const ModelInput input = featurize(scenes[0], cfg.model, vocab);

    auto eval_loss = [&]() {
        Tape tape;
        tape.set_recording(false);
        return model.loss(tape, input).item();
    };
    const double l1 = eval_loss();
    const double l2 = eval_loss();
    if (l1 != l2) throw DeterminismError("model loss is not deterministic");

    model.zero_grad();
    {
        Tape tape;
        Tensor loss = model.loss(tape, input);
        tape.backward(loss);
    }

    CounterRng rng(derive_key(seed, "model-gradcheck"));
    std::vector<GradCheckResult> results;
    for (const NamedParam& p : model.params()) {
        const std::size_t n = p.tensor.numel();
        const std::vector<double> analytic =
            p.tensor.has_grad() ? p.tensor.grad() : std::vector<double>(n, 0.0);
        auto& w = const_cast<Tensor&>(p.tensor).mutable_value();
        double max_rel = 0.0;
        const std::size_t probes = std::min(probes_per_param, n);
        for (std::size_t k = 0; k < probes; ++k) {
            const std::size_t idx = probes == n ? k : rng.uniform_index(n);
            const double saved = w[idx];
            w[idx] = saved + h;
            const double fp = eval_loss();
            w[idx] = saved - h;
            const double fm = eval_loss();
            w[idx] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double rel =
                std::abs(analytic[idx] - numeric) / std::max(1.0, std::abs(analytic[idx]));
            max_rel = std::max(max_rel, rel);
        }
        results.push_back({"model/" + p.name, max_rel});
    }
    return results;
}

}  // namespace gradcheck

}  // namespace scenegate
