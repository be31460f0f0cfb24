#pragma once

// Decoder-only transformer with merged-residual multi-head softmax attention,
// ReLU MLP, no layer normalization, and a linear readout whose uncertainty
// channel passes through softplus. Attention logits carry no 1/sqrt(d_m)
// temperature. A prompt of t (x, y) pairs is laid out as 2t tokens (rows);
// each y is zero-padded to the covariate dimension before embedding.
//
// Masking: token row j attends to rows [max(0, j - 2S), j], which realizes
// autoregression plus a hard context window of S pairs in a single pass. At
// L = 1 this is exactly the truncated-history model; for deeper stacks the
// receptive field grows per layer, so predict_truncated() below evaluates the
// literal truncated-history definition (re-embed the last S pairs) wherever
// containment must hold for any L.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "icluq/autodiff.hpp"
#include "icluq/predict.hpp"
#include "icluq/rng.hpp"
#include "icluq/taskgen.hpp"
#include "icluq/tensor.hpp"

namespace icluq {

enum class PosMode { None, Builtin, Segment, FullRange };

inline const char* to_string(PosMode m) {
    switch (m) {
        case PosMode::None: return "none";
        case PosMode::Builtin: return "builtin";
        case PosMode::Segment: return "segment";
        case PosMode::FullRange: return "fullrange";
    }
    return "?";
}

struct ModelConfig {
    std::int64_t layers = 4;
    std::int64_t heads = 4;
    std::int64_t d_in = 8;    // token content dimension (= covariate d)
    std::int64_t d_embed = 64; // embedding width; d_embed == d_in is theory mode
    std::int64_t d_key = 16;  // per-head key/query dimension
    std::int64_t d_hidden = 256;
    std::int64_t window = 128; // context window S in (x, y) pairs
    PosMode pos_mode = PosMode::None;
    double pos_scale = 1.0;

    bool theory_mode() const { return d_embed == d_in; }

    void validate() const {
        if (layers < 1 || heads < 1 || d_key < 1 || d_hidden < 1)
            throw DomainError("model: layers/heads/d_key/d_hidden must be >= 1");
        if (window < 1) throw DomainError("model: window must be >= 1");
        if (d_embed < d_in) throw DomainError("model: d_embed must be >= d_in");
        if (!(pos_scale > 0.0)) throw DomainError("model: pos_scale must be > 0");
    }
};

struct ModelParams {
    struct Head {
        Tensor wq; // [d_key x D]
        Tensor wk; // [d_key x D]
        Tensor wv; // [D x D]
    };
    struct Layer {
        std::vector<Head> heads;
        Tensor a1; // [d_hidden x D]
        Tensor a2; // [D x d_hidden]
    };
    std::vector<Layer> layers;
    Tensor embed;   // [D x d_in]
    Tensor readout; // [2 x D]
    bool embed_trainable = true;

    template <typename F>
    void for_each(F&& f) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& layer = layers[l];
            const std::string lp = "layer" + std::to_string(l) + ".";
            for (std::size_t m = 0; m < layer.heads.size(); ++m) {
                const std::string hp = lp + "head" + std::to_string(m) + ".";
                f(hp + "wq", layer.heads[m].wq);
                f(hp + "wk", layer.heads[m].wk);
                f(hp + "wv", layer.heads[m].wv);
            }
            f(lp + "mlp.a1", layer.a1);
            f(lp + "mlp.a2", layer.a2);
        }
        f("embed", embed);
        f("readout", readout);
    }

    template <typename F>
    void for_each(F&& f) const {
        const_cast<ModelParams*>(this)->for_each(
            [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
    }

    // Trainable tensors (embed is frozen at identity in theory mode).
    template <typename F>
    void for_each_trainable(F&& f) {
        for_each([&](const std::string& name, Tensor& t) {
            if (name == "embed" && !embed_trainable) return;
            f(name, t);
        });
    }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
        return n;
    }
};

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng, const std::string& scheme = "gaussian",
                               double init_std = 0.02) {
    cfg.validate();
    const bool zero = (scheme == "zero");
    if (!zero && scheme != "gaussian") throw DomainError("init_params: unknown scheme " + scheme);
    auto mat = [&](std::int64_t r, std::int64_t c) {
        return zero ? Tensor(r, c) : rng.normal_matrix(r, c, init_std);
    };
    ModelParams p;
    p.layers.resize(static_cast<std::size_t>(cfg.layers));
    for (auto& layer : p.layers) {
        layer.heads.resize(static_cast<std::size_t>(cfg.heads));
        for (auto& h : layer.heads) {
            h.wq = mat(cfg.d_key, cfg.d_embed);
            h.wk = mat(cfg.d_key, cfg.d_embed);
            h.wv = mat(cfg.d_embed, cfg.d_embed);
        }
        layer.a1 = mat(cfg.d_hidden, cfg.d_embed);
        layer.a2 = mat(cfg.d_embed, cfg.d_hidden);
    }
    if (cfg.theory_mode()) {
        p.embed = Tensor::identity(cfg.d_in);
        p.embed_trainable = false;
    } else {
        p.embed = mat(cfg.d_embed, cfg.d_in);
        p.embed_trainable = true;
    }
    p.readout = mat(2, cfg.d_embed);
    return p;
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

// Token content rows for a prompt of t_pairs full pairs plus optionally a
// trailing query x (include_trailing_y == false drops the final y token).
inline Tensor token_content(const PromptSequence& seq, std::int64_t first_pair,
                            std::int64_t n_pairs, bool include_trailing_y) {
    const std::int64_t d = seq.dim();
    const std::int64_t n_tok = 2 * n_pairs - (include_trailing_y ? 0 : 1);
    Tensor c(n_tok, d);
    for (std::int64_t s = 0; s < n_pairs; ++s) {
        const std::int64_t pair = first_pair + s;
        double* xrow = c.row_ptr(2 * s);
        const double* src = seq.xs.row_ptr(pair);
        for (std::int64_t j = 0; j < d; ++j) xrow[j] = src[j];
        if (2 * s + 1 < n_tok) c(2 * s + 1, 0) = seq.ys[pair]; // y zero-padded to d
    }
    return c;
}

// Positional offsets in embedding space: token j (1-indexed) gets
// pos_scale * (j + offset) added to its first coordinate.
inline Tensor position_matrix(std::int64_t n_tok, std::int64_t d_embed, const ModelConfig& cfg,
                              std::int64_t offset) {
    Tensor p(n_tok, d_embed);
    if (cfg.pos_mode == PosMode::None) return p;
    for (std::int64_t j = 0; j < n_tok; ++j)
        p(j, 0) = cfg.pos_scale * static_cast<double>(j + 1 + offset);
    return p;
}

inline std::int64_t sample_pos_offset(const ModelConfig& cfg, Rng& rng) {
    switch (cfg.pos_mode) {
        case PosMode::Segment: return static_cast<std::int64_t>(rng.below(23));
        case PosMode::FullRange: return static_cast<std::int64_t>(rng.below(101));
        default: return 0;
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

struct ForwardResult {
    Tape tape;
    Var y_hat;  // [n_predictions]
    Var sigma;  // [n_predictions]
    std::vector<Var> leaves;      // tape leaves, in ModelParams::for_each_trainable order
};

// Runs the full pass over the given token content. Predictions are emitted at
// every x row (rows 0, 2, 4, ...).
inline ForwardResult forward_tokens(const ModelParams& params, const ModelConfig& cfg,
                                    const Tensor& content, std::int64_t pos_offset,
                                    bool with_grad) {
    cfg.validate();
    const std::int64_t n_tok = content.rows();
    ForwardResult res;
    Tape& tape = res.tape;

    std::vector<Var> leaves;
    std::vector<const Tensor*> leaf_src;
    if (with_grad) {
        const_cast<ModelParams&>(params).for_each_trainable(
            [&](const std::string&, Tensor& t) {
                leaves.push_back(tape.leaf(t));
                leaf_src.push_back(&t);
            });
    }
    auto var_of = [&](const Tensor& t) -> Var {
        for (std::size_t i = 0; i < leaf_src.size(); ++i) {
            if (leaf_src[i] == &t) return leaves[i];
        }
        return tape.constant(t);
    };

    // Embed: Z = C E^T (+ positional offsets).
    Var c_var = tape.constant(content);
    Var e_var = var_of(params.embed);
    Var z = tape.matmul_nt(c_var, e_var);
    if (cfg.pos_mode != PosMode::None) {
        z = tape.add(z, tape.constant(position_matrix(n_tok, cfg.d_embed, cfg, pos_offset)));
    }

    // Window lows: token j attends to [max(0, j - 2S), j].
    std::vector<std::int32_t> lows(static_cast<std::size_t>(n_tok));
    for (std::int64_t j = 0; j < n_tok; ++j)
        lows[static_cast<std::size_t>(j)] =
            static_cast<std::int32_t>(std::max<std::int64_t>(0, j - 2 * cfg.window));

    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        for (const auto& head : layer.heads) {
            Var q = tape.matmul_nt(z, var_of(head.wq));
            Var k = tape.matmul_nt(z, var_of(head.wk));
            Var v = tape.matmul_nt(z, var_of(head.wv));
            Var h = tape.windowed_attention(q, k, v, lows);
            z = tape.add(z, h);
        }
        Var h1 = tape.matmul_nt(z, var_of(layer.a1));
        Var r = tape.relu(h1);
        Var m = tape.matmul_nt(r, var_of(layer.a2));
        z = tape.add(z, m);
        if (!tape.val(z).all_finite()) {
            throw DomainError("forward: non-finite activation after layer " + std::to_string(l));
        }
    }

    Var logits = tape.matmul_nt(z, var_of(params.readout));
    std::vector<std::int32_t> xrows;
    for (std::int64_t j = 0; j < n_tok; j += 2) xrows.push_back(static_cast<std::int32_t>(j));
    Var sel = tape.select_rows(logits, std::move(xrows));
    res.y_hat = tape.column(sel, 0);
    res.sigma = tape.softplus(tape.column(sel, 1));
    res.leaves = std::move(leaves);
    return res;
}

// Predictions at every position of a full prompt sequence.
inline std::vector<Prediction> forward(const ModelParams& params, const ModelConfig& cfg,
                                       const PromptSequence& seq, std::int64_t pos_offset = 0) {
    const Tensor content = token_content(seq, 0, seq.length(), true);
    ForwardResult res = forward_tokens(params, cfg, content, pos_offset, false);
    const Tensor& yh = res.tape.val(res.y_hat);
    const Tensor& sg = res.tape.val(res.sigma);
    std::vector<Prediction> out(static_cast<std::size_t>(seq.length()));
    for (std::int64_t t = 0; t < seq.length(); ++t)
        out[static_cast<std::size_t>(t)] = Prediction{yh[t], sg[t]};
    return out;
}

// Prediction at position t_pairs + 1 given the first t_pairs pairs: runs the
// pass on the prefix prompt (2 t_pairs + 1 tokens). Bit-identical to the
// matching output of forward() on any extension.
inline Prediction predict_at(const ModelParams& params, const ModelConfig& cfg,
                             const PromptSequence& seq, std::int64_t t_pairs,
                             std::int64_t pos_offset = 0) {
    const Tensor content = token_content(seq, 0, t_pairs + 1, false);
    ForwardResult res = forward_tokens(params, cfg, content, pos_offset, false);
    const Tensor& yh = res.tape.val(res.y_hat);
    const Tensor& sg = res.tape.val(res.sigma);
    return Prediction{yh[t_pairs], sg[t_pairs]};
}

// The literal truncated-history model TF(H_t^S): keep only the last
// min(S, t_pairs) pairs, re-embed them as a fresh prompt, and predict at its
// final position. Containment inside the window holds for any depth.
inline Prediction predict_truncated(const ModelParams& params, const ModelConfig& cfg,
                                    const PromptSequence& seq, std::int64_t t_pairs) {
    const std::int64_t use = std::min<std::int64_t>(cfg.window, t_pairs);
    PromptSequence view;
    view.xs = Tensor(use + 1, seq.dim());
    view.ys = Tensor::vector(use + 1);
    for (std::int64_t s = 0; s < use; ++s) {
        for (std::int64_t j = 0; j < seq.dim(); ++j) view.xs(s, j) = seq.xs(t_pairs - use + s, j);
        view.ys[s] = seq.ys[t_pairs - use + s];
    }
    for (std::int64_t j = 0; j < seq.dim(); ++j) view.xs(use, j) = seq.xs(t_pairs, j);
    const Tensor content = token_content(view, 0, use + 1, false);
    ForwardResult res = forward_tokens(params, cfg, content, 0, false);
    const Tensor& yh = res.tape.val(res.y_hat);
    const Tensor& sg = res.tape.val(res.sigma);
    return Prediction{yh[use], sg[use]};
}

inline SequencePredictor transformer_predictor(ModelParams params, ModelConfig cfg,
                                               std::int64_t pos_offset = 0) {
    auto p = std::make_shared<ModelParams>(std::move(params));
    return [p, cfg, pos_offset](const PromptSequence& seq) {
        return forward(*p, cfg, seq, pos_offset);
    };
}

// ---------------------------------------------------------------------------
// Norms and the boundedness certificate
// ---------------------------------------------------------------------------

struct NormReport {
    std::vector<std::pair<std::string, double>> blocks; // per-tensor norms
    double b_p = 0.0; // ||P^T||_{2,inf}
    double b_a = 0.0; // max ||A_i||_{2,2}
    double b_v = 0.0; // max ||W_V||_{2,2}
    double b_w = 0.0; // max over W_Q, W_K, W_V spectral norms
    double theta_norm = 0.0; // max{||W||, ||A||, ||P||}
};

inline NormReport param_norms(const ModelParams& params) {
    NormReport rep;
    double w_norm = 0.0, a_norm = 0.0;
    params.for_each([&](const std::string& name, const Tensor& t) {
        double n;
        if (name == "readout") {
            // ||P^T||_{2,inf}: max row 2-norm of P.
            double best = 0.0;
            for (std::int64_t i = 0; i < t.rows(); ++i) {
                double s = 0.0;
                for (std::int64_t j = 0; j < t.cols(); ++j) s += t(i, j) * t(i, j);
                best = std::max(best, std::sqrt(s));
            }
            n = best;
            rep.b_p = best;
        } else {
            n = spectral_norm(t);
            if (name.find(".wv") != std::string::npos) rep.b_v = std::max(rep.b_v, n);
            if (name.find(".wq") != std::string::npos || name.find(".wk") != std::string::npos ||
                name.find(".wv") != std::string::npos) {
                w_norm = std::max(w_norm, n);
            }
            if (name.find(".a1") != std::string::npos || name.find(".a2") != std::string::npos) {
                a_norm = std::max(a_norm, n);
            }
        }
        rep.blocks.emplace_back(name, n);
    });
    rep.b_a = a_norm;
    rep.b_w = w_norm;
    rep.theta_norm = std::max({w_norm, a_norm, rep.b_p});
    return rep;
}

struct CertificateReport {
    double c1 = 0.0;
    double c2 = 0.0;
    double input_bound = 0.0;   // effective ||H||_{2,inf} bound after embedding
    double sigma_lo = 0.0;      // softplus(-c1 * input_bound)
    double sigma_hi = 0.0;      // 1 + c1 * input_bound
    double max_abs_y_hat = 0.0;
    double min_sigma = 1e300;
    double max_sigma = 0.0;
    double max_abs_loss = 0.0;
    std::int64_t violations = 0;
    std::int64_t checks = 0;
};

// Samples random prompts with ||x||_2 <= B_H and |y| <= B_H and verifies the
// layer-peeling output bounds and the loss bound they imply. The sigma lower
// bound is softplus(-C1 B_H): the softplus of a bounded logit, which is what
// the layer-peeling argument actually yields.
inline CertificateReport boundedness_certificate(const ModelParams& params, const ModelConfig& cfg,
                                                 double b_h, std::int64_t trials,
                                                 std::uint64_t seed) {
    if (cfg.pos_mode != PosMode::None) {
        throw DomainError("boundedness_certificate: positional offsets are unbounded; "
                          "use pos_mode=none");
    }
    const NormReport norms = param_norms(params);
    CertificateReport rep;
    const double embed_gain = params.embed_trainable || cfg.d_embed != cfg.d_in
                                  ? spectral_norm(params.embed)
                                  : 1.0;
    rep.input_bound = embed_gain * b_h;
    const double layer_gain =
        std::pow((1.0 + norms.b_a * norms.b_a) * (1.0 + static_cast<double>(cfg.heads) * norms.b_v),
                 static_cast<double>(cfg.layers));
    rep.c1 = norms.b_p * layer_gain;
    const double u = rep.c1 * rep.input_bound;
    rep.sigma_lo = softplus(-u);
    rep.sigma_hi = 1.0 + u;
    const double log_bound = std::max(-std::log(rep.sigma_lo), std::abs(std::log(rep.sigma_hi)));
    rep.c2 = log_bound + (b_h + u) * (b_h + u) / (2.0 * rep.sigma_lo * rep.sigma_lo);

    const double tol = 1e-9 * (1.0 + u);
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        Rng rng(seed, "certificate", static_cast<std::uint64_t>(trial));
        const std::int64_t t_pairs = 1 + static_cast<std::int64_t>(rng.below(6));
        PromptSequence seq;
        seq.xs = Tensor(t_pairs, cfg.d_in);
        seq.ys = Tensor::vector(t_pairs);
        for (std::int64_t s = 0; s < t_pairs; ++s) {
            Tensor x = rng.normal_vector(cfg.d_in);
            const double nrm = norm2(x);
            const double r = b_h * std::pow(rng.uniform(), 1.0 / static_cast<double>(cfg.d_in));
            for (std::int64_t j = 0; j < cfg.d_in; ++j) seq.xs(s, j) = x[j] / nrm * r;
            seq.ys[s] = rng.uniform(-b_h, b_h);
        }
        const std::vector<Prediction> preds = forward(params, cfg, seq);
        for (std::int64_t t = 0; t < t_pairs; ++t) {
            const Prediction& p = preds[static_cast<std::size_t>(t)];
            const double loss = nll_loss(p, seq.ys[t]);
            rep.max_abs_y_hat = std::max(rep.max_abs_y_hat, std::abs(p.y_hat));
            rep.min_sigma = std::min(rep.min_sigma, p.sigma_hat);
            rep.max_sigma = std::max(rep.max_sigma, p.sigma_hat);
            rep.max_abs_loss = std::max(rep.max_abs_loss, std::abs(loss));
            ++rep.checks;
            const bool ok = std::abs(p.y_hat) <= u + tol && p.sigma_hat >= rep.sigma_lo - tol &&
                            p.sigma_hat <= rep.sigma_hi + tol && std::abs(loss) <= rep.c2 + tol;
            if (!ok) ++rep.violations;
        }
    }
    return rep;
}

} // namespace icluq
