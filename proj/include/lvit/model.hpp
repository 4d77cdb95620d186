#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "lvit/errors.hpp"
#include "lvit/rng.hpp"
#include "lvit/tape.hpp"
#include "lvit/tensor.hpp"

namespace lvit {

/// Hyperparameters of the lightweight vision transformer. Defaults give the
/// 48x48 / 9-patch, 2-layer, 2-head, 256-wide, 10-class classifier.
struct ModelConfig {
    std::size_t image_size = 48;
    std::size_t patch_size = 16;
    std::size_t in_channels = 1;
    std::size_t embed_dim = 256;
    std::size_t num_heads = 2;
    std::size_t num_layers = 2;
    std::size_t mlp_ratio = 4;
    double dropout_p = 0.3;
    std::size_t num_classes = 10;

    std::size_t grid() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t seq_len() const { return num_patches() + 1; }
    std::size_t patch_dim() const { return patch_size * patch_size * in_channels; }
    std::size_t head_dim() const { return embed_dim / num_heads; }
    std::size_t hidden_dim() const { return embed_dim * mlp_ratio; }

    void validate() const {
        if (image_size == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 ||
            num_layers == 0 || mlp_ratio == 0) {
            throw ValueError("model config fields must be positive");
        }
        if (in_channels != 1) throw ValueError("only single-channel images are supported");
        if (image_size % patch_size != 0) {
            throw ValueError("image_size " + std::to_string(image_size) +
                             " is not divisible by patch_size " + std::to_string(patch_size));
        }
        if (embed_dim % num_heads != 0) {
            throw ValueError("embed_dim " + std::to_string(embed_dim) +
                             " is not divisible by num_heads " + std::to_string(num_heads));
        }
        if (dropout_p < 0.0 || dropout_p >= 1.0) {
            throw ValueError("dropout_p must be in [0,1)");
        }
        if (num_classes < 2) throw ValueError("num_classes must be at least 2");
    }
};

/// Owns every learnable tensor, in a fixed enumeration order (also the
/// initialization draw order and the checkpoint serialization order):
/// W_patch, class_token, pos_embed, then per layer l = 1..L the prefix
/// "layer<l>." with ln1, W_q/b_q, W_k/b_k, W_v/b_v, W_o/b_o, ln2,
/// W_ffn1/b_ffn1, W_ffn2/b_ffn2, and finally head.ln.gain/bias, W_head,
/// b_head.
class ModelParams {
public:
    explicit ModelParams(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t d = cfg_.embed_dim;
        add("W_patch", {d, cfg_.patch_dim()});
        add("class_token", {d});
        add("pos_embed", {cfg_.seq_len(), d});
        for (std::size_t l = 1; l <= cfg_.num_layers; ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            add(pre + "ln1.gain", {d});
            add(pre + "ln1.bias", {d});
            add(pre + "W_q", {d, d});
            add(pre + "b_q", {d});
            add(pre + "W_k", {d, d});
            add(pre + "b_k", {d});
            add(pre + "W_v", {d, d});
            add(pre + "b_v", {d});
            add(pre + "W_o", {d, d});
            add(pre + "b_o", {d});
            add(pre + "ln2.gain", {d});
            add(pre + "ln2.bias", {d});
            add(pre + "W_ffn1", {cfg_.hidden_dim(), d});
            add(pre + "b_ffn1", {cfg_.hidden_dim()});
            add(pre + "W_ffn2", {d, cfg_.hidden_dim()});
            add(pre + "b_ffn2", {d});
        }
        add("head.ln.gain", {d});
        add("head.ln.bias", {d});
        add("W_head", {cfg_.num_classes, d});
        add("b_head", {cfg_.num_classes});
    }

    ModelParams(const ModelParams&) = delete;
    ModelParams& operator=(const ModelParams&) = delete;
    ModelParams(ModelParams&&) = default;
    ModelParams& operator=(ModelParams&&) = default;

    const ModelConfig& config() const { return cfg_; }

    Parameter& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw ContractError("unknown parameter: " + name);
        return *it->second;
    }

    const Parameter& at(const std::string& name) const {
        return const_cast<ModelParams*>(this)->at(name);
    }

    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    const std::vector<Parameter*>& all() { return order_; }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const Parameter* p : order_) n += p->value.numel();
        return n;
    }

private:
    void add(std::string name, Shape shape) {
        store_.emplace_back(std::move(name), Tensor(std::move(shape)));
        Parameter& p = store_.back();
        order_.push_back(&p);
        by_name_.emplace(p.name, &p);
    }

    ModelConfig cfg_;
    std::deque<Parameter> store_;
    std::vector<Parameter*> order_;
    std::unordered_map<std::string, Parameter*> by_name_;
};

/// Closed-form learnable scalar count for a config; always equals
/// ModelParams::total_params().
inline std::size_t count_params(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, hd = cfg.hidden_dim(), k = cfg.num_classes;
    const std::size_t per_layer =
        2 * d + 4 * (d * d + d) + 2 * d + (hd * d + hd) + (d * hd + d);
    return d * cfg.patch_dim() + d + cfg.seq_len() * d + cfg.num_layers * per_layer + 2 * d +
           k * d + k;
}

/// Fresh parameters: 2-D weights and pos_embed from the corrected truncated
/// normal (std 0.02), norm gains one, everything else zero. Draws happen in
/// enumeration order, row-major within each tensor, so a seed fully
/// determines the result.
inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
    ModelParams mp(cfg);
    for (Parameter* p : mp.all()) {
        if (p->name.ends_with(".gain")) {
            for (double& v : p->value.data) v = 1.0;
        } else if (p->name == "pos_embed" || p->value.rank() == 2) {
            for (double& v : p->value.data) v = rng.truncated_normal(0.02);
        }
        // biases, norm biases and the class token stay zero
    }
    return mp;
}

/// Cuts the image into non-overlapping patches: grid raster order, each
/// patch flattened row-major, giving [num_patches x patch_dim].
inline Tensor patchify(const Tensor& image, const ModelConfig& cfg) {
    if (image.rank() != 2 || image.shape[0] != cfg.image_size ||
        image.shape[1] != cfg.image_size) {
        throw ShapeError("patchify expects a " + std::to_string(cfg.image_size) + "x" +
                         std::to_string(cfg.image_size) + " image, got " + shape_str(image.shape));
    }
    const std::size_t g = cfg.grid(), ps = cfg.patch_size;
    Tensor out({g * g, ps * ps});
    for (std::size_t gr = 0; gr < g; ++gr)
        for (std::size_t gc = 0; gc < g; ++gc)
            for (std::size_t pr = 0; pr < ps; ++pr)
                for (std::size_t pc = 0; pc < ps; ++pc)
                    out.data[(gr * g + gc) * ps * ps + pr * ps + pc] =
                        image.data[(gr * ps + pr) * cfg.image_size + gc * ps + pc];
    return out;
}

/// Projects patches (no bias), prepends the class token, adds positional
/// embeddings, and applies embedding dropout. Returns [seq_len x D].
inline Tensor embed_sequence(Tape& tape, ModelParams& mp, const Tensor& patches, bool training,
                             Rng& rng) {
    const ModelConfig& cfg = mp.config();
    if (patches.rank() != 2 || patches.shape[0] != cfg.num_patches() ||
        patches.shape[1] != cfg.patch_dim()) {
        throw ShapeError("patch matrix " + shape_str(patches.shape) + " does not match config [" +
                         std::to_string(cfg.num_patches()) + " x " +
                         std::to_string(cfg.patch_dim()) + "]");
    }
    Tensor proj = tape.matmul(tape.constant(patches), tape.transpose(tape.watch(mp.at("W_patch"))));
    Tensor cls = tape.reshape(tape.watch(mp.at("class_token")), {1, cfg.embed_dim});
    Tensor seq = tape.add(tape.concat({cls, proj}, 0), tape.watch(mp.at("pos_embed")));
    return tape.dropout(seq, cfg.dropout_p, rng, training);
}

/// Multi-head self-attention for layer `layer` (1-based): per head,
/// softmax(Q Kᵀ / sqrt(D/h)) V, heads concatenated and projected. Dropout on
/// the attention weights and on the projected output.
inline Tensor mhsa(Tape& tape, ModelParams& mp, std::size_t layer, const Tensor& x, bool training,
                   Rng& rng) {
    const ModelConfig& cfg = mp.config();
    const std::string pre = "layer" + std::to_string(layer) + ".";
    auto affine = [&](const std::string& w, const std::string& b, const Tensor& in) {
        return tape.add_row(tape.matmul(in, tape.transpose(tape.watch(mp.at(pre + w)))),
                            tape.watch(mp.at(pre + b)));
    };
    Tensor q = affine("W_q", "b_q", x);
    Tensor k = affine("W_k", "b_k", x);
    Tensor v = affine("W_v", "b_v", x);
    const std::size_t dh = cfg.head_dim();
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t i = 0; i < cfg.num_heads; ++i) {
        Tensor qh = tape.slice(q, 1, i * dh, dh);
        Tensor kh = tape.slice(k, 1, i * dh, dh);
        Tensor vh = tape.slice(v, 1, i * dh, dh);
        Tensor attn = tape.softmax_lastaxis(tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_scale));
        attn = tape.dropout(attn, cfg.dropout_p, rng, training);
        heads.push_back(tape.matmul(attn, vh));
    }
    Tensor out = affine("W_o", "b_o", tape.concat(heads, 1));
    return tape.dropout(out, cfg.dropout_p, rng, training);
}

/// One pre-norm encoder layer: x + MSA(LN(x)), then y + FFN(LN(y)) where the
/// FFN is linear(r·D) → GELU → linear(D) with dropout on the sublayer output.
inline Tensor encoder_layer(Tape& tape, ModelParams& mp, std::size_t layer, const Tensor& x,
                            bool training, Rng& rng) {
    const ModelConfig& cfg = mp.config();
    const std::string pre = "layer" + std::to_string(layer) + ".";
    Tensor n1 = tape.layer_norm(x, tape.watch(mp.at(pre + "ln1.gain")),
                                tape.watch(mp.at(pre + "ln1.bias")));
    Tensor y = tape.add(x, mhsa(tape, mp, layer, n1, training, rng));
    Tensor n2 = tape.layer_norm(y, tape.watch(mp.at(pre + "ln2.gain")),
                                tape.watch(mp.at(pre + "ln2.bias")));
    Tensor hidden = tape.gelu(
        tape.add_row(tape.matmul(n2, tape.transpose(tape.watch(mp.at(pre + "W_ffn1")))),
                     tape.watch(mp.at(pre + "b_ffn1"))));
    Tensor ffn = tape.add_row(tape.matmul(hidden, tape.transpose(tape.watch(mp.at(pre + "W_ffn2")))),
                              tape.watch(mp.at(pre + "b_ffn2")));
    ffn = tape.dropout(ffn, cfg.dropout_p, rng, training);
    return tape.add(y, ffn);
}

/// Full network on an already-patchified input; returns the class-token
/// logits as a [1 x K] row (batched losses concatenate these).
inline Tensor forward_patches(Tape& tape, ModelParams& mp, const Tensor& patches, bool training,
                              Rng& rng) {
    Tensor seq = embed_sequence(tape, mp, patches, training, rng);
    for (std::size_t l = 1; l <= mp.config().num_layers; ++l)
        seq = encoder_layer(tape, mp, l, seq, training, rng);
    Tensor fin = tape.layer_norm(seq, tape.watch(mp.at("head.ln.gain")),
                                 tape.watch(mp.at("head.ln.bias")));
    Tensor cls = tape.slice(fin, 0, 0, 1);
    return tape.add_row(tape.matmul(cls, tape.transpose(tape.watch(mp.at("W_head")))),
                        tape.watch(mp.at("b_head")));
}

/// patchify → embed → L encoder layers → final norm → affine head on the
/// class token. Returns logits of shape [K].
inline Tensor forward(Tape& tape, ModelParams& mp, const Tensor& image, bool training, Rng& rng) {
    Tensor row = forward_patches(tape, mp, patchify(image, mp.config()), training, rng);
    return tape.reshape(row, {mp.config().num_classes});
}

/// Hard decision from a logit vector: argmax, ties to the lowest index.
inline std::size_t predict(const Tensor& logits) {
    if (logits.numel() == 0) throw ShapeError("predict on empty logits");
    std::size_t best = 0;
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        if (!std::isfinite(logits.data[i])) {
            throw ContractError("non-finite logit at index " + std::to_string(i));
        }
        if (logits.data[i] > logits.data[best]) best = i;
    }
    return best;
}

/// Plain softmax of a logit vector (reporting helper, not differentiated).
inline std::vector<double> softmax_values(const std::vector<double>& z) {
    if (z.empty()) throw ValueError("softmax of empty vector");
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    std::vector<double> out(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

}  // namespace lvit
