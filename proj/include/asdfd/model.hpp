#pragma once

#include <memory>
#include <string>
#include <vector>

#include "asdfd/ops.hpp"
#include "asdfd/optim.hpp"
#include "asdfd/rng.hpp"
#include "asdfd/text.hpp"

namespace asdfd {

struct ModelConfig {
    int num_layers = 4;
    int hidden_dim = 64;
    int num_heads = 4;
    int ff_dim = 256;
    int vocab_size = 0;
    int max_len = 64;
    int num_classes = 4;
    double ln_eps = 1e-12;

    void validate() const {
        if (num_layers < 1) throw config_error("model: num_layers must be >= 1");
        if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0)
            throw config_error("model: hidden_dim must be divisible by num_heads");
        if (ff_dim < 1) throw config_error("model: ff_dim must be >= 1");
        if (vocab_size < kNumReserved) throw config_error("model: vocab_size must cover reserved ids");
        if (max_len < 3) throw config_error("model: max_len must be >= 3 ([CLS] x [SEP])");
        if (num_classes < 2) throw config_error("model: need at least two classes");
        if (!(ln_eps > 0)) throw config_error("model: ln_eps must be positive");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Token + position tables with the embedding-layer norm. Shared by reference
// between teacher and student once distillation starts.
template <class S>
struct EmbeddingTable {
    Tensor<S> tok;   // vocab_size x d
    Tensor<S> pos;   // max_len x d
    Tensor<S> ln_g;  // d
    Tensor<S> ln_b;  // d

    std::vector<Tensor<S>> params() const { return {tok, pos, ln_g, ln_b}; }

    void set_frozen(bool v) const {
        for (auto& p : params()) {
            p.set_frozen(v);
            p.set_requires_grad(!v && p.requires_grad());
        }
    }
    bool frozen() const { return tok.frozen(); }
};

template <class S>
struct EncoderLayer {
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<S> ln1_g, ln1_b;
    Tensor<S> w1, b1, w2, b2;
    Tensor<S> ln2_g, ln2_b;

    std::vector<Tensor<S>> params() const {
        return {wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b};
    }
};

template <class S>
struct ClassifierHead {
    Tensor<S> pool_w, pool_b;  // d x d pooler with tanh
    Tensor<S> cls_w, cls_b;    // d x num_classes

    std::vector<Tensor<S>> params() const { return {pool_w, pool_b, cls_w, cls_b}; }
};

template <class S>
struct ForwardOut {
    Tensor<S> logits;  // (B, C)
    Tensor<S> h_cls;   // (B, D)
    Tensor<S> h_all;   // (B, L, D)
};

// BERT-style post-LN encoder classifier: EmbeddingLayer -> TransformerLayers
// -> ClassifierLayer over the [CLS] hidden state.
template <class S>
class Model {
public:
    ModelConfig cfg;
    std::shared_ptr<EmbeddingTable<S>> embedding;
    std::vector<EncoderLayer<S>> layers;
    ClassifierHead<S> head;

    static Model random_init(const ModelConfig& cfg, Rng& rng, double init_std = 0.02) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        const int d = cfg.hidden_dim;
        auto table = std::make_shared<EmbeddingTable<S>>();
        table->tok = Tensor<S>::randn({cfg.vocab_size, d}, rng, 0.0, init_std);
        table->pos = Tensor<S>::randn({cfg.max_len, d}, rng, 0.0, init_std);
        table->ln_g = Tensor<S>::full({d}, S(1));
        table->ln_b = Tensor<S>::zeros({d});
        m.embedding = table;
        for (int i = 0; i < cfg.num_layers; ++i) {
            EncoderLayer<S> layer;
            layer.wq = Tensor<S>::randn({d, d}, rng, 0.0, init_std);
            layer.bq = Tensor<S>::zeros({d});
            layer.wk = Tensor<S>::randn({d, d}, rng, 0.0, init_std);
            layer.bk = Tensor<S>::zeros({d});
            layer.wv = Tensor<S>::randn({d, d}, rng, 0.0, init_std);
            layer.bv = Tensor<S>::zeros({d});
            layer.wo = Tensor<S>::randn({d, d}, rng, 0.0, init_std);
            layer.bo = Tensor<S>::zeros({d});
            layer.ln1_g = Tensor<S>::full({d}, S(1));
            layer.ln1_b = Tensor<S>::zeros({d});
            layer.w1 = Tensor<S>::randn({d, cfg.ff_dim}, rng, 0.0, init_std);
            layer.b1 = Tensor<S>::zeros({cfg.ff_dim});
            layer.w2 = Tensor<S>::randn({cfg.ff_dim, d}, rng, 0.0, init_std);
            layer.b2 = Tensor<S>::zeros({d});
            layer.ln2_g = Tensor<S>::full({d}, S(1));
            layer.ln2_b = Tensor<S>::zeros({d});
            m.layers.push_back(layer);
        }
        m.head.pool_w = Tensor<S>::randn({d, d}, rng, 0.0, init_std);
        m.head.pool_b = Tensor<S>::zeros({d});
        m.head.cls_w = Tensor<S>::randn({d, cfg.num_classes}, rng, 0.0, init_std);
        m.head.cls_b = Tensor<S>::zeros({cfg.num_classes});
        return m;
    }

    // e = layer_norm(token_emb + position_emb); token rows padded to a common
    // length by the caller.
    Tensor<S> embed(const std::vector<int>& ids, int batch) const {
        if (batch < 1 || ids.size() % static_cast<size_t>(batch) != 0)
            throw shape_error("embed: ids not divisible into batch rows");
        const int l = static_cast<int>(ids.size() / static_cast<size_t>(batch));
        if (l > cfg.max_len) throw std::invalid_argument("embed: sequence longer than max_len");
        auto pre = embedding_lookup(embedding->tok, embedding->pos, ids, batch, l);
        return layer_norm(pre, embedding->ln_g, embedding->ln_b, static_cast<S>(cfg.ln_eps));
    }

    Tensor<S> encode(const Tensor<S>& e, const AttentionMask& mask) const {
        if (e.rank() != 3 || e.dim(2) != cfg.hidden_dim)
            throw shape_error("encode: expected (B,L,D) with model width, got " + e.shape_str());
        if (mask.batch != e.dim(0) || mask.len != e.dim(1)) throw shape_error("encode: mask shape mismatch");
        const S eps = static_cast<S>(cfg.ln_eps);
        Tensor<S> x = e;
        for (const auto& layer : layers) {
            auto q = linear(x, layer.wq, layer.bq);
            auto k = linear(x, layer.wk, layer.bk);
            auto v = linear(x, layer.wv, layer.bv);
            auto attn = attention(q, k, v, mask, cfg.num_heads);
            auto h1 = layer_norm(add(x, linear(attn, layer.wo, layer.bo)), layer.ln1_g, layer.ln1_b, eps);
            auto ff = linear(gelu(linear(h1, layer.w1, layer.b1)), layer.w2, layer.b2);
            x = layer_norm(add(h1, ff), layer.ln2_g, layer.ln2_b, eps);
        }
        return x;
    }

    Tensor<S> classify(const Tensor<S>& h_cls) const {
        if (h_cls.rank() != 2 || h_cls.dim(1) != cfg.hidden_dim)
            throw shape_error("classify: expected (B,D), got " + h_cls.shape_str());
        auto pooled = tanh_act(linear(h_cls, head.pool_w, head.pool_b));
        return linear(pooled, head.cls_w, head.cls_b);
    }

    ForwardOut<S> forward_from_embeddings(const Tensor<S>& e, const AttentionMask& mask) const {
        ForwardOut<S> out;
        out.h_all = encode(e, mask);
        out.h_cls = gather_positions(out.h_all, std::vector<int>(static_cast<size_t>(e.dim(0)), 0));
        out.logits = classify(out.h_cls);
        return out;
    }

    Tensor<S> forward(const std::vector<int>& ids, int batch) const {
        auto e = embed(ids, batch);
        return forward_from_embeddings(e, attention_mask_from_ids(ids, batch)).logits;
    }

    // Embedding-layer output rows for a single repeated token: row p equals
    // the embedding of `token_id` at position p. Used for [CLS]/[SEP]/[PAD]
    // alignment rows and the [MASK] replacement row.
    Tensor<S> embed_token_rows(int token_id) const {
        NoGradGuard ng;
        std::vector<int> ids(static_cast<size_t>(cfg.max_len), token_id);
        auto block = embed(ids, 1);  // (1, max_len, d)
        return Tensor<S>({cfg.max_len, cfg.hidden_dim}, block.values());
    }

    static AttentionMask attention_mask_from_ids(const std::vector<int>& ids, int batch) {
        const int l = static_cast<int>(ids.size() / static_cast<size_t>(batch));
        AttentionMask mask(batch, l, 0);
        for (int b = 0; b < batch; ++b)
            for (int p = 0; p < l; ++p) mask.set(b, p, ids[static_cast<size_t>(b) * l + p] != kPadId);
        return mask;
    }

    std::vector<Tensor<S>> parameters() const {
        std::vector<Tensor<S>> out = embedding->params();
        for (const auto& layer : layers)
            for (auto& p : layer.params()) out.push_back(p);
        for (auto& p : head.params()) out.push_back(p);
        return out;
    }

    // Transformer layers + classifier head; excludes the embedding table.
    std::vector<Tensor<S>> trunk_and_head_parameters() const {
        std::vector<Tensor<S>> out;
        for (const auto& layer : layers)
            for (auto& p : layer.params()) out.push_back(p);
        for (auto& p : head.params()) out.push_back(p);
        return out;
    }

    void set_requires_grad(bool v) const {
        for (auto& p : parameters()) p.set_requires_grad(v && !p.frozen());
    }

    // Deep copy; the embedding table is duplicated too.
    Model clone() const {
        Model out;
        out.cfg = cfg;
        auto table = std::make_shared<EmbeddingTable<S>>();
        table->tok = embedding->tok.clone_detached();
        table->pos = embedding->pos.clone_detached();
        table->ln_g = embedding->ln_g.clone_detached();
        table->ln_b = embedding->ln_b.clone_detached();
        out.embedding = table;
        out.layers.reserve(layers.size());
        for (const auto& src : layers) {
            EncoderLayer<S> dst;
            dst.wq = src.wq.clone_detached();
            dst.bq = src.bq.clone_detached();
            dst.wk = src.wk.clone_detached();
            dst.bk = src.bk.clone_detached();
            dst.wv = src.wv.clone_detached();
            dst.bv = src.bv.clone_detached();
            dst.wo = src.wo.clone_detached();
            dst.bo = src.bo.clone_detached();
            dst.ln1_g = src.ln1_g.clone_detached();
            dst.ln1_b = src.ln1_b.clone_detached();
            dst.w1 = src.w1.clone_detached();
            dst.b1 = src.b1.clone_detached();
            dst.w2 = src.w2.clone_detached();
            dst.b2 = src.b2.clone_detached();
            dst.ln2_g = src.ln2_g.clone_detached();
            dst.ln2_b = src.ln2_b.clone_detached();
            out.layers.push_back(dst);
        }
        out.head.pool_w = head.pool_w.clone_detached();
        out.head.pool_b = head.pool_b.clone_detached();
        out.head.cls_w = head.cls_w.clone_detached();
        out.head.cls_b = head.cls_b.clone_detached();
        return out;
    }

    std::vector<std::vector<S>> snapshot_values() const {
        std::vector<std::vector<S>> out;
        for (const auto& p : parameters()) out.push_back(p.values());
        return out;
    }

    void restore_values(const std::vector<std::vector<S>>& snap) const {
        auto params = parameters();
        if (snap.size() != params.size()) throw shape_error("restore_values: parameter count mismatch");
        for (size_t i = 0; i < params.size(); ++i) {
            if (snap[i].size() != params[i].numel()) throw shape_error("restore_values: shape mismatch");
            params[i].values() = snap[i];
        }
    }

    uint64_t parameter_checksum() const { return checksum(parameters()); }
};

// Student layer k copies teacher layer layer_indices[k] (1-based); the head is
// copied and the embedding table is shared by reference and frozen.
template <class S>
Model<S> init_student_from_teacher(const Model<S>& teacher, const std::vector<int>& layer_indices) {
    Model<S> student;
    student.cfg = teacher.cfg;
    student.cfg.num_layers = static_cast<int>(layer_indices.size());
    if (layer_indices.empty()) throw std::invalid_argument("init_student: need at least one layer index");
    student.embedding = teacher.embedding;
    student.embedding->set_frozen(true);
    for (int idx : layer_indices) {
        if (idx < 1 || idx > teacher.cfg.num_layers)
            throw std::invalid_argument("init_student: layer index out of range");
        const auto& src = teacher.layers[static_cast<size_t>(idx - 1)];
        EncoderLayer<S> dst;
        auto copy = [](const Tensor<S>& t) { return t.clone_detached(); };
        dst.wq = copy(src.wq);
        dst.bq = copy(src.bq);
        dst.wk = copy(src.wk);
        dst.bk = copy(src.bk);
        dst.wv = copy(src.wv);
        dst.bv = copy(src.bv);
        dst.wo = copy(src.wo);
        dst.bo = copy(src.bo);
        dst.ln1_g = copy(src.ln1_g);
        dst.ln1_b = copy(src.ln1_b);
        dst.w1 = copy(src.w1);
        dst.b1 = copy(src.b1);
        dst.w2 = copy(src.w2);
        dst.b2 = copy(src.b2);
        dst.ln2_g = copy(src.ln2_g);
        dst.ln2_b = copy(src.ln2_b);
        student.layers.push_back(dst);
    }
    student.head.pool_w = teacher.head.pool_w.clone_detached();
    student.head.pool_b = teacher.head.pool_b.clone_detached();
    student.head.cls_w = teacher.head.cls_w.clone_detached();
    student.head.cls_b = teacher.head.cls_b.clone_detached();
    return student;
}

}  // namespace asdfd
