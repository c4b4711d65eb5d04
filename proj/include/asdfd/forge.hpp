#pragma once

#include <functional>

#include "asdfd/mask_predictor.hpp"
#include "asdfd/model.hpp"

namespace asdfd {

enum class TargetPolicy { uniform, balanced };

struct ForgeConfig {
    double mu = 0.0;
    double sigma = 0.35;
    double eta = 1e-2;  // embedding learning rate, fixed (no schedule)
    int n_iter = 5;
    int n_t = 5;
    int n_s = 1;
    int l_min = 8;
    TargetPolicy target_policy = TargetPolicy::balanced;
    // Ablation switches; both on for the full method.
    bool align_cls_sep = true;
    bool variable_length = true;

    void validate(int max_len) const {
        if (!(sigma > 0.0)) throw config_error("forge: sigma must be positive");
        if (n_iter < 1 || n_t < 1) throw config_error("forge: n_iter and n_T must be >= 1");
        if (n_s < 0) throw config_error("forge: n_S must be >= 0");
        if (l_min < 3 || l_min > max_len) throw config_error("forge: l_min must be in [3, max_len]");
        if (!(eta > 0.0)) throw config_error("forge: eta must be positive");
    }
};

// A batch of free-variable pseudo embeddings under construction. Frozen rows
// ([CLS], [SEP], padded tail) never move; the Adam state lives and dies with
// the batch.
template <class S>
struct PseudoBatch {
    Tensor<S> block;       // (B, L, D), requires grad during stage 1
    std::vector<int> targets;
    Tensor<S> soft_targets;  // (B, C) when crafting against soft labels; empty otherwise
    std::vector<int> lengths;
    std::vector<uint8_t> row_free;  // B*L, 1 = optimizable
    AttentionMask mask;
    std::vector<int> mask_positions;  // adversarial positions of the current outer iteration
    AdamState<S> adam;

    int batch_size() const { return block.dim(0); }
    bool row_is_free(int b, int p) const { return row_free[static_cast<size_t>(b) * block.dim(1) + p] != 0; }

    uint64_t frozen_row_checksum() const {
        uint64_t h = 1469598103934665603ull;
        const int l = block.dim(1), d = block.dim(2);
        for (int b = 0; b < batch_size(); ++b)
            for (int p = 0; p < l; ++p)
                if (!row_is_free(b, p))
                    h = fnv1a(block.data() + (static_cast<size_t>(b) * l + p) * d, sizeof(S) * static_cast<size_t>(d),
                              h);
        return h;
    }
};

struct StageOneStats {
    double l_input_init = 0.0;
    double l_input_end = 0.0;
    double l_mask_end = 0.0;
};

// Gaussian initialisation plus target/length sampling. Alignment constraints
// are applied separately.
template <class S>
PseudoBatch<S> init_batch(const ForgeConfig& cfg, const Model<S>& teacher, int batch, Rng& rng) {
    cfg.validate(teacher.cfg.max_len);
    if (batch < 1) throw std::invalid_argument("init_batch: batch must be >= 1");
    const int l = teacher.cfg.max_len, d = teacher.cfg.hidden_dim, c = teacher.cfg.num_classes;

    PseudoBatch<S> out;
    out.block = Tensor<S>::randn({batch, l, d}, rng, cfg.mu, cfg.sigma);
    out.block.set_requires_grad(true);
    out.targets.resize(static_cast<size_t>(batch));
    for (int i = 0; i < batch; ++i)
        out.targets[static_cast<size_t>(i)] = cfg.target_policy == TargetPolicy::balanced
                                                  ? i % c
                                                  : rng.uniform_int(0, c - 1);
    out.lengths.assign(static_cast<size_t>(batch), l);
    if (cfg.variable_length)
        for (auto& len : out.lengths) len = rng.uniform_int(cfg.l_min, l);
    out.row_free.assign(static_cast<size_t>(batch) * l, 1);
    out.mask = AttentionMask(batch, l, 1);
    out.adam = AdamState<S>(out.block.numel());
    return out;
}

// The three structural constraints: [CLS]/[SEP] rows pinned at both ends,
// tail rows pinned to [PAD] and masked out of attention. Pinned rows are the
// embedding-layer outputs of the corresponding template tokens, bit-exact.
template <class S>
void apply_alignment(const ForgeConfig& cfg, PseudoBatch<S>& batch, const Model<S>& teacher) {
    const int l = teacher.cfg.max_len, d = teacher.cfg.hidden_dim;
    NoGradGuard ng;
    auto cls_rows = teacher.embed_token_rows(kClsId);
    auto sep_rows = teacher.embed_token_rows(kSepId);
    auto pad_rows = teacher.embed_token_rows(kPadId);

    auto pin_row = [&](int b, int p, const Tensor<S>& rows) {
        std::copy_n(rows.data() + static_cast<size_t>(p) * d, d,
                    batch.block.data() + (static_cast<size_t>(b) * l + p) * d);
        batch.row_free[static_cast<size_t>(b) * l + p] = 0;
    };

    for (int b = 0; b < batch.batch_size(); ++b) {
        const int len = batch.lengths[static_cast<size_t>(b)];
        if (cfg.align_cls_sep) {
            pin_row(b, 0, cls_rows);
            pin_row(b, len - 1, sep_rows);
        }
        for (int p = len; p < l; ++p) {
            pin_row(b, p, pad_rows);
            batch.mask.set(b, p, false);
        }
    }
}

// L_INPUT: teacher cross-entropy of the block against the sampled targets
// (or against soft target rows when the batch carries them).
template <class S>
Tensor<S> input_loss(const PseudoBatch<S>& batch, const Model<S>& teacher) {
    auto logits = teacher.forward_from_embeddings(batch.block, batch.mask).logits;
    if (batch.soft_targets.numel() > 0) return cross_entropy_soft(logits, batch.soft_targets);
    return cross_entropy(logits, batch.targets);
}

namespace detail {

template <class S>
void zero_frozen_grads(PseudoBatch<S>& batch) {
    if (!batch.block.has_grad()) return;
    const int l = batch.block.dim(1), d = batch.block.dim(2);
    auto& g = batch.block.grad();
    for (int b = 0; b < batch.batch_size(); ++b)
        for (int p = 0; p < l; ++p)
            if (!batch.row_is_free(b, p))
                std::fill_n(g.data() + (static_cast<size_t>(b) * l + p) * d, d, S(0));
}

}  // namespace detail

// One Adam descent step of L_INPUT on the free rows. Returns the pre-step
// loss value.
template <class S>
double guess_step(PseudoBatch<S>& batch, const Model<S>& teacher, double eta) {
    batch.block.set_requires_grad(true);
    batch.block.zero_grad();
    auto loss = input_loss(batch, teacher);
    backward(loss);
    detail::zero_frozen_grads(batch);
    adam_step(batch.block, batch.adam, eta);
    batch.block.zero_grad();
    return static_cast<double>(loss.item());
}

// One Adam ascent step of L_MASK on the free rows (descent on the negated
// loss). The student and W stay fixed; mask positions must have been chosen.
template <class S>
double adversarial_step(PseudoBatch<S>& batch, const Model<S>& student, const MaskPredictor<S>& predictor,
                        double eta) {
    if (batch.mask_positions.size() != static_cast<size_t>(batch.batch_size()))
        throw precondition_error("adversarial_step: mask positions not sampled");
    batch.block.set_requires_grad(true);
    batch.block.zero_grad();
    auto tmpl = student.embed_token_rows(kMaskId);
    auto view = apply_mask(batch.block, batch.mask_positions, tmpl);
    auto loss = mask_loss(view, student, batch.mask, predictor);
    backward(scale(loss, S(-1)));
    detail::zero_frozen_grads(batch);
    adam_step(batch.block, batch.adam, eta);
    batch.block.zero_grad();
    return static_cast<double>(loss.item());
}

// Stage 1 of the two-stage loop: Gaussian init, alignment constraints, then
// n_iter rounds of n_T class-conditional guess steps and n_S adversarial
// steps against freshly sampled mask positions. All networks stay frozen.
template <class S>
StageOneStats construct(const ForgeConfig& cfg, PseudoBatch<S>& batch, const Model<S>& teacher,
                        const Model<S>* student, const MaskPredictor<S>* predictor, Rng& rng) {
    if (cfg.n_s > 0 && (student == nullptr || predictor == nullptr))
        throw precondition_error("construct: adversarial steps need a student and predictor");

    // Stage 1 freezes every network; only the block moves.
    teacher.set_requires_grad(false);
    if (student != nullptr) student->set_requires_grad(false);
    if (predictor != nullptr) predictor->W.set_requires_grad(false);

    StageOneStats stats;
    {
        NoGradGuard ng;
        stats.l_input_init = static_cast<double>(input_loss(batch, teacher).item());
    }
    for (int iter = 0; iter < cfg.n_iter; ++iter) {
        batch.mask_positions = choose_mask_positions(batch.lengths, rng);
        for (int m = 0; m < cfg.n_t; ++m) guess_step(batch, teacher, cfg.eta);
        for (int n = 0; n < cfg.n_s; ++n) adversarial_step(batch, *student, *predictor, cfg.eta);
    }
    {
        NoGradGuard ng;
        stats.l_input_end = static_cast<double>(input_loss(batch, teacher).item());
        if (student != nullptr && predictor != nullptr) {
            auto probe_positions = choose_mask_positions(batch.lengths, rng);
            auto view = apply_mask(batch.block, probe_positions, student->embed_token_rows(kMaskId));
            stats.l_mask_end = static_cast<double>(mask_loss(view, *student, batch.mask, *predictor).item());
        }
    }
    batch.block.set_requires_grad(false);
    return stats;
}

// init + alignment + optimisation in one call. When a sampler is given, the
// crafting loss becomes soft cross-entropy against its rows (one distribution
// per sampled target class).
template <class S>
using SoftTargetSampler = std::function<Tensor<S>(const std::vector<int>& targets, Rng& rng)>;

template <class S>
std::pair<PseudoBatch<S>, StageOneStats> construct_batch(const ForgeConfig& cfg, const Model<S>& teacher,
                                                         const Model<S>* student, const MaskPredictor<S>* predictor,
                                                         int batch_size, Rng& rng,
                                                         const SoftTargetSampler<S>& soft_sampler = nullptr) {
    auto batch = init_batch(cfg, teacher, batch_size, rng);
    if (soft_sampler) {
        batch.soft_targets = soft_sampler(batch.targets, rng);
        if (batch.soft_targets.rank() != 2 || batch.soft_targets.dim(0) != batch_size ||
            batch.soft_targets.dim(1) != teacher.cfg.num_classes)
            throw shape_error("construct_batch: soft target shape mismatch");
    }
    apply_alignment(cfg, batch, teacher);
    auto stats = construct(cfg, batch, teacher, student, predictor, rng);
    return {std::move(batch), stats};
}

}  // namespace asdfd
