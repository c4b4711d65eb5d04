#pragma once

#include "asdfd/model.hpp"

namespace asdfd {

// The self-supervised module: a bias-free d x d projection that reconstructs a
// masked embedding row from the student's contextual hidden state. Trained
// cooperatively during distillation; its loss is the adversary's target while
// pseudo samples are being constructed.
template <class S>
struct MaskPredictor {
    Tensor<S> W;  // d x d
    AdamState<S> adam;
    double lr = 1e-4;  // xi

    static MaskPredictor init(int d, double lr, Rng& rng, double noise_std = 0.01) {
        MaskPredictor p;
        p.W = Tensor<S>::zeros({d, d});
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                p.W.values()[static_cast<size_t>(i) * d + j] =
                    static_cast<S>((i == j ? 1.0 : 0.0) + rng.normal(0.0, noise_std));
        p.adam = AdamState<S>(p.W.numel());
        p.lr = lr;
        return p;
    }

    uint64_t checksum_value() const { return checksum(W); }
};

// One masked position per sample, uniform over the content range
// [1, length-2]: never [CLS] (position 0), never the [SEP]/tail positions.
inline std::vector<int> choose_mask_positions(const std::vector<int>& lengths, Rng& rng) {
    std::vector<int> out;
    out.reserve(lengths.size());
    for (int len : lengths) {
        if (len < 3) throw precondition_error("choose_mask_positions: effective length must be >= 3");
        out.push_back(rng.uniform_int(1, len - 2));
    }
    return out;
}

// The block with one row per sample swapped for the [MASK] embedding row,
// plus the original rows the predictor must reconstruct. Both tensors stay
// differentiable with respect to the source block.
template <class S>
struct MaskedView {
    std::vector<int> positions;
    Tensor<S> target_rows;   // (B, D) original rows e_i
    Tensor<S> masked_block;  // (B, L, D) e with row i replaced per sample
};

// `mask_template` holds the embedding-layer output of [MASK] at every
// position (model.embed_token_rows(kMaskId)).
template <class S>
MaskedView<S> apply_mask(const Tensor<S>& e, const std::vector<int>& positions, const Tensor<S>& mask_template) {
    if (e.rank() != 3) throw shape_error("apply_mask: expected (B,L,D)");
    const int b = e.dim(0), l = e.dim(1), d = e.dim(2);
    if (mask_template.rank() != 2 || mask_template.dim(0) < l || mask_template.dim(1) != d)
        throw shape_error("apply_mask: template must cover (L,D)");

    MaskedView<S> view;
    view.positions = positions;
    view.target_rows = gather_positions(e, positions);
    Tensor<S> rows({b, d});
    for (int i = 0; i < b; ++i)
        std::copy_n(mask_template.data() + static_cast<size_t>(positions[static_cast<size_t>(i)]) * d, d,
                    rows.data() + static_cast<size_t>(i) * d);
    view.masked_block = replace_positions(e, positions, rows);
    return view;
}

// L_MASK: run the student trunk on the masked block, project the hidden state
// at the masked position through W, and score the normalised distance to the
// original row. Mean over the batch, in [0, 4].
template <class S>
Tensor<S> mask_loss(const MaskedView<S>& view, const Model<S>& student, const AttentionMask& mask,
                    const MaskPredictor<S>& predictor) {
    if (predictor.W.dim(0) != student.cfg.hidden_dim)
        throw shape_error("mask_loss: predictor width does not match student");
    auto h = student.encode(view.masked_block, mask);
    auto h_i = gather_positions(h, view.positions);
    auto pred = matmul(h_i, predictor.W);
    return normalized_sqdist(view.target_rows, pred);
}

// Stage-2 predictor update: only W moves; trunk gradients may be computed but
// are the caller's to discard.
template <class S>
double predictor_step(const MaskedView<S>& view, const Model<S>& student, const AttentionMask& mask,
                      MaskPredictor<S>& predictor, double lr) {
    predictor.W.set_requires_grad(true);
    predictor.W.zero_grad();
    auto loss = mask_loss(view, student, mask, predictor);
    backward(loss);
    adam_step(predictor.W, predictor.adam, lr);
    predictor.W.zero_grad();
    return static_cast<double>(loss.item());
}

}  // namespace asdfd
