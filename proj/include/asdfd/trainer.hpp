#pragma once

#include <algorithm>
#include <functional>

#include "asdfd/model.hpp"
#include "asdfd/text.hpp"

namespace asdfd {

struct TeacherTrainConfig {
    int epochs = 4;
    double lr = 1e-3;
    int batch = 32;
    double warmup_proportion = 0.1;
    uint64_t shuffle_seed = 1;
};

struct TeacherTrainMetrics {
    std::vector<double> epoch_loss;
    std::vector<double> valid_accuracy;
    int best_epoch = -1;
    double best_accuracy = 0.0;
};

// Builds padded [CLS]...[SEP][PAD] id rows for examples[first, first+count).
inline std::pair<std::vector<int>, std::vector<int>> batch_token_rows(const DatasetSplit& split, size_t first,
                                                                      size_t count, int max_len) {
    std::vector<int> ids;
    std::vector<int> labels;
    ids.reserve(count * static_cast<size_t>(max_len));
    for (size_t i = first; i < first + count; ++i) {
        const Example& ex = split.examples[i];
        auto row = encode_ids(ex.token_ids, max_len);
        ids.insert(ids.end(), row.ids.begin(), row.ids.end());
        labels.push_back(ex.label);
    }
    return {ids, labels};
}

// Counting core shared by the evaluators; kept separate so tests can feed it
// oracle predictions directly.
inline double accuracy_from_predictions(const std::vector<int>& predictions, const DatasetSplit& split) {
    if (split.examples.empty()) throw precondition_error("accuracy: empty split");
    if (predictions.size() != split.examples.size()) throw shape_error("accuracy: prediction count mismatch");
    size_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == split.examples[i].label) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

template <class S>
std::vector<int> predict_labels(const Model<S>& model, const DatasetSplit& split, int eval_batch = 64) {
    NoGradGuard ng;
    std::vector<int> preds;
    preds.reserve(split.examples.size());
    for (size_t first = 0; first < split.examples.size(); first += static_cast<size_t>(eval_batch)) {
        const size_t count = std::min(static_cast<size_t>(eval_batch), split.examples.size() - first);
        auto [ids, labels] = batch_token_rows(split, first, count, model.cfg.max_len);
        auto logits = model.forward(ids, static_cast<int>(count));
        auto top = argmax_rows(logits);
        preds.insert(preds.end(), top.begin(), top.end());
        (void)labels;
    }
    return preds;
}

template <class S>
double evaluate_accuracy(const Model<S>& model, const DatasetSplit& split, int eval_batch = 64) {
    return accuracy_from_predictions(predict_labels(model, split, eval_batch), split);
}

// Cross-entropy fine-tuning with Adam and a warmup-linear-decay schedule; the
// parameters left in `model` are those of the best validation epoch.
template <class S>
TeacherTrainMetrics finetune_teacher(Model<S>& model, const DatasetSplit& train, const DatasetSplit& valid,
                                     const TeacherTrainConfig& cfg) {
    if (train.examples.empty() || valid.examples.empty())
        throw precondition_error("finetune_teacher: empty split");
    TeacherTrainMetrics metrics;
    if (cfg.epochs <= 0) return metrics;

    model.set_requires_grad(true);
    std::vector<Tensor<S>> params;
    for (auto& p : model.parameters())
        if (!p.frozen()) params.push_back(p);
    Adam<S> opt(params);
    const long steps_per_epoch =
        static_cast<long>((train.examples.size() + static_cast<size_t>(cfg.batch) - 1) / static_cast<size_t>(cfg.batch));
    auto sched = LRSchedule::warmup(cfg.lr, cfg.warmup_proportion, steps_per_epoch * cfg.epochs);

    Rng shuffle_rng(cfg.shuffle_seed);
    std::vector<size_t> order(train.examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<std::vector<S>> best_snapshot;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        double loss_sum = 0.0;
        long batches = 0;
        for (size_t first = 0; first < order.size(); first += static_cast<size_t>(cfg.batch)) {
            const size_t count = std::min(static_cast<size_t>(cfg.batch), order.size() - first);
            std::vector<int> ids;
            std::vector<int> labels;
            ids.reserve(count * static_cast<size_t>(model.cfg.max_len));
            for (size_t i = first; i < first + count; ++i) {
                const Example& ex = train.examples[order[i]];
                auto row = encode_ids(ex.token_ids, model.cfg.max_len);
                ids.insert(ids.end(), row.ids.begin(), row.ids.end());
                labels.push_back(ex.label);
            }
            auto loss = cross_entropy(model.forward(ids, static_cast<int>(count)), labels);
            opt.zero_grad();
            backward(loss);
            opt.step(schedule_lr(sched, step));
            ++step;
            loss_sum += static_cast<double>(loss.item());
            ++batches;
        }
        metrics.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        const double acc = evaluate_accuracy(model, valid);
        metrics.valid_accuracy.push_back(acc);
        if (metrics.best_epoch < 0 || acc > metrics.best_accuracy) {
            metrics.best_epoch = epoch;
            metrics.best_accuracy = acc;
            best_snapshot = model.snapshot_values();
        }
    }
    if (!best_snapshot.empty()) model.restore_values(best_snapshot);
    model.set_requires_grad(false);
    return metrics;
}

}  // namespace asdfd
