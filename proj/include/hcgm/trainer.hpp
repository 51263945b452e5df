#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>

#include "hcgm/checkpoint.hpp"
#include "hcgm/config.hpp"
#include "hcgm/data.hpp"
#include "hcgm/losses.hpp"
#include "hcgm/metrics.hpp"
#include "hcgm/model.hpp"
#include "hcgm/optim.hpp"

namespace hcgm {

inline ArchConfig arch_from(const TrainConfig& cfg) {
    ArchConfig a;
    a.width_div = cfg.width_div;
    a.seed = cfg.seed;
    a.backbone.pretrained = cfg.pretrained;
    a.backbone.weights_path = cfg.backbone_weights;
    a.backbone.frozen = cfg.backbone_frozen;
    return a;
}

// Inference-mode micro-averaged evaluation: per-tile confusion matrices are
// merged into one dataset-level matrix, never averaged per image.
template <typename T>
MetricReport evaluate_model(HCGMNet<T>& model, const DatasetManifest& split, int batch_size,
                            double threshold = 0.5) {
    if (split.size() == 0) throw DataError("split '" + split.split + "' is empty");
    NoGradGuard ng;
    model.set_training(false);
    ConfusionMatrix cm;
    const size_t n = split.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i < n; i += static_cast<size_t>(batch_size)) {
        const size_t take = std::min(n - i, static_cast<size_t>(batch_size));
        Batch<T> batch = make_batch<T>(split, std::span<const size_t>(idx.data() + i, take),
                                       /*augment=*/false, nullptr);
        auto out = model.forward(batch.a, batch.b);
        auto preds = predict_binary(out.final_map, threshold);
        const int64_t plane = batch.label.dim(2) * batch.label.dim(3);
        for (size_t bi = 0; bi < preds.size(); ++bi) {
            std::vector<uint8_t> lab(static_cast<size_t>(plane));
            const T* lp = batch.label.data() + static_cast<int64_t>(bi) * plane;
            for (int64_t j = 0; j < plane; ++j) lab[static_cast<size_t>(j)] = lp[j] != T(0);
            cm = merge(cm, accumulate(preds[bi].v, lab));
        }
    }
    return scores(cm);
}

struct TrainOutcome {
    std::filesystem::path best_dir, last_dir;
    double best_f1 = -1.0;
    int best_epoch = 0;
    int64_t steps = 0;
    MetricReport best_report;
};

// The optimization loop: seeded shuffling, AdamW steps, per-step loss rows in
// train_log.csv, per-epoch validation rows in val_log.csv, best-F1 and last
// checkpoints under the output directory. Aborts on a non-finite loss.
template <typename T = float>
TrainOutcome train(const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    DatasetManifest train_split = load_manifest(cfg.data_root, "train");
    DatasetManifest val_split = load_manifest(cfg.data_root, "val");
    if (train_split.size() == 0) throw DataError("split 'train' is empty");
    if (val_split.size() == 0) throw DataError("split 'val' is empty");

    HCGMNet<T> model(arch_from(cfg));
    ParamRegistry<T> reg = model.registry();
    std::vector<std::pair<std::string, Tensor<T>>> trainable;
    for (auto& [name, t] : reg.params) {
        if (cfg.backbone_frozen && name.rfind("backbone.", 0) == 0) {
            t.set_requires_grad(false);
            continue;
        }
        trainable.emplace_back(name, t);
    }
    AdamW<T> opt(trainable, cfg.learning_rate, cfg.weight_decay);

    fs::create_directories(cfg.output_dir);
    std::ofstream train_log(fs::path(cfg.output_dir) / "train_log.csv", std::ios::trunc);
    std::ofstream val_log(fs::path(cfg.output_dir) / "val_log.csv", std::ios::trunc);
    if (!train_log || !val_log)
        throw DataError("cannot write logs under '" + cfg.output_dir + "'");
    train_log << "step,ce_coarse,dice_coarse,ce_final,dice_final,total\n" << std::setprecision(10);
    val_log << "epoch,f1,precision,recall,oa,iou\n" << std::setprecision(10);

    TrainOutcome outcome;
    outcome.best_dir = fs::path(cfg.output_dir) / "checkpoint_best";
    outcome.last_dir = fs::path(cfg.output_dir) / "checkpoint_last";

    Rng shuffle_rng(cfg.seed);
    std::vector<size_t> order(train_split.size());
    std::iota(order.begin(), order.end(), size_t{0});
    int64_t gstep = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        model.set_training(true);
        std::shuffle(order.begin(), order.end(), shuffle_rng.gen);
        for (size_t i = 0; i < order.size(); i += static_cast<size_t>(cfg.batch_size)) {
            const size_t take = std::min(order.size() - i, static_cast<size_t>(cfg.batch_size));
            Batch<T> batch = make_batch<T>(
                train_split, std::span<const size_t>(order.data() + i, take), cfg.augment,
                &shuffle_rng);
            auto out = model.forward(batch.a, batch.b);
            LossBreakdown<T> lb = total_loss(out.coarse, out.final_map, batch.label);
            if (!std::isfinite(lb.total_value))
                throw NumericError("non-finite training loss at step " + std::to_string(gstep) +
                                   " (epoch " + std::to_string(epoch) + ")");
            train_log << gstep << ',' << lb.ce_coarse << ',' << lb.dice_coarse << ','
                      << lb.ce_final << ',' << lb.dice_final << ',' << lb.total_value << "\n";
            lb.total.backward();
            opt.step();
            reg.zero_grad();
            ++gstep;
        }

        MetricReport rep = evaluate_model(model, val_split, cfg.batch_size);
        val_log << epoch << ',' << rep.f1 << ',' << rep.precision << ',' << rep.recall << ','
                << rep.oa << ',' << rep.iou << "\n";
        val_log.flush();

        const bool improved = rep.f1 > outcome.best_f1;
        if (improved) {
            outcome.best_f1 = rep.f1;
            outcome.best_epoch = epoch;
            outcome.best_report = rep;
        }
        CheckpointMeta meta;
        meta.epoch = epoch;
        meta.best_val_f1 = outcome.best_f1;
        meta.config = cfg.snapshot();
        meta.metrics = {{"f1", rep.f1},
                        {"precision", rep.precision},
                        {"recall", rep.recall},
                        {"oa", rep.oa},
                        {"iou", rep.iou}};
        save_checkpoint(outcome.last_dir, reg, &opt, meta);
        if (improved) save_checkpoint(outcome.best_dir, reg, &opt, meta);
    }
    outcome.steps = gstep;
    return outcome;
}

// Rebuilds the model from a checkpoint's config snapshot, loads its
// parameters and evaluates the named split at threshold 0.5.
template <typename T = float>
MetricReport evaluate_checkpoint(const std::filesystem::path& checkpoint_dir,
                                 const std::string& split_name,
                                 const std::filesystem::path& root_override = {},
                                 double threshold = 0.5) {
    CheckpointMeta meta = read_meta(checkpoint_dir / "meta.txt");
    TrainConfig cfg = config_from_snapshot(meta.config);
    cfg.pretrained = false;  // weights come from the checkpoint payload
    HCGMNet<T> model(arch_from(cfg));
    ParamRegistry<T> reg = model.registry();
    load_checkpoint_params(checkpoint_dir, reg);
    const std::filesystem::path root =
        root_override.empty() ? std::filesystem::path(cfg.data_root) : root_override;
    DatasetManifest split = load_manifest(root, split_name);
    return evaluate_model(model, split, cfg.batch_size, threshold);
}

}  // namespace hcgm
