#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "misr/batch.hpp"
#include "misr/checkpoint.hpp"
#include "misr/metrics.hpp"

namespace misr {

// L2 objective. With a mask, the mean runs over clear pixels only; an empty
// or all-false mask falls back to the unmasked mean with a warning.
template <typename T>
Tensor<T> loss_l2(const Tensor<T>& sr, const Tensor<T>& hr,
                  const std::vector<std::uint8_t>* sm = nullptr) {
    require_dims(sr.shape() == hr.shape(), "loss_l2: shape mismatch " + shape_str(sr.shape()) +
                                               " vs " + shape_str(hr.shape()));
    Tensor<T> d = sub(sr, hr);
    Tensor<T> sq = mul(d, d);
    if (sm) {
        bool any = false;
        for (auto v : *sm)
            if (v) {
                any = true;
                break;
            }
        if (sm->size() == sq.size() && any) return masked_mean(sq, *sm);
        std::fprintf(stderr, "warning: loss mask empty or mismatched, using unmasked mean\n");
    }
    return mean(sq);
}

// One uniformly random permutation applied consistently to frames, masks,
// clearance, and pad flags.
template <typename T>
FrameStack<T> shuffle_frames(const FrameStack<T>& stack, Rng& rng) {
    const std::size_t k = stack.k();
    const auto perm = rng.permutation(k);
    FrameStack<T> out;
    out.frames = Tensor<T>(stack.frames.shape());
    out.clearance.resize(k);
    out.pad_flags.resize(k);
    if (!stack.masks.empty()) out.masks.resize(k);
    const std::size_t frame_len = stack.frames.size() / k;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t src = perm[i];
        std::copy(stack.frames.data() + src * frame_len, stack.frames.data() + (src + 1) * frame_len,
                  out.frames.data() + i * frame_len);
        out.clearance[i] = stack.clearance[src];
        out.pad_flags[i] = stack.pad_flags[src];
        if (!stack.masks.empty()) out.masks[i] = stack.masks[src];
    }
    return out;
}

struct EpochStats {
    double mean_loss = 0.0;
    double grad_norm = 0.0;  // mean over optimizer steps
    std::size_t samples = 0;
};

struct HistoryRow {
    int epoch = 0;
    double train_loss = 0.0;
    double val_cpsnr = 0.0;
    double val_cssim = 0.0;
    double wall_seconds = 0.0;
};

struct FitResult {
    std::vector<HistoryRow> history;
    double best_val_cpsnr = -1.0;
    int best_epoch = -1;
};

namespace traindetail {

template <typename T>
struct QueuedSample {
    std::size_t scene = 0;
    int variant = 0;
};

}  // namespace traindetail

// One optimizer pass over every enqueued sample: each scene contributes
// shuffle_t randomly reordered copies (or its original order when
// shuffle_t = 0). All randomness derives from (seed, epoch), so a resumed run
// replays identically.
template <typename T>
EpochStats train_epoch(SrModel<T>& model, Adam<T>& opt, const std::vector<Scene<T>>& scenes,
                       const TrainConfig& cfg, int epoch) {
    require(!scenes.empty(), "train_epoch: empty scene list");
    model.train();
    Rng epoch_rng = Rng(cfg.seed).derive("epoch", static_cast<std::uint64_t>(epoch));
    const int variants = cfg.shuffle_t > 0 ? cfg.shuffle_t : 1;

    std::vector<traindetail::QueuedSample<T>> queue;
    for (std::size_t s = 0; s < scenes.size(); ++s)
        for (int v = 0; v < variants; ++v) queue.push_back({s, v});
    {
        Rng order = epoch_rng.derive("order");
        const auto perm = order.permutation(queue.size());
        std::vector<traindetail::QueuedSample<T>> shuffled(queue.size());
        for (std::size_t i = 0; i < queue.size(); ++i) shuffled[i] = queue[perm[i]];
        queue = std::move(shuffled);
    }

    EpochStats stats;
    double loss_sum = 0.0;
    double grad_norm_sum = 0.0;
    std::size_t steps = 0;
    std::size_t qi = 0;
    while (qi < queue.size()) {
        const std::size_t batch_end = std::min(queue.size(), qi + static_cast<std::size_t>(cfg.batch));
        const std::size_t bsize = batch_end - qi;
        model.store.zero_grads();
        for (; qi < batch_end; ++qi) {
            const auto& item = queue[qi];
            const Scene<T>& scene = scenes[item.scene];
            Rng crop_rng = epoch_rng.derive("crop", item.scene * 16 + item.variant);
            Sample<T> sample = make_sample(scene, cfg.k, cfg.crop, cfg.crop > 0 ? &crop_rng : nullptr,
                                           model.cfg.mask_channel, model.cfg.upscale);
            require(sample.hr.has_value(), "train_epoch: scene " + scene.id + " has no HR target");
            if (cfg.shuffle_t > 0) {
                Rng shuffle_rng = epoch_rng.derive("shuffle", item.scene * 16 + item.variant);
                sample.stack = shuffle_frames(sample.stack, shuffle_rng);
            }
            Tensor<T> sr = model.forward(sample.stack);
            Tensor<T> loss = loss_l2(sr, *sample.hr, cfg.masked_loss && sample.sm ? &*sample.sm : nullptr);
            const double lv = static_cast<double>(loss[0]);
            if (!std::isfinite(lv))
                throw ContractError("non-finite loss at scene " + scene.id + ", epoch " +
                                    std::to_string(epoch));
            loss_sum += lv;
            backward(mul_scalar(loss, static_cast<T>(1.0 / static_cast<double>(bsize))));
        }
        grad_norm_sum += model.store.grad_norm();
        ++steps;
        opt.step(model.store);
    }
    stats.samples = queue.size();
    stats.mean_loss = queue.empty() ? 0.0 : loss_sum / static_cast<double>(queue.size());
    stats.grad_norm = steps ? grad_norm_sum / static_cast<double>(steps) : 0.0;
    return stats;
}

// Full-frame inference on one scene in its stored frame order.
template <typename T>
Tensor<T> infer_scene(SrModel<T>& model, const Scene<T>& scene, int k) {
    const bool was_training = model.training;
    model.eval();
    NoGradGuard ng;
    Sample<T> sample = make_sample(scene, k, 0, nullptr, model.cfg.mask_channel, model.cfg.upscale);
    Tensor<T> sr = model.forward(sample.stack);
    model.training = was_training;
    return sr;
}

template <typename T>
MetricReport evaluate_model(SrModel<T>& model, const std::vector<Scene<T>>& scenes, int k) {
    return evaluate_dataset<T>(scenes, [&](const Scene<T>& s) { return infer_scene(model, s, k); });
}

inline void write_history(const std::filesystem::path& path, const std::vector<HistoryRow>& rows) {
    std::ofstream out(path);
    out << "epoch,train_loss,val_cpsnr,val_cssim,wall_seconds\n";
    char line[160];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof(line), "%d,%.8f,%.4f,%.6f,%.3f\n", r.epoch, r.train_loss,
                      r.val_cpsnr, r.val_cssim, r.wall_seconds);
        out << line;
    }
}

// Epoch loop: train, evaluate validation cPSNR/cSSIM, track the best
// checkpoint, optional early stop. With out_dir set, writes history.csv plus
// last.ckpt/best.ckpt each epoch; a checkpoint write failure flushes history
// and rethrows.
template <typename T>
FitResult fit(SrModel<T>& model, Adam<T>& opt, const std::vector<Scene<T>>& train_scenes,
              const std::vector<Scene<T>>& val_scenes, const TrainConfig& cfg,
              const std::optional<std::filesystem::path>& out_dir = std::nullopt,
              int start_epoch = 0, bool quiet = false) {
    cfg.validate();
    FitResult result;
    int since_best = 0;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochStats stats = train_epoch(model, opt, train_scenes, cfg, epoch);
        MetricReport val;
        if (!val_scenes.empty()) val = evaluate_model(model, val_scenes, cfg.k);
        HistoryRow row;
        row.epoch = epoch;
        row.train_loss = stats.mean_loss;
        row.val_cpsnr = val.evaluated ? val.mean_cpsnr : 0.0;
        row.val_cssim = val.evaluated ? val.mean_cssim : 0.0;
        row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(row);
        if (!quiet)
            std::fprintf(stderr, "epoch %3d  loss %.6f  val_cpsnr %.3f  val_cssim %.5f  (%.1fs)\n",
                         epoch, row.train_loss, row.val_cpsnr, row.val_cssim, row.wall_seconds);

        const bool improved = val.evaluated && val.mean_cpsnr > result.best_val_cpsnr;
        if (improved) {
            result.best_val_cpsnr = val.mean_cpsnr;
            result.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (out_dir) {
            write_history(*out_dir / "history.csv", result.history);
            CheckpointMeta meta;
            meta.model = model.cfg;
            meta.train = cfg;
            meta.epoch = epoch + 1;
            meta.seed = cfg.seed;
            meta.adam_t = opt.step_count();
            meta.best_val_cpsnr = result.best_val_cpsnr;
            try {
                save_checkpoint(*out_dir / "last.ckpt", model, &opt, meta);
                if (improved || (!val_scenes.empty() && result.best_epoch == epoch))
                    save_checkpoint(*out_dir / "best.ckpt", model, &opt, meta);
            } catch (const std::exception&) {
                write_history(*out_dir / "history.csv", result.history);
                throw;
            }
        }
        if (cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience) break;
    }
    return result;
}

}  // namespace misr
