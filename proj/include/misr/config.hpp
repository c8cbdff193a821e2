#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "misr/common.hpp"

namespace misr {

enum class BiasMode { frame_agnostic, full_sequence };
enum class FusionBlock { misab, self_attention, mean_pool };

inline std::string to_string(BiasMode m) {
    return m == BiasMode::frame_agnostic ? "frame-agnostic" : "full-sequence";
}
inline std::string to_string(FusionBlock f) {
    switch (f) {
        case FusionBlock::misab: return "misab";
        case FusionBlock::self_attention: return "self-attention";
        default: return "mean-pool";
    }
}
inline BiasMode bias_mode_from(const std::string& s) {
    if (s == "frame-agnostic" || s == "frame_agnostic") return BiasMode::frame_agnostic;
    if (s == "full-sequence" || s == "full_sequence") return BiasMode::full_sequence;
    throw ConfigError("unknown bias mode: " + s);
}
inline FusionBlock fusion_block_from(const std::string& s) {
    if (s == "misab") return FusionBlock::misab;
    if (s == "self-attention" || s == "self_attention") return FusionBlock::self_attention;
    if (s == "mean-pool" || s == "mean_pool") return FusionBlock::mean_pool;
    throw ConfigError("unknown fusion block: " + s);
}

// Architectural hyperparameters. Reference-scale defaults; desk-scale runs
// override via the CLI or config file.
struct ModelConfig {
    int c_in = 1;          // bands per frame (2 with mask_channel)
    int c_embed = 16;      // stem / CMT block width
    int c = 32;            // encoder output width = fusion/decoder width
    int cmt_heads = 2;
    int misa_heads = 2;
    int n_misab = 6;
    int patch_n = 1;       // pixels per message-token patch
    int k = 24;            // frame slots after padding
    int input_h = 128;     // largest spatial extent the bias tables cover
    int input_w = 128;
    int mlp_ratio = 4;
    double ffc_alpha = 0.5;  // fraction of channels on the global branch
    int n_ffc = 1;
    int upscale = 3;
    bool qkv_bias = true;
    bool mask_channel = false;  // feed the quality mask as a second channel
    BiasMode bias_mode = BiasMode::full_sequence;
    FusionBlock fusion_block = FusionBlock::misab;

    int local_channels() const {
        int g = global_channels();
        return c - g;
    }
    int global_channels() const {
        int g = static_cast<int>(static_cast<double>(c) * ffc_alpha + 0.5);
        if (g < 1) g = 1;
        if (g > c - 1) g = c - 1;
        return g;
    }

    void validate() const {
        if (c_in < 1 || c_embed < 1 || c < 2) throw ConfigError("channel widths must be positive (c >= 2)");
        if (c_embed % cmt_heads != 0) throw ConfigError("cmt_heads must divide c_embed");
        if (c % misa_heads != 0) throw ConfigError("misa_heads must divide c");
        if (n_misab < 1) throw ConfigError("n_misab must be >= 1");
        if (patch_n < 1) throw ConfigError("patch_n must be >= 1");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (input_h < 3 || input_w < 3) throw ConfigError("input size must be >= 3");
        if (upscale < 1) throw ConfigError("upscale must be >= 1");
        if (ffc_alpha <= 0.0 || ffc_alpha >= 1.0)
            throw ConfigError("ffc_alpha must lie in (0,1): both branches need channels");
        if (n_ffc < 1) throw ConfigError("n_ffc must be >= 1");
        if (mask_channel && c_in != 2) throw ConfigError("mask_channel requires c_in = 2");
    }

    std::vector<std::pair<std::string, std::string>> to_kv() const {
        return {
            {"model.c_in", std::to_string(c_in)},
            {"model.c_embed", std::to_string(c_embed)},
            {"model.c", std::to_string(c)},
            {"model.cmt_heads", std::to_string(cmt_heads)},
            {"model.misa_heads", std::to_string(misa_heads)},
            {"model.n_misab", std::to_string(n_misab)},
            {"model.patch_n", std::to_string(patch_n)},
            {"model.k", std::to_string(k)},
            {"model.input_h", std::to_string(input_h)},
            {"model.input_w", std::to_string(input_w)},
            {"model.mlp_ratio", std::to_string(mlp_ratio)},
            {"model.ffc_alpha", std::to_string(ffc_alpha)},
            {"model.n_ffc", std::to_string(n_ffc)},
            {"model.upscale", std::to_string(upscale)},
            {"model.qkv_bias", qkv_bias ? "1" : "0"},
            {"model.mask_channel", mask_channel ? "1" : "0"},
            {"model.bias_mode", to_string(bias_mode)},
            {"model.fusion_block", to_string(fusion_block)},
        };
    }

    bool apply_kv(const std::string& key, const std::string& value) {
        auto as_int = [&] { return std::stoi(value); };
        if (key == "model.c_in") c_in = as_int();
        else if (key == "model.c_embed") c_embed = as_int();
        else if (key == "model.c") c = as_int();
        else if (key == "model.cmt_heads") cmt_heads = as_int();
        else if (key == "model.misa_heads") misa_heads = as_int();
        else if (key == "model.n_misab") n_misab = as_int();
        else if (key == "model.patch_n") patch_n = as_int();
        else if (key == "model.k") k = as_int();
        else if (key == "model.input_h") input_h = as_int();
        else if (key == "model.input_w") input_w = as_int();
        else if (key == "model.mlp_ratio") mlp_ratio = as_int();
        else if (key == "model.ffc_alpha") ffc_alpha = std::stod(value);
        else if (key == "model.n_ffc") n_ffc = as_int();
        else if (key == "model.upscale") upscale = as_int();
        else if (key == "model.qkv_bias") qkv_bias = value != "0";
        else if (key == "model.mask_channel") mask_channel = value != "0";
        else if (key == "model.bias_mode") bias_mode = bias_mode_from(value);
        else if (key == "model.fusion_block") fusion_block = fusion_block_from(value);
        else return false;
        return true;
    }
};

// Training hyperparameters.
struct TrainConfig {
    int epochs = 400;
    int batch = 4;
    int k = 24;
    int shuffle_t = 6;  // shuffled copies per scene per epoch; 0 = original order
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 42;
    int crop = 0;  // LR crop size for desk-scale runs; 0 = full frame
    bool masked_loss = false;
    int early_stop_patience = 0;  // 0 = off

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be >= 0");
        if (batch < 1) throw ConfigError("batch must be >= 1");
        if (k < 1) throw ConfigError("k must be >= 1");
        if (shuffle_t < 0 || shuffle_t > 10) throw ConfigError("shuffle_t must lie in [0,10]");
        if (lr <= 0) throw ConfigError("lr must be positive");
        if (crop < 0) throw ConfigError("crop must be >= 0");
    }

    std::vector<std::pair<std::string, std::string>> to_kv() const {
        return {
            {"train.epochs", std::to_string(epochs)},
            {"train.batch", std::to_string(batch)},
            {"train.k", std::to_string(k)},
            {"train.shuffle_t", std::to_string(shuffle_t)},
            {"train.lr", std::to_string(lr)},
            {"train.seed", std::to_string(seed)},
            {"train.crop", std::to_string(crop)},
            {"train.masked_loss", masked_loss ? "1" : "0"},
            {"train.early_stop_patience", std::to_string(early_stop_patience)},
        };
    }

    bool apply_kv(const std::string& key, const std::string& value) {
        if (key == "train.epochs") epochs = std::stoi(value);
        else if (key == "train.batch") batch = std::stoi(value);
        else if (key == "train.k") k = std::stoi(value);
        else if (key == "train.shuffle_t") shuffle_t = std::stoi(value);
        else if (key == "train.lr") lr = std::stod(value);
        else if (key == "train.seed") seed = std::stoull(value);
        else if (key == "train.crop") crop = std::stoi(value);
        else if (key == "train.masked_loss") masked_loss = value != "0";
        else if (key == "train.early_stop_patience") early_stop_patience = std::stoi(value);
        else return false;
        return true;
    }
};

}  // namespace misr
