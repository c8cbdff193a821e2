#pragma once

#include <memory>

#include "misr/decoder.hpp"
#include "misr/encoder.hpp"
#include "misr/fusion.hpp"

namespace misr {

// The full encoder-fusion-decoder super-resolution model.
template <typename T>
struct SrModel {
    ModelConfig cfg;
    ParamStore<T> store;
    EncoderParams<T> encoder;
    FusionParams<T> fusion;
    DecoderParams<T> decoder;
    bool training = true;

    static SrModel init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        SrModel m;
        m.cfg = cfg;
        Rng init_stream = Rng(seed).derive("init");
        m.encoder = EncoderParams<T>::build(m.store, cfg, init_stream);
        m.fusion = FusionParams<T>::build(m.store, cfg, init_stream);
        m.decoder = DecoderParams<T>::build(m.store, cfg, init_stream);
        return m;
    }

    void train() { training = true; }
    void eval() { training = false; }

    // [K,C_in,H,W] stack -> [1, r*H, r*W] super-resolved image.
    Tensor<T> forward(const FrameStack<T>& stack) {
        require_dims(stack.frames.dim(1) == static_cast<std::size_t>(cfg.c_in),
                     "model: stack channel count " + std::to_string(stack.frames.dim(1)) +
                         " != configured c_in " + std::to_string(cfg.c_in));
        std::vector<Tensor<T>> features = encode(stack, encoder, cfg, training);
        Tensor<T> fused = mist_fuse(features, fusion, cfg);
        return decode(fused, decoder, cfg, training);
    }
};

}  // namespace misr
