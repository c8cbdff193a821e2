#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "misr/adam.hpp"
#include "misr/config.hpp"
#include "misr/model.hpp"

namespace misr {

// Versioned binary checkpoint, little-endian throughout:
//   magic "MISRCKPT", u32 version,
//   u32 metadata length + key=value lines (config snapshot, epoch, seed,
//   optimizer step count),
//   u64 record count, then per record:
//   u32 name length, name bytes, u32 rank, u64 dims[rank], float32 payload.
// Records cover parameters, optimizer moments (opt.m/, opt.v/) and
// non-learnable buffers (buf/).

namespace ckptdetail {

inline void wr_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void wr_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t rd_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t rd_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_record(std::ostream& out, const std::string& name, const Shape& shape,
                         const float* data, std::size_t count) {
    wr_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    wr_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) wr_u64(out, d);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

template <typename T>
std::vector<float> to_f32(const std::vector<T>& v) {
    return std::vector<float>(v.begin(), v.end());
}

}  // namespace ckptdetail

struct CheckpointMeta {
    ModelConfig model;
    TrainConfig train;
    int epoch = 0;           // epochs completed
    std::uint64_t seed = 0;  // with epoch, the full RNG state of the run
    long adam_t = 0;
    double best_val_cpsnr = -1.0;
};

struct CheckpointData {
    CheckpointMeta meta;
    std::map<std::string, std::pair<Shape, std::vector<float>>> records;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const SrModel<T>& model,
                     const Adam<T>* opt, const CheckpointMeta& meta) {
    // write to a sibling temp file, rename into place
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot create checkpoint: " + path.string());
        out.write("MISRCKPT", 8);
        ckptdetail::wr_u32(out, 1);
        std::string kv;
        for (const auto& [k, v] : meta.model.to_kv()) kv += k + "=" + v + "\n";
        for (const auto& [k, v] : meta.train.to_kv()) kv += k + "=" + v + "\n";
        kv += "run.epoch=" + std::to_string(meta.epoch) + "\n";
        kv += "run.seed=" + std::to_string(meta.seed) + "\n";
        kv += "run.adam_t=" + std::to_string(meta.adam_t) + "\n";
        kv += "run.best_val_cpsnr=" + std::to_string(meta.best_val_cpsnr) + "\n";
        ckptdetail::wr_u32(out, static_cast<std::uint32_t>(kv.size()));
        out.write(kv.data(), static_cast<std::streamsize>(kv.size()));

        std::uint64_t count = model.store.params().size() + model.store.buffers().size();
        if (opt) count += opt->first_moments().size() + opt->second_moments().size();
        ckptdetail::wr_u64(out, count);
        for (const auto& [name, p] : model.store.params()) {
            auto f = ckptdetail::to_f32(p.values());
            ckptdetail::write_record(out, name, p.shape(), f.data(), f.size());
        }
        for (const auto& [name, buf] : model.store.buffers()) {
            auto f = ckptdetail::to_f32(*buf);
            ckptdetail::write_record(out, "buf/" + name, Shape{buf->size()}, f.data(), f.size());
        }
        if (opt) {
            for (const auto& [name, m] : opt->first_moments()) {
                auto f = ckptdetail::to_f32(m);
                ckptdetail::write_record(out, "opt.m/" + name, Shape{m.size()}, f.data(), f.size());
            }
            for (const auto& [name, v] : opt->second_moments()) {
                auto f = ckptdetail::to_f32(v);
                ckptdetail::write_record(out, "opt.v/" + name, Shape{v.size()}, f.data(), f.size());
            }
        }
        if (!out) throw DataError("checkpoint write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "MISRCKPT", 8) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    const std::uint32_t version = ckptdetail::rd_u32(in);
    if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t kv_len = ckptdetail::rd_u32(in);
    std::string kv(kv_len, '\0');
    in.read(kv.data(), kv_len);

    CheckpointData data;
    std::size_t pos = 0;
    while (pos < kv.size()) {
        const std::size_t nl = kv.find('\n', pos);
        const std::string line = kv.substr(pos, nl - pos);
        pos = nl == std::string::npos ? kv.size() : nl + 1;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (data.meta.model.apply_kv(key, value)) continue;
        if (data.meta.train.apply_kv(key, value)) continue;
        if (key == "run.epoch") data.meta.epoch = std::stoi(value);
        else if (key == "run.seed") data.meta.seed = std::stoull(value);
        else if (key == "run.adam_t") data.meta.adam_t = std::stol(value);
        else if (key == "run.best_val_cpsnr") data.meta.best_val_cpsnr = std::stod(value);
    }
    const std::uint64_t count = ckptdetail::rd_u64(in);
    for (std::uint64_t r = 0; r < count; ++r) {
        const std::uint32_t name_len = ckptdetail::rd_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const std::uint32_t rank = ckptdetail::rd_u32(in);
        Shape shape(rank);
        for (auto& d : shape) d = ckptdetail::rd_u64(in);
        std::vector<float> payload(numel(shape));
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * 4));
        if (!in) throw DataError("truncated checkpoint: " + path.string());
        data.records.emplace(std::move(name), std::make_pair(std::move(shape), std::move(payload)));
    }
    return data;
}

// Rebuilds the model (and optionally the optimizer) from a checkpoint.
template <typename T>
SrModel<T> restore_model(const CheckpointData& data, Adam<T>* opt = nullptr) {
    SrModel<T> model = SrModel<T>::init(data.meta.model, data.meta.seed);
    for (auto& [name, p] : model.store.params()) {
        auto it = data.records.find(name);
        require(it != data.records.end(), "checkpoint missing parameter: " + name);
        require(it->second.first == p.shape(), "checkpoint shape mismatch for " + name);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<T>(it->second.second[i]);
    }
    for (auto& [name, buf] : model.store.buffers()) {
        auto it = data.records.find("buf/" + name);
        require(it != data.records.end(), "checkpoint missing buffer: " + name);
        require(it->second.second.size() == buf->size(), "checkpoint buffer size mismatch: " + name);
        for (std::size_t i = 0; i < buf->size(); ++i) (*buf)[i] = static_cast<T>(it->second.second[i]);
    }
    if (opt) {
        *opt = Adam<T>(data.meta.train.lr, data.meta.train.beta1, data.meta.train.beta2,
                       data.meta.train.adam_eps);
        opt->set_step_count(data.meta.adam_t);
        for (const auto& [name, rec] : data.records) {
            if (name.rfind("opt.m/", 0) == 0)
                opt->first_moments()[name.substr(6)] =
                    std::vector<T>(rec.second.begin(), rec.second.end());
            else if (name.rfind("opt.v/", 0) == 0)
                opt->second_moments()[name.substr(6)] =
                    std::vector<T>(rec.second.begin(), rec.second.end());
        }
    }
    return model;
}

}  // namespace misr
