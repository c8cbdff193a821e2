#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "misr/common.hpp"

namespace misr {

// Minimal .npy (format version 1.0) support for the clearance sidecar:
// little-endian float32/float64 vectors only.

inline void write_npy_f32(const std::string& path, const std::vector<float>& values) {
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" +
                         std::to_string(values.size()) + ",), }";
    const std::size_t unpadded = 10 + header.size() + 1;
    const std::size_t padded = (unpadded + 63) / 64 * 64;
    header.append(padded - unpadded, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot create npy: " + path);
    const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    out.write(reinterpret_cast<const char*>(magic), 8);
    const std::uint16_t hlen = static_cast<std::uint16_t>(header.size());
    const unsigned char lenb[2] = {static_cast<unsigned char>(hlen & 0xff),
                                   static_cast<unsigned char>(hlen >> 8)};
    out.write(reinterpret_cast<const char*>(lenb), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) throw DataError("npy write failed: " + path);
}

inline std::vector<double> read_npy_vector(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open npy: " + path);
    unsigned char magic[8];
    in.read(reinterpret_cast<char*>(magic), 8);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw DataError("not an npy file: " + path);
    unsigned char lenb[2];
    in.read(reinterpret_cast<char*>(lenb), 2);
    const std::size_t hlen = static_cast<std::size_t>(lenb[0]) | (static_cast<std::size_t>(lenb[1]) << 8);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated npy header: " + path);
    const bool f4 = header.find("'<f4'") != std::string::npos;
    const bool f8 = header.find("'<f8'") != std::string::npos;
    if (!f4 && !f8) throw DataError("npy must be little-endian float32/float64: " + path);
    if (header.find("'fortran_order': False") == std::string::npos)
        throw DataError("npy must be C-ordered: " + path);
    const auto sp = header.find("'shape': (");
    if (sp == std::string::npos) throw DataError("npy header missing shape: " + path);
    std::size_t n = 0;
    std::size_t pos = sp + 10;
    while (pos < header.size() && header[pos] >= '0' && header[pos] <= '9') {
        n = n * 10 + static_cast<std::size_t>(header[pos] - '0');
        ++pos;
    }
    // only rank-1 shapes: "(N,)"
    while (pos < header.size() && header[pos] == ' ') ++pos;
    if (pos >= header.size() || header[pos] != ',')
        throw DataError("npy must hold a 1-D vector: " + path);
    std::vector<double> out(n);
    if (f4) {
        std::vector<float> raw(n);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
        if (!in) throw DataError("truncated npy payload: " + path);
        for (std::size_t i = 0; i < n; ++i) out[i] = raw[i];
    } else {
        in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n * 8));
        if (!in) throw DataError("truncated npy payload: " + path);
    }
    return out;
}

}  // namespace misr
