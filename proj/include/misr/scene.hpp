#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "misr/npy_io.hpp"
#include "misr/png_io.hpp"
#include "misr/tensor.hpp"

namespace misr {

enum class Band { nir, red };

inline std::string to_string(Band b) { return b == Band::nir ? "nir" : "red"; }
inline Band band_from(const std::string& s) {
    std::string lo = s;
    std::transform(lo.begin(), lo.end(), lo.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lo == "nir") return Band::nir;
    if (lo == "red") return Band::red;
    throw ConfigError("unknown band: " + s + " (expected nir or red)");
}

// One record of the dataset layout: N low-resolution frames with per-pixel
// quality masks and clarity scores, optionally a high-resolution target with
// its status mask.
template <typename T>
struct Scene {
    std::string id;
    Band band = Band::nir;
    std::vector<Tensor<T>> lr;                 // each [1,h,w], values in [0,1]
    std::vector<std::vector<std::uint8_t>> qm;  // h*w per frame, 1 = reliable
    std::optional<Tensor<T>> hr;               // [1, r*h, r*w]
    std::optional<std::vector<std::uint8_t>> sm;
    std::vector<T> clearance;                  // per-frame, in [0,1]

    std::size_t frame_count() const { return lr.size(); }
    std::size_t lr_h() const { return lr.empty() ? 0 : lr[0].dim(1); }
    std::size_t lr_w() const { return lr.empty() ? 0 : lr[0].dim(2); }
};

// Clear-pixel fraction of a quality mask.
inline double compute_clearance(const std::vector<std::uint8_t>& qm) {
    if (qm.empty()) return 0.0;
    std::size_t clear = 0;
    for (auto v : qm) clear += v ? 1 : 0;
    return static_cast<double>(clear) / static_cast<double>(qm.size());
}

namespace scenedetail {

template <typename T>
Tensor<T> image_to_tensor(const GrayImage16& img) {
    Tensor<T> t(Shape{1, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        t[i] = static_cast<T>(img.pixels[i] / 65535.0);
    return t;
}

inline std::vector<std::uint8_t> image_to_mask(const GrayImage16& img) {
    std::vector<std::uint8_t> m(img.pixels.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.pixels[i] ? 1 : 0;
    return m;
}

template <typename T>
GrayImage16 tensor_to_image(const Tensor<T>& t) {
    GrayImage16 img;
    img.height = static_cast<int>(t.dim(1));
    img.width = static_cast<int>(t.dim(2));
    img.pixels.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        double v = static_cast<double>(t[i]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
    return img;
}

inline GrayImage16 mask_to_image(const std::vector<std::uint8_t>& m, int h, int w) {
    GrayImage16 img;
    img.height = h;
    img.width = w;
    img.pixels.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) img.pixels[i] = m[i] ? 65535 : 0;
    return img;
}

// Number suffix of "LR012" -> 12.
inline int index_of(const std::string& stem, const std::string& prefix) {
    if (stem.size() <= prefix.size() || stem.compare(0, prefix.size(), prefix) != 0) return -1;
    int v = 0;
    for (std::size_t i = prefix.size(); i < stem.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(stem[i]))) return -1;
        v = v * 10 + (stem[i] - '0');
    }
    return v;
}

}  // namespace scenedetail

// Loads a scene directory: LR###.png + QM###.png pairs sorted by index,
// optional HR.png / SM.png, optional clearance.npy overriding the computed
// clear-pixel fractions.
template <typename T>
Scene<T> load_scene(const std::filesystem::path& dir, Band band = Band::nir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("scene directory missing: " + dir.string());
    std::map<int, fs::path> lr_files, qm_files;
    fs::path hr_file, sm_file, clr_file;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string stem = entry.path().stem().string();
        const std::string ext = entry.path().extension().string();
        if (ext == ".png") {
            int idx;
            if ((idx = scenedetail::index_of(stem, "LR")) >= 0) lr_files[idx] = entry.path();
            else if ((idx = scenedetail::index_of(stem, "QM")) >= 0) qm_files[idx] = entry.path();
            else if (stem == "HR") hr_file = entry.path();
            else if (stem == "SM") sm_file = entry.path();
        } else if (entry.path().filename() == "clearance.npy") {
            clr_file = entry.path();
        }
    }
    if (lr_files.empty()) throw DataError("no LR frames in " + dir.string());

    Scene<T> scene;
    scene.id = dir.filename().string();
    scene.band = band;
    for (const auto& [idx, path] : lr_files) {
        auto qm_it = qm_files.find(idx);
        if (qm_it == qm_files.end())
            throw DataError("missing QM for LR index " + std::to_string(idx) + " in " + dir.string());
        GrayImage16 lr_img = read_png_gray16(path.string());
        GrayImage16 qm_img = read_png_gray16(qm_it->second.string());
        if (lr_img.width != qm_img.width || lr_img.height != qm_img.height)
            throw DataError("LR/QM dimension mismatch at index " + std::to_string(idx) + " in " +
                            dir.string());
        if (!scene.lr.empty() && (static_cast<std::size_t>(lr_img.height) != scene.lr_h() ||
                                  static_cast<std::size_t>(lr_img.width) != scene.lr_w()))
            throw DataError("inconsistent LR dimensions in " + dir.string());
        scene.lr.push_back(scenedetail::image_to_tensor<T>(lr_img));
        scene.qm.push_back(scenedetail::image_to_mask(qm_img));
        scene.clearance.push_back(static_cast<T>(compute_clearance(scene.qm.back())));
    }
    if (!hr_file.empty()) {
        GrayImage16 hr_img = read_png_gray16(hr_file.string());
        scene.hr = scenedetail::image_to_tensor<T>(hr_img);
        if (!sm_file.empty()) {
            GrayImage16 sm_img = read_png_gray16(sm_file.string());
            if (sm_img.width != hr_img.width || sm_img.height != hr_img.height)
                throw DataError("HR/SM dimension mismatch in " + dir.string());
            scene.sm = scenedetail::image_to_mask(sm_img);
        } else {
            scene.sm = std::vector<std::uint8_t>(scene.hr->size(), 1);
        }
    }
    if (!clr_file.empty()) {
        auto values = read_npy_vector(clr_file.string());
        if (values.size() != scene.lr.size())
            throw DataError("clearance.npy length mismatch in " + dir.string());
        for (std::size_t i = 0; i < values.size(); ++i)
            scene.clearance[i] = static_cast<T>(values[i]);
    }
    return scene;
}

// Writes the on-disk layout. Pixel values are quantized to the 16-bit grid,
// so a scene whose tensors already sit on that grid round-trips bit-equal.
template <typename T>
void save_scene(const Scene<T>& scene, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    require(scene.lr.size() == scene.qm.size(), "save_scene: LR/QM count mismatch");
    char name[32];
    for (std::size_t i = 0; i < scene.lr.size(); ++i) {
        std::snprintf(name, sizeof(name), "LR%03zu.png", i);
        write_png_gray16((dir / name).string(), scenedetail::tensor_to_image(scene.lr[i]));
        std::snprintf(name, sizeof(name), "QM%03zu.png", i);
        write_png_gray16((dir / name).string(),
                         scenedetail::mask_to_image(scene.qm[i], static_cast<int>(scene.lr[i].dim(1)),
                                                    static_cast<int>(scene.lr[i].dim(2))));
    }
    if (scene.hr) {
        write_png_gray16((dir / "HR.png").string(), scenedetail::tensor_to_image(*scene.hr));
        const auto& sm = scene.sm ? *scene.sm : std::vector<std::uint8_t>(scene.hr->size(), 1);
        write_png_gray16((dir / "SM.png").string(),
                         scenedetail::mask_to_image(sm, static_cast<int>(scene.hr->dim(1)),
                                                    static_cast<int>(scene.hr->dim(2))));
    }
    std::vector<float> clr(scene.clearance.begin(), scene.clearance.end());
    write_npy_f32((dir / "clearance.npy").string(), clr);
}

// Scans <root>/<band>/imgset*/ in name order.
template <typename T>
std::vector<Scene<T>> load_dataset(const std::filesystem::path& root, Band band) {
    namespace fs = std::filesystem;
    const fs::path band_dir = root / to_string(band);
    if (!fs::is_directory(band_dir))
        throw DataError("band directory missing: " + band_dir.string());
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(band_dir))
        if (entry.is_directory()) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    std::vector<Scene<T>> scenes;
    scenes.reserve(dirs.size());
    for (const auto& d : dirs) scenes.push_back(load_scene<T>(d, band));
    return scenes;
}

}  // namespace misr
