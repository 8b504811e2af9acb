#pragma once

// CAM / CAAM heatmap export for an original view and an augmented view.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metadefa/augment.hpp"
#include "metadefa/data.hpp"
#include "metadefa/image_io.hpp"
#include "metadefa/losses.hpp"
#include "metadefa/model.hpp"

namespace metadefa {

/// Min-max scales a map to 0..255 (constant maps become 0) and upsamples it to
/// (out_h, out_w) by nearest neighbour.
inline std::vector<unsigned char> heatmap_levels(const Tensor& map, std::size_t out_h, std::size_t out_w) {
    const MinMaxNormalized n = minmax_normalize(map);
    const std::size_t h = map.dim(0), w = map.dim(1);
    std::vector<unsigned char> levels(out_h * out_w);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            const double v = n.values.at(y * h / out_h, x * w / out_w);
            levels[y * out_w + x] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    return levels;
}

struct HeatmapRequest {
    Tensor image;                 // [3, H, W] in [0, 1], any size
    std::optional<Tensor> mask;   // [H, W]
    std::optional<Tensor> donor;  // background source for the augmented view
    std::optional<std::size_t> label;  // CAM class; predicted class when absent
    CorruptionConfig corruption;
    std::uint64_t seed = 0;
};

struct HeatmapFiles {
    std::filesystem::path cam, caam, cam_aug, caam_aug, augmented_image;
    std::size_t cam_class = 0;
};

/// Writes cam.pgm, caam.pgm (original view), cam_aug.pgm, caam_aug.pgm (augmented
/// view) and augmented.ppm into `out_dir`. All maps have the input image's size.
inline HeatmapFiles export_heatmaps(const TinyCnn& net, const ParamSet& params, const HeatmapRequest& req,
                                    const std::filesystem::path& out_dir) {
    net.check_params(params);
    const std::size_t in = net.config().input_size;
    const std::size_t h = req.image.dim(1), w = req.image.dim(2);
    std::filesystem::create_directories(out_dir);

    LabeledImage ori;
    ori.pixels = resize_nearest(req.image, in, in);
    if (req.mask) ori.mask = resize_nearest(*req.mask, in, in);
    const std::size_t cls = req.label ? *req.label : net.predict(params, ori.pixels);
    ori.label = cls;

    Rng rng(req.seed);
    LabeledImage aug = ori;
    if (req.donor && ori.mask) {
        LabeledImage donor;
        donor.pixels = resize_nearest(*req.donor, in, in);
        donor.label = (cls + 1) % net.config().num_classes;
        aug = background_substitute(ori, donor, rng);
    }
    aug = apply_corruptions(aug, req.corruption, rng);

    const ActivationBundle b_ori = net.forward(params, ori.pixels, cls);
    const ActivationBundle b_aug = net.forward(params, aug.pixels, cls);

    HeatmapFiles files{out_dir / "cam.pgm", out_dir / "caam.pgm", out_dir / "cam_aug.pgm", out_dir / "caam_aug.pgm",
                       out_dir / "augmented.ppm", cls};
    write_pgm_bytes(files.cam, h, w, heatmap_levels(b_ori.cam, h, w));
    write_pgm_bytes(files.caam, h, w, heatmap_levels(b_ori.caam, h, w));
    write_pgm_bytes(files.cam_aug, h, w, heatmap_levels(b_aug.cam, h, w));
    write_pgm_bytes(files.caam_aug, h, w, heatmap_levels(b_aug.caam, h, w));
    write_ppm(files.augmented_image, resize_nearest(aug.pixels, h, w));
    return files;
}

}  // namespace metadefa
