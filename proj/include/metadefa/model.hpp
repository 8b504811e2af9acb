#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "metadefa/ops.hpp"
#include "metadefa/rng.hpp"
#include "metadefa/tensor.hpp"

namespace metadefa {

struct TinyCnnConfig {
    std::size_t in_channels = 3;
    std::vector<std::size_t> widths{16, 32, 32};
    std::size_t num_classes = 4;
    std::size_t input_size = 32;
    /// Subtracted from every pixel before the first convolution.
    double input_shift = 0.5;

    std::size_t feature_channels() const { return widths.back(); }
    /// Spatial extent of the final feature maps.
    std::size_t feature_size() const { return input_size >> (widths.size() - 1); }

    void validate() const {
        if (in_channels == 0) throw std::invalid_argument("TinyCnnConfig: in_channels must be >= 1");
        if (widths.empty()) throw std::invalid_argument("TinyCnnConfig: widths must be non-empty");
        for (std::size_t w : widths)
            if (w == 0) throw std::invalid_argument("TinyCnnConfig: every width must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("TinyCnnConfig: num_classes must be >= 2");
        const std::size_t div = std::size_t{1} << (widths.size() - 1);
        if (input_size == 0 || input_size % div != 0) {
            throw std::invalid_argument("TinyCnnConfig: input_size " + std::to_string(input_size) +
                                        " must be a positive multiple of " + std::to_string(div));
        }
    }
};

/// Per-image activations: f_k, F_k, z, the CAM of one class, and the CAAM.
struct ActivationBundle {
    Tensor feature_maps;  // [K, H', W']
    Tensor pooled;        // [K]
    Tensor logits;        // [num_classes]
    Tensor cam;           // [H', W']
    Tensor caam;          // [H', W']
    std::size_t cam_class = 0;
};

/// Upstream gradients arriving at a bundle. Empty tensors count as zero.
struct BundleGrad {
    Tensor logits;
    Tensor cam;
    Tensor caam;
};

// ---------------------------------------------------------------------------
// CAM / CAAM
// ---------------------------------------------------------------------------

/// CAM(x, y) = sum_k w_k f_k(x, y)
inline Tensor cam_extract(const Tensor& feature_maps, const Tensor& class_weights) {
    require_rank(feature_maps, 3, "cam_extract feature_maps");
    const std::size_t k = feature_maps.dim(0), h = feature_maps.dim(1), w = feature_maps.dim(2);
    require_shape(class_weights, {k}, "cam_extract class_weights");
    Tensor cam({h, w});
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < k; ++c) {
        const double wk = class_weights[c];
        for (std::size_t i = 0; i < hw; ++i) cam[i] += wk * feature_maps[c * hw + i];
    }
    return cam;
}

/// CAAM(x, y) = sum_k f_k(x, y)
inline Tensor caam_extract(const Tensor& feature_maps) {
    require_rank(feature_maps, 3, "caam_extract");
    return cam_extract(feature_maps, Tensor({feature_maps.dim(0)}, 1.0));
}

struct CamGrads {
    Tensor feature_maps;
    Tensor class_weights;
};

inline CamGrads cam_backward(const Tensor& feature_maps, const Tensor& class_weights, const Tensor& grad_cam) {
    const std::size_t k = feature_maps.dim(0), h = feature_maps.dim(1), w = feature_maps.dim(2);
    require_shape(grad_cam, {h, w}, "cam_backward grad_cam");
    CamGrads g{Tensor::zeros_like(feature_maps), Tensor({k})};
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < k; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            g.feature_maps[c * hw + i] = class_weights[c] * grad_cam[i];
            acc += grad_cam[i] * feature_maps[c * hw + i];
        }
        g.class_weights[c] = acc;
    }
    return g;
}

inline Tensor caam_backward(const Shape& maps_shape, const Tensor& grad_caam) {
    const std::size_t k = maps_shape.at(0), h = maps_shape.at(1), w = maps_shape.at(2);
    require_shape(grad_caam, {h, w}, "caam_backward grad_caam");
    Tensor g(maps_shape);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t i = 0; i < h * w; ++i) g[c * h * w + i] = grad_caam[i];
    return g;
}

// ---------------------------------------------------------------------------
// TinyCnn
// ---------------------------------------------------------------------------

/// conv3x3 -> relu blocks (2x2 average pool before every block after the first),
/// then global average pooling and one linear layer.
class TinyCnn {
public:
    /// Intermediates kept from forward for the backward pass.
    struct Trace {
        std::vector<Tensor> block_inputs;  // conv input of each block
        std::vector<Tensor> pre_relu;      // conv output of each block
        ActivationBundle bundle;
    };

    explicit TinyCnn(TinyCnnConfig config) : config_(std::move(config)) { config_.validate(); }

    const TinyCnnConfig& config() const noexcept { return config_; }

    static std::string conv_weight(std::size_t block) { return "conv" + std::to_string(block + 1) + ".weight"; }
    static std::string conv_bias(std::size_t block) { return "conv" + std::to_string(block + 1) + ".bias"; }
    static constexpr const char* kFcWeight = "fc.weight";
    static constexpr const char* kFcBias = "fc.bias";

    /// Glorot-uniform weights, zero biases.
    ParamSet init(Rng& rng) const {
        ParamSet p;
        std::size_t cin = config_.in_channels;
        for (std::size_t b = 0; b < config_.widths.size(); ++b) {
            const std::size_t cout = config_.widths[b];
            const double limit = std::sqrt(6.0 / static_cast<double>(cin * 9 + cout * 9));
            Tensor w({cout, cin, 3, 3});
            for (double& v : w.values()) v = rng.uniform(-limit, limit);
            p.add(conv_weight(b), std::move(w));
            p.add(conv_bias(b), Tensor({cout}));
            cin = cout;
        }
        const std::size_t k = config_.feature_channels();
        const double limit = std::sqrt(6.0 / static_cast<double>(k + config_.num_classes));
        Tensor w({config_.num_classes, k});
        for (double& v : w.values()) v = rng.uniform(-limit, limit);
        p.add(kFcWeight, std::move(w));
        p.add(kFcBias, Tensor({config_.num_classes}));
        return p;
    }

    void check_params(const ParamSet& params) const {
        std::size_t cin = config_.in_channels;
        for (std::size_t b = 0; b < config_.widths.size(); ++b) {
            require_shape(params.at(conv_weight(b)), {config_.widths[b], cin, 3, 3}, "TinyCnn conv weight");
            require_shape(params.at(conv_bias(b)), {config_.widths[b]}, "TinyCnn conv bias");
            cin = config_.widths[b];
        }
        require_shape(params.at(kFcWeight), {config_.num_classes, config_.feature_channels()}, "TinyCnn fc weight");
        require_shape(params.at(kFcBias), {config_.num_classes}, "TinyCnn fc bias");
        if (params.size() != 2 * config_.widths.size() + 2) {
            throw std::invalid_argument("TinyCnn: unexpected parameter entries (" + std::to_string(params.size()) + ")");
        }
    }

    /// Feature maps and logits only (no CAM); used for prediction.
    Trace trace(const ParamSet& params, const Tensor& image) const {
        require_shape(image, {config_.in_channels, config_.input_size, config_.input_size}, "TinyCnn image");
        Trace t;
        Tensor x = image;
        if (config_.input_shift != 0.0)
            for (double& v : x.values()) v -= config_.input_shift;
        for (std::size_t b = 0; b < config_.widths.size(); ++b) {
            if (b > 0) x = avg_pool2(x);
            Tensor pre = conv2d_forward(x, params.at(conv_weight(b)), params.at(conv_bias(b)));
            t.block_inputs.push_back(std::move(x));
            x = relu(pre);
            t.pre_relu.push_back(std::move(pre));
        }
        t.bundle.pooled = global_avg_pool(x);
        t.bundle.logits = linear(t.bundle.pooled, params.at(kFcWeight), params.at(kFcBias));
        t.bundle.feature_maps = std::move(x);
        return t;
    }

    /// Full forward including the CAM of `label` and the CAAM.
    Trace forward_trace(const ParamSet& params, const Tensor& image, std::size_t label) const {
        if (label >= config_.num_classes) {
            throw std::invalid_argument("TinyCnn: label " + std::to_string(label) + " out of range");
        }
        Trace t = trace(params, image);
        t.bundle.cam = cam_extract(t.bundle.feature_maps, class_row(params, label));
        t.bundle.caam = caam_extract(t.bundle.feature_maps);
        t.bundle.cam_class = label;
        return t;
    }

    ActivationBundle forward(const ParamSet& params, const Tensor& image, std::size_t label) const {
        return forward_trace(params, image, label).bundle;
    }

    std::size_t predict(const ParamSet& params, const Tensor& image) const {
        const Tensor logits = trace(params, image).bundle.logits;
        std::size_t best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[best]) best = i;
        return best;
    }

    /// Accumulates d(objective)/d(params) into `grads` given upstream gradients on the bundle.
    void backward(const ParamSet& params, const Trace& t, const BundleGrad& upstream, ParamSet& grads) const {
        const ActivationBundle& b = t.bundle;
        const Shape& fshape = b.feature_maps.shape();
        Tensor dmaps(fshape);
        auto add_into = [](Tensor& dst, const Tensor& src) {
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        };

        if (upstream.logits.size() != 0) {
            LinearGrads lg = linear_backward(b.pooled, params.at(kFcWeight), upstream.logits);
            add_into(grads.at(kFcWeight), lg.weights);
            add_into(grads.at(kFcBias), lg.bias);
            add_into(dmaps, global_avg_pool_backward(fshape, lg.features));
        }
        if (upstream.cam.size() != 0) {
            CamGrads cg = cam_backward(b.feature_maps, class_row(params, b.cam_class), upstream.cam);
            add_into(dmaps, cg.feature_maps);
            Tensor& fw = grads.at(kFcWeight);
            const std::size_t k = cg.class_weights.size();
            for (std::size_t c = 0; c < k; ++c) fw.at(b.cam_class, c) += cg.class_weights[c];
        }
        if (upstream.caam.size() != 0) add_into(dmaps, caam_backward(fshape, upstream.caam));

        Tensor d = std::move(dmaps);
        for (std::size_t blk = config_.widths.size(); blk-- > 0;) {
            d = relu_backward(t.pre_relu[blk], d);
            Conv2dGrads cg = conv2d_backward(t.block_inputs[blk], params.at(conv_weight(blk)), d, blk > 0);
            add_into(grads.at(conv_weight(blk)), cg.kernel);
            add_into(grads.at(conv_bias(blk)), cg.bias);
            if (blk > 0) d = avg_pool2_backward(t.pre_relu[blk - 1].shape(), cg.input);
        }
    }

    static Tensor class_row(const ParamSet& params, std::size_t cls) {
        const Tensor& w = params.at(kFcWeight);
        const std::size_t k = w.dim(1);
        Tensor row({k});
        for (std::size_t c = 0; c < k; ++c) row[c] = w.at(cls, c);
        return row;
    }

private:
    TinyCnnConfig config_;
};

}  // namespace metadefa
