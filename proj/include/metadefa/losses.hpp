#pragma once

// Multi-channel feature alignment objective:
//
//   L = L_CE + lambda1 * (L_CAM + L_minor_ori + L_minor_aug) - lambda2 * L_style
//
// L_CAM is the Jensen-Shannon divergence between the spatially softmax-normalized
// CAMs of the original and augmented view. L_minor is the mean absolute difference
// between min-max normalized CAAM and CAM of one view. L_style = |L_minor_ori - L_minor_aug|.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "metadefa/model.hpp"
#include "metadefa/ops.hpp"
#include "metadefa/tensor.hpp"

namespace metadefa {

/// Largest value L_style may take; min-max normalized minors are in [0, 1].
inline constexpr double kStyleCap = 1.0;

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 0.1;
    // Per-term switches for ablations. A disabled term is neither computed nor reported.
    bool use_cam = true;
    bool use_minor = true;
    bool use_style = true;

    void validate() const {
        if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2)) {
            throw std::invalid_argument("LossWeights: lambda1 and lambda2 must be finite and >= 0");
        }
    }
};

struct LossBreakdown {
    double ce = 0.0;
    double cam = 0.0;
    double minor_ori = 0.0;
    double minor_aug = 0.0;
    double style = 0.0;
    double total = 0.0;

    static double combine(double ce, double cam, double minor_ori, double minor_aug, double style,
                          const LossWeights& w) {
        return ce + w.lambda1 * (cam + minor_ori + minor_aug) - w.lambda2 * style;
    }

    LossBreakdown& operator+=(const LossBreakdown& o) {
        ce += o.ce;
        cam += o.cam;
        minor_ori += o.minor_ori;
        minor_aug += o.minor_aug;
        style += o.style;
        total += o.total;
        return *this;
    }

    /// Component-wise mean of a sum of n breakdowns; total recomputed from the means.
    LossBreakdown averaged(std::size_t n, const LossWeights& w) const {
        const double s = 1.0 / static_cast<double>(n);
        LossBreakdown out{ce * s, cam * s, minor_ori * s, minor_aug * s, style * s, 0.0};
        out.total = combine(out.ce, out.cam, out.minor_ori, out.minor_aug, out.style, w);
        return out;
    }
};

// ---------------------------------------------------------------------------
// spatial softmax normalization
// ---------------------------------------------------------------------------

/// Softmax over all cells of the map; strictly positive, sums to 1.
inline Tensor spatial_normalize(const Tensor& map) {
    return softmax(map.reshaped({map.size()})).reshaped(map.shape());
}

/// Vector-Jacobian product of spatial_normalize, given its output p.
inline Tensor spatial_normalize_backward(const Tensor& p, const Tensor& grad_p) {
    require_shape(grad_p, p.shape(), "spatial_normalize_backward");
    double dot = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) dot += p[i] * grad_p[i];
    Tensor g = Tensor::zeros_like(p);
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = p[i] * (grad_p[i] - dot);
    return g;
}

// ---------------------------------------------------------------------------
// Jensen-Shannon divergence
// ---------------------------------------------------------------------------

inline constexpr double kDistributionTolerance = 1e-9;

namespace detail {

inline void check_distribution(const Tensor& p, const char* what) {
    double s = 0.0;
    for (double v : p.values()) {
        if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative or NaN probability");
        s += v;
    }
    if (std::abs(s - 1.0) > kDistributionTolerance) {
        throw std::invalid_argument(std::string(what) + ": probabilities sum to " + std::to_string(s) +
                                    ", not 1");
    }
}

inline double xlogy_ratio(double x, double m) { return x > 0.0 ? x * std::log(x / m) : 0.0; }

}  // namespace detail

/// 0.5 KL(p||m) + 0.5 KL(q||m), m = (p + q) / 2, natural log.
inline double js_divergence(const Tensor& p, const Tensor& q) {
    if (p.size() != q.size()) throw std::invalid_argument("js_divergence: size mismatch");
    detail::check_distribution(p, "js_divergence p");
    detail::check_distribution(q, "js_divergence q");
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        js += 0.5 * (detail::xlogy_ratio(p[i], m) + detail::xlogy_ratio(q[i], m));
    }
    return std::clamp(js, 0.0, std::numbers::ln2);
}

struct PairGrad {
    Tensor first;
    Tensor second;
};

/// Partial derivatives dJS/dp_i = 0.5 log(p_i / m_i), likewise for q. Requires p, q > 0.
inline PairGrad js_divergence_grad(const Tensor& p, const Tensor& q) {
    PairGrad g{Tensor::zeros_like(p), Tensor::zeros_like(q)};
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        g.first[i] = p[i] > 0.0 ? 0.5 * std::log(p[i] / m) : 0.0;
        g.second[i] = q[i] > 0.0 ? 0.5 * std::log(q[i] / m) : 0.0;
    }
    return g;
}

// ---------------------------------------------------------------------------
// L_CAM
// ---------------------------------------------------------------------------

inline double loss_cam(const Tensor& cam_ori, const Tensor& cam_aug) {
    if (cam_ori.shape() != cam_aug.shape()) {
        throw std::invalid_argument("loss_cam: shape mismatch " + shape_str(cam_ori.shape()) + " vs " +
                                    shape_str(cam_aug.shape()));
    }
    return js_divergence(spatial_normalize(cam_ori), spatial_normalize(cam_aug));
}

inline PairGrad loss_cam_grad(const Tensor& cam_ori, const Tensor& cam_aug) {
    const Tensor p = spatial_normalize(cam_ori);
    const Tensor q = spatial_normalize(cam_aug);
    const PairGrad dj = js_divergence_grad(p, q);
    return {spatial_normalize_backward(p, dj.first), spatial_normalize_backward(q, dj.second)};
}

// ---------------------------------------------------------------------------
// min-max normalization and L_minor
// ---------------------------------------------------------------------------

/// Range below which a map counts as constant and normalizes to all zeros.
inline constexpr double kDegenerateRange = 1e-12;

struct MinMaxNormalized {
    Tensor values;
    std::size_t argmin = 0;
    std::size_t argmax = 0;
    double range = 0.0;
    bool degenerate = true;
};

inline MinMaxNormalized minmax_normalize(const Tensor& map) {
    MinMaxNormalized n{Tensor::zeros_like(map)};
    if (map.size() == 0) return n;
    for (std::size_t i = 1; i < map.size(); ++i) {
        if (map[i] < map[n.argmin]) n.argmin = i;
        if (map[i] > map[n.argmax]) n.argmax = i;
    }
    const double lo = map[n.argmin];
    n.range = map[n.argmax] - lo;
    n.degenerate = !(n.range > kDegenerateRange * std::max(1.0, std::abs(lo)));
    if (!n.degenerate)
        for (std::size_t i = 0; i < map.size(); ++i) n.values[i] = (map[i] - lo) / n.range;
    return n;
}

inline Tensor minmax_normalize_backward(const MinMaxNormalized& n, const Tensor& grad_out) {
    Tensor g = Tensor::zeros_like(n.values);
    if (n.degenerate) return g;
    double to_min = 0.0, to_max = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] = grad_out[i] / n.range;
        to_min += grad_out[i] * (n.values[i] - 1.0);
        to_max -= grad_out[i] * n.values[i];
    }
    g[n.argmin] += to_min / n.range;
    g[n.argmax] += to_max / n.range;
    return g;
}

/// Mean absolute difference of the min-max normalized CAAM and CAM.
inline double loss_minor(const Tensor& caam, const Tensor& cam) {
    if (caam.shape() != cam.shape()) {
        throw std::invalid_argument("loss_minor: shape mismatch " + shape_str(caam.shape()) + " vs " +
                                    shape_str(cam.shape()));
    }
    const Tensor a = minmax_normalize(caam).values;
    const Tensor b = minmax_normalize(cam).values;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

/// Gradient w.r.t. (caam, cam). |.| has subgradient 0 at 0.
inline PairGrad loss_minor_grad(const Tensor& caam, const Tensor& cam) {
    const MinMaxNormalized a = minmax_normalize(caam);
    const MinMaxNormalized b = minmax_normalize(cam);
    const double inv = 1.0 / static_cast<double>(caam.size());
    Tensor da = Tensor::zeros_like(caam), db = Tensor::zeros_like(cam);
    for (std::size_t i = 0; i < da.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        const double s = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
        da[i] = s;
        db[i] = -s;
    }
    return {minmax_normalize_backward(a, da), minmax_normalize_backward(b, db)};
}

// ---------------------------------------------------------------------------
// L_style
// ---------------------------------------------------------------------------

inline double loss_style(double minor_ori, double minor_aug) {
    return std::min(std::abs(minor_ori - minor_aug), kStyleCap);
}

/// d L_style / d minor_ori; the derivative w.r.t. minor_aug is its negation.
inline double loss_style_grad(double minor_ori, double minor_aug) {
    const double d = minor_ori - minor_aug;
    if (std::abs(d) >= kStyleCap) return 0.0;
    return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
}

// ---------------------------------------------------------------------------
// total objective for one (original, augmented) pair
// ---------------------------------------------------------------------------

struct ObjectiveResult {
    LossBreakdown loss;
    BundleGrad grad_ori;
    BundleGrad grad_aug;
};

namespace detail {

inline void add_scaled(Tensor& dst, const Tensor& src, double alpha) {
    if (dst.size() == 0) dst = Tensor::zeros_like(src);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
}

inline void check_bundles(const ActivationBundle& ori, const ActivationBundle& aug, std::size_t label) {
    if (ori.cam.shape() != aug.cam.shape() || ori.caam.shape() != aug.caam.shape() ||
        ori.cam.shape() != ori.caam.shape()) {
        throw std::invalid_argument("total_loss: bundles disagree on spatial shape");
    }
    if (ori.logits.shape() != aug.logits.shape()) throw std::invalid_argument("total_loss: logits shape mismatch");
    if (ori.cam_class != label || aug.cam_class != label) {
        throw std::invalid_argument("total_loss: CAMs were not computed for label " + std::to_string(label));
    }
}

}  // namespace detail

/// Loss and its gradient w.r.t. both bundles' logits, CAM and CAAM.
/// L_CE is the mean of the two views' cross-entropies.
inline ObjectiveResult evaluate_objective(const ActivationBundle& ori, const ActivationBundle& aug,
                                          std::size_t label, const LossWeights& w) {
    w.validate();
    detail::check_bundles(ori, aug, label);
    ObjectiveResult r;
    LossBreakdown& l = r.loss;

    const LossAndGrad ce_o = softmax_cross_entropy(ori.logits, label);
    const LossAndGrad ce_a = softmax_cross_entropy(aug.logits, label);
    l.ce = 0.5 * (ce_o.loss + ce_a.loss);
    detail::add_scaled(r.grad_ori.logits, ce_o.grad, 0.5);
    detail::add_scaled(r.grad_aug.logits, ce_a.grad, 0.5);

    if (w.use_cam) {
        l.cam = loss_cam(ori.cam, aug.cam);
        const PairGrad g = loss_cam_grad(ori.cam, aug.cam);
        detail::add_scaled(r.grad_ori.cam, g.first, w.lambda1);
        detail::add_scaled(r.grad_aug.cam, g.second, w.lambda1);
    }
    if (w.use_minor) {
        l.minor_ori = loss_minor(ori.caam, ori.cam);
        l.minor_aug = loss_minor(aug.caam, aug.cam);
        double coef_ori = w.lambda1, coef_aug = w.lambda1;
        if (w.use_style) {
            l.style = loss_style(l.minor_ori, l.minor_aug);
            const double ds = loss_style_grad(l.minor_ori, l.minor_aug);
            coef_ori -= w.lambda2 * ds;
            coef_aug += w.lambda2 * ds;
        }
        const PairGrad go = loss_minor_grad(ori.caam, ori.cam);
        const PairGrad ga = loss_minor_grad(aug.caam, aug.cam);
        detail::add_scaled(r.grad_ori.caam, go.first, coef_ori);
        detail::add_scaled(r.grad_ori.cam, go.second, coef_ori);
        detail::add_scaled(r.grad_aug.caam, ga.first, coef_aug);
        detail::add_scaled(r.grad_aug.cam, ga.second, coef_aug);
    }
    l.total = LossBreakdown::combine(l.ce, l.cam, l.minor_ori, l.minor_aug, l.style, w);
    return r;
}

inline LossBreakdown total_loss(const ActivationBundle& ori, const ActivationBundle& aug, std::size_t label,
                                const LossWeights& w) {
    return evaluate_objective(ori, aug, label, w).loss;
}

}  // namespace metadefa
