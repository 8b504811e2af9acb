#pragma once

// Central finite-difference checks for every differentiable primitive.
// Each check draws random (input, upstream-gradient, direction) cases and compares
// the analytic directional derivative against (f(x + h v) - f(x - h v)) / 2h.

#include <string>
#include <vector>

#include "metadefa/losses.hpp"
#include "metadefa/model.hpp"
#include "metadefa/ops.hpp"
#include "test_util.hpp"

namespace gradcheck {

using namespace metadefa;
using testutil::directional_fd;
using testutil::dot;
using testutil::random_tensor;
using testutil::rel_error;

struct Report {
    std::string primitive;
    int cases = 0;
    int failures = 0;
    double max_rel_error = 0.0;

    void record(double analytic, double numeric) {
        const double e = rel_error(analytic, numeric);
        ++cases;
        if (!(e <= testutil::kFdTolerance)) ++failures;
        if (!(e <= max_rel_error)) max_rel_error = e;
    }
    bool passed(int min_cases) const { return failures == 0 && cases >= min_cases; }
};

inline Report conv2d(int n, std::uint64_t seed) {
    Report r{"conv2d"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t cin = rng.index(3) + 1, cout = rng.index(3) + 1, h = rng.index(5) + 1, w = rng.index(5) + 1;
        Tensor x = random_tensor({cin, h, w}, rng), k = random_tensor({cout, cin, 3, 3}, rng), b = random_tensor({cout}, rng);
        const Tensor u = random_tensor({cout, h, w}, rng);
        const Tensor dx = random_tensor(x.shape(), rng), dk = random_tensor(k.shape(), rng), db = random_tensor(b.shape(), rng);
        const Conv2dGrads g = conv2d_backward(x, k, u);
        const double analytic = dot(g.input, dx) + dot(g.kernel, dk) + dot(g.bias, db);
        const double numeric = directional_fd({&x, &k, &b}, {dx, dk, db}, [&] { return dot(u, conv2d_forward(x, k, b)); });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report relu(int n, std::uint64_t seed) {
    Report r{"relu"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t len = rng.index(12) + 1;
        Tensor x = testutil::random_away_from_zero({len}, rng);
        const Tensor u = random_tensor({len}, rng), dx = random_tensor({len}, rng);
        const double analytic = dot(relu_backward(x, u), dx);
        const double numeric = directional_fd({&x}, {dx}, [&] { return dot(u, metadefa::relu(x)); });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report avg_pool(int n, std::uint64_t seed) {
    Report r{"avg_pool2"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t c = rng.index(3) + 1, h = 2 * (rng.index(3) + 1), w = 2 * (rng.index(3) + 1);
        Tensor x = random_tensor({c, h, w}, rng);
        const Tensor u = random_tensor({c, h / 2, w / 2}, rng), dx = random_tensor(x.shape(), rng);
        const double analytic = dot(avg_pool2_backward(x.shape(), u), dx);
        const double numeric = directional_fd({&x}, {dx}, [&] { return dot(u, avg_pool2(x)); });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report global_avg_pool(int n, std::uint64_t seed) {
    Report r{"global_avg_pool"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t k = rng.index(4) + 1, h = rng.index(5) + 1, w = rng.index(5) + 1;
        Tensor x = random_tensor({k, h, w}, rng);
        const Tensor u = random_tensor({k}, rng), dx = random_tensor(x.shape(), rng);
        const double analytic = dot(global_avg_pool_backward(x.shape(), u), dx);
        const double numeric = directional_fd({&x}, {dx}, [&] { return dot(u, metadefa::global_avg_pool(x)); });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report linear(int n, std::uint64_t seed) {
    Report r{"linear"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t k = rng.index(6) + 1, c = rng.index(5) + 1;
        Tensor f = random_tensor({k}, rng), w = random_tensor({c, k}, rng), b = random_tensor({c}, rng);
        const Tensor u = random_tensor({c}, rng);
        const Tensor df = random_tensor(f.shape(), rng), dw = random_tensor(w.shape(), rng), db = random_tensor(b.shape(), rng);
        const LinearGrads g = linear_backward(f, w, u);
        const double analytic = dot(g.features, df) + dot(g.weights, dw) + dot(g.bias, db);
        const double numeric = directional_fd({&f, &w, &b}, {df, dw, db}, [&] { return dot(u, metadefa::linear(f, w, b)); });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report cross_entropy(int n, std::uint64_t seed) {
    Report r{"softmax_cross_entropy"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t c = rng.index(6) + 2, label = rng.index(c);
        Tensor z = random_tensor({c}, rng, -3.0, 3.0);
        const Tensor dz = random_tensor({c}, rng);
        const double analytic = dot(softmax_cross_entropy(z, label).grad, dz);
        const double numeric = directional_fd({&z}, {dz}, [&] { return softmax_cross_entropy(z, label).loss; });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report spatial_normalize(int n, std::uint64_t seed) {
    Report r{"spatial_normalize"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t h = rng.index(4) + 1, w = rng.index(4) + 1;
        Tensor x = random_tensor({h, w}, rng, -2.0, 2.0);
        const Tensor u = random_tensor({h, w}, rng), dx = random_tensor({h, w}, rng);
        const double analytic = dot(spatial_normalize_backward(metadefa::spatial_normalize(x), u), dx);
        const double numeric = directional_fd({&x}, {dx}, [&] { return dot(u, metadefa::spatial_normalize(x)); });
        r.record(analytic, numeric);
    }
    return r;
}

/// Strictly positive random distribution.
inline Tensor random_distribution(std::size_t n, Rng& rng) {
    Tensor p({n});
    double s = 0.0;
    for (double& v : p.values()) s += (v = rng.uniform(0.05, 1.0));
    for (double& v : p.values()) v /= s;
    return p;
}

/// Zero-sum direction: stays on the probability simplex.
inline Tensor tangent_direction(std::size_t n, Rng& rng) {
    Tensor d = random_tensor({n}, rng);
    double mean = 0.0;
    for (double v : d.values()) mean += v;
    mean /= static_cast<double>(n);
    for (double& v : d.values()) v -= mean;
    return d;
}

inline Report js(int n, std::uint64_t seed) {
    Report r{"js_divergence"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t len = rng.index(8) + 2;
        Tensor p = random_distribution(len, rng), q = random_distribution(len, rng);
        const Tensor dp = tangent_direction(len, rng), dq = tangent_direction(len, rng);
        const PairGrad g = js_divergence_grad(p, q);
        const double analytic = dot(g.first, dp) + dot(g.second, dq);
        const double numeric = directional_fd({&p, &q}, {dp, dq}, [&] { return js_divergence(p, q); });
        r.record(analytic, numeric);
    }
    return r;
}

inline Report cam_loss(int n, std::uint64_t seed) {
    Report r{"loss_cam"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t h = rng.index(4) + 1, w = rng.index(4) + 2;
        Tensor a = random_tensor({h, w}, rng, -2.0, 2.0), b = random_tensor({h, w}, rng, -2.0, 2.0);
        const Tensor da = random_tensor(a.shape(), rng), db = random_tensor(b.shape(), rng);
        const PairGrad g = loss_cam_grad(a, b);
        const double analytic = dot(g.first, da) + dot(g.second, db);
        const double numeric = directional_fd({&a, &b}, {da, db}, [&] { return loss_cam(a, b); });
        r.record(analytic, numeric);
    }
    return r;
}

/// True when min and max are unique by a margin (min-max normalization is smooth there).
inline bool clear_extremes(const Tensor& m, double margin) {
    std::vector<double> v(m.values());
    std::sort(v.begin(), v.end());
    return v.size() >= 3 && v[1] - v[0] >= margin && v[v.size() - 1] - v[v.size() - 2] >= margin;
}

/// True when no cell of the two normalized maps coincides (|.| is smooth there).
inline bool clear_abs(const Tensor& caam, const Tensor& cam, double margin) {
    const Tensor a = minmax_normalize(caam).values, b = minmax_normalize(cam).values;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::abs(a[i] - b[i]) < margin) return false;
    return true;
}

inline bool smooth_minor(const Tensor& caam, const Tensor& cam) {
    const double margin = testutil::kKinkMargin;
    return clear_extremes(caam, margin) && clear_extremes(cam, margin) && clear_abs(caam, cam, margin);
}

inline Report minor_loss(int n, std::uint64_t seed) {
    Report r{"loss_minor"};
    Rng rng(seed);
    while (r.cases < n) {
        const std::size_t h = rng.index(3) + 1, w = rng.index(3) + 3;
        Tensor a = random_tensor({h, w}, rng, -2.0, 2.0), b = random_tensor({h, w}, rng, -2.0, 2.0);
        if (!smooth_minor(a, b)) continue;
        const Tensor da = random_tensor(a.shape(), rng), db = random_tensor(b.shape(), rng);
        const PairGrad g = loss_minor_grad(a, b);
        const double analytic = dot(g.first, da) + dot(g.second, db);
        const double numeric = directional_fd({&a, &b}, {da, db}, [&] { return loss_minor(a, b); });
        r.record(analytic, numeric);
    }
    return r;
}

inline ActivationBundle random_bundle(std::size_t classes, std::size_t h, std::size_t w, std::size_t label, Rng& rng) {
    ActivationBundle b;
    b.logits = random_tensor({classes}, rng, -2.0, 2.0);
    b.cam = random_tensor({h, w}, rng, -2.0, 2.0);
    b.caam = random_tensor({h, w}, rng, -2.0, 2.0);
    b.cam_class = label;
    return b;
}

inline double grad_dot(const BundleGrad& g, const Tensor& dz, const Tensor& dcam, const Tensor& dcaam) {
    return dot(g.logits, dz) + dot(g.cam, dcam) + dot(g.caam, dcaam);
}

inline Report total(int n, std::uint64_t seed) {
    Report r{"total_loss"};
    Rng rng(seed);
    const LossWeights w;  // lambda1 = 1, lambda2 = 0.1, every term on
    while (r.cases < n) {
        const std::size_t classes = rng.index(4) + 2, label = rng.index(classes), h = rng.index(2) + 2, wd = rng.index(2) + 2;
        ActivationBundle o = random_bundle(classes, h, wd, label, rng), a = random_bundle(classes, h, wd, label, rng);
        if (!smooth_minor(o.caam, o.cam) || !smooth_minor(a.caam, a.cam)) continue;
        const double gap = std::abs(loss_minor(o.caam, o.cam) - loss_minor(a.caam, a.cam));
        if (gap < testutil::kKinkMargin || gap > kStyleCap - testutil::kKinkMargin) continue;
        std::vector<Tensor> dirs;
        for (Tensor* t : {&o.logits, &o.cam, &o.caam, &a.logits, &a.cam, &a.caam}) dirs.push_back(random_tensor(t->shape(), rng));
        const ObjectiveResult res = evaluate_objective(o, a, label, w);
        const double analytic = grad_dot(res.grad_ori, dirs[0], dirs[1], dirs[2]) + grad_dot(res.grad_aug, dirs[3], dirs[4], dirs[5]);
        const double numeric = directional_fd({&o.logits, &o.cam, &o.caam, &a.logits, &a.cam, &a.caam}, dirs,
                                              [&] { return total_loss(o, a, label, w).total; });
        r.record(analytic, numeric);
    }
    return r;
}

/// Every primitive listed for the gradient suite, plus average pooling.
inline std::vector<Report> run_all(int n, std::uint64_t seed) {
    return {conv2d(n, seed + 1),       relu(n, seed + 2),   avg_pool(n, seed + 3),
            global_avg_pool(n, seed + 4), linear(n, seed + 5), cross_entropy(n, seed + 6),
            spatial_normalize(n, seed + 7), js(n, seed + 8),   cam_loss(n, seed + 9),
            minor_loss(n, seed + 10),   total(n, seed + 11)};
}

}  // namespace gradcheck
