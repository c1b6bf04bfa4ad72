#ifndef TCM_OPTICAL_FLOW_HPP
#define TCM_OPTICAL_FLOW_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "parallel.hpp"

namespace tcm {

/// Horn-Schunck solver configuration.
struct HSParams {
    double alpha = 0.003;    ///< weight of the H1 seminorm of (u,v)
    int max_iters = 500;     ///< Jacobi sweeps per pyramid level
    double tol = 1e-4;       ///< stop when the mean per-pixel update drops below this (px)
    int pyramid_levels = 4;
    double pyramid_scale = 0.5;

    void validate() const {
        if (!(alpha > 0.0)) {
            throw ValidationError("hs.alpha must be > 0");
        }
        if (!(tol > 0.0)) {
            throw ValidationError("hs.tol must be > 0");
        }
        if (max_iters < 1) {
            throw ValidationError("hs.max_iters must be >= 1");
        }
        if (pyramid_levels < 1) {
            throw ValidationError("hs.pyramid_levels must be >= 1");
        }
        if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) {
            throw ValidationError("hs.pyramid_scale must lie in (0,1)");
        }
    }
};

/// One line of the solver diagnostics. Level 0 is the finest; iteration 0
/// is the state before the first sweep.
struct HSTraceEntry {
    int level = 0;
    int iteration = 0;
    double energy = 0.0;
    double mean_update = 0.0;
};

using HSTraceSink = std::function<void(const HSTraceEntry&)>;

inline void write_hs_trace_csv(std::ostream& out, const std::vector<HSTraceEntry>& trace) {
    out << "level,iteration,energy,mean_update\n";
    for (const auto& e : trace) {
        out << e.level << ',' << e.iteration << ',' << e.energy << ',' << e.mean_update << '\n';
    }
}

namespace detail {

// Brightness-constancy linearization of the pair: averaged spatial gradient
// of both frames and the forward temporal difference.
struct Linearization {
    Image ix;
    Image iy;
    Image it;
};

inline Linearization linearize(const Image& a, const Image& b) {
    auto [ax, ay] = spatial_gradient(a);
    auto [bx, by] = spatial_gradient(b);
    Linearization lin{std::move(ax), std::move(ay), temporal_derivative(a, b)};
    for (std::size_t i = 0; i < lin.ix.size(); ++i) {
        lin.ix[i] = 0.5 * (lin.ix[i] + bx[i]);
        lin.iy[i] = 0.5 * (lin.iy[i] + by[i]);
    }
    return lin;
}

inline double hs_energy(const Linearization& lin, const FlowField& f, double alpha) {
    const int w = f.width();
    const int h = f.height();
    double data = 0.0;
    double smooth = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = f.u.index(x, y);
            const double r = f.u[i] * lin.ix[i] + f.v[i] * lin.iy[i] + lin.it[i];
            data += r * r;
            if (x + 1 < w) {
                const double du = f.u(x + 1, y) - f.u[i];
                const double dv = f.v(x + 1, y) - f.v[i];
                smooth += du * du + dv * dv;
            }
            if (y + 1 < h) {
                const double du = f.u(x, y + 1) - f.u[i];
                const double dv = f.v(x, y + 1) - f.v[i];
                smooth += du * du + dv * dv;
            }
        }
    }
    return data + alpha * smooth;
}

// One Jacobi sweep. Each pixel's (u,v) is replaced by the exact minimizer of
// the discrete energy with its neighbors frozen at the previous iterate;
// n_p is the number of in-domain 4-neighbors. Returns the mean update.
inline double hs_sweep(const Linearization& lin, const FlowField& cur, FlowField& next,
                       double alpha) {
    const int w = cur.width();
    const int h = cur.height();
    std::vector<double> row_update(h, 0.0);
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        double acc = 0.0;
        for (int x = 0; x < w; ++x) {
            double su = 0.0;
            double sv = 0.0;
            int n = 0;
            auto add = [&](int nx, int ny) {
                su += cur.u(nx, ny);
                sv += cur.v(nx, ny);
                ++n;
            };
            if (x > 0) add(x - 1, y);
            if (x + 1 < w) add(x + 1, y);
            if (y > 0) add(x, y - 1);
            if (y + 1 < h) add(x, y + 1);
            const double ubar = su / n;
            const double vbar = sv / n;
            const std::size_t i = cur.u.index(x, y);
            const double gx = lin.ix[i];
            const double gy = lin.iy[i];
            const double k = (gx * ubar + gy * vbar + lin.it[i]) / (alpha * n + gx * gx + gy * gy);
            const double nu = ubar - gx * k;
            const double nv = vbar - gy * k;
            const double du = nu - cur.u[i];
            const double dv = nv - cur.v[i];
            acc += std::sqrt(du * du + dv * dv);
            next.u[i] = nu;
            next.v[i] = nv;
        }
        row_update[row] = acc;
    });
    double total = 0.0;
    for (double r : row_update) {
        total += r;
    }
    return total / static_cast<double>(cur.size());
}

// Solves one pyramid level from the zero field.
inline FlowField horn_schunck_level(const Image& a, const Image& b, const HSParams& p, int level,
                                    const HSTraceSink& sink) {
    const Linearization lin = linearize(a, b);
    FlowField cur(a.width(), a.height());
    FlowField next(a.width(), a.height());
    if (sink) {
        sink({level, 0, hs_energy(lin, cur, p.alpha), 0.0});
    }
    for (int it = 1; it <= p.max_iters; ++it) {
        const double update = hs_sweep(lin, cur, next, p.alpha);
        std::swap(cur, next);
        if (sink) {
            sink({level, it, hs_energy(lin, cur, p.alpha), update});
        }
        if (update < p.tol) {
            break;
        }
    }
    return cur;
}

constexpr int kMinPyramidSide = 16;

}

/// Discrete Horn-Schunck energy of flow f for the pair (a, b):
/// sum of (u Ix + v Iy + It)^2 + alpha (|grad u|^2 + |grad v|^2), with
/// forward-difference gradients that vanish across the outer border.
inline double hs_energy(const Image& a, const Image& b, const FlowField& f, double alpha) {
    detail::require_same_shape(a, b, "hs_energy");
    if (!f.same_shape(a)) {
        throw ValidationError("hs_energy: flow and image dimensions differ");
    }
    return detail::hs_energy(detail::linearize(a, b), f, alpha);
}

/// Horn-Schunck optical flow from a to b: the returned f satisfies
/// warp(b, f) ~= a. Coarse-to-fine when p.pyramid_levels > 1; each finer
/// level warps b by the upscaled estimate and solves for the residual.
inline FlowField horn_schunck(const Image& a, const Image& b, const HSParams& p,
                              const HSTraceSink& sink = {}) {
    p.validate();
    detail::require_same_shape(a, b, "horn_schunck");

    std::vector<Image> pa{a};
    std::vector<Image> pb{b};
    while (static_cast<int>(pa.size()) < p.pyramid_levels) {
        const Image& top = pa.back();
        const double side = std::min(top.width(), top.height()) * p.pyramid_scale;
        if (side < detail::kMinPyramidSide) {
            break;
        }
        pa.push_back(downsample(top, p.pyramid_scale));
        pb.push_back(downsample(pb.back(), p.pyramid_scale));
    }

    FlowField flow;
    for (int level = static_cast<int>(pa.size()) - 1; level >= 0; --level) {
        const Image& la = pa[level];
        const Image& lb = pb[level];
        if (flow.size() == 0) {
            flow = detail::horn_schunck_level(la, lb, p, level, sink);
            continue;
        }
        flow = resample_flow(flow, la.width(), la.height());
        const FlowField residual = detail::horn_schunck_level(la, warp(lb, flow), p, level, sink);
        for (std::size_t i = 0; i < flow.size(); ++i) {
            flow.u[i] += residual.u[i];
            flow.v[i] += residual.v[i];
        }
    }
    return flow;
}

/// RMSE between warp(b, f) and a.
inline double flow_residual(const Image& a, const Image& b, const FlowField& f) {
    detail::require_same_shape(a, b, "flow_residual");
    return rmse(warp(b, f), a);
}

}

#endif
