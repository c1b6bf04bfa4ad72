#ifndef TCM_NLTV_HPP
#define TCM_NLTV_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "flow_io.hpp"
#include "grid.hpp"
#include "parallel.hpp"

namespace tcm {

/// Smoothing of the square root in the nonlocal TV term.
inline constexpr double kNLTVEpsilon = 1e-8;

struct NLTVParams {
    double alpha = 0.005;     ///< regularization weight
    double h = 0.05;          ///< weight scale; w = exp(-d / h^2)
    double a = 1.0;           ///< std dev of the Gaussian patch mask
    int patch_radius = 2;
    int window_radius = 7;
    double kernel_sigma = 1.0;  ///< std dev of the blur kernel k
    int max_iters = 300;
    double step0 = 0.5;
    int weight_keep = 10;     ///< strongest neighbors kept per pixel before symmetrization
    double rel_tol = 1e-6;    ///< stop once the relative energy decrease falls below this

    void validate() const {
        auto positive = [](double v, const char* key) {
            if (!(v > 0.0)) {
                throw ValidationError(std::string(key) + " must be > 0");
            }
        };
        positive(alpha, "nltv.alpha");
        positive(h, "nltv.h");
        positive(a, "nltv.a");
        positive(kernel_sigma, "nltv.kernel_sigma");
        positive(step0, "nltv.step0");
        positive(rel_tol, "nltv.rel_tol");
        if (patch_radius < 1) {
            throw ValidationError("nltv.patch_radius must be >= 1");
        }
        if (window_radius < patch_radius) {
            throw ValidationError("nltv.window_radius must be >= nltv.patch_radius");
        }
        if (max_iters < 1) {
            throw ValidationError("nltv.max_iters must be >= 1");
        }
        if (weight_keep < 1) {
            throw ValidationError("nltv.weight_keep must be >= 1");
        }
    }
};

/// Sparse symmetric pixel graph. Each adjacency list is sorted by
/// neighbor index.
struct WeightGraph {
    struct Edge {
        std::int32_t neighbor;
        double weight;
        friend bool operator==(const Edge&, const Edge&) = default;
    };

    int width = 0;
    int height = 0;
    std::vector<std::vector<Edge>> adjacency;

    std::size_t size() const { return adjacency.size(); }
    const std::vector<Edge>& operator[](std::size_t i) const { return adjacency[i]; }

    std::size_t max_degree() const {
        std::size_t k = 0;
        for (const auto& list : adjacency) {
            k = std::max(k, list.size());
        }
        return k;
    }

    /// Looks up w(i, j); 0 when the pair is not connected.
    double weight(std::size_t i, std::size_t j) const {
        const auto& list = adjacency[i];
        const auto it = std::lower_bound(list.begin(), list.end(), static_cast<std::int32_t>(j),
                                         [](const Edge& e, std::int32_t v) { return e.neighbor < v; });
        return it != list.end() && it->neighbor == static_cast<std::int32_t>(j) ? it->weight : 0.0;
    }

    bool symmetric() const {
        for (std::size_t i = 0; i < adjacency.size(); ++i) {
            for (const Edge& e : adjacency[i]) {
                if (e.neighbor < 0 || static_cast<std::size_t>(e.neighbor) >= adjacency.size() ||
                    weight(static_cast<std::size_t>(e.neighbor), i) != e.weight) {
                    return false;
                }
            }
        }
        return true;
    }

    friend bool operator==(const WeightGraph&, const WeightGraph&) = default;
};

namespace detail {

// Gaussian mask over the (2r+1)^2 patch offsets, normalized to unit sum,
// stored row-major from (-r,-r).
inline std::vector<double> patch_mask(int r, double a) {
    std::vector<double> mask;
    double total = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * a * a));
            mask.push_back(g);
            total += g;
        }
    }
    for (double& g : mask) {
        g /= total;
    }
    return mask;
}

inline double clamped(const Image& f, int x, int y) {
    return f(std::clamp(x, 0, f.width() - 1), std::clamp(y, 0, f.height() - 1));
}

inline double patch_distance(const Image& f, int x0, int y0, int x1, int y1, int r,
                             const std::vector<double>& mask) {
    double d = 0.0;
    std::size_t m = 0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx, ++m) {
            d += mask[m] * std::abs(clamped(f, x0 + dx, y0 + dy) - clamped(f, x1 + dx, y1 + dy));
        }
    }
    return d;
}

}

/// Nonlocal similarity weight between pixels (x0,y0) and (x1,y1) of f:
/// exp(-d / h^2) with d the mask-weighted mean absolute patch difference.
/// Floored at the smallest normal double so the weight stays positive.
inline double nltv_weight(const Image& f, int x0, int y0, int x1, int y1, const NLTVParams& p) {
    const auto mask = detail::patch_mask(p.patch_radius, p.a);
    const double d = detail::patch_distance(f, x0, y0, x1, y1, p.patch_radius, mask);
    return std::max(std::exp(-d / (p.h * p.h)), std::numeric_limits<double>::min());
}

/// Windowed weights, the weight_keep strongest per pixel (ties to the lower
/// index), then the union of both directions.
inline WeightGraph build_weights(const Image& f, const NLTVParams& p) {
    p.validate();
    const int w = f.width();
    const int h = f.height();
    const int r = p.window_radius;
    const auto mask = detail::patch_mask(p.patch_radius, p.a);
    const double inv_h2 = 1.0 / (p.h * p.h);

    using Candidate = WeightGraph::Edge;
    std::vector<std::vector<Candidate>> kept(f.size());
    parallel_for(f.size(), [&](std::size_t i) {
        const int x = static_cast<int>(i % w);
        const int y = static_cast<int>(i / w);
        std::vector<Candidate> cand;
        for (int ny = std::max(0, y - r); ny <= std::min(h - 1, y + r); ++ny) {
            for (int nx = std::max(0, x - r); nx <= std::min(w - 1, x + r); ++nx) {
                if (nx == x && ny == y) {
                    continue;
                }
                const double d = detail::patch_distance(f, x, y, nx, ny, p.patch_radius, mask);
                const double wt = std::max(std::exp(-d * inv_h2), std::numeric_limits<double>::min());
                cand.push_back({static_cast<std::int32_t>(f.index(nx, ny)), wt});
            }
        }
        const std::size_t keep = std::min(cand.size(), static_cast<std::size_t>(p.weight_keep));
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                          [](const Candidate& l, const Candidate& r2) {
                              return l.weight > r2.weight ||
                                     (l.weight == r2.weight && l.neighbor < r2.neighbor);
                          });
        cand.resize(keep);
        kept[i] = std::move(cand);
    });

    WeightGraph g{w, h, std::vector<std::vector<WeightGraph::Edge>>(f.size())};
    for (std::size_t i = 0; i < f.size(); ++i) {
        for (const auto& e : kept[i]) {
            g.adjacency[i].push_back(e);
            g.adjacency[static_cast<std::size_t>(e.neighbor)].push_back(
                {static_cast<std::int32_t>(i), e.weight});
        }
    }
    for (auto& list : g.adjacency) {
        std::sort(list.begin(), list.end(),
                  [](const auto& l, const auto& r2) { return l.neighbor < r2.neighbor; });
        list.erase(std::unique(list.begin(), list.end(),
                               [](const auto& l, const auto& r2) { return l.neighbor == r2.neighbor; }),
                   list.end());
    }
    return g;
}

namespace detail {

inline void require_graph(const Image& u, const WeightGraph& g) {
    if (g.width != u.width() || g.height != u.height() || g.size() != u.size()) {
        throw ValidationError("weight graph and image dimensions differ");
    }
}

// sqrt(sum_y w (u_x - u_y)^2 + eps^2) per pixel.
inline std::vector<double> nonlocal_magnitude(const Image& u, const WeightGraph& g, double eps) {
    std::vector<double> s(u.size());
    parallel_for(u.size(), [&](std::size_t i) {
        double acc = eps * eps;
        for (const auto& e : g[i]) {
            const double d = u[i] - u[static_cast<std::size_t>(e.neighbor)];
            acc += e.weight * d * d;
        }
        s[i] = std::sqrt(acc);
    });
    return s;
}

// Ordered sum of per-row partial sums: identical for every thread count.
template<typename Term>
double ordered_sum(const Image& shape, Term&& term) {
    const int w = shape.width();
    std::vector<double> rows(shape.height(), 0.0);
    parallel_for(rows.size(), [&](std::size_t y) {
        double acc = 0.0;
        for (int x = 0; x < w; ++x) {
            acc += term(y * w + x);
        }
        rows[y] = acc;
    });
    double total = 0.0;
    for (double r : rows) {
        total += r;
    }
    return total;
}

}

/// Discrete deconvolution energy:
/// sum (f - k*u)^2 + alpha * sum_x sqrt(sum_y w(x,y) (u(x)-u(y))^2 + eps^2).
inline double nltv_energy(const Image& u, const Image& f, const BlurKernel& k, const WeightGraph& g,
                          double alpha, double eps = kNLTVEpsilon) {
    detail::require_same_shape(u, f, "nltv_energy");
    detail::require_graph(u, g);
    const Image ku = convolve(u, k);
    const std::vector<double> s = detail::nonlocal_magnitude(u, g, eps);
    return detail::ordered_sum(u, [&](std::size_t i) {
        const double r = f[i] - ku[i];
        return r * r + alpha * s[i];
    });
}

/// Gradient of nltv_energy with respect to u.
inline Image nltv_gradient(const Image& u, const Image& f, const BlurKernel& k, const WeightGraph& g,
                           double alpha, double eps = kNLTVEpsilon) {
    detail::require_same_shape(u, f, "nltv_gradient");
    detail::require_graph(u, g);
    Image residual = convolve(u, k);
    for (std::size_t i = 0; i < residual.size(); ++i) {
        residual[i] = 2.0 * (residual[i] - f[i]);
    }
    Image grad = convolve_adjoint(residual, k);
    const std::vector<double> s = detail::nonlocal_magnitude(u, g, eps);
    parallel_for(u.size(), [&](std::size_t i) {
        double acc = 0.0;
        for (const auto& e : g[i]) {
            const auto j = static_cast<std::size_t>(e.neighbor);
            acc += e.weight * (u[i] - u[j]) * (1.0 / s[i] + 1.0 / s[j]);
        }
        grad[i] += alpha * acc;
    });
    return grad;
}

struct NLTVTraceEntry {
    int iteration = 0;
    double energy = 0.0;
    double step = 0.0;
};

struct NLTVResult {
    Image image;  ///< clamped to [0,1]
    std::vector<NLTVTraceEntry> trace;
    double final_energy = 0.0;  ///< energy of the last iterate before clamping
};

inline void write_nltv_trace_csv(std::ostream& out, const std::vector<NLTVTraceEntry>& trace) {
    out << "iteration,energy,step\n";
    for (const auto& e : trace) {
        out << e.iteration << ',' << e.energy << ',' << e.step << '\n';
    }
}

/// Gradient descent from u = f with backtracking: the step is halved until
/// the energy drops, and grown by 1.2 after each accepted step. Entry 0 of
/// the trace is the starting energy.
inline NLTVResult nltv_solve(const Image& f, const WeightGraph& g, const NLTVParams& p) {
    p.validate();
    detail::require_graph(f, g);
    const BlurKernel k(p.kernel_sigma);
    Image u = f;
    double energy = nltv_energy(u, f, k, g, p.alpha);
    std::vector<NLTVTraceEntry> trace{{0, energy, 0.0}};
    double step = p.step0;
    constexpr double kMinStep = 1e-20;
    for (int it = 1; it <= p.max_iters; ++it) {
        const Image grad = nltv_gradient(u, f, k, g, p.alpha);
        bool accepted = false;
        Image cand(u.width(), u.height());
        double cand_energy = energy;
        while (step > kMinStep) {
            for (std::size_t i = 0; i < u.size(); ++i) {
                cand[i] = u[i] - step * grad[i];
            }
            cand_energy = nltv_energy(cand, f, k, g, p.alpha);
            if (cand_energy < energy) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            break;
        }
        const double decrease = (energy - cand_energy) / energy;
        u = std::move(cand);
        energy = cand_energy;
        trace.push_back({it, energy, step});
        step *= 1.2;
        if (decrease < p.rel_tol) {
            break;
        }
    }
    return {clamp_unit(std::move(u)), std::move(trace), energy};
}

/// Builds the weights from f itself and deconvolves.
inline Image nltv_deconvolve(const Image& f, const NLTVParams& p) {
    return nltv_solve(f, build_weights(f, p), p).image;
}

/// "NLTW", int32 width, height, k, then per pixel k (int32 neighbor,
/// float32 weight) records, little-endian; k is the largest degree and
/// shorter lists are padded with (-1, 0).
inline std::vector<std::uint8_t> encode_weights(const WeightGraph& g) {
    const auto k = static_cast<std::int32_t>(g.max_degree());
    std::vector<std::uint8_t> out;
    out.reserve(16 + 8 * g.size() * static_cast<std::size_t>(k));
    for (char c : {'N', 'L', 'T', 'W'}) {
        out.push_back(static_cast<std::uint8_t>(c));
    }
    detail::put_i32(out, g.width);
    detail::put_i32(out, g.height);
    detail::put_i32(out, k);
    for (const auto& list : g.adjacency) {
        for (std::int32_t j = 0; j < k; ++j) {
            if (static_cast<std::size_t>(j) < list.size()) {
                detail::put_i32(out, list[j].neighbor);
                detail::put_f32(out, static_cast<float>(list[j].weight));
            } else {
                detail::put_i32(out, -1);
                detail::put_f32(out, 0.0f);
            }
        }
    }
    return out;
}

/// Weights come back at float32 precision.
inline WeightGraph decode_weights(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "NLTW", 4) != 0) {
        throw ValidationError("weight file: missing NLTW tag");
    }
    const std::int32_t w = detail::get_i32(bytes, 4);
    const std::int32_t h = detail::get_i32(bytes, 8);
    const std::int32_t k = detail::get_i32(bytes, 12);
    if (w < 2 || h < 2 || k < 0 ||
        bytes.size() != 16 + 8 * static_cast<std::size_t>(w) * h * static_cast<std::size_t>(k)) {
        throw ValidationError("weight file: bad dimensions or length");
    }
    const std::size_t n = static_cast<std::size_t>(w) * h;
    WeightGraph g{w, h, std::vector<std::vector<WeightGraph::Edge>>(n)};
    std::size_t pos = 16;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::int32_t j = 0; j < k; ++j, pos += 8) {
            const std::int32_t nb = detail::get_i32(bytes, pos);
            const float wt = detail::get_f32(bytes, pos + 4);
            if (nb == -1) {
                continue;
            }
            if (nb < 0 || static_cast<std::size_t>(nb) >= n || !(wt > 0.0f && wt <= 1.0f)) {
                throw ValidationError("weight file: bad record for pixel " + std::to_string(i));
            }
            g.adjacency[i].push_back({nb, wt});
        }
        std::sort(g.adjacency[i].begin(), g.adjacency[i].end(),
                  [](const auto& l, const auto& r) { return l.neighbor < r.neighbor; });
    }
    if (!g.symmetric()) {
        throw ValidationError("weight file: graph is not symmetric");
    }
    return g;
}

inline void write_weights(const WeightGraph& g, const std::filesystem::path& path) {
    detail::dump(encode_weights(g), path);
}

inline WeightGraph read_weights(const std::filesystem::path& path) {
    return decode_weights(detail::slurp(path));
}

}

#endif
