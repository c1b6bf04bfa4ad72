#ifndef TCM_TURBULENCE_SIM_HPP
#define TCM_TURBULENCE_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "flow_io.hpp"
#include "grid.hpp"
#include "image_io.hpp"
#include "parallel.hpp"

namespace tcm {

/// Synthetic degradation: smooth random domain deformation per frame, then
/// Gaussian blur, then additive Gaussian noise.
struct SimParams {
    int n_frames = 10;
    double amplitude = 2.0;        ///< max displacement magnitude (px)
    double flow_smoothness = 4.0;  ///< Gaussian sigma applied to the raw noise fields (px)
    double blur_sigma = 1.0;
    double noise_sigma = 0.01;
    std::uint64_t seed = 42;
    bool zero_mean_flows = true;

    void validate() const {
        if (n_frames < 2) {
            throw ValidationError("sim.n_frames must be >= 2");
        }
        if (!(amplitude >= 0.0)) {
            throw ValidationError("sim.amplitude must be >= 0");
        }
        if (!(flow_smoothness > 0.0)) {
            throw ValidationError("sim.flow_smoothness must be > 0");
        }
        if (!(blur_sigma >= 0.0)) {
            throw ValidationError("sim.blur_sigma must be >= 0");
        }
        if (!(noise_sigma >= 0.0)) {
            throw ValidationError("sim.noise_sigma must be >= 0");
        }
    }
};

struct SimulatedSequence {
    ImageSequence frames;
    std::vector<FlowField> flows;  ///< frame_i = blur(warp(truth, flows[i])) + noise
};

/// Uniform [-1,1] noise per component, Gaussian-smoothed, rescaled so the
/// largest displacement magnitude equals `amplitude`. The noise is drawn on a
/// grid padded by the kernel radius and cropped after smoothing, so border
/// pixels have the same statistics as interior ones.
inline FlowField random_smooth_flow(int width, int height, double amplitude,
                                    double flow_smoothness, std::uint64_t seed) {
    FlowField f(width, height);
    if (amplitude == 0.0) {
        return f;
    }
    const BlurKernel kernel(flow_smoothness);
    const int pad = kernel.radius();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto smooth_component = [&](Image& out) {
        Image raw(width + 2 * pad, height + 2 * pad);
        for (double& x : raw.data()) {
            x = dist(rng);
        }
        const Image smooth = convolve(raw, kernel);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                out(x, y) = smooth(x + pad, y + pad);
            }
        }
    };
    smooth_component(f.u);
    smooth_component(f.v);
    double peak = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        peak = std::max(peak, std::hypot(f.u[i], f.v[i]));
    }
    if (peak > 0.0) {
        const double s = amplitude / peak;
        for (std::size_t i = 0; i < f.size(); ++i) {
            f.u[i] *= s;
            f.v[i] *= s;
        }
    }
    return f;
}

/// Frame i uses flow seed `seed + i`; the noise stream is seeded
/// independently from (seed, i). With zero_mean_flows the per-pixel mean
/// displacement is removed, so truth is the ideal centroid of the frames.
inline SimulatedSequence simulate_sequence(const Image& truth, const SimParams& p) {
    p.validate();
    const int w = truth.width();
    const int h = truth.height();
    const auto n = static_cast<std::size_t>(p.n_frames);

    std::vector<FlowField> flows(n);
    parallel_for(n, [&](std::size_t i) {
        flows[i] = random_smooth_flow(w, h, p.amplitude, p.flow_smoothness, p.seed + i);
    });
    if (p.zero_mean_flows && p.amplitude > 0.0) {
        const FlowField mean = [&] {
            FlowField m(w, h);
            for (const auto& f : flows) {
                for (std::size_t k = 0; k < m.size(); ++k) {
                    m.u[k] += f.u[k];
                    m.v[k] += f.v[k];
                }
            }
            for (std::size_t k = 0; k < m.size(); ++k) {
                m.u[k] /= static_cast<double>(n);
                m.v[k] /= static_cast<double>(n);
            }
            return m;
        }();
        for (auto& f : flows) {
            for (std::size_t k = 0; k < f.size(); ++k) {
                f.u[k] -= mean.u[k];
                f.v[k] -= mean.v[k];
            }
        }
    }

    std::vector<Image> frames(n);
    parallel_for(n, [&](std::size_t i) {
        Image frame = convolve_gaussian(warp(truth, flows[i]), p.blur_sigma);
        if (p.noise_sigma > 0.0) {
            std::seed_seq seq{static_cast<std::uint32_t>(p.seed), static_cast<std::uint32_t>(p.seed >> 32),
                              static_cast<std::uint32_t>(i), 0x6e6f6973u};
            std::mt19937_64 rng(seq);
            std::normal_distribution<double> noise(0.0, p.noise_sigma);
            for (double& v : frame.data()) {
                v += noise(rng);
            }
        }
        frames[i] = clamp_unit(std::move(frame));
    });
    return {ImageSequence(std::move(frames)), std::move(flows)};
}

/// Deterministic test scene: bar groups of several widths, disks, a ring and
/// dot rows over a shaded background, softened with a sigma-1.5 blur so it
/// has structure at several scales but no aliasing.
inline Image make_test_pattern(int width, int height) {
    Image img(width, height);
    const double sx = width / 128.0;
    const double sy = height / 128.0;
    auto rect = [&](double x0, double y0, double x1, double y1, double value) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                if (x >= x0 * sx && x < x1 * sx && y >= y0 * sy && y < y1 * sy) {
                    img(x, y) = value;
                }
            }
        }
    };
    auto disk = [&](double cx, double cy, double r0, double r1, double value) {
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const double d = std::hypot((x + 0.5) / sx - cx, (y + 0.5) / sy - cy);
                if (d >= r0 && d < r1) {
                    img(x, y) = value;
                }
            }
        }
    };
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            img(x, y) = 0.3 + 0.15 * static_cast<double>(x) / width + 0.1 * static_cast<double>(y) / height;
        }
    }
    // Vertical bars, widths 6, 4, 3 px.
    for (int k = 0; k < 3; ++k) {
        rect(10 + 12 * k, 10, 16 + 12 * k, 50, 0.9);
    }
    for (int k = 0; k < 3; ++k) {
        rect(50 + 8 * k, 10, 54 + 8 * k, 40, 0.85);
    }
    for (int k = 0; k < 4; ++k) {
        rect(80 + 6 * k, 10, 83 + 6 * k, 35, 0.1);
    }
    // Horizontal bars.
    for (int k = 0; k < 3; ++k) {
        rect(10, 62 + 10 * k, 50, 67 + 10 * k, 0.05);
    }
    disk(85, 70, 0, 14, 0.8);
    disk(85, 70, 0, 6, 0.2);
    disk(30, 108, 8, 12, 0.95);
    for (int k = 0; k < 5; ++k) {
        disk(62 + 12 * k, 108, 0, 2 + 0.6 * k, 0.0);
    }
    rect(108, 45, 122, 100, 0.65);
    return convolve_gaussian(img, 1.5);
}

/// Band-limited random texture: a sum of 40 plane cosines with random
/// direction and phase and wavelengths in [0.8, 1.4] x `wavelength`,
/// rescaled to [0,1]. Dense gradients everywhere make it a well-posed
/// scene for flow estimation.
inline Image make_texture_pattern(int width, int height, double wavelength = 16.0,
                                  std::uint64_t seed = 1) {
    if (!(wavelength > 0.0)) {
        throw ValidationError("texture wavelength must be > 0");
    }
    constexpr double kTwoPi = 6.283185307179586;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Image img(width, height);
    for (int k = 0; k < 40; ++k) {
        const double theta = kTwoPi * unit(rng);
        const double phase = kTwoPi * unit(rng);
        const double lambda = wavelength * (0.8 + 0.6 * unit(rng));
        const double kx = std::cos(theta) * kTwoPi / lambda;
        const double ky = std::sin(theta) * kTwoPi / lambda;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                img(x, y) += std::cos(kx * x + ky * y + phase);
            }
        }
    }
    const auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
    const double min = *lo;
    const double span = *hi - *lo;
    for (double& v : img.data()) {
        v = span > 0.0 ? (v - min) / span : 0.5;
    }
    return img;
}

/// Writes frame_###.<ext>, flow_###.flo, truth.<ext> (when given) and a
/// key=value manifest.txt recording the parameters.
inline void write_simulation(const std::filesystem::path& dir, const SimulatedSequence& sim,
                             const SimParams& p, const Image* truth,
                             const std::string& ext = ".png") {
    std::filesystem::create_directories(dir);
    char name[64];
    for (std::size_t i = 0; i < sim.frames.size(); ++i) {
        std::snprintf(name, sizeof name, "frame_%03zu%s", i, ext.c_str());
        write_image(sim.frames[i], dir / name);
        std::snprintf(name, sizeof name, "flow_%03zu.flo", i);
        write_flow(sim.flows[i], dir / name);
    }
    if (truth) {
        write_image(*truth, dir / ("truth" + ext));
    }
    std::ofstream m(dir / "manifest.txt");
    m << "n_frames=" << p.n_frames << '\n'
      << "width=" << sim.frames.width() << '\n'
      << "height=" << sim.frames.height() << '\n'
      << "amplitude=" << p.amplitude << '\n'
      << "flow_smoothness=" << p.flow_smoothness << '\n'
      << "blur_sigma=" << p.blur_sigma << '\n'
      << "noise_sigma=" << p.noise_sigma << '\n'
      << "seed=" << p.seed << '\n'
      << "zero_mean_flows=" << (p.zero_mean_flows ? "true" : "false") << '\n';
    if (truth) {
        m << "truth=truth" << ext << '\n';
    }
    if (!m) {
        throw RuntimeFailure("cannot write manifest in " + dir.string());
    }
}

}

#endif
