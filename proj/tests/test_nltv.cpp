#include <gtest/gtest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>
#include <vector>

#include <tcm/nltv.hpp>
#include <tcm/turbulence_sim.hpp>

using tcm::BlurKernel;
using tcm::Image;
using tcm::NLTVParams;
using tcm::WeightGraph;

namespace {

Image random_image(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h);
    for (double& v : img.data()) {
        v = u(rng);
    }
    return img;
}

// Brute-force weight: Gaussian mask built and normalized here, clamped
// patch reads, w = exp(-d / h^2).
double weight_oracle(const Image& f, int x0, int y0, int x1, int y1, const NLTVParams& p) {
    const int r = p.patch_radius;
    auto at = [&](int x, int y) {
        return f(std::clamp(x, 0, f.width() - 1), std::clamp(y, 0, f.height() - 1));
    };
    double num = 0.0;
    double den = 0.0;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            const double g = std::exp(-(dx * dx + dy * dy) / (2 * p.a * p.a));
            num += g * std::abs(at(x0 + dx, y0 + dy) - at(x1 + dx, y1 + dy));
            den += g;
        }
    }
    return std::exp(-(num / den) / (p.h * p.h));
}

// Energy summed over pixels directly from the definition, with the blur done
// as a dense clamped 2-D sum.
double energy_oracle(const Image& u, const Image& f, double sigma, const WeightGraph& g, double alpha,
                     double eps) {
    const BlurKernel k(sigma);
    const int r = k.radius();
    double e = 0.0;
    for (int y = 0; y < u.height(); ++y) {
        for (int x = 0; x < u.width(); ++x) {
            double ku = 0.0;
            for (int j = -r; j <= r; ++j) {
                for (int i = -r; i <= r; ++i) {
                    ku += k.tap(i) * k.tap(j) *
                          u(std::clamp(x - i, 0, u.width() - 1), std::clamp(y - j, 0, u.height() - 1));
                }
            }
            const std::size_t p = u.index(x, y);
            double s = eps * eps;
            for (std::size_t q = 0; q < u.size(); ++q) {
                const double wt = g.weight(p, q);
                s += wt * (u[p] - u[q]) * (u[p] - u[q]);
            }
            e += (f(x, y) - ku) * (f(x, y) - ku) + alpha * std::sqrt(s);
        }
    }
    return e;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / (std::string("tcm_nltv_") + std::to_string(::getpid()) + name);
}

}

TEST(NLTVParams, Validation) {
    EXPECT_NO_THROW(NLTVParams{}.validate());
    for (auto mutate : std::vector<void (*)(NLTVParams&)>{
             [](NLTVParams& p) { p.alpha = 0; }, [](NLTVParams& p) { p.h = -1; },
             [](NLTVParams& p) { p.a = 0; }, [](NLTVParams& p) { p.patch_radius = 0; },
             [](NLTVParams& p) { p.window_radius = 1; }, [](NLTVParams& p) { p.max_iters = 0; },
             [](NLTVParams& p) { p.kernel_sigma = 0; }, [](NLTVParams& p) { p.weight_keep = 0; }}) {
        NLTVParams p;
        mutate(p);
        EXPECT_THROW(p.validate(), tcm::ValidationError);
    }
}

TEST(NLTVWeights, ConstantImageGivesUnitWeights) {
    const Image f(12, 10, 0.4);
    NLTVParams p;
    p.window_radius = 3;
    p.weight_keep = 6;
    const WeightGraph g = tcm::build_weights(f, p);
    ASSERT_EQ(g.size(), f.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_GE(g[i].size(), 6u);
        for (const auto& e : g[i]) {
            EXPECT_EQ(e.weight, 1.0);
        }
    }
    EXPECT_EQ(tcm::nltv_weight(f, 0, 0, 11, 9, p), 1.0);
}

TEST(NLTVWeights, TwoRegionsSeparate) {
    Image f(16, 16);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            f(x, y) = x < 8 ? 0.2 : 0.8;
        }
    }
    const NLTVParams p;
    const double within = weight_oracle(f, 2, 5, 3, 9, p);
    const double across = weight_oracle(f, 3, 5, 12, 5, p);
    EXPECT_NEAR(within, 1.0, 1e-12);
    EXPECT_GE(within, 5 * across);
    EXPECT_DOUBLE_EQ(tcm::nltv_weight(f, 2, 5, 3, 9, p), within);
    EXPECT_NEAR(tcm::nltv_weight(f, 3, 5, 12, 5, p), across, 1e-12 * across);

    // Kept edges stay inside a region away from the boundary.
    const WeightGraph g = tcm::build_weights(f, p);
    for (int y = 0; y < 16; ++y) {
        for (int x : {0, 1, 2, 13, 14, 15}) {
            for (const auto& e : g[f.index(x, y)]) {
                EXPECT_EQ(e.neighbor % 16 < 8, x < 8) << x << "," << y;
            }
        }
    }
}

TEST(NLTVWeights, StoredWeightsMatchBruteForceAndAreSymmetric) {
    const Image f = random_image(10, 10, 4);
    NLTVParams p;
    p.h = 0.3;
    p.window_radius = 3;
    p.weight_keep = 5;
    const WeightGraph g = tcm::build_weights(f, p);
    EXPECT_TRUE(g.symmetric());
    std::size_t edges = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const int x0 = static_cast<int>(i % 10);
        const int y0 = static_cast<int>(i / 10);
        EXPECT_TRUE(std::is_sorted(g[i].begin(), g[i].end(),
                                   [](const auto& l, const auto& r) { return l.neighbor < r.neighbor; }));
        // Every pixel keeps at least its weight_keep strongest window members.
        EXPECT_GE(g[i].size(), 5u);
        for (const auto& e : g[i]) {
            const int x1 = e.neighbor % 10;
            const int y1 = e.neighbor / 10;
            EXPECT_LE(std::max(std::abs(x1 - x0), std::abs(y1 - y0)), 3);
            const double expect = weight_oracle(f, x0, y0, x1, y1, p);
            EXPECT_NEAR(e.weight, expect, 1e-12 * expect);
            EXPECT_EQ(e.weight, g.weight(static_cast<std::size_t>(e.neighbor), i));
            ++edges;
        }
    }
    EXPECT_GT(edges, 0u);
}

TEST(NLTVWeights, KeepsStrongestCandidates) {
    const Image f = random_image(9, 9, 11);
    NLTVParams p;
    p.h = 0.3;
    p.window_radius = 2;
    p.weight_keep = 4;
    const WeightGraph g = tcm::build_weights(f, p);
    const int x0 = 4;
    const int y0 = 4;
    std::vector<double> window;
    for (int y = 2; y <= 6; ++y) {
        for (int x = 2; x <= 6; ++x) {
            if (x != x0 || y != y0) {
                window.push_back(weight_oracle(f, x0, y0, x, y, p));
            }
        }
    }
    std::sort(window.rbegin(), window.rend());
    const double fourth = window[3];
    int strong = 0;
    for (const auto& e : g[f.index(x0, y0)]) {
        strong += e.weight >= fourth * (1 - 1e-12) ? 1 : 0;
    }
    EXPECT_GE(strong, 4);
}

TEST(NLTVEnergy, ConstantAtDataIsAlphaEpsilonPerPixel) {
    const Image f(8, 6, 0.3);
    NLTVParams p;
    p.window_radius = 2;
    const WeightGraph g = tcm::build_weights(f, p);
    const double e = tcm::nltv_energy(f, f, BlurKernel(0.0), g, 0.7);
    EXPECT_NEAR(e, 0.7 * tcm::kNLTVEpsilon * 48, 1e-20);
}

TEST(NLTVEnergy, MatchesSummationOracle) {
    const Image f = random_image(9, 8, 5);
    const Image u = random_image(9, 8, 6);
    NLTVParams p;
    p.h = 0.3;
    p.window_radius = 3;
    const WeightGraph g = tcm::build_weights(f, p);
    const double e = tcm::nltv_energy(u, f, BlurKernel(1.0), g, 0.4, 1e-3);
    EXPECT_NEAR(e, energy_oracle(u, f, 1.0, g, 0.4, 1e-3), 1e-12 * e);
    EXPECT_THROW(tcm::nltv_energy(Image(9, 9), Image(9, 9), BlurKernel(1.0), g, 0.4), tcm::ValidationError);
}

TEST(NLTVGradient, MatchesCentralDifferences) {
    const Image f = random_image(8, 8, 7);
    const Image u = random_image(8, 8, 8);
    NLTVParams p;
    p.h = 0.3;
    p.window_radius = 3;
    const WeightGraph g = tcm::build_weights(f, p);
    const BlurKernel k(1.0);
    const double alpha = 0.3;
    const Image grad = tcm::nltv_gradient(u, f, k, g, alpha);
    double scale = 0.0;
    for (double v : grad.data()) {
        scale = std::max(scale, std::abs(v));
    }
    const double step = 1e-4;
    for (std::size_t i = 0; i < u.size(); ++i) {
        Image up = u;
        Image dn = u;
        up[i] += step;
        dn[i] -= step;
        const double fd = (tcm::nltv_energy(up, f, k, g, alpha) - tcm::nltv_energy(dn, f, k, g, alpha)) / (2 * step);
        EXPECT_NEAR(grad[i], fd, 1e-4 * scale) << "pixel " << i;
    }
}

TEST(NLTVSolve, EnergyTraceStrictlyDecreases) {
    const Image truth = tcm::make_test_pattern(48, 48);
    const Image f = tcm::convolve_gaussian(truth, 1.0);
    NLTVParams p;
    p.max_iters = 60;
    const tcm::NLTVResult r = tcm::nltv_solve(f, tcm::build_weights(f, p), p);
    ASSERT_GE(r.trace.size(), 10u);
    EXPECT_EQ(r.trace.front().iteration, 0);
    for (std::size_t k = 1; k < r.trace.size(); ++k) {
        EXPECT_EQ(r.trace[k].iteration, static_cast<int>(k));
        EXPECT_LT(r.trace[k].energy, r.trace[k - 1].energy);
        EXPECT_GT(r.trace[k].step, 0.0);
    }
    EXPECT_EQ(r.final_energy, r.trace.back().energy);
    for (double v : r.image.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(NLTVSolve, NearIdentityKernelKeepsImage) {
    const Image truth = tcm::make_test_pattern(64, 64);
    NLTVParams p;
    p.kernel_sigma = 1e-3;
    EXPECT_LT(tcm::rmse(tcm::nltv_deconvolve(truth, p), truth), 0.01);
}

TEST(NLTVSolve, RestoresBlurredPattern) {
    const Image truth = tcm::make_test_pattern(64, 64);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.002);
    for (double sigma : {0.5, 1.0, 1.5}) {
        Image f = tcm::convolve_gaussian(truth, sigma);
        for (double& v : f.data()) {
            v += noise(rng);
        }
        NLTVParams p;
        p.kernel_sigma = sigma;
        const Image u = tcm::nltv_deconvolve(f, p);
        EXPECT_LT(tcm::rmse(u, truth), tcm::rmse(f, truth)) << "sigma " << sigma;
    }
}

TEST(NLTVSolve, ThreadCountDoesNotChangeResult) {
    const Image f = tcm::convolve_gaussian(tcm::make_test_pattern(40, 40), 1.0);
    NLTVParams p;
    p.max_iters = 20;
    tcm::set_max_threads(1);
    const WeightGraph g1 = tcm::build_weights(f, p);
    const tcm::NLTVResult r1 = tcm::nltv_solve(f, g1, p);
    tcm::set_max_threads(3);
    const WeightGraph g3 = tcm::build_weights(f, p);
    const tcm::NLTVResult r3 = tcm::nltv_solve(f, g3, p);
    tcm::set_max_threads(1);
    EXPECT_EQ(g1, g3);
    EXPECT_EQ(r1.image, r3.image);
    EXPECT_EQ(r1.final_energy, r3.final_energy);
}

TEST(NLTVSolve, RejectsMismatchedGraph) {
    const WeightGraph g = tcm::build_weights(Image(6, 6, 0.5), NLTVParams{});
    EXPECT_THROW(tcm::nltv_solve(Image(6, 7, 0.5), g, NLTVParams{}), tcm::ValidationError);
}

TEST(NLTVTraceCsv, Format) {
    std::ostringstream out;
    tcm::write_nltv_trace_csv(out, {{0, 3.5, 0.0}, {1, 2.25, 0.5}});
    EXPECT_EQ(out.str(), "iteration,energy,step\n0,3.5,0\n1,2.25,0.5\n");
}

TEST(WeightFile, LayoutAndPadding) {
    WeightGraph g{2, 2, {{{1, 0.5}, {2, 0.25}}, {{0, 0.5}}, {{0, 0.25}}, {}}};
    const auto bytes = tcm::encode_weights(g);
    ASSERT_EQ(bytes.size(), 16u + 4 * 2 * 8);
    EXPECT_EQ(std::memcmp(bytes.data(), "NLTW", 4), 0);
    std::int32_t hdr[3];
    std::memcpy(hdr, bytes.data() + 4, 12);
    EXPECT_EQ(hdr[0], 2);
    EXPECT_EQ(hdr[1], 2);
    EXPECT_EQ(hdr[2], 2);
    // Pixel 1: one real record, one pad.
    std::int32_t nb = 0;
    float wt = 0;
    std::memcpy(&nb, bytes.data() + 16 + 16, 4);
    std::memcpy(&wt, bytes.data() + 16 + 20, 4);
    EXPECT_EQ(nb, 0);
    EXPECT_EQ(wt, 0.5f);
    std::memcpy(&nb, bytes.data() + 16 + 24, 4);
    std::memcpy(&wt, bytes.data() + 16 + 28, 4);
    EXPECT_EQ(nb, -1);
    EXPECT_EQ(wt, 0.0f);
    EXPECT_EQ(tcm::decode_weights(bytes), g);
}

TEST(WeightFile, RoundTripAtFloatPrecision) {
    const Image f = random_image(12, 9, 9);
    NLTVParams p;
    p.h = 0.3;
    p.window_radius = 3;
    const WeightGraph g = tcm::build_weights(f, p);
    const auto path = temp_file("w.nltw");
    tcm::write_weights(g, path);
    const WeightGraph back = tcm::read_weights(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), g.size());
    EXPECT_TRUE(back.symmetric());
    for (std::size_t i = 0; i < g.size(); ++i) {
        ASSERT_EQ(back[i].size(), g[i].size());
        for (std::size_t j = 0; j < g[i].size(); ++j) {
            EXPECT_EQ(back[i][j].neighbor, g[i][j].neighbor);
            EXPECT_EQ(back[i][j].weight, static_cast<double>(static_cast<float>(g[i][j].weight)));
        }
    }
}

TEST(WeightFile, RejectsBadData) {
    WeightGraph g{2, 2, {{{1, 0.5}}, {{0, 0.5}}, {}, {}}};
    const auto bytes = tcm::encode_weights(g);
    auto tag = bytes;
    tag[1] = 'X';
    EXPECT_THROW(tcm::decode_weights(tag), tcm::ValidationError);
    auto shortened = bytes;
    shortened.pop_back();
    EXPECT_THROW(tcm::decode_weights(shortened), tcm::ValidationError);
    auto asym = bytes;
    const float other = 0.25f;
    std::memcpy(asym.data() + 16 + 8 + 4, &other, 4);  // pixel 1 disagrees with pixel 0
    EXPECT_THROW(tcm::decode_weights(asym), tcm::ValidationError);
    auto range = bytes;
    const std::int32_t far = 99;
    std::memcpy(range.data() + 16, &far, 4);
    EXPECT_THROW(tcm::decode_weights(range), tcm::ValidationError);
    EXPECT_THROW(tcm::read_weights(temp_file("missing.nltw")), tcm::ValidationError);
}
