// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <tcm/tcm.hpp>

namespace fs = std::filesystem;
using tcm::FlowField;
using tcm::Image;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("%s %2d %-38s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
    return fs::temp_directory_path() / ("tcm_accept_" + std::to_string(::getpid())) / name;
}

Image blob(int n, double cx, double cy, double sigma) {
    Image img(n, n);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            img(x, y) = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * sigma * sigma));
        }
    }
    return img;
}

Image random_image(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(w, h);
    for (double& v : img.data()) {
        v = u(rng);
    }
    return img;
}

FlowField random_field(int w, int h, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    FlowField f(w, h);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f.u[i] = n(rng);
        f.v[i] = n(rng);
    }
    return f;
}

tcm::PipelineConfig standard_config(const std::string& out) {
    tcm::PipelineConfig cfg;
    cfg.input = "sim";
    cfg.output_dir = scratch(out);
    return cfg;
}

double report_value(const tcm::PipelineOutput& o, const std::string& key) {
    return std::stod(o.report.get(key).value_or("nan"));
}

void identity_pipeline() {
    tcm::PipelineConfig cfg = standard_config("identity");
    cfg.sim_width = 64;
    cfg.sim_height = 64;
    cfg.sim.n_frames = 5;
    cfg.sim.amplitude = 0.0;
    cfg.sim.blur_sigma = 0.0;
    cfg.sim.noise_sigma = 0.0;
    // No blur was applied, so the deconvolution kernel is the identity limit.
    cfg.nltv.kernel_sigma = 1e-3;
    const auto t0 = std::chrono::steady_clock::now();
    const tcm::PipelineOutput o = tcm::run_pipeline(cfg);
    const double t = seconds_since(t0);
    const Image truth = tcm::simulator_truth(cfg);
    const bool c_exact = o.stages.at('C') == truth;
    const bool d_exact = o.stages.at('D') == truth;
    const double e = tcm::rmse(o.stages.at('E'), truth);
    report(1, "identity pipeline", c_exact && d_exact && e < 1e-2 && t < 30.0,
           std::string("C ") + (c_exact ? "exact" : "differs") + ", D " + (d_exact ? "exact" : "differs") +
               fmt(", rmse(E) %.3g (< 0.01), %.2f s (< 30)", e, t));

    cfg.nltv.kernel_sigma = 1.0;
    const double e_default = tcm::rmse(tcm::run_pipeline(cfg).stages.at('E'), truth);
    std::printf("     info: same run with the default kernel_sigma 1.0 gives rmse(E) %.4g\n", e_default);
}

void translation_recovery() {
    const int n = 64;
    const Image a = blob(n, 31.5, 31.5, 8.0);
    const Image b = blob(n, 30.5, 31.5, 8.0);  // b(x) = a(x + 1): f = (-1, 0)
    tcm::HSParams p;
    p.pyramid_levels = 3;
    std::map<int, std::vector<double>> energies;
    const FlowField f = tcm::horn_schunck(a, b, p, [&](const tcm::HSTraceEntry& e) {
        energies[e.level].push_back(e.energy);
    });
    double epe = 0.0;
    for (int y = 16; y < 48; ++y) {
        for (int x = 16; x < 48; ++x) {
            epe += std::hypot(f.u(x, y) + 1.0, f.v(x, y));
        }
    }
    epe /= 32 * 32;
    bool monotone = energies.size() == 3;
    for (const auto& [level, e] : energies) {
        for (std::size_t k = 1; k < e.size(); ++k) {
            monotone = monotone && e[k] <= e[k - 1] * (1 + 1e-9);
        }
    }
    report(2, "Horn-Schunck translation recovery", epe < 0.3 && monotone,
           fmt("mean EPE %.4f px (< 0.3), ", epe) + (monotone ? "energy non-increasing at all 3 levels"
                                                              : "energy increased or levels missing"));
}

void harmonic_fill() {
    const int n = 32;
    const int border = 4;
    auto in_frame = [&](int x, int y) { return x < border || x >= n - border || y < border || y >= n - border; };
    Image a = random_image(n, n, 77);
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            if (!in_frame(x, y)) {
                a(x, y) = 0.5;
            }
        }
    }
    Image b = a;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            if (in_frame(x, y)) {
                b(x, y) = a(std::min(x + 1, n - 1), y);
            }
        }
    }
    tcm::HSParams p;
    p.pyramid_levels = 1;
    p.max_iters = 100000;
    const FlowField f = tcm::horn_schunck(a, b, p);
    auto [ax, ay] = tcm::spatial_gradient(a);
    auto [bx, by] = tcm::spatial_gradient(b);
    double worst = 0.0;
    int checked = 0;
    for (int y = 1; y < n - 1; ++y) {
        for (int x = 1; x < n - 1; ++x) {
            if (ax(x, y) != 0 || ay(x, y) != 0 || bx(x, y) != 0 || by(x, y) != 0 || a(x, y) != b(x, y)) {
                continue;
            }
            for (const Image* c : {&f.u, &f.v}) {
                const double mean = 0.25 * ((*c)(x - 1, y) + (*c)(x + 1, y) + (*c)(x, y - 1) + (*c)(x, y + 1));
                worst = std::max(worst, std::abs((*c)(x, y) - mean));
            }
            ++checked;
        }
    }
    report(3, "harmonic fill on flat interior", checked > 0 && worst <= 10 * p.tol,
           fmt("max |f - 4-neighbor mean| %.3g (<= %.3g) over %.0f pixels", worst, 10 * p.tol, checked));
}

struct StandardRun {
    tcm::PipelineOutput output;
    double seconds = 0.0;
};

StandardRun run_standard(const std::string& out) {
    const auto t0 = std::chrono::steady_clock::now();
    StandardRun r{tcm::run_pipeline(standard_config(out)), 0.0};
    r.seconds = seconds_since(t0);
    return r;
}

void centroid_beats_mean(const StandardRun& r) {
    const double b = report_value(r.output, "rmse.B");
    const double d = report_value(r.output, "rmse.D");
    report(4, "registered mean beats temporal mean", d < 0.8 * b && r.seconds < 300.0,
           fmt("rmse(D) %.5f, rmse(B) %.5f, ratio %.3f (< 0.8), %.1f s (< 300)", d, b, d / b, r.seconds));
}

void norm_stabilization() {
    const tcm::PipelineConfig cfg = standard_config("unused");
    const tcm::LoadedInput in = tcm::load_input(cfg);
    tcm::CentroidParams p = cfg.centroid_params();
    p.max_corrections = 6;
    p.correction_tol = 1e-9;  // run all six corrections
    const auto [c, norms] = tcm::iterate_centroid(in.frames, p);
    // trace[k] is norms[k - 1].
    bool ok = norms.size() == 6;
    std::string detail = "trace";
    for (double v : norms) {
        detail += fmt(" %.4f", v);
    }
    if (ok) {
        for (std::size_t k = 1; k < norms.size(); ++k) {
            ok = ok && norms[k] <= norms[k - 1];
        }
        const double rel = std::abs(norms[4] - norms[3]) / norms[3];
        ok = ok && rel < 0.1;
        detail += fmt("; |t5-t4|/t4 %.4f (< 0.1)", rel);
    }
    report(5, "correction-norm stabilization", ok, detail);
}

void averaging_algebra() {
    const FlowField f = random_field(9, 7, 1);
    FlowField neg = f;
    for (std::size_t i = 0; i < neg.size(); ++i) {
        neg.u[i] = -neg.u[i];
        neg.v[i] = -neg.v[i];
    }
    const FlowField z = tcm::average_flow({f, neg});
    bool zero = true;
    for (std::size_t i = 0; i < z.size(); ++i) {
        zero = zero && z.u[i] == 0.0 && z.v[i] == 0.0;
    }
    const bool same = tcm::average_flow({f, f}) == f;

    const std::vector<FlowField> g{random_field(9, 7, 2), random_field(9, 7, 3), random_field(9, 7, 4)};
    const FlowField c = random_field(9, 7, 5);
    std::vector<FlowField> shifted = g;
    for (auto& s : shifted) {
        for (std::size_t i = 0; i < s.size(); ++i) {
            s.u[i] += c.u[i];
            s.v[i] += c.v[i];
        }
    }
    const FlowField m = tcm::average_flow(g);
    const FlowField ms = tcm::average_flow(shifted);
    double worst = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (auto [got, want] : {std::pair{ms.u[i], c.u[i] + m.u[i]}, std::pair{ms.v[i], c.v[i] + m.v[i]}}) {
            worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
        }
    }
    report(6, "flow averaging algebra", zero && same && worst < 1e-12,
           std::string("{f,-f} ") + (zero ? "-> 0" : "nonzero") + ", {f,f} " + (same ? "-> f" : "differs") +
               fmt(", linearity rel err %.2g (< 1e-12)", worst));
}

double weight_oracle(const Image& f, int x0, int y0, int x1, int y1, const tcm::NLTVParams& p) {
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

void weight_oracle_check() {
    const Image f = random_image(10, 10, 4);
    const tcm::NLTVParams p;
    const tcm::WeightGraph g = tcm::build_weights(f, p);
    double worst = 0.0;
    std::size_t edges = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (const auto& e : g[i]) {
            const double want = weight_oracle(f, static_cast<int>(i % 10), static_cast<int>(i / 10),
                                              e.neighbor % 10, e.neighbor / 10, p);
            worst = std::max(worst, std::abs(e.weight - want) / want);
            ++edges;
        }
    }
    const bool sym = g.symmetric();
    report(7, "NL-TV weight oracle", edges > 0 && worst < 1e-12 && sym,
           fmt("%.0f stored weights, max rel err %.2g (< 1e-12), ", static_cast<double>(edges), worst) +
               (sym ? "exactly symmetric" : "NOT symmetric"));
}

void nltv_checks() {
    // Gradient against central differences.
    double worst = 0.0;
    for (unsigned seed : {7u, 17u, 27u}) {
        const Image f = random_image(8, 8, seed);
        const Image u = random_image(8, 8, seed + 1);
        tcm::NLTVParams p;
        p.h = 0.3;
        p.window_radius = 3;
        const tcm::WeightGraph g = tcm::build_weights(f, p);
        const tcm::BlurKernel k(1.0);
        const double alpha = 0.3;
        const Image grad = tcm::nltv_gradient(u, f, k, g, alpha);
        double num = 0.0;
        double den = 0.0;
        const double step = 1e-4;
        for (std::size_t i = 0; i < u.size(); ++i) {
            Image up = u;
            Image dn = u;
            up[i] += step;
            dn[i] -= step;
            const double fd =
                (tcm::nltv_energy(up, f, k, g, alpha) - tcm::nltv_energy(dn, f, k, g, alpha)) / (2 * step);
            num += (grad[i] - fd) * (grad[i] - fd);
            den += fd * fd;
        }
        worst = std::max(worst, std::sqrt(num / den));
    }

    // Blur-then-restore, with the energy trace checked on each run.
    const Image truth = tcm::make_test_pattern(64, 64);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.002);
    bool decreasing = true;
    bool improves = true;
    std::string restore;
    for (double sigma : {0.5, 1.0, 1.5}) {
        Image f = tcm::convolve_gaussian(truth, sigma);
        for (double& v : f.data()) {
            v += noise(rng);
        }
        tcm::NLTVParams p;
        p.kernel_sigma = sigma;
        const tcm::NLTVResult r = tcm::nltv_solve(f, tcm::build_weights(f, p), p);
        for (std::size_t k = 1; k < r.trace.size(); ++k) {
            decreasing = decreasing && r.trace[k].energy < r.trace[k - 1].energy;
        }
        const double before = tcm::rmse(f, truth);
        const double after = tcm::rmse(r.image, truth);
        improves = improves && after < before;
        restore += fmt(" s%.1f %.4f->%.4f", sigma, before, after);
    }
    report(8, "NL-TV gradient, descent, restoration", worst < 1e-4 && decreasing && improves,
           fmt("grad rel err %.2g (< 1e-4), ", worst) + (decreasing ? "trace strictly decreasing" : "trace not monotone") +
               ", rmse" + restore);
}

void reference_dependence() {
    const tcm::PipelineConfig cfg = standard_config("unused");
    const tcm::LoadedInput in = tcm::load_input(cfg);
    tcm::CentroidParams first = cfg.centroid_params();
    tcm::CentroidParams last = first;
    last.reference_index = in.frames.size() - 1;
    const auto a = tcm::compute_centroid(in.frames, first);
    const auto b = tcm::compute_centroid(in.frames, last);
    const double centroids = tcm::rmse(a.centroid, b.centroid);
    const double registered = tcm::rmse(a.registered_mean, b.registered_mean);
    report(9, "reference dependence", centroids > 0.0 && registered < centroids,
           fmt("rmse between centroids %.5f (> 0), between registered means %.5f (smaller)", centroids, registered));
}

void determinism(const StandardRun& first) {
    const StandardRun second = run_standard("determinism");
    bool same = first.output.stages.size() == 5 && second.output.stages.size() == 5;
    for (const auto& [stage, img] : first.output.stages) {
        same = same && second.output.stages.count(stage) && second.output.stages.at(stage) == img;
    }
    report(10, "single-threaded determinism", same,
           same ? "all five stage images bit-identical across two runs" : "stage images differ");
}

}

int main() {
    tcm::set_max_threads(1);
    try {
        identity_pipeline();
        translation_recovery();
        harmonic_fill();
        const StandardRun standard = run_standard("standard");
        centroid_beats_mean(standard);
        norm_stabilization();
        averaging_algebra();
        weight_oracle_check();
        nltv_checks();
        reference_dependence();
        determinism(standard);
    } catch (const std::exception& e) {
        std::printf("FAIL    harness aborted: %s\n", e.what());
        ++failures;
    }
    fs::remove_all(scratch(""));
    std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
