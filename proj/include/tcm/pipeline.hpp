#ifndef TCM_PIPELINE_HPP
#define TCM_PIPELINE_HPP

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "centroid.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "image_io.hpp"
#include "nltv.hpp"
#include "optical_flow.hpp"
#include "parallel.hpp"
#include "turbulence_sim.hpp"

namespace tcm {

/// Everything one restoration run needs. `input` is either a directory of
/// frames or the literal "sim" for an in-memory simulated sequence.
struct PipelineConfig {
    std::string input;
    std::filesystem::path output_dir = "out";
    HSParams hs;
    CentroidParams centroid;  ///< its hs member is replaced by `hs` at run time
    NLTVParams nltv;
    SimParams sim;
    int sim_width = 128;
    int sim_height = 128;
    std::string sim_scene = "texture";  ///< "texture", "pattern", or an image path
    double sim_wavelength = 16.0;
    std::set<char> emit_stages{'A', 'B', 'C', 'D', 'E'};
    bool diagnostics = false;
    unsigned threads = 0;  ///< 0 keeps the process-wide setting

    CentroidParams centroid_params() const {
        CentroidParams p = centroid;
        p.hs = hs;
        return p;
    }

    bool emits(char stage) const { return emit_stages.count(stage) != 0; }

    void validate() const {
        if (input.empty()) {
            throw ValidationError("input: missing (a frame directory or \"sim\")");
        }
        if (emit_stages.empty()) {
            throw ValidationError("emit_stages: at least one stage is required");
        }
        hs.validate();
        nltv.validate();
        if (input == "sim") {
            sim.validate();
            if (sim_width < 2 || sim_height < 2) {
                throw ValidationError("sim.width and sim.height must be >= 2");
            }
            centroid_params().validate(static_cast<std::size_t>(sim.n_frames));
        } else if (!std::filesystem::is_directory(input)) {
            throw ValidationError("input: no such directory: " + input);
        }
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template<typename T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw ValidationError(key + ": cannot parse \"" + text + "\"");
    }
    return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
        return true;
    }
    if (text == "false" || text == "0" || text == "no" || text == "off") {
        return false;
    }
    throw ValidationError(key + ": cannot parse \"" + text + "\" as a boolean");
}

inline std::set<char> parse_stages(const std::string& key, const std::string& text) {
    std::set<char> out;
    for (char c : text) {
        if (c == ',' || c == ' ') {
            continue;
        }
        const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        if (up < 'A' || up > 'E') {
            throw ValidationError(key + ": unknown stage '" + std::string(1, c) + "'");
        }
        out.insert(up);
    }
    return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;

template<typename T, typename Field>
Setter number(Field field) {
    return [field](PipelineConfig& c, const std::string& k, const std::string& v) {
        field(c) = parse_number<T>(k, v);
    };
}

inline const std::map<std::string, Setter>& config_setters() {
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        t["input"] = [](PipelineConfig& c, const std::string&, const std::string& v) { c.input = v; };
        t["output_dir"] = [](PipelineConfig& c, const std::string&, const std::string& v) {
            c.output_dir = v;
        };
        t["emit_stages"] = [](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.emit_stages = parse_stages(k, v);
        };
        t["diagnostics"] = [](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.diagnostics = parse_bool(k, v);
        };
        t["threads"] = number<unsigned>([](PipelineConfig& c) -> auto& { return c.threads; });

        t["hs.alpha"] = number<double>([](PipelineConfig& c) -> auto& { return c.hs.alpha; });
        t["hs.max_iters"] = number<int>([](PipelineConfig& c) -> auto& { return c.hs.max_iters; });
        t["hs.tol"] = number<double>([](PipelineConfig& c) -> auto& { return c.hs.tol; });
        t["hs.pyramid_levels"] =
            number<int>([](PipelineConfig& c) -> auto& { return c.hs.pyramid_levels; });
        t["hs.pyramid_scale"] =
            number<double>([](PipelineConfig& c) -> auto& { return c.hs.pyramid_scale; });

        t["centroid.max_corrections"] =
            number<int>([](PipelineConfig& c) -> auto& { return c.centroid.max_corrections; });
        t["centroid.correction_tol"] =
            number<double>([](PipelineConfig& c) -> auto& { return c.centroid.correction_tol; });
        t["centroid.reference_index"] = number<std::size_t>(
            [](PipelineConfig& c) -> auto& { return c.centroid.reference_index; });

        t["nltv.alpha"] = number<double>([](PipelineConfig& c) -> auto& { return c.nltv.alpha; });
        t["nltv.h"] = number<double>([](PipelineConfig& c) -> auto& { return c.nltv.h; });
        t["nltv.a"] = number<double>([](PipelineConfig& c) -> auto& { return c.nltv.a; });
        t["nltv.patch_radius"] =
            number<int>([](PipelineConfig& c) -> auto& { return c.nltv.patch_radius; });
        t["nltv.window_radius"] =
            number<int>([](PipelineConfig& c) -> auto& { return c.nltv.window_radius; });
        t["nltv.kernel_sigma"] =
            number<double>([](PipelineConfig& c) -> auto& { return c.nltv.kernel_sigma; });
        t["nltv.max_iters"] = number<int>([](PipelineConfig& c) -> auto& { return c.nltv.max_iters; });
        t["nltv.step0"] = number<double>([](PipelineConfig& c) -> auto& { return c.nltv.step0; });
        t["nltv.weight_keep"] =
            number<int>([](PipelineConfig& c) -> auto& { return c.nltv.weight_keep; });
        t["nltv.rel_tol"] = number<double>([](PipelineConfig& c) -> auto& { return c.nltv.rel_tol; });

        t["sim.n_frames"] = number<int>([](PipelineConfig& c) -> auto& { return c.sim.n_frames; });
        t["sim.amplitude"] = number<double>([](PipelineConfig& c) -> auto& { return c.sim.amplitude; });
        t["sim.flow_smoothness"] =
            number<double>([](PipelineConfig& c) -> auto& { return c.sim.flow_smoothness; });
        t["sim.blur_sigma"] = number<double>([](PipelineConfig& c) -> auto& { return c.sim.blur_sigma; });
        t["sim.noise_sigma"] =
            number<double>([](PipelineConfig& c) -> auto& { return c.sim.noise_sigma; });
        t["sim.seed"] = number<std::uint64_t>([](PipelineConfig& c) -> auto& { return c.sim.seed; });
        t["sim.zero_mean_flows"] = [](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.sim.zero_mean_flows = parse_bool(k, v);
        };
        t["sim.width"] = number<int>([](PipelineConfig& c) -> auto& { return c.sim_width; });
        t["sim.height"] = number<int>([](PipelineConfig& c) -> auto& { return c.sim_height; });
        t["sim.scene"] = [](PipelineConfig& c, const std::string&, const std::string& v) {
            c.sim_scene = v;
        };
        t["sim.wavelength"] = number<double>([](PipelineConfig& c) -> auto& { return c.sim_wavelength; });
        return t;
    }();
    return table;
}

}

/// Every key accepted in config files and as --key flags.
inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, setter] : detail::config_setters()) {
        keys.push_back(k);
    }
    return keys;
}

inline void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = detail::config_setters();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw ValidationError("unknown config key \"" + key + "\"");
    }
    it->second(cfg, key, value);
}

/// Applies `key = value` lines on top of cfg. Blank lines and lines starting
/// with '#' are skipped. Errors carry `source:line`.
inline void apply_config_text(PipelineConfig& cfg, std::istream& in, const std::string& source) {
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const std::string body = detail::trim(line);
        if (body.empty() || body.front() == '#') {
            continue;
        }
        const std::string where = source + ":" + std::to_string(number) + ": ";
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(where + "expected key=value, got \"" + body + "\"");
        }
        try {
            set_config_value(cfg, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
}

/// Defaults, then the optional file, then the overrides in order.
inline PipelineConfig parse_config(const std::optional<std::filesystem::path>& file,
                                   const std::vector<std::pair<std::string, std::string>>& overrides = {}) {
    PipelineConfig cfg;
    if (file) {
        std::ifstream in(*file);
        if (!in) {
            throw ValidationError("cannot open config file " + file->string());
        }
        apply_config_text(cfg, in, file->string());
    }
    for (const auto& [k, v] : overrides) {
        set_config_value(cfg, k, v);
    }
    return cfg;
}

struct LoadedInput {
    ImageSequence frames;
    std::vector<std::string> names;
    std::optional<Image> truth;
};

namespace detail {

inline bool is_image_file(const std::filesystem::path& p) {
    const auto ext = p.extension().string();
    return ext == ".png" || ext == ".pgm" || ext == ".ppm" || ext == ".PNG";
}

inline std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
    std::map<std::string, std::string> out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
    }
    return out;
}


}

/// Ground-truth scene for simulator mode.
inline Image simulator_truth(const PipelineConfig& cfg) {
    if (cfg.sim_scene == "texture") {
        return make_texture_pattern(cfg.sim_width, cfg.sim_height, cfg.sim_wavelength);
    }
    if (cfg.sim_scene == "pattern") {
        return make_test_pattern(cfg.sim_width, cfg.sim_height);
    }
    return read_image(cfg.sim_scene);
}

/// Frames in lexicographic filename order. A manifest.txt with a truth=
/// entry supplies ground truth, which is then excluded from the frames.
inline LoadedInput load_frame_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw ValidationError("not a directory: " + dir.string());
    }
    std::optional<Image> truth;
    std::string truth_name;
    const auto manifest = dir / "manifest.txt";
    if (std::filesystem::exists(manifest)) {
        const auto m = detail::read_manifest(manifest);
        if (const auto it = m.find("truth"); it != m.end()) {
            truth_name = it->second;
            truth = read_image(dir / truth_name);
        }
    }
    std::vector<std::filesystem::path> paths;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && detail::is_image_file(entry.path()) &&
            entry.path().filename() != truth_name) {
            paths.push_back(entry.path());
        }
    }
    std::sort(paths.begin(), paths.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    if (paths.size() < 2) {
        throw ValidationError("need at least 2 frames in " + dir.string() + ", found " +
                              std::to_string(paths.size()));
    }
    std::vector<Image> frames;
    std::vector<std::string> names;
    for (const auto& p : paths) {
        Image img = read_image(p);
        if (!frames.empty() && !img.same_shape(frames.front())) {
            throw ValidationError(p.string() + " is " + std::to_string(img.width()) + "x" +
                                  std::to_string(img.height()) + ", expected " +
                                  std::to_string(frames.front().width()) + "x" +
                                  std::to_string(frames.front().height()));
        }
        frames.push_back(std::move(img));
        names.push_back(p.filename().string());
    }
    if (truth && !truth->same_shape(frames.front())) {
        throw ValidationError("ground truth " + truth_name + " does not match the frame size");
    }
    return {ImageSequence(std::move(frames)), std::move(names), std::move(truth)};
}

inline LoadedInput load_input(const PipelineConfig& cfg) {
    if (cfg.input == "sim") {
        Image truth = simulator_truth(cfg);
        SimulatedSequence sim = simulate_sequence(truth, cfg.sim);
        std::vector<std::string> names;
        for (int i = 0; i < cfg.sim.n_frames; ++i) {
            names.push_back("sim_" + std::to_string(i));
        }
        return {std::move(sim.frames), std::move(names), std::move(truth)};
    }
    return load_frame_directory(cfg.input);
}

/// Ordered key=value lines written to report.txt.
struct PipelineReport {
    std::vector<std::pair<std::string, std::string>> entries;

    template<typename T>
    void set(const std::string& key, const T& value) {
        std::ostringstream s;
        s.precision(10);
        s << value;
        entries.emplace_back(key, s.str());
    }

    std::optional<std::string> get(const std::string& key) const {
        for (const auto& [k, v] : entries) {
            if (k == key) {
                return v;
            }
        }
        return std::nullopt;
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path);
        for (const auto& [k, v] : entries) {
            out << k << '=' << v << '\n';
        }
        if (!out) {
            throw RuntimeFailure("cannot write " + path.string());
        }
    }
};

struct PipelineOutput {
    std::map<char, Image> stages;
    PipelineReport report;
};

namespace detail {

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

inline std::string join(const std::vector<double>& values) {
    std::ostringstream s;
    s.precision(6);
    for (std::size_t i = 0; i < values.size(); ++i) {
        s << (i ? "," : "") << values[i];
    }
    return s.str();
}

inline std::string numbered(const char* stem, std::size_t i, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%03zu%s", stem, i, ext);
    return buf;
}

}

/// Stages: A the reference frame, B the temporal mean, C the centroid, D the
/// mean of the frames registered onto C, E the NL-TV deconvolution of D.
/// Only the work needed by emit_stages is done. Writes stage_<X>.png and
/// report.txt into output_dir.
inline PipelineOutput run_pipeline(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.threads > 0) {
        set_max_threads(cfg.threads);
    }
    detail::Stopwatch total;
    detail::Stopwatch clock;
    LoadedInput in = load_input(cfg);
    const CentroidParams cp = cfg.centroid_params();
    cp.validate(in.frames.size());

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) {
        throw RuntimeFailure("cannot create " + cfg.output_dir.string() + ": " + ec.message());
    }
    const auto diag_dir = cfg.output_dir / "diagnostics";
    if (cfg.diagnostics) {
        std::filesystem::create_directories(diag_dir, ec);
        if (ec) {
            throw RuntimeFailure("cannot create " + diag_dir.string() + ": " + ec.message());
        }
    }

    PipelineOutput out;
    PipelineReport& report = out.report;
    report.set("frames", in.frames.size());
    report.set("width", in.frames.width());
    report.set("height", in.frames.height());
    report.set("reference_index", cp.reference_index);
    report.set("time.load", clock.lap());

    out.stages.emplace('A', in.frames[cp.reference_index]);
    if (cfg.emits('B')) {
        out.stages.emplace('B', temporal_mean(in.frames));
        report.set("time.mean", clock.lap());
    }

    const bool need_centroid = cfg.emits('C') || cfg.emits('D') || cfg.emits('E');
    if (need_centroid) {
        CentroidObserver observe;
        if (cfg.diagnostics) {
            observe = [&](int k, const Image& q) {
                write_png(q, diag_dir / ("stage_" + std::to_string(k) + ".png"));
            };
        }
        auto [c, norms] = iterate_centroid(in.frames, cp, observe);
        report.set("time.centroid", clock.lap());
        report.set("corrections.count", norms.size());
        report.set("corrections.first", norms.front());
        report.set("corrections.last", norms.back());
        report.set("corrections.trace", detail::join(norms));
        if (cfg.diagnostics) {
            std::ofstream csv(diag_dir / "correction_norms.csv");
            write_norm_trace_csv(csv, norms);
        }

        if (cfg.emits('D') || cfg.emits('E')) {
            Registration reg = register_and_average(in.frames, c, cp);
            report.set("time.registration", clock.lap());
            if (cfg.diagnostics) {
                for (std::size_t i = 0; i < reg.frames.size(); ++i) {
                    write_png(reg.frames[i], diag_dir / detail::numbered("registered_", i, ".png"));
                }
            }
            if (cfg.emits('E')) {
                const NLTVResult deblurred = nltv_solve(reg.mean, build_weights(reg.mean, cfg.nltv), cfg.nltv);
                report.set("time.nltv", clock.lap());
                report.set("nltv.iterations", deblurred.trace.size() - 1);
                report.set("nltv.final_energy", deblurred.final_energy);
                if (cfg.diagnostics) {
                    std::ofstream csv(diag_dir / "nltv_energy.csv");
                    write_nltv_trace_csv(csv, deblurred.trace);
                }
                out.stages.emplace('E', deblurred.image);
            }
            out.stages.emplace('D', std::move(reg.mean));
        }
        out.stages.emplace('C', std::move(c));
    }

    for (auto it = out.stages.begin(); it != out.stages.end();) {
        if (!cfg.emits(it->first)) {
            it = out.stages.erase(it);
            continue;
        }
        write_png(it->second, cfg.output_dir / ("stage_" + std::string(1, it->first) + ".png"));
        if (in.truth) {
            report.set(std::string("rmse.") + it->first, rmse(it->second, *in.truth));
        }
        ++it;
    }
    report.set("time.total", total.lap());
    report.write(cfg.output_dir / "report.txt");
    return out;
}

}

#endif
