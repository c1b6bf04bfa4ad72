#include <CLI11.hpp>

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <tcm/tcm.hpp>

namespace {

// Config-key flags shared by the subcommands. Values are kept as text and
// applied through the same setters as the config file.
struct KeyFlags {
    std::map<std::string, std::string> values;

    void add(CLI::App& app, const std::vector<std::string>& prefixes) {
        for (const auto& key : tcm::config_keys()) {
            for (const auto& prefix : prefixes) {
                if (key.rfind(prefix, 0) == 0) {
                    app.add_option("--" + key, values[key], "config key " + key);
                    break;
                }
            }
        }
    }

    std::vector<std::pair<std::string, std::string>> given(const CLI::App& app) const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& [key, value] : values) {
            if (app.count("--" + key) > 0) {
                out.emplace_back(key, value);
            }
        }
        return out;
    }
};

tcm::PipelineConfig load_config(const std::string& config_file, const KeyFlags& flags, const CLI::App& app) {
    std::optional<std::filesystem::path> file;
    if (!config_file.empty()) {
        file = config_file;
    }
    return tcm::parse_config(file, flags.given(app));
}

void print_report(const tcm::PipelineReport& report) {
    for (const auto& [k, v] : report.entries) {
        std::cout << k << '=' << v << '\n';
    }
}

tcm::HSParams hs_from(const tcm::PipelineConfig& cfg) {
    cfg.hs.validate();
    return cfg.hs;
}

}

int main(int argc, char** argv) {
    CLI::App app{"Turbulence restoration by the centroid method"};
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "worker thread cap (1 = bit-exact serial)");

    // restore
    auto* restore = app.add_subcommand("restore", "full pipeline: stages A-E");
    std::string restore_config;
    KeyFlags restore_flags;
    restore->add_option("--config", restore_config, "key=value config file");
    restore_flags.add(*restore, {"input", "output_dir", "emit_stages", "diagnostics", "threads", "hs.",
                                 "centroid.", "nltv.", "sim."});

    // centroid
    auto* centroid = app.add_subcommand("centroid", "stages C and D only");
    std::string centroid_config;
    KeyFlags centroid_flags;
    centroid->add_option("--config", centroid_config, "key=value config file");
    centroid_flags.add(*centroid, {"input", "output_dir", "diagnostics", "threads", "hs.", "centroid.", "sim."});

    // simulate
    auto* simulate = app.add_subcommand("simulate", "write a synthetic turbulent sequence");
    std::string sim_out;
    std::string sim_ext = ".png";
    KeyFlags sim_flags;
    simulate->add_option("--out", sim_out, "output directory")->required();
    simulate->add_option("--ext", sim_ext, "frame format")->check(CLI::IsMember({".png", ".pgm"}));
    sim_flags.add(*simulate, {"sim."});

    // flow
    auto* flow = app.add_subcommand("flow", "Horn-Schunck flow f with warp(b, f) ~= a");
    std::string flow_a;
    std::string flow_b;
    std::string flow_out;
    std::string flow_trace;
    std::string flow_warped;
    KeyFlags flow_flags;
    flow->add_option("a", flow_a, "first image")->required();
    flow->add_option("b", flow_b, "second image")->required();
    flow->add_option("--out", flow_out, "flow file to write")->required();
    flow->add_option("--trace", flow_trace, "per-sweep CSV trace");
    flow->add_option("--warped", flow_warped, "also write b warped onto a");
    flow_flags.add(*flow, {"hs."});

    // deblur
    auto* deblur = app.add_subcommand("deblur", "NL-TV deconvolution of one image");
    std::string deblur_in;
    std::string deblur_out;
    std::string deblur_trace;
    std::string deblur_weights_in;
    std::string deblur_weights_out;
    KeyFlags deblur_flags;
    deblur->add_option("image", deblur_in, "blurred input")->required();
    deblur->add_option("--out", deblur_out, "restored image")->required();
    deblur->add_option("--trace", deblur_trace, "energy trace CSV");
    deblur->add_option("--load-weights", deblur_weights_in, "reuse a weight graph file");
    deblur->add_option("--save-weights", deblur_weights_out, "store the weight graph");
    deblur_flags.add(*deblur, {"nltv."});

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (threads > 0) {
            tcm::set_max_threads(threads);
        }
        if (restore->parsed()) {
            tcm::PipelineConfig cfg = load_config(restore_config, restore_flags, *restore);
            print_report(tcm::run_pipeline(cfg).report);
        } else if (centroid->parsed()) {
            tcm::PipelineConfig cfg = load_config(centroid_config, centroid_flags, *centroid);
            cfg.emit_stages = {'C', 'D'};
            print_report(tcm::run_pipeline(cfg).report);
        } else if (simulate->parsed()) {
            tcm::PipelineConfig cfg = tcm::parse_config(std::nullopt, sim_flags.given(*simulate));
            cfg.sim.validate();
            const tcm::Image truth = tcm::simulator_truth(cfg);
            const auto sim = tcm::simulate_sequence(truth, cfg.sim);
            tcm::write_simulation(sim_out, sim, cfg.sim, &truth, sim_ext);
            std::cout << "wrote " << sim.frames.size() << " frames to " << sim_out << '\n';
        } else if (flow->parsed()) {
            const tcm::PipelineConfig cfg = tcm::parse_config(std::nullopt, flow_flags.given(*flow));
            const tcm::Image a = tcm::read_image(flow_a);
            const tcm::Image b = tcm::read_image(flow_b);
            std::vector<tcm::HSTraceEntry> trace;
            tcm::HSTraceSink sink;
            if (!flow_trace.empty()) {
                sink = [&](const tcm::HSTraceEntry& e) { trace.push_back(e); };
            }
            const tcm::FlowField f = tcm::horn_schunck(a, b, hs_from(cfg), sink);
            tcm::write_flow(f, flow_out);
            if (!flow_trace.empty()) {
                std::ofstream csv(flow_trace);
                tcm::write_hs_trace_csv(csv, trace);
            }
            if (!flow_warped.empty()) {
                tcm::write_image(tcm::warp(b, f), flow_warped);
            }
            std::cout << "residual.before=" << tcm::flow_residual(a, b, tcm::FlowField(a.width(), a.height()))
                      << "\nresidual.after=" << tcm::flow_residual(a, b, f) << '\n';
        } else if (deblur->parsed()) {
            const tcm::PipelineConfig cfg = tcm::parse_config(std::nullopt, deblur_flags.given(*deblur));
            cfg.nltv.validate();
            const tcm::Image f = tcm::read_image(deblur_in);
            const tcm::WeightGraph g =
                deblur_weights_in.empty() ? tcm::build_weights(f, cfg.nltv) : tcm::read_weights(deblur_weights_in);
            if (g.width != f.width() || g.height != f.height()) {
                throw tcm::ValidationError("weight graph " + deblur_weights_in + " does not match " + deblur_in);
            }
            if (!deblur_weights_out.empty()) {
                tcm::write_weights(g, deblur_weights_out);
            }
            const tcm::NLTVResult r = tcm::nltv_solve(f, g, cfg.nltv);
            tcm::write_image(r.image, deblur_out);
            if (!deblur_trace.empty()) {
                std::ofstream csv(deblur_trace);
                tcm::write_nltv_trace_csv(csv, r.trace);
            }
            std::cout << "iterations=" << r.trace.size() - 1 << "\nfinal_energy=" << r.final_energy << '\n';
        }
    } catch (const tcm::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const tcm::RuntimeFailure& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
