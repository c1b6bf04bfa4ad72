#ifndef TCM_CENTROID_HPP
#define TCM_CENTROID_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "grid.hpp"
#include "optical_flow.hpp"
#include "parallel.hpp"

namespace tcm {

struct CentroidParams {
    HSParams hs;
    int max_corrections = 10;
    /// Stop once the correction norm changes by less than this fraction
    /// between successive steps.
    double correction_tol = 0.05;
    std::size_t reference_index = 0;

    void validate(std::size_t n_frames) const {
        hs.validate();
        if (max_corrections < 1) {
            throw ValidationError("centroid.max_corrections must be >= 1");
        }
        if (!(correction_tol > 0.0)) {
            throw ValidationError("centroid.correction_tol must be > 0");
        }
        if (reference_index >= n_frames) {
            throw ValidationError("centroid.reference_index " + std::to_string(reference_index) +
                                  " out of range for " + std::to_string(n_frames) + " frames");
        }
    }
};

struct CentroidResult {
    Image centroid;
    Image registered_mean;
    std::vector<double> correction_norms;
    ImageSequence registered_frames;
};

/// Receives every intermediate centroid estimate: index 0 is the initial
/// centroid, k >= 1 the estimate after the k-th correction.
using CentroidObserver = std::function<void(int, const Image&)>;

/// Displacement g with warp(from, g) ~= to. This is the "vector from A to
/// B" used by the centroid construction and the correction step.
inline FlowField flow_toward(const Image& from, const Image& to, const HSParams& hs) {
    return horn_schunck(to, from, hs);
}

/// Componentwise mean of the given fields.
inline FlowField average_flow(const std::vector<FlowField>& flows) {
    if (flows.empty()) {
        throw ValidationError("average_flow: empty list");
    }
    FlowField out(flows.front().width(), flows.front().height());
    for (const FlowField& f : flows) {
        if (!f.same_shape(out)) {
            throw ValidationError("average_flow: dimension mismatch");
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.u[i] += f.u[i];
            out.v[i] += f.v[i];
        }
    }
    const double n = static_cast<double>(flows.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.u[i] /= n;
        out.v[i] /= n;
    }
    return out;
}

namespace detail {

// Solves flow_toward(from, seq[i]) for each i not skipped, concurrently.
inline std::vector<FlowField> flows_toward_frames(const Image& from, const ImageSequence& seq,
                                                 const HSParams& hs, std::size_t skip) {
    std::vector<FlowField> flows(seq.size());
    parallel_for(seq.size(), [&](std::size_t i) {
        if (i != skip) {
            flows[i] = flow_toward(from, seq[i], hs);
        }
    });
    return flows;
}

inline constexpr std::size_t kNoSkip = static_cast<std::size_t>(-1);

}

/// Warps the reference frame by the mean of its displacements toward every
/// frame. The reference contributes its own zero displacement, so the sum of
/// N-1 solved fields is divided by N.
inline Image initial_centroid(const ImageSequence& seq, const CentroidParams& p) {
    p.validate(seq.size());
    const std::size_t ref = p.reference_index;
    std::vector<FlowField> flows = detail::flows_toward_frames(seq[ref], seq, p.hs, ref);
    flows[ref] = FlowField(seq.width(), seq.height());
    return warp(seq[ref], average_flow(flows));
}

/// One refinement: averages the displacements from q toward all N frames and
/// warps q by that mean. Returns the new estimate and the RMS magnitude of
/// the correction field.
inline std::pair<Image, double> correction_step(const Image& q, const ImageSequence& seq,
                                                const CentroidParams& p) {
    p.validate(seq.size());
    if (!q.same_shape(seq[0])) {
        throw ValidationError("correction_step: estimate and frames differ in size");
    }
    const FlowField correction =
        average_flow(detail::flows_toward_frames(q, seq, p.hs, detail::kNoSkip));
    return {warp(q, correction), rms_magnitude(correction)};
}

/// Initial centroid followed by corrections until the norm settles
/// (relative change below correction_tol), reaches zero, or
/// max_corrections is hit. The returned trace has one entry per correction.
inline std::pair<Image, std::vector<double>> iterate_centroid(
    const ImageSequence& seq, const CentroidParams& p, const CentroidObserver& observe = {}) {
    Image q = initial_centroid(seq, p);
    if (observe) {
        observe(0, q);
    }
    std::vector<double> norms;
    for (int k = 1; k <= p.max_corrections; ++k) {
        auto [next, norm] = correction_step(q, seq, p);
        q = std::move(next);
        norms.push_back(norm);
        if (observe) {
            observe(k, q);
        }
        if (norm == 0.0) {
            break;
        }
        if (norms.size() >= 2) {
            const double prev = norms[norms.size() - 2];
            if (std::abs(norm - prev) < p.correction_tol * prev) {
                break;
            }
        }
    }
    return {std::move(q), std::move(norms)};
}

struct Registration {
    ImageSequence frames;
    Image mean;
};

/// Pulls every frame onto c and averages: I_i^R(x) = I_i(x + phi_i(x)) with
/// phi_i the flow from c to I_i in the solver's sense (warp(I_i, phi_i) ~= c).
inline Registration register_and_average(const ImageSequence& seq, const Image& c,
                                         const CentroidParams& p) {
    p.hs.validate();
    if (!c.same_shape(seq[0])) {
        throw ValidationError("register_and_average: centroid and frames differ in size");
    }
    std::vector<Image> registered(seq.size());
    parallel_for(seq.size(), [&](std::size_t i) {
        registered[i] = warp(seq[i], horn_schunck(c, seq[i], p.hs));
    });
    ImageSequence frames(std::move(registered));
    Image mean = temporal_mean(frames);
    return {std::move(frames), std::move(mean)};
}

/// Refined centroid, then every frame registered onto it and averaged.
inline CentroidResult compute_centroid(const ImageSequence& seq, const CentroidParams& p,
                                       const CentroidObserver& observe = {}) {
    auto [c, norms] = iterate_centroid(seq, p, observe);
    Registration reg = register_and_average(seq, c, p);
    return {std::move(c), std::move(reg.mean), std::move(norms), std::move(reg.frames)};
}

inline void write_norm_trace_csv(std::ostream& out, const std::vector<double>& norms) {
    out << "iteration,norm\n";
    for (std::size_t k = 0; k < norms.size(); ++k) {
        out << k + 1 << ',' << norms[k] << '\n';
    }
}

}

#endif
