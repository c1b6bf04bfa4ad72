#ifndef TCM_GRID_HPP
#define TCM_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"

namespace tcm {

/// Scalar field on a width x height pixel grid, row-major. Unit pixel
/// spacing is assumed by every differential operator in the library.
///
/// Ingested images carry intensities in [0,1]; intermediate fields (flow
/// components, gradients) may hold any finite value.
class Image {
public:
    Image() = default;

    Image(int width, int height, double fill = 0.0) : width_(width), height_(height) {
        check_dims(width, height);
        data_.assign(static_cast<std::size_t>(width) * height, fill);
        if (!std::isfinite(fill)) {
            throw ValidationError("image fill value is not finite");
        }
    }

    Image(int width, int height, std::vector<double> data)
        : width_(width), height_(height), data_(std::move(data)) {
        check_dims(width, height);
        if (data_.size() != static_cast<std::size_t>(width) * height) {
            throw ValidationError("image data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(width) + "x" +
                                  std::to_string(height));
        }
        for (double v : data_) {
            if (!std::isfinite(v)) {
                throw ValidationError("image contains a non-finite value");
            }
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double operator()(int x, int y) const { return data_[index(x, y)]; }
    double& operator()(int x, int y) { return data_[index(x, y)]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    std::span<const double> data() const& { return data_; }
    std::span<double> data() & { return data_; }
    std::span<const double> data() const&& = delete;

    bool same_shape(const Image& other) const {
        return width_ == other.width_ && height_ == other.height_;
    }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * width_ + x;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    static void check_dims(int width, int height) {
        if (width < 2 || height < 2) {
            throw ValidationError("image must be at least 2x2, got " + std::to_string(width) +
                                  "x" + std::to_string(height));
        }
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

/// Displacement field in pixel units. u is horizontal (x), v vertical (y).
struct FlowField {
    Image u;
    Image v;

    FlowField() = default;
    FlowField(int width, int height) : u(width, height), v(width, height) {}
    FlowField(Image u_, Image v_) : u(std::move(u_)), v(std::move(v_)) {
        if (!u.same_shape(v)) {
            throw ValidationError("flow components differ in shape");
        }
    }

    int width() const { return u.width(); }
    int height() const { return u.height(); }
    std::size_t size() const { return u.size(); }
    bool same_shape(const Image& img) const { return u.same_shape(img); }
    bool same_shape(const FlowField& f) const { return u.same_shape(f.u); }

    friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Ordered frames of identical size, at least two of them.
class ImageSequence {
public:
    ImageSequence() = default;

    explicit ImageSequence(std::vector<Image> frames) : frames_(std::move(frames)) {
        if (frames_.size() < 2) {
            throw ValidationError("a sequence needs at least 2 frames, got " +
                                  std::to_string(frames_.size()));
        }
        for (std::size_t i = 1; i < frames_.size(); ++i) {
            if (!frames_[i].same_shape(frames_[0])) {
                throw ValidationError("frame " + std::to_string(i) + " is " +
                                      std::to_string(frames_[i].width()) + "x" +
                                      std::to_string(frames_[i].height()) + ", expected " +
                                      std::to_string(frames_[0].width()) + "x" +
                                      std::to_string(frames_[0].height()));
            }
        }
    }

    std::size_t size() const { return frames_.size(); }
    int width() const { return frames_.front().width(); }
    int height() const { return frames_.front().height(); }
    const Image& operator[](std::size_t i) const { return frames_[i]; }
    const std::vector<Image>& frames() const { return frames_; }
    auto begin() const { return frames_.begin(); }
    auto end() const { return frames_.end(); }

private:
    std::vector<Image> frames_;
};

namespace detail {

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ValidationError(std::string(what) + ": dimension mismatch (" +
                              std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                              " vs " + std::to_string(b.width()) + "x" +
                              std::to_string(b.height()) + ")");
    }
}

}

/// Central differences inside, one-sided differences on the border.
inline std::pair<Image, Image> spatial_gradient(const Image& img) {
    const int w = img.width();
    const int h = img.height();
    Image gx(w, h);
    Image gy(w, h);
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            if (x == 0) {
                gx(x, y) = img(1, y) - img(0, y);
            } else if (x == w - 1) {
                gx(x, y) = img(w - 1, y) - img(w - 2, y);
            } else {
                gx(x, y) = 0.5 * (img(x + 1, y) - img(x - 1, y));
            }
            if (y == 0) {
                gy(x, y) = img(x, 1) - img(x, 0);
            } else if (y == h - 1) {
                gy(x, y) = img(x, h - 1) - img(x, h - 2);
            } else {
                gy(x, y) = 0.5 * (img(x, y + 1) - img(x, y - 1));
            }
        }
    });
    return {std::move(gx), std::move(gy)};
}

/// Forward difference in time: b - a.
inline Image temporal_derivative(const Image& a, const Image& b) {
    detail::require_same_shape(a, b, "temporal_derivative");
    Image out(a.width(), a.height());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = b[i] - a[i];
    }
    return out;
}

/// Bilinear interpolation; coordinates are clamped to the pixel-center
/// rectangle [0, w-1] x [0, h-1] first.
inline double sample_bilinear(const Image& img, double x, double y) {
    const double xmax = img.width() - 1;
    const double ymax = img.height() - 1;
    x = std::clamp(x, 0.0, xmax);
    y = std::clamp(y, 0.0, ymax);
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, img.width() - 1);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * img(x0, y0) + fx * img(x1, y0);
    const double bottom = (1.0 - fx) * img(x0, y1) + fx * img(x1, y1);
    return (1.0 - fy) * top + fy * bottom;
}

/// Backward warp: out(x) = img(x + f(x)).
inline Image warp(const Image& img, const FlowField& f) {
    if (!f.same_shape(img)) {
        throw ValidationError("warp: flow and image dimensions differ");
    }
    const int w = img.width();
    const int h = img.height();
    Image out(w, h);
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            out(x, y) = sample_bilinear(img, x + f.u(x, y), y + f.v(x, y));
        }
    });
    return out;
}

/// Running mean m_k = m_{k-1} + (I_k - m_{k-1}) / k, which returns identical
/// frames unchanged bit-for-bit.
inline Image temporal_mean(const ImageSequence& seq) {
    Image out = seq[0];
    for (std::size_t k = 1; k < seq.size(); ++k) {
        const double inv = 1.0 / static_cast<double>(k + 1);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += (seq[k][i] - out[i]) * inv;
        }
    }
    return out;
}

/// Sampled 1-D Gaussian truncated at radius ceil(3 sigma), normalized to
/// unit sum. Sigma 0 gives the single tap {1}.
class BlurKernel {
public:
    BlurKernel() : taps_{1.0} {}

    explicit BlurKernel(double sigma) : sigma_(sigma) {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
            throw ValidationError("Gaussian sigma must be >= 0, got " + std::to_string(sigma));
        }
        if (sigma == 0.0) {
            taps_ = {1.0};
            return;
        }
        radius_ = static_cast<int>(std::ceil(3.0 * sigma));
        taps_.resize(2 * radius_ + 1);
        double sum = 0.0;
        for (int i = -radius_; i <= radius_; ++i) {
            const double t = std::exp(-0.5 * i * i / (sigma * sigma));
            taps_[i + radius_] = t;
            sum += t;
        }
        for (double& t : taps_) {
            t /= sum;
        }
    }

    double sigma() const { return sigma_; }
    int radius() const { return radius_; }
    std::span<const double> taps() const { return taps_; }
    double tap(int offset) const { return taps_[offset + radius_]; }

private:
    double sigma_ = 0.0;
    int radius_ = 0;
    std::vector<double> taps_;
};

namespace detail {

// One separable pass with clamp-to-edge. horizontal selects the axis.
inline Image convolve_pass(const Image& in, const BlurKernel& k, bool horizontal) {
    const int w = in.width();
    const int h = in.height();
    const int r = k.radius();
    Image out(w, h);
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int t = -r; t <= r; ++t) {
                const double s = horizontal ? in(std::clamp(x + t, 0, w - 1), y)
                                            : in(x, std::clamp(y + t, 0, h - 1));
                acc += k.tap(t) * s;
            }
            out(x, y) = acc;
        }
    });
    return out;
}

// Transpose of convolve_pass. Clamped taps scatter their weight back onto the
// border pixel they read from, so this is not a plain mirrored convolution
// near the edges.
inline Image convolve_pass_adjoint(const Image& in, const BlurKernel& k, bool horizontal) {
    const int w = in.width();
    const int h = in.height();
    const int r = k.radius();
    Image out(w, h);
    if (horizontal) {
        parallel_for(static_cast<std::size_t>(h), [&](std::size_t row) {
            const int y = static_cast<int>(row);
            for (int x = 0; x < w; ++x) {
                for (int t = -r; t <= r; ++t) {
                    out(std::clamp(x + t, 0, w - 1), y) += k.tap(t) * in(x, y);
                }
            }
        });
    } else {
        parallel_for(static_cast<std::size_t>(w), [&](std::size_t col) {
            const int x = static_cast<int>(col);
            for (int y = 0; y < h; ++y) {
                for (int t = -r; t <= r; ++t) {
                    out(x, std::clamp(y + t, 0, h - 1)) += k.tap(t) * in(x, y);
                }
            }
        });
    }
    return out;
}

}

/// Separable Gaussian blur, clamp-to-edge borders.
inline Image convolve(const Image& img, const BlurKernel& k) {
    if (k.radius() == 0) {
        return img;
    }
    return detail::convolve_pass(detail::convolve_pass(img, k, true), k, false);
}

/// Exact transpose of convolve() as a linear operator on the pixel grid.
inline Image convolve_adjoint(const Image& img, const BlurKernel& k) {
    if (k.radius() == 0) {
        return img;
    }
    return detail::convolve_pass_adjoint(detail::convolve_pass_adjoint(img, k, false), k, true);
}

inline Image convolve_gaussian(const Image& img, double sigma) {
    return convolve(img, BlurKernel(sigma));
}

/// Bilinear resampling to a new size, aligning pixel centers.
inline Image resample(const Image& img, int width, int height) {
    Image out(width, height);
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;
    parallel_for(static_cast<std::size_t>(height), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < width; ++x) {
            out(x, y) = sample_bilinear(img, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
        }
    });
    return out;
}

/// Anti-aliased reduction by `scale` in (0,1).
inline Image downsample(const Image& img, double scale) {
    const int w = std::max(2, static_cast<int>(std::lround(img.width() * scale)));
    const int h = std::max(2, static_cast<int>(std::lround(img.height() * scale)));
    const double sigma = 0.5 * std::sqrt(1.0 / (scale * scale) - 1.0);
    return resample(convolve_gaussian(img, sigma), w, h);
}

/// Resamples a flow onto a grid of the given size and rescales the
/// displacements by the per-axis size ratio.
inline FlowField resample_flow(const FlowField& f, int width, int height) {
    FlowField out(resample(f.u, width, height), resample(f.v, width, height));
    const double rx = static_cast<double>(width) / f.width();
    const double ry = static_cast<double>(height) / f.height();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.u[i] *= rx;
        out.v[i] *= ry;
    }
    return out;
}

inline double rmse(const Image& a, const Image& b) {
    detail::require_same_shape(a, b, "rmse");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

/// Root-mean-square displacement magnitude, sqrt(mean(u^2 + v^2)).
inline double rms_magnitude(const FlowField& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        acc += f.u[i] * f.u[i] + f.v[i] * f.v[i];
    }
    return std::sqrt(acc / static_cast<double>(f.size()));
}

inline Image clamp_unit(Image img) {
    for (double& v : img.data()) {
        v = std::clamp(v, 0.0, 1.0);
    }
    return img;
}

}

#endif
