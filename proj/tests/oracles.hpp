#ifndef ZAUG_TEST_ORACLES_HPP
#define ZAUG_TEST_ORACLES_HPP

// Independent reference implementations used by the unit and acceptance
// suites: plain-loop Laplacian pyramid, brute-force distillation formula,
// Gauss-Legendre quadrature over the sphere, and quasi-uniform sphere
// sampling. None of these share code with the library paths they check.

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "zaug/shapelab.hpp"
#include "zaug/tensor.hpp"

namespace zaug_oracles {

using zaug::Tensor;

// --- Laplacian pyramid loss ---------------------------------------------------

namespace lap {

using Img = std::vector<std::vector<double>>;

inline int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

inline Img from_tensor(const Tensor& t) {
    Img img(static_cast<std::size_t>(t.h()), std::vector<double>(static_cast<std::size_t>(t.w())));
    for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x)
            img[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = t.at(0, 0, y, x);
    return img;
}

inline double kern(int d) {
    static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    return k[d + 2];
}

inline Img pad_to_multiple(const Img& a, int mult) {
    const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
    const int th = (h + mult - 1) / mult * mult, tw = (w + mult - 1) / mult * mult;
    Img out(static_cast<std::size_t>(th), std::vector<double>(static_cast<std::size_t>(tw)));
    for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
            out[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] =
                a[static_cast<std::size_t>(reflect(y, h))][static_cast<std::size_t>(reflect(x, w))];
    return out;
}

inline Img down(const Img& a) {
    const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
    Img out(static_cast<std::size_t>((h + 1) / 2), std::vector<double>(static_cast<std::size_t>((w + 1) / 2)));
    for (int y = 0; y < (h + 1) / 2; ++y)
        for (int x = 0; x < (w + 1) / 2; ++x) {
            double acc = 0;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx)
                    acc += kern(dy) * kern(dx) *
                           a[static_cast<std::size_t>(reflect(2 * y + dy, h))]
                            [static_cast<std::size_t>(reflect(2 * x + dx, w))];
            out[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = acc;
        }
    return out;
}

inline Img up(const Img& a) {
    const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
    const int oh = 2 * h, ow = 2 * w;
    auto zval = [&](int y, int x) {
        y = reflect(y, oh);
        x = reflect(x, ow);
        if (y % 2 || x % 2) return 0.0;
        return a[static_cast<std::size_t>(y / 2)][static_cast<std::size_t>(x / 2)];
    };
    Img out(static_cast<std::size_t>(oh), std::vector<double>(static_cast<std::size_t>(ow)));
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx) acc += kern(dy) * kern(dx) * zval(y + dy, x + dx);
            out[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = 4.0 * acc;
        }
    return out;
}

inline std::vector<Img> pyramid(const Img& x, int levels) {
    std::vector<Img> out;
    Img g = x;
    for (int k = 0; k < levels - 1; ++k) {
        Img next = down(g);
        Img u = up(next);
        Img lapimg = g;
        for (std::size_t y = 0; y < g.size(); ++y)
            for (std::size_t x = 0; x < g[0].size(); ++x) lapimg[y][x] = g[y][x] - u[y][x];
        out.push_back(lapimg);
        g = next;
    }
    out.push_back(g);
    return out;
}

inline double loss(const Tensor& a, const Tensor& b) {
    auto pa = pyramid(pad_to_multiple(from_tensor(a), 32), 5);
    auto pb = pyramid(pad_to_multiple(from_tensor(b), 32), 5);
    double total = 0;
    for (int k = 0; k < 5; ++k) {
        double acc = 0;
        const auto& la = pa[static_cast<std::size_t>(k)];
        const auto& lb = pb[static_cast<std::size_t>(k)];
        for (std::size_t y = 0; y < la.size(); ++y)
            for (std::size_t x = 0; x < la[0].size(); ++x) acc += std::fabs(la[y][x] - lb[y][x]);
        total += static_cast<double>(1 << k) * acc / (la.size() * la[0].size());
    }
    return total;
}

}  // namespace lap

// --- distillation formula, straight from its definition ------------------------

inline double distill_brute(const std::vector<std::pair<Tensor, Tensor>>& student,
                            const std::pair<Tensor, Tensor>& teacher) {
    const int N = teacher.first.n();
    double sum_over_batch = 0;
    for (int n = 0; n < N; ++n) {
        double inner = 0;
        for (std::size_t b = 0; b < student.size(); ++b) {
            double ss0 = 0, ss1 = 0;
            for (int c = 0; c < teacher.first.c(); ++c)
                for (int y = 0; y < teacher.first.h(); ++y)
                    for (int x = 0; x < teacher.first.w(); ++x) {
                        const double d0 = student[b].first.at(n, c, y, x) - teacher.first.at(n, c, y, x);
                        const double d1 = student[b].second.at(n, c, y, x) - teacher.second.at(n, c, y, x);
                        ss0 += d0 * d0;
                        ss1 += d1 * d1;
                    }
            inner += std::sqrt(ss0) + std::sqrt(ss1);
        }
        sum_over_batch += std::sqrt(inner);
    }
    return sum_over_batch / N;
}

// --- sphere quadrature and sampling --------------------------------------------

struct Quadrature {
    std::vector<double> x, w;
    int n_phi = 128;

    explicit Quadrature(int n = 64) {
        x.resize(static_cast<std::size_t>(n));
        w.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            for (int it = 0; it < 100; ++it) {
                double p0 = 1, p1 = 0;
                for (int j = 0; j < n; ++j) {
                    const double p2 = p1;
                    p1 = p0;
                    p0 = ((2 * j + 1) * t * p1 - j * p2) / (j + 1);
                }
                const double dp = n * (t * p0 - p1) / (t * t - 1);
                const double t1 = t - p0 / dp;
                const bool done = std::fabs(t1 - t) < 1e-15;
                t = t1;
                if (done) break;
            }
            double p0 = 1, p1 = 0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) * t * p1 - j * p2) / (j + 1);
            }
            const double dp = n * (t * p0 - p1) / (t * t - 1);
            x[static_cast<std::size_t>(i)] = t;
            w[static_cast<std::size_t>(i)] = 2.0 / ((1 - t * t) * dp * dp);
        }
    }

    template <typename F>
    double integrate(F f) const {
        double acc = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double theta = std::acos(x[i]);
            double inner = 0;
            for (int j = 0; j < n_phi; ++j) {
                const double phi = 2.0 * M_PI * j / n_phi - M_PI;
                inner += f(theta, phi);
            }
            acc += w[i] * inner * (2.0 * M_PI / n_phi);
        }
        return acc;
    }
};

inline std::vector<std::array<double, 3>> fibonacci_sphere(int n) {
    std::vector<std::array<double, 3>> pts;
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / n;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = ga * i;
        pts.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
    return pts;
}

inline zaug::shapelab::SurfacePointCloud cloud_from_radius(
    const std::function<double(double, double)>& radius_fn, int n = 2000) {
    zaug::shapelab::SurfacePointCloud c;
    c.label = 1;
    c.center = {0, 0, 0};
    for (const auto& dir : fibonacci_sphere(n)) {
        const double theta = std::acos(std::min(std::max(dir[2], -1.0), 1.0));
        const double phi = std::atan2(dir[1], dir[0]);
        const double r = radius_fn(theta, phi);
        c.points.push_back({r * dir[0], r * dir[1], r * dir[2]});
    }
    return c;
}

inline std::array<double, 3> rotate(const std::array<double, 3>& p, const std::array<double, 3>& axis,
                                    double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double ux = axis[0], uy = axis[1], uz = axis[2];
    return {(c + ux * ux * (1 - c)) * p[0] + (ux * uy * (1 - c) - uz * s) * p[1] +
                (ux * uz * (1 - c) + uy * s) * p[2],
            (uy * ux * (1 - c) + uz * s) * p[0] + (c + uy * uy * (1 - c)) * p[1] +
                (uy * uz * (1 - c) - ux * s) * p[2],
            (uz * ux * (1 - c) - uy * s) * p[0] + (uz * uy * (1 - c) + ux * s) * p[1] +
                (c + uz * uz * (1 - c)) * p[2]};
}

// centered samples whose sample covariance is exactly diagonal
inline Eigen::MatrixXd exact_cov_samples(int n, const std::vector<double>& scales,
                                         const std::vector<double>& mean) {
    const int d = static_cast<int>(scales.size());
    Eigen::MatrixXd q(n, d);
    for (int k = 0; k < d; ++k) {
        double norm = 0;
        for (int i = 0; i < n; ++i) {
            q(i, k) = std::cos(M_PI * (i + 0.5) * (k + 1) / n);
            norm += q(i, k) * q(i, k);
        }
        for (int i = 0; i < n; ++i) q(i, k) *= std::sqrt((n - 1) / norm) * scales[static_cast<std::size_t>(k)];
    }
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) q(i, k) += mean[static_cast<std::size_t>(k)];
    return q;
}

}  // namespace zaug_oracles

#endif
