#ifndef ZAUG_SHAPELAB_HPP
#define ZAUG_SHAPELAB_HPP

#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "zaug/volio.hpp"

// Shape analyses over labeled 3D masks: spherical-harmonic expansion of
// nuclear surfaces with rotation-invariant power spectra and a roughness
// statistic, label matching by maximal voxel overlap, and IoU after
// dilation + Gaussian smoothing.

namespace zaug::shapelab {

using nlohmann::json;
using volio::VolumeStack;

constexpr int kLMax = 5;
constexpr int kCoeffCount = (kLMax + 1) * (kLMax + 1);  // 36
constexpr int kMinSurfacePoints = 50;  // fewer leaves the l_max=5 fit rank-deficient

// ---------------------------------------------------------------------------
// real spherical harmonics (orthonormal, Condon-Shortley phase omitted)
// ---------------------------------------------------------------------------

namespace sh {

// associated Legendre P_l^m(x) without the (-1)^m phase
inline double assoc_legendre(int l, int m, double x) {
    double pmm = 1.0;
    if (m > 0) {
        const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
        double fact = 1.0;
        for (int i = 0; i < m; ++i) {
            pmm *= fact * s;
            fact += 2.0;
        }
    }
    if (l == m) return pmm;
    double pmmp1 = x * (2 * m + 1) * pmm;
    if (l == m + 1) return pmmp1;
    double pll = 0.0;
    for (int ll = m + 2; ll <= l; ++ll) {
        pll = (x * (2 * ll - 1) * pmmp1 - (ll + m - 1) * pmm) / (ll - m);
        pmm = pmmp1;
        pmmp1 = pll;
    }
    return pll;
}

inline double norm_factor(int l, int m) {
    double log_ratio = 0.0;  // log((l-m)! / (l+m)!)
    for (int k = l - m + 1; k <= l + m; ++k) log_ratio -= std::log(static_cast<double>(k));
    return std::sqrt((2.0 * l + 1.0) / (4.0 * M_PI) * std::exp(log_ratio));
}

// real basis: m = 0 zonal, m > 0 cosine, m < 0 sine
inline double real_sh(int l, int m, double theta, double phi) {
    const double x = std::cos(theta);
    const int am = std::abs(m);
    const double base = norm_factor(l, am) * assoc_legendre(l, am, x);
    if (m == 0) return base;
    return std::sqrt(2.0) * base * (m > 0 ? std::cos(am * phi) : std::sin(am * phi));
}

inline int flat_index(int l, int m) { return l * l + (m + l); }

}  // namespace sh

// ---------------------------------------------------------------------------
// surface extraction
// ---------------------------------------------------------------------------

struct SurfacePointCloud {
    std::vector<std::array<double, 3>> points;  // anisotropy-corrected coordinates
    int label = 0;
    std::array<double, 3> center{0, 0, 0};      // geometric centroid of the boundary
};

// 6-connected boundary voxels of one label: a labeled voxel with at least one
// differently-labeled (or out-of-volume) face neighbor.
inline std::vector<std::array<int, 3>> boundary_voxels(const VolumeStack& mask, int label) {
    std::vector<std::array<int, 3>> out;
    static const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int z = 0; z < mask.depth; ++z)
        for (int y = 0; y < mask.height; ++y)
            for (int x = 0; x < mask.width; ++x) {
                if (std::lround(mask.at(z, y, x)) != label) continue;
                bool edge = false;
                for (const auto& d : off) {
                    const int zz = z + d[0], yy = y + d[1], xx = x + d[2];
                    if (zz < 0 || zz >= mask.depth || yy < 0 || yy >= mask.height || xx < 0 ||
                        xx >= mask.width || std::lround(mask.at(zz, yy, xx)) != label) {
                        edge = true;
                        break;
                    }
                }
                if (edge) out.push_back({x, y, z});
            }
    return out;
}

inline SurfacePointCloud extract_surface(const VolumeStack& mask, int label,
                                         std::array<double, 3> spacing = {1, 1, 1},
                                         int min_points = kMinSurfacePoints) {
    bool present = false;
    for (const double v : mask.voxels)
        if (std::lround(v) == label) {
            present = true;
            break;
        }
    ZAUG_CHECK(present, "extract_surface: label ", label, " absent from mask");

    auto voxels = boundary_voxels(mask, label);
    ZAUG_CHECK(static_cast<int>(voxels.size()) >= min_points, "extract_surface: label ", label, " has ",
               voxels.size(), " boundary points, below the floor of ", min_points);

    SurfacePointCloud cloud;
    cloud.label = label;
    cloud.points.reserve(voxels.size());
    for (const auto& v : voxels)
        cloud.points.push_back({v[0] * spacing[0], v[1] * spacing[1], v[2] * spacing[2]});
    for (const auto& p : cloud.points)
        for (int i = 0; i < 3; ++i) cloud.center[static_cast<std::size_t>(i)] += p[static_cast<std::size_t>(i)];
    for (int i = 0; i < 3; ++i) cloud.center[static_cast<std::size_t>(i)] /= static_cast<double>(cloud.points.size());
    return cloud;
}

// ---------------------------------------------------------------------------
// spherical-harmonic fit and roughness
// ---------------------------------------------------------------------------

struct SHExpansion {
    std::array<double, kCoeffCount> f{};  // indexed sh::flat_index(l, m)
    double mean_radius() const { return f[0] / std::sqrt(4.0 * M_PI); }
    double coeff(int l, int m) const { return f[static_cast<std::size_t>(sh::flat_index(l, m))]; }
};

// Least-squares fit of the radius function against the real basis, about the
// cloud centroid. Least squares rather than quadrature: boundary voxels
// sample the sphere non-uniformly.
inline SHExpansion fit_sh(const SurfacePointCloud& cloud, std::ostream& warn = std::cerr) {
    ZAUG_CHECK(static_cast<int>(cloud.points.size()) >= kMinSurfacePoints,
               "fit_sh: cloud has ", cloud.points.size(), " points, need >= ", kMinSurfacePoints);

    const auto n = static_cast<Eigen::Index>(cloud.points.size());
    Eigen::MatrixXd A(n, kCoeffCount);
    Eigen::VectorXd r(n);
    struct Bin {
        double rmin = 1e300, rmax = 0;
    };
    std::map<std::pair<int, int>, Bin> bins;  // coarse star-shape screen
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& p = cloud.points[static_cast<std::size_t>(i)];
        const double dx = p[0] - cloud.center[0];
        const double dy = p[1] - cloud.center[1];
        const double dz = p[2] - cloud.center[2];
        const double rad = std::sqrt(dx * dx + dy * dy + dz * dz);
        ZAUG_CHECK(rad > 0, "fit_sh: point coincides with the centroid");
        const double theta = std::acos(std::min(std::max(dz / rad, -1.0), 1.0));
        const double phi = std::atan2(dy, dx);
        r(i) = rad;
        for (int l = 0; l <= kLMax; ++l)
            for (int m = -l; m <= l; ++m) A(i, sh::flat_index(l, m)) = sh::real_sh(l, m, theta, phi);
        auto& b = bins[{static_cast<int>(theta / M_PI * 8), static_cast<int>((phi + M_PI) / (2 * M_PI) * 16)}];
        b.rmin = std::min(b.rmin, rad);
        b.rmax = std::max(b.rmax, rad);
    }

    int violations = 0;
    for (const auto& [key, b] : bins)
        if (b.rmax > 1.5 * b.rmin) ++violations;
    if (violations > 0)
        warn << "warning: surface for label " << cloud.label << " looks non-star-shaped in " << violations
             << " angular bins; fit may be unreliable\n";

    Eigen::MatrixXd ata = A.transpose() * A;
    Eigen::VectorXd atr = A.transpose() * r;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ata);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    ZAUG_CHECK(lo > 0 && hi / lo < 1e8,
               "fit_sh: rank-deficient design (angular coverage too poor); condition number ",
               lo > 0 ? hi / lo : std::numeric_limits<double>::infinity());

    Eigen::VectorXd f = ata.ldlt().solve(atr);
    SHExpansion e;
    for (int i = 0; i < kCoeffCount; ++i) e.f[static_cast<std::size_t>(i)] = f(i);
    return e;
}

// P_l = 4 pi / ((2l+1) f00^2) * sum_m f_lm^2: per-degree power of radial
// deformations, normalized by the mean shell radius so it is size-free.
inline std::array<double, kLMax + 1> power_spectrum(const SHExpansion& e) {
    ZAUG_CHECK(e.f[0] != 0.0, "power_spectrum: degenerate surface (f00 = 0)");
    std::array<double, kLMax + 1> p{};
    for (int l = 0; l <= kLMax; ++l) {
        double s = 0;
        for (int m = -l; m <= l; ++m) {
            const double c = e.coeff(l, m);
            s += c * c;
        }
        p[static_cast<std::size_t>(l)] = 4.0 * M_PI / ((2.0 * l + 1.0) * e.f[0] * e.f[0]) * s;
    }
    return p;
}

// total power in angular numbers l >= 3: fine-scale surface roughness,
// independent of size and orientation
inline double roughness(const SHExpansion& e) {
    auto p = power_spectrum(e);
    double ro = 0;
    for (int l = 3; l <= kLMax; ++l) ro += (2.0 * l + 1.0) * p[static_cast<std::size_t>(l)];
    return ro;
}

struct RoughnessRow {
    int label = 0;
    double mean_radius = 0.0;
    std::array<double, kLMax + 1> power{};
    double ro = 0.0;

    json to_json() const {
        json j{{"label", label}, {"mean_radius", mean_radius}, {"Ro", ro}};
        j["P"] = json::array();
        for (double p : power) j["P"].push_back(p);
        return j;
    }
};

inline std::vector<int> labels_in(const VolumeStack& mask) {
    std::vector<int> out;
    std::map<int, bool> seen;
    for (const double v : mask.voxels) {
        const int label = static_cast<int>(std::lround(v));
        if (label != 0 && !seen[label]) {
            seen[label] = true;
            out.push_back(label);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Per-label roughness table over a labeled mask; labels whose surfaces fail
// the point floor or the conditioning check are reported via `skipped`.
inline std::vector<RoughnessRow> roughness_table(const VolumeStack& mask, std::array<double, 3> spacing,
                                                 std::vector<std::pair<int, std::string>>* skipped = nullptr,
                                                 std::ostream& warn = std::cerr) {
    std::vector<RoughnessRow> rows;
    for (int label : labels_in(mask)) {
        try {
            auto cloud = extract_surface(mask, label, spacing);
            auto e = fit_sh(cloud, warn);
            RoughnessRow row;
            row.label = label;
            row.mean_radius = e.mean_radius();
            row.power = power_spectrum(e);
            row.ro = roughness(e);
            rows.push_back(row);
        } catch (const Error& err) {
            if (skipped) skipped->emplace_back(label, err.what());
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// label matching by maximal overlap
// ---------------------------------------------------------------------------

struct MatchRow {
    int label_a = 0;
    int label_b = 0;  // 0 when unmatched
    std::size_t vol_a = 0;
    std::size_t vol_b = 0;
    std::size_t overlap = 0;
    bool tied = false;
    bool matched = true;

    json to_json() const {
        return json{{"label_a", label_a}, {"label_b", label_b}, {"vol_a", vol_a},
                    {"vol_b", vol_b},     {"overlap", overlap}, {"tied", tied},
                    {"matched", matched}};
    }
};

// Each A-label maps to the B-label with the largest voxel overlap; ties break
// toward the smaller B id and are flagged, zero-overlap labels map to none.
inline std::vector<MatchRow> match_labels(const VolumeStack& mask_a, const VolumeStack& mask_b) {
    ZAUG_CHECK(mask_a.width == mask_b.width && mask_a.height == mask_b.height && mask_a.depth == mask_b.depth,
               "match_labels: mask shapes differ");
    std::map<int, std::size_t> vol_a, vol_b;
    std::map<int, std::map<int, std::size_t>> overlap;
    for (std::size_t i = 0; i < mask_a.voxels.size(); ++i) {
        const int a = static_cast<int>(std::lround(mask_a.voxels[i]));
        const int b = static_cast<int>(std::lround(mask_b.voxels[i]));
        if (a != 0) ++vol_a[a];
        if (b != 0) ++vol_b[b];
        if (a != 0 && b != 0) ++overlap[a][b];
    }
    std::vector<MatchRow> rows;
    for (const auto& [a, va] : vol_a) {
        MatchRow row;
        row.label_a = a;
        row.vol_a = va;
        auto it = overlap.find(a);
        if (it == overlap.end() || it->second.empty()) {
            row.matched = false;
            row.label_b = 0;
        } else {
            std::size_t best = 0;
            int best_b = 0;
            bool tie = false;
            for (const auto& [b, count] : it->second) {  // ascending b: ties keep the smaller id
                if (count > best) {
                    best = count;
                    best_b = b;
                    tie = false;
                } else if (count == best) {
                    tie = true;
                }
            }
            row.label_b = best_b;
            row.overlap = best;
            row.vol_b = vol_b[best_b];
            row.tied = tie;
        }
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// smoothed IoU
// ---------------------------------------------------------------------------

namespace detail {

inline VolumeStack dilate_ball(const VolumeStack& m, int radius) {
    if (radius <= 0) return m;
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -radius; dz <= radius; ++dz)
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx)
                if (dx * dx + dy * dy + dz * dz <= radius * radius) offsets.push_back({dx, dy, dz});
    VolumeStack out = VolumeStack::blank(m.width, m.height, m.depth, m.bit_depth);
    for (int z = 0; z < m.depth; ++z)
        for (int y = 0; y < m.height; ++y)
            for (int x = 0; x < m.width; ++x) {
                if (m.at(z, y, x) == 0.0) continue;
                for (const auto& d : offsets) {
                    const int zz = z + d[2], yy = y + d[1], xx = x + d[0];
                    if (zz >= 0 && zz < m.depth && yy >= 0 && yy < m.height && xx >= 0 && xx < m.width)
                        out.at(zz, yy, xx) = 1.0;
                }
            }
    return out;
}

inline VolumeStack gaussian3(const VolumeStack& m, double sigma) {
    if (sigma <= 0) return m;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + radius)];
    }
    for (double& v : k) v /= sum;

    VolumeStack a = m, b = VolumeStack::blank(m.width, m.height, m.depth, m.bit_depth);
    auto pass = [&](const VolumeStack& src, VolumeStack& dst, int axis) {
        for (int z = 0; z < m.depth; ++z)
            for (int y = 0; y < m.height; ++y)
                for (int x = 0; x < m.width; ++x) {
                    double acc = 0;
                    for (int i = -radius; i <= radius; ++i) {
                        int zz = z, yy = y, xx = x;
                        if (axis == 0) xx = std::min(std::max(x + i, 0), m.width - 1);
                        if (axis == 1) yy = std::min(std::max(y + i, 0), m.height - 1);
                        if (axis == 2) zz = std::min(std::max(z + i, 0), m.depth - 1);
                        acc += k[static_cast<std::size_t>(i + radius)] * src.at(zz, yy, xx);
                    }
                    dst.at(z, y, x) = acc;
                }
    };
    pass(a, b, 0);
    pass(b, a, 1);
    pass(a, b, 2);
    return b;
}

}  // namespace detail

struct IouResult {
    double value = 1.0;
    bool both_empty = false;
};

// Both masks are dilated (ball radius), Gaussian-smoothed, re-thresholded,
// then compared with intersection-over-union. Two masks that are empty after
// processing count as a perfect match, flagged.
inline IouResult smoothed_iou(const VolumeStack& mask_a, const VolumeStack& mask_b, int dilate_r = 2,
                              double sigma = 1.0, double threshold = 0.5) {
    ZAUG_CHECK(mask_a.width == mask_b.width && mask_a.height == mask_b.height && mask_a.depth == mask_b.depth,
               "smoothed_iou: mask shapes differ");
    auto binarize = [](const VolumeStack& m) {
        VolumeStack out = m;
        for (double& v : out.voxels) v = v != 0.0 ? 1.0 : 0.0;
        return out;
    };
    auto process = [&](const VolumeStack& m) {
        auto d = detail::dilate_ball(binarize(m), dilate_r);
        auto g = detail::gaussian3(d, sigma);
        for (double& v : g.voxels) v = v >= threshold ? 1.0 : 0.0;
        return g;
    };
    auto pa = process(mask_a);
    auto pb = process(mask_b);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pa.voxels.size(); ++i) {
        const bool a = pa.voxels[i] != 0.0;
        const bool b = pb.voxels[i] != 0.0;
        if (a && b) ++inter;
        if (a || b) ++uni;
    }
    IouResult r;
    if (uni == 0) {
        r.both_empty = true;
        r.value = 1.0;
        return r;
    }
    r.value = static_cast<double>(inter) / static_cast<double>(uni);
    return r;
}

}  // namespace zaug::shapelab

#endif
