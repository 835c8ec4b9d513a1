#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "zaug/shapelab.hpp"

using namespace zaug;
using namespace zaug::shapelab;
using zaug_oracles::Quadrature;
using zaug_oracles::cloud_from_radius;
using zaug_oracles::rotate;

TEST_SUITE_BEGIN("shapelab");

TEST_CASE("real spherical harmonics are orthonormal (quadrature oracle)") {
    Quadrature q;
    // all diagonal entries
    for (int l = 0; l <= kLMax; ++l)
        for (int m = -l; m <= l; ++m) {
            const double norm = q.integrate([&](double th, double ph) {
                const double y = sh::real_sh(l, m, th, ph);
                return y * y;
            });
            CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));
        }
    // a handful of off-diagonal pairs
    const std::array<std::array<int, 4>, 5> pairs{{{0, 0, 3, 0}, {1, 1, 2, 1}, {3, -2, 3, 2}, {5, 0, 4, 0}, {2, -1, 5, -1}}};
    for (const auto& p : pairs) {
        const double dot = q.integrate(
            [&](double th, double ph) { return sh::real_sh(p[0], p[1], th, ph) * sh::real_sh(p[2], p[3], th, ph); });
        CHECK(std::fabs(dot) < 1e-9);
    }
}

TEST_CASE("fit_sh: unit sphere gives f00 = sqrt(4 pi), everything else small") {
    auto cloud = cloud_from_radius([](double, double) { return 1.0; });
    std::ostringstream warn;
    auto e = fit_sh(cloud, warn);
    CHECK(e.f[0] == doctest::Approx(std::sqrt(4.0 * M_PI)).epsilon(1e-2 / std::sqrt(4 * M_PI)));
    CHECK(std::fabs(e.f[0] - std::sqrt(4.0 * M_PI)) < 1e-2);
    for (int l = 1; l <= kLMax; ++l)
        for (int m = -l; m <= l; ++m) CHECK(std::fabs(e.coeff(l, m)) < 1e-2);
    CHECK(e.mean_radius() == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("fit_sh: constructed Y30 bump recovered; quadrature oracle cross-check") {
    auto radius = [](double th, double ph) { return 1.0 + 0.1 * sh::real_sh(3, 0, th, ph); };
    auto cloud = cloud_from_radius(radius);
    std::ostringstream warn;
    auto e = fit_sh(cloud, warn);
    CHECK(std::fabs(e.coeff(3, 0) - 0.1) < 1e-2);

    // oracle: f_lm = integral of R * Y_lm over the sphere
    Quadrature q;
    const double f30 = q.integrate([&](double th, double ph) { return radius(th, ph) * sh::real_sh(3, 0, th, ph); });
    CHECK(f30 == doctest::Approx(0.1).epsilon(1e-9));
    const double f00 = q.integrate([&](double th, double ph) { return radius(th, ph) * sh::real_sh(0, 0, th, ph); });
    CHECK(e.f[0] == doctest::Approx(f00).epsilon(1e-2));
}

TEST_CASE("fit_sh: scaling the cloud scales every coefficient linearly") {
    auto radius = [](double th, double ph) {
        return 1.0 + 0.05 * sh::real_sh(2, 1, th, ph) - 0.04 * sh::real_sh(4, -2, th, ph);
    };
    auto cloud = cloud_from_radius(radius, 1200);
    SurfacePointCloud doubled = cloud;
    for (auto& p : doubled.points)
        for (double& v : p) v *= 2.0;
    std::ostringstream warn;
    auto e1 = fit_sh(cloud, warn);
    auto e2 = fit_sh(doubled, warn);
    for (int i = 0; i < kCoeffCount; ++i)
        CHECK(e2.f[static_cast<std::size_t>(i)] == doctest::Approx(2.0 * e1.f[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("power spectrum and roughness: analytic cases") {
    SUBCASE("perfect sphere: P_l = 0 for l >= 1, Ro = 0") {
        auto e = fit_sh(cloud_from_radius([](double, double) { return 1.0; }));
        auto p = power_spectrum(e);
        for (int l = 1; l <= kLMax; ++l) CHECK(p[static_cast<std::size_t>(l)] < 1e-6);
        CHECK(roughness(e) < 1e-3);
    }
    SUBCASE("R = 1 + 0.1 Y30: P3 = 0.01/7, Ro = 0.01 within 10%") {
        auto e = fit_sh(cloud_from_radius(
            [](double th, double ph) { return 1.0 + 0.1 * sh::real_sh(3, 0, th, ph); }));
        auto p = power_spectrum(e);
        CHECK(p[3] == doctest::Approx(0.01 / 7.0).epsilon(0.10));
        CHECK(roughness(e) == doctest::Approx(0.01).epsilon(0.10));
        for (double pl : p) CHECK(pl >= 0.0);
    }
    SUBCASE("roughness is exactly scale-invariant (power-of-two scale)") {
        auto cloud = cloud_from_radius(
            [](double th, double ph) { return 1.0 + 0.08 * sh::real_sh(4, 2, th, ph); });
        SurfacePointCloud big = cloud;
        for (auto& p : big.points)
            for (double& v : p) v *= 2.0;
        auto ro1 = roughness(fit_sh(cloud));
        auto ro2 = roughness(fit_sh(big));
        CHECK(ro1 == ro2);
        // non-power-of-two scale stays equal to near machine precision
        SurfacePointCloud odd = cloud;
        for (auto& p : odd.points)
            for (double& v : p) v *= 3.7;
        CHECK(roughness(fit_sh(odd)) == doctest::Approx(ro1).epsilon(1e-9));
    }
    SUBCASE("roughness is rotation-invariant within 1e-3") {
        auto radius = [](double th, double ph) {
            return 1.0 + 0.1 * sh::real_sh(3, 0, th, ph) + 0.05 * sh::real_sh(5, 3, th, ph);
        };
        auto cloud = cloud_from_radius(radius);
        const double base = roughness(fit_sh(cloud));
        std::array<double, 3> axis{0.48, -0.6, 0.64};
        const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
        for (double& v : axis) v /= n;
        SurfacePointCloud rot = cloud;
        for (auto& p : rot.points) p = rotate(p, axis, 1.1);
        const double rotated = roughness(fit_sh(rot));
        CHECK(std::fabs(rotated - base) < 1e-3);
        CHECK(base > 1e-3);  // non-trivial surface
    }
    SUBCASE("degenerate f00 rejected") {
        SHExpansion e;
        CHECK_THROWS_AS(power_spectrum(e), Error);
    }
}

TEST_CASE("extract_surface: boundary definition and guards") {
    SUBCASE("solid 3x3x3 cube has 26 boundary voxels") {
        auto m = volio::VolumeStack::blank(5, 5, 5);
        for (int z = 1; z <= 3; ++z)
            for (int y = 1; y <= 3; ++y)
                for (int x = 1; x <= 3; ++x) m.at(z, y, x) = 1;
        CHECK(boundary_voxels(m, 1).size() == 26);
        // with the floor relaxed, extraction returns the same 26 points
        auto cloud = extract_surface(m, 1, {1, 1, 1}, 1);
        CHECK(cloud.points.size() == 26);
        CHECK(cloud.center[0] == doctest::Approx(2.0));
        // with the default floor of 50, the same cube is too small
        CHECK_THROWS_AS(extract_surface(m, 1), Error);
    }
    SUBCASE("single voxel rejected below the point floor") {
        auto m = volio::VolumeStack::blank(3, 3, 3);
        m.at(1, 1, 1) = 1;
        CHECK_THROWS_AS(extract_surface(m, 1), Error);
    }
    SUBCASE("absent label rejected") {
        auto m = volio::VolumeStack::blank(3, 3, 3);
        CHECK_THROWS_AS(extract_surface(m, 7), Error);
    }
    SUBCASE("two labels give disjoint clouds") {
        auto m = volio::VolumeStack::blank(8, 8, 8);
        for (int z = 0; z < 3; ++z)
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x) {
                    m.at(z, y, x) = 1;
                    m.at(z + 4, y + 4, x + 4) = 2;
                }
        auto a = extract_surface(m, 1, {1, 1, 1}, 1);
        auto b = extract_surface(m, 2, {1, 1, 1}, 1);
        for (const auto& p : a.points)
            for (const auto& q : b.points) CHECK((p[0] != q[0] || p[1] != q[1] || p[2] != q[2]));
    }
    SUBCASE("spacing scales coordinates") {
        auto m = volio::VolumeStack::blank(5, 5, 5);
        for (int z = 1; z <= 3; ++z)
            for (int y = 1; y <= 3; ++y)
                for (int x = 1; x <= 3; ++x) m.at(z, y, x) = 1;
        auto c = extract_surface(m, 1, {1, 1, 2}, 1);
        CHECK(c.center[2] == doctest::Approx(4.0));  // z centroid 2 voxels * dz 2
    }
}

TEST_CASE("fit_sh rejects rank-deficient angular coverage with a condition report") {
    // all points crammed into a narrow cone: the normal matrix is singular
    SurfacePointCloud c;
    c.label = 3;
    c.center = {0, 0, 0};
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const double th = rng.uniform(0.0, 0.05);
        const double ph = rng.uniform(-M_PI, M_PI);
        c.points.push_back({std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)});
    }
    try {
        fit_sh(c);
        FAIL("expected rejection");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("condition") != std::string::npos);
    }
}

TEST_CASE("match_labels: identity, shift robustness, ties, misses") {
    SUBCASE("identical masks map identically with vol == overlap") {
        auto m = volio::VolumeStack::blank(12, 12, 6);
        // a 4x4 grid of seeds makes 16 labels
        int label = 1;
        for (int gy = 0; gy < 4; ++gy)
            for (int gx = 0; gx < 4; ++gx, ++label)
                for (int z = 2; z < 4; ++z)
                    for (int y = 0; y < 2; ++y)
                        for (int x = 0; x < 2; ++x) m.at(z, 3 * gy + y, 3 * gx + x) = label;
        auto rows = match_labels(m, m);
        REQUIRE(rows.size() == 16);
        for (const auto& r : rows) {
            CHECK(r.label_a == r.label_b);
            CHECK(r.vol_a == r.overlap);
            CHECK(r.vol_b == r.overlap);
            CHECK(r.matched);
            CHECK(!r.tied);
        }
    }
    SUBCASE("one-voxel shift keeps the mapping for blobs larger than the shift") {
        auto a = volio::VolumeStack::blank(16, 16, 8);
        auto b = volio::VolumeStack::blank(16, 16, 8);
        auto fill = [](volio::VolumeStack& m, int x0, int label, int shift) {
            for (int z = 2; z < 6; ++z)
                for (int y = 4; y < 10; ++y)
                    for (int x = x0; x < x0 + 5; ++x) m.at(z, y, x + shift) = label;
        };
        fill(a, 1, 1, 0);
        fill(a, 9, 2, 0);
        fill(b, 1, 1, 1);
        fill(b, 9, 2, 1);
        auto rows = match_labels(a, b);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0].label_a == 1);
        CHECK(rows[0].label_b == 1);
        CHECK(rows[1].label_a == 2);
        CHECK(rows[1].label_b == 2);
    }
    SUBCASE("equal overlaps tie toward the smaller B id, flagged") {
        auto a = volio::VolumeStack::blank(6, 6, 1);
        auto b = volio::VolumeStack::blank(6, 6, 1);
        a.at(0, 0, 0) = 1;
        a.at(0, 0, 1) = 1;
        b.at(0, 0, 0) = 5;
        b.at(0, 0, 1) = 3;
        auto rows = match_labels(a, b);
        REQUIRE(rows.size() == 1);
        CHECK(rows[0].label_b == 3);
        CHECK(rows[0].tied);
    }
    SUBCASE("zero overlap maps to none and is flagged") {
        auto a = volio::VolumeStack::blank(6, 6, 1);
        auto b = volio::VolumeStack::blank(6, 6, 1);
        a.at(0, 1, 1) = 4;
        b.at(0, 4, 4) = 9;
        auto rows = match_labels(a, b);
        REQUIRE(rows.size() == 1);
        CHECK(!rows[0].matched);
        CHECK(rows[0].label_b == 0);
    }
    SUBCASE("shape mismatch rejected") {
        auto a = volio::VolumeStack::blank(4, 4, 2);
        auto b = volio::VolumeStack::blank(4, 4, 3);
        CHECK_THROWS_AS(match_labels(a, b), Error);
    }
}

TEST_CASE("smoothed_iou: identity, disjoint, empty, dilation effect") {
    auto blob = [](volio::VolumeStack& m, int cx, int cy, int cz, int r) {
        for (int z = std::max(0, cz - r); z <= std::min(m.depth - 1, cz + r); ++z)
            for (int y = std::max(0, cy - r); y <= std::min(m.height - 1, cy + r); ++y)
                for (int x = std::max(0, cx - r); x <= std::min(m.width - 1, cx + r); ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) + (z - cz) * (z - cz) <= r * r)
                        m.at(z, y, x) = 1;
    };

    SUBCASE("identical masks score 1 for any parameters") {
        auto m = volio::VolumeStack::blank(16, 16, 16);
        blob(m, 8, 8, 8, 4);
        CHECK(smoothed_iou(m, m, 2, 1.0, 0.5).value == doctest::Approx(1.0));
        CHECK(smoothed_iou(m, m, 0, 0.0, 0.5).value == doctest::Approx(1.0));
    }
    SUBCASE("far-apart blobs score 0 at small radius") {
        auto a = volio::VolumeStack::blank(24, 24, 8);
        auto b = volio::VolumeStack::blank(24, 24, 8);
        blob(a, 4, 4, 4, 2);
        blob(b, 19, 19, 4, 2);
        CHECK(smoothed_iou(a, b, 1, 0.5, 0.5).value == doctest::Approx(0.0));
    }
    SUBCASE("both masks empty after processing count as 1, flagged") {
        auto a = volio::VolumeStack::blank(8, 8, 8);
        auto b = volio::VolumeStack::blank(8, 8, 8);
        auto r = smoothed_iou(a, b);
        CHECK(r.both_empty);
        CHECK(r.value == 1.0);
    }
    SUBCASE("dilation increases overlap of nearby structures") {
        auto a = volio::VolumeStack::blank(20, 20, 8);
        auto b = volio::VolumeStack::blank(20, 20, 8);
        blob(a, 8, 10, 4, 3);
        blob(b, 11, 10, 4, 3);
        const double tight = smoothed_iou(a, b, 0, 0.0, 0.5).value;
        const double dilated = smoothed_iou(a, b, 3, 0.0, 0.5).value;
        CHECK(dilated > tight);
    }
}

TEST_CASE("roughness_table: per-label rows, small surfaces reported as skipped") {
    // one decent sphere and one tiny label
    auto m = volio::VolumeStack::blank(24, 24, 24);
    const double r = 8.0;
    for (int z = 0; z < 24; ++z)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x)
                if ((x - 12.0) * (x - 12.0) + (y - 12.0) * (y - 12.0) + (z - 12.0) * (z - 12.0) <= r * r)
                    m.at(z, y, x) = 1;
    m.at(0, 0, 0) = 2;

    std::vector<std::pair<int, std::string>> skipped;
    std::ostringstream warn;
    auto rows = roughness_table(m, {1, 1, 1}, &skipped, warn);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].label == 1);
    CHECK(rows[0].mean_radius == doctest::Approx(r).epsilon(0.06));
    CHECK(rows[0].ro < 0.01);  // digitized sphere is nearly smooth
    REQUIRE(skipped.size() == 1);
    CHECK(skipped[0].first == 2);
}

TEST_SUITE_END();
