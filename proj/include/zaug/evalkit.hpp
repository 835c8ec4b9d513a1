#ifndef ZAUG_EVALKIT_HPP
#define ZAUG_EVALKIT_HPP

#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "zaug/objectives.hpp"
#include "zaug/volio.hpp"

// Quantitative evaluation: RMSE / PSNR / SSIM on the 8-bit intensity domain,
// Frechet distance between feature-set Gaussians, the cubic z-interpolation
// baseline, and inter-stack error reports.

namespace zaug::evalkit {

using nlohmann::json;
using volio::VolumeStack;

constexpr double kMaxIntensity = 255.0;  // all metric conventions are 8-bit

// ---------------------------------------------------------------------------
// frame metrics
// ---------------------------------------------------------------------------

inline double rmse(const Tensor& a, const Tensor& b) {
    tensor_ops::check_same(a, b, "rmse");
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc / a.numel());
}

inline double psnr_from_rmse(double r, double maxval = kMaxIntensity) {
    if (r <= 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(maxval / r);
}

inline double psnr(const Tensor& a, const Tensor& b) { return psnr_from_rmse(rmse(a, b)); }

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// averaged over positions where the window fits entirely.
inline double ssim(const Tensor& a, const Tensor& b, double dynamic_range = kMaxIntensity) {
    tensor_ops::check_same(a, b, "ssim");
    const int H = a.h(), W = a.w();
    constexpr int R = 5;  // window 11
    ZAUG_CHECK(H >= 11 && W >= 11, "ssim: frames smaller than the 11x11 window");

    double win[11][11];
    double wsum = 0;
    for (int dy = -R; dy <= R; ++dy)
        for (int dx = -R; dx <= R; ++dx) {
            const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            win[dy + R][dx + R] = g;
            wsum += g;
        }
    for (auto& row : win)
        for (double& v : row) v /= wsum;

    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

    double total = 0;
    std::size_t count = 0;
    for (int n = 0; n < a.n(); ++n)
        for (int c = 0; c < a.c(); ++c)
            for (int y = R; y < H - R; ++y)
                for (int x = R; x < W - R; ++x) {
                    double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int dy = -R; dy <= R; ++dy)
                        for (int dx = -R; dx <= R; ++dx) {
                            const double w = win[dy + R][dx + R];
                            const double va = a.at(n, c, y + dy, x + dx);
                            const double vb = b.at(n, c, y + dy, x + dx);
                            ma += w * va;
                            mb += w * vb;
                            saa += w * va * va;
                            sbb += w * vb * vb;
                            sab += w * va * vb;
                        }
                    const double var_a = saa - ma * ma;
                    const double var_b = sbb - mb * mb;
                    const double cov = sab - ma * mb;
                    total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                             ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
                    ++count;
                }
    return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian feature fits
// ---------------------------------------------------------------------------

struct FidResult {
    double value = 0.0;
    bool jittered = false;
    std::string extractor_id;
    std::string extractor_hash;
};

namespace detail {

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_A - mu_B||^2 + tr(S_A + S_B - 2 (S_A S_B)^{1/2}) over sample Gaussian
// fits of the two feature sets (rows = samples).
inline FidResult fid_from_features(const Eigen::MatrixXd& fa, const Eigen::MatrixXd& fb) {
    ZAUG_CHECK(fa.cols() == fb.cols(), "fid: feature dimensions differ");
    ZAUG_CHECK(fa.rows() >= 2 && fb.rows() >= 2, "fid: each set needs at least 2 samples");
    const auto d = fa.cols();

    Eigen::VectorXd mu_a = fa.colwise().mean();
    Eigen::VectorXd mu_b = fb.colwise().mean();
    Eigen::MatrixXd ca = fa.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = fb.rowwise() - mu_b.transpose();
    Eigen::MatrixXd sa = ca.transpose() * ca / static_cast<double>(fa.rows() - 1);
    Eigen::MatrixXd sb = cb.transpose() * cb / static_cast<double>(fb.rows() - 1);

    FidResult out;
    auto attempt = [&](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double* trace_sqrt) {
        Eigen::MatrixXd root_a = detail::sym_sqrt(A);
        Eigen::MatrixXd mid = root_a * B * root_a;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mid);
        double neg = 0, pos = 0, tr = 0;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
            const double ev = es.eigenvalues()[i];
            if (ev < 0)
                neg += -ev;
            else
                pos += ev;
            tr += std::sqrt(std::max(ev, 0.0));
        }
        *trace_sqrt = tr;
        return neg <= 1e-6 * std::max(pos, 1.0);  // clamped mass within tolerance
    };

    double trace_sqrt = 0;
    if (!attempt(sa, sb, &trace_sqrt)) {
        out.jittered = true;
        Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d) * 1e-6;
        attempt(sa + eye, sb + eye, &trace_sqrt);
        sa += eye;
        sb += eye;
    }
    out.value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_sqrt;
    return out;
}

// Fixed feature extractor: a convolutional embedding with weights generated
// from a pinned seed, global-average-pooled to 2048 dimensions. Scores are
// only comparable under the same embedding, so every report records the
// extractor identity and weight hash instead of assuming one.
class FeatureExtractor {
public:
    static constexpr int kDim = 2048;
    static constexpr const char* kId = "zaug-rfe-v1";

    FeatureExtractor() {
        Rng rng(0xF1DFEA7u);
        auto init = [&](int co, int ci, int k) {
            const double s = std::sqrt(2.0 / (ci * k * k));
            Tensor w(co, ci, k, k);
            for (double* p = w.begin(); p != w.end(); ++p) *p = s * rng.normal();
            return w;
        };
        w_[0] = init(32, 1, 3);
        w_[1] = init(64, 32, 3);
        w_[2] = init(128, 64, 3);
        w_[3] = init(256, 128, 3);
        w_[4] = init(kDim, 256, 1);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& w : w_) h = fnv1a64(w.data(), w.numel() * sizeof(double), h);
        hash_ = hex64(h);
    }

    const std::string& weight_hash() const { return hash_; }

    // frames in the 8-bit intensity domain; any spatial size >= 32
    Eigen::MatrixXd embed(const std::vector<Tensor>& frames) const {
        ZAUG_CHECK(!frames.empty(), "feature extractor: empty set");
        Eigen::MatrixXd out(static_cast<Eigen::Index>(frames.size()), kDim);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            Tensor x = tensor_ops::scale(tensor_ops::resize_bilinear(frames[i], 64, 64), 1.0 / kMaxIntensity);
            for (int l = 0; l < 4; ++l)
                x = tensor_ops::leaky_relu(tensor_ops::conv2d(x, w_[static_cast<std::size_t>(l)], nullptr, 2, 1), 0.2);
            x = tensor_ops::conv2d(x, w_[4], nullptr, 1, 0);  // [1,2048,4,4]
            Tensor pooled = tensor_ops::reduce_spatial(x);
            // fixed 1/128 feature gain keeps the Gaussian-fit traces near
            // unit scale, so identical sets cancel to ~1e-9
            for (int c = 0; c < kDim; ++c)
                out(static_cast<Eigen::Index>(i), c) = pooled.at(0, c, 0, 0) / (4.0 * 4.0 * 128.0);
        }
        return out;
    }

private:
    std::array<Tensor, 5> w_;
    std::string hash_;
};

inline const FeatureExtractor& shared_extractor() {
    static FeatureExtractor ex;
    return ex;
}

inline FidResult fid(const std::vector<Tensor>& set_a, const std::vector<Tensor>& set_b) {
    const auto& ex = shared_extractor();
    FidResult r = fid_from_features(ex.embed(set_a), ex.embed(set_b));
    r.extractor_id = FeatureExtractor::kId;
    r.extractor_hash = ex.weight_hash();
    return r;
}

// ---------------------------------------------------------------------------
// cubic z-interpolation baseline
// ---------------------------------------------------------------------------

// Catmull-Rom along z per (y,x) column; interpolating, so original slices are
// preserved exactly at their mapped indices. Stacks shallower than 4 slices
// fall back to linear interpolation with a warning.
inline VolumeStack bicubic_z(const VolumeStack& s, int factor, std::ostream& warn = std::cerr) {
    ZAUG_CHECK(factor == 2 || factor == 4 || factor == 8, "bicubic_z: factor must be 2, 4 or 8");
    ZAUG_CHECK(s.depth >= 2, "bicubic_z: need at least 2 slices");
    const bool linear = s.depth < 4;
    if (linear)
        warn << "warning: stack depth " << s.depth << " < 4; bicubic_z falling back to linear interpolation\n";

    VolumeStack out = VolumeStack::blank(s.width, s.height, factor * (s.depth - 1) + 1, s.bit_depth);
    out.spacing = s.spacing;
    if (out.spacing) (*out.spacing)[2] /= factor;
    out.norm = s.norm;

    // end segments use linearly extrapolated ghost slices, which keeps the
    // interpolant exact on linear ramps
    auto sample = [&](int z, int y, int x) {
        if (z < 0) return 2.0 * s.at(0, y, x) - s.at(1, y, x);
        if (z >= s.depth) return 2.0 * s.at(s.depth - 1, y, x) - s.at(s.depth - 2, y, x);
        return s.at(z, y, x);
    };
    for (int z = 0; z < s.depth; ++z)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) out.at(factor * z, y, x) = s.at(z, y, x);

    for (int g = 0; g + 1 < s.depth; ++g) {
        for (int j = 1; j < factor; ++j) {
            const double u = static_cast<double>(j) / factor;
            for (int y = 0; y < s.height; ++y)
                for (int x = 0; x < s.width; ++x) {
                    double v;
                    if (linear) {
                        v = (1 - u) * s.at(g, y, x) + u * s.at(g + 1, y, x);
                    } else {
                        const double p0 = sample(g - 1, y, x);
                        const double p1 = s.at(g, y, x);
                        const double p2 = s.at(g + 1, y, x);
                        const double p3 = sample(g + 2, y, x);
                        v = 0.5 * ((2 * p1) + (-p0 + p2) * u + (2 * p0 - 5 * p1 + 4 * p2 - p3) * u * u +
                                   (-p0 + 3 * p1 - 3 * p2 + p3) * u * u * u);
                    }
                    out.at(factor * g + j, y, x) = v;
                }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// inter-stack reports
// ---------------------------------------------------------------------------

struct GapRow {
    int gap = 0;
    double rmse = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    double rmse = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    std::optional<FidResult> fid;
    std::vector<GapRow> gaps;
    std::string dataset_id;
    std::string model_id;

    json to_json() const {
        json j;
        j["rmse"] = rmse;
        j["psnr_db"] = std::isinf(psnr_db) ? json("inf") : json(psnr_db);
        j["ssim"] = ssim;
        if (fid) {
            j["fid"] = fid->value;
            j["fid_extractor"] = fid->extractor_id;
            j["fid_extractor_hash"] = fid->extractor_hash;
            j["fid_jittered"] = fid->jittered;
        }
        j["dataset"] = dataset_id;
        j["model"] = model_id;
        j["gaps"] = json::array();
        for (const auto& g : gaps)
            j["gaps"].push_back({{"gap", g.gap},
                                 {"rmse", g.rmse},
                                 {"psnr_db", std::isinf(g.psnr_db) ? json("inf") : json(g.psnr_db)},
                                 {"ssim", g.ssim}});
        return j;
    }
};

// Metrics over generated slice positions only; original slices sit at
// multiples of (stride + 1) and are excluded. Per-slice values are averaged,
// and the report PSNR is re-derived from the aggregated RMSE so the
// PSNR/RMSE identity holds row by row.
inline MetricReport interstack_report(const VolumeStack& pred, const VolumeStack& gt, int stride) {
    ZAUG_CHECK(pred.depth == gt.depth, "interstack_report: depth mismatch ", pred.depth, " vs ", gt.depth);
    ZAUG_CHECK(pred.width == gt.width && pred.height == gt.height, "interstack_report: slice size mismatch");
    ZAUG_CHECK(stride >= 1, "interstack_report: stride must be >= 1");
    const int period = stride + 1;
    ZAUG_CHECK((pred.depth - 1) % period == 0,
               "interstack_report: depth ", pred.depth, " incompatible with stride ", stride);

    MetricReport rep;
    const int n_gaps = (pred.depth - 1) / period;
    double rmse_sum = 0, ssim_sum = 0;
    int scored = 0;
    for (int g = 0; g < n_gaps; ++g) {
        GapRow row;
        row.gap = g;
        double gr = 0, gs = 0;
        for (int j = 1; j <= stride; ++j) {
            const int z = g * period + j;
            Tensor a = pred.slice_tensor(z);
            Tensor b = gt.slice_tensor(z);
            gr += rmse(a, b);
            gs += ssim(a, b);
            ++scored;
        }
        row.rmse = gr / stride;
        row.ssim = gs / stride;
        row.psnr_db = psnr_from_rmse(row.rmse);
        rmse_sum += gr;
        ssim_sum += gs;
        rep.gaps.push_back(row);
    }
    rep.rmse = rmse_sum / scored;
    rep.ssim = ssim_sum / scored;
    rep.psnr_db = psnr_from_rmse(rep.rmse);
    return rep;
}

// ---------------------------------------------------------------------------
// training log + rendered tables
// ---------------------------------------------------------------------------

inline std::vector<objectives::LossReport> load_training_log(const std::string& path) {
    std::ifstream in(path);
    ZAUG_CHECK(in.good(), "cannot open training log: ", path);
    std::vector<objectives::LossReport> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (!j.is_discarded()) out.push_back(objectives::LossReport::from_json(j));
    }
    return out;
}

struct BenchRow {
    std::string method;
    double params_m = 0.0;          // millions; 0 = not applicable
    std::optional<double> train_s;  // training wall clock, when known
    double runtime_s = 0.0;         // prediction wall clock
    double rmse = 0.0, psnr = 0.0, ssim = 0.0;
    std::optional<double> fid;
};

inline std::string render_bench_table(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "Method" << std::right << std::setw(12) << "Params(M)"
       << std::setw(12) << "Train(s)" << std::setw(12) << "Predict(s)" << std::setw(10) << "RMSE"
       << std::setw(10) << "PSNR" << std::setw(10) << "SSIM" << std::setw(10) << "FID" << "\n";
    os << std::string(90, '-') << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(14) << r.method << std::right << std::setw(12);
        if (r.params_m > 0)
            os << std::fixed << std::setprecision(2) << r.params_m;
        else
            os << "-";
        os << std::setw(12);
        if (r.train_s)
            os << std::fixed << std::setprecision(1) << *r.train_s;
        else
            os << "-";
        os << std::setw(12) << std::fixed << std::setprecision(2) << r.runtime_s << std::setw(10)
           << std::setprecision(2) << r.rmse << std::setw(10);
        if (std::isinf(r.psnr))
            os << "inf";
        else
            os << std::setprecision(2) << r.psnr;
        os << std::setw(10) << std::setprecision(3) << r.ssim << std::setw(10);
        if (r.fid)
            os << std::setprecision(2) << *r.fid;
        else
            os << "-";
        os << "\n";
    }
    return os.str();
}

}  // namespace zaug::evalkit

#endif
