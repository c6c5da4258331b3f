#include "flowct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "flowct/error.hpp"

namespace flowct::metrics {

namespace {

std::string dims_str(const Index3& d) {
    return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

void check_grids(const Volume& a, const Volume& b, const Volume& mask) {
    if (a.dims != b.dims || a.dims != mask.dims) {
        throw ShapeError("metric inputs have mismatched grids: " + dims_str(a.dims) + " vs " + dims_str(b.dims) +
                         " vs mask " + dims_str(mask.dims));
    }
}

bool in_mask(double m) { return m > 0.5; }

struct Grid {
    Index3 dims{0, 0, 0};
    std::vector<double> v;

    double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return v[static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k))];
    }
};

// Valid-mode separable filtering along one axis.
Grid filter_axis(const Grid& g, const std::vector<double>& w, int axis) {
    const auto n = static_cast<std::int64_t>(w.size());
    Grid out;
    out.dims = g.dims;
    out.dims[axis] = g.dims[axis] - n + 1;
    out.v.assign(static_cast<std::size_t>(out.dims[0] * out.dims[1] * out.dims[2]), 0.0);
    const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? g.dims[0] : g.dims[0] * g.dims[1]);
    std::size_t o = 0;
    for (std::int64_t k = 0; k < out.dims[2]; ++k) {
        for (std::int64_t j = 0; j < out.dims[1]; ++j) {
            for (std::int64_t i = 0; i < out.dims[0]; ++i, ++o) {
                const double* src = g.v.data() + (i + g.dims[0] * (j + g.dims[1] * k));
                double acc = 0.0;
                for (std::int64_t t = 0; t < n; ++t) acc += w[t] * src[t * stride];
                out.v[o] = acc;
            }
        }
    }
    return out;
}

Grid gaussian_filter(const Grid& g, const std::vector<double>& w) {
    return filter_axis(filter_axis(filter_axis(g, w, 0), w, 1), w, 2);
}

Grid product(const Grid& a, const Grid& b) {
    Grid out{a.dims, std::vector<double>(a.v.size())};
    for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = a.v[i] * b.v[i];
    return out;
}

Grid downsample2(const Grid& g) {
    Grid out;
    for (int ax = 0; ax < 3; ++ax) out.dims[ax] = g.dims[ax] / 2;
    out.v.resize(static_cast<std::size_t>(out.dims[0] * out.dims[1] * out.dims[2]));
    std::size_t o = 0;
    for (std::int64_t k = 0; k < out.dims[2]; ++k) {
        for (std::int64_t j = 0; j < out.dims[1]; ++j) {
            for (std::int64_t i = 0; i < out.dims[0]; ++i, ++o) {
                double acc = 0.0;
                for (int dk = 0; dk < 2; ++dk) {
                    for (int dj = 0; dj < 2; ++dj) {
                        for (int di = 0; di < 2; ++di) acc += g.at(2 * i + di, 2 * j + dj, 2 * k + dk);
                    }
                }
                out.v[o] = acc / 8.0;
            }
        }
    }
    return out;
}

struct ScaleStats {
    double cs = 0.0;
    double ssim = 0.0;
};

ScaleStats ssim_stats(const Grid& a, const Grid& b, const std::vector<double>& w, double c1, double c2) {
    const Grid mu_a = gaussian_filter(a, w);
    const Grid mu_b = gaussian_filter(b, w);
    const Grid e_aa = gaussian_filter(product(a, a), w);
    const Grid e_bb = gaussian_filter(product(b, b), w);
    const Grid e_ab = gaussian_filter(product(a, b), w);
    double cs_sum = 0.0;
    double ssim_sum = 0.0;
    for (std::size_t i = 0; i < mu_a.v.size(); ++i) {
        const double ma = mu_a.v[i];
        const double mb = mu_b.v[i];
        const double var_a = e_aa.v[i] - ma * ma;
        const double var_b = e_bb.v[i] - mb * mb;
        const double cov = e_ab.v[i] - ma * mb;
        const double cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        const double lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    const double n = static_cast<double>(mu_a.v.size());
    return {cs_sum / n, ssim_sum / n};
}

} // namespace

std::int64_t mask_count(const Volume& mask) {
    return std::count_if(mask.data.begin(), mask.data.end(), in_mask);
}

double mae(const Volume& a, const Volume& b, const Volume& mask) {
    check_grids(a, b, mask);
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (!in_mask(mask.data[i])) continue;
        acc += std::abs(a.data[i] - b.data[i]);
        ++n;
    }
    if (n == 0) throw DomainError("mae: mask is empty");
    return acc / static_cast<double>(n);
}

double psnr(const Volume& a, const Volume& b, const Volume& mask, double data_range) {
    check_grids(a, b, mask);
    if (!(data_range > 0.0)) throw DomainError("psnr: data_range must be positive");
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (!in_mask(mask.data[i])) continue;
        const double d = a.data[i] - b.data[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw DomainError("psnr: mask is empty");
    const double mse = acc / static_cast<double>(n);
    const double peak = data_range * data_range;
    if (mse < peak * 1e-10) return 100.0;
    return 10.0 * std::log10(peak / mse);
}

MsSsimResult ms_ssim(const Volume& a, const Volume& b, const Volume& mask, const MsSsimOptions& opts) {
    check_grids(a, b, mask);
    if (opts.scales < 1 || static_cast<int>(opts.weights.size()) < opts.scales) {
        throw ConfigError("ms_ssim: need at least one scale and one weight per scale");
    }
    if (opts.window < 1 || opts.window % 2 == 0) throw ConfigError("ms_ssim: window must be odd");

    Index3 lo{a.dims[0], a.dims[1], a.dims[2]};
    Index3 hi{-1, -1, -1};
    for (std::int64_t k = 0; k < a.dims[2]; ++k) {
        for (std::int64_t j = 0; j < a.dims[1]; ++j) {
            for (std::int64_t i = 0; i < a.dims[0]; ++i) {
                if (!in_mask(mask.at(i, j, k))) continue;
                const Index3 p{i, j, k};
                for (int ax = 0; ax < 3; ++ax) {
                    lo[ax] = std::min(lo[ax], p[ax]);
                    hi[ax] = std::max(hi[ax], p[ax]);
                }
            }
        }
    }
    if (hi[0] < 0) throw DomainError("ms_ssim: mask is empty");

    // Largest scale count whose window fits in the (grown) crop.
    const std::int64_t min_dim = std::min({a.dims[0], a.dims[1], a.dims[2]});
    int scales = opts.scales;
    while (scales > 0 && (static_cast<std::int64_t>(opts.window) << (scales - 1)) > min_dim) --scales;
    if (scales == 0) {
        throw DomainError("ms_ssim: volume " + dims_str(a.dims) + " is smaller than the " +
                          std::to_string(opts.window) + "-voxel window");
    }
    const std::int64_t need = static_cast<std::int64_t>(opts.window) << (scales - 1);
    Index3 start{}, extent{};
    for (int ax = 0; ax < 3; ++ax) {
        std::int64_t s = lo[ax];
        std::int64_t len = hi[ax] - lo[ax] + 1;
        if (len < need) {
            s -= (need - len) / 2;
            len = need;
            s = std::clamp<std::int64_t>(s, 0, a.dims[ax] - len);
        }
        start[ax] = s;
        extent[ax] = len;
    }

    Grid ga{extent, {}};
    Grid gb{extent, {}};
    ga.v.reserve(static_cast<std::size_t>(extent[0] * extent[1] * extent[2]));
    gb.v.reserve(ga.v.capacity());
    for (std::int64_t k = 0; k < extent[2]; ++k) {
        for (std::int64_t j = 0; j < extent[1]; ++j) {
            for (std::int64_t i = 0; i < extent[0]; ++i) {
                const auto si = start[0] + i, sj = start[1] + j, sk = start[2] + k;
                const bool inside = in_mask(mask.at(si, sj, sk));
                ga.v.push_back((inside ? a.at(si, sj, sk) : opts.fill_hu) + opts.offset_hu);
                gb.v.push_back((inside ? b.at(si, sj, sk) : opts.fill_hu) + opts.offset_hu);
            }
        }
    }

    std::vector<double> w(static_cast<std::size_t>(opts.window));
    const double center = (opts.window - 1) / 2.0;
    double wsum = 0.0;
    for (int i = 0; i < opts.window; ++i) {
        w[i] = std::exp(-(i - center) * (i - center) / (2.0 * opts.sigma * opts.sigma));
        wsum += w[i];
    }
    for (auto& x : w) x /= wsum;

    const double c1 = (opts.k1 * opts.data_range) * (opts.k1 * opts.data_range);
    const double c2 = (opts.k2 * opts.data_range) * (opts.k2 * opts.data_range);
    double weight_total = 0.0;
    for (int s = 0; s < scales; ++s) weight_total += opts.weights[s];

    double value = 1.0;
    for (int s = 0; s < scales; ++s) {
        const auto stats = ssim_stats(ga, gb, w, c1, c2);
        const double term = (s + 1 == scales) ? stats.ssim : stats.cs;
        value *= std::pow(std::max(term, 0.0), opts.weights[s] / weight_total);
        if (s + 1 < scales) {
            ga = downsample2(ga);
            gb = downsample2(gb);
        }
    }
    return {value, scales, scales < opts.scales};
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate out;
    if (values.empty()) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(var / static_cast<double>(values.size()));
    return out;
}

CaseMetrics evaluate_case(const std::string& case_id, const Volume& pred, const Volume& target, const Volume& mask) {
    if (pred.dims != target.dims) {
        throw ShapeError("case " + case_id + ": prediction grid " + dims_str(pred.dims) +
                         " does not match target grid " + dims_str(target.dims));
    }
    CaseMetrics m;
    m.case_id = case_id;
    m.mae = mae(pred, target, mask);
    m.psnr = psnr(pred, target, mask);
    const auto ss = ms_ssim(pred, target, mask);
    m.ms_ssim = ss.value;
    m.ms_ssim_scales = ss.scales_used;
    m.n_voxels = mask_count(mask);
    return m;
}

MetricReport MetricReport::from_cases(std::vector<CaseMetrics> cases) {
    MetricReport r;
    r.cases = std::move(cases);
    std::vector<double> mae_v, psnr_v, ssim_v;
    for (const auto& c : r.cases) {
        mae_v.push_back(c.mae);
        psnr_v.push_back(c.psnr);
        ssim_v.push_back(c.ms_ssim);
    }
    r.mae = aggregate(mae_v);
    r.psnr = aggregate(psnr_v);
    r.ms_ssim = aggregate(ssim_v);
    return r;
}

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "case_id,mae,psnr,ms_ssim,n_voxels\n";
    for (const auto& c : cases) {
        os << c.case_id << ',' << c.mae << ',' << c.psnr << ',' << c.ms_ssim << ',' << c.n_voxels << '\n';
    }
    return os.str();
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(16) << "case" << std::right << std::setw(12) << "MAE" << std::setw(12) << "PSNR"
       << std::setw(12) << "MS-SSIM" << std::setw(10) << "voxels" << '\n';
    os << std::fixed;
    for (const auto& c : cases) {
        os << std::left << std::setw(16) << c.case_id << std::right << std::setprecision(2) << std::setw(12) << c.mae
           << std::setw(12) << c.psnr << std::setprecision(4) << std::setw(12) << c.ms_ssim << std::setw(10)
           << c.n_voxels << '\n';
    }
    os << std::setprecision(2) << "mean +- std (n=" << cases.size() << "): MAE " << mae.mean << " +- " << mae.std
       << ", PSNR " << psnr.mean << " +- " << psnr.std << std::setprecision(4) << ", MS-SSIM " << ms_ssim.mean
       << " +- " << ms_ssim.std << '\n';
    return os.str();
}

} // namespace flowct::metrics
