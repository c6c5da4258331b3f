#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowct/volume.hpp"

namespace flowct::metrics {

// HU width of [-1024, 3071].
inline constexpr double kDefaultDataRange = 4095.0;

// Mean |a - b| over voxels where mask > 0.5. Throws on an empty mask or
// mismatched grids.
double mae(const Volume& a, const Volume& b, const Volume& mask);

// 10 log10(range^2 / masked MSE), capped at 100 dB when the MSE falls below
// range^2 * 1e-10.
double psnr(const Volume& a, const Volume& b, const Volume& mask, double data_range = kDefaultDataRange);

struct MsSsimOptions {
    int scales = 5;
    std::vector<double> weights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double data_range = kDefaultDataRange;
    double k1 = 0.01;
    double k2 = 0.03;
    int window = 11;
    double sigma = 1.5;
    double fill_hu = -1024.0;  // out-of-mask voxels inside the crop
    double offset_hu = 1024.0; // shift making HU inputs nonnegative
};

struct MsSsimResult {
    double value = 0.0;
    int scales_used = 0;
    bool reduced = false;  // fewer scales than requested fit in the crop
};

// Multi-scale SSIM on the mask's bounding box (grown to the window size where
// the volume allows) with a 3D Gaussian window. Contrast-structure terms are
// taken at every scale, luminance only at the coarsest; negative terms are
// clamped to zero and weights renormalized over the scales used.
MsSsimResult ms_ssim(const Volume& a, const Volume& b, const Volume& mask, const MsSsimOptions& opts = {});

std::int64_t mask_count(const Volume& mask);

struct CaseMetrics {
    std::string case_id;
    double mae = 0.0;
    double psnr = 0.0;
    double ms_ssim = 0.0;
    std::int64_t n_voxels = 0;
    int ms_ssim_scales = 0;  // fewer than requested when the crop is small
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

CaseMetrics evaluate_case(const std::string& case_id, const Volume& pred, const Volume& target, const Volume& mask);

struct MetricReport {
    std::vector<CaseMetrics> cases;
    Aggregate mae, psnr, ms_ssim;

    static MetricReport from_cases(std::vector<CaseMetrics> cases);
    // Header: case_id,mae,psnr,ms_ssim,n_voxels
    std::string to_csv() const;
    std::string to_table() const;
};

Aggregate aggregate(const std::vector<double>& values);

} // namespace flowct::metrics
