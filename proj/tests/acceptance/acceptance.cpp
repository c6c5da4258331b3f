// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails. Reference values are computed here by
// direct formulas and loops rather than by the library under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowct/cli.hpp"
#include "flowct/flow.hpp"
#include "flowct/metrics.hpp"
#include "flowct/mha.hpp"
#include "flowct/ode.hpp"
#include "flowct/preprocess.hpp"
#include "flowct/tensor.hpp"
#include "flowct/trainer.hpp"
#include "flowct/velocity_net.hpp"

namespace fs = std::filesystem;
using namespace flowct;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_s;
    std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& gen, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = d(gen);
    return Tensor<double>(shape, std::move(v));
}

Tensor<double> normal_tensor(const Shape& shape, std::mt19937_64& gen) {
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = d(gen);
    return Tensor<double>(shape, std::move(v));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

Outcome path_velocity_identity() {
    const flow::FlowPathConfig cfg;
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> ut(0.0, 1.0);
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        const auto x1 = random_tensor({1, 1, 4, 4, 4}, gen, -3.0, 3.0);
        const auto eps = normal_tensor({1, 1, 4, 4, 4}, gen);
        const double t = ut(gen);
        const auto s = flow::sample_path(x1, eps, t, cfg);
        const auto u = flow::target_velocity(s.x_t, t, x1, cfg);
        std::vector<double> want(x1.values().size());
        for (std::size_t i = 0; i < want.size(); ++i) want[i] = x1.values()[i] - (1.0 - cfg.sigma_min) * eps.values()[i];
        worst = std::max(worst, max_abs_diff(u.values(), want));
    }
    return {worst <= 1e-6, "max-norm error " + fmt(worst, 3) + " over 100 tuples (limit 1e-6)"};
}

Outcome exact_field_transport() {
    const double sigma = 1e-5;
    std::mt19937_64 gen(202);
    const auto x1 = random_tensor({1, 1, 8, 8, 8}, gen, -1.0, 1.0);
    const auto eps = normal_tensor({1, 1, 8, 8, 8}, gen);
    const auto xv = x1.values();
    const ode::VelocityFn<double> field = [&](const Tensor<double>& x, double t) {
        const auto cur = x.values();
        std::vector<double> out(cur.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (xv[i] - (1.0 - sigma) * cur[i]) / (1.0 - (1.0 - sigma) * t);
        return Tensor<double>(x.shape(), std::move(out));
    };
    const auto end = ode::integrate(field, eps, {ode::Method::rk4, 32});
    std::vector<double> want(xv.size());
    for (std::size_t i = 0; i < want.size(); ++i) want[i] = xv[i] + sigma * eps.values()[i];
    const double err = max_abs_diff(end.values(), want);
    return {err <= 2e-4, "RK4/32 max-norm error " + fmt(err, 3) + " (limit 2e-4)"};
}

Outcome solver_orders() {
    const ode::VelocityFn<double> f = [](const Tensor<double>& x, double) { return x; };
    auto error_for = [&](ode::Method m, int steps) {
        const auto end = ode::integrate(f, Tensor<double>({1}, 1.0), {m, steps});
        return std::abs(end.item() - std::exp(1.0));
    };
    struct Band {
        ode::Method m;
        double lo, hi;
    };
    bool ok = true;
    std::string detail;
    for (const auto& b : {Band{ode::Method::euler, 0.9, 1.1}, Band{ode::Method::midpoint, 1.9, 2.1},
                          Band{ode::Method::rk4, 3.8, 4.2}}) {
        const double p = std::log2(error_for(b.m, 16) / error_for(b.m, 32));
        ok = ok && p >= b.lo && p <= b.hi;
        detail += std::string(ode::method_name(b.m)) + " " + fmt(p) + " in [" + fmt(b.lo) + "," + fmt(b.hi) + "]  ";
    }
    return {ok, detail};
}

Outcome autodiff_soundness() {
    net::VelocityNetConfig c;
    c.base_channels = 4;
    c.cond_channels = 4;
    c.channel_multipliers = {1, 2};
    c.norm_groups = 2;
    c.input_side = 8;
    c.reference_side = 8;
    c.attention_at = {4};
    c.zero_init_output = false;
    net::VelocityNet<double> n(c, 303);
    std::mt19937_64 gen(304);
    const auto x = random_tensor({1, 1, 8, 8, 8}, gen, -1.0, 1.0);
    const auto cond = random_tensor({1, 1, 8, 8, 8}, gen, -1.0, 1.0);
    const auto u = random_tensor({1, 1, 8, 8, 8}, gen, 3.0, 4.0);
    const double t[1] = {0.6};
    auto loss = [&] { return flow::fm_loss(n.forward(x, t, n.encode_condition(cond), {true, 5, 7}), u, {}).total; };

    n.set_requires_grad(true);
    n.zero_grad();
    backward(loss());

    std::vector<std::pair<std::size_t, std::int64_t>> all;
    for (std::size_t p = 0; p < n.parameters().size(); ++p)
        for (std::int64_t i = 0; i < n.parameters()[p].tensor.numel(); ++i) all.emplace_back(p, i);
    std::shuffle(all.begin(), all.end(), gen);
    all.resize(all.size() / 100);

    // ReLU kinks in the condition encoder sit close to some weights, so the
    // step is small and tiny gradients are compared on an absolute floor.
    const double h = 1e-5, floor = 1e-5;
    double worst = 0.0;
    for (const auto& [p, i] : all) {
        auto& tensor = n.parameters()[p].tensor;
        const double analytic = tensor.grad()[i];
        auto vals = tensor.mutable_values();
        const double orig = vals[i];
        NoGradGuard g;
        vals[i] = orig + h;
        const double lp = loss().item();
        vals[i] = orig - h;
        const double lm = loss().item();
        vals[i] = orig;
        const double numeric = (lp - lm) / (2 * h);
        worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor}));
    }
    return {worst <= 1e-4, fmt(static_cast<double>(all.size()), 6) + " of " + fmt(static_cast<double>(n.parameter_count()), 8) +
                               " parameters, worst relative error " + fmt(worst, 3) + " (limit 1e-4)"};
}

Outcome normalization_round_trips() {
    std::mt19937_64 gen(505);
    bool ok = true;
    std::string detail;

    Volume hu({9, 7, 5}, {0.7, 0.9, 2.5}, {-10, 4, 33}, IntensityKind::hu);
    std::uniform_int_distribution<int> d(-3000, 6000);
    for (auto& x : hu.data) x = d(gen);
    hu.data[0] = -1024, hu.data[1] = 3071;
    Volume clipped = hu;
    for (auto& x : clipped.data) x = std::clamp(x, -1024.0, 3071.0);
    const auto back = prep::postprocess(prep::normalize_ct(hu), hu);
    const bool exact = back.data == clipped.data && back.dims == hu.dims && back.spacing == hu.spacing &&
                       back.origin == hu.origin;
    ok = ok && exact;
    detail += std::string("ct round trip ") + (exact ? "exact" : "NOT exact");

    Volume mr({10, 10, 10}, {1, 1, 1}, {0, 0, 0}, IntensityKind::raw);
    std::normal_distribution<double> nd(300.0, 40.0);
    for (auto& x : mr.data) x = nd(gen);
    for (int i = 0; i < 5; ++i) mr.data[static_cast<std::size_t>(i * 97)] = 5000.0;
    const auto z = prep::normalize_mr(mr);
    const double zmax = std::ranges::max(z.volume.data, {}, [](double v) { return std::abs(v); });
    const bool bounded = std::abs(zmax) <= 3.0 && !z.degenerate;
    ok = ok && bounded;
    detail += ", mr max |z| " + fmt(std::abs(zmax)) + " (clip 3)";

    Volume flat({6, 6, 6}, {1, 1, 1}, {0, 0, 0}, IntensityKind::raw, 812.5);
    const auto zf = prep::normalize_mr(flat);
    const bool guarded = zf.degenerate && std::ranges::all_of(zf.volume.data, [](double v) { return v == 0.0; });
    ok = ok && guarded;
    detail += std::string(", constant input ") + (guarded ? "flagged degenerate with zeros" : "NOT guarded");
    return {ok, detail};
}

double naive_ssim(const Volume& a, const Volume& b) {
    const int win = 11, half = 5;
    const double sigma = 1.5, range = 4095.0;
    std::vector<double> g(win);
    double s = 0.0;
    for (int i = 0; i < win; ++i) s += g[i] = std::exp(-double((i - half) * (i - half)) / (2 * sigma * sigma));
    for (auto& x : g) x /= s;
    const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double total = 0.0;
    int count = 0;
    for (std::int64_t k = 0; k + win <= a.dims[2]; ++k)
        for (std::int64_t j = 0; j + win <= a.dims[1]; ++j)
            for (std::int64_t i = 0; i + win <= a.dims[0]; ++i) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dk = 0; dk < win; ++dk)
                    for (int dj = 0; dj < win; ++dj)
                        for (int di = 0; di < win; ++di) {
                            const double w = g[di] * g[dj] * g[dk];
                            const double x = a.at(i + di, j + dj, k + dk) + 1024.0;
                            const double y = b.at(i + di, j + dj, k + dk) + 1024.0;
                            ma += w * x, mb += w * y;
                            saa += w * x * x, sbb += w * y * y, sab += w * x * y;
                        }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

Outcome metric_oracles() {
    std::mt19937_64 gen(606);
    const Index3 dims{16, 16, 16};
    std::uniform_real_distribution<double> hu(-1024.0, 3071.0);
    std::bernoulli_distribution on(0.6);
    double worst_mae = 0.0, worst_psnr = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        Volume a(dims, {1, 1, 1}, {0, 0, 0}, IntensityKind::hu), b = a, m(dims, {1, 1, 1}, {0, 0, 0}, IntensityKind::raw);
        for (auto& x : a.data) x = hu(gen);
        for (auto& x : b.data) x = hu(gen);
        for (auto& x : m.data) x = on(gen) ? 1.0 : 0.0;
        double abs_sum = 0.0, sq_sum = 0.0;
        int n = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            if (m.data[i] != 1.0) continue;
            abs_sum += std::abs(a.data[i] - b.data[i]);
            sq_sum += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
            ++n;
        }
        const double want_psnr = 10.0 * std::log10(4095.0 * 4095.0 / (sq_sum / n));
        worst_mae = std::max(worst_mae, std::abs(metrics::mae(a, b, m) - abs_sum / n));
        worst_psnr = std::max(worst_psnr, std::abs(metrics::psnr(a, b, m) - want_psnr));
    }

    // Smooth structure plus noise so the SSIM value is far from both 0 and 1.
    Volume a(dims, {1, 1, 1}, {0, 0, 0}, IntensityKind::hu);
    std::normal_distribution<double> noise(0.0, 60.0);
    for (std::int64_t k = 0; k < 16; ++k)
        for (std::int64_t j = 0; j < 16; ++j)
            for (std::int64_t i = 0; i < 16; ++i)
                a.at(i, j, k) = 500.0 * std::sin(0.4 * i) * std::cos(0.3 * j + 0.2 * k) + 10.0 * k;
    Volume b = a;
    for (auto& x : b.data) x = 0.85 * x + 20.0 + noise(gen);
    const Volume full(dims, {1, 1, 1}, {0, 0, 0}, IntensityKind::raw, 1.0);
    metrics::MsSsimOptions single;
    single.scales = 1;
    const double ssim_err = std::abs(metrics::ms_ssim(a, b, full, single).value - naive_ssim(a, b));

    Volume c = a;
    for (auto& x : c.data) x += 40.95;
    const double p40 = metrics::psnr(a, c, full);

    const bool ok = worst_mae <= 1e-6 && worst_psnr <= 1e-6 && ssim_err <= 1e-6 && std::abs(p40 - 40.0) <= 1e-9;
    return {ok, "mae err " + fmt(worst_mae, 3) + ", psnr err " + fmt(worst_psnr, 3) + ", ssim err " + fmt(ssim_err, 3) +
                    ", closed-form psnr " + fmt(p40, 15) + " dB"};
}

// ---------------------------------------------------------------------------

struct DeskOptions {
    fs::path config;
    fs::path workdir;
    int eval_cases = 20;
    int solver_cases = 5;
};

Volume source_as_hu(const Volume& source, const Volume& mask) {
    Volume out = source;
    out.kind = IntensityKind::hu;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = mask.data[i] == 1.0 ? std::clamp(out.data[i], -1024.0, 3071.0) : -1024.0;
    return out;
}

Outcome desk_experiment(const DeskOptions& o) {
    auto cfg = cli::load_run_config(o.config);
    cfg.paths.data_dir = o.workdir / "data";
    cfg.paths.output_dir = o.workdir / "run";
    cfg.paths.checkpoint.clear();
    cfg.paths.manifest.clear();
    fs::remove_all(o.workdir);

    auto progress = [](std::string_view s) { std::cerr << "  [desk] " << s << '\n'; };
    const auto manifest = cli::cmd_gen_data(cfg, progress);
    const auto trained = cli::cmd_train(cfg, std::nullopt, [&](std::string_view s) {
        if (s.find("step") == std::string_view::npos || s.find("00/") != std::string_view::npos) progress(s);
    });

    const double first = trained.steps.front().loss_total;
    const std::size_t tail = std::min<std::size_t>(100, trained.steps.size());
    double end = 0.0;
    for (std::size_t i = trained.steps.size() - tail; i < trained.steps.size(); ++i) end += trained.steps[i].loss_total;
    end /= static_cast<double>(tail);

    const auto model = train::load_model(cfg.checkpoint_path());
    const int n_eval = std::min<int>(o.eval_cases, static_cast<int>(manifest.val.size()));
    std::vector<double> model_mae, model_ssim, base_mae, solver_gap, solver_model;
    for (int i = 0; i < n_eval; ++i) {
        const auto& c = manifest.val[static_cast<std::size_t>(i)];
        const auto source = io::read_mha(c.source, train::source_kind(cfg.modality()));
        const auto target = io::read_mha(c.target, IntensityKind::hu);
        const auto mask = io::read_mha(c.mask);
        const auto sct = train::infer(source, model, cfg.integrator, cfg.infer_seed);
        const auto m = metrics::evaluate_case(c.case_id, sct, target, mask);
        model_mae.push_back(m.mae);
        model_ssim.push_back(m.ms_ssim);
        base_mae.push_back(metrics::mae(source_as_hu(source, mask), target, mask));
        if (i < o.solver_cases) {
            auto fine = cfg.integrator;
            fine.steps *= 2;
            const auto sct_fine = train::infer(source, model, fine, cfg.infer_seed);
            solver_gap.push_back(metrics::mae(sct, sct_fine, mask));
            solver_model.push_back(m.mae);
        }
        progress(c.case_id + "  mae " + fmt(m.mae) + "  ms-ssim " + fmt(m.ms_ssim));
    }
    const double mae = metrics::aggregate(model_mae).mean;
    const double ssim = metrics::aggregate(model_ssim).mean;
    const double base = metrics::aggregate(base_mae).mean;
    const double gap = metrics::aggregate(solver_gap).mean;
    const double gap_ref = metrics::aggregate(solver_model).mean;

    const bool ok = mae < 0.5 * base && ssim > 0.7 && end < 0.25 * first && gap < gap_ref;
    return {ok, "MAE " + fmt(mae) + " HU vs baseline " + fmt(base) + " HU (need < 50%), MS-SSIM " + fmt(ssim) +
                    " (need > 0.7), loss " + fmt(first) + " -> " + fmt(end) + " (need < 25%), 32 vs " +
                    std::to_string(2 * cfg.integrator.steps) + " steps MAE " + fmt(gap) + " < " + fmt(gap_ref) +
                    " HU, " + std::to_string(n_eval) + " held-out cases"};
}

cli::RunConfig determinism_config(const fs::path& root) {
    cli::RunConfig c;
    c.data.n_cases = 6;
    c.data.shape = {12, 12, 12};
    c.data.seed = 808;
    c.net.base_channels = 4;
    c.net.cond_channels = 4;
    c.net.channel_multipliers = {1, 2};
    c.net.norm_groups = 2;
    c.net.input_side = 8;
    c.net.reference_side = 8;
    c.net.attention_at = {4};
    c.train.total_steps = 4;
    c.train.checkpoint_every = 2;
    c.train.validation_every = 2;
    c.train.seed = 809;
    c.integrator.steps = 8;
    c.infer_seed = 810;
    c.paths.data_dir = root / "data";
    c.paths.output_dir = root / "run";
    return c;
}

Outcome determinism(const fs::path& workdir) {
    fs::remove_all(workdir);
    std::vector<std::string> ckpts, periodic, scts;
    for (const char* rep : {"a", "b"}) {
        auto cfg = determinism_config(workdir / rep);
        const auto m = cli::cmd_gen_data(cfg);
        const auto r = cli::cmd_train(cfg);
        ckpts.push_back(slurp(r.final_checkpoint));
        periodic.push_back(slurp(cfg.paths.output_dir / "step_2.ckpt"));
        const auto out = cli::cmd_infer(cfg, {cfg.paths.data_dir}, cfg.paths.output_dir / "sct");
        std::string all;
        for (const auto& p : out) all += slurp(p);
        scts.push_back(all);
    }
    const bool same_ckpt = !ckpts[0].empty() && ckpts[0] == ckpts[1] && periodic[0] == periodic[1];
    const bool same_sct = !scts[0].empty() && scts[0] == scts[1];
    return {same_ckpt && same_sct, std::string("checkpoints ") + (same_ckpt ? "identical" : "DIFFER") +
                                       " (" + std::to_string(ckpts[0].size()) + " bytes), sCT volumes " +
                                       (same_sct ? "identical" : "DIFFER")};
}

Outcome mha_round_trip(const fs::path& workdir) {
    fs::create_directories(workdir);
    std::mt19937_64 gen(909);
    bool ok = true;
    std::string detail;
    for (auto type : {ElementType::met_short, ElementType::met_float}) {
        Volume v({7, 5, 3}, {0.625, 1.25, 3.0}, {-120.5, 88.25, -7.0}, IntensityKind::raw);
        v.element_type = type;
        if (type == ElementType::met_short) {
            std::uniform_int_distribution<int> d(-32768, 32767);
            for (auto& x : v.data) x = d(gen);
            v.data[0] = -32768, v.data[1] = 32767;
        } else {
            std::normal_distribution<float> d(0.0f, 500.0f);
            for (auto& x : v.data) x = static_cast<double>(d(gen));
            v.data[0] = static_cast<double>(std::numeric_limits<float>::denorm_min());
            v.data[1] = static_cast<double>(std::numeric_limits<float>::max());
        }
        const auto path = workdir / (std::string(element_type_name(type)) + ".mha");
        io::write_mha(v, path);
        const auto back = io::read_mha(path);
        const bool same = back.data == v.data && back.dims == v.dims && back.spacing == v.spacing &&
                          back.origin == v.origin && back.element_type == v.element_type;
        ok = ok && same;
        detail += std::string(element_type_name(type)) + (same ? " lossless  " : " CHANGED  ");
    }
    return {ok, detail};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria runner"};
    fs::path workdir = fs::temp_directory_path() / "flowct_acceptance";
    DeskOptions desk;
    desk.config = fs::path(FLOWCT_SOURCE_DIR) / "configs" / "desk_mr.json";
    std::vector<int> only;
    app.add_option("--workdir", workdir, "Scratch directory for generated data and runs");
    app.add_option("--desk-config", desk.config, "Run config for the end-to-end experiment")->check(CLI::ExistingFile);
    app.add_option("--only", only, "Run only these criterion numbers");
    CLI11_PARSE(app, argc, argv);
    desk.workdir = workdir / "desk";

    const std::vector<Criterion> criteria{
        {1, "path/velocity identity", 1.0, path_velocity_identity},
        {2, "exact-field transport", 1.0, exact_field_transport},
        {3, "solver order", 1.0, solver_orders},
        {4, "autodiff soundness", 120.0, autodiff_soundness},
        {5, "normalization round trips", 1.0, normalization_round_trips},
        {6, "metric oracles", 10.0, metric_oracles},
        {7, "end-to-end desk experiment", 1800.0, [&] { return desk_experiment(desk); }},
        {8, "determinism", 600.0, [&] { return determinism(workdir / "determinism"); }},
        {9, "MetaImage round trip", 1.0, [&] { return mha_round_trip(workdir / "mha"); }},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::ranges::find(only, c.id) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome r;
        try {
            r = c.run();
        } catch (const std::exception& e) {
            r = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_s;
        const bool pass = r.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << r.detail << "  ["
                  << fmt(secs, 3) << " s, budget " << fmt(c.budget_s) << " s" << (in_time ? "" : ", OVER BUDGET")
                  << "]" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
