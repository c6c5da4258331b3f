#include "flowct/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "flowct/config_json.hpp"
#include "flowct/error.hpp"
#include "flowct/mha.hpp"
#include "flowct/phantom.hpp"
#include "flowct/rng.hpp"

namespace flowct::cli {

using nlohmann::json;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kExitData;
    if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitData;
    return kExitFailure;
}

io::Modality RunConfig::modality() const {
    if (task == "mr_to_ct") return io::Modality::mr_like;
    if (task == "cbct_to_ct") return io::Modality::cbct_like;
    throw ConfigError("task must be mr_to_ct or cbct_to_ct, got '" + task + "'");
}

train::TaskConfig RunConfig::task_config() const { return {modality(), normalization}; }

fs::path RunConfig::checkpoint_path() const {
    return paths.checkpoint.empty() ? paths.output_dir / "final.ckpt" : paths.checkpoint;
}

fs::path RunConfig::manifest_path() const {
    return paths.manifest.empty() ? paths.data_dir / "manifest.json" : paths.manifest;
}

void RunConfig::validate() const {
    (void)modality();
    net.validate();
    flow.validate();
    train.validate();
    integrator.validate();
    normalization.validate();
    if (data.n_cases < 2) throw ConfigError("data.n_cases must be at least 2");
    if (!(data.split_ratio > 0.0 && data.split_ratio < 1.0)) throw ConfigError("data.split_ratio must lie in (0, 1)");
    io::PhantomSpec probe;
    probe.shape = data.shape;
    probe.spacing = data.spacing;
    probe.n_ellipsoids = data.n_ellipsoids;
    probe.noise_hu = data.noise_hu;
    probe.cbct_cupping_hu = data.cbct_cupping_hu;
    probe.validate();
}

json to_json(const RunConfig& c) {
    return {{"task", c.task},
            {"region", c.region},
            {"data",
             {{"n_cases", c.data.n_cases},
              {"shape", c.data.shape},
              {"spacing", c.data.spacing},
              {"split_ratio", c.data.split_ratio},
              {"seed", c.data.seed},
              {"n_ellipsoids", c.data.n_ellipsoids},
              {"noise_hu", c.data.noise_hu},
              {"cbct_cupping_hu", c.data.cbct_cupping_hu}}},
            {"net", config::to_json(c.net)},
            {"flow", config::to_json(c.flow)},
            {"train", config::to_json(c.train)},
            {"integrator", config::to_json(c.integrator)},
            {"normalization", config::to_json(c.normalization)},
            {"infer", {{"seed", c.infer_seed}}},
            {"paths",
             {{"data_dir", c.paths.data_dir.generic_string()},
              {"output_dir", c.paths.output_dir.generic_string()},
              {"checkpoint", c.paths.checkpoint.generic_string()},
              {"manifest", c.paths.manifest.generic_string()}}}};
}

RunConfig run_from_json(const json& j) {
    config::require_known_keys(
        j, "root", {"task", "region", "data", "net", "flow", "train", "integrator", "normalization", "infer", "paths"});
    RunConfig c;
    config::read_key(j, "root", "task", c.task);
    config::read_key(j, "root", "region", c.region);
    if (auto it = j.find("data"); it != j.end()) {
        config::require_known_keys(*it, "data",
                                   {"n_cases", "shape", "spacing", "split_ratio", "seed", "n_ellipsoids", "noise_hu",
                                    "cbct_cupping_hu"});
        config::read_key(*it, "data", "n_cases", c.data.n_cases);
        config::read_key(*it, "data", "shape", c.data.shape);
        config::read_key(*it, "data", "spacing", c.data.spacing);
        config::read_key(*it, "data", "split_ratio", c.data.split_ratio);
        config::read_key(*it, "data", "seed", c.data.seed);
        config::read_key(*it, "data", "n_ellipsoids", c.data.n_ellipsoids);
        config::read_key(*it, "data", "noise_hu", c.data.noise_hu);
        config::read_key(*it, "data", "cbct_cupping_hu", c.data.cbct_cupping_hu);
    }
    if (auto it = j.find("net"); it != j.end()) c.net = config::net_from_json(*it);
    if (auto it = j.find("flow"); it != j.end()) c.flow = config::flow_from_json(*it);
    if (auto it = j.find("train"); it != j.end()) c.train = config::train_from_json(*it);
    if (auto it = j.find("integrator"); it != j.end()) c.integrator = config::integrator_from_json(*it);
    if (auto it = j.find("normalization"); it != j.end()) c.normalization = config::normalization_from_json(*it);
    if (auto it = j.find("infer"); it != j.end()) {
        config::require_known_keys(*it, "infer", {"seed"});
        config::read_key(*it, "infer", "seed", c.infer_seed);
    }
    if (auto it = j.find("paths"); it != j.end()) {
        config::require_known_keys(*it, "paths", {"data_dir", "output_dir", "checkpoint", "manifest"});
        std::string s;
        auto path_key = [&](const char* key, fs::path& out) {
            s = out.generic_string();
            config::read_key(*it, "paths", key, s);
            out = s;
        };
        path_key("data_dir", c.paths.data_dir);
        path_key("output_dir", c.paths.output_dir);
        path_key("checkpoint", c.paths.checkpoint);
        path_key("manifest", c.paths.manifest);
    }
    c.validate();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_from_json(j);
}

namespace {

std::string case_id_for(std::size_t i) {
    std::ostringstream os;
    os << "case_" << std::setw(4) << std::setfill('0') << i;
    return os.str();
}

void say(const Progress& p, std::string_view msg) {
    if (p) p(msg);
}

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Maps case id -> path for files named {id}{suffix} in dir.
std::map<std::string, fs::path> index_dir(const fs::path& dir, std::string_view suffix) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const auto name = e.path().filename().string();
        if (ends_with(name, suffix)) out[name.substr(0, name.size() - suffix.size())] = e.path();
    }
    return out;
}

} // namespace

io::DatasetManifest cmd_gen_data(const RunConfig& cfg, const Progress& progress) {
    cfg.validate();
    fs::create_directories(cfg.paths.data_dir);
    std::vector<io::CaseEntry> cases;
    for (int i = 0; i < cfg.data.n_cases; ++i) {
        io::PhantomSpec spec;
        spec.seed = rng::derive_key({cfg.data.seed, static_cast<std::uint64_t>(i)});
        spec.shape = cfg.data.shape;
        spec.spacing = cfg.data.spacing;
        spec.n_ellipsoids = cfg.data.n_ellipsoids;
        spec.modality = cfg.modality();
        spec.noise_hu = cfg.data.noise_hu;
        spec.cbct_cupping_hu = cfg.data.cbct_cupping_hu;
        const auto pair = io::generate_phantom_pair(spec);
        auto entry = io::case_paths(cfg.paths.data_dir, case_id_for(static_cast<std::size_t>(i)));
        io::write_mha(pair.source, entry.source);
        io::write_mha(pair.target, entry.target);
        io::write_mha(pair.mask, entry.mask);
        cases.push_back(std::move(entry));
    }
    auto manifest = io::split_manifest(cases, cfg.data.split_ratio, cfg.data.seed);
    io::save_manifest(manifest, cfg.manifest_path());
    say(progress, "wrote " + std::to_string(cases.size()) + " cases (" + std::to_string(manifest.train.size()) +
                      " train, " + std::to_string(manifest.val.size()) + " val) to " + cfg.paths.data_dir.string());
    return manifest;
}

train::TrainResult cmd_train(const RunConfig& cfg, const std::optional<fs::path>& resume, const Progress& progress) {
    cfg.validate();
    const auto manifest = io::load_manifest(cfg.manifest_path());
    train::TrainOptions opts;
    opts.output_dir = cfg.paths.output_dir;
    opts.checkpoint_path = cfg.checkpoint_path();
    opts.resume_from = resume;
    opts.run_config = {{"task", cfg.task}, {"region", cfg.region}};
    opts.progress = progress;
    auto result = train::train(manifest, cfg.net, cfg.train, cfg.flow, cfg.task_config(), opts);
    say(progress, "checkpoint written to " + result.final_checkpoint.string());
    return result;
}

std::vector<fs::path> cmd_infer(const RunConfig& cfg, const std::vector<fs::path>& inputs, const fs::path& out_dir,
                                const Progress& progress) {
    cfg.validate();
    const auto ckpt = cfg.checkpoint_path();
    if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt.string());
    const auto model = train::load_model(ckpt);
    if (config::to_json(model.net_config) != config::to_json(cfg.net)) {
        throw ConfigError("checkpoint " + ckpt.string() + " does not match the configured network");
    }
    if (model.task.modality != cfg.modality()) {
        throw ConfigError("checkpoint " + ckpt.string() + " was trained for " +
                          std::string(io::modality_name(model.task.modality)) + " sources, config task is " +
                          cfg.task);
    }

    std::vector<std::pair<std::string, fs::path>> jobs;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& [id, p] : index_dir(in, "_source.mha")) jobs.emplace_back(id, p);
        } else if (fs::exists(in)) {
            auto stem = in.stem().string();
            if (ends_with(stem, "_source")) stem.resize(stem.size() - 7);
            jobs.emplace_back(stem, in);
        } else {
            throw DataError("input not found: " + in.string());
        }
    }
    if (jobs.empty()) throw DataError("no source volumes found in the given inputs");

    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    for (const auto& [id, path] : jobs) {
        Volume sct;
        try {
            const Volume src = io::read_mha(path, train::source_kind(model.task.modality));
            sct = train::infer(src, model, cfg.integrator, cfg.infer_seed);
        } catch (const DataError& e) {
            throw DataError("case " + id + ": " + e.what());
        }
        const auto out = out_dir / (id + "_sct.mha");
        io::write_mha(sct, out);
        written.push_back(out);
        say(progress, "wrote " + out.string());
    }
    return written;
}

EvaluateResult cmd_evaluate(const fs::path& pred_dir, const fs::path& target_dir, const fs::path& mask_dir,
                            const fs::path& out_dir, bool allow_partial, const Progress& progress) {
    const auto preds = index_dir(pred_dir, "_sct.mha");
    const auto targets = index_dir(target_dir, "_target.mha");
    const auto masks = index_dir(mask_dir, "_mask.mha");

    EvaluateResult r;
    std::set<std::string> ids;
    for (const auto& m : {&preds, &targets}) {
        for (const auto& [id, _] : *m) ids.insert(id);
    }
    std::vector<metrics::CaseMetrics> rows;
    int reduced = 0;
    int min_scales = 5;
    for (const auto& id : ids) {
        if (!preds.contains(id) || !targets.contains(id) || !masks.contains(id)) {
            r.unpaired.push_back(id);
            continue;
        }
        try {
            const Volume pred = io::read_mha(preds.at(id), IntensityKind::hu);
            const Volume tgt = io::read_mha(targets.at(id), IntensityKind::hu);
            const Volume msk = io::read_mha(masks.at(id), IntensityKind::raw);
            auto row = metrics::evaluate_case(id, pred, tgt, msk);
            if (row.ms_ssim_scales < 5) {
                ++reduced;
                min_scales = std::min(min_scales, row.ms_ssim_scales);
            }
            rows.push_back(std::move(row));
        } catch (const Error& e) {
            r.case_errors.push_back(id + ": " + e.what());
        }
    }
    if (reduced > 0) {
        say(progress, "warning: MS-SSIM fell back to as few as " + std::to_string(min_scales) + " scale(s) for " +
                          std::to_string(reduced) + " case(s) whose volumes are too small for 5");
    }
    if (rows.empty()) throw DataError("no case could be evaluated");
    r.report = metrics::MetricReport::from_cases(std::move(rows));

    fs::create_directories(out_dir);
    {
        std::ofstream csv(out_dir / "metrics.csv");
        csv << r.report.to_csv();
        std::ofstream txt(out_dir / "summary.txt");
        txt << r.report.to_table();
        if (!csv || !txt) throw DataError("cannot write reports in " + out_dir.string());
    }
    if ((!r.unpaired.empty() || !r.case_errors.empty()) && !allow_partial) r.exit_code = kExitData;
    return r;
}

} // namespace flowct::cli
