// flowct: phantom generation, training, inference and evaluation for
// conditional flow-matching CT synthesis.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flowct/cli.hpp"
#include "flowct/error.hpp"

namespace fs = std::filesystem;
using namespace flowct;

namespace {

void print_line(std::string_view s) { std::cout << s << std::endl; }

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
};

cli::RunConfig load(const Common& c) {
    return c.config.empty() ? cli::run_from_json(nlohmann::json::object()) : cli::load_run_config(c.config);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional flow-matching synthesis of CT from MR or CBCT volumes"};
    app.require_subcommand(1);

    Common gen_opts;
    std::optional<int> n_cases;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic phantom dataset and its train/val manifest");
    gen->add_option("-c,--config", gen_opts.config, "JSON run config")->check(CLI::ExistingFile);
    gen->add_option("--seed", gen_opts.seed, "Override data.seed");
    gen->add_option("--n-cases", n_cases, "Override data.n_cases");

    Common train_opts;
    std::optional<std::int64_t> steps;
    std::string train_ckpt;
    std::string resume;
    auto* tr = app.add_subcommand("train", "Train the velocity network on the manifest's training split");
    tr->add_option("-c,--config", train_opts.config, "JSON run config")->check(CLI::ExistingFile);
    tr->add_option("--seed", train_opts.seed, "Override train.seed");
    tr->add_option("--steps", steps, "Override train.total_steps");
    tr->add_option("--checkpoint", train_ckpt, "Final checkpoint path");
    tr->add_option("--resume", resume, "Continue from this checkpoint");

    Common infer_opts;
    std::vector<std::string> inputs;
    std::string infer_out;
    std::string infer_ckpt;
    std::optional<int> ode_steps;
    auto* inf = app.add_subcommand("infer", "Synthesize CT for source volumes");
    inf->add_option("-c,--config", infer_opts.config, "JSON run config")->check(CLI::ExistingFile);
    inf->add_option("-i,--input", inputs, "Source .mha files or directories of *_source.mha")->required();
    inf->add_option("-o,--output-dir", infer_out, "Output directory (default: <output_dir>/sct)");
    inf->add_option("--checkpoint", infer_ckpt, "Checkpoint to load");
    inf->add_option("--seed", infer_opts.seed, "Override infer.seed");
    inf->add_option("--ode-steps", ode_steps, "Override integrator.steps");

    std::string pred_dir, target_dir, mask_dir, eval_out;
    bool allow_partial = false;
    auto* ev = app.add_subcommand("evaluate", "Masked MAE, PSNR and MS-SSIM of predictions against targets");
    ev->add_option("--pred", pred_dir, "Directory of {case}_sct.mha")->required();
    ev->add_option("--target", target_dir, "Directory of {case}_target.mha")->required();
    ev->add_option("--mask", mask_dir, "Directory of {case}_mask.mha (default: --target)");
    ev->add_option("-o,--output-dir", eval_out, "Report directory (default: --pred)");
    ev->add_flag("--allow-partial", allow_partial, "Score what can be paired and exit 0");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto cfg = load(gen_opts);
            if (gen_opts.seed) cfg.data.seed = *gen_opts.seed;
            if (n_cases) cfg.data.n_cases = *n_cases;
            cli::cmd_gen_data(cfg, print_line);
        } else if (*tr) {
            auto cfg = load(train_opts);
            if (train_opts.seed) cfg.train.seed = *train_opts.seed;
            if (steps) cfg.train.total_steps = *steps;
            if (!train_ckpt.empty()) cfg.paths.checkpoint = train_ckpt;
            std::optional<fs::path> resume_path;
            if (!resume.empty()) resume_path = resume;
            cli::cmd_train(cfg, resume_path, print_line);
        } else if (*inf) {
            auto cfg = load(infer_opts);
            if (infer_opts.seed) cfg.infer_seed = *infer_opts.seed;
            if (!infer_ckpt.empty()) cfg.paths.checkpoint = infer_ckpt;
            if (ode_steps) cfg.integrator.steps = *ode_steps;
            const fs::path out = infer_out.empty() ? cfg.paths.output_dir / "sct" : fs::path(infer_out);
            std::vector<fs::path> in(inputs.begin(), inputs.end());
            cli::cmd_infer(cfg, in, out, print_line);
        } else if (*ev) {
            const fs::path masks = mask_dir.empty() ? fs::path(target_dir) : fs::path(mask_dir);
            const fs::path out = eval_out.empty() ? fs::path(pred_dir) : fs::path(eval_out);
            const auto r = cli::cmd_evaluate(pred_dir, target_dir, masks, out, allow_partial,
                                             [](std::string_view s) { std::cerr << s << '\n'; });
            std::cout << r.report.to_table();
            for (const auto& id : r.unpaired) std::cerr << "unpaired case: " << id << '\n';
            for (const auto& msg : r.case_errors) std::cerr << "error: " << msg << '\n';
            return r.exit_code;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cli::exit_code_for(e);
    }
    return cli::kExitOk;
}
