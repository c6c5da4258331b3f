#include "flowct/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "flowct/augment.hpp"
#include "flowct/checkpoint.hpp"
#include "flowct/config_json.hpp"
#include "flowct/error.hpp"
#include "flowct/mha.hpp"
#include "flowct/optim.hpp"
#include "flowct/rng.hpp"

namespace flowct::train {

namespace fs = std::filesystem;

namespace {

// Stream tags mixed into per-step keys.
constexpr std::uint64_t kCaseTag = 0x63617365ULL;
constexpr std::uint64_t kAugTag = 0x61756720ULL;
constexpr std::uint64_t kTupleTag = 0x7475706cULL;
constexpr std::uint64_t kValTag = 0x76616c20ULL;
constexpr std::uint64_t kInferTag = 0x696e6672ULL;
constexpr std::uint64_t kInitTag = 0x696e6974ULL;

struct Prepared {
    std::string case_id;
    Volume condition, target, mask;
};

Prepared load_case(const io::CaseEntry& c, const TaskConfig& task, int side) {
    try {
        const Volume src = io::read_mha(c.source, source_kind(task.modality));
        const Volume tgt = io::read_mha(c.target, IntensityKind::hu);
        const Volume msk = io::read_mha(c.mask, IntensityKind::raw);
        if (src.dims != tgt.dims || src.dims != msk.dims) {
            throw DataError("source, target and mask grids differ");
        }
        return {c.case_id, prepare_condition(src, task, side), prepare_target(tgt, task, side),
                prepare_mask(msk, side)};
    } catch (const DataError& e) {
        throw DataError("case " + c.case_id + ": " + e.what());
    } catch (const DomainError& e) {
        throw DataError("case " + c.case_id + ": " + e.what());
    }
}

// Stacks single-item [1,1,D,H,W] tensors along the batch axis.
Tensor<float> stack(const std::vector<Tensor<float>>& items) {
    Shape shape = items.front().shape();
    shape[0] = static_cast<std::int64_t>(items.size());
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(shape_numel(shape)));
    for (const auto& t : items) values.insert(values.end(), t.values().begin(), t.values().end());
    return Tensor<float>(shape, std::move(values));
}

nlohmann::json checkpoint_config(const net::VelocityNetConfig& net_cfg, const TrainConfig& cfg,
                                 const flow::FlowPathConfig& flow_cfg, const TaskConfig& task,
                                 const nlohmann::json& run) {
    return {{"net", config::to_json(net_cfg)},
            {"train", config::to_json(cfg)},
            {"flow", config::to_json(flow_cfg)},
            {"task", config::to_json(task)},
            {"run", run}};
}

std::string fmt(double v, int precision = 6) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

} // namespace

double validation_mse(const net::VelocityNet<float>& net, const std::vector<Volume>& conditions,
                      const std::vector<Volume>& targets, const flow::FlowPathConfig& flow_cfg, std::uint64_t seed) {
    NoGradGuard no_grad;
    double acc = 0.0;
    int count = 0;
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        const auto c = to_tensor<float>(conditions[i]);
        const auto x1 = to_tensor<float>(targets[i]);
        const auto feats = net.encode_condition(c);
        for (int ti = 1; ti <= 9; ++ti) {
            const double t = ti / 10.0;
            rng::Stream s(rng::derive_key({seed, kValTag, i, static_cast<std::uint64_t>(ti)}));
            std::vector<float> eps(static_cast<std::size_t>(x1.numel()));
            for (auto& e : eps) e = static_cast<float>(s.normal());
            const auto sample = flow::sample_path(x1, Tensor<float>(x1.shape(), std::move(eps)), t, flow_cfg);
            const double tt[1] = {t};
            const auto v = net.forward(sample.x_t, tt, feats);
            acc += flow::fm_loss(v, sample.u_t, flow_cfg).mse;
            ++count;
        }
    }
    return count ? acc / count : 0.0;
}

std::uint64_t init_key(std::uint64_t seed) { return rng::derive_key({seed, kInitTag}); }

TrainResult train(const io::DatasetManifest& manifest, const net::VelocityNetConfig& net_cfg, const TrainConfig& cfg,
                  const flow::FlowPathConfig& flow_cfg, const TaskConfig& task, const TrainOptions& opts) {
    net_cfg.validate();
    cfg.validate();
    flow_cfg.validate();
    task.normalization.validate();
    if (manifest.train.empty()) throw DataError("manifest has no training cases");
    fs::create_directories(opts.output_dir);
    auto say = [&](std::string_view msg) {
        if (opts.progress) opts.progress(msg);
    };

    const int side = net_cfg.input_side;
    std::vector<Prepared> train_set;
    for (const auto& c : manifest.train) train_set.push_back(load_case(c, task, side));
    std::vector<Volume> val_cond, val_tgt;
    for (std::size_t i = 0; i < manifest.val.size() && static_cast<int>(i) < cfg.validation_cases; ++i) {
        auto p = load_case(manifest.val[i], task, side);
        val_cond.push_back(std::move(p.condition));
        val_tgt.push_back(std::move(p.target));
    }

    net::VelocityNet<float> net(net_cfg, init_key(cfg.seed));
    auto opt = OptimizerState<float>::zeros(net.parameters());
    const auto ckpt_config = checkpoint_config(net_cfg, cfg, flow_cfg, task, opts.run_config);

    TrainResult result;
    if (opts.resume_from) {
        auto ckpt = load_checkpoint<float>(*opts.resume_from);
        const auto stored = ckpt.config.value("net", nlohmann::json{});
        if (stored != config::to_json(net_cfg)) {
            throw ConfigError("checkpoint " + opts.resume_from->string() + " was written for a different network");
        }
        if (ckpt.seed != cfg.seed) {
            throw ConfigError("checkpoint " + opts.resume_from->string() + " was written with seed " +
                              std::to_string(ckpt.seed) + ", config has " + std::to_string(cfg.seed));
        }
        restore_parameters(net, ckpt);
        opt = std::move(ckpt.optimizer);
        result.start_step = ckpt.step;
        say("resuming from step " + std::to_string(ckpt.step));
    }

    // A resumed run appends to its own logs; resuming into a fresh output
    // directory starts new ones with a header.
    const bool append = result.start_step > 0 && std::filesystem::exists(opts.output_dir / "train_log.csv");
    const auto mode = append ? std::ios::app : std::ios::trunc;
    std::ofstream train_log(opts.output_dir / "train_log.csv", std::ios::out | mode);
    std::ofstream val_log(opts.output_dir / "val_log.csv", std::ios::out | mode);
    if (!train_log || !val_log) throw DataError("cannot write logs in " + opts.output_dir.string());
    train_log << std::setprecision(9);
    val_log << std::setprecision(9);
    if (!append) {
        train_log << "step,loss_l1,loss_mse,loss_total,wall_ms\n";
        val_log << "step,val_mse\n";
    }

    auto save = [&](const fs::path& path, std::int64_t step) {
        save_checkpoint(make_checkpoint(ckpt_config, net, opt, cfg.seed, step), path);
    };

    net.set_requires_grad(true);
    const auto n_train = static_cast<std::uint64_t>(train_set.size());
    for (std::int64_t step = result.start_step + 1; step <= cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto ustep = static_cast<std::uint64_t>(step);
        std::vector<Tensor<float>> xs, us, cs;
        std::vector<double> ts;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto ub = static_cast<std::uint64_t>(b);
            rng::Stream pick(rng::derive_key({cfg.seed, kCaseTag, ustep, ub}));
            const auto& item = train_set[static_cast<std::size_t>(pick.below(n_train))];
            const auto aug = augment_pair(item.condition, item.target, item.mask, cfg,
                                          rng::derive_key({cfg.seed, kAugTag, ub}), ustep);
            const auto sample = flow::draw_training_tuple(to_tensor<float>(aug.target),
                                                          rng::derive_key({cfg.seed, kTupleTag, ustep, ub}), flow_cfg);
            xs.push_back(sample.x_t);
            us.push_back(sample.u_t);
            cs.push_back(to_tensor<float>(aug.source));
            ts.push_back(sample.t);
        }

        net.zero_grad();
        const auto feats = net.encode_condition(stack(cs));
        const auto v = net.forward(stack(xs), ts, feats, {true, cfg.seed, ustep});
        const auto loss = flow::fm_loss(v, stack(us), flow_cfg);
        const double total = static_cast<double>(loss.total.item());
        if (!std::isfinite(total)) {
            Tape<float>::active().clear();
            throw NumericalError("non-finite training loss at step " + std::to_string(step));
        }
        backward(loss.total);
        adamw_step(net.parameters(), opt, cfg.learning_rate, cfg.weight_decay);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

        const StepRecord rec{step, loss.l1, loss.mse, total, ms};
        result.steps.push_back(rec);
        train_log << rec.step << ',' << rec.loss_l1 << ',' << rec.loss_mse << ',' << rec.loss_total << ','
                  << std::setprecision(4) << rec.wall_ms << std::setprecision(9) << '\n';
        if (step % cfg.log_every == 0 || step == cfg.total_steps || step == result.start_step + 1) {
            say("step " + std::to_string(step) + "/" + std::to_string(cfg.total_steps) + "  loss " + fmt(total) +
                " (l1 " + fmt(loss.l1) + ", mse " + fmt(loss.mse) + ")  " + fmt(ms, 4) + " ms/step");
        }
        if (cfg.validation_every > 0 && step % cfg.validation_every == 0 && !val_cond.empty()) {
            const double vm = validation_mse(net, val_cond, val_tgt, flow_cfg, cfg.seed);
            result.validation.push_back({step, vm});
            val_log << step << ',' << vm << '\n';
            say("step " + std::to_string(step) + "  val_mse " + fmt(vm));
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            save(opts.output_dir / ("step_" + std::to_string(step) + ".ckpt"), step);
        }
    }
    train_log.flush();
    val_log.flush();

    result.final_checkpoint = opts.checkpoint_path.empty() ? opts.output_dir / "final.ckpt" : opts.checkpoint_path;
    if (result.final_checkpoint.has_parent_path()) fs::create_directories(result.final_checkpoint.parent_path());
    save(result.final_checkpoint, std::max(result.start_step, cfg.total_steps));
    return result;
}

Model load_model(const fs::path& checkpoint) {
    auto ckpt = load_checkpoint<float>(checkpoint);
    Model m;
    try {
        m.net_config = config::net_from_json(ckpt.config.at("net"));
        m.flow = config::flow_from_json(ckpt.config.at("flow"));
        m.task = config::task_from_json(ckpt.config.at("task"));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint " + checkpoint.string() + " lacks a complete configuration: " + e.what());
    }
    m.step = ckpt.step;
    m.net = std::make_unique<net::VelocityNet<float>>(m.net_config, 0);
    restore_parameters(*m.net, ckpt);
    return m;
}

Volume infer(const Volume& source, const Model& model, const ode::IntegratorConfig& integrator, std::uint64_t seed,
             const VelocityOverride& override_velocity) {
    integrator.validate();
    if (!model.net) throw ConfigError("infer: model has no network");
    const int side = model.net_config.input_side;
    const Volume cond = prepare_condition(source, model.task, side);

    NoGradGuard no_grad;
    const auto c = to_tensor<float>(cond);
    const auto feats = model.net->encode_condition(c);
    ode::VelocityFn<float> field = override_velocity;
    if (!field) {
        field = [&](const Tensor<float>& x, double t) {
            const double tt[1] = {t};
            return model.net->forward(x, tt, feats);
        };
    }

    rng::Stream s(rng::derive_key({seed, kInferTag}));
    std::vector<float> noise(static_cast<std::size_t>(c.numel()));
    for (auto& e : noise) e = static_cast<float>(s.normal());
    const auto x1 = ode::integrate(field, Tensor<float>(c.shape(), std::move(noise)), integrator);
    const Volume sct = from_tensor(x1, cond, IntensityKind::normalized_hu);
    return prep::postprocess(sct, source, model.task.normalization);
}

} // namespace flowct::train
