#pragma once

// `ento <infer|train|eval|gradcheck|params>` command implementations.
//
// Exit codes: 0 ok, 1 configuration or usage error, 2 I/O error, 3 shape
// mismatch, 4 any other failure (non-finite training, failed gradient check).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ento/config.hpp"
#include "ento/container.hpp"
#include "ento/evaluate.hpp"
#include "ento/gradcheck_suite.hpp"
#include "ento/pnm.hpp"
#include "ento/synthetic.hpp"
#include "ento/trainer.hpp"

namespace ento {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitIo = 2, kExitShape = 3, kExitRuntime = 4 };

struct CliArgs {
    std::string config;
    std::string image;
    std::string out;
    std::string pred;
    std::string gt;
    std::optional<std::uint64_t> seed;
};

namespace detail {

inline RunConfig load_run_config(const CliArgs& a) {
    RunConfig c = a.config.empty() ? RunConfig{} : load_config(a.config);
    if (a.seed) c.train.seed = *a.seed;
    if (!a.out.empty()) c.out_dir = a.out;
    return c;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::vector<unsigned char>(text.begin(), text.end()));
}

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline std::string map_summary(const char* name, const Tensor<float>& t) {
    auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
    return std::string(name) + " shape=" + t.shape().str() + " min=" + format_number(*lo) + " max=" + format_number(*hi);
}

} // namespace detail

/// images/<id>.ppm with masks/<id>.pgm, sorted by id; masks binarised at 0.5.
inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
    const auto images = dir / "images", masks = dir / "masks";
    if (!std::filesystem::is_directory(images) || !std::filesystem::is_directory(masks)) {
        throw IoError("dataset " + dir.string() + " must contain images/ and masks/");
    }
    std::map<std::string, std::filesystem::path> found;
    for (const auto& ent : std::filesystem::directory_iterator(images)) {
        if (ent.is_regular_file() && ent.path().extension() == ".ppm") found.emplace(ent.path().stem().string(), ent.path());
    }
    std::vector<Sample> out;
    for (const auto& [id, path] : found) {
        const auto mask_path = masks / (id + ".pgm");
        if (!std::filesystem::exists(mask_path)) throw IoError("dataset: no mask for image " + id);
        Sample s{id, read_pnm(path), read_pnm(mask_path)};
        if (s.image.shape().c != 3) throw ShapeError("dataset: image " + id + " is not RGB");
        const auto y = to_ground_truth(s.mask);
        s.mask = y.cast<float>();
        out.push_back(std::move(s));
    }
    if (out.empty()) throw IoError("dataset " + dir.string() + " has no images");
    return out;
}

inline std::vector<Sample> training_data(const RunConfig& c) {
    if (!c.data.dir.empty()) return load_dataset(c.data.dir);
    SyntheticOptions so;
    so.height = c.model.input_h;
    so.width = c.model.input_w;
    so.contrast = c.data.synthetic_contrast;
    return make_synthetic_set(c.data.synthetic_seed, c.data.synthetic_count, so);
}

inline int cmd_infer(const CliArgs& a, std::ostream& out) {
    const RunConfig c = detail::load_run_config(a);
    if (c.checkpoint.empty()) throw ConfigError("config key 'paths.checkpoint' is required for infer");
    if (a.image.empty()) throw ConfigError("infer requires --image");
    // Read every input before writing anything.
    const TensorMap ckpt = load_container(c.checkpoint);
    const Tensor<float> image = read_pnm(a.image);
    if (image.shape().c != 3) throw ShapeError("infer: --image must be an RGB (P6) file");
    ParamStore<float> params = make_ento_params<float>(c.model, c.train.seed);
    apply_checkpoint(ckpt, params);

    const auto t0 = std::chrono::steady_clock::now();
    const Probabilities p = predict(params, c.model, image);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    const std::filesystem::path dir = c.out_dir;
    detail::ensure_dir(dir);
    write_pnm(dir / "coarse.pgm", p.coarse);
    write_pnm(dir / "base.pgm", p.base);
    write_pnm(dir / "final.pgm", p.final);
    std::string summary = detail::map_summary("coarse", p.coarse) + "\n" + detail::map_summary("base", p.base) + "\n" +
                          detail::map_summary("final", p.final) + "\n";
    char buf[64];
    std::snprintf(buf, sizeof buf, "runtime_ms=%.3f\n", ms);
    summary += buf;
    detail::write_text_atomic(dir / "summary.txt", summary);
    out << summary;
    return kExitOk;
}

inline int cmd_train(const CliArgs& a, std::ostream& out) {
    const RunConfig c = detail::load_run_config(a);
    const std::vector<Sample> data = training_data(c);
    ParamStore<float> params = make_ento_params<float>(c.model, c.train.seed);
    OptimizerState<float> state = OptimizerState<float>::zeros_like(params);
    if (!c.resume.empty()) apply_checkpoint(load_container(c.resume), params, &state);

    const std::filesystem::path dir = c.out_dir;
    detail::ensure_dir(dir);
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const ParamStore<float>& p, const OptimizerState<float>& s) {
        save_container(dir / ("checkpoint_step" + std::to_string(s.step) + ".ento"), make_checkpoint(p, &s));
    };
    const auto trace = train_loop(data, c.model, c.train, params, state, c.loss, std::numeric_limits<std::size_t>::max(),
                                  hooks);

    std::string text = std::string(kTraceHeader) + "\n";
    for (const auto& r : trace) text += format_trace(r) + "\n";
    save_container(dir / "checkpoint.ento", make_checkpoint(params, &state));
    detail::write_text_atomic(dir / "trace.txt", text);
    out << "train steps=" << state.step << " samples=" << data.size();
    if (!trace.empty()) out << " final_total=" << format_number(trace.back().total);
    out << "\n";
    return kExitOk;
}

inline int cmd_eval(const CliArgs& a, std::ostream& out) {
    const RunConfig c = detail::load_run_config(a);
    if (a.pred.empty() || a.gt.empty()) throw ConfigError("eval requires --pred and --gt");
    const MetricReport rep = evaluate_batch(a.pred, a.gt, EvalOptions{c.eval.strict, c.eval.resize_mismatched});
    out << format_report(rep);
    for (const auto& [id, why] : rep.errors) {
        if (why.starts_with("size mismatch")) return kExitShape;
    }
    return kExitOk;
}

inline int cmd_gradcheck(const CliArgs& a, std::ostream& out) {
    const RunConfig c = detail::load_run_config(a);
    GradCheckOptions opt = gradcheck_suite_options();
    opt.eps = c.gradcheck.eps;
    opt.samples_per_tensor = c.gradcheck.samples;
    bool ok = true;
    for (const auto& b : run_gradcheck_suite(opt, c.train.seed + 11)) {
        const bool pass = b.result.max_rel_error <= c.gradcheck.tolerance;
        ok = ok && pass;
        char buf[256];
        std::snprintf(buf, sizeof buf, "block=%s max_rel_error=%.3e coords=%zu worst=%s[%zu] %s\n", b.block.c_str(),
                      b.result.max_rel_error, b.result.coordinates, b.result.worst_param.c_str(), b.result.worst_index,
                      pass ? "pass" : "FAIL");
        out << buf;
    }
    out << "gradcheck " << (ok ? "pass" : "FAIL") << "\n";
    return ok ? kExitOk : kExitRuntime;
}

inline int cmd_params(const CliArgs& a, std::ostream& out) {
    const RunConfig c = detail::load_run_config(a);
    const ParamStore<float> params = make_ento_params<float>(c.model, c.train.seed);
    out << "total=" << param_count(params, ParamScope::All) << "\n";
    out << "decoder=" << param_count(params, ParamScope::DecoderOnly) << "\n";
    out << "tensors=" << params.size() << "\n";
    return kExitOk;
}

/// Parses argv and runs one command; never throws.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"ento: Enrich/Base/Retouch segmentation pipeline"};
    app.require_subcommand(1);
    CliArgs a;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config, "key=value run configuration");
        sub->add_option("--seed", a.seed, "overrides train.seed");
        sub->add_option("--out", a.out, "output directory (overrides paths.out_dir)");
    };
    auto* infer = app.add_subcommand("infer", "predict maps for one RGB image");
    common(infer);
    infer->add_option("--image", a.image, "input P6 image");
    auto* train = app.add_subcommand("train", "train and write checkpoint.ento + trace.txt");
    common(train);
    auto* eval = app.add_subcommand("eval", "score predicted maps against ground truth");
    common(eval);
    eval->add_option("--pred", a.pred, "directory of predicted P5 maps");
    eval->add_option("--gt", a.gt, "directory of ground-truth P5 masks");
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every block");
    common(gradcheck);
    auto* params = app.add_subcommand("params", "print parameter counts");
    common(params);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "ento: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (infer->parsed()) return cmd_infer(a, out);
        if (train->parsed()) return cmd_train(a, out);
        if (eval->parsed()) return cmd_eval(a, out);
        if (gradcheck->parsed()) return cmd_gradcheck(a, out);
        return cmd_params(a, out);
    } catch (const ConfigError& e) {
        err << "ento: config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        err << "ento: I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ShapeError& e) {
        err << "ento: shape error: " << e.what() << "\n";
        return kExitShape;
    } catch (const std::exception& e) {
        err << "ento: error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

} // namespace ento
