#include "cxdi/cli.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "cxdi/analysis.hpp"
#include "cxdi/datagen.hpp"
#include "cxdi/iterative.hpp"
#include "cxdi/optimize.hpp"
#include "cxdi/provenance.hpp"
#include "cxdi/volume_io.hpp"
#include "json.hpp"

namespace cxdi {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

static_assert(std::endian::native == std::endian::little, "raw stacks are read as host-order little-endian");

// Thrown for problems detected while validating options, before any compute starts.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<int> parse_int_list(const std::string& s, const char* what) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": '" + s + "' is not a comma-separated integer list");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " is empty");
    return out;
}

Grid3 parse_dims(const std::string& s) {
    const auto d = parse_int_list(s, "--dims");
    if (d.size() != 3) throw ConfigError("--dims needs three extents, got '" + s + "'");
    return {d[0], d[1], d[2]};
}

// Validation helper: library errors raised here count as configuration errors.
template <class F>
void validating(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
}

void require_file(const std::string& path, const char* flag) {
    if (path.empty()) throw ConfigError(std::string(flag) + " is required");
    if (!fs::is_regular_file(path)) throw Error(Errc::IoFailure, std::string(flag) + ": no such file '" + path + "'");
}

struct Provenance {
    Json inputs = Json::object();
    Json seeds = Json::object();

    void file(const std::string& path) { inputs[path] = file_blob_sha1(path); }
    void directory(const fs::path& dir) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) inputs[f.string()] = file_blob_sha1(f);
    }
};

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void write_run_json(const fs::path& path, const std::string& command, const Json& config, const Provenance& p) {
    Json j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = p.inputs;
    j["seeds"] = p.seeds;
    write_text(path, j.dump(2) + "\n");
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

// ---- shared option groups ---------------------------------------------------------------

struct NetOpts {
    std::string widths = "16,32,64";
    std::string upsample = "nearest";
    double slope = 0.01;

    void add(CLI::App* app) {
        app->add_option("--widths", widths, "encoder widths, comma separated");
        app->add_option("--upsample", upsample, "nearest or trilinear");
        app->add_option("--slope", slope, "LReLU slope");
    }
    nn::NetworkSpec spec(const Grid3& grid) const {
        nn::NetworkSpec s;
        s.input_grid = grid;
        s.encoder_widths = parse_int_list(widths, "--widths");
        if (upsample == "nearest") {
            s.upsample = nn::UpsampleMode::nearest;
        } else if (upsample == "trilinear") {
            s.upsample = nn::UpsampleMode::trilinear;
        } else {
            throw ConfigError("--upsample must be nearest or trilinear");
        }
        s.lrelu_slope = slope;
        validating([&] { s.validate(); });
        return s;
    }
    void record(Json& j) const {
        j["widths"] = widths;
        j["upsample"] = upsample;
        j["slope"] = slope;
    }
};

struct ScheduleOpts {
    TrainSchedule s;

    explicit ScheduleOpts(TrainSchedule d) : s(d) {}
    void add(CLI::App* app) {
        app->add_option("--epochs", s.total_epochs);
        app->add_option("--switch-every", s.switch_every, "epochs between ADAM/SGD switches");
        app->add_option("--lr", s.lr0);
        app->add_option("--lr-decay", s.lr_decay);
        app->add_option("--decay-every", s.decay_every);
    }
    void validate() const { validating([&] { s.validate(); }); }
    void record(Json& j) const {
        j["epochs"] = s.total_epochs;
        j["switch-every"] = s.switch_every;
        j["lr"] = s.lr0;
        j["lr-decay"] = s.lr_decay;
        j["decay-every"] = s.decay_every;
    }
};

struct RefineOpts {
    ScheduleOpts schedule{TrainSchedule::refine_default()};
    NetOpts net;
    WeibullSchedule weibull;
    double beta2 = 1.0;
    double phase_scale = 1.0;
    std::string init = "random";
    std::string params;

    void add(CLI::App* app) {
        schedule.add(app);
        net.add(app);
        app->add_option("--init", init, "random or transfer");
        app->add_option("--params", params, "pretrained parameters for --init transfer");
        app->add_option("--weibull-k", weibull.k);
        app->add_option("--weibull-lambda", weibull.lambda);
        app->add_option("--weibull-a0", weibull.a0);
        app->add_option("--weibull-a1", weibull.a1);
        app->add_option("--weibull-divisor", weibull.epoch_divisor);
        app->add_option("--beta2", beta2);
        app->add_option("--phase-scale", phase_scale);
    }
    void validate() const {
        schedule.validate();
        validating([&] { weibull.validate(); });
        if (init != "random" && init != "transfer") throw ConfigError("--init must be random or transfer");
        if (init == "transfer" && params.empty()) throw ConfigError("--init transfer needs --params");
        if (!(beta2 >= 0)) throw ConfigError("--beta2 must be non-negative");
        if (!(phase_scale > 0)) throw ConfigError("--phase-scale must be positive");
    }
    RefineConfig config(const Grid3& grid, std::uint64_t seed) const {
        RefineConfig c;
        c.schedule = schedule.s;
        c.weibull = weibull;
        c.beta2 = beta2;
        c.phase_scale = phase_scale;
        if (init == "transfer") {
            auto p = nn::load_params(params);
            if (p.spec.input_grid != grid) {
                throw ConfigError("pretrained network expects " + to_string(p.spec.input_grid) + ", pattern is " +
                                  to_string(grid));
            }
            c.spec = p.spec;
            c.init = TransferInit{std::move(p)};
        } else {
            c.spec = net.spec(grid);
            c.init = RandomInit{seed};
        }
        return c;
    }
    void record(Json& j) const {
        schedule.record(j);
        net.record(j);
        j["init"] = init;
        if (!params.empty()) j["params"] = params;
        j["weibull-k"] = weibull.k;
        j["weibull-lambda"] = weibull.lambda;
        j["weibull-a0"] = weibull.a0;
        j["weibull-a1"] = weibull.a1;
        j["weibull-divisor"] = weibull.epoch_divisor;
        j["beta2"] = beta2;
        j["phase-scale"] = phase_scale;
    }
};

struct IterativeOpts {
    IterativeSchedule s;

    void add(CLI::App* app) {
        app->add_option("--iterations", s.total_iters);
        app->add_option("--er-head", s.er_head);
        app->add_option("--block-len", s.block_len);
        app->add_option("--hio-beta", s.hio_beta);
        app->add_option("--shrinkwrap-start", s.shrinkwrap_start);
        app->add_option("--shrinkwrap-every", s.shrinkwrap_every);
        app->add_option("--er-tail", s.er_tail);
        app->add_option("--sigma0", s.sigma0);
        app->add_option("--sigma-decay", s.sigma_decay);
        app->add_option("--sigma-min", s.sigma_min);
        app->add_option("--threshold", s.threshold);
    }
    void validate() const { validating([&] { s.validate(); }); }
    void record(Json& j) const {
        j["iterations"] = s.total_iters;
        j["er-head"] = s.er_head;
        j["block-len"] = s.block_len;
        j["hio-beta"] = s.hio_beta;
        j["shrinkwrap-start"] = s.shrinkwrap_start;
        j["shrinkwrap-every"] = s.shrinkwrap_every;
        j["er-tail"] = s.er_tail;
        j["sigma0"] = s.sigma0;
        j["sigma-decay"] = s.sigma_decay;
        j["sigma-min"] = s.sigma_min;
        j["threshold"] = s.threshold;
    }
};

std::string error_trace_csv(const std::vector<std::pair<long, double>>& trace) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "iteration,chi2\n";
    for (const auto& [i, v] : trace) ss << i << ',' << v << '\n';
    return ss.str();
}

// ---- commands ---------------------------------------------------------------------------

struct Command {
    CLI::App* app = nullptr;
    std::function<void()> validate;  // option checks only; no file contents are read
    std::function<void(std::ostream&)> run;
};

Command make_generate(CLI::App& root) {
    struct O {
        std::size_t count = 0;
        int grid = 32;
        std::uint64_t seed = 0;
        double phase_scale = 1.0;
        std::string out;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("generate", "synthesize a paired particle/pattern dataset");
    app->add_option("--count", o->count)->required();
    app->add_option("--grid", o->grid);
    app->add_option("--seed", o->seed);
    app->add_option("--phase-scale", o->phase_scale);
    app->add_option("--out", o->out)->required();
    Command c{app, {}, {}};
    c.validate = [o] {
        if (o->count == 0) throw ConfigError("--count must be at least 1");
        validating([&] {
            const Grid3 g = Grid3::cube(o->grid);
            auto r = ParamRanges::defaults(g);
            r.phase_scale = o->phase_scale;
            r.validate(g);
        });
    };
    c.run = [o](std::ostream& log) {
        const Grid3 g = Grid3::cube(o->grid);
        auto ranges = ParamRanges::defaults(g);
        ranges.phase_scale = o->phase_scale;
        ensure_dir(o->out);
        write_dataset(o->out, o->count, g, ranges, o->seed);
        Json cfg{{"count", o->count}, {"grid", o->grid}, {"seed", o->seed}, {"phase-scale", o->phase_scale}, {"out", o->out}};
        Provenance p;
        p.seeds["dataset"] = o->seed;
        write_run_json(fs::path(o->out) / "run.json", "generate", cfg, p);
        log << "wrote " << o->count << " samples to " << o->out << "\n";
    };
    return c;
}

Command make_train(CLI::App& root) {
    struct O {
        std::string data;
        std::string out;
        ScheduleOpts schedule{TrainSchedule::supervised_default()};
        NetOpts net;
        int batch = 8;
        std::uint64_t seed = 0;
        double w_amp = 1.0, w_phase = 1.0, w_diff = 1.0;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("train", "supervised training on a generated dataset");
    app->add_option("--data", o->data)->required();
    app->add_option("--out", o->out)->required();
    o->schedule.add(app);
    o->net.add(app);
    app->add_option("--batch", o->batch);
    app->add_option("--seed", o->seed);
    app->add_option("--w-amplitude", o->w_amp);
    app->add_option("--w-phase", o->w_phase);
    app->add_option("--w-diffraction", o->w_diff);
    Command c{app, {}, {}};
    c.validate = [o] {
        o->schedule.validate();
        parse_int_list(o->net.widths, "--widths");
        if (o->batch <= 0) throw ConfigError("--batch must be positive");
        validating([&] { SupervisedWeights{o->w_amp, o->w_phase, o->w_diff}.validate(); });
        if (!fs::is_directory(o->data)) throw Error(Errc::IoFailure, "--data: no such directory '" + o->data + "'");
    };
    c.run = [o](std::ostream& log) {
        auto records = read_dataset(o->data);
        if (records.empty()) throw Error(Errc::EmptyDataset, "dataset is empty");
        const auto spec = o->net.spec(records.front().pattern.grid());
        TrainConfig cfg;
        cfg.schedule = o->schedule.s;
        cfg.weights = {o->w_amp, o->w_phase, o->w_diff};
        cfg.batch_size = o->batch;
        cfg.phase_scale = records.front().phase_scale;
        cfg.seed = o->seed;
        const auto result = supervised_train(records, spec, cfg, [&](const EpochLosses& e) {
            log << "epoch " << e.epoch << " train " << e.train << " validation " << e.validation << "\n";
        });
        ensure_dir(o->out);
        const fs::path out(o->out);
        nn::save_params(result.params, out / "params.bin");
        nn::save_params(result.final_params, out / "final_params.bin");
        write_text(out / "curve.csv", result.curve_csv());
        Json cfgj{{"data", o->data}, {"out", o->out}};
        o->schedule.record(cfgj);
        o->net.record(cfgj);
        cfgj["batch"] = o->batch;
        cfgj["seed"] = o->seed;
        cfgj["w-amplitude"] = o->w_amp;
        cfgj["w-phase"] = o->w_phase;
        cfgj["w-diffraction"] = o->w_diff;
        Provenance p;
        p.directory(o->data);
        p.seeds["init_and_shuffle"] = o->seed;
        write_run_json(out / "run.json", "train", cfgj, p);
        log << "best epoch " << result.best_epoch << " loss " << result.best_loss << "\n";
    };
    return c;
}

Command make_predict(CLI::App& root) {
    struct O {
        std::string params, pattern, out = ".";
        double phase_scale = 1.0;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("predict", "single forward pass of a trained network");
    app->add_option("--params", o->params)->required();
    app->add_option("--pattern", o->pattern)->required();
    app->add_option("--out", o->out);
    app->add_option("--phase-scale", o->phase_scale);
    Command c{app, {}, {}};
    c.validate = [o] {
        if (!(o->phase_scale > 0)) throw ConfigError("--phase-scale must be positive");
        require_file(o->params, "--params");
        require_file(o->pattern, "--pattern");
    };
    c.run = [o](std::ostream& log) {
        const auto params = nn::load_params(o->params);
        const auto pattern = read_pattern(o->pattern);
        const auto pred = predict(params, pattern, o->phase_scale);
        ensure_dir(o->out);
        const fs::path out(o->out);
        write_volume(pred.object, out / "recon.cxv", "predict");
        Provenance p;
        p.file(o->params);
        p.file(o->pattern);
        write_run_json(out / "run.json", "predict",
                       Json{{"params", o->params}, {"pattern", o->pattern}, {"out", o->out}, {"phase-scale", o->phase_scale}}, p);
        log << "predicted " << to_string(pred.object.grid()) << " in " << pred.seconds << " s\n";
    };
    return c;
}

Command make_refine(CLI::App& root) {
    struct O {
        std::string pattern, out;
        std::uint64_t seed = 0;
        RefineOpts refine;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("refine", "fit a network to one pattern with the unsupervised loss");
    app->add_option("--pattern", o->pattern)->required();
    app->add_option("--out", o->out)->required();
    app->add_option("--seed", o->seed);
    o->refine.add(app);
    Command c{app, {}, {}};
    c.validate = [o] {
        o->refine.validate();
        parse_int_list(o->refine.net.widths, "--widths");
        require_file(o->pattern, "--pattern");
        if (o->refine.init == "transfer") require_file(o->refine.params, "--params");
    };
    c.run = [o](std::ostream& log) {
        const auto pattern = read_pattern(o->pattern);
        const auto cfg = o->refine.config(pattern.grid(), o->seed);
        const long every = std::max<long>(1, cfg.schedule.total_epochs / 20);
        const auto result = unsupervised_refine(pattern, cfg, [&](const RefineTraceRow& r) {
            if (r.epoch % every == 0) log << "epoch " << r.epoch << " loss " << r.loss << "\n";
        });
        ensure_dir(o->out);
        const fs::path out(o->out);
        nn::save_params(result.params, out / "params.bin");
        write_volume(result.object, out / "recon.cxv", "refine");
        write_text(out / "loss.csv", result.trace_csv());
        write_text(out / "report.json", refine_report(result, pattern, "refine-" + o->refine.init, o->seed).to_json() + "\n");
        Json cfgj{{"pattern", o->pattern}, {"out", o->out}, {"seed", o->seed}};
        o->refine.record(cfgj);
        Provenance p;
        p.file(o->pattern);
        if (o->refine.init == "transfer") p.file(o->refine.params);
        p.seeds["init"] = o->seed;
        write_run_json(out / "run.json", "refine", cfgj, p);
        log << "final loss " << result.final_loss << " chi2 " << result.final_chi2 << "\n";
    };
    return c;
}

Command make_iterative(CLI::App& root) {
    struct O {
        std::string pattern, out;
        std::uint64_t seed = 0;
        IterativeOpts sched;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("iterative", "ER/HIO/shrink-wrap reconstruction");
    app->add_option("--pattern", o->pattern)->required();
    app->add_option("--out", o->out)->required();
    app->add_option("--seed", o->seed);
    o->sched.add(app);
    Command c{app, {}, {}};
    c.validate = [o] {
        o->sched.validate();
        require_file(o->pattern, "--pattern");
    };
    c.run = [o](std::ostream& log) {
        const auto pattern = read_pattern(o->pattern);
        const auto result = run_schedule(pattern, o->sched.s, o->seed);
        ensure_dir(o->out);
        const fs::path out(o->out);
        write_volume(result.state.estimate, out / "recon.cxv", "iterative");
        RealVolume support(result.state.support.grid);
        for (std::size_t i = 0; i < support.size(); ++i) support[i] = result.state.support.mask[i];
        write_volume(make_volume_file(support, DType::f64, "support"), out / "support.cxv");
        write_text(out / "error.csv", error_trace_csv(result.state.error_trace));
        write_text(out / "report.json", result.report.to_json() + "\n");
        Json cfgj{{"pattern", o->pattern}, {"out", o->out}, {"seed", o->seed}};
        o->sched.record(cfgj);
        Provenance p;
        p.file(o->pattern);
        p.seeds["initial_phase"] = o->seed;
        write_run_json(out / "run.json", "iterative", cfgj, p);
        log << "final chi2 " << result.report.chi2 << "\n";
    };
    return c;
}

Command make_ensemble(CLI::App& root) {
    struct O {
        std::string pattern, out, method = "iterative";
        int runs = 20;
        int jobs = 1;
        std::uint64_t base_seed = 0;
        std::uint64_t seed_stride = 1;
        IterativeOpts sched;
        RefineOpts refine;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("ensemble", "repeated reconstructions with statistics");
    app->add_option("--pattern", o->pattern)->required();
    app->add_option("--out", o->out)->required();
    app->add_option("--method", o->method, "iterative, refine-random or refine-transfer");
    app->add_option("--runs", o->runs);
    app->add_option("--jobs", o->jobs);
    app->add_option("--base-seed", o->base_seed);
    app->add_option("--seed-stride", o->seed_stride);
    o->sched.add(app);
    o->refine.add(app);
    Command c{app, {}, {}};
    c.validate = [o] {
        validating([&] { parse_method(o->method); });
        if (o->runs < 2) throw ConfigError("--runs must be at least 2");
        if (o->jobs < 1) throw ConfigError("--jobs must be at least 1");
        if (o->method == "refine-transfer") o->refine.init = "transfer";
        o->sched.validate();
        o->refine.validate();
        require_file(o->pattern, "--pattern");
        if (o->method == "refine-transfer") require_file(o->refine.params, "--params");
    };
    c.run = [o](std::ostream& log) {
        const auto pattern = read_pattern(o->pattern);
        EnsembleOptions opts;
        opts.method = parse_method(o->method);
        opts.runs = o->runs;
        opts.base_seed = o->base_seed;
        opts.seed_stride = o->seed_stride;
        opts.jobs = o->jobs;
        opts.iterative = o->sched.s;
        if (opts.method != EnsembleMethod::iterative) opts.refine = o->refine.config(pattern.grid(), o->base_seed);
        const auto report = ensemble_run(pattern, opts);
        ensure_dir(o->out);
        const fs::path out(o->out);
        write_text(out / "ensemble.json", report.to_json() + "\n");
        write_text(out / "histograms.csv", report.histogram_csv());
        Json cfgj{{"pattern", o->pattern}, {"out", o->out},        {"method", o->method},
                  {"runs", o->runs},       {"jobs", o->jobs},      {"base-seed", o->base_seed},
                  {"seed-stride", o->seed_stride}};
        o->sched.record(cfgj);
        o->refine.record(cfgj);
        Provenance p;
        p.file(o->pattern);
        if (opts.method == EnsembleMethod::refine_transfer) p.file(o->refine.params);
        Json seeds = Json::array();
        for (int i = 0; i < o->runs; ++i) seeds.push_back(o->base_seed + static_cast<std::uint64_t>(i) * o->seed_stride);
        p.seeds["runs"] = seeds;
        write_run_json(out / "run.json", "ensemble", cfgj, p);
        log << o->method << ": chi2 " << report.chi2.mean << " +- " << report.chi2.sd << ", excluded "
            << report.excluded << "\n";
    };
    return c;
}

Command make_fsw(CLI::App& root) {
    struct O {
        std::string pattern, compare, out;
        int shells = 0;
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("fsw", "Fourier spectral weight per spherical shell");
    app->add_option("--pattern", o->pattern)->required();
    app->add_option("--compare", o->compare, "second pattern for a per-shell comparison");
    app->add_option("--shells", o->shells, "shell count (default: half the smallest extent)");
    app->add_option("--out", o->out)->required();
    Command c{app, {}, {}};
    c.validate = [o] {
        if (o->shells < 0) throw ConfigError("--shells must be positive");
        require_file(o->pattern, "--pattern");
        if (!o->compare.empty()) require_file(o->compare, "--compare");
    };
    c.run = [o](std::ostream& log) {
        const auto a = read_pattern(o->pattern);
        const Grid3& g = a.grid();
        const int shells = o->shells > 0 ? o->shells : std::min({g.nx, g.ny, g.nz}) / 2;
        ensure_dir(o->out);
        const fs::path out(o->out);
        Provenance p;
        p.file(o->pattern);
        const auto fa = fourier_spectral_weight(a, shells);
        if (o->compare.empty()) {
            write_text(out / "fsw.csv", fa.to_csv());
        } else {
            p.file(o->compare);
            const auto b = read_pattern(o->compare);
            const auto rel = compare_fsw(a, b, shells);
            write_text(out / "fsw_compare.csv", fsw_comparison_csv(fa, fourier_spectral_weight(b, shells), rel));
            log << "max relative shell difference " << *std::max_element(rel.begin(), rel.end()) << "\n";
        }
        Json cfgj{{"pattern", o->pattern}, {"out", o->out}, {"shells", o->shells}};
        if (!o->compare.empty()) cfgj["compare"] = o->compare;
        write_run_json(out / "run.json", "fsw", cfgj, p);
    };
    return c;
}

Command make_convert(CLI::App& root) {
    struct O {
        std::string raw, cxv, dims, kind = "diffraction_amplitude", dtype = "f32", out, tag = "converted";
    };
    auto o = std::make_shared<O>();
    auto* app = root.add_subcommand("convert", "raw little-endian stack <-> .cxv");
    app->add_option("--raw", o->raw, "raw input stack (x fastest)");
    app->add_option("--cxv", o->cxv, ".cxv input to export as a raw stack");
    app->add_option("--dims", o->dims, "nx,ny,nz of the raw stack");
    app->add_option("--kind", o->kind, "complex_density, diffraction_amplitude or real");
    app->add_option("--dtype", o->dtype, "element type of the raw stack: f32, f64, c32 or c64");
    app->add_option("--source-tag", o->tag);
    app->add_option("--out", o->out)->required();
    Command c{app, {}, {}};
    c.validate = [o] {
        if (o->raw.empty() == o->cxv.empty()) throw ConfigError("give exactly one of --raw or --cxv");
        validating([&] {
            const DType d = parse_dtype(o->dtype);
            if (!o->raw.empty()) {
                const VolumeKind k = parse_kind(o->kind);
                if (is_complex(d) != (k == VolumeKind::complex_density)) {
                    throw Error(Errc::InvalidArgument, "dtype " + o->dtype + " does not fit kind " + o->kind);
                }
                parse_dims(o->dims);
            }
        });
        require_file(o->raw.empty() ? o->cxv : o->raw, o->raw.empty() ? "--cxv" : "--raw");
    };
    c.run = [o](std::ostream& log) {
        Provenance p;
        Json cfgj{{"out", o->out}, {"dtype", o->dtype}};
        if (!o->raw.empty()) {
            const Grid3 g = parse_dims(o->dims);
            const DType d = parse_dtype(o->dtype);
            const VolumeKind k = parse_kind(o->kind);
            const std::string bytes = read_file(o->raw);
            const std::size_t width = scalar_bytes(d);
            const std::size_t per_voxel = width * (is_complex(d) ? 2 : 1);
            if (bytes.size() != g.size() * per_voxel) {
                throw Error(bytes.size() < g.size() * per_voxel ? Errc::TruncatedPayload : Errc::DimensionMismatch,
                            "raw stack has " + std::to_string(bytes.size()) + " bytes, expected " +
                                std::to_string(g.size() * per_voxel));
            }
            std::vector<double> scalars(g.size() * (is_complex(d) ? 2 : 1));
            for (std::size_t i = 0; i < scalars.size(); ++i) {
                if (width == 4) {
                    float f;
                    std::memcpy(&f, bytes.data() + i * 4, 4);
                    scalars[i] = f;
                } else {
                    std::memcpy(&scalars[i], bytes.data() + i * 8, 8);
                }
            }
            VolumeFile f;
            if (k == VolumeKind::complex_density) {
                ComplexVolume v(g);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] = {scalars[2 * i], scalars[2 * i + 1]};
                f = make_volume_file(std::move(v), d, o->tag);
            } else if (k == VolumeKind::diffraction_amplitude) {
                f = make_volume_file(DiffractionPattern(RealVolume(g, std::move(scalars)), o->tag), d);
            } else {
                f = make_volume_file(RealVolume(g, std::move(scalars)), d, o->tag);
            }
            write_volume(f, o->out);
            p.file(o->raw);
            cfgj.update(Json{{"raw", o->raw}, {"dims", o->dims}, {"kind", o->kind}, {"source-tag", o->tag}});
        } else {
            const auto f = read_volume(o->cxv);
            const DType d = parse_dtype(o->dtype);
            const bool want_complex = f.kind == VolumeKind::complex_density;
            if (is_complex(d) != want_complex) {
                throw ConfigError("dtype " + o->dtype + " does not fit stored kind " + std::string(to_string(f.kind)));
            }
            std::vector<double> scalars;
            if (want_complex) {
                for (const auto& z : f.complex().values()) {
                    scalars.push_back(z.real());
                    scalars.push_back(z.imag());
                }
            } else {
                const RealVolume& r = f.kind == VolumeKind::real ? f.real() : f.pattern().amplitude;
                scalars.assign(r.values().begin(), r.values().end());
            }
            std::string bytes(scalars.size() * scalar_bytes(d), '\0');
            for (std::size_t i = 0; i < scalars.size(); ++i) {
                if (scalar_bytes(d) == 4) {
                    const float v = static_cast<float>(scalars[i]);
                    std::memcpy(bytes.data() + i * 4, &v, 4);
                } else {
                    std::memcpy(bytes.data() + i * 8, &scalars[i], 8);
                }
            }
            write_text(o->out, bytes);
            p.file(o->cxv);
            cfgj["cxv"] = o->cxv;
        }
        write_run_json(o->out + ".run.json", "convert", cfgj, p);
        log << "wrote " << o->out << "\n";
    };
    return c;
}

// Expands `--config file.json` into ordinary flags placed before the remaining arguments, so
// anything given explicitly on the command line wins. A run.json is accepted directly.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    std::string config_path;
    std::size_t sub_pos = std::string::npos;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[++i];
            continue;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            continue;
        }
        if (i == 1) sub_pos = out.size();
        out.push_back(args[i]);
    }
    if (config_path.empty()) return out;
    if (sub_pos == std::string::npos) throw ConfigError("--config needs a command before it");

    Json j;
    try {
        j = Json::parse(read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + config_path + ": " + e.what());
    }
    if (j.contains("command") && j.contains("config")) {
        if (j["command"] != out[sub_pos]) {
            throw ConfigError("config " + config_path + " records command '" + j["command"].get<std::string>() +
                              "', not '" + out[sub_pos] + "'");
        }
        j = j["config"];
    }
    if (!j.is_object()) throw ConfigError("config " + config_path + " must be a JSON object");
    std::vector<std::string> flags;
    for (const auto& [key, value] : j.items()) {
        flags.push_back("--" + key);
        if (value.is_string()) {
            flags.push_back(value.get<std::string>());
        } else if (value.is_number() || value.is_boolean()) {
            flags.push_back(value.dump());
        } else {
            throw ConfigError("config key '" + key + "' must be a string, number or boolean");
        }
    }
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, flags.begin(), flags.end());
    return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App root{"Phase retrieval for 3D coherent diffraction patterns", "cxdi"};
    root.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    root.require_subcommand(1);
    std::vector<Command> commands{make_generate(root), make_train(root),    make_predict(root),
                                  make_refine(root),   make_iterative(root), make_ensemble(root),
                                  make_fsw(root),      make_convert(root)};
    bool computing = false;
    try {
        auto expanded = expand_config(args);
        std::vector<std::string> rev(expanded.rbegin(), expanded.rend());
        rev.pop_back();  // program name
        try {
            root.parse(rev);
        } catch (const CLI::CallForHelp&) {
            out << root.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            if (e.get_exit_code() == 0) {
                out << root.help();
                return kExitOk;
            }
            throw ConfigError(e.what());
        }
        for (auto& c : commands) {
            if (!c.app->parsed()) continue;
            c.validate();
            computing = true;
            c.run(out);
        }
        return kExitOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        if (is_io_error(e.code())) return kExitIo;
        return computing ? kExitNumerical : kExitConfig;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return computing ? kExitNumerical : kExitConfig;
    }
}

}  // namespace cxdi
