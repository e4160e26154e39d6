// Command-line entry point: complexity counting, kernel policy, gradient
// checks, training, evaluation, channel-weight export and benchmarks.
//
// Exit codes: 0 success, 1 check failure, 2 input error, 3 numerical abort.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cak/cak.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kToolVersion = "1.0.0";

enum Exit : int { kOk = 0, kCheckFailed = 1, kInputError = 2, kNumericalAbort = 3 };

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Attention flags shared by several subcommands.
struct AttentionFlags {
    std::string kind = "none";
    std::size_t r = 16;
    std::size_t g = 4;
    std::optional<std::size_t> k;
    bool adaptive = false;
    std::int64_t gamma = 2;
    std::int64_t b = 1;
    std::string tie_break = "down";

    CLI::Option* kind_opt = nullptr;
    CLI::Option *r_opt = nullptr, *g_opt = nullptr, *k_opt = nullptr, *adaptive_opt = nullptr;
    CLI::Option *gamma_opt = nullptr, *b_opt = nullptr, *tie_opt = nullptr;

    void add(CLI::App* app, bool kind_required = false) {
        kind_opt = app->add_option("--attn", kind, "none|se|se-var1|se-var2|se-var3|se-gc|eca-ns|eca")
                       ->check(CLI::IsMember({"none", "se", "se-var1", "se-var2", "se-var3", "se-gc", "eca-ns", "eca"}));
        if (kind_required) kind_opt->required();
        r_opt = app->add_option("--r", r, "SE reduction ratio");
        g_opt = app->add_option("--g", g, "SE-GC group count");
        k_opt = app->add_option("--k", k, "odd kernel size for eca / eca-ns (default: adaptive)");
        adaptive_opt = app->add_flag("--adaptive", adaptive, "choose k from the channel count");
        gamma_opt = app->add_option("--gamma", gamma, "kernel policy gamma");
        b_opt = app->add_option("--b", b, "kernel policy b");
        tie_opt = app->add_option("--tie-break", tie_break, "down|up")->check(CLI::IsMember({"down", "up"}));
    }

    bool given() const {
        for (const CLI::Option* o : {kind_opt, r_opt, g_opt, k_opt, adaptive_opt, gamma_opt, b_opt, tie_opt})
            if (o && o->count()) return true;
        return false;
    }

    /// Overrides the fields of `a` whose flags were given on the command line.
    void apply(cak::AttentionConfig& a) const {
        const auto cfg = config();
        if (kind_opt->count()) a.kind = cfg.kind;
        if (r_opt->count()) a.reduction = cfg.reduction;
        if (g_opt->count()) a.groups = cfg.groups;
        if (k_opt->count() || adaptive_opt->count()) a.kernel = cfg.kernel;
        if (gamma_opt->count()) a.policy.gamma = cfg.policy.gamma;
        if (b_opt->count()) a.policy.b = cfg.policy.b;
        if (tie_opt->count()) a.policy.tie_break = cfg.policy.tie_break;
    }

    cak::AttentionConfig config(std::size_t channels = 0) const {
        if (k && adaptive) throw InputError("--k and --adaptive are mutually exclusive");
        cak::AttentionConfig cfg;
        cfg.kind = cak::parse_attention_kind(kind);
        cfg.channels = channels;
        cfg.reduction = r;
        cfg.groups = g;
        cfg.kernel = adaptive ? std::nullopt : k;
        cfg.policy = {gamma, b, tie_break == "up" ? cak::TieBreak::up : cak::TieBreak::down};
        return cfg;
    }
};

json attention_json(const cak::AttentionConfig& a) {
    return {{"kind", std::string(cak::to_string(a.kind))},
            {"r", a.reduction},
            {"g", a.groups},
            {"k", a.kernel ? json(*a.kernel) : json("adaptive")},
            {"gamma", a.policy.gamma},
            {"b", a.policy.b},
            {"tie_break", a.policy.tie_break == cak::TieBreak::down ? "down" : "up"}};
}

struct SynthFlags {
    std::size_t classes = 10;
    std::size_t per_class = 200;
    std::size_t val_per_class = 50;
    std::size_t size = 16;
    double noise = 0.6;
    std::uint64_t data_seed = 0;

    void add(CLI::App* app) {
        app->add_option("--classes", classes, "synthetic classes");
        app->add_option("--per-class", per_class, "synthetic training images per class");
        app->add_option("--val-per-class", val_per_class, "synthetic validation images per class");
        app->add_option("--size", size, "synthetic image side length");
        app->add_option("--noise", noise, "synthetic pixel noise");
        app->add_option("--data-seed", data_seed, "synthetic dataset seed");
    }

    cak::SynthOptions options(const std::string& split) const {
        cak::SynthOptions o;
        o.num_classes = classes;
        o.n_per_class = split == "train" ? per_class : val_per_class;
        o.size = size;
        o.noise = noise;
        o.seed = data_seed;
        o.split = split;
        return o;
    }

    json to_json() const {
        return {{"classes", classes}, {"per_class", per_class}, {"val_per_class", val_per_class},
                {"size", size},       {"noise", noise},         {"data_seed", data_seed}};
    }
};

struct Manifest {
    json doc;

    Manifest(const std::string& subcommand, const std::vector<std::string>& argv) {
        doc = {{"tool", "cak"}, {"version", kToolVersion}, {"subcommand", subcommand}, {"argv", argv},
               {"config", json::object()}, {"artifacts", json::object()}};
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw InputError("cannot write manifest '" + path + "'");
        out << doc.dump(2) << '\n';
    }

    /// To `path` when set, otherwise as a single line on stderr.
    void emit(const std::string& path) const {
        if (!path.empty())
            write(path);
        else
            std::cerr << "manifest: " << doc.dump() << '\n';
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path + "'");
    out << text;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------------------

int cmd_count(const std::string& layout_path, const AttentionFlags& af, const std::string& convention, bool csv,
              const std::string& out_path, Manifest& manifest) {
    const auto layout = cak::load_layout(layout_path);
    const auto attn = af.config();
    const auto conv = convention == "mac1" ? cak::FlopConvention::mac1 : cak::FlopConvention::mac2;
    const auto report = cak::count_network_params(layout, attn, conv);
    const std::string text = csv ? cak::to_csv(report) : cak::to_text(report);
    if (out_path.empty())
        std::cout << text;
    else
        write_text(out_path, text);
    manifest.doc["config"] = {{"layout", layout_path}, {"attention", attention_json(attn)}, {"convention", convention},
                              {"format", csv ? "csv" : "text"}};
    if (!out_path.empty()) manifest.doc["artifacts"]["report"] = out_path;
    return kOk;
}

int cmd_kpolicy(const std::vector<std::size_t>& channels, bool grid, const AttentionFlags& af, Manifest& manifest) {
    const auto policy = af.config().policy;
    std::vector<std::size_t> values = channels;
    if (grid)
        for (std::size_t e = 0; e <= 20; ++e) values.push_back(std::size_t{1} << e);
    if (values.empty()) throw InputError("kpolicy needs --channels or --grid");
    if (values.size() == 1 && !grid) {
        std::cout << cak::adaptive_kernel_size(values[0], policy) << '\n';
    } else {
        std::cout << "channels,k\n";
        for (std::size_t c : values) std::cout << c << ',' << cak::adaptive_kernel_size(c, policy) << '\n';
    }
    manifest.doc["config"] = {{"channels", values}, {"gamma", policy.gamma}, {"b", policy.b},
                              {"tie_break", policy.tie_break == cak::TieBreak::down ? "down" : "up"}};
    return kOk;
}

void print_gradcheck(const std::string& label, const std::vector<cak::GradCheckResult>& results) {
    for (const auto& r : results) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%-24s %-10s %8zu %8zu %12.3e %s\n", label.c_str(), r.group.c_str(), r.size,
                      r.checked, r.max_rel_error, r.passed ? "PASS" : "FAIL");
        std::cout << buf;
    }
}

int cmd_gradcheck(const AttentionFlags& af, std::size_t channels, bool primitives, const cak::GradCheckOptions& opt,
                  Manifest& manifest) {
    bool ok = true;
    std::cout << "target                   group          size  checked  max_rel_err status\n";
    if (primitives) {
        for (const auto& pc : cak::primitive_cases(opt.seed)) {
            const auto res = cak::gradient_check(pc.program, pc.inputs, opt);
            print_gradcheck(pc.name, res);
            ok = ok && cak::all_passed(res);
        }
    }
    if (af.given() || !primitives) {
        const auto cfg = af.config(channels);
        const auto res = cak::attention_gradcheck(cfg, opt);
        print_gradcheck(std::string(cak::to_string(cfg.kind)), res);
        ok = ok && cak::all_passed(res);
        manifest.doc["config"]["attention"] = attention_json(cfg);
    }
    std::cout << (ok ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
    manifest.doc["config"]["channels"] = channels;
    manifest.doc["config"]["primitives"] = primitives;
    manifest.doc["config"]["step"] = opt.step;
    manifest.doc["config"]["samples"] = opt.samples;
    manifest.doc["config"]["tolerance"] = opt.tolerance;
    manifest.doc["config"]["corrupt_adjoint"] = opt.adjoint_fault;
    manifest.doc["seed"] = opt.seed;
    return ok ? kOk : kCheckFailed;
}

cak::NetworkSpec resolve_spec(const std::string& spec_path, const AttentionFlags& af) {
    cak::NetworkSpec spec;
    if (!spec_path.empty()) {
        std::ifstream in(spec_path);
        if (!in) throw InputError("cannot open spec '" + spec_path + "'");
        spec = cak::parse_network_spec(in);
    }
    af.apply(spec.attention);
    spec.validate();
    return spec;
}

struct DataSource {
    std::string data;
    std::string val;
    bool synth = false;
    SynthFlags synth_flags;

    cak::Dataset train_set() const {
        if (synth) return cak::synth_dataset(synth_flags.options("train"));
        if (data.empty()) throw InputError("need --data or --synth");
        return cak::load_dataset(data);
    }
    std::optional<cak::Dataset> val_set() const {
        if (synth) return cak::synth_dataset(synth_flags.options("val"));
        if (val.empty()) return std::nullopt;
        return cak::load_dataset(val);
    }
    /// Dataset used by evaluation-style commands.
    cak::Dataset eval_set() const {
        if (synth) return cak::synth_dataset(synth_flags.options("val"));
        if (data.empty()) throw InputError("need --data or --synth");
        return cak::load_dataset(data);
    }
    json to_json() const {
        json j = {{"synth", synth}};
        if (synth) j["synth_options"] = synth_flags.to_json();
        else {
            j["data"] = data;
            if (!val.empty()) j["val"] = val;
        }
        return j;
    }
};

int cmd_train(const cak::NetworkSpec& spec, const DataSource& src, const cak::TrainConfig& cfg,
              cak::AttentionInit attn_init, const std::string& out_dir, Manifest& manifest) {
    if (out_dir.empty()) throw InputError("train needs --out");
    fs::create_directories(out_dir);
    const cak::Dataset train_set = src.train_set();
    const auto val_set = src.val_set();
    if (train_set.num_classes != spec.num_classes)
        throw InputError("dataset has " + std::to_string(train_set.num_classes) + " classes, spec has " +
                         std::to_string(spec.num_classes));
    cak::Network net(spec, cfg.seed, attn_init);
    const std::string metrics = (fs::path(out_dir) / "metrics.csv").string();
    const std::string ckpt = (fs::path(out_dir) / "model.cakc").string();
    manifest.doc["config"] = {{"spec", cak::to_text(spec)},
                              {"data", src.to_json()},
                              {"lr", cfg.lr},
                              {"momentum", cfg.momentum},
                              {"weight_decay", cfg.weight_decay},
                              {"epochs", cfg.epochs},
                              {"batch", cfg.batch},
                              {"lr_factor", cfg.lr_factor},
                              {"milestones", cfg.milestones},
                              {"attn_init", attn_init == cak::AttentionInit::zero ? "zero" : "uniform"}};
    manifest.doc["seed"] = cfg.seed;
    manifest.doc["artifacts"] = {{"metrics", metrics}, {"checkpoint", ckpt}};
    std::cerr << "params: backbone=" << net.param_count(cak::ParamRole::backbone)
              << " attention=" << net.param_count(cak::ParamRole::attention) << '\n';
    cak::TrainReport report;
    try {
        report = cak::train(net, train_set, val_set ? &*val_set : nullptr, cfg, [](const cak::EpochMetrics& m) {
            std::cerr << "epoch " << m.epoch + 1 << " lr=" << format_double(m.lr)
                      << " train_loss=" << format_double(m.train_loss) << " train_top1=" << format_double(m.train_top1);
            if (m.has_val) std::cerr << " val_loss=" << format_double(m.val.loss) << " val_top1=" << format_double(m.val.top1);
            std::cerr << '\n';
        });
    } catch (const cak::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        write_text(metrics, cak::to_csv(report));
        return kNumericalAbort;
    }
    write_text(metrics, cak::to_csv(report));
    cak::save_checkpoint(net, ckpt);
    if (!report.epochs.empty()) {
        const auto& last = report.last();
        std::cout << "final train_top1=" << format_double(last.train_top1);
        if (last.has_val) std::cout << " val_top1=" << format_double(last.val.top1);
        std::cout << '\n';
    }
    return kOk;
}

int cmd_init(const cak::NetworkSpec& spec, std::uint64_t seed, cak::AttentionInit attn_init, const std::string& out,
             Manifest& manifest) {
    if (out.empty()) throw InputError("init needs --out");
    const cak::Network net(spec, seed, attn_init);
    cak::save_checkpoint(net, out);
    manifest.doc["config"] = {{"spec", cak::to_text(spec)},
                              {"attn_init", attn_init == cak::AttentionInit::zero ? "zero" : "uniform"}};
    manifest.doc["seed"] = seed;
    manifest.doc["artifacts"]["checkpoint"] = out;
    return kOk;
}

cak::Network open_checkpoint(const std::string& path) {
    if (!fs::exists(path)) throw InputError("checkpoint '" + path + "' does not exist");
    return cak::load_checkpoint(path);
}

int cmd_eval(const std::string& ckpt, const DataSource& src, Manifest& manifest) {
    const cak::Network net = open_checkpoint(ckpt);
    const auto ds = src.eval_set();
    const auto m = cak::evaluate(net, ds);
    std::printf("samples,loss,top1,top5\n%zu,%.17g,%.17g,", m.count, m.loss, m.top1);
    if (m.has_top5) std::printf("%.17g", m.top5);
    std::printf("\n");
    manifest.doc["config"] = {{"checkpoint", ckpt}, {"data", src.to_json()}};
    return kOk;
}

int cmd_export(const std::string& ckpt, const DataSource& src, const std::string& out, Manifest& manifest) {
    const cak::Network net = open_checkpoint(ckpt);
    const auto ds = src.eval_set();
    const std::string csv = cak::export_channel_weights(net, ds);
    if (out.empty())
        std::cout << csv;
    else
        write_text(out, csv);
    manifest.doc["config"] = {{"checkpoint", ckpt}, {"data", src.to_json()}};
    if (!out.empty()) manifest.doc["artifacts"]["weights"] = out;
    return kOk;
}

int cmd_synth(const SynthFlags& sf, const std::string& split, const std::string& out, Manifest& manifest) {
    if (out.empty()) throw InputError("synth needs --out");
    const auto ds = cak::synth_dataset(sf.options(split));
    cak::save_dataset(ds, out);
    manifest.doc["config"] = sf.to_json();
    manifest.doc["config"]["split"] = split;
    manifest.doc["artifacts"]["dataset"] = out;
    std::cout << "wrote " << ds.size() << " samples to " << out << '\n';
    return kOk;
}

int cmd_bench(const AttentionFlags& af, std::size_t channels, std::size_t spatial, std::size_t batch,
              std::size_t iters, std::size_t warmup, std::uint64_t seed, Manifest& manifest) {
    if (iters == 0) throw InputError("--iters must be positive");
    const auto cfg = af.config(channels);
    cfg.validate();
    cak::Rng rng(seed);
    const auto params = cak::init_attention_params(cfg, rng);
    cak::Tensor x(cak::Shape{batch, channels, spatial, spatial});
    for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
    std::vector<double> us;
    double sink = 0.0;
    for (std::size_t i = 0; i < warmup + iters; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = cak::attention_forward(cfg, params, x);
        const auto t1 = std::chrono::steady_clock::now();
        sink += r.omega[0];
        if (i >= warmup) us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    std::vector<double> sorted = us;
    std::sort(sorted.begin(), sorted.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    };
    double mean = 0.0;
    for (double v : us) mean += v;
    mean /= static_cast<double>(us.size());
    double var = 0.0;
    for (double v : us) var += (v - mean) * (v - mean);
    var = us.size() > 1 ? var / static_cast<double>(us.size() - 1) : 0.0;
    std::printf("variant,channels,spatial,batch,iters,median_us,p95_us,mean_us,stddev_us\n");
    std::printf("%s,%zu,%zu,%zu,%zu,%.3f,%.3f,%.3f,%.3f\n", std::string(cak::to_string(cfg.kind)).c_str(), channels,
                spatial, batch, iters, quantile(0.5), quantile(0.95), mean, std::sqrt(var));
    if (!std::isfinite(sink)) return kNumericalAbort;
    manifest.doc["config"] = {{"attention", attention_json(cfg)}, {"channels", channels}, {"spatial", spatial},
                              {"batch", batch},  {"iters", iters},  {"warmup", warmup}};
    manifest.doc["seed"] = seed;
    return kOk;
}

int run(const std::vector<std::string>& args);

int cmd_replay(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw InputError(std::string("bad manifest: ") + e.what());
    }
    if (!doc.contains("argv") || !doc["argv"].is_array()) throw InputError("manifest has no argv");
    const auto argv = doc["argv"].get<std::vector<std::string>>();
    if (argv.size() >= 2 && argv[1] == "replay") throw InputError("refusing to replay a replay manifest");
    return run(argv);
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"Channel attention toolkit"};
    app.set_help_all_flag("--help-all");
    app.require_subcommand(1);
    app.footer("Env: CAK_THREADS bounds the worker count.\nExit codes: 0 ok, 1 check failed, 2 input error, 3 numerical abort.");

    std::string manifest_path;
    auto add_manifest = [&](CLI::App* sub) {
        sub->add_option("--manifest", manifest_path, "write the run manifest here (default: stderr)");
    };

    // count
    auto* count = app.add_subcommand("count", "attention parameter and FLOP counts over a block layout");
    std::string layout_path, convention = "mac2", out_file;
    bool csv = false;
    AttentionFlags count_attn;
    count->add_option("--layout", layout_path, "layout file, one channels=<C> line per block")->required();
    count_attn.add(count, true);
    count->add_option("--convention", convention, "mac2|mac1")->check(CLI::IsMember({"mac2", "mac1"}));
    count->add_flag("--csv", csv, "emit CSV breakdown");
    count->add_option("--out", out_file, "write report to file");
    add_manifest(count);

    // kpolicy
    auto* kpolicy = app.add_subcommand("kpolicy", "adaptive kernel size for a channel count");
    std::vector<std::size_t> kp_channels;
    bool grid = false;
    AttentionFlags kp_attn;
    kpolicy->add_option("--channels", kp_channels, "channel count(s)")->delimiter(',');
    kpolicy->add_flag("--grid", grid, "print k for C = 2^0 .. 2^20");
    kpolicy->add_option("--gamma", kp_attn.gamma, "gamma");
    kpolicy->add_option("--b", kp_attn.b, "b");
    kpolicy->add_option("--tie-break", kp_attn.tie_break, "down|up")->check(CLI::IsMember({"down", "up"}));
    add_manifest(kpolicy);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    AttentionFlags gc_attn;
    gc_attn.kind = "eca";
    std::size_t gc_channels = 16;
    bool gc_primitives = false;
    cak::GradCheckOptions gc_opt;
    gc_attn.add(gradcheck);
    gradcheck->add_option("--channels,-C", gc_channels, "channel count");
    gradcheck->add_option("--seed", gc_opt.seed, "seed");
    gradcheck->add_option("--samples", gc_opt.samples, "coordinates per parameter group");
    gradcheck->add_option("--step", gc_opt.step, "finite-difference step");
    gradcheck->add_option("--tolerance", gc_opt.tolerance, "max relative error");
    gradcheck->add_flag("--primitives", gc_primitives, "check every tensor primitive");
    gradcheck->add_flag("--corrupt-adjoint", gc_opt.adjoint_fault, "negative control: perturb the sigmoid adjoint");
    add_manifest(gradcheck);

    // Shared training/eval flags.
    DataSource src;
    std::string spec_path, out_dir;
    AttentionFlags net_attn, init_attn;
    cak::TrainConfig tcfg;
    std::size_t lr_period = 0;
    std::string attn_init = "uniform";
    auto add_data = [&](CLI::App* sub) {
        sub->add_option("--data", src.data, "dataset file");
        sub->add_flag("--synth", src.synth, "use the procedural dataset");
        src.synth_flags.add(sub);
    };

    auto* trainc = app.add_subcommand("train", "train a micro residual network");
    trainc->add_option("--spec", spec_path, "network spec file");
    net_attn.add(trainc);
    add_data(trainc);
    trainc->add_option("--val", src.val, "validation dataset file");
    trainc->add_option("--seed", tcfg.seed, "initialization and shuffling seed");
    trainc->add_option("--epochs", tcfg.epochs, "epochs");
    trainc->add_option("--lr", tcfg.lr, "initial learning rate");
    trainc->add_option("--batch", tcfg.batch, "batch size");
    trainc->add_option("--momentum", tcfg.momentum, "SGD momentum");
    trainc->add_option("--weight-decay", tcfg.weight_decay, "L2 weight decay");
    trainc->add_option("--lr-factor", tcfg.lr_factor, "learning-rate decay factor");
    auto* milestones_opt = trainc->add_option("--milestones", tcfg.milestones, "epochs at which lr decays")->delimiter(',');
    trainc->add_option("--lr-period", lr_period, "decay every N epochs (overrides --milestones)");
    trainc->add_option("--attn-init", attn_init, "uniform|zero")->check(CLI::IsMember({"uniform", "zero"}));
    trainc->add_option("--out", out_dir, "output directory")->required();
    add_manifest(trainc);
    (void)milestones_opt;

    auto* initc = app.add_subcommand("init", "write an untrained checkpoint");
    std::string init_out;
    std::uint64_t init_seed = 0;
    initc->add_option("--spec", spec_path, "network spec file");
    init_attn.add(initc);
    initc->add_option("--seed", init_seed, "initialization seed");
    initc->add_option("--attn-init", attn_init, "uniform|zero")->check(CLI::IsMember({"uniform", "zero"}));
    initc->add_option("--out", init_out, "checkpoint path")->required();
    add_manifest(initc);

    auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt;
    evalc->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    add_data(evalc);
    add_manifest(evalc);

    auto* exportc = app.add_subcommand("export-weights", "per-class mean channel weights as CSV");
    std::string export_out;
    exportc->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    add_data(exportc);
    exportc->add_option("--out", export_out, "CSV path (default stdout)");
    add_manifest(exportc);

    auto* synthc = app.add_subcommand("synth", "write a procedural dataset file");
    std::string synth_out, synth_split = "train";
    src.synth_flags.add(synthc);
    synthc->add_option("--split", synth_split, "train|val")->check(CLI::IsMember({"train", "val"}));
    synthc->add_option("--out", synth_out, "dataset path")->required();
    add_manifest(synthc);

    auto* bench = app.add_subcommand("bench", "time attention forward passes");
    AttentionFlags bench_attn;
    bench_attn.kind = "eca";
    std::size_t bench_channels = 2048, bench_spatial = 7, bench_batch = 1, bench_iters = 100, bench_warmup = 10;
    std::uint64_t bench_seed = 0;
    bench_attn.add(bench);
    bench->add_option("--channels,-C", bench_channels, "channels");
    bench->add_option("--spatial", bench_spatial, "feature map side length");
    bench->add_option("--batch", bench_batch, "batch size");
    bench->add_option("--iters", bench_iters, "timed iterations");
    bench->add_option("--warmup", bench_warmup, "untimed iterations");
    bench->add_option("--seed", bench_seed, "seed");
    add_manifest(bench);

    auto* replay = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    std::string replay_path;
    replay->add_option("manifest", replay_path, "manifest JSON")->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInputError;
    }

    CLI::App* sub = app.get_subcommands().front();
    Manifest manifest(sub->get_name(), args);
    try {
        int code = kOk;
        if (sub == replay) return cmd_replay(replay_path);
        if (sub == count) {
            code = cmd_count(layout_path, count_attn, convention, csv, out_file, manifest);
        } else if (sub == kpolicy) {
            code = cmd_kpolicy(kp_channels, grid, kp_attn, manifest);
        } else if (sub == gradcheck) {
            code = cmd_gradcheck(gc_attn, gc_channels, gc_primitives, gc_opt, manifest);
        } else if (sub == trainc) {
            if (lr_period) tcfg.milestones = cak::step_milestones(lr_period, tcfg.epochs);
            const auto spec = resolve_spec(spec_path, net_attn);
            if (manifest_path.empty()) manifest_path = (fs::path(out_dir) / "manifest.json").string();
            code = cmd_train(spec, src, tcfg, attn_init == "zero" ? cak::AttentionInit::zero : cak::AttentionInit::uniform,
                             out_dir, manifest);
        } else if (sub == initc) {
            const auto spec = resolve_spec(spec_path, init_attn);
            code = cmd_init(spec, init_seed, attn_init == "zero" ? cak::AttentionInit::zero : cak::AttentionInit::uniform,
                            init_out, manifest);
        } else if (sub == evalc) {
            code = cmd_eval(ckpt, src, manifest);
        } else if (sub == exportc) {
            if (manifest_path.empty() && !export_out.empty()) manifest_path = export_out + ".manifest.json";
            code = cmd_export(ckpt, src, export_out, manifest);
        } else if (sub == synthc) {
            if (manifest_path.empty()) manifest_path = synth_out + ".manifest.json";
            code = cmd_synth(src.synth_flags, synth_split, synth_out, manifest);
        } else if (sub == bench) {
            code = cmd_bench(bench_attn, bench_channels, bench_spatial, bench_batch, bench_iters, bench_warmup,
                             bench_seed, manifest);
        }
        manifest.doc["exit_code"] = code;
        manifest.emit(manifest_path);
        return code;
    } catch (const cak::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return kNumericalAbort;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const cak::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInputError;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInputError;
    }
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args);
}
