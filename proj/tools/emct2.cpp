// emct2: command-line front end for dictionary-based T2 mapping.
//
//   emct2 simdict --t2 10:300:1 --b1 0.7:1.3:0.02 --echoes 10 --te1 15 --dte 15 --out dict.emcd
//   emct2 phantom --spec phantom.json --seed 7 --out-dir truth/
//   emct2 fit     --dict dict.emcd --stack truth/stack.emct --method fast --out-dir fit/
//   emct2 eval    --pred fit/ --ref truth/ --ranges 40:160:40 --out report.json
//   emct2 import  --format pgm --out stack.emct echo01.pgm echo02.pgm ...
//
// Exit codes: 0 success, 2 validation, 3 I/O, 4 numeric degeneracy.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emct2/emct2.hpp"

namespace fs = std::filesystem;
using namespace emct2;

namespace {

struct ProtocolFlags {
    int echoes = 10;
    double te1 = 15.0;
    double dte = 15.0;
    double refocus = 180.0;
    double tr = 4100.0;
    double t1 = 1000.0;
    std::string select;

    void attach(CLI::App* app) {
        app->add_option("--echoes", echoes, "Echo train length")->capture_default_str();
        app->add_option("--te1", te1, "First echo time [ms]")->capture_default_str();
        app->add_option("--dte", dte, "Echo spacing [ms]")->capture_default_str();
        app->add_option("--refocus", refocus, "Nominal refocusing angle [deg]")->capture_default_str();
        app->add_option("--tr", tr, "Repetition time [ms]")->capture_default_str();
        app->add_option("--t1", t1, "T1 assumed in simulation [ms]")->capture_default_str();
        app->add_option("--select", select, "Retained 1-based echoes, e.g. 1,3,5 (default: all)");
    }

    SequenceProtocol protocol() const {
        SequenceProtocol p;
        p.n_echoes = echoes;
        p.te1 = te1;
        p.delta_te = dte;
        p.nominal_refocus_deg = refocus;
        p.tr = tr;
        p.t1_assumed = t1;
        p.validate();
        if (!select.empty()) p = p.with_selection(parse_index_list(select));
        if (static_cast<int>(p.echo_selection.size()) == p.n_echoes) p.echo_selection.clear();
        return p;
    }
};

void write_text(const fs::path& path, const std::string& text) {
    binary::write_file(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::vector<std::string> option_names(const CLI::App* app) {
    std::vector<std::string> names;
    for (const CLI::Option* opt : app->get_options()) {
        for (const auto& n : opt->get_lnames()) names.push_back(n);
    }
    return names;
}

// --- simdict ---------------------------------------------------------------------------

struct SimdictArgs {
    std::string t2 = "10:300:1";
    std::string b1 = "0.7:1.3:0.02";
    ProtocolFlags protocol;
    unsigned threads = 0;
    std::string out;
};

int run_simdict(const SimdictArgs& a) {
    const auto t2 = parse_range_triplet(a.t2);
    const auto b1 = parse_range_triplet(a.b1);
    const DictionaryGrid grid{arithmetic_range(t2.lo, t2.hi, t2.step), arithmetic_range(b1.lo, b1.hi, b1.step)};
    const auto protocol = a.protocol.protocol();
    const auto start = std::chrono::steady_clock::now();
    const auto dict = build_dictionary(grid, protocol, {a.threads, {}});
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_dictionary(dict, a.out);
    std::printf("dictionary: %zu T2 x %zu B1 = %zu rows, %zu echoes, built in %.3f s -> %s\n", grid.t2_values.size(),
                grid.b1_values.size(), dict.rows(), dict.echoes, secs, a.out.c_str());
    return 0;
}

// --- phantom ---------------------------------------------------------------------------

struct PhantomArgs {
    std::string spec;
    std::optional<uint64_t> seed;
    std::optional<double> noise_sigma;
    std::string grid_t2 = "10:300:1";
    std::string grid_b1 = "0.7:1.3:0.02";
    ProtocolFlags protocol;
    unsigned threads = 0;
    std::string out_dir;
};

int run_phantom(const PhantomArgs& a) {
    PhantomSpec spec;
    if (!a.spec.empty()) spec = phantom_spec_from_json(load_json_file(a.spec));
    if (a.seed) spec.seed = *a.seed;
    if (a.noise_sigma) spec.noise_sigma = *a.noise_sigma;
    const auto t2 = parse_range_triplet(a.grid_t2);
    const auto b1 = parse_range_triplet(a.grid_b1);
    const DictionaryGrid coverage{arithmetic_range(t2.lo, t2.hi, t2.step), arithmetic_range(b1.lo, b1.hi, b1.step)};

    const auto truth = make_phantom(spec, coverage);
    const auto protocol = a.protocol.protocol();
    SequenceProtocol full = protocol;
    full.echo_selection.clear();
    ForwardOptions fwd;
    fwd.noise_sigma = spec.noise_sigma;
    fwd.noise_model = spec.noise_model;
    fwd.seed = spec.seed;
    fwd.threads = a.threads;
    MESEStack stack = forward_simulate(truth, full, fwd);
    if (!protocol.echo_selection.empty()) stack = select_echoes(stack, protocol.echo_selection);

    const fs::path dir(a.out_dir);
    save_maps(truth, dir);
    save_tensor_file(stack_to_file(stack), dir / "stack.emct");
    std::printf("phantom: %zu x %zu x %zu, %zu echoes, seed %llu -> %s\n", spec.slices, spec.rows, spec.cols,
                stack.echoes(), static_cast<unsigned long long>(spec.seed), dir.string().c_str());
    return 0;
}

// --- fit -------------------------------------------------------------------------------

struct FitArgs {
    std::string dict;
    std::string stack;
    std::string mask;
    std::string method = "exact";
    unsigned threads = 0;
    std::string out_dir;
};

int run_fit(const FitArgs& a) {
    const auto dict = load_dictionary(a.dict);
    MESEStack stack = stack_from_file(load_tensor_file(a.stack));
    if (!a.mask.empty()) stack.mask = mask_from_volume(load_tensor_file(a.mask).tensor);
    FitOptions options;
    options.method = parse_fit_method(a.method);
    options.threads = a.threads;
    FitStats stats;
    const auto start = std::chrono::steady_clock::now();
    const auto maps = fit_maps(stack, dict, options, &stats);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path dir(a.out_dir);
    save_maps(maps, dir, stack.protocol);
    const nlohmann::json summary{{"method", a.method},
                                 {"fitted_pixels", stats.fitted_pixels},
                                 {"distance_evaluations", stats.distance_evaluations},
                                 {"fallback_pixels", stats.fallback_pixels},
                                 {"degenerate_pixels", stats.degenerate_pixels},
                                 {"dictionary_checksum", maps.provenance.dictionary_checksum}};
    write_text(dir / "fit.json", summary.dump(2) + "\n");
    std::printf("fit (%s): %zu pixels, %zu distance evaluations, %zu fallback, %zu degenerate, %.2f s -> %s\n",
                a.method.c_str(), stats.fitted_pixels, stats.distance_evaluations, stats.fallback_pixels,
                stats.degenerate_pixels, secs, dir.string().c_str());
    return 0;
}

// --- eval ------------------------------------------------------------------------------

struct EvalArgs {
    std::string pred;
    std::string ref;
    std::string compare;
    std::string mask;
    std::string ranges = "40:160:40";
    std::string out;
    std::string csv;
};

int run_eval(const EvalArgs& a) {
    const auto pred = load_maps(a.pred);
    const auto ref = load_maps(a.ref);
    const auto triplet = parse_range_triplet(a.ranges);
    const RangeSpec ranges{triplet.lo, triplet.hi, triplet.step};
    std::optional<Tensor<uint8_t>> mask;
    if (!a.mask.empty()) mask = mask_from_volume(load_tensor_file(a.mask).tensor);
    auto report = range_masked_t2_errors(pred, ref, ranges, mask ? &*mask : nullptr);
    if (!a.compare.empty()) attach_paired_tests(report, pred, load_maps(a.compare), ref, ranges);

    std::cout << report_to_table(report);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
    if (!a.out.empty()) write_text(a.out, report_to_json(report).dump(2) + "\n");
    if (!a.csv.empty()) write_text(a.csv, report_to_csv(report));
    return 0;
}

// --- import ----------------------------------------------------------------------------

struct ImportArgs {
    std::vector<std::string> inputs;
    std::string format = "pgm";
    size_t rows = 0;
    size_t cols = 0;
    size_t slices = 1;
    ProtocolFlags protocol;
    std::string out;
};

/// Binary (P5) or ASCII (P2) portable graymap, 8 or 16 bit.
Tensor<float> read_pgm(const fs::path& path) {
    const auto bytes = binary::read_file(path);
    size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&]() -> size_t {
        skip_space();
        size_t v = 0, digits = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + static_cast<size_t>(bytes[pos++] - '0');
            ++digits;
        }
        if (!digits) throw IoError(path.string() + ": malformed PGM header");
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2'))
        throw IoError(path.string() + ": not a PGM file");
    const bool ascii = bytes[1] == '2';
    pos = 2;
    const size_t width = number(), height = number(), maxval = number();
    if (maxval == 0 || maxval > 65535) throw IoError(path.string() + ": invalid PGM maxval");
    Tensor<float> img({1, height, width});
    if (ascii) {
        for (auto& v : img.data) v = static_cast<float>(number());
        return img;
    }
    ++pos; // single whitespace after maxval
    const size_t bpp = maxval > 255 ? 2 : 1;
    if (bytes.size() < pos + width * height * bpp) throw IoError(path.string() + ": truncated PGM payload");
    for (size_t i = 0; i < img.size(); ++i) {
        img[i] = bpp == 1 ? static_cast<float>(bytes[pos + i])
                          : static_cast<float>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
    }
    return img;
}

/// Raw little-endian float32, slices x rows x cols.
Tensor<float> read_raw(const fs::path& path, size_t slices, size_t rows, size_t cols) {
    if (!rows || !cols || !slices) throw InvalidArgument("raw import needs --rows, --cols and --slices");
    const auto bytes = binary::read_file(path);
    if (bytes.size() != slices * rows * cols * 4) throw IoError(path.string() + ": raw size does not match --slices/--rows/--cols");
    binary::Reader in(bytes);
    Tensor<float> img({slices, rows, cols});
    for (auto& v : img.data) v = in.f32("raw image");
    return img;
}

int run_import(const ImportArgs& a) {
    if (a.inputs.empty()) throw InvalidArgument("import needs one input file per echo");
    if (a.format != "pgm" && a.format != "raw") throw InvalidArgument("import format must be pgm or raw");
    std::vector<Tensor<float>> echoes;
    for (const auto& f : a.inputs)
        echoes.push_back(a.format == "pgm" ? read_pgm(f) : read_raw(f, a.slices, a.rows, a.cols));
    for (const auto& e : echoes)
        if (e.shape != echoes.front().shape) throw InvalidArgument("echo images differ in shape");

    ProtocolFlags pf = a.protocol;
    pf.echoes = static_cast<int>(echoes.size());
    if (!pf.select.empty()) throw InvalidArgument("import stores every given echo; select afterwards");
    const auto& shape = echoes.front().shape;
    MESEStack stack;
    stack.protocol = pf.protocol();
    stack.data = Tensor<float>({shape[0], echoes.size(), shape[1], shape[2]});
    const size_t plane = shape[1] * shape[2];
    for (size_t s = 0; s < shape[0]; ++s)
        for (size_t e = 0; e < echoes.size(); ++e)
            std::copy_n(echoes[e].data.begin() + static_cast<ptrdiff_t>(s * plane), plane,
                        stack.data.data.begin() + static_cast<ptrdiff_t>((s * echoes.size() + e) * plane));
    stack.validate();
    save_tensor_file(stack_to_file(stack), a.out);
    std::printf("import: %zu echoes of %zu x %zu x %zu -> %s\n", echoes.size(), shape[0], shape[1], shape[2], a.out.c_str());
    return 0;
}

/// Expands `--config FILE` into option tokens placed before the remaining arguments so that
/// explicit flags win.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> args) {
    if (args.empty()) return args;
    CLI::App* sub = nullptr;
    for (CLI::App* s : app.get_subcommands({})) {
        if (s->get_name() == args.front()) sub = s;
    }
    if (!sub) return args;
    std::vector<std::string> out{args.front()};
    std::vector<std::string> rest;
    for (size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw InvalidArgument("--config needs a file");
            const auto tokens = run_config_to_args(load_json_file(args[i + 1]), option_names(sub));
            out.insert(out.end(), tokens.begin(), tokens.end());
            ++i;
        } else if (args[i].rfind("--config=", 0) == 0) {
            const auto tokens = run_config_to_args(load_json_file(args[i].substr(9)), option_names(sub));
            out.insert(out.end(), tokens.begin(), tokens.end());
        } else {
            rest.push_back(args[i]);
        }
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dictionary-based T2 mapping from multi-echo spin-echo images"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    std::string unused_config;

    SimdictArgs simdict;
    auto* cmd_simdict = app.add_subcommand("simdict", "Simulate and save an EMC dictionary");
    cmd_simdict->add_option("--t2", simdict.t2, "T2 grid lo:hi:step [ms]")->capture_default_str();
    cmd_simdict->add_option("--b1", simdict.b1, "B1 grid lo:hi:step")->capture_default_str();
    simdict.protocol.attach(cmd_simdict);
    cmd_simdict->add_option("--threads", simdict.threads, "Worker threads (0 = all cores)");
    cmd_simdict->add_option("--out", simdict.out, "Output dictionary file")->required();
    cmd_simdict->add_option("--config", unused_config, "JSON run configuration");

    PhantomArgs phantom;
    auto* cmd_phantom = app.add_subcommand("phantom", "Generate ground-truth maps and a simulated MESE stack");
    cmd_phantom->add_option("--spec", phantom.spec, "Phantom spec JSON (default: built-in acceptance phantom)");
    cmd_phantom->add_option("--seed", phantom.seed, "RNG seed (overrides the spec)");
    cmd_phantom->add_option("--noise-sigma", phantom.noise_sigma, "Noise sigma relative to mean first echo");
    cmd_phantom->add_option("--grid-t2", phantom.grid_t2, "Dictionary T2 coverage lo:hi:step")->capture_default_str();
    cmd_phantom->add_option("--grid-b1", phantom.grid_b1, "Dictionary B1 coverage lo:hi:step")->capture_default_str();
    phantom.protocol.attach(cmd_phantom);
    cmd_phantom->add_option("--threads", phantom.threads, "Worker threads (0 = all cores)");
    cmd_phantom->add_option("--out-dir", phantom.out_dir, "Output directory")->required();
    cmd_phantom->add_option("--config", unused_config, "JSON run configuration");

    FitArgs fit;
    auto* cmd_fit = app.add_subcommand("fit", "Fit T2/B1/PD maps by dictionary matching");
    cmd_fit->add_option("--dict", fit.dict, "Dictionary file")->required();
    cmd_fit->add_option("--stack", fit.stack, "MESE stack tensor file")->required();
    cmd_fit->add_option("--mask", fit.mask, "Optional mask tensor (nonzero = fit)");
    cmd_fit->add_option("--method", fit.method, "exact|fast")->check(CLI::IsMember({"exact", "fast"}))->capture_default_str();
    cmd_fit->add_option("--threads", fit.threads, "Worker threads (0 = all cores)");
    cmd_fit->add_option("--out-dir", fit.out_dir, "Output directory")->required();
    cmd_fit->add_option("--config", unused_config, "JSON run configuration");

    EvalArgs eval;
    auto* cmd_eval = app.add_subcommand("eval", "Score predicted maps against reference maps");
    cmd_eval->add_option("--pred", eval.pred, "Directory of predicted maps")->required();
    cmd_eval->add_option("--ref", eval.ref, "Directory of reference maps")->required();
    cmd_eval->add_option("--compare", eval.compare, "Second prediction for paired t-tests");
    cmd_eval->add_option("--mask", eval.mask, "Optional mask tensor");
    cmd_eval->add_option("--ranges", eval.ranges, "Reference T2 bands lo:hi:step [ms]")->capture_default_str();
    cmd_eval->add_option("--out", eval.out, "JSON report");
    cmd_eval->add_option("--csv", eval.csv, "CSV report");
    cmd_eval->add_option("--config", unused_config, "JSON run configuration");

    ImportArgs import;
    auto* cmd_import = app.add_subcommand("import", "Convert per-echo images into a MESE stack tensor file");
    cmd_import->add_option("inputs", import.inputs, "One image per echo, in echo order")->required();
    cmd_import->add_option("--format", import.format, "pgm|raw")->capture_default_str();
    cmd_import->add_option("--rows", import.rows, "Rows (raw only)");
    cmd_import->add_option("--cols", import.cols, "Columns (raw only)");
    cmd_import->add_option("--slices", import.slices, "Slices (raw only)");
    import.protocol.attach(cmd_import);
    cmd_import->add_option("--out", import.out, "Output stack tensor file")->required();
    cmd_import->add_option("--config", unused_config, "JSON run configuration");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = expand_config(app, args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
        if (cmd_simdict->parsed()) return run_simdict(simdict);
        if (cmd_phantom->parsed()) return run_phantom(phantom);
        if (cmd_fit->parsed()) return run_fit(fit);
        if (cmd_eval->parsed()) return run_eval(eval);
        if (cmd_import->parsed()) return run_import(import);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
