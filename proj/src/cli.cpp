#include "ilvad/cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <vector>

#include "ilvad/enhancement.hpp"
#include "ilvad/report.hpp"
#include "ilvad/saliency.hpp"
#include "ilvad/toy_decoder.hpp"
#include "ilvad/trace_io.hpp"

namespace ilvad::cli {

namespace {

// A problem with an input or output file: exit code 2.
struct DataError : std::runtime_error {
    DataError(const std::string& file, std::size_t offset, const std::string& what)
        : std::runtime_error(file + ": offset " + std::to_string(offset) + ": " + what) {}
};

// A semantically invalid argument value: exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

AttentionTrace load_trace(const std::string& path) {
    try {
        return io::read_trace_file(path);
    } catch (const io::TraceError& e) {
        throw DataError(path, e.offset(), "[" + io::to_string(e.code()) + "] " + e.what());
    }
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path, 0, "cannot open");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

SaliencyMap load_saliency(const std::string& path) {
    try {
        return report::parse_saliency(read_text(path));
    } catch (const report::FormatError& e) {
        throw DataError(path, e.offset(), e.what());
    }
}

void write_bytes(const std::string& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path, 0, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) throw DataError(path, 0, "write failed");
}

void store_trace(const std::string& path, const AttentionTrace& trace) {
    const auto bytes = io::encode_trace(trace);
    write_bytes(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& text) {
    const auto x = text.find('x');
    auto number = [&](std::string_view part) -> std::size_t {
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || ptr != part.data() + part.size() || v == 0) {
            throw UsageError("--grid expects RxC with positive integers, got '" + text + "'");
        }
        return v;
    };
    if (x == std::string::npos) {
        throw UsageError("--grid expects RxC with positive integers, got '" + text + "'");
    }
    std::string_view view(text);
    return {number(view.substr(0, x)), number(view.substr(x + 1))};
}

struct EnhanceFlags {
    double tau = 5.0;
    double alpha = 5.0;
    double beta = 1.0;
    double rho = 0.5;
    std::size_t window = 10;
    bool no_visual = false;
    bool no_text = false;

    EnhancementConfig config() const {
        EnhancementConfig c;
        c.tau = tau;
        c.alpha = alpha;
        c.beta = beta;
        c.rho = rho;
        c.window_T = window;
        c.enable_visual = !no_visual;
        c.enable_text = !no_text;
        try {
            c.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        return c;
    }
};

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Inter-layer visual attention discrepancy: saliency maps and attention "
                 "enhancement over attention traces"};
    app.name(args.empty() ? std::string("ilvad") : args.front());
    app.require_subcommand(1);

    std::string trace_path, saliency_path, out_path, baseline_path, ilvad_path;
    std::string grid_text, mode = "baseline", out_trace, out_tokens;
    std::vector<std::size_t> planted;
    EnhanceFlags flags;
    toy::ToyModelConfig model_config;
    std::uint64_t seed = 0;
    std::size_t steps = 0;

    auto* saliency_cmd = app.add_subcommand("saliency", "Build a saliency map from a trace");
    saliency_cmd->add_option("--trace", trace_path, "ILVT trace")->required();
    saliency_cmd->add_option("--tau", flags.tau, "Salience threshold multiple");
    saliency_cmd->add_option("--window", flags.window, "First-token window T");
    saliency_cmd->add_option("--rho", flags.rho, "Head ratio");
    saliency_cmd->add_option("--out", out_path, "Saliency text file")->required();

    auto* enhance_cmd = app.add_subcommand("enhance", "Apply attention enhancement to a trace");
    enhance_cmd->add_option("--trace", trace_path, "ILVT trace")->required();
    enhance_cmd->add_option("--saliency", saliency_path, "Saliency text file")->required();
    enhance_cmd->add_option("--alpha", flags.alpha, "Visual enhancement strength");
    enhance_cmd->add_option("--beta", flags.beta, "Text enhancement offset");
    enhance_cmd->add_option("--rho", flags.rho, "Head ratio");
    enhance_cmd->add_flag("--no-visual", flags.no_visual, "Disable visual enhancement");
    enhance_cmd->add_flag("--no-text", flags.no_text, "Disable text enhancement");
    enhance_cmd->add_option("--out", out_path, "Enhanced ILVT trace")->required();

    auto* generate_cmd = app.add_subcommand("generate", "Run the toy decoder");
    generate_cmd->add_option("--seed", seed, "Model, image and prompt seed")->required();
    generate_cmd->add_option("--layers", model_config.n_layers, "Decoder layers");
    generate_cmd->add_option("--heads", model_config.n_heads, "Heads per layer");
    generate_cmd->add_option("--dmodel", model_config.d_model, "Model width");
    generate_cmd->add_option("--vocab", model_config.vocab_size, "Vocabulary size");
    generate_cmd->add_option("--grid", grid_text, "Patch grid RxC")->required();
    generate_cmd->add_option("--plant", planted, "Planted evidence patch indices")
        ->delimiter(',');
    generate_cmd->add_option("--steps", steps, "Tokens to generate")->required();
    generate_cmd->add_option("--mode", mode, "baseline or ilvad")
        ->check(CLI::IsMember({"baseline", "ilvad"}));
    generate_cmd->add_option("--tau", flags.tau, "Salience threshold multiple");
    generate_cmd->add_option("--alpha", flags.alpha, "Visual enhancement strength");
    generate_cmd->add_option("--beta", flags.beta, "Text enhancement offset");
    generate_cmd->add_option("--window", flags.window, "First-token window T");
    generate_cmd->add_option("--rho", flags.rho, "Head ratio");
    generate_cmd->add_flag("--no-visual", flags.no_visual, "Disable visual enhancement");
    generate_cmd->add_flag("--no-text", flags.no_text, "Disable text enhancement");
    generate_cmd->add_option("--out-trace", out_trace, "ILVT trace of the returned pass")
        ->required();
    generate_cmd->add_option("--out-tokens", out_tokens, "Generated token ids");

    auto* render_cmd = app.add_subcommand("render", "Render a saliency map as a PGM heatmap");
    render_cmd->add_option("--saliency", saliency_path, "Saliency text file")->required();
    render_cmd->add_option("--grid", grid_text, "Patch grid RxC")->required();
    render_cmd->add_option("--out", out_path, "PGM file")->required();

    auto* compare_cmd = app.add_subcommand("compare", "Evidence mass per step, baseline vs ILVAD");
    compare_cmd->add_option("--baseline", baseline_path, "Baseline ILVT trace")->required();
    compare_cmd->add_option("--ilvad", ilvad_path, "ILVAD ILVT trace")->required();
    compare_cmd->add_option("--saliency", saliency_path, "Saliency text file")->required();
    compare_cmd->add_option("--rho", flags.rho, "Head ratio");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    if (args.empty()) argv.push_back("ilvad");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return kExitOk;
        err << app.help();
        return kExitUsage;
    }

    try {
        if (*saliency_cmd) {
            const auto config = flags.config();
            const auto trace = load_trace(trace_path);
            const auto map = build_saliency(trace, config);
            write_bytes(out_path, report::format_saliency(map));
        } else if (*enhance_cmd) {
            const auto config = flags.config();
            const auto trace = load_trace(trace_path);
            const auto map = load_saliency(saliency_path);
            if (map.size() != trace.layout().n_visual()) {
                throw DataError(saliency_path, 0,
                                "saliency length " + std::to_string(map.size()) +
                                    " differs from trace n_visual " +
                                    std::to_string(trace.layout().n_visual()));
            }
            store_trace(out_path, apply_trace(trace, map, config));
        } else if (*generate_cmd) {
            const auto config = flags.config();
            const auto [rows, cols] = parse_grid(grid_text);
            if (steps == 0) throw UsageError("--steps must be at least 1");
            model_config.seed = seed;
            try {
                model_config.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            for (auto p : planted) {
                if (p >= rows * cols) {
                    throw UsageError("--plant index " + std::to_string(p) + " outside the grid");
                }
            }
            const auto model = toy::init_model(model_config);
            auto image = toy::make_synthetic_image(model, rows, cols, planted, seed);
            const auto prompt = toy::default_prompt(model, std::move(image));
            const auto result = toy::generate(
                model, prompt, steps, mode == "ilvad" ? toy::Mode::ilvad : toy::Mode::baseline,
                config);
            store_trace(out_trace, result.trace);
            if (!out_tokens.empty()) {
                std::string text;
                for (std::size_t i = 0; i < result.tokens.size(); ++i) {
                    if (i) text += ' ';
                    text += std::to_string(result.tokens[i]);
                }
                text += '\n';
                write_bytes(out_tokens, text);
            }
        } else if (*render_cmd) {
            const auto [rows, cols] = parse_grid(grid_text);
            const auto map = load_saliency(saliency_path);
            if (rows * cols != map.size()) {
                throw DataError(saliency_path, 0,
                                "grid " + grid_text + " does not match " +
                                    std::to_string(map.size()) + " saliency entries");
            }
            const auto pgm = report::render_pgm(map, rows, cols);
            write_bytes(out_path,
                        std::string_view(reinterpret_cast<const char*>(pgm.data()), pgm.size()));
        } else if (*compare_cmd) {
            const auto config = flags.config();
            const auto baseline = load_trace(baseline_path);
            const auto enhanced = load_trace(ilvad_path);
            const auto map = load_saliency(saliency_path);
            if (map.size() != baseline.layout().n_visual()) {
                throw DataError(saliency_path, 0, "saliency length differs from trace n_visual");
            }
            if (!(baseline.layout() == enhanced.layout()) ||
                baseline.n_layers() != enhanced.n_layers() ||
                baseline.n_heads() != enhanced.n_heads()) {
                throw DataError(ilvad_path, 0, "trace layout or shape differs from the baseline");
            }
            out << report::format_comparison(
                report::compare_traces(baseline, enhanced, map, config.rho));
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

}  // namespace ilvad::cli
