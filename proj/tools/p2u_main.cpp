// p2u command line: model generation, quantization, benchmarking and the
// client/server delivery workflow.
//
// Exit codes: 0 success, 2 usage, 3 remote/protocol, 4 data/format,
// 5 internal.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "p2u/channel.hpp"
#include "p2u/codec.hpp"
#include "p2u/errors.hpp"
#include "p2u/evalnet.hpp"
#include "p2u/model_io.hpp"
#include "p2u/proto.hpp"
#include "p2u/quant.hpp"
#include "p2u/update.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRemote = 3;
constexpr int kExitData = 4;
constexpr int kExitInternal = 5;

struct GlobalOptions {
    double bandwidth_bps = 100e6;  // the 100 Mbps / 10 ms access-link scenario
    double delay_s = 0.010;
    int repetitions = 5;
    std::uint64_t seed = 1;
    std::string output = "table";

    p2u::ChannelConfig channel() const {
        p2u::ChannelConfig cfg;
        cfg.bandwidth_bps = static_cast<std::uint64_t>(bandwidth_bps);
        cfg.delay_ns = static_cast<std::uint64_t>(delay_s * 1e9 + 0.5);
        return cfg;
    }
};

std::vector<std::uint32_t> parse_dims(const std::string& csv) {
    std::vector<std::uint32_t> dims;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) dims.push_back(static_cast<std::uint32_t>(std::stoul(tok)));
    return dims;
}

p2u::MlpSpec infer_spec(const p2u::TensorModel& model) {
    std::vector<std::uint32_t> dims;
    for (std::size_t i = 0;; ++i) {
        const p2u::Tensor* w = model.find("layer" + std::to_string(i) + ".weight");
        if (!w) break;
        if (w->shape.size() != 2) throw p2u::InvalidModelError("weight tensors must be rank 2");
        if (dims.empty()) dims.push_back(w->shape[1]);
        dims.push_back(w->shape[0]);
    }
    if (dims.size() < 2)
        throw p2u::InvalidModelError("model does not follow the layer{i}.weight naming scheme");
    return p2u::MlpSpec::from_dims(dims);
}

double mb(std::uint64_t bytes) { return static_cast<double>(bytes) / 1e6; }

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

// One output row of the bench table, mirroring the per-phase
// Size / Time / Top-1 layout of the delivery comparison.
struct BenchRow {
    std::uint32_t base_bitwidth;
    std::string part;  // Baseline | Low-Prec. | Update | Proxy
    std::uint64_t size_bytes;
    double time_s;
    std::optional<double> top1;  // absent for updates or without a dataset
};

void print_bench_table(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "bitwidth  part       size_mb      time_s      top1\n";
    for (const auto& r : rows) {
        std::ostringstream line;
        line << r.base_bitwidth;
        std::string bw = line.str();
        bw.resize(8, ' ');
        std::string part = r.part;
        part.resize(9, ' ');
        os << bw << "  " << part << "  " << fmt(mb(r.size_bytes)) << "  " << fmt(r.time_s);
        os << "  " << (r.top1 ? fmt(*r.top1 * 100.0, 2) : std::string("-")) << "\n";
    }
}

void print_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "bitwidth,part,size_bytes,time_s,top1\n";
    for (const auto& r : rows) {
        os << r.base_bitwidth << ',' << r.part << ',' << r.size_bytes << ',' << fmt(r.time_s, 9)
           << ',' << (r.top1 ? fmt(*r.top1 * 100.0, 2) : std::string()) << "\n";
    }
}

json bench_json(const std::vector<BenchRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) {
        json row{{"bitwidth", r.base_bitwidth},
                 {"part", r.part},
                 {"size_bytes", r.size_bytes},
                 {"time_s", r.time_s}};
        row["top1"] = r.top1 ? json(*r.top1 * 100.0) : json(nullptr);
        arr.push_back(row);
    }
    return arr;
}

void print_report(std::ostream& os, const p2u::TransferReport& r, const std::string& output) {
    if (output == "csv") {
        os << p2u::report_csv_header() << "\n" << p2u::report_csv_row(r) << "\n";
        return;
    }
    if (output == "json") {
        json j{{"model_id", r.model_id},
               {"base_bitwidth", r.base_bitwidth},
               {"update_bitwidth", r.update_bitwidth},
               {"has_update", r.has_update},
               {"base",
                {{"bytes", r.base.bytes},
                 {"encode_s", r.base.encode_s},
                 {"channel_s", r.base.channel_s},
                 {"decode_s", r.base.decode_s},
                 {"dequantize_s", r.base.dequantize_s}}},
               {"update",
                {{"bytes", r.update.bytes},
                 {"encode_s", r.update.encode_s},
                 {"channel_s", r.update.channel_s},
                 {"decode_s", r.update.decode_s}}},
               {"apply_s", r.apply_s},
               {"startup_latency_low_s", r.startup_latency_low_s},
               {"startup_latency_proxy_s", r.startup_latency_proxy_s},
               {"total_bytes", r.total_bytes},
               {"max_phase_bytes", r.max_phase_bytes}};
        os << j.dump(2) << "\n";
        return;
    }
    os << "model " << r.model_id << ", base " << r.base_bitwidth << "-bit";
    if (r.has_update) os << ", update " << r.update_bitwidth << "-bit";
    os << "\n";
    os << "  base:   " << r.base.bytes << " B, encode " << fmt(r.base.encode_s) << " s, channel "
       << fmt(r.base.channel_s) << " s, decode " << fmt(r.base.decode_s) << " s, dequantize "
       << fmt(r.base.dequantize_s) << " s\n";
    if (r.has_update)
        os << "  update: " << r.update.bytes << " B, encode " << fmt(r.update.encode_s)
           << " s, channel " << fmt(r.update.channel_s) << " s, decode "
           << fmt(r.update.decode_s) << " s, apply " << fmt(r.apply_s) << " s\n";
    os << "  startup latency (low):   " << fmt(r.startup_latency_low_s) << " s\n";
    if (r.has_update)
        os << "  startup latency (proxy): " << fmt(r.startup_latency_proxy_s) << " s\n";
    os << "  total " << r.total_bytes << " B, sequenced bandwidth requirement "
       << p2u::bandwidth_requirement(r, p2u::DeliveryMode::Sequenced) << " B\n";
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const p2u::RemoteError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRemote;
    } catch (const p2u::ProtocolError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRemote;
    } catch (const p2u::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const p2u::InvalidModelError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const p2u::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

// --- gen ---------------------------------------------------------------------

struct GenArgs {
    std::string arch = "16,32,32,3";
    std::string out;
    std::string train_csv;
    double scale = 1.0;
    int epochs = 200;
    double learning_rate = 0.05;
    int batch_size = 32;
};

int cmd_gen(const GlobalOptions& g, const GenArgs& a) {
    const auto spec = p2u::MlpSpec::from_dims(parse_dims(a.arch));
    p2u::TensorModel model;
    if (!a.train_csv.empty()) {
        const auto data = p2u::load_csv_dataset(a.train_csv);
        p2u::FitOptions fit;
        fit.epochs = a.epochs;
        fit.learning_rate = static_cast<float>(a.learning_rate);
        fit.batch_size = a.batch_size;
        fit.seed = g.seed;
        model = p2u::fit_classifier(spec, data, fit);
        std::cout << "trained on " << data.size() << " rows, top-1 "
                  << fmt(p2u::top1_accuracy(spec, model, data) * 100.0, 2) << "%\n";
    } else {
        model = p2u::random_mlp_weights(spec, g.seed, static_cast<float>(a.scale));
    }
    model.name = fs::path(a.out).stem().string();
    p2u::save_model(model, a.out);
    std::cout << "wrote " << a.out << " (" << model.parameter_count() << " parameters)\n";
    return kExitOk;
}

struct GenDataArgs {
    std::string kind = "blobs";
    std::string out;
    std::uint32_t dims = 16;
    std::uint32_t classes = 3;
    std::size_t rows = 600;
    double spread = 0.35;
};

int cmd_gen_data(const GlobalOptions& g, const GenDataArgs& a) {
    p2u::LabeledDataset data;
    if (a.kind == "blobs")
        data = p2u::make_blobs(a.dims, a.classes, a.rows, static_cast<float>(a.spread), g.seed);
    else
        data = p2u::make_spirals(a.classes, a.rows, static_cast<float>(a.spread), g.seed);
    p2u::save_csv_dataset(data, a.out);
    std::cout << "wrote " << a.out << " (" << data.size() << " rows, " << data.class_count()
              << " classes)\n";
    return kExitOk;
}

// --- quantize ------------------------------------------------------------------

struct QuantizeArgs {
    std::string in;
    std::string out;
    std::uint32_t bitwidth = 8;
};

int cmd_quantize(const GlobalOptions& g, const QuantizeArgs& a) {
    const auto model = p2u::load_model(a.in);
    p2u::QuantizedModel qmodel;
    const double quantize_s = p2u::median_seconds(
        g.repetitions, [&] { qmodel = p2u::quantize(model, {a.bitwidth}); });
    p2u::Bitstream stream;
    const double encode_s = p2u::median_seconds(g.repetitions, [&] { stream = encode(qmodel); });

    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw p2u::IoError("cannot open '" + a.out + "' for writing");
    f.write(reinterpret_cast<const char*>(stream.bytes.data()),
            static_cast<std::streamsize>(stream.bytes.size()));
    if (!f) throw p2u::IoError("write failed for '" + a.out + "'");

    std::cout << "wrote " << a.out << ": " << stream.size() << " B (" << fmt(mb(stream.size()))
              << " MB) at " << a.bitwidth << "-bit\n";
    std::cout << "quantize " << fmt(quantize_s) << " s, encode " << fmt(encode_s)
              << " s, modeled channel " << fmt(p2u::channel_time(stream.size(), g.channel()))
              << " s\n";
    return kExitOk;
}

// --- bench ---------------------------------------------------------------------

struct BenchArgs {
    std::string model_path;
    std::string bitwidths = "16,8,4";
    std::string dataset;
    std::string timings = "measured";
    std::optional<double> tolerance;
};

int cmd_bench(const GlobalOptions& g, const BenchArgs& a) {
    const auto model = p2u::load_model(a.model_path);
    const std::string id = model.name;
    std::optional<p2u::LabeledDataset> data;
    std::optional<p2u::MlpSpec> spec;
    if (!a.dataset.empty()) {
        data = p2u::load_csv_dataset(a.dataset);
        spec = infer_spec(model);
    }
    const bool measure = a.timings == "measured";
    const auto channel = g.channel();

    p2u::ServerRepository repo;
    repo.add_model(id, model);
    p2u::Server server(repo);
    const std::uint16_t port = server.start("127.0.0.1", 0);
    const std::string endpoint = "127.0.0.1:" + std::to_string(port);

    std::vector<BenchRow> rows;
    for (std::uint32_t bw : parse_dims(a.bitwidths)) {
        p2u::FetchOptions opts;
        opts.channel = channel;
        opts.tolerance = a.tolerance;
        auto result = p2u::fetch_progressive(endpoint, id, bw, opts);
        if (!result.ok()) throw p2u::ProtocolError(result.error);
        auto& rep = result.report;

        // Stable timings: medians over the same artifacts, replacing the
        // single-shot values measured inside the fetch.
        if (measure) {
            const auto qbase = p2u::quantize(model, {bw});
            const auto base_stream = encode(qbase);
            rep.base.encode_s = p2u::median_seconds(g.repetitions, [&] { encode(qbase); });
            rep.base.decode_s =
                p2u::median_seconds(g.repetitions, [&] { p2u::decode(base_stream); });
            rep.base.dequantize_s =
                p2u::median_seconds(g.repetitions, [&] { p2u::dequantize(qbase); });
        } else {
            rep.base = {rep.base.bytes, 0, rep.base.channel_s, 0, 0};
            rep.update = {rep.update.bytes, 0, rep.update.channel_s, 0, 0};
            rep.apply_s = 0;
        }
        p2u::finalize_report(rep);
        p2u::validate_report(rep);
        if (rep.total_bytes != rep.base.bytes + rep.update.bytes ||
            p2u::bandwidth_requirement(rep, p2u::DeliveryMode::Sequenced) !=
                std::max(rep.base.bytes, rep.update.bytes))
            throw p2u::Error("bench consistency check failed");

        std::optional<double> top1_low, top1_proxy;
        if (data) {
            top1_low = p2u::top1_accuracy(*spec, *result.low, *data);
            top1_proxy = p2u::top1_accuracy(*spec, *result.proxy, *data);
        }

        rows.push_back({bw, "Baseline", rep.base.bytes, rep.startup_latency_low_s, top1_low});
        rows.push_back({bw, "Low-Prec.", rep.base.bytes, rep.startup_latency_low_s, top1_low});
        rows.push_back({bw, "Update", rep.update.bytes,
                        rep.update.encode_s + rep.update.channel_s + rep.update.decode_s +
                            rep.apply_s,
                        std::nullopt});
        rows.push_back(
            {bw, "Proxy", rep.total_bytes, rep.startup_latency_proxy_s, top1_proxy});
    }
    server.stop();

    if (g.output == "csv")
        print_bench_csv(std::cout, rows);
    else if (g.output == "json")
        std::cout << bench_json(rows).dump(2) << "\n";
    else
        print_bench_table(std::cout, rows);
    return kExitOk;
}

// --- serve ---------------------------------------------------------------------

struct ServeArgs {
    std::string repo_dir;
    std::string listen = "127.0.0.1:9300";
};

int cmd_serve(const ServeArgs& a) {
    p2u::ServerRepository repo;
    std::size_t count = 0;
    for (const auto& entry : fs::directory_iterator(a.repo_dir)) {
        if (entry.path().extension() != ".p2um") continue;
        auto model = p2u::load_model(entry.path());
        model.name = entry.path().stem().string();
        repo.add_model(model.name, std::move(model));
        ++count;
    }
    if (count == 0) throw p2u::Error("no .p2um models found in '" + a.repo_dir + "'");
    std::cout << "serving " << count << " model(s) on " << a.listen << std::endl;
    p2u::serve(repo, a.listen);
    return kExitOk;  // unreachable
}

// --- fetch ---------------------------------------------------------------------

struct FetchArgs {
    std::string endpoint = "127.0.0.1:9300";
    std::string model_id;
    std::uint32_t bitwidth = 8;
    std::string trigger = "immediate";
    bool no_update = false;
    std::optional<double> tolerance;
    std::string out_low;
    std::string out_proxy;
};

int cmd_fetch(const GlobalOptions& g, const FetchArgs& a) {
    p2u::FetchOptions opts;
    opts.channel = g.channel();
    opts.tolerance = a.tolerance;
    if (a.no_update || a.trigger == "manual") {
        opts.trigger = p2u::TriggerPolicy::Manual;
    } else if (a.trigger.rfind("delay:", 0) == 0) {
        opts.trigger = p2u::TriggerPolicy::AfterDelay;
        opts.trigger_delay_s = std::stod(a.trigger.substr(6));
    } else if (a.trigger == "immediate") {
        opts.trigger = p2u::TriggerPolicy::Immediate;
    } else {
        std::cerr << "error: unknown trigger policy '" << a.trigger << "'\n";
        return kExitUsage;
    }

    const auto result = p2u::fetch_progressive(a.endpoint, a.model_id, a.bitwidth, opts);
    if (!result.ok()) {
        std::cerr << "error: " << result.error << "\n";
        return kExitRemote;
    }
    if (!a.out_low.empty() && result.low) {
        p2u::save_model(*result.low, a.out_low);
        std::cout << "wrote low-precision model to " << a.out_low << "\n";
    }
    if (!a.out_proxy.empty() && result.proxy) {
        p2u::save_model(*result.proxy, a.out_proxy);
        std::cout << "wrote proxy model to " << a.out_proxy << "\n";
    }
    if (result.refetched_base) std::cout << "note: base was re-fetched once (stale checksum)\n";
    print_report(std::cout, result.report, g.output);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Progressive precision update (P2U) model delivery toolkit"};
    app.require_subcommand(1);
    app.set_config("--config")->description("key=value config file");

    GlobalOptions g;
    app.add_option("--channel-bandwidth", g.bandwidth_bps, "channel bandwidth, bits/s")
        ->capture_default_str();
    app.add_option("--channel-delay", g.delay_s, "channel propagation delay, seconds")
        ->capture_default_str();
    app.add_option("--repetitions", g.repetitions, "timing repetitions (median is reported)")
        ->capture_default_str();
    app.add_option("--seed", g.seed, "seed for every randomized procedure")
        ->capture_default_str();
    app.add_option("--output", g.output, "report format")
        ->check(CLI::IsMember({"table", "csv", "json"}))
        ->capture_default_str();

    GenArgs gen;
    auto* cgen = app.add_subcommand("gen", "generate a desk-scale MLP model (P2UM)");
    cgen->add_option("--arch", gen.arch, "layer dims, e.g. 16,32,32,3")->capture_default_str();
    cgen->add_option("--out", gen.out, "output .p2um path")->required();
    cgen->add_option("--train", gen.train_csv, "fit the model on this CSV dataset");
    cgen->add_option("--scale", gen.scale, "weight scale for random models")
        ->capture_default_str();
    cgen->add_option("--epochs", gen.epochs)->capture_default_str();
    cgen->add_option("--lr", gen.learning_rate)->capture_default_str();
    cgen->add_option("--batch", gen.batch_size)->capture_default_str();

    GenDataArgs gdata;
    auto* cdata = app.add_subcommand("gen-data", "generate a synthetic labeled CSV dataset");
    cdata->add_option("--kind", gdata.kind)->check(CLI::IsMember({"blobs", "spirals"}))
        ->capture_default_str();
    cdata->add_option("--out", gdata.out, "output .csv path")->required();
    cdata->add_option("--dims", gdata.dims)->capture_default_str();
    cdata->add_option("--classes", gdata.classes)->capture_default_str();
    cdata->add_option("--rows", gdata.rows)->capture_default_str();
    cdata->add_option("--spread", gdata.spread, "blob spread / spiral noise")
        ->capture_default_str();

    QuantizeArgs quant;
    auto* cquant = app.add_subcommand("quantize", "quantize and entropy-code a model (P2UB)");
    cquant->add_option("--in", quant.in, "input .p2um model")->required();
    cquant->add_option("--bitwidth", quant.bitwidth)
        ->check(CLI::IsMember({4, 8, 16, 32}))
        ->required();
    cquant->add_option("--out", quant.out, "output .p2ub bitstream")->required();

    BenchArgs bench;
    auto* cbench = app.add_subcommand(
        "bench", "compare direct transmission and P2U through an in-process server");
    cbench->add_option("--model", bench.model_path, "input .p2um model")->required();
    cbench->add_option("--bitwidths", bench.bitwidths, "base bitwidths to sweep")
        ->capture_default_str();
    cbench->add_option("--dataset", bench.dataset, "CSV dataset for top-1 columns");
    cbench->add_option("--timings", bench.timings, "measured | none (none is deterministic)")
        ->check(CLI::IsMember({"measured", "none"}))
        ->capture_default_str();
    double bench_tol = 0.0;
    auto* bench_tol_opt =
        cbench->add_option("--tolerance", bench_tol, "adaptive update bitwidth tolerance");

    ServeArgs serve_args;
    auto* cserve = app.add_subcommand("serve", "serve a repository of .p2um models");
    cserve->add_option("--repo-dir", serve_args.repo_dir)->required();
    cserve->add_option("--listen", serve_args.listen)->capture_default_str();

    FetchArgs fetch;
    auto* cfetch = app.add_subcommand("fetch", "progressively fetch a model from a server");
    cfetch->add_option("--endpoint", fetch.endpoint)->capture_default_str();
    cfetch->add_option("--model", fetch.model_id)->required();
    cfetch->add_option("--bitwidth", fetch.bitwidth)
        ->check(CLI::IsMember({4, 8, 16, 32}))
        ->capture_default_str();
    cfetch->add_option("--trigger", fetch.trigger, "immediate | delay:SECONDS | manual")
        ->capture_default_str();
    cfetch->add_flag("--no-update", fetch.no_update, "stop after the low-precision model");
    double fetch_tol = 0.0;
    auto* fetch_tol_opt =
        cfetch->add_option("--tolerance", fetch_tol, "adaptive update bitwidth tolerance");
    cfetch->add_option("--out-low", fetch.out_low, "write the low-precision model here");
    cfetch->add_option("--out-proxy", fetch.out_proxy, "write the proxy model here");

    for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (*bench_tol_opt) bench.tolerance = bench_tol;
    if (*fetch_tol_opt) fetch.tolerance = fetch_tol;

    if (*cgen) return run_guarded([&] { return cmd_gen(g, gen); });
    if (*cdata) return run_guarded([&] { return cmd_gen_data(g, gdata); });
    if (*cquant) return run_guarded([&] { return cmd_quantize(g, quant); });
    if (*cbench) return run_guarded([&] { return cmd_bench(g, bench); });
    if (*cserve) return run_guarded([&] { return cmd_serve(serve_args); });
    if (*cfetch) return run_guarded([&] { return cmd_fetch(g, fetch); });
    return kExitUsage;
}
