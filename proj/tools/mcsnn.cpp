// mcsnn: batch front end for ingest, training, search, quantization,
// hardware simulation and energy estimation.
//
// Exit codes: 0 success, 1 usage, 2 input validation, 3 runtime failure.
// Options may also come from a TOML file given with --config (one
// [subcommand] section per command); command-line flags take precedence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mcsnn/mcsnn.hpp"

namespace fs = std::filesystem;
using namespace mcsnn;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
};

void need_file(const std::string& path, const std::string& what) {
    require(!path.empty(), what + " path is required");
    if (!fs::is_regular_file(path)) throw ValidationError(what + " not found: " + path);
}

void need_dataset_dir(const std::string& dir) {
    require(!dir.empty(), "dataset directory is required");
    for (const char* name : {"train.mcqd", "test.mcqd"})
        if (!fs::is_regular_file(fs::path(dir) / name))
            throw ValidationError("dataset file not found: " + (fs::path(dir) / name).string());
}

void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_text(const std::string& path, const std::string& text) {
    ensure_parent(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path + "'");
    out << text;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

std::string metrics_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os.precision(10);
    os << "epoch,lr,loss,train_acc,test_acc\n";
    for (const auto& r : history)
        os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.train_acc << ',' << r.test_acc << '\n';
    return os.str();
}

nlohmann::json stats_json(const std::vector<LayerSpikeStats>& stats) {
    auto j = nlohmann::json::array();
    for (const auto& s : stats) j.push_back(to_json(s));
    return j;
}

// Network architecture from flags, or from a JSON spec file.
struct ArchOptions {
    std::string spec_file;
    std::string neuron = "mcleaky";
    std::vector<std::size_t> hidden{64};
    std::string loss = "count_mse";
    std::size_t t_steps = 25;
    double lr = 0.005;
    double threshold = 1.0;
    double beta = 0.875;
    double alpha = 0.3;
    int slope = kDefaultSurrogateSlope;
    double dropout = 0.0;
    int quant_bits = 0;

    void add_to(CLI::App* app) {
        app->add_option("--spec", spec_file, "JSON network spec (overrides the architecture flags)");
        app->add_option("--neuron", neuron, "Neuron model: lif, clif, mcleaky or qmcleaky")->capture_default_str();
        app->add_option("--hidden", hidden, "Hidden layer widths, comma separated")
            ->delimiter(',')
            ->capture_default_str();
        app->add_option("--loss", loss, "Loss: count_mse or ce_rate")->capture_default_str();
        app->add_option("--t-steps", t_steps, "Time steps per window")->capture_default_str();
        app->add_option("--lr", lr, "Learning rate")->capture_default_str();
        app->add_option("--threshold", threshold, "Initial firing threshold")->capture_default_str();
        app->add_option("--beta", beta, "Leak (lif/clif) or forward coupling (mcleaky)")->capture_default_str();
        app->add_option("--alpha", alpha, "Recurrent decay of mcleaky")->capture_default_str();
        app->add_option("--slope", slope, "Surrogate gradient slope")->capture_default_str();
        app->add_option("--dropout", dropout, "Dropout after each hidden block (0 disables)")->capture_default_str();
        app->add_option("--quant-bits", quant_bits, "Quantization-aware weight width (0 trains in float)")
            ->capture_default_str();
    }

    NetworkSpec build(std::size_t input_dim) const {
        NetworkSpec spec;
        if (!spec_file.empty()) {
            need_file(spec_file, "network spec");
            const auto j = read_json(spec_file);
            try {
                spec = network_spec_from_json(j.contains("phenotype") ? j["phenotype"] : j);
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError(spec_file + ": " + e.what());
            }
            require(spec.input_dim == input_dim, spec_file + ": spec input width " + std::to_string(spec.input_dim) +
                                                     " does not match the dataset window " +
                                                     std::to_string(input_dim));
        } else {
            NeuronSpec n;
            n.kind = parse_neuron_kind(neuron);
            n.threshold = threshold;
            n.beta = beta;
            n.alpha = alpha;
            n.slope = slope;
            const auto kind = quant_bits > 0 ? LayerKind::qdense : LayerKind::dense;
            spec = make_dense_spec(input_dim, hidden, n, parse_loss_kind(loss), t_steps, lr, kind,
                                   quant_bits > 0 ? quant_bits : 8);
            if (dropout > 0.0) {
                LayerSpec d;
                d.kind = LayerKind::dropout;
                d.dropout = dropout;
                // After every hidden activation, never after the output.
                for (std::size_t i = spec.layers.size() - 2; i >= 2; i -= 2)
                    spec.layers.insert(spec.layers.begin() + static_cast<std::ptrdiff_t>(i), d);
            }
        }
        validate(spec);
        return spec;
    }
};

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 24;
    std::string schedule = "constant";
    double lr_min = 0.0;
    std::size_t lr_period = 0;

    void add_to(CLI::App* app) {
        app->add_option("--epochs", epochs, "Training epochs")->capture_default_str();
        app->add_option("--batch-size", batch_size, "Minibatch size")->capture_default_str();
        app->add_option("--schedule", schedule, "Learning-rate schedule: constant or cosine")->capture_default_str();
        app->add_option("--lr-min", lr_min, "Cosine schedule floor")->capture_default_str();
        app->add_option("--lr-period", lr_period, "Cosine period in epochs (0 = all epochs)")->capture_default_str();
    }

    TrainConfig build(std::uint64_t seed) const {
        TrainConfig c;
        c.epochs = epochs;
        c.batch_size = batch_size;
        c.lr_min = lr_min;
        c.lr_period = lr_period;
        c.seed = seed;
        if (schedule == "cosine") {
            c.schedule = LrSchedule::cosine;
        } else {
            require(schedule == "constant", "unknown schedule '" + schedule + "'");
        }
        c.validate();
        return c;
    }
};

void log_epoch(const EpochRecord& r) {
    std::cerr << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.loss << " train " << r.train_acc << " test "
              << r.test_acc << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands

void setup_ingest(CLI::App& app) {
    auto* cmd = app.add_subcommand("ingest", "Build a train/test dataset from a JSON manifest");
    auto manifest = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    cmd->add_option("--manifest", *manifest, "Ingest manifest (JSON)")->required();
    cmd->add_option("--out", *out, "Output directory for train.mcqd and test.mcqd")->required();
    cmd->callback([=] {
        need_file(*manifest, "manifest");
        const auto m = parse_manifest(*manifest);
        validate_manifest_paths(m);
        const auto s = run_ingest(m);
        save_split(s, *out);
        std::cout << "windows " << s.train.size() + s.test.size() << " (train " << s.train.size() << ", test "
                  << s.test.size() << "), window_len " << s.train.window_len << '\n';
    });
}

void setup_encode(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("encode", "Rate-encode one dataset window into an AER input stream");
    struct Opts {
        std::string data, out;
        std::string split = "test";
        std::size_t index = 0;
        std::size_t t_steps = 25;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--data", o->data, "Dataset directory")->required();
    cmd->add_option("--split", o->split, "Split to read: train or test")->capture_default_str();
    cmd->add_option("--index", o->index, "Window index")->capture_default_str();
    cmd->add_option("--t-steps", o->t_steps, "Time steps")->capture_default_str();
    cmd->add_option("--out", o->out, "Output AER stream file")->required();
    cmd->callback([o, &g] {
        need_dataset_dir(o->data);
        require(o->split == "train" || o->split == "test", "split must be train or test");
        const auto ds = load_dataset((fs::path(o->data) / (o->split + ".mcqd")).string());
        require(o->index < ds.size(), "window index " + std::to_string(o->index) + " out of range (" +
                                          std::to_string(ds.size()) + " windows)");
        require(o->t_steps >= 1, "t-steps must be at least 1");
        // Same per-window seed derivation as evaluation, rooted at --seed.
        const auto x = rate_encode(ds.window(o->index), o->t_steps, derive_seed(g.seed, {o->index}));
        const auto stream = spikes_to_stream(x);
        ensure_parent(o->out);
        save_aer_stream(stream, o->out);
        std::cout << "label " << static_cast<int>(ds.labels[o->index]) << ", events " << stream.size() << '\n';
    });
}

void setup_train(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("train", "Train a spiking network with BPTT");
    struct Opts {
        std::string data, out, metrics, stats;
        ArchOptions arch;
        TrainOptions train;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--data", o->data, "Dataset directory")->required();
    cmd->add_option("--out", o->out, "Output checkpoint")->required();
    cmd->add_option("--metrics", o->metrics, "Per-epoch metrics CSV (default: <out>.metrics.csv)");
    cmd->add_option("--stats", o->stats, "Spike statistics JSON for the energy model (default: <out>.stats.json)");
    o->arch.add_to(cmd);
    o->train.add_to(cmd);
    cmd->callback([o, &g] {
        need_dataset_dir(o->data);
        const auto data = load_split(o->data);
        const auto spec = o->arch.build(data.train.window_len);
        auto cfg = o->train.build(g.seed);
        const auto model = bptt_train(spec, data, cfg, log_epoch);
        ensure_parent(o->out);
        save_checkpoint(model, o->out);
        write_text(o->metrics.empty() ? o->out + ".metrics.csv" : o->metrics, metrics_csv(model.history));
        write_text(o->stats.empty() ? o->out + ".stats.json" : o->stats, stats_json(model.spike_stats).dump(2) + "\n");
        const auto& last = model.history.back();
        std::cout << "parameters " << model.parameter_count() << ", final train " << last.train_acc << ", test "
                  << last.test_acc << '\n';
    });
}

void setup_evolve(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("evolve", "Grammar-guided architecture search");
    struct Opts {
        std::string data, out_dir, grammar = "qmcleaky";
        EvoConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    auto& c = o->cfg;
    cmd->add_option("--data", o->data, "Dataset directory")->required();
    cmd->add_option("--out-dir", o->out_dir, "Directory for the log, archive and best spec")->required();
    cmd->add_option("--grammar", o->grammar, "Grammar file, or preset name qmcleaky / mcleaky")
        ->capture_default_str();
    cmd->add_option("--generations", c.generations, "Generations")->capture_default_str();
    cmd->add_option("--parents", c.parents, "Parents kept per generation")->capture_default_str();
    cmd->add_option("--offspring", c.offspring, "Offspring per generation")->capture_default_str();
    cmd->add_option("--add-layer", c.add_layer, "Add-layer mutation rate")->capture_default_str();
    cmd->add_option("--reuse-layer", c.reuse_layer, "Reuse-layer mutation rate")->capture_default_str();
    cmd->add_option("--remove-layer", c.remove_layer, "Remove-layer mutation rate")->capture_default_str();
    cmd->add_option("--dsge-mutation", c.dsge_mutation, "Parameter mutation rate")->capture_default_str();
    cmd->add_option("--macro-mutation", c.macro_mutation, "Macro mutation rate")->capture_default_str();
    cmd->add_option("--epochs", c.train_epochs, "Training epochs per candidate")->capture_default_str();
    cmd->add_option("--batch-size", c.batch_size, "Minibatch size")->capture_default_str();
    cmd->add_option("--t-steps", c.t_steps, "Time steps per window")->capture_default_str();
    cmd->add_option("--min-blocks", c.macro.min_blocks, "Fewest hidden blocks")->capture_default_str();
    cmd->add_option("--max-blocks", c.macro.max_blocks, "Most hidden blocks")->capture_default_str();
    cmd->callback([o, &g] {
        need_dataset_dir(o->data);
        const bool preset = o->grammar == "qmcleaky" || o->grammar == "mcleaky";
        if (!preset) need_file(o->grammar, "grammar");
        const auto grammar = preset ? grammar_preset(o->grammar) : load_grammar(o->grammar);
        const auto data = load_split(o->data);
        auto cfg = o->cfg;
        cfg.seed = g.seed;
        cfg.jobs = g.jobs;
        const auto res = evolve(grammar, data, cfg, [](const GenerationRecord& r) {
            std::cerr << "generation " << r.generation << " best " << r.best_fitness << " mean " << r.mean_fitness
                      << " id " << r.best_genotype_id << '\n';
        });
        const fs::path dir = o->out_dir;
        fs::create_directories(dir);
        write_text((dir / "evolution.csv").string(), evolution_log_csv(res.history));
        write_text((dir / "archive.json").string(), archive_json(res.archive).dump(1) + "\n");
        write_text((dir / "best_spec.json").string(), to_json(*res.best.phenotype).dump(2) + "\n");
        write_text((dir / "best_genotype.json").string(), to_json(res.best.genotype).dump(2) + "\n");
        std::cout << "evaluations " << res.evaluations << ", best fitness " << *res.best.fitness << " (id "
                  << res.best.id << ")\n";
    });
}

void setup_quantize(CLI::App& app) {
    auto* cmd = app.add_subcommand("quantize", "Convert a QMCLeaky checkpoint into a processor memory image");
    struct Opts {
        std::string model, out, data;
        int weight_bits = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model, "Trained checkpoint")->required();
    cmd->add_option("--out", o->out, "Output memory image")->required();
    cmd->add_option("--weight-bits", o->weight_bits, "Weight width (0 keeps each layer's own)")
        ->capture_default_str();
    cmd->add_option("--data", o->data, "Dataset directory; reports float and integer test accuracy");
    cmd->callback([o] {
        need_file(o->model, "checkpoint");
        if (!o->data.empty()) need_dataset_dir(o->data);
        const auto model = load_checkpoint(o->model);
        QuantConfig qc;
        qc.weight_bits = o->weight_bits;
        const auto q = quantize_network(model, qc);
        const auto img = export_image(q);
        ensure_parent(o->out);
        save_memory_image(img, o->out);
        const auto layout = image_layout(q);
        std::cout << "inputs " << layout.input_count << ", layers";
        for (const auto& r : layout.layers) std::cout << " [" << r.base << ", " << r.base + r.count << ")";
        std::cout << '\n';
        if (!o->data.empty()) {
            const auto data = load_split(o->data);
            std::cout << "test accuracy float " << evaluate(model, data.test).accuracy << ", integer "
                      << quantized_accuracy(q, data.test) << '\n';
        }
    });
}

void setup_sweep(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("sweep", "Quantization-aware training at several weight widths");
    struct Opts {
        std::string data, out;
        std::vector<int> widths{2, 4, 8, 16, 32};
        ArchOptions arch;
        TrainOptions train;
    };
    auto o = std::make_shared<Opts>();
    o->arch.neuron = "qmcleaky";
    o->arch.loss = "ce_rate";
    o->arch.quant_bits = 8;
    cmd->add_option("--data", o->data, "Dataset directory")->required();
    cmd->add_option("--out", o->out, "Output CSV (width,epoch,test_accuracy)")->required();
    cmd->add_option("--widths", o->widths, "Weight widths, comma separated")->delimiter(',')->capture_default_str();
    o->arch.add_to(cmd);
    o->train.add_to(cmd);
    cmd->callback([o, &g] {
        need_dataset_dir(o->data);
        const auto data = load_split(o->data);
        const auto spec = o->arch.build(data.train.window_len);
        const auto rows = bitwidth_sweep(spec, data, o->widths, o->train.build(g.seed));
        std::ostringstream os;
        os.precision(10);
        os << "width,epoch,test_accuracy\n";
        for (const auto& r : rows) os << r.width << ',' << r.epoch << ',' << r.test_accuracy << '\n';
        write_text(o->out, os.str());
        for (const auto& r : rows)
            if (r.epoch + 1 == o->train.epochs)
                std::cout << "width " << r.width << " final test accuracy " << r.test_accuracy << '\n';
    });
}

void setup_simulate(CLI::App& app) {
    auto* cmd = app.add_subcommand("simulate", "Run the event-driven spike processor on an AER input stream");
    struct Opts {
        std::string image, input, out;
        std::uint32_t t_steps = 25;
        std::size_t fifo = kDefaultFifoCapacity;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--image", o->image, "Memory image")->required();
    cmd->add_option("--input", o->input, "Input AER stream")->required();
    cmd->add_option("--t-steps", o->t_steps, "Time steps to run")->capture_default_str();
    cmd->add_option("--out", o->out, "Output AER stream")->required();
    cmd->add_option("--fifo-capacity", o->fifo, "Scheduler FIFO depth")->capture_default_str();
    cmd->callback([o] {
        need_file(o->image, "memory image");
        need_file(o->input, "input stream");
        const auto img = load_memory_image(o->image);
        const auto input = load_aer_stream(o->input);
        const auto r = run_inference(img, input, o->t_steps, o->fifo);
        ensure_parent(o->out);
        save_aer_stream(r.output, o->out);
        std::cout << "output events " << r.output.size() << ", class " << output_class(img, r) << ", layer spikes";
        for (auto n : r.layer_spikes) std::cout << ' ' << n;
        std::cout << '\n';
    });
}

void setup_energy(CLI::App& app) {
    auto* cmd = app.add_subcommand("energy", "Spike-ratio energy and EDP estimate versus an equivalent ANN");
    struct Opts {
        std::string stats, model, data, out;
        double lambda = kDefaultLambda;
        double latency = kDefaultLatencyRatio;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--stats", o->stats, "Spike statistics JSON written by train");
    cmd->add_option("--model", o->model, "Checkpoint; statistics are measured on --data instead");
    cmd->add_option("--data", o->data, "Dataset directory used with --model");
    cmd->add_option("--lambda", o->lambda, "Energy of a MAC over an accumulate")->capture_default_str();
    cmd->add_option("--latency-ratio", o->latency, "ANN latency over SNN latency")->capture_default_str();
    cmd->add_option("--out", o->out, "Write the report as JSON");
    cmd->callback([o] {
        std::vector<LayerSpikeStats> stats;
        if (!o->stats.empty()) {
            need_file(o->stats, "spike statistics");
            const auto j = read_json(o->stats);
            require(j.is_array(), o->stats + ": expected an array of layer records");
            try {
                for (const auto& e : j) stats.push_back(layer_stats_from_json(e));
            } catch (const nlohmann::json::exception& e) {
                throw ValidationError(o->stats + ": " + e.what());
            }
        } else {
            require(!o->model.empty() && !o->data.empty(), "give --stats, or --model together with --data");
            need_file(o->model, "checkpoint");
            need_dataset_dir(o->data);
            const auto model = load_checkpoint(o->model);
            stats = evaluate(model, load_split(o->data).test).spike_stats;
        }
        auto report = energy_ratio(stats, o->lambda);
        edp_ratio(report, o->latency);
        const auto j = to_json(report);
        if (!o->out.empty()) write_text(o->out, j.dump(2) + "\n");
        std::cout << j.dump(2) << '\n';
    });
}

void setup_report(CLI::App& app) {
    auto* cmd = app.add_subcommand("report", "Summarize a checkpoint: architecture, size and training history");
    struct Opts {
        std::string model, data;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model, "Checkpoint")->required();
    cmd->add_option("--data", o->data, "Dataset directory; adds test accuracy and spike statistics");
    cmd->callback([o] {
        need_file(o->model, "checkpoint");
        if (!o->data.empty()) need_dataset_dir(o->data);
        const auto model = load_checkpoint(o->model);
        nlohmann::json j;
        j["spec"] = to_json(model.spec);
        j["parameters"] = model.parameter_count();
        j["ann_reference_macs"] = ann_reference_macs(model.spec);
        j["epochs"] = model.history.size();
        if (!model.history.empty()) {
            const auto& last = model.history.back();
            j["final"] = {{"loss", last.loss}, {"train_acc", last.train_acc}, {"test_acc", last.test_acc}};
        }
        if (!o->data.empty()) {
            const auto ev = evaluate(model, load_split(o->data).test);
            j["test_accuracy"] = ev.accuracy;
            j["spike_stats"] = stats_json(ev.spike_stats);
        }
        std::cout << j.dump(2) << '\n';
    });
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-compartment spiking network toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML config file; command-line flags take precedence");
    app.allow_config_extras(CLI::config_extras_mode::error);
    Globals g;
    app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
    app.add_option("--jobs", g.jobs, "Worker threads for candidate evaluation")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    setup_ingest(app);
    setup_encode(app, g);
    setup_train(app, g);
    setup_evolve(app, g);
    setup_quantize(app);
    setup_sweep(app, g);
    setup_simulate(app);
    setup_energy(app);
    setup_report(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
