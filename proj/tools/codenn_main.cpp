// Command-line front end: dataset generation/ingestion, toy training,
// encoding, fine-tuning, bitwidth customization, compilation to the
// streaming accelerator, and simulation.
//
// Exit codes: 0 success, 2 bad input (parse/shape), 3 exceeds platform
// constraints, 4 training divergence, 1 anything else.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "codenn/codenn.hpp"

namespace fs = std::filesystem;
using namespace codenn;

namespace {

struct DatasetArgs {
    std::string data, labels, format;

    void attach(CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("--data", data,
                                    "IDX image file or CSV file (label,features)");
        if (required) opt->required();
        cmd->add_option("--labels", labels, "IDX label file (IDX datasets only)");
        cmd->add_option("--format", format, "force dataset format: idx or csv");
    }

    Dataset load() const {
        std::string fmt = format;
        if (fmt.empty()) {
            fmt = !labels.empty()            ? "idx"
                  : data.ends_with(".csv")   ? "csv"
                                             : "";
        }
        if (fmt == "idx") {
            if (labels.empty()) {
                throw ParseError("IDX datasets need --labels alongside --data");
            }
            return load_idx(data, labels);
        }
        if (fmt == "csv") return load_csv(data);
        throw ParseError("cannot tell the dataset format of '" + data +
                         "'; pass --format idx|csv");
    }
};

Model build_arch(const std::string& arch, const std::vector<int>& input_shape,
                 int classes, uint64_t seed) {
    Model m;
    m.seed = seed;
    m.net.input_shape = input_shape;
    m.net.classes = classes;
    std::mt19937_64 rng(seed);
    auto rand_tensor = [&](std::vector<int> shape, float scale) {
        std::uniform_real_distribution<float> dist(-scale, scale);
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = dist(rng);
        return t;
    };
    auto add = [&](LayerSpec spec, LayerParams p = {}) {
        m.net.layers.push_back(std::move(spec));
        m.params.push_back(std::move(p));
        m.enc_weights.emplace_back();
    };
    std::vector<int> shape = input_shape;

    if (arch.rfind("mlp", 0) == 0) {
        std::vector<int> hidden;
        if (arch.size() > 4 && arch[3] == ':') {
            std::stringstream ss(arch.substr(4));
            std::string cell;
            while (std::getline(ss, cell, ',')) hidden.push_back(std::stoi(cell));
        } else {
            hidden = {32};
        }
        int in = static_cast<int>(Tensor::numel_of(shape));
        for (int hsize : hidden) {
            LayerSpec fc;
            fc.kind = LayerKind::Fc;
            fc.out_features = hsize;
            fc.name = "fc" + std::to_string(m.net.layers.size());
            LayerParams p;
            p.weight = rand_tensor({hsize, in}, std::sqrt(2.0f / in));
            p.bias = Tensor({hsize});
            add(fc, std::move(p));
            LayerSpec relu;
            relu.kind = LayerKind::Relu;
            add(relu);
            in = hsize;
        }
        LayerSpec out;
        out.kind = LayerKind::Fc;
        out.out_features = classes;
        out.name = "fc_out";
        LayerParams p;
        p.weight = rand_tensor({classes, in}, std::sqrt(2.0f / in));
        p.bias = Tensor({classes});
        add(out, std::move(p));
    } else if (arch == "cnn") {
        if (shape.size() != 3) throw ParseError("cnn needs CHW input data");
        int chans[2] = {4, 8};
        for (int b = 0; b < 2; ++b) {
            LayerSpec conv;
            conv.kind = LayerKind::Conv;
            conv.out_channels = chans[b];
            conv.kernel_h = conv.kernel_w = 3;
            conv.stride = 1;
            conv.padding = 1;
            conv.name = "conv" + std::to_string(b + 1);
            LayerParams p;
            int fold = shape[0] * 9;
            p.weight = rand_tensor({chans[b], shape[0], 3, 3},
                                   std::sqrt(2.0f / fold));
            p.bias = Tensor({chans[b]});
            shape = layer_output_shape(conv, shape, -1);
            add(conv, std::move(p));
            LayerSpec relu;
            relu.kind = LayerKind::Relu;
            add(relu);
            LayerSpec mp;
            mp.kind = LayerKind::MaxPool;
            mp.pool_h = mp.pool_w = 2;
            mp.pool_stride = 2;
            shape = layer_output_shape(mp, shape, -1);
            add(mp);
        }
        int in = static_cast<int>(Tensor::numel_of(shape));
        LayerSpec fc1;
        fc1.kind = LayerKind::Fc;
        fc1.out_features = 32;
        fc1.name = "fc1";
        LayerParams p1;
        p1.weight = rand_tensor({32, in}, std::sqrt(2.0f / in));
        p1.bias = Tensor({32});
        add(fc1, std::move(p1));
        LayerSpec relu;
        relu.kind = LayerKind::Relu;
        add(relu);
        LayerSpec fc2;
        fc2.kind = LayerKind::Fc;
        fc2.out_features = classes;
        fc2.name = "fc_out";
        LayerParams p2;
        p2.weight = rand_tensor({classes, 32}, std::sqrt(2.0f / 32));
        p2.bias = Tensor({classes});
        add(fc2, std::move(p2));
    } else {
        throw ParseError("unknown --arch '" + arch + "' (use mlp[:h1,h2,...] or cnn)");
    }
    validate(m.net);
    return m;
}

/// All-float storage: raw weights plus one float frame per relu/encode layer.
uint64_t raw_memory_bits(const Model& m) {
    uint64_t bits = 0;
    for (int l : weight_layer_indices(m.net)) {
        uint64_t n = m.enc_weights[l].has_value() ? m.enc_weights[l]->indices.numel()
                                                  : m.params[l].weight.numel();
        bits += n * 32;
    }
    auto shapes = layer_shapes(m.net);
    for (std::size_t l = 0; l < m.net.layers.size(); ++l) {
        LayerKind k = m.net.layers[l].kind;
        if (k == LayerKind::Relu || k == LayerKind::Encode) {
            bits += Tensor::numel_of(shapes[l]) * 32;
        }
    }
    return bits;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

int classes_of(const Dataset& ds) {
    int c = 0;
    for (int l : ds.labels) c = std::max(c, l + 1);
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"codebook-encoded neural networks: encoding, fine-tuning, "
                 "bitwidth search, accelerator compilation and simulation"};
    app.require_subcommand(1);

    uint64_t seed = 42;
    app.add_option("--seed", seed, "global RNG seed (recorded in every artifact)")
        ->capture_default_str();

    std::string out_dir = "out";
    app.add_option("--out", out_dir, "output directory")->capture_default_str();

    try {
        // ------------------------------------------------------- gen-data
        auto* gen = app.add_subcommand("gen-data", "write a synthetic digit "
                                                   "dataset in IDX format");
        int gen_train = 2000, gen_test = 500, gen_h = 28, gen_w = 28;
        gen->add_option("--train", gen_train, "training samples")
            ->capture_default_str();
        gen->add_option("--test", gen_test, "test samples")->capture_default_str();
        gen->add_option("--height", gen_h, "image height")->capture_default_str();
        gen->add_option("--width", gen_w, "image width")->capture_default_str();
        gen->callback([&] {
            fs::create_directories(out_dir);
            Dataset train = make_synth_digits(gen_train, gen_h, gen_w, seed);
            Dataset test = make_synth_digits(gen_test, gen_h, gen_w, seed + 1);
            fs::path base(out_dir);
            write_idx_images((base / "train-images.idx").string(), train.images);
            write_idx_labels((base / "train-labels.idx").string(), train.labels);
            write_idx_images((base / "test-images.idx").string(), test.images);
            write_idx_labels((base / "test-labels.idx").string(), test.labels);
            std::cout << "wrote " << gen_train << "+" << gen_test << " images ("
                      << gen_h << "x" << gen_w << ") under " << out_dir << "\n";
        });

        // ----------------------------------------------------------- train
        auto* train = app.add_subcommand("train", "train a small float model");
        DatasetArgs train_data;
        train_data.attach(train);
        std::string arch = "mlp:32";
        double tr_epochs = 10;
        float tr_lr = 0.05f;
        int tr_batch = 32;
        train->add_option("--arch", arch, "mlp[:h1,h2,...] or cnn")
            ->capture_default_str();
        train->add_option("--epochs", tr_epochs)->capture_default_str();
        train->add_option("--lr", tr_lr)->capture_default_str();
        train->add_option("--batch", tr_batch)->capture_default_str();
        train->callback([&] {
            Dataset ds = train_data.load();
            Model m = build_arch(arch, ds.images[0].shape, classes_of(ds), seed);
            FineTuneOptions opt;
            opt.epochs = tr_epochs;
            opt.lr = tr_lr;
            opt.batch = tr_batch;
            opt.seed = seed;
            FineTuneResult r = fine_tune(m, ds.images, ds.labels, opt);
            double acc = model_accuracy(m, ds.images, ds.labels,
                                        std::min<std::size_t>(1000, ds.size()));
            fs::create_directories(out_dir);
            write_model_file((fs::path(out_dir) / "model.json").string(), m);
            std::cout << "trained " << arch << " for " << r.steps
                      << " steps, final loss " << r.final_loss
                      << ", train accuracy " << acc << "\n"
                      << "model written to " << out_dir << "/model.json\n";
        });

        // ---------------------------------------------------------- encode
        auto* enc = app.add_subcommand(
            "encode", "build weight/activation codebooks for a float model");
        std::string enc_model;
        DatasetArgs enc_data;
        int act_bits = 5, conv_bits = 6, fc_bits = 4, act_samples = 10;
        int weight_bits_flag = 0;
        enc->add_option("--model", enc_model, "float model JSON")->required();
        enc_data.attach(enc);
        enc->add_option("--act-bits", act_bits, "activation encoding bitwidth")
            ->capture_default_str();
        enc->add_option("--conv-bits", conv_bits, "conv weight bitwidth")
            ->capture_default_str();
        enc->add_option("--fc-bits", fc_bits, "fc weight bitwidth")
            ->capture_default_str();
        enc->add_option("--weight-bits", weight_bits_flag,
                        "set both conv and fc weight bitwidths");
        enc->add_option("--act-samples", act_samples,
                        "inputs sampled for activation clustering")
            ->capture_default_str();
        enc->callback([&] {
            Model m = read_model_file(enc_model);
            Dataset ds = enc_data.load();
            uint64_t before = raw_memory_bits(m);
            std::vector<Tensor> samples(
                ds.images.begin(),
                ds.images.begin() +
                    std::min<std::size_t>(act_samples, ds.images.size()));
            encode_model_activations(m, samples, act_bits, seed);
            int cb = weight_bits_flag > 0 ? weight_bits_flag : conv_bits;
            int fb = weight_bits_flag > 0 ? weight_bits_flag : fc_bits;
            encode_model_weights(m, cb, fb, seed);
            m.seed = seed;
            uint64_t after = memory_footprint(m, current_config(m));

            fs::create_directories(out_dir);
            write_model_file((fs::path(out_dir) / "model_encoded.json").string(), m);
            nlohmann::ordered_json report;
            report["seed"] = seed;
            report["memory_bits_float"] = before;
            report["memory_bits_encoded"] = after;
            report["ratio"] = static_cast<double>(before) / after;
            write_json(fs::path(out_dir) / "encode_report.json", report);
            std::cout << "memory: " << before << " bits float -> " << after
                      << " bits encoded (" << report["ratio"].get<double>()
                      << "x)\nencoded model written to " << out_dir
                      << "/model_encoded.json\n";
        });

        // -------------------------------------------------------- finetune
        auto* ft = app.add_subcommand("finetune",
                                      "fine-tune an encoded model's codebooks");
        std::string ft_model;
        DatasetArgs ft_data;
        double ft_epochs = 10;
        float ft_lr = 0.01f;
        int ft_batch = 32;
        ft->add_option("--model", ft_model, "encoded model JSON")->required();
        ft_data.attach(ft);
        ft->add_option("--epochs", ft_epochs, "epochs (fractions allowed)")
            ->capture_default_str();
        ft->add_option("--lr", ft_lr)->capture_default_str();
        ft->add_option("--batch", ft_batch)->capture_default_str();
        ft->callback([&] {
            Model m = read_model_file(ft_model);
            Dataset ds = ft_data.load();
            double before = model_accuracy(m, ds.images, ds.labels,
                                           std::min<std::size_t>(1000, ds.size()));
            FineTuneOptions opt;
            opt.epochs = ft_epochs;
            opt.lr = ft_lr;
            opt.batch = ft_batch;
            opt.seed = seed;
            FineTuneResult r = fine_tune(m, ds.images, ds.labels, opt);
            double after = model_accuracy(m, ds.images, ds.labels,
                                          std::min<std::size_t>(1000, ds.size()));
            m.seed = seed;
            fs::create_directories(out_dir);
            write_model_file((fs::path(out_dir) / "model_finetuned.json").string(),
                             m);
            nlohmann::ordered_json report;
            report["seed"] = seed;
            report["steps"] = r.steps;
            report["final_loss"] = r.final_loss;
            report["train_accuracy_before"] = before;
            report["train_accuracy_after"] = after;
            write_json(fs::path(out_dir) / "finetune_report.json", report);
            std::cout << "fine-tuned " << r.steps << " steps; train accuracy "
                      << before << " -> " << after << "\nmodel written to "
                      << out_dir << "/model_finetuned.json\n";
        });

        // ------------------------------------------------------- customize
        auto* cz = app.add_subcommand(
            "customize",
            "two-phase bitwidth search (activations, then weights)");
        std::string cz_model;
        DatasetArgs cz_data;
        DatasetArgs cz_val;
        double acc_floor = 0.0, stop_threshold = 0.1;
        std::size_t val_size = 1000;
        double cz_epochs = 10;
        float cz_lr = 0.01f;
        int cz_batch = 32;
        int cz_act_init = 5, cz_conv_init = 6, cz_fc_init = 4;
        cz->add_option("--model", cz_model, "trained float model JSON")->required();
        cz_data.attach(cz);
        cz->add_option("--val-data", cz_val.data, "validation images/CSV");
        cz->add_option("--val-labels", cz_val.labels, "validation labels");
        cz->add_option("--acc-floor", acc_floor,
                       "accuracy floor used to select a configuration")
            ->capture_default_str();
        cz->add_option("--stop-threshold", stop_threshold,
                       "absolute accuracy where the search stops")
            ->capture_default_str();
        cz->add_option("--val-size", val_size, "validation samples per evaluation")
            ->capture_default_str();
        cz->add_option("--epochs", cz_epochs, "fine-tune epochs per phase")
            ->capture_default_str();
        cz->add_option("--lr", cz_lr)->capture_default_str();
        cz->add_option("--batch", cz_batch)->capture_default_str();
        cz->add_option("--act-bits", cz_act_init, "initial activation bits")
            ->capture_default_str();
        cz->add_option("--conv-bits", cz_conv_init, "initial conv weight bits")
            ->capture_default_str();
        cz->add_option("--fc-bits", cz_fc_init, "initial fc weight bits")
            ->capture_default_str();
        cz->callback([&] {
            Model m = read_model_file(cz_model);
            Dataset train_ds = cz_data.load();
            Dataset val_ds = cz_val.data.empty() ? train_ds : cz_val.load();

            TwoPhaseOptions opt;
            opt.act_init_bits = cz_act_init;
            opt.conv_init_bits = cz_conv_init;
            opt.fc_init_bits = cz_fc_init;
            opt.select_floor = acc_floor;
            opt.search.acc_threshold = stop_threshold;
            opt.search.val_count = val_size;
            opt.search.seed = seed;
            opt.finetune.epochs = cz_epochs;
            opt.finetune.lr = cz_lr;
            opt.finetune.batch = cz_batch;
            opt.finetune.seed = seed;
            TwoPhaseResult result = two_phase_customize(
                m, train_ds.images, train_ds.labels, val_ds.images, val_ds.labels,
                opt);
            m.seed = seed;

            fs::create_directories(out_dir);
            fs::path base(out_dir);
            write_trajectory_csv((base / "act_trajectory.csv").string(),
                                 result.act_trajectory);
            write_trajectory_csv((base / "weight_trajectory.csv").string(),
                                 result.weight_trajectory);
            write_model_file((base / "model_customized.json").string(), m);

            nlohmann::ordered_json report;
            report["seed"] = seed;
            report["float_accuracy"] = result.float_acc;
            report["final_accuracy"] = result.final_acc;
            report["act_bits"] = result.act_config.act_bits;
            report["weight_bits"] = result.weight_config.weight_bits;
            report["memory_bits"] = memory_footprint(m, current_config(m));
            write_json(base / "customize_report.json", report);
            std::cout << "accuracy: float " << result.float_acc << " -> final "
                      << result.final_acc << "\nselected act bits:";
            for (int b : result.act_config.act_bits) std::cout << " " << b;
            std::cout << "\nselected weight bits:";
            for (int b : result.weight_config.weight_bits) std::cout << " " << b;
            std::cout << "\nartifacts written under " << out_dir << "\n";
        });

        // --------------------------------------------------------- compile
        auto* cp = app.add_subcommand(
            "compile", "lower an encoded model to the streaming accelerator");
        std::string cp_model, platform_name = "ZC702";
        double clock_mhz = 152.0;
        bool fixed_acts = false;
        cp->add_option("--model", cp_model, "encoded model JSON")->required();
        cp->add_option("--platform", platform_name, "VCU108, ZC702, or XC7S50")
            ->capture_default_str();
        cp->add_option("--clock", clock_mhz, "clock in MHz")->capture_default_str();
        cp->add_flag("--fixed-acts", fixed_acts,
                     "8-bit fixed-point activations instead of encoded streams");
        cp->callback([&] {
            Model m = read_model_file(cp_model);
            Model folded = fold_for_hardware(m);
            CompileOptions opt;
            opt.platform = find_platform(platform_name);
            opt.clock_mhz = clock_mhz;
            opt.fixed_point_acts = fixed_acts;
            HardwareConfig hw = lower_model(folded, opt);
            hw.seed = seed;
            allocate_parallelism(hw);
            fs::create_directories(out_dir);
            emit_hw_config(hw, out_dir);

            ResourceEstimate est = estimate_resources(hw);
            nlohmann::ordered_json report;
            report["seed"] = seed;
            report["platform"] = platform_name;
            report["bram"] = est.bram;
            report["dsp"] = est.dsp;
            report["ff_proxy"] = est.ff_proxy;
            report["lut_proxy"] = est.lut_proxy;
            nlohmann::ordered_json folding = nlohmann::ordered_json::array();
            for (const auto& s : hw.stages) {
                if (s.kind == StageKind::Mvau) {
                    folding.push_back({{"name", s.name},
                                       {"pe", s.pe},
                                       {"simd", s.simd},
                                       {"cycles", stage_frame_cycles(s)}});
                }
            }
            report["folding"] = folding;
            write_json(fs::path(out_dir) / "compile_report.json", report);
            std::cout << "platform " << platform_name << ": " << est.bram
                      << " BRAM, " << est.dsp << " DSP (budget "
                      << hw.platform.bram << " / " << hw.platform.dsp << ")\n"
                      << "design written under " << out_dir << "\n";
        });

        // -------------------------------------------------------- simulate
        auto* sim = app.add_subcommand(
            "simulate", "run frames through the compiled accelerator");
        std::string hw_dir;
        DatasetArgs sim_data;
        int frames = 8;
        sim->add_option("--hw", hw_dir, "directory produced by compile")->required();
        sim_data.attach(sim);
        sim->add_option("--frames", frames, "frames to simulate")
            ->capture_default_str();
        sim->callback([&] {
            HardwareConfig hw = load_hw_config(hw_dir);
            Dataset ds = sim_data.load();
            std::vector<Tensor> inputs(
                ds.images.begin(),
                ds.images.begin() + std::min<std::size_t>(frames, ds.size()));
            SimReport report = simulate_pipeline(hw, inputs);
            fs::create_directories(out_dir);
            write_sim_report((fs::path(out_dir) / "report.json").string(), report);
            write_breakdown_csv((fs::path(out_dir) / "breakdown.csv").string(),
                                report);
            std::cout << "frames " << report.frames << ": latency "
                      << report.latency_cycles << " cycles, interval "
                      << report.initiation_interval << " cycles, makespan "
                      << report.makespan_cycles << " cycles, throughput "
                      << report.throughput_fps << " fps @ " << report.clock_mhz
                      << " MHz\nreport written under " << out_dir << "\n";
        });

        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const InfeasibleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
