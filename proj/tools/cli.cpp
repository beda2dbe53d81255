#include "hdae_cli/cli.hpp"

#include "hdae/checkpoint.hpp"
#include "hdae/editing.hpp"
#include "hdae/evaluation.hpp"
#include "hdae/hash.hpp"
#include "hdae/image_io.hpp"
#include "hdae/latent_ddim.hpp"
#include "hdae/latent_ops.hpp"
#include "hdae/service.hpp"
#include "hdae/shapes.hpp"
#include "hdae/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

namespace hdae::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Options every command shares.
struct Common {
    uint64_t seed = 0;
    fs::path out = "hdae_out";
    std::string config;
};

// Collects what a command read and wrote; serialized as manifest.json.
class Manifest {
public:
    Manifest(std::string command, std::vector<std::string> args, const Common& common)
        : command_(std::move(command)), args_(std::move(args)), common_(common) {}

    void input(const fs::path& p) { inputs_[p.string()] = sha256_file(p); }
    void checkpoint(const std::string& hash) { checkpoint_hash_ = hash; }
    void config(json c) { config_ = std::move(c); }
    void output(const fs::path& p) { outputs_.push_back(p.filename().string()); }
    json& extra() { return extra_; }

    void write() const {
        json j{{"command", command_},
               {"args", args_},
               {"seed", common_.seed},
               {"checkpoint_hash", checkpoint_hash_},
               {"config", config_},
               {"inputs", inputs_},
               {"outputs", outputs_}};
        if (!extra_.is_null()) {
            j["results"] = extra_;
        }
        std::ofstream(common_.out / "manifest.json") << j.dump(2) << '\n';
    }

private:
    std::string command_;
    std::vector<std::string> args_;
    const Common& common_;
    std::string checkpoint_hash_;
    json config_;
    json inputs_ = json::object();
    std::vector<std::string> outputs_;
    json extra_;
};

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot read config " + path);
    }
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw UsageError("config " + path + " is not valid JSON");
    }
    if (!j.is_object()) {
        throw UsageError("config " + path + " must be a JSON object");
    }
    for (const auto& item : j.items()) {
        if (item.key() != "model" && item.key() != "train") {
            throw UsageError("config " + path + ": unknown key '" + item.key() + "'");
        }
    }
    try {
        if (j.contains("model")) {
            (void)j["model"].get<ModelConfig>();
        }
        if (j.contains("train")) {
            (void)j["train"].get<TrainConfig>();
        }
    } catch (const std::exception& e) {
        throw UsageError("config " + path + ": " + e.what());
    }
    return j;
}

ShapesSpec shapes_spec_of(const ModelBundle& bundle) {
    ShapesSpec spec;
    if (bundle.train_config.contains("data") && bundle.train_config["data"].value("kind", "") == "shapes") {
        spec = bundle.train_config["data"]["shapes"].get<ShapesSpec>();
    }
    spec.canvas = bundle.model_config.image_size;
    return spec;
}

int64_t parse_k(const std::string& text, int64_t full) {
    if (text == "full") {
        return full;
    }
    int64_t k = 0;
    std::istringstream is(text);
    if (!(is >> k) || !is.eof()) {
        throw UsageError("--k must be an integer or 'full'");
    }
    if (k < 0 || k > full) {
        throw UsageError("--k must lie in [0, " + std::to_string(full) + "]");
    }
    return k;
}

std::string zero_pad(int64_t v, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << v;
    return os.str();
}

// Encodes a shapes corpus and returns codes with the dataset, for classifier work.
struct LabelledCodes {
    ShapesSpec spec;
    ShapesDataset data;
    HierarchicalCode codes;
};

LabelledCodes encode_shapes(ModelBundle& bundle, int64_t count, uint64_t seed) {
    LabelledCodes lc;
    lc.spec = shapes_spec_of(bundle);
    lc.spec.count = count;
    lc.spec.seed = seed;
    lc.data = generate_shapes(lc.spec);
    lc.codes = encode_codes(bundle.model, lc.data.images);
    return lc;
}

void on_signal(int) { stop_server(); }

} // namespace

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run(args);
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"Hierarchical diffusion autoencoder toolkit"};
    app.require_subcommand(1);
    Common common;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", common.seed, "Random seed");
        sub->add_option("--out", common.out, "Output directory")->capture_default_str();
        sub->add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
    };

    std::string checkpoint, image, image_b, registry, attribute, k_text = "full", latent, order = "low-first";
    std::string variants_text = "HDAE_E,DAE,HDAE_U,DAE_WIDE", factors_text = "hue,shape", host = "127.0.0.1";
    std::string data_folder;
    std::optional<std::string> variant_text;
    double alpha = 0.0;
    int64_t split = 0, frames = 8, steps = 0, width = 0, batch = 0, images = 64, checkpoints = 4;
    int64_t fit_steps = 0, ttl = 3600, columns = 8;
    int64_t train_count = 0, sample_count = 16, ablate_count = 8000, probe_count = 2000;
    std::optional<double> lr;
    std::vector<std::string> checkpoint_list;
    bool random_xt = false, swap = false;
    int port = 8080;

    auto ckpt_opt = [&](CLI::App* sub) {
        return sub->add_option("--checkpoint", checkpoint, "Model checkpoint (.hdae)")->check(CLI::ExistingFile);
    };

    auto* train_cmd = app.add_subcommand("train", "Train an autoencoder");
    add_common(train_cmd);
    train_cmd->add_option("--variant", variant_text, "Model variant");
    train_cmd->add_option("--steps", steps, "Total optimizer steps")->check(CLI::PositiveNumber);
    train_cmd->add_option("--width", width, "Base channel width")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", lr, "Learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--count", train_count, "Synthetic image count (0 keeps the config)")->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--data-folder", data_folder, "Train on a folder of images")->check(CLI::ExistingDirectory);

    auto* encode_cmd = app.add_subcommand("encode", "Encode an image to (code, noise map)");
    add_common(encode_cmd);
    ckpt_opt(encode_cmd)->required();
    encode_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);

    auto* recon_cmd = app.add_subcommand("reconstruct", "Encode then decode an image");
    add_common(recon_cmd);
    ckpt_opt(recon_cmd)->required();
    recon_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
    recon_cmd->add_flag("--random-xt", random_xt, "Decode from fresh noise instead of the inverted map");

    auto* edit_cmd = app.add_subcommand("edit", "Attribute edit along a classifier direction");
    add_common(edit_cmd);
    ckpt_opt(edit_cmd)->required();
    edit_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
    edit_cmd->add_option("--registry", registry)->required()->check(CLI::ExistingFile);
    edit_cmd->add_option("--attribute", attribute)->required();
    edit_cmd->add_option("--alpha", alpha)->required();
    edit_cmd->add_option("--k", k_text, "Top-k truncation or 'full'")->capture_default_str();

    auto* mix_cmd = app.add_subcommand("mix", "Style mixing of two images");
    add_common(mix_cmd);
    ckpt_opt(mix_cmd)->required();
    mix_cmd->add_option("--image-a", image)->required()->check(CLI::ExistingFile);
    mix_cmd->add_option("--image-b", image_b)->required()->check(CLI::ExistingFile);
    mix_cmd->add_option("--split", split, "Levels [0, split) come from B")->required()->check(CLI::NonNegativeNumber);
    mix_cmd->add_flag("--swap", swap);

    auto* interp_cmd = app.add_subcommand("interpolate", "Level-ordered interpolation");
    add_common(interp_cmd);
    ckpt_opt(interp_cmd)->required();
    interp_cmd->add_option("--image-a", image)->required()->check(CLI::ExistingFile);
    interp_cmd->add_option("--image-b", image_b)->required()->check(CLI::ExistingFile);
    interp_cmd->add_option("--frames", frames)->check(CLI::Range(int64_t{2}, int64_t{256}));
    interp_cmd->add_option("--order", order)->check(CLI::IsMember({"low-first", "high-first", "uniform"}));

    auto* sample_cmd = app.add_subcommand("sample", "Unconditional samples through the latent DDIM");
    add_common(sample_cmd);
    ckpt_opt(sample_cmd)->required();
    sample_cmd->add_option("--latent", latent, "Trained latent DDIM (.hdae)")->check(CLI::ExistingFile);
    sample_cmd->add_option("--fit-steps", fit_steps, "Train a latent DDIM first")->check(CLI::PositiveNumber);
    sample_cmd->add_option("--count", sample_count)->check(CLI::NonNegativeNumber);

    auto* eval_cmd = app.add_subcommand("eval", "Reconstruction benchmark");
    add_common(eval_cmd);
    eval_cmd->add_option("--checkpoint", checkpoint_list, "One or more checkpoints")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--images", images, "Validation images to evaluate")->check(CLI::PositiveNumber);

    auto* ablate_cmd = app.add_subcommand("ablate", "Train variants under one budget and compare");
    add_common(ablate_cmd);
    ablate_cmd->add_option("--variants", variants_text)->capture_default_str();
    ablate_cmd->add_option("--steps", steps)->required()->check(CLI::PositiveNumber);
    ablate_cmd->add_option("--checkpoints", checkpoints, "Shared validation points")->check(CLI::PositiveNumber);
    ablate_cmd->add_option("--width", width)->check(CLI::PositiveNumber);
    ablate_cmd->add_option("--count", ablate_count, "Synthetic image count")->check(CLI::PositiveNumber);

    auto* probe_cmd = app.add_subcommand("probe", "Per-level linear probing on synthetic factors");
    add_common(probe_cmd);
    ckpt_opt(probe_cmd)->required();
    probe_cmd->add_option("--factors", factors_text)->capture_default_str();
    probe_cmd->add_option("--count", probe_count)->check(CLI::PositiveNumber);

    auto* cls_cmd = app.add_subcommand("classifier-train", "Fit attribute directions into a registry");
    add_common(cls_cmd);
    ckpt_opt(cls_cmd)->required();
    cls_cmd->add_option("--factors", factors_text)->capture_default_str();
    cls_cmd->add_option("--count", probe_count)->check(CLI::PositiveNumber);

    auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service");
    add_common(serve_cmd);
    serve_cmd->add_option("--checkpoint", checkpoint, "Defaults to $HDAE_CHECKPOINT");
    serve_cmd->add_option("--registry", registry, "Defaults to $HDAE_REGISTRY");
    serve_cmd->add_option("--host", host)->capture_default_str();
    serve_cmd->add_option("--port", port)->check(CLI::Range(1, 65535))->capture_default_str();
    serve_cmd->add_option("--ttl", ttl, "Session lifetime in seconds")->check(CLI::PositiveNumber);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    Manifest manifest(name, args, common);

    try {
        json cfg_json = common.config.empty() ? json::object() : read_json_file(common.config);
        if (cmd == sample_cmd && latent.empty() && fit_steps == 0) {
            throw UsageError("sample needs --latent or --fit-steps");
        }
        if (cmd == serve_cmd) {
            if (checkpoint.empty()) {
                const char* env = std::getenv("HDAE_CHECKPOINT");
                checkpoint = env ? env : "";
            }
            if (registry.empty()) {
                const char* env = std::getenv("HDAE_REGISTRY");
                registry = env ? env : "";
            }
            if (checkpoint.empty() || !fs::exists(checkpoint)) {
                throw UsageError("serve needs an existing --checkpoint or HDAE_CHECKPOINT");
            }
            if (!registry.empty() && !fs::exists(registry)) {
                throw UsageError("registry " + registry + " does not exist");
            }
        }
        std::vector<std::string> factors;
        if (cmd == probe_cmd || cmd == cls_cmd) {
            std::stringstream ss(factors_text);
            for (std::string f; std::getline(ss, f, ',');) {
                if (std::find(kFactorNames.begin(), kFactorNames.end(), f) == kFactorNames.end()) {
                    throw UsageError("unknown factor '" + f + "'");
                }
                factors.push_back(f);
            }
        }
        std::vector<Variant> variants;
        if (cmd == ablate_cmd) {
            try {
                variants = parse_variant_list(variants_text);
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
        }
        std::optional<Variant> variant;
        if (variant_text) {
            try {
                variant = parse_variant(*variant_text);
            } catch (const std::exception& e) {
                throw UsageError(e.what());
            }
        }

        fs::create_directories(common.out);
        torch::manual_seed(common.seed);

        std::optional<ModelBundle> bundle;
        if (!checkpoint.empty()) {
            bundle = load_model(checkpoint);
            manifest.checkpoint(bundle->hash);
            manifest.config({{"model", bundle->model_config}, {"train", bundle->train_config}});
            manifest.input(checkpoint);
        }
        auto load_input = [&](const std::string& path) {
            manifest.input(path);
            return read_image(path, bundle->model_config.image_size);
        };
        auto plan = bundle ? bundle->model->default_plan() : StepPlan::strided(1000, 100);
        auto save_png = [&](const std::string& file, const torch::Tensor& img) {
            write_png(common.out / file, img);
            manifest.output(common.out / file);
        };

        if (cmd == train_cmd) {
            ModelConfig mc = cfg_json.contains("model") ? cfg_json["model"].get<ModelConfig>() : ModelConfig{};
            TrainConfig tc = cfg_json.contains("train") ? cfg_json["train"].get<TrainConfig>() : TrainConfig{};
            if (variant) {
                mc.variant = *variant;
            }
            if (width > 0) {
                mc.base_width = width;
            }
            if (steps > 0) {
                tc.total_steps = steps;
                tc.checkpoint_every = std::min(tc.checkpoint_every, steps);
            }
            if (batch > 0) {
                tc.batch_size = batch;
            }
            if (lr) {
                tc.learning_rate = *lr;
            }
            if (train_count > 0) {
                tc.data.shapes.count = train_count;
            }
            if (!data_folder.empty()) {
                tc.data.kind = "folder";
                tc.data.folder = data_folder;
            }
            tc.seed = common.seed;
            try {
                mc.validate();
                tc.validate();
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
            manifest.config({{"model", mc}, {"train", tc}});
            auto data = load_training_data(tc, mc.image_size);
            Trainer trainer(mc, tc);
            std::ofstream val_log(common.out / "validation.csv");
            val_log << "step,reconstruction_mse\n";
            TrainOptions opts;
            opts.out_dir = common.out;
            opts.on_log = [](int64_t s, double loss) { std::clog << "step " << s << " loss " << loss << '\n'; };
            opts.on_validation = [&](const ValidationPoint& vp) {
                std::clog << "validation step " << vp.step << " mse " << vp.reconstruction_mse << '\n';
                val_log << vp.step << ',' << vp.reconstruction_mse << std::endl;
            };
            auto result = train(trainer, data.train, data.validation, opts);
            for (const auto& c : result.checkpoints) {
                manifest.output(c);
            }
            manifest.output(common.out / "last.hdae");
            manifest.checkpoint(sha256_file(common.out / "last.hdae"));
            if (!result.validation.empty()) {
                manifest.extra() = {{"final_validation_mse", result.validation.back().reconstruction_mse}};
            }
        } else if (cmd == encode_cmd) {
            auto enc = encode(bundle->model, load_input(image), plan);
            std::ofstream(common.out / "code.json") << code_to_json(enc.code, bundle->hash) << '\n';
            save_noise_map(common.out / "xT.bin", enc.xT[0]);
            manifest.output(common.out / "code.json");
            manifest.output(common.out / "xT.bin");
        } else if (cmd == recon_cmd) {
            auto enc = encode(bundle->model, load_input(image), plan);
            auto rec = reconstruct(bundle->model, enc, plan, random_xt, common.seed);
            save_png("reconstruction.png", rec[0]);
            manifest.extra() = {{"mse", mse(rec[0], read_image(image, bundle->model_config.image_size))}};
        } else if (cmd == edit_cmd) {
            manifest.input(registry);
            const auto dirs = load_registry(registry);
            auto it = std::find_if(dirs.begin(), dirs.end(), [&](const auto& d) { return d.name == attribute; });
            if (it == dirs.end()) {
                throw UsageError("attribute '" + attribute + "' is not in the registry");
            }
            const auto k = parse_k(k_text, it->size());
            auto enc = encode(bundle->model, load_input(image), plan);
            const auto edited = manipulate(enc.code, truncate_direction(*it, k), alpha);
            torch::NoGradGuard no_grad;
            auto img = generate(bundle->model->predictor(), edited, enc.xT, plan, bundle->model->schedule());
            save_png("edited.png", img[0]);
            manifest.extra() = {{"logit_before", attribute_logits(*it, enc.code)[0]},
                                {"logit_after", attribute_logits(*it, edited)[0]},
                                {"k", k}};
        } else if (cmd == mix_cmd) {
            auto a = encode(bundle->model, load_input(image), plan);
            auto b = encode(bundle->model, load_input(image_b), plan);
            if (split > a.code.num_levels()) {
                throw UsageError("--split must lie in [0, " + std::to_string(a.code.num_levels()) + "]");
            }
            torch::NoGradGuard no_grad;
            auto code = style_mix(a.code, b.code, split, swap);
            auto img = generate(bundle->model->predictor(), code, swap ? b.xT : a.xT, plan, bundle->model->schedule());
            save_png("mix.png", img[0]);
        } else if (cmd == interp_cmd) {
            auto a = encode(bundle->model, load_input(image), plan);
            auto b = encode(bundle->model, load_input(image_b), plan);
            const auto L = a.code.num_levels();
            std::vector<InterpolationPath> paths;
            if (order == "uniform") {
                for (int64_t f = 0; f < frames; ++f) {
                    const double w = static_cast<double>(f) / static_cast<double>(frames - 1);
                    paths.push_back({std::vector<double>(static_cast<size_t>(L), w), w});
                }
            } else {
                paths = order == "low-first" ? low_first_path(frames, L) : high_first_path(frames, L);
            }
            torch::NoGradGuard no_grad;
            std::vector<torch::Tensor> imgs;
            for (size_t f = 0; f < paths.size(); ++f) {
                auto [code, xT] = interpolate(a, b, paths[f]);
                auto img = generate(bundle->model->predictor(), code, xT, plan, bundle->model->schedule());
                save_png("frame_" + zero_pad(static_cast<int64_t>(f), 3) + ".png", img[0]);
                imgs.push_back(img);
            }
            save_png("strip.png", make_grid(torch::cat(imgs), static_cast<int64_t>(imgs.size())));
        } else if (cmd == sample_cmd) {
            std::optional<LatentDiffusion> ldm;
            if (!latent.empty()) {
                manifest.input(latent);
                ldm = LatentDiffusion::load(latent);
            } else {
                auto spec = shapes_spec_of(*bundle);
                auto codes = encode_codes(bundle->model, generate_shapes(spec).images);
                LatentDiffusionConfig lc;
                lc.levels = codes.num_levels();
                lc.code_dim = codes.dim();
                lc.dim = codes.flat_size();
                ldm.emplace(lc);
                LatentDiffusion::TrainOptions lo;
                lo.steps = fit_steps;
                lo.seed = common.seed;
                ldm->train(codes.flat(), lo);
                ldm->save(common.out / "latent.hdae");
                manifest.output(common.out / "latent.hdae");
            }
            auto samples = sample_unconditional(*ldm, bundle->model, sample_count, common.seed);
            for (int64_t i = 0; i < samples.size(0); ++i) {
                save_png("sample_" + zero_pad(i, 3) + ".png", samples[i]);
            }
            if (samples.size(0) > 0) {
                save_png("samples.png", make_grid(samples, std::min<int64_t>(columns, samples.size(0))));
            }
        } else if (cmd == eval_cmd) {
            std::vector<BenchModel> models;
            ImageTensor val;
            for (const auto& path : checkpoint_list) {
                auto b = load_model(path);
                manifest.input(path);
                if (!val.defined()) {
                    TrainConfig tc = b.train_config.get<TrainConfig>();
                    val = load_training_data(tc, b.model_config.image_size).validation;
                    val = val.narrow(0, 0, std::min<int64_t>(images, val.size(0)));
                    plan = b.model->default_plan();
                }
                models.push_back({fs::path(path).stem().string(), b.model, b.step});
            }
            BenchOptions bo;
            bo.seed = common.seed;
            auto report = reconstruction_benchmark(models, val, plan, bo);
            report.write_csv(common.out / "bench.csv");
            report.write_json(common.out / "bench.json");
            manifest.output(common.out / "bench.csv");
            manifest.output(common.out / "bench.json");
            for (const auto& r : report.rows) {
                std::cout << r.name << ' ' << to_string(r.mode) << " mse " << r.mse << " ssim " << r.ssim << '\n';
            }
        } else if (cmd == ablate_cmd) {
            ModelConfig mc = cfg_json.contains("model") ? cfg_json["model"].get<ModelConfig>() : ModelConfig{};
            TrainConfig tc = cfg_json.contains("train") ? cfg_json["train"].get<TrainConfig>() : TrainConfig{};
            if (width > 0) {
                mc.base_width = width;
            }
            tc.total_steps = steps;
            tc.seed = common.seed;
            tc.data.shapes.count = ablate_count;
            if (checkpoints < 3 || steps / checkpoints < 1 || steps / (steps / checkpoints) < 3) {
                throw UsageError("--steps " + std::to_string(steps) + " cannot produce 3 or more checkpoints");
            }
            manifest.config({{"model", mc}, {"train", tc}, {"variants", variants_text}});
            auto data = load_training_data(tc, mc.image_size);
            AblationOptions ao;
            ao.checkpoints = checkpoints;
            ao.out_dir = common.out;
            ao.on_validation = [](Variant v, const ValidationPoint& vp) {
                std::clog << to_string(v) << " step " << vp.step << " mse " << vp.reconstruction_mse << '\n';
            };
            auto curves = ablation_harness(variants, mc, tc, data.train, data.validation, ao);
            write_ablation_csv(common.out / "ablation.csv", curves);
            manifest.output(common.out / "ablation.csv");
            json order_json = json::array();
            for (auto v : final_ordering(curves)) {
                order_json.push_back(to_string(v));
            }
            manifest.extra() = {{"final_ordering", order_json}};
        } else if (cmd == probe_cmd) {
            auto lc = encode_shapes(*bundle, probe_count, common.seed);
            const auto L = lc.codes.num_levels();
            std::vector<std::pair<std::string, std::vector<int64_t>>> subsets;
            std::vector<int64_t> all(static_cast<size_t>(L));
            std::iota(all.begin(), all.end(), 0);
            subsets.emplace_back("full", all);
            for (int64_t l = 0; l < L; ++l) {
                subsets.emplace_back("level_" + std::to_string(l), std::vector<int64_t>{l});
            }
            if (L >= 2) {
                subsets.emplace_back("low_half", std::vector<int64_t>(all.begin(), all.begin() + L / 2));
                subsets.emplace_back("high_half", std::vector<int64_t>(all.begin() + L / 2, all.end()));
            }
            std::ofstream csv(common.out / "probe.csv");
            csv << "factor,subset,accuracy\n";
            for (const auto& f : factors) {
                const auto labels = binary_labels(lc.data, lc.spec, f);
                for (const auto& [label, subset] : subsets) {
                    const double acc = linear_probe(lc.codes, labels, subset);
                    csv << f << ',' << label << ',' << acc << '\n';
                    std::cout << f << ' ' << label << ' ' << acc << '\n';
                }
            }
            manifest.output(common.out / "probe.csv");
        } else if (cmd == cls_cmd) {
            auto lc = encode_shapes(*bundle, probe_count, common.seed);
            std::vector<AttributeDirection> dirs;
            for (const auto& f : factors) {
                dirs.push_back(train_classifier(lc.codes, binary_labels(lc.data, lc.spec, f), f));
                const auto att = level_attribution(dirs.back());
                std::cout << f << " held-out accuracy " << dirs.back().train_accuracy << " argmax level " << att.argmax
                          << '\n';
            }
            save_registry(common.out / "registry.json", dirs);
            write_heatmap_csv(common.out / "heatmap.csv", dirs);
            write_ecdf_csv(common.out / "ecdf.csv", dirs);
            manifest.output(common.out / "registry.json");
            manifest.output(common.out / "heatmap.csv");
            manifest.output(common.out / "ecdf.csv");
        } else if (cmd == serve_cmd) {
            std::vector<AttributeDirection> dirs;
            if (!registry.empty()) {
                manifest.input(registry);
                dirs = load_registry(registry);
            }
            ServiceConfig sc;
            sc.session_ttl = std::chrono::seconds(ttl);
            InferenceService service(std::move(*bundle), std::move(dirs), sc);
            manifest.write();
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            serve(service, host, port);
            return kExitOk;
        }
        manifest.write();
        return kExitOk;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

} // namespace hdae::cli
