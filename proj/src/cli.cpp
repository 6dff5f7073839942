#include "stsa/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>

#include "stsa/gradcheck.hpp"

namespace stsa {

std::vector<std::string> ablation_names() {
    return {"full",    "no-stsa-1",     "no-stsa-2",  "no-stsa-3", "no-stsa-4", "no-temporal",
            "single-sim", "no-aw", "no-stms", "concat-fusion", "no-layer1", "no-layer2"};
}

void apply_ablation(ModelConfig& cfg, std::string_view name) {
    if (name == "full") return;
    if (name.starts_with("no-stsa-") && name.size() == 9 && name[8] >= '1' && name[8] <= '4') {
        cfg.stsa_branches[static_cast<std::size_t>(name[8] - '1')] = false;
    } else if (name == "no-temporal") {
        cfg.variant = StsaVariant::no_temporal_relations;
    } else if (name == "single-sim") {
        cfg.variant = StsaVariant::single_similarity;
    } else if (name == "no-aw") {
        cfg.attentional_weighting = false;
    } else if (name == "no-stms") {
        cfg.multiscale = false;
    } else if (name == "concat-fusion") {
        cfg.fusion = FusionMode::concatenation;
    } else if (name == "no-layer1") {
        cfg.stsa_layer1 = false;
    } else if (name == "no-layer2") {
        cfg.stsa_layer2 = false;
    } else {
        throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
    }
}

std::size_t threads_from_env() {
    const char* v = std::getenv("STSA_THREADS");
    if (!v || !*v) return 1;
    char* end = nullptr;
    const unsigned long n = std::strtoul(v, &end, 10);
    if (*end != '\0' || n == 0) throw ConfigError(std::string("STSA_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<std::size_t>(n);
}

namespace {

bool is_clip_dir(const fs::path& p) { return fs::exists(p / kFramesFile); }

std::string frame_file(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.pgm", i);
    return buf;
}

Tensor<double> frame_of(const Tensor<float>& maps, std::size_t f) {
    const std::size_t h = maps.shape()[1], w = maps.shape()[2];
    Tensor<double> out({h, w});
    const float* src = maps.raw() + f * h * w;
    for (std::size_t i = 0; i < h * w; ++i) out[i] = src[i];
    return out;
}

}  // namespace

void run_inference(const fs::path& checkpoint, const fs::path& video, const fs::path& out,
                   std::size_t threads) {
    Checkpoint ckpt = load_checkpoint(checkpoint);
    const StsaNet net(ckpt.config.model);
    const bool single = is_clip_dir(video);
    const Dataset data = load_dataset(video);
    for (const auto& clip : data.clips) {
        const ModelConfig& cfg = ckpt.config.model;
        if (clip.height() != cfg.height || clip.width() != cfg.width) {
            throw ConfigError("clip " + clip.name + " is " + std::to_string(clip.height()) + "x" +
                              std::to_string(clip.width()) + ", checkpoint expects " +
                              std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
        }
        const auto maps = sliding_window_predict(net, ckpt.params, clip.frames, threads);
        const fs::path dir = single ? out : out / clip.name;
        fs::create_directories(dir);
        Tensor<float> stacked({maps.size(), cfg.height, cfg.width});
        for (std::size_t f = 0; f < maps.size(); ++f) {
            std::copy(maps[f].data().begin(), maps[f].data().end(), stacked.raw() + f * maps[f].size());
            write_pgm(dir / frame_file(f), maps[f].cast<double>());
        }
        write_tensor(dir / kSaliencyFile, stacked);
    }
}

std::vector<EvalRow> evaluate_predictions(const fs::path& pred, const fs::path& gt) {
    const Dataset data = load_dataset(gt);
    const bool single = is_clip_dir(gt);
    std::vector<EvalRow> rows;
    for (std::size_t c = 0; c < data.clips.size(); ++c) {
        const auto& clip = data.clips[c];
        const fs::path file = (single ? pred : pred / clip.name) / kSaliencyFile;
        const auto maps = read_tensor<float>(file);
        const Shape want{clip.length(), clip.height(), clip.width()};
        if (maps.shape() != want) {
            throw FormatError(file.string() + ": expected " + to_string(want) + ", got " +
                                  to_string(maps.shape()),
                              0);
        }
        for (std::size_t f = 0; f < clip.length(); ++f) {
            const auto& fix = clip.fixations[f];
            if (fix.empty()) throw ContractError("clip " + clip.name + " frame " + std::to_string(f) + " has no fixations");
            rows.push_back({clip.name, f,
                            score_frame(frame_of(maps, f), frame_of(clip.density, f), fix,
                                        shuffle_negatives(data, c, f))});
        }
    }
    return rows;
}

namespace {

std::array<double, 6> as_array(const FrameScores& s) { return {s.cc, s.nss, s.sim, s.kl, s.auc, s.sauc}; }

const std::array<const char*, 6> kMetricNames{"CC", "NSS", "SIM", "KL", "AUC", "sAUC"};

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

std::string format_eval_table(const std::vector<EvalRow>& rows) {
    // per-clip means in first-seen order, skipping NaN (sAUC without negatives)
    std::vector<std::string> order;
    std::map<std::string, std::pair<std::array<double, 6>, std::array<std::size_t, 6>>> acc;
    auto add = [&](const std::string& key, const FrameScores& s) {
        auto [it, fresh] = acc.try_emplace(key);
        if (fresh) order.push_back(key);
        const auto v = as_array(s);
        for (std::size_t m = 0; m < 6; ++m) {
            if (std::isnan(v[m])) continue;
            it->second.first[m] += v[m];
            ++it->second.second[m];
        }
    };
    for (const auto& r : rows) add(r.clip, r.scores);
    for (const auto& r : rows) add("mean", r.scores);

    std::vector<std::vector<std::string>> cells;
    cells.push_back({"clip", "frames"});
    for (const char* m : kMetricNames) cells.back().push_back(m);
    for (const auto& key : order) {
        const auto& [sum, n] = acc.at(key);
        cells.push_back({key, std::to_string(n[0])});
        for (std::size_t m = 0; m < 6; ++m) cells.back().push_back(n[m] ? fixed(sum[m] / static_cast<double>(n[m])) : "nan");
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream os;
    for (const auto& row : cells) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i == 0) {
                os << row[i] << std::string(width[i] - row[i].size(), ' ');
            } else {
                os << "  " << std::string(width[i] - row[i].size(), ' ') << row[i];
            }
        }
        os << '\n';
    }
    return os.str();
}

std::string format_eval_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream os;
    os << "clip,frame";
    for (const char* m : kMetricNames) os << ',' << m;
    os << '\n';
    char buf[32];
    for (const auto& r : rows) {
        os << r.clip << ',' << r.frame;
        for (double v : as_array(r.scores)) {
            std::snprintf(buf, sizeof buf, "%.6f", v);
            os << ',' << buf;
        }
        os << '\n';
    }
    return os.str();
}

namespace {

constexpr std::size_t kGenFrames = 40;
constexpr std::size_t kGenHeight = 48;
constexpr std::size_t kGenWidth = 32;

int cmd_gen_data(const fs::path& out, std::size_t clips, std::uint64_t seed, std::ostream& os) {
    write_synthetic_dataset(out, seed, clips, kGenFrames, kGenHeight, kGenWidth);
    os << "wrote " << clips << " clips to " << out.string() << '\n';
    return kExitOk;
}

int cmd_gradcheck(bool micro, std::ostream& os) {
    GradCheckSuiteOptions opt;
    opt.micro = micro;
    const auto results = run_gradcheck_suite(opt);
    double worst = 0.0;
    std::size_t name_w = 4;
    for (const auto& r : results) name_w = std::max(name_w, r.name.size());
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %7s  %12s  %12s  %s\n", static_cast<int>(name_w), "case",
                  "checked", "refined", "raw max", "max rel err", "worst");
    os << buf;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_rel_error);
        std::snprintf(buf, sizeof buf, "%-*s  %8zu  %7zu  %12.3e  %12.3e  %s\n", static_cast<int>(name_w),
                      r.name.c_str(), r.checked, r.refined, r.max_raw_error, r.max_rel_error, r.worst.c_str());
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.0e)\n", worst, kGradTolerance);
    os << buf;
    if (!(worst < kGradTolerance)) {
        os << "gradient check FAILED\n";
        return kExitNumerical;
    }
    return kExitOk;
}

RunConfig load_run_config(const std::string& path) { return path.empty() ? RunConfig{} : read_config(path); }

struct TrainArgs {
    std::string data, config, out, resume, supervision;
    std::optional<std::size_t> steps;
};

Checkpoint train_with(const TrainArgs& a, RunConfig cfg, std::ostream& os) {
    if (a.supervision == "middle") cfg.model.supervision = Supervision::middle;
    if (a.supervision == "last") cfg.model.supervision = Supervision::last;
    if (a.steps) cfg.train.steps = *a.steps;
    cfg.model.validate();
    const Dataset data = load_dataset(a.data);
    TrainOptions opt;
    opt.log = &os;
    if (!a.out.empty()) opt.checkpoint_path = fs::path(a.out);
    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = load_checkpoint(a.resume);
        opt.resume = &*resume;
    }
    return train_loop(data, cfg, opt);
}

void print_summary(const StsaNet& net, Checkpoint& ckpt, const Dataset& test, std::ostream& os) {
    const auto samples = evaluation_samples(test, ckpt.config.model);
    const double loss = evaluate_loss(net, ckpt.params, samples);
    double cc = 0.0, kl = 0.0;
    for (const auto& s : samples) {
        const auto p = net.predict(ckpt.params, s.clip).cast<double>();
        const auto g = s.target.cast<double>();
        cc += metric_cc(p, g);
        kl += metric_kl(p, g);
    }
    const double n = static_cast<double>(samples.size());
    char buf[160];
    std::snprintf(buf, sizeof buf, "eval samples %zu loss %.6f CC %.4f KL %.4f\n", samples.size(), loss,
                  cc / n, kl / n);
    os << buf;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Spatio-temporal self-attention video saliency"};
    app.require_subcommand(1);

    std::string gen_out;
    std::size_t gen_clips = 10;
    std::uint64_t gen_seed = 1;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic clip dataset");
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--clips", gen_clips, "Number of clips")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "Dataset seed");

    TrainArgs targs;
    auto* train = app.add_subcommand("train", "Train a model");
    train->add_option("--data", targs.data, "Dataset directory")->required();
    train->add_option("--config", targs.config, "Config file (key = value)");
    train->add_option("--out", targs.out, "Checkpoint to write")->required();
    train->add_option("--supervision", targs.supervision, "Target frame in the window")
        ->check(CLI::IsMember({"middle", "last"}));
    train->add_option("--steps", targs.steps, "Override the step count");
    train->add_option("--resume", targs.resume, "Continue from a checkpoint");

    std::string inf_ckpt, inf_video, inf_out;
    auto* infer = app.add_subcommand("infer", "Predict saliency maps");
    infer->add_option("--ckpt", inf_ckpt, "Checkpoint")->required();
    infer->add_option("--video", inf_video, "Clip directory or directory of clips")->required();
    infer->add_option("--out", inf_out, "Output directory")->required();

    std::string ev_pred, ev_gt, ev_csv;
    auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
    eval->add_option("--pred", ev_pred, "Prediction directory")->required();
    eval->add_option("--gt", ev_gt, "Ground-truth clip or dataset directory")->required();
    eval->add_option("--csv", ev_csv, "Also write per-frame scores as CSV");

    bool gc_micro = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare gradients with finite differences");
    gradcheck->add_flag("--micro", gc_micro, "Include the whole micro model");

    std::string ab_variant, ab_test;
    TrainArgs aargs;
    auto* ablate = app.add_subcommand("ablate", "Train and evaluate an ablated model");
    ablate->add_option("--variant", ab_variant, "Ablation")->required()->check(CLI::IsMember(ablation_names()));
    ablate->add_option("--data", aargs.data, "Training dataset")->required();
    ablate->add_option("--test", ab_test, "Evaluation dataset (default: the training data)");
    ablate->add_option("--config", aargs.config, "Base config file");
    ablate->add_option("--out", aargs.out, "Checkpoint to write");
    ablate->add_option("--steps", aargs.steps, "Override the step count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(gen_out, gen_clips, gen_seed, out);
        if (*train) {
            train_with(targs, load_run_config(targs.config), out);
            out << "saved " << targs.out << '\n';
            return kExitOk;
        }
        if (*infer) {
            run_inference(inf_ckpt, inf_video, inf_out, threads_from_env());
            out << "wrote predictions to " << inf_out << '\n';
            return kExitOk;
        }
        if (*eval) {
            const auto rows = evaluate_predictions(ev_pred, ev_gt);
            out << format_eval_table(rows);
            if (!ev_csv.empty()) write_text_file(ev_csv, format_eval_csv(rows));
            return kExitOk;
        }
        if (*gradcheck) return cmd_gradcheck(gc_micro, out);
        if (*ablate) {
            RunConfig cfg = load_run_config(aargs.config);
            apply_ablation(cfg.model, ab_variant);
            out << "variant " << ab_variant << '\n';
            Checkpoint ckpt = train_with(aargs, cfg, out);
            const StsaNet net(ckpt.config.model);
            out << "parameters " << ckpt.params.scalar_count() << '\n';
            print_summary(net, ckpt, load_dataset(ab_test.empty() ? aargs.data : ab_test), out);
            return kExitOk;
        }
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace stsa
