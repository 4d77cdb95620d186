// Command-line toolchain: train / eval / predict / gradcheck / synth.
//
// Exit codes: 0 success, 2 config error, 3 data/file error, 4 numerical
// abort, 5 checkpoint/data mismatch, 6 gradient-check failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lvit/lvit.hpp"

namespace fs = std::filesystem;
using namespace lvit;

namespace {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;
    std::size_t synthetic_n = 0;
    double synthetic_noise = 0.3;
    std::string preprocess = "crop-resize";
    std::string out;
    std::string checkpoint;
    std::string image;
};

KvMap run_config_to_kv(const RunConfig& rc) {
    KvMap kv = model_config_to_kv(rc.model);
    kv.merge(train_config_to_kv(rc.train));
    if (!rc.data_dir.empty()) kv["run.data"] = rc.data_dir;
    if (rc.synthetic_n > 0) kv["run.synthetic_per_class"] = std::to_string(rc.synthetic_n);
    kv["run.synthetic_noise"] = format_double(rc.synthetic_noise);
    kv["run.preprocess"] = rc.preprocess;
    if (!rc.out.empty()) kv["run.out"] = rc.out;
    if (!rc.checkpoint.empty()) kv["run.checkpoint"] = rc.checkpoint;
    if (!rc.image.empty()) kv["run.image"] = rc.image;
    return kv;
}

void run_config_from_kv(const KvMap& kv, RunConfig& rc) {
    rc.model = model_config_from_kv(kv);
    rc.train = train_config_from_kv(kv);
    if (auto v = kv_get(kv, "run.data")) rc.data_dir = *v;
    rc.synthetic_n = kv_u64(kv, "run.synthetic_per_class", rc.synthetic_n);
    rc.synthetic_noise = kv_f64(kv, "run.synthetic_noise", rc.synthetic_noise);
    if (auto v = kv_get(kv, "run.preprocess")) rc.preprocess = *v;
    if (auto v = kv_get(kv, "run.out")) rc.out = *v;
    if (auto v = kv_get(kv, "run.checkpoint")) rc.checkpoint = *v;
    if (auto v = kv_get(kv, "run.image")) rc.image = *v;
}

/// `--config FILE` must take effect before flag overrides, so it is scanned
/// out of argv ahead of CLI11 parsing.
void apply_config_file(int argc, char** argv, RunConfig& rc) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        std::string path;
        if (arg == "--config" && i + 1 < argc) {
            path = argv[i + 1];
        } else if (arg.rfind("--config=", 0) == 0) {
            path = arg.substr(9);
        } else {
            continue;
        }
        run_config_from_kv(parse_kv(read_file(path)), rc);
        return;
    }
}

Dataset load_dataset(const RunConfig& rc, std::optional<std::size_t> expected_classes) {
    if (rc.synthetic_n > 0 && !rc.data_dir.empty()) {
        throw ValueError("--data and --synthetic are mutually exclusive");
    }
    if (rc.synthetic_n > 0) {
        return gen_synthetic(rc.synthetic_n, rc.train.seed, rc.synthetic_noise);
    }
    if (rc.data_dir.empty()) {
        throw ValueError("a data source is required: --data DIR or --synthetic N");
    }
    return load_image_dir(rc.data_dir, expected_classes,
                          preprocess_mode_from_string(rc.preprocess));
}

fs::path require_out(const RunConfig& rc) {
    if (rc.out.empty()) throw ValueError("--out DIR is required");
    const fs::path out(rc.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

std::vector<std::string> checkpoint_label_names(const CheckpointMeta& meta, std::size_t k) {
    if (meta.label_names.size() == k) return meta.label_names;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
    return names;
}

int run_train(RunConfig& rc) {
    rc.model.validate();
    rc.train.validate();
    const fs::path out = require_out(rc);
    write_file_atomic(out / "config.resolved", emit_kv(run_config_to_kv(rc)));

    const Dataset ds = load_dataset(rc, rc.model.num_classes);
    std::printf("loaded %zu samples across %zu classes\n", ds.size(), ds.num_classes());

    Rng init_rng(Rng::derive(rc.train.seed, 0));
    ModelParams params = init_params(rc.model, init_rng);
    std::printf("model has %zu parameters\n", params.total_params());

    std::string log = "epoch,loss,accuracy,lr\n";
    const auto reports = fit(params, ds, rc.train, [&](const EpochReport& r) {
        log += std::to_string(r.epoch) + "," + format_double(r.mean_loss) + "," +
               format_double(r.train_accuracy) + "," + format_double(r.lr) + "\n";
        std::printf("epoch %zu loss %.6f accuracy %.4f lr %.6g (%.1fs)\n", r.epoch, r.mean_loss,
                    r.train_accuracy, r.lr, r.seconds);
        std::fflush(stdout);
    });
    write_file_atomic(out / "train_log.csv", log);

    CheckpointMeta meta;
    meta.epoch = reports.size();
    meta.seed = rc.train.seed;
    meta.label_names = ds.label_names;
    save_checkpoint(params, meta, out / "checkpoint.lvit");
    std::printf("final train accuracy %.4f; checkpoint written to %s\n",
                reports.back().train_accuracy, (out / "checkpoint.lvit").string().c_str());
    return 0;
}

int run_eval(RunConfig& rc) {
    if (rc.checkpoint.empty()) throw ValueError("--checkpoint PATH is required");
    const fs::path out = require_out(rc);
    write_file_atomic(out / "config.resolved", emit_kv(run_config_to_kv(rc)));

    LoadedCheckpoint loaded = load_checkpoint(rc.checkpoint);
    rc.model = loaded.params.config();
    const Dataset ds = load_dataset(rc, std::nullopt);
    if (ds.num_classes() != rc.model.num_classes) {
        throw CompatibilityError("checkpoint has " + std::to_string(rc.model.num_classes) +
                                 " classes, data has " + std::to_string(ds.num_classes()));
    }

    std::vector<std::size_t> truth, pred;
    Rng eval_rng(0);
    for (const Sample& s : ds.samples) {
        Tape tape;
        Tensor logits = forward(tape, loaded.params, s.image, false, eval_rng);
        truth.push_back(s.label);
        pred.push_back(predict(logits));
    }
    const ConfusionMatrix cm = confusion(truth, pred, rc.model.num_classes, ds.label_names);
    const MetricsReport report = macro_metrics(cm);
    render_heatmap(cm, out / "heatmap.ppm", out / "confusion.csv");
    write_file_atomic(out / "metrics.txt", format_metrics_text(cm, report));
    std::printf("%s", format_metrics_text(cm, report).c_str());
    std::printf("evaluated %zu samples; overall_accuracy %.6f\n", ds.size(),
                report.overall_accuracy);
    return 0;
}

int run_predict(RunConfig& rc) {
    if (rc.checkpoint.empty()) throw ValueError("--checkpoint PATH is required");
    if (rc.image.empty()) throw ValueError("--image PATH is required");
    LoadedCheckpoint loaded = load_checkpoint(rc.checkpoint);
    Tensor input;
    try {
        input = preprocess(load_image_file(rc.image), preprocess_mode_from_string(rc.preprocess),
                           loaded.params.config().image_size);
    } catch (const ValueError&) {
        throw;
    } catch (const Error& e) {
        throw IngestError("cannot load " + rc.image + ": " + e.what());
    }

    Tape tape;
    Rng eval_rng(0);
    Tensor logits = forward(tape, loaded.params, input, false, eval_rng);
    const std::size_t cls = predict(logits);
    const std::vector<double> probs = softmax_values(logits.data);
    const auto names = checkpoint_label_names(loaded.meta, loaded.params.config().num_classes);
    std::printf("predicted %s (class %zu)\n", names[cls].c_str(), cls);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        std::printf("prob %s %.9f\n", names[i].c_str(), probs[i]);
    }
    return 0;
}

OpKind parse_op_kind(const std::string& name) {
    for (const OpKind k :
         {OpKind::kLeaf, OpKind::kMatMul, OpKind::kTranspose, OpKind::kReshape, OpKind::kConcat,
          OpKind::kSlice, OpKind::kAdd, OpKind::kAddRow, OpKind::kScale, OpKind::kCMul,
          OpKind::kSoftmax, OpKind::kLayerNorm, OpKind::kGelu, OpKind::kDropout,
          OpKind::kReduceSum, OpKind::kReduceMean, OpKind::kCrossEntropy}) {
        if (name == op_name(k)) return k;
    }
    throw ValueError("unknown op kind: " + name);
}

struct GradcheckArgs {
    std::uint64_t seed = 1;
    double eps = 1e-5;
    double tol = 1e-5;
    std::string fault_op;  // test hook: corrupt one backward rule
    double fault_factor = 2.0;
};

int run_gradcheck(const GradcheckArgs& args) {
    ModelConfig mc;
    mc.embed_dim = 8;
    mc.num_heads = 2;
    mc.num_layers = 2;
    mc.dropout_p = 0.0;
    Rng init_rng(Rng::derive(args.seed, 0));
    ModelParams params = init_params(mc, init_rng);

    Rng data_rng(Rng::derive(args.seed, 2));
    const std::vector<Tensor> patch_sets = {
        patchify(preprocess(synthetic_raw(1, 0.3, data_rng)), mc),
        patchify(preprocess(synthetic_raw(7, 0.3, data_rng)), mc),
    };
    const std::vector<std::size_t> labels = {1, 7};
    const std::optional<OpKind> fault =
        args.fault_op.empty() ? std::nullopt : std::optional<OpKind>(parse_op_kind(args.fault_op));

    auto f = [&](Tape& tape) {
        if (fault) tape.inject_backward_fault(*fault, args.fault_factor);
        Rng unused(0);
        std::vector<Tensor> rows;
        for (const Tensor& patches : patch_sets) {
            rows.push_back(forward_patches(tape, params, patches, false, unused));
        }
        return tape.cross_entropy(tape.concat(rows, 0), labels);
    };

    const GradCheckReport report = grad_check(f, params.all(), args.eps);
    for (const auto& pe : report.per_param) {
        std::printf("param %-16s max_rel_err %.3e\n", pe.name.c_str(), pe.rel_err);
    }
    std::printf("max_rel_err %.3e at parameter %s (tolerance %.1e)\n", report.max_rel_err,
                report.worst_param.c_str(), args.tol);
    if (report.max_rel_err >= args.tol) {
        std::fprintf(stderr, "gradient check FAILED at parameter %s: %.3e >= %.1e\n",
                     report.worst_param.c_str(), report.max_rel_err, args.tol);
        return 6;
    }
    std::printf("gradient check passed\n");
    return 0;
}

int run_synth(RunConfig& rc) {
    if (rc.synthetic_n == 0) throw ValueError("--per-class N is required");
    const fs::path out = require_out(rc);
    write_file_atomic(out / "config.resolved", emit_kv(run_config_to_kv(rc)));
    write_synthetic_tree(out, rc.synthetic_n, rc.train.seed, rc.synthetic_noise);
    std::printf("wrote 10 x %zu PGM images under %s\n", rc.synthetic_n, out.string().c_str());
    return 0;
}

void add_model_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--image-size", rc.model.image_size, "input image side length");
    cmd->add_option("--patch-size", rc.model.patch_size, "patch side length");
    cmd->add_option("--embed-dim", rc.model.embed_dim, "token embedding width D");
    cmd->add_option("--heads", rc.model.num_heads, "attention heads");
    cmd->add_option("--layers", rc.model.num_layers, "encoder layers");
    cmd->add_option("--mlp-ratio", rc.model.mlp_ratio, "FFN hidden width multiplier");
    cmd->add_option("--dropout", rc.model.dropout_p, "dropout rate");
    cmd->add_option("--num-classes", rc.model.num_classes, "number of classes");
}

void add_data_flags(CLI::App* cmd, RunConfig& rc) {
    cmd->add_option("--data", rc.data_dir, "class-per-subdirectory image tree");
    cmd->add_option("--synthetic", rc.synthetic_n, "use N synthetic samples per class");
    cmd->add_option("--noise", rc.synthetic_noise, "synthetic speckle noise level");
    cmd->add_option("--preprocess", rc.preprocess,
                    "crop-resize (default), crop-only or resize-only");
}

int dispatch(int argc, char** argv) {
    RunConfig rc;
    apply_config_file(argc, argv, rc);

    CLI::App app{"lightweight vision transformer toolchain for SAR-style target classification"};
    app.require_subcommand(1);
    std::string config_path;  // consumed by apply_config_file; declared so CLI11 accepts it

    GradcheckArgs gc;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write artifacts");
    train_cmd->add_option("--config", config_path, "key=value run config file");
    train_cmd->add_option("--seed", rc.train.seed, "run seed");
    train_cmd->add_option("--out", rc.out, "output directory")->required();
    add_data_flags(train_cmd, rc);
    add_model_flags(train_cmd, rc);
    train_cmd->add_option("--lr", rc.train.lr0, "initial learning rate");
    train_cmd->add_option("--gamma", rc.train.decay_gamma, "per-epoch lr decay");
    train_cmd->add_option("--epochs", rc.train.epochs, "training epochs");
    train_cmd->add_option("--batch-size", rc.train.batch_size, "batch size");
    train_cmd->add_option("--warm-start", rc.train.warm_start, "checkpoint to start from");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval_cmd->add_option("--config", config_path, "key=value run config file");
    eval_cmd->add_option("--checkpoint", rc.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--seed", rc.train.seed, "seed for synthetic eval data");
    eval_cmd->add_option("--out", rc.out, "output directory")->required();
    add_data_flags(eval_cmd, rc);

    CLI::App* predict_cmd = app.add_subcommand("predict", "classify a single image");
    predict_cmd->add_option("--checkpoint", rc.checkpoint, "model checkpoint")->required();
    predict_cmd->add_option("--image", rc.image, "image file (PGM, PNG or Phoenix .raw)")
        ->required();
    predict_cmd->add_option("--preprocess", rc.preprocess,
                            "crop-resize (default), crop-only or resize-only");

    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "verify gradients on a tiny model (D=8, h=2, L=2)");
    gradcheck_cmd->add_option("--seed", gc.seed, "seed for weights and probe inputs");
    gradcheck_cmd->add_option("--eps", gc.eps, "finite-difference step");
    gradcheck_cmd->add_option("--tol", gc.tol, "max relative error accepted");
    gradcheck_cmd->add_option("--fault-op", gc.fault_op)->group("");  // test hook
    gradcheck_cmd->add_option("--fault-factor", gc.fault_factor)->group("");

    CLI::App* synth_cmd = app.add_subcommand("synth", "materialize the synthetic dataset as PGMs");
    synth_cmd->add_option("--per-class", rc.synthetic_n, "samples per class")->required();
    synth_cmd->add_option("--seed", rc.train.seed, "generation seed");
    synth_cmd->add_option("--noise", rc.synthetic_noise, "speckle noise level");
    synth_cmd->add_option("--out", rc.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc_code = app.exit(e);
        return rc_code == 0 ? 0 : 2;
    }

    if (train_cmd->parsed()) return run_train(rc);
    if (eval_cmd->parsed()) return run_eval(rc);
    if (predict_cmd->parsed()) return run_predict(rc);
    if (gradcheck_cmd->parsed()) return run_gradcheck(gc);
    if (synth_cmd->parsed()) return run_synth(rc);
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const CompatibilityError& e) {
        std::fprintf(stderr, "compatibility error: %s\n", e.what());
        return 5;
    } catch (const IngestError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "format error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 2;
    }
}
