#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ddaig/ddaig.hpp"

namespace {

using namespace ddaig;

json read_json_file(const fs::path& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw Error("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_text_file(path, j.dump(2) + "\n");
}

template <class T>
std::vector<T> parse_list(const std::string& text, const char* what) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw Error(std::string("cannot parse '") + item + "' in " + what);
        out.push_back(v);
    }
    if (out.empty()) throw Error(std::string(what) + " is empty");
    return out;
}

fs::path resolve_data(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("DDAIG_DATA_ROOT"); env && *env) return env;
    throw Error("no dataset given: pass --data or set DDAIG_DATA_ROOT");
}

/// A run config file: {"train": {...}, "eval": {...}}, both optional, unknown keys rejected.
struct RunFile {
    json train = json::object();
    json eval = json::object();
};

RunFile read_run_file(const std::string& path) {
    RunFile rf;
    if (path.empty()) return rf;
    const json j = read_json_file(path);
    if (!j.is_object()) throw Error("run config must be a JSON object");
    reject_unknown_keys(j, {"train", "eval"}, "run config");
    if (j.contains("train")) rf.train = j.at("train");
    if (j.contains("eval")) rf.eval = j.at("eval");
    return rf;
}

struct TrainFlags {
    std::optional<double> lambda, alpha, eta, epsilon;
    std::optional<std::size_t> epochs, max_iters, batch_size;
    std::optional<long> warmup_iters;
    std::optional<std::uint64_t> seed;
    bool stn = false;

    void add_to(CLI::App* app) {
        app->add_option("--lambda", lambda, "Perturbation weight");
        app->add_option("--alpha", alpha, "Weight of the transformed-data loss");
        app->add_option("--eta", eta, "Initial learning rate");
        app->add_option("--epsilon", epsilon, "CrossGrad step size");
        app->add_option("--epochs", epochs, "Training epochs");
        app->add_option("--max-iters", max_iters, "Iteration budget (overrides --epochs)");
        app->add_option("--batch-size", batch_size, "Minibatch size");
        app->add_option("--warmup-iters", warmup_iters, "Iterations on original data only");
        app->add_option("--seed", seed, "Seed");
        app->add_flag("--stn", stn, "Add a spatial transformer to the DoTNet");
    }

    TrainConfig apply(TrainConfig c) const {
        if (lambda) c.lambda = *lambda;
        if (alpha) c.alpha = *alpha;
        if (eta) c.eta = *eta;
        if (epsilon) c.crossgrad.epsilon = *epsilon;
        if (epochs) c.epochs = *epochs;
        if (max_iters) c.max_iters = *max_iters;
        if (batch_size) c.batch_size = *batch_size;
        if (warmup_iters) c.warmup_iters = *warmup_iters;
        if (seed) c.seed = *seed;
        if (stn) c.dotnet.use_stn = true;
        c.validate();
        return c;
    }
};

// ---- generate-data ----

struct GenerateArgs {
    std::string spec, out;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

int cmd_generate(const GenerateArgs& a) {
    SynthBenchmarkSpec spec = a.spec.empty() ? SynthBenchmarkSpec{} : synth_spec_from_json(read_json_file(a.spec));
    if (a.seed) spec.seed = *a.seed;
    const auto ds = generate_synthetic_benchmark(spec, a.out, a.force);
    std::cout << "wrote " << ds.domains.size() << " domains x " << ds.classes.size() << " classes to " << a.out
              << " (seed " << spec.seed << ")\n";
    for (const auto& [name, items] : ds.splits) {
        std::vector<std::size_t> per(ds.domains.size(), 0);
        for (const auto& im : items) per[static_cast<std::size_t>(im.domain_label)]++;
        std::cout << "  " << name << ": " << items.size() << " images";
        for (std::size_t d = 0; d < per.size(); ++d) std::cout << (d ? ", " : " (") << ds.domains[d] << " " << per[d];
        std::cout << ")\n";
    }
    return 0;
}

// ---- train ----

struct TrainArgs {
    std::string method = "ddaig", data, holdout, config, out;
    std::string device = "cpu";
    TrainFlags flags;
};

int cmd_train(const TrainArgs& a) {
    if (a.device != "cpu") throw Error("only --device cpu is supported");
    const Method method = method_from_string(a.method);
    const RunFile rf = read_run_file(a.config);
    const TrainConfig cfg = a.flags.apply(train_config_from_json(rf.train));
    const fs::path data_root = resolve_data(a.data);
    const MultiDomainDataset ds = load_image_folder(data_root);
    std::optional<SourceView> view;
    if (!a.holdout.empty()) view = make_source_view(ds, a.holdout);
    const MultiDomainDataset& sources = view ? view->sources : ds;

    const fs::path out = a.out;
    fs::create_directories(out / "checkpoints");
    fs::create_directories(out / "logs");
    const json echo = {{"command", "train"},
                       {"method", to_string(method)},
                       {"data", fs::absolute(data_root).string()},
                       {"held_out", a.holdout.empty() ? json(nullptr) : json(a.holdout)},
                       {"train", to_json(cfg)}};
    write_json_file(out / "train_config.json", echo);

    TrainOutputs outputs{out / "checkpoints", out / "logs" / "loss.jsonl", {{"held_out", echo["held_out"]}}};
    auto result = train<float>(sources, method, cfg, outputs);
    const auto& last = result.reports.back();
    std::cout << "trained " << to_string(method) << " for " << result.reports.size()
              << " iterations; last J_L=" << last.label_loss << "\n";
    std::cout << "final checkpoint: " << (out / "checkpoints" / "final.ckpt").string() << "\n";
    std::cout << "parameter checksum: " << checksum(result.trainer.label_classifier().params()) << "\n";
    if (view) {
        const double acc = accuracy(result.trainer.label_classifier(), view->held_out);
        std::cout << "held-out accuracy on " << a.holdout << ": " << acc << "\n";
        write_json_file(out / "reports" / "train_eval.json",
                        {{"held_out_domain", a.holdout}, {"accuracy", acc}, {"config", echo}});
    }
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string suite = "lodo", data, config, out, checkpoint, holdout, target;
    std::optional<std::size_t> seeds, jobs;
    std::string seed_list, lambdas, angles, methods;
    TrainFlags flags;
};

MethodSpec method_spec(const std::string& name, const TrainConfig& cfg) {
    if (name == "ddaig+stn") {
        MethodSpec s{name, Method::ddaig, cfg};
        s.cfg.dotnet.use_stn = true;
        return s;
    }
    MethodSpec s{name, method_from_string(name), cfg};
    if (s.method == Method::ddaig) s.cfg.dotnet.use_stn = false;
    return s;
}

int eval_checkpoint(const EvalArgs& a, const fs::path& data_root, const fs::path& out) {
    if (!fs::exists(a.checkpoint)) throw Error("checkpoint '" + a.checkpoint + "' does not exist");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const SavedModels models = load_models(ck);
    std::string held_out = a.holdout;
    if (held_out.empty() && ck.meta.contains("held_out") && ck.meta.at("held_out").is_string())
        held_out = ck.meta.at("held_out").get<std::string>();
    if (held_out.empty()) throw Error("the checkpoint records no held-out domain; pass --holdout");
    const MultiDomainDataset ds = load_image_folder(data_root);
    const SourceView view = make_source_view(ds, held_out);
    if (view.sources.domains != models.domains) throw Error("checkpoint source domains do not match the dataset");
    const auto angles = a.angles.empty() ? std::vector<double>{0.0} : parse_list<double>(a.angles, "--angles");
    json results = json::array();
    for (double angle : angles) {
        const double acc = accuracy(models.label, rotate_examples(view.held_out, ds.image_shape, angle));
        std::cout << held_out << " @ " << angle << " deg: " << acc << "\n";
        results.push_back({{"angle", angle}, {"accuracy", acc}});
    }
    write_json_file(out / "reports" / "checkpoint_eval.json",
                    {{"checkpoint", fs::absolute(a.checkpoint).string()},
                     {"held_out_domain", held_out},
                     {"method", to_string(models.method)},
                     {"results", results}});
    return 0;
}

int cmd_eval(const EvalArgs& a) {
    const fs::path data_root = resolve_data(a.data);
    const fs::path out = a.out;
    if (!a.checkpoint.empty()) return eval_checkpoint(a, data_root, out);

    const RunFile rf = read_run_file(a.config);
    reject_unknown_keys(rf.eval, {"seeds", "jobs", "lambdas", "angles", "methods", "target"}, "run config eval");
    const TrainConfig cfg = a.flags.apply(train_config_from_json(rf.train));

    ExperimentOptions opts;
    if (rf.eval.contains("seeds")) opts.seeds = rf.eval.at("seeds").get<std::vector<std::uint64_t>>();
    if (a.seeds) {
        opts.seeds.clear();
        for (std::uint64_t s = 0; s < *a.seeds; ++s) opts.seeds.push_back(s);
    }
    if (!a.seed_list.empty()) opts.seeds = parse_list<std::uint64_t>(a.seed_list, "--seed-list");
    opts.jobs = rf.eval.value("jobs", std::size_t{1});
    if (a.jobs) opts.jobs = *a.jobs;
    opts.progress = [](const std::string& line) { std::cerr << line << "\n"; };

    auto list_or = [&](const std::string& flag, const char* key, std::vector<double> fallback) {
        if (!flag.empty()) return parse_list<double>(flag, key);
        if (rf.eval.contains(key)) return rf.eval.at(key).get<std::vector<double>>();
        return fallback;
    };
    std::vector<std::string> method_names;
    if (!a.methods.empty()) {
        method_names = parse_list<std::string>(a.methods, "--methods");
    } else if (rf.eval.contains("methods")) {
        method_names = rf.eval.at("methods").get<std::vector<std::string>>();
    }

    const MultiDomainDataset ds = load_image_folder(data_root);
    ComparisonTable table;
    json suite_params = json::object();
    if (a.suite == "lodo") {
        if (method_names.empty()) method_names = {"vanilla", "crossgrad", "ddaig"};
        std::vector<MethodSpec> specs;
        for (const auto& m : method_names) specs.push_back(method_spec(m, cfg));
        table = lodo_table(ds, specs, opts);
        suite_params["methods"] = method_names;
    } else if (a.suite == "lambda-sweep") {
        const auto lambdas = list_or(a.lambdas, "lambdas", {0.1, 0.3, 0.5, 0.7});
        table = lambda_sweep(ds, lambdas, cfg, opts);
        suite_params["lambdas"] = lambdas;
    } else if (a.suite == "ablation") {
        table = ablation_source_novel(ds, cfg, opts);
    } else if (a.suite == "rotated") {
        const auto angles = list_or(a.angles, "angles", {0, 20, 30, 40, 50});
        std::string target = a.target.empty() ? rf.eval.value("target", ds.domains.front()) : a.target;
        if (method_names.empty()) method_names = {"crossgrad", "ddaig", "ddaig+stn"};
        std::vector<MethodSpec> specs;
        for (const auto& m : method_names) specs.push_back(method_spec(m, cfg));
        table = rotated_target_eval(ds, target, angles, specs, opts);
        suite_params = {{"angles", angles}, {"target", target}, {"methods", method_names}};
    } else {
        throw Error("unknown suite '" + a.suite + "' (expected lodo, lambda-sweep, ablation or rotated)");
    }

    const json echo = {{"command", "eval"},
                       {"suite", a.suite},
                       {"data", fs::absolute(data_root).string()},
                       {"seeds", opts.seeds},
                       {"jobs", opts.jobs},
                       {"params", suite_params},
                       {"train", to_json(cfg)}};
    write_json_file(out / "eval_config.json", echo);
    json results = to_json(table);
    results["config"] = echo;
    write_json_file(out / "reports" / (a.suite + ".json"), results);
    const std::string text = render_table(table);
    write_text_file(out / "reports" / (a.suite + ".txt"), text);
    std::cout << text;
    return 0;
}

// ---- export ----

struct ExportArgs {
    std::string kind, checkpoint, data, out;
    std::size_t n = 16;
    std::optional<double> lambda;
};

int cmd_export(const ExportArgs& a) {
    if (!fs::exists(a.checkpoint)) throw Error("checkpoint '" + a.checkpoint + "' does not exist");
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const SavedModels models = load_models(ck);
    if (a.kind != "triptych" && a.kind != "features" && a.kind != "stn") {
        throw Error("unknown export kind '" + a.kind + "' (expected triptych, features or stn)");
    }
    if (!models.dotnet) {
        throw Error("checkpoint was trained with method '" + to_string(models.method) +
                    "' and has no DoTNet; " + a.kind + " export needs a ddaig checkpoint");
    }
    if (a.kind == "stn" && !models.dotnet->has_stn()) {
        throw Error("checkpoint DoTNet has no spatial transformer; retrain with --stn to export an STN gallery");
    }
    const double lambda = a.lambda ? *a.lambda : models.config.lambda;
    const fs::path data_root = resolve_data(a.data);
    const MultiDomainDataset ds = load_image_folder(data_root);
    std::optional<SourceView> view;
    if (ck.meta.contains("held_out") && ck.meta.at("held_out").is_string())
        view = make_source_view(ds, ck.meta.at("held_out").get<std::string>());
    const MultiDomainDataset& sources = view ? view->sources : ds;
    if (sources.domains != models.domains) throw Error("checkpoint source domains do not match the dataset");
    const auto& val = sources.split("val");

    const fs::path out = fs::path(a.out) / "viz";
    fs::create_directories(out);
    json echo = {{"command", "export"},
                 {"kind", a.kind},
                 {"checkpoint", fs::absolute(a.checkpoint).string()},
                 {"data", fs::absolute(data_root).string()},
                 {"lambda", lambda}};
    if (a.kind == "features") {
        const auto path = out / "features.csv";
        const auto dump = export_domain_features(*models.domain, *models.dotnet, val, lambda, path);
        std::cout << "wrote " << dump.rows.size() << " feature rows of dimension " << dump.feature_dim << " to "
                  << path.string() << "\n";
        echo["rows"] = dump.rows.size();
    } else {
        if (a.n == 0) throw Error("--n must be positive");
        const std::vector<LabeledImage> ex(val.begin(), val.begin() + static_cast<long>(std::min(a.n, val.size())));
        const auto paths = a.kind == "triptych" ? export_triptychs(*models.dotnet, ex, ds.image_shape, lambda, out / "triptych")
                                                : export_stn_gallery(*models.dotnet, ex, ds.image_shape, lambda, out / "stn");
        std::cout << "wrote " << paths.size() << " images to " << paths.front().parent_path().string() << "\n";
        echo["n"] = paths.size();
    }
    write_json_file(out / ("export_" + a.kind + "_config.json"), echo);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train and evaluate held-out-domain classifiers with a learned perturbation network"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate-data", "Write the synthetic multi-domain digit benchmark");
    g->add_option("--spec", gen.spec, "Benchmark spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--seed", gen.seed, "Overrides the spec seed");
    g->add_flag("--force", gen.force, "Replace an existing benchmark");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one model");
    t->add_option("--method", tr.method, "vanilla, crossgrad or ddaig");
    t->add_option("--data", tr.data, "Dataset root (default: $DDAIG_DATA_ROOT)");
    t->add_option("--holdout", tr.holdout, "Domain left out of training");
    t->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
    t->add_option("--out", tr.out, "Output directory")->required();
    t->add_option("--device", tr.device, "Compute device (cpu)");
    tr.flags.add_to(t);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Run an evaluation suite or score a checkpoint");
    e->add_option("--suite", ev.suite, "lodo, lambda-sweep, ablation or rotated");
    e->add_option("--data", ev.data, "Dataset root (default: $DDAIG_DATA_ROOT)");
    e->add_option("--config", ev.config, "Run config JSON")->check(CLI::ExistingFile);
    e->add_option("--out", ev.out, "Output directory")->required();
    e->add_option("--seeds", ev.seeds, "Number of seeds (0..N-1)");
    e->add_option("--seed-list", ev.seed_list, "Comma-separated seeds");
    e->add_option("--jobs", ev.jobs, "Parallel training jobs");
    e->add_option("--lambdas", ev.lambdas, "Comma-separated lambdas for lambda-sweep");
    e->add_option("--angles", ev.angles, "Comma-separated rotation angles in degrees");
    e->add_option("--methods", ev.methods, "Comma-separated methods (vanilla, crossgrad, ddaig, ddaig+stn)");
    e->add_option("--target", ev.target, "Held-out domain for the rotated suite");
    e->add_option("--checkpoint", ev.checkpoint, "Score this checkpoint instead of running a suite");
    e->add_option("--holdout", ev.holdout, "Held-out domain for --checkpoint");
    ev.flags.add_to(e);

    ExportArgs ex;
    auto* x = app.add_subcommand("export", "Write visualizations from a checkpoint");
    x->add_option("--kind", ex.kind, "triptych, features or stn")->required();
    x->add_option("--checkpoint", ex.checkpoint, "Checkpoint file")->required();
    x->add_option("--data", ex.data, "Dataset root (default: $DDAIG_DATA_ROOT)");
    x->add_option("--out", ex.out, "Output directory")->required();
    x->add_option("--n", ex.n, "Number of examples for image exports");
    x->add_option("--lambda", ex.lambda, "Perturbation weight (default: from the checkpoint)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err);
    }
    try {
        if (g->parsed()) return cmd_generate(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_eval(ev);
        if (x->parsed()) return cmd_export(ex);
    } catch (const TrainingAborted& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }
    return 1;
}
