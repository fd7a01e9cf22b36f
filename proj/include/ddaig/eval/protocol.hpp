#ifndef DDAIG_EVAL_PROTOCOL_HPP
#define DDAIG_EVAL_PROTOCOL_HPP

#include <atomic>
#include <cstdio>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ddaig/eval/metrics.hpp"
#include "ddaig/train/trainer.hpp"

namespace ddaig {

/// A named training recipe: one row of a comparison table.
struct MethodSpec {
    std::string label;
    Method method = Method::ddaig;
    TrainConfig cfg;
};

struct ExperimentOptions {
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::size_t jobs = 1;
    std::vector<double> angles{0.0};                   // rotations applied to the held-out images
    std::function<void(const std::string&)> progress;  // called from worker threads, serialized
};

/// Trains `spec` with `seed` on every domain except `held_out` and returns the held-out
/// accuracy at each angle.
inline std::vector<double> run_cell(const MultiDomainDataset& ds, const std::string& held_out, const MethodSpec& spec,
                                    std::uint64_t seed, const std::vector<double>& angles) {
    const SourceView view = make_source_view(ds, held_out);
    std::set<std::string> target_files;
    for (const auto& im : view.held_out) target_files.insert(im.path);
    for (const auto& im : view.sources.split("train")) {
        if (target_files.count(im.path)) throw Error("held-out image '" + im.path + "' leaked into training data");
    }
    TrainConfig cfg = spec.cfg;
    cfg.seed = seed;
    Trainer<float> trainer(view.sources, spec.method, cfg);
    trainer.run();
    std::vector<double> out;
    for (double a : angles) {
        out.push_back(accuracy(trainer.label_classifier(), rotate_examples(view.held_out, ds.image_shape, a)));
    }
    return out;
}

/// result[spec][held_out][angle] for every (spec, held-out domain, seed) cell. Cells run on
/// up to opts.jobs threads; a failing seed is recorded in its reports, never dropped.
inline std::vector<std::vector<std::vector<EvalReport>>> evaluate_grid(const MultiDomainDataset& ds,
                                                                       const std::vector<MethodSpec>& specs,
                                                                       const std::vector<std::string>& held_out,
                                                                       const ExperimentOptions& opts) {
    if (opts.seeds.empty()) throw Error("at least one seed is required");
    if (opts.angles.empty()) throw Error("at least one angle is required");
    for (const auto& h : held_out) ds.domain_index(h);
    struct Job {
        std::size_t spec, domain, seed;
    };
    std::vector<Job> jobs;
    for (std::size_t s = 0; s < specs.size(); ++s)
        for (std::size_t d = 0; d < held_out.size(); ++d)
            for (std::size_t k = 0; k < opts.seeds.size(); ++k) jobs.push_back({s, d, k});

    struct Outcome {
        std::vector<double> acc;
        std::string error;
    };
    std::vector<Outcome> outcomes(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const Job& job = jobs[j];
            const auto& spec = specs[job.spec];
            const std::uint64_t seed = opts.seeds[job.seed];
            try {
                outcomes[j].acc = run_cell(ds, held_out[job.domain], spec, seed, opts.angles);
            } catch (const std::exception& e) {
                outcomes[j].error = e.what();
            }
            if (opts.progress) {
                std::ostringstream os;
                os << spec.label << " held-out=" << held_out[job.domain] << " seed=" << seed;
                if (outcomes[j].error.empty()) {
                    for (std::size_t a = 0; a < opts.angles.size(); ++a)
                        os << " acc@" << opts.angles[a] << "=" << outcomes[j].acc[a];
                } else {
                    os << " FAILED: " << outcomes[j].error;
                }
                std::lock_guard lock(log_mutex);
                opts.progress(os.str());
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(opts.jobs, jobs.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<std::vector<std::vector<EvalReport>>> result(
        specs.size(), std::vector<std::vector<EvalReport>>(held_out.size(), std::vector<EvalReport>(opts.angles.size())));
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const Job& job = jobs[j];
        for (std::size_t a = 0; a < opts.angles.size(); ++a) {
            EvalReport& r = result[job.spec][job.domain][a];
            r.held_out_domain = held_out[job.domain];
            r.config = {{"method", to_string(specs[job.spec].method)},
                        {"label", specs[job.spec].label},
                        {"angle", opts.angles[a]},
                        {"train", to_json(specs[job.spec].cfg)}};
            const std::uint64_t seed = opts.seeds[job.seed];
            if (outcomes[j].error.empty()) {
                r.seeds.push_back(seed);
                r.per_seed_accuracy.push_back(outcomes[j].acc[a]);
            } else {
                r.failed_seeds.push_back({seed, outcomes[j].error});
            }
        }
    }
    for (auto& per_spec : result)
        for (auto& per_domain : per_spec)
            for (auto& r : per_domain) r.finalize();
    return result;
}

/// One report per held-out domain, each trained on the remaining domains' train splits and
/// evaluated on all images of the held-out one.
inline std::vector<EvalReport> leave_one_domain_out(const MultiDomainDataset& ds, Method method, const TrainConfig& cfg,
                                                    ExperimentOptions opts) {
    opts.angles = {0.0};
    auto grid = evaluate_grid(ds, {{to_string(method), method, cfg}}, ds.domains, opts);
    std::vector<EvalReport> out;
    for (auto& d : grid[0]) out.push_back(std::move(d[0]));
    return out;
}

/// Rows of reports sharing one set of columns.
struct ComparisonTable {
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::string> rows;
    std::vector<std::vector<EvalReport>> cells;  // [row][column]
    bool show_average = true;
};

inline json to_json(const ComparisonTable& t) {
    json rows = json::array();
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        json cells = json::array();
        for (const auto& c : t.cells[r]) cells.push_back(to_json(c));
        json row = {{"label", t.rows[r]}, {"cells", cells}};
        if (t.show_average) {
            const double avg = average_of_means(t.cells[r]);
            row["average"] = std::isfinite(avg) ? json(avg) : json(nullptr);
        }
        rows.push_back(row);
    }
    return {{"title", t.title}, {"columns", t.columns}, {"rows", rows}};
}

/// Plain-text table: accuracies in percent as mean+-ci, one row per method.
inline std::string render_table(const ComparisonTable& t) {
    auto cell = [](const EvalReport& r) {
        char buf[64];
        if (!std::isfinite(r.mean)) return std::string("failed");
        std::snprintf(buf, sizeof buf, "%.1f+-%.1f", 100.0 * r.mean, 100.0 * r.ci95_halfwidth);
        std::string s = buf;
        if (!r.failed_seeds.empty()) s += "*";
        return s;
    };
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header{"Method"};
    header.insert(header.end(), t.columns.begin(), t.columns.end());
    if (t.show_average) header.push_back("Avg.");
    grid.push_back(header);
    bool any_failed = false;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        std::vector<std::string> line{t.rows[r]};
        for (const auto& c : t.cells[r]) {
            line.push_back(cell(c));
            any_failed = any_failed || !c.failed_seeds.empty();
        }
        if (t.show_average) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.1f", 100.0 * average_of_means(t.cells[r]));
            line.push_back(buf);
        }
        grid.push_back(line);
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& line : grid)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
    std::ostringstream os;
    if (!t.title.empty()) os << t.title << "\n";
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t c = 0; c < grid[i].size(); ++c) {
            os << (c ? "  " : "") << grid[i][c] << std::string(width[c] - grid[i][c].size(), ' ');
        }
        os << "\n";
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w + 2;
            os << std::string(total - 2, '-') << "\n";
        }
    }
    if (any_failed) os << "* some seeds failed; see the JSON results\n";
    return os.str();
}

/// Leave-one-domain-out table with one row per method spec.
inline ComparisonTable lodo_table(const MultiDomainDataset& ds, const std::vector<MethodSpec>& specs,
                                  ExperimentOptions opts, std::string title = "Leave-one-domain-out accuracy (%)") {
    opts.angles = {0.0};
    auto grid = evaluate_grid(ds, specs, ds.domains, opts);
    ComparisonTable t;
    t.title = std::move(title);
    t.columns = ds.domains;
    for (std::size_t s = 0; s < specs.size(); ++s) {
        t.rows.push_back(specs[s].label);
        std::vector<EvalReport> row;
        for (auto& d : grid[s]) row.push_back(std::move(d[0]));
        t.cells.push_back(std::move(row));
    }
    return t;
}

inline std::string format_number(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

/// DDAIG at every lambda. A lambda = 0 row is always included as a sanity check.
inline ComparisonTable lambda_sweep(const MultiDomainDataset& ds, std::vector<double> lambdas, const TrainConfig& cfg,
                                    const ExperimentOptions& opts) {
    for (double l : lambdas)
        if (!(l >= 0.0)) throw Error("lambda_sweep: every lambda must be non-negative");
    if (std::find(lambdas.begin(), lambdas.end(), 0.0) == lambdas.end()) lambdas.insert(lambdas.begin(), 0.0);
    std::vector<MethodSpec> specs;
    for (double l : lambdas) {
        MethodSpec s{"lambda=" + format_number(l), Method::ddaig, cfg};
        s.cfg.lambda = l;
        specs.push_back(s);
    }
    return lodo_table(ds, specs, opts, "DDAIG accuracy (%) by lambda");
}

/// Source only (alpha = 0), novel only (alpha = 1) and source + novel (alpha = 0.5).
inline ComparisonTable ablation_source_novel(const MultiDomainDataset& ds, const TrainConfig& cfg,
                                             const ExperimentOptions& opts) {
    std::vector<MethodSpec> specs;
    for (auto [label, alpha] : {std::pair{"source", 0.0}, std::pair{"novel", 1.0}, std::pair{"source+novel", 0.5}}) {
        MethodSpec s{label, Method::ddaig, cfg};
        s.cfg.alpha = alpha;
        specs.push_back(s);
    }
    return lodo_table(ds, specs, opts, "Training data ablation, accuracy (%)");
}

/// Trains on every domain except `target` and evaluates on `target` rotated by each angle.
/// Columns are angles; one row per method spec.
inline ComparisonTable rotated_target_eval(const MultiDomainDataset& ds, const std::string& target,
                                           const std::vector<double>& angles, const std::vector<MethodSpec>& specs,
                                           ExperimentOptions opts) {
    opts.angles = angles;
    auto grid = evaluate_grid(ds, specs, {target}, opts);
    ComparisonTable t;
    t.title = "Accuracy (%) on rotated " + target;
    t.show_average = false;
    for (double a : angles) t.columns.push_back(format_number(a) + "deg");
    for (std::size_t s = 0; s < specs.size(); ++s) {
        t.rows.push_back(specs[s].label);
        t.cells.push_back(std::move(grid[s][0]));
    }
    return t;
}

}  // namespace ddaig

#endif
