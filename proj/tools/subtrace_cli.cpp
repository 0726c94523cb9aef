#include <CLI11.hpp>
#include <json.hpp>

#include "subtrace/analysis.hpp"
#include "subtrace/depgraph.hpp"
#include "subtrace/enumerate.hpp"
#include "subtrace/executor.hpp"
#include "subtrace/inference.hpp"
#include "subtrace/metaprogram_json.hpp"
#include "subtrace/parser.hpp"
#include "subtrace/printer.hpp"
#include "subtrace/trace_json.hpp"
#include "subtrace/transform.hpp"

#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

namespace {

constexpr const char* kVersion = "0.1.0";

using namespace subtrace;

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("cannot open file: " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        if (text.empty() || text.back() != '\n') std::cout << "\n";
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw error("cannot write file: " + out_path);
        out << text;
        if (text.empty() || text.back() != '\n') out << "\n";
    }
}

void emit_json(const Json& j, const std::string& out_path) {
    emit(j.dump(2), out_path);
}

struct CommonOpts {
    std::string program_path;
    std::string out_path;
    std::uint64_t seed = 0;
    std::size_t cap = kDefaultEnumerationCap;
};

Program load_program(const Registry& reg, const std::string& path) {
    return parse_program(slurp(path), reg.name_check());
}

Json config_json(const CommonOpts& o) {
    return Json{{"program", o.program_path}, {"seed", o.seed}, {"cap", o.cap}};
}

// ---------------------------------------------------------------------------

struct RunOpts : CommonOpts {
    std::string metaprogram_path;
    std::uint64_t iters = 10000;
    std::uint64_t burnin = 0;
    std::uint64_t thin = 1;
    unsigned chains = 1;
    bool dump_trace = false;
};

int cmd_run(const Registry& reg, const RunOpts& o) {
    Program p = load_program(reg, o.program_path);
    MetaprogramPtr mp = parse_metaprogram_json(slurp(o.metaprogram_path));
    if (o.iters < o.burnin) throw error("--iters must be >= --burnin");
    if (o.thin == 0) throw error("--thin must be >= 1");

    struct ChainOut {
        std::vector<Trace> samples;
        std::uint64_t init_retries = 0;
        std::string failure;
    };
    std::vector<ChainOut> outs(o.chains);
    RandomSource base(o.seed);
    std::vector<RandomSource> seeds;
    for (unsigned c = 0; c < o.chains; ++c) seeds.push_back(base.split());
    std::vector<std::thread> workers;
    for (unsigned c = 0; c < o.chains; ++c) {
        workers.emplace_back([&, c] {
            try {
                InferContext ctx{reg, {}};
                RandomSource rng = seeds[c];
                ChainResult res = run_chain(*mp, p, o.iters, o.burnin, o.thin, rng, ctx);
                outs[c].samples = std::move(res.samples);
                outs[c].init_retries = res.init_retries;
            } catch (const std::exception& e) {
                outs[c].failure = e.what();
            }
        });
    }
    for (auto& w : workers) w.join();
    for (const auto& c : outs)
        if (!c.failure.empty()) throw error(c.failure);

    TraceHistogram hist;
    std::map<std::string, std::map<std::string, std::uint64_t>> marginal_counts;
    std::uint64_t total = 0;
    std::uint64_t retries = 0;
    for (const auto& c : outs) {
        retries += c.init_retries;
        for (const auto& t : c.samples) {
            record(hist, t);
            ++total;
            for (const auto& stmt : t.stmts) {
                if (const auto* a = std::get_if<AugAssume>(&stmt.node))
                    ++marginal_counts[a->name][print_value(*a->expr->value)];
            }
        }
    }

    Json cfg = config_json(o);
    cfg["metaprogram"] = o.metaprogram_path;
    cfg["iters"] = o.iters;
    cfg["burnin"] = o.burnin;
    cfg["thin"] = o.thin;
    cfg["chains"] = o.chains;
    Json report{{"version", kVersion}, {"command", "run"}, {"config", std::move(cfg)}};
    report["program"] = print_program(p);
    report["metaprogram"] = metaprogram_json(*mp);
    report["init_retries"] = retries;
    report["samples"] = total;

    Json marginals = Json::object();
    for (const auto& [name, values] : marginal_counts) {
        Json m = Json::object();
        for (const auto& [v, n] : values)
            m[v] = static_cast<double>(n) / static_cast<double>(total);
        marginals[name] = std::move(m);
    }
    report["marginals"] = std::move(marginals);

    // Keyed by canonical trace hash; hashes resolve via the enumerate command.
    std::map<std::string, Trace> hash_to_trace;
    Json empirical = Json::object();
    if (total > 0) {
        std::map<std::string, std::uint64_t> by_hash;
        for (const auto& c : outs)
            for (const auto& t : c.samples) by_hash[canonical_hash_hex(t)] += 1;
        for (const auto& [h, n] : by_hash)
            empirical[h] = static_cast<double>(n) / static_cast<double>(total);
    }
    report["empirical"] = std::move(empirical);

    if (o.dump_trace) {
        Json dumps = Json::array();
        for (const auto& c : outs)
            if (!c.samples.empty()) dumps.push_back(trace_json(c.samples.back()));
        report["final_traces"] = std::move(dumps);
    }

    try {
        TraceSpace space = enumerate_traces(p, reg, o.cap);
        Posterior post = posterior(space);
        Json exact = Json::object();
        exact["traces"] = space.size();
        Json probs = Json::object();
        for (std::size_t i = 0; i < space.size(); ++i)
            probs[canonical_hash_hex(space.traces[i])] = rational_to_string(post.probs[i]);
        exact["posterior"] = std::move(probs);
        if (total > 0) exact["tv"] = tv_distance(hist, space, post);
        report["exact"] = std::move(exact);
    } catch (const error&) {
        report["exact"] = nullptr;  // enumeration unavailable (cap or zero mass)
    }

    emit_json(report, o.out_path);
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_enumerate(const Registry& reg, const CommonOpts& o) {
    Program p = load_program(reg, o.program_path);
    TraceSpace space = enumerate_traces(p, reg, o.cap);
    Json traces = Json::array();
    for (std::size_t i = 0; i < space.size(); ++i) {
        traces.push_back(Json{{"hash", canonical_hash_hex(space.traces[i])},
                              {"density", rational_to_string(space.densities[i])},
                              {"trace", trace_json(space.traces[i])}});
    }
    Json report{{"version", kVersion},
                {"command", "enumerate"},
                {"config", config_json(o)},
                {"program", print_program(p)},
                {"traces", std::move(traces)}};
    if (space.total_density() > 0) {
        Posterior post = posterior(space);
        Json probs = Json::array();
        for (const auto& pr : post.probs) probs.push_back(rational_to_string(pr));
        report["posterior"] = std::move(probs);
    } else {
        report["posterior"] = nullptr;
    }
    emit_json(report, o.out_path);
    return 0;
}

// ---------------------------------------------------------------------------

struct CheckOpts : CommonOpts {
    std::string metaprogram_path;
    std::uint64_t iters = 10000;
};

int cmd_check(const Registry& reg, const CheckOpts& o) {
    Program p = load_program(reg, o.program_path);
    MetaprogramPtr mp = parse_metaprogram_json(slurp(o.metaprogram_path));
    TraceSpace space = enumerate_traces(p, reg, o.cap);
    Posterior post = posterior(space);

    Json cfg = config_json(o);
    cfg["metaprogram"] = o.metaprogram_path;
    cfg["iters"] = o.iters;
    Json report{{"version", kVersion}, {"command", "check"}, {"config", std::move(cfg)}};
    report["traces"] = space.size();

    std::vector<Strategy> strategies = top_level_strategies(*mp);
    std::vector<SelectFn> fns;
    Json strat_json = Json::array();
    bool all_reversible = true;
    for (const auto& st : strategies) {
        fns.push_back(as_select_fn(st));
        ReversibilityReport rep = check_reversible(fns.back(), space);
        all_reversible = all_reversible && rep.reversible;
        Json sj{{"strategy", st.describe()}, {"reversible", rep.reversible}};
        if (!rep.reversible) sj["witness_chain"] = rep.witness_chain;
        strat_json.push_back(std::move(sj));
    }
    report["strategies"] = std::move(strat_json);
    report["reversible"] = all_reversible;

    ConnectivityReport conn = check_connectivity(fns, space, post);
    Json cj{{"connected", conn.connected}, {"mode", conn.exact ? "exact" : "sufficient-only"}};
    if (conn.exact && !conn.connected) {
        cj["witness_set"] = conn.witness_set;
        cj["witness_strategies"] = Json::array({strategies[conn.witness_f].describe(),
                                                strategies[conn.witness_g].describe()});
        cj["witness_class_aligned"] = conn.witness_class_aligned;
    }
    report["connectivity"] = std::move(cj);

    KernelMatrix K = build_kernel_matrix(*mp, space, reg);
    report["stationarity_residual"] = rational_to_string(check_stationary(K, post));
    report["row_sum_error"] = rational_to_string(K.row_sum_error());
    report["irreducible"] = check_irreducible(K, post);
    report["aperiodic"] = check_aperiodic(K, post);

    // TV against iterations along one chain.
    Json table = Json::array();
    InferContext ctx{reg, {}};
    RandomSource rng(o.seed);
    Trace t = execute(p, reg, rng);
    std::uint64_t retries = 0;
    while (density(t, reg).value == 0 && retries < 1024) {
        t = execute(p, reg, rng);
        ++retries;
    }
    TraceHistogram hist;
    std::uint64_t next_checkpoint = 100;
    for (std::uint64_t k = 1; k <= o.iters; ++k) {
        t = infer_step(*mp, t, rng, ctx);
        record(hist, t);
        if (k == next_checkpoint || k == o.iters) {
            table.push_back(Json{{"iterations", k}, {"tv", tv_distance(hist, space, post)}});
            next_checkpoint *= 10;
        }
    }
    report["tv_table"] = std::move(table);

    emit_json(report, o.out_path);
    return 0;
}

// ---------------------------------------------------------------------------

struct ExtractOpts : CommonOpts {
    std::vector<std::string> labels;
    bool all_choices = false;
};

int cmd_extract(const Registry& reg, const ExtractOpts& o) {
    Program p = load_program(reg, o.program_path);
    RandomSource rng(o.seed);
    Trace t = execute(p, reg, rng);
    Strategy st = o.all_choices
                      ? Strategy::all_choices()
                      : Strategy::by_labels({o.labels.begin(), o.labels.end()});
    Subproblem s = select(st, t);
    Subtrace ts = extract_trace(t, s);
    auto ids = [](const IdSet& set) {
        Json arr = Json::array();
        for (NodeId id : set) arr.push_back(id.v);
        return arr;
    };
    Json report{{"version", kVersion}, {"command", "extract"}, {"config", config_json(o)}};
    report["strategy"] = st.describe();
    report["subproblem"] = Json{{"selected", ids(s.selected)},
                                {"absorbing", ids(s.absorbing)},
                                {"boundary", ids(s.boundary)}};
    report["subprogram"] = print_program(rollback(ts.trace));
    report["subtrace"] = trace_json(ts.trace);
    emit_json(report, o.out_path);
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_graph(const Registry& reg, const CommonOpts& o) {
    Program p = load_program(reg, o.program_path);
    RandomSource rng(o.seed);
    Trace t = execute(p, reg, rng);
    emit(to_dot(build_graph(t)), o.out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trace-based probabilistic runtime with subproblem extraction and stitching"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Registry reg = builtin_distributions();

    RunOpts run_opts;
    auto* run = app.add_subcommand("run", "run an inference metaprogram chain");
    run->add_option("program", run_opts.program_path, "program file")->required();
    run->add_option("metaprogram", run_opts.metaprogram_path, "metaprogram JSON")->required();
    run->add_option("--iters", run_opts.iters);
    run->add_option("--burnin", run_opts.burnin);
    run->add_option("--thin", run_opts.thin);
    run->add_option("--chains", run_opts.chains);
    run->add_option("--seed", run_opts.seed);
    run->add_option("--cap", run_opts.cap);
    run->add_option("--out", run_opts.out_path);
    run->add_flag("--dump-trace", run_opts.dump_trace, "include each chain's final trace");

    CommonOpts enum_opts;
    auto* enumerate = app.add_subcommand("enumerate", "exhaustive trace space and posterior");
    enumerate->add_option("program", enum_opts.program_path)->required();
    enumerate->add_option("--cap", enum_opts.cap);
    enumerate->add_option("--seed", enum_opts.seed);
    enumerate->add_option("--out", enum_opts.out_path);

    CheckOpts check_opts;
    auto* check = app.add_subcommand("check", "convergence diagnostics for a metaprogram");
    check->add_option("program", check_opts.program_path)->required();
    check->add_option("metaprogram", check_opts.metaprogram_path)->required();
    check->add_option("--iters", check_opts.iters);
    check->add_option("--seed", check_opts.seed);
    check->add_option("--cap", check_opts.cap);
    check->add_option("--out", check_opts.out_path);

    ExtractOpts extract_opts;
    auto* extract = app.add_subcommand("extract", "extract a subproblem's subtrace");
    extract->add_option("program", extract_opts.program_path)->required();
    extract->add_option("--labels", extract_opts.labels)->delimiter(',');
    extract->add_flag("--all-choices", extract_opts.all_choices);
    extract->add_option("--seed", extract_opts.seed);
    extract->add_option("--out", extract_opts.out_path);

    CommonOpts graph_opts;
    auto* graph = app.add_subcommand("graph", "DOT export of a trace's dependence graph");
    graph->add_option("program", graph_opts.program_path)->required();
    graph->add_option("--seed", graph_opts.seed);
    graph->add_option("--out", graph_opts.out_path);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(reg, run_opts);
        if (enumerate->parsed()) return cmd_enumerate(reg, enum_opts);
        if (check->parsed()) return cmd_check(reg, check_opts);
        if (extract->parsed()) return cmd_extract(reg, extract_opts);
        if (graph->parsed()) return cmd_graph(reg, graph_opts);
    } catch (const contract_error& e) {
        std::cout << Json{{"error", e.what()}, {"kind", "contract"}}.dump(2) << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cout << Json{{"error", e.what()}}.dump(2) << "\n";
        return 1;
    }
    return 0;
}
