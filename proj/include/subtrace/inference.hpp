#pragma once

#include "subtrace/depgraph.hpp"
#include "subtrace/enumerate.hpp"
#include "subtrace/executor.hpp"
#include "subtrace/transform.hpp"

#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace subtrace {

// A kernel produced a subtrace outside its contract (wrong program, failed
// revalidation). Surfaces as exit code 2 in the CLI.
struct contract_error : error {
    using error::error;
};

// ---------------------------------------------------------------------------
// Subproblem selection strategies: deterministic maps from traces to valid
// subproblems, built by completing the labeled Sample nodes.

struct Strategy {
    enum class Kind { ByLabels, SingleSite, AllChoices };
    Kind kind = Kind::AllChoices;
    std::set<std::string> labels;

    static Strategy by_labels(std::set<std::string> ls) {
        return Strategy{Kind::ByLabels, std::move(ls)};
    }
    static Strategy single_site(std::string label) {
        return Strategy{Kind::SingleSite, {std::move(label)}};
    }
    static Strategy all_choices() { return Strategy{Kind::AllChoices, {}}; }

    std::string describe() const {
        if (kind == Kind::AllChoices) return "all-choices";
        std::string out = kind == Kind::SingleSite ? "single-site{" : "by-labels{";
        bool first = true;
        for (const auto& l : labels) {
            if (!first) out += ",";
            first = false;
            out += l;
        }
        return out + "}";
    }
};

inline Subproblem select(const Strategy& st, const Trace& t) {
    IdSet seed;
    for_each_node(t, [&](const AugExpr& n) {
        if (const auto* d = std::get_if<DistNode>(&n.node)) {
            if (st.kind == Strategy::Kind::AllChoices || st.labels.count(d->label))
                seed.insert(d->choice_id);
        }
    });
    if (st.kind != Strategy::Kind::AllChoices) {
        for (const auto& stmt : t.stmts) {
            if (const auto* o = std::get_if<AugObserve>(&stmt.node))
                if (st.labels.count(o->label)) seed.insert(o->obs_id);
        }
    }
    if (seed.empty() && st.kind != Strategy::Kind::AllChoices)
        std::cerr << "warning: strategy " << st.describe()
                  << " matched no stochastic choice; empty subproblem\n";
    return complete_subproblem(build_graph(t), seed);
}

// Analysis-facing generalization: any deterministic trace -> subproblem map.
using SelectFn = std::function<Subproblem(const Trace&)>;

inline SelectFn as_select_fn(const Strategy& st) {
    return [st](const Trace& t) { return select(st, t); };
}

// ---------------------------------------------------------------------------
// Black-box kernels over subprogram traces.

struct Kernel {
    enum class Kind { EnumGibbs, PriorMH };
    Kind kind = Kind::EnumGibbs;
    std::size_t enum_cap = kDefaultEnumerationCap;
};

struct Metaprogram;
using MetaprogramPtr = std::shared_ptr<const Metaprogram>;

struct MixClause {
    Rational weight;
    Strategy strategy;
    MetaprogramPtr sub;
};

struct Metaprogram {
    std::variant<Kernel, std::vector<MixClause>> node;

    static MetaprogramPtr blackbox(Kernel k) {
        return std::make_shared<Metaprogram>(Metaprogram{k});
    }
    static MetaprogramPtr mix(std::vector<MixClause> clauses) {
        if (clauses.empty()) throw error("metaprogram: mix needs at least one clause");
        Rational total = 0;
        for (const auto& c : clauses) {
            if (c.weight <= 0) throw error("metaprogram: clause weights must be positive");
            if (!c.sub) throw error("metaprogram: clause missing sub-metaprogram");
            total += c.weight;
        }
        if (total != 1)
            throw error("metaprogram: clause weights must sum to 1, got " +
                        rational_to_string(total));
        return std::make_shared<Metaprogram>(Metaprogram{std::move(clauses)});
    }
};

// Per-chain context: the registry plus a cache of enumerated subprogram
// spaces keyed by program text (EnumGibbs re-enumerates the same subprogram
// every step otherwise).
struct InferContext {
    const Registry& registry;
    std::map<std::string, std::shared_ptr<const TraceSpace>> space_cache;

    std::shared_ptr<const TraceSpace> space_for(const Program& p, std::size_t cap) {
        std::string key = print_program(p);
        auto it = space_cache.find(key);
        if (it != space_cache.end()) return it->second;
        auto space = std::make_shared<TraceSpace>(enumerate_traces(p, registry, cap));
        space_cache.emplace(std::move(key), space);
        return space;
    }
};

// Exact posterior sample of the subprogram by enumeration; independent of the
// input trace.
inline Trace kernel_enum_gibbs(const Program& p_s, const Trace& t_s, RandomSource& rng,
                               InferContext& ctx, std::size_t cap = kDefaultEnumerationCap) {
    (void)t_s;
    auto space = ctx.space_for(p_s, cap);
    Posterior post = posterior(*space);
    double u = rng.next_double();
    double cum = 0;
    for (std::size_t i = 0; i < space->size(); ++i) {
        cum += rational_to_double(post.probs[i]);
        if (u < cum) return space->traces[i];
    }
    return space->traces.back();
}

// Independence proposal from the forward prior, MH-corrected on the observe
// likelihood ratio (prior factors cancel). A zero-weight current trace always
// accepts the proposal.
inline Trace kernel_prior_mh(const Program& p_s, const Trace& t_s, RandomSource& rng,
                             InferContext& ctx) {
    Trace proposal = execute(p_s, ctx.registry, rng);
    Rational w_cur = observe_weight(t_s, ctx.registry);
    Rational w_prop = observe_weight(proposal, ctx.registry);
    if (w_cur == 0) return proposal;
    Rational ratio = w_prop / w_cur;
    if (ratio >= 1) return proposal;
    double u = rng.next_double();
    return u < rational_to_double(ratio) ? proposal : t_s;
}

inline Trace apply_kernel(const Kernel& k, const Program& p_s, const Trace& t_s,
                          RandomSource& rng, InferContext& ctx) {
    if (k.kind == Kernel::Kind::EnumGibbs)
        return kernel_enum_gibbs(p_s, t_s, rng, ctx, k.enum_cap);
    return kernel_prior_mh(p_s, t_s, rng, ctx);
}

// ---------------------------------------------------------------------------
// One inference step. Mix: draw a clause, select the subproblem, extract the
// subtrace, run the sub-metaprogram on it, verify the kernel contract, stitch
// the mutated subtrace back in.

inline Trace infer_step(const Metaprogram& mp, const Trace& t, RandomSource& rng,
                        InferContext& ctx) {
    if (const auto* k = std::get_if<Kernel>(&mp.node)) {
        return apply_kernel(*k, rollback(t), t, rng, ctx);
    }
    const auto& clauses = std::get<std::vector<MixClause>>(mp.node);
    double u = rng.next_double();
    Rational cum = 0;
    const MixClause* chosen = &clauses.back();
    for (const auto& c : clauses) {
        cum += c.weight;
        if (u < rational_to_double(cum)) {
            chosen = &c;
            break;
        }
    }
    Subproblem s = select(chosen->strategy, t);
    Subtrace ts = extract_trace(t, s);
    Trace mutated = infer_step(*chosen->sub, ts.trace, rng, ctx);
    ValidationReport rep = revalidate(mutated, ctx.registry);
    if (!rep.ok)
        throw contract_error("kernel returned an invalid subtrace: " + rep.message);
    if (!program_equal(rollback(mutated), rollback(ts.trace)))
        throw contract_error("kernel returned a trace of a different program");
    return stitch_trace(t, mutated, s, ctx.registry);
}

struct ChainResult {
    std::vector<Trace> samples;
    std::uint64_t init_retries = 0;
};

// Iterates infer_step from a positive-density initial execution; returns
// thinned post-burnin traces. Deterministic given the seed.
inline ChainResult run_chain(const Metaprogram& mp, const Program& p, std::uint64_t iters,
                             std::uint64_t burnin, std::uint64_t thin, RandomSource& rng,
                             InferContext& ctx, std::uint64_t init_retry_cap = 1024) {
    if (iters < burnin) throw error("run_chain: iters must be >= burnin");
    if (thin == 0) throw error("run_chain: thin must be >= 1");
    ChainResult out;
    Trace t = execute(p, ctx.registry, rng);
    while (density(t, ctx.registry).value == 0) {
        if (++out.init_retries > init_retry_cap)
            throw error("run_chain: no positive-density initial trace within retry cap");
        t = execute(p, ctx.registry, rng);
    }
    for (std::uint64_t k = 1; k <= iters; ++k) {
        t = infer_step(mp, t, rng, ctx);
        if (k > burnin && (k - burnin) % thin == 0) out.samples.push_back(t);
    }
    return out;
}

}  // namespace subtrace
