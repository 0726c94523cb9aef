#include <catch2/catch_amalgamated.hpp>

#include "subtrace/enumerate.hpp"
#include "subtrace/executor.hpp"
#include "subtrace/parser.hpp"
#include "subtrace/transform.hpp"

using namespace subtrace;

namespace {

const Registry& reg() {
    static Registry r = builtin_distributions();
    return r;
}

Program parse(const std::string& src) { return parse_program(src, reg().name_check()); }

Trace run(const std::string& src, std::uint64_t seed = 0) {
    RandomSource rng(seed);
    return execute(parse(src), reg(), rng);
}

const char* kTwoFlip =
    "(assume x (flip 3/10 :label \"x\"))\n"
    "(observe (flip (if x 9/10 1/10) :label \"o\") #t)";

std::vector<NodeId> dist_choices(const Trace& t) {
    std::vector<NodeId> out;
    for_each_node(t, [&](const AugExpr& n) {
        if (const auto* d = std::get_if<DistNode>(&n.node)) out.push_back(d->choice_id);
    });
    return out;
}

Subproblem closure_of(const Trace& t, const IdSet& seed) {
    return complete_subproblem(build_graph(t), seed);
}

// Every valid subproblem reachable from a nonempty seed of choices.
std::vector<Subproblem> seed_subproblems(const Trace& t) {
    std::vector<Subproblem> out;
    auto choices = dist_choices(t);
    DepGraph g = build_graph(t);
    std::set<IdSet> seen;
    for (std::uint64_t mask = 1; mask < (1ull << choices.size()); ++mask) {
        IdSet seed;
        for (std::size_t i = 0; i < choices.size(); ++i)
            if (mask & (1ull << i)) seed.insert(choices[i]);
        Subproblem s = complete_subproblem(g, seed);
        if (seen.insert(s.selected).second) out.push_back(s);
    }
    return out;
}

const char* kCorpus[] = {
    "(assume x (flip 1/2 :label \"x\"))",
    kTwoFlip,
    "(assume x (flip 1/2 :label \"x\"))\n"
    "(assume y (if x (flip 9/10 :label \"hi\") (flip 1/10 :label \"lo\")))",
    "(assume k (lambda (a) (lambda (b) a)))\n(assume y ((k 3) (flip 1/2 :label \"dead\")))",
    "(assume c (flip 1/2 :label \"c\"))\n"
    "(assume f (lambda (z) (if c z 0)))\n"
    "(assume r (f 5))",
    "(assume p (if (flip 1/2 :label \"outer\") 9/10 1/10))\n"
    "(assume x (flip p :label \"inner\"))",
    "(assume w (dist uniform-int 2 :label \"w\"))\n(observe (flip w :label \"ow\") #t)",
    "(assume x (flip 1/3 :label \"x\"))\n(assume y (flip 1/4 :label \"y\"))",
};

}  // namespace

TEST_CASE("density of deterministic traces is 1; two-flip product is 27/100") {
    CHECK(density(run("(assume f (lambda (a) a))\n(assume z (f 7))"), reg()).value == 1);
    TraceSpace space = enumerate_traces(parse(kTwoFlip), reg());
    REQUIRE(space.size() == 2);
    std::set<Rational> ds(space.densities.begin(), space.densities.end());
    CHECK(ds == std::set<Rational>{Rational(27, 100), Rational(7, 100)});
    CHECK(space.total_density() == Rational(34, 100));
}

TEST_CASE("density splits into prior and observe weight") {
    Trace t = run(kTwoFlip, 1);
    Rational prior = prior_density(t, reg());
    Rational weight = observe_weight(t, reg());
    CHECK(prior * weight == density(t, reg()).value);
    CHECK(make_density(Rational(1, 2)).log_value == Catch::Approx(std::log(0.5)));
    CHECK(make_density(Rational(0)).log_value == -std::numeric_limits<double>::infinity());
}

TEST_CASE("extraction keeps subproblem choices free and constrains the rest") {
    Trace t = run(kTwoFlip, 1);
    Subproblem s = closure_of(t, {dist_choices(t)[0]});
    Subtrace ts = extract_trace(t, s);
    CHECK(revalidate(ts.trace, reg()).ok);
    // Exactly one free choice left (x); nothing else was stochastic here.
    CHECK(dist_choices(ts.trace).size() == 1);
    // Provenance is injective (identity on surviving ids).
    std::set<NodeId> targets;
    for (const auto& [from, to] : ts.provenance) {
        CHECK(from == to);
        CHECK(targets.insert(to).second);
    }
}

TEST_CASE("extracting everything leaves the trace density unchanged") {
    for (const char* src : kCorpus) {
        Program p = parse(src);
        TraceSpace space = enumerate_traces(p, reg());
        for (const auto& t : space.traces) {
            auto choices = dist_choices(t);
            if (choices.empty()) continue;
            Subproblem s = closure_of(t, IdSet(choices.begin(), choices.end()));
            Subtrace ts = extract_trace(t, s);
            CHECK(density(ts.trace, reg()).value == density(t, reg()).value);
        }
    }
}

TEST_CASE("density preservation: every trace, every seed-closure subproblem") {
    for (const char* src : kCorpus) {
        Program p = parse(src);
        TraceSpace space = enumerate_traces(p, reg());
        for (const auto& t : space.traces) {
            for (const auto& s : seed_subproblems(t)) {
                Subtrace ts = extract_trace(t, s);
                REQUIRE(revalidate(ts.trace, reg()).ok);
                CHECK(density(ts.trace, reg()).value == density(t, reg()).value);
            }
        }
    }
}

TEST_CASE("beta decomposition hoists operator and argument as assumes") {
    Trace t = run("(assume k (lambda (a) (lambda (b) a)))\n(assume y ((k 3) (flip 1/2 :label \"dead\")))");
    Subproblem s = closure_of(t, {dist_choices(t)[0]});
    Subtrace ts = extract_trace(t, s);
    Program p_s = rollback(ts.trace);
    // The dead choice stays free inside a hoisted assume; the subprogram still
    // binds every variable it mentions.
    CHECK(dist_choices(ts.trace).size() == 1);
    CHECK(revalidate(ts.trace, reg()).ok);
    // Re-executing the subprogram works (all names in scope).
    RandomSource rng(3);
    Trace t2 = execute(p_s, reg(), rng);
    CHECK(program_equal(rollback(t2), p_s));
}

TEST_CASE("equiv is reflexive and rejects changed outside choices") {
    Trace t = run(kTwoFlip, 1);
    Subproblem s = closure_of(t, {dist_choices(t)[0]});
    CHECK(equiv(s, t, t));

    // A trace with the other x outcome: not equivalent under the empty
    // subproblem, equivalent under x's closure.
    TraceSpace space = enumerate_traces(parse(kTwoFlip), reg());
    REQUIRE(space.size() == 2);
    const Trace& a = space.traces[0];
    const Trace& b = space.traces[1];
    Subproblem empty;
    CHECK_FALSE(equiv(empty, a, b));
    Subproblem sx = closure_of(a, {dist_choices(a)[0]});
    CHECK(equiv(sx, a, b));
}

TEST_CASE("stitching the unmodified subtrace reproduces the trace modulo ids") {
    for (const char* src : kCorpus) {
        Program p = parse(src);
        TraceSpace space = enumerate_traces(p, reg());
        for (const auto& t : space.traces) {
            for (const auto& s : seed_subproblems(t)) {
                Subtrace ts = extract_trace(t, s);
                Trace stitched = stitch_trace(t, ts.trace, s, reg());
                CHECK(trace_equal_mod_ids(stitched, t));
                CHECK(revalidate(stitched, reg()).ok);
            }
        }
    }
}

TEST_CASE("soundness and completeness: stitch image equals the equiv class") {
    for (const char* src : kCorpus) {
        Program p = parse(src);
        TraceSpace space = enumerate_traces(p, reg());
        for (const auto& t : space.traces) {
            for (const auto& s : seed_subproblems(t)) {
                Subtrace ts = extract_trace(t, s);
                Program p_s = rollback(ts.trace);
                TraceSpace sub_space = enumerate_traces(p_s, reg());

                // Soundness: every mutated subtrace stitches into a valid,
                // equivalent trace of the original program.
                std::set<std::string> image;
                for (const auto& mutated : sub_space.traces) {
                    Trace stitched = stitch_trace(t, mutated, s, reg());
                    REQUIRE(revalidate(stitched, reg()).ok);
                    REQUIRE(program_equal(rollback(stitched), p));
                    CHECK(equiv(s, t, stitched));
                    auto idx = space.find(stitched);
                    REQUIRE(idx.has_value());
                    image.insert(canonical_string(space.traces[*idx]));
                    // Density is preserved through the subtrace.
                    CHECK(density(stitched, reg()).value == density(mutated, reg()).value);
                }

                // Completeness: the image covers exactly the equivalence
                // class of t within Traces(p).
                std::set<std::string> eq_class;
                for (const auto& cand : space.traces)
                    if (equiv(s, t, cand)) eq_class.insert(canonical_string(cand));
                CHECK(image == eq_class);
            }
        }
    }
}

TEST_CASE("stitch rejects subtraces from a different program") {
    Trace t = run(kTwoFlip, 1);
    Subproblem s = closure_of(t, {dist_choices(t)[0]});
    Trace other = run("(assume z (flip 1/2 :label \"z\"))", 0);
    CHECK_THROWS_WITH(stitch_trace(t, other, s, reg()),
                      Catch::Matchers::ContainsSubstring("statement"));
}

TEST_CASE("zero-density traces flow through extraction and stitching") {
    Program p = parse("(assume w (dist uniform-int 2 :label \"w\"))\n(observe (flip w :label \"ow\") #t)");
    TraceSpace space = enumerate_traces(p, reg());
    REQUIRE(space.size() == 2);
    for (const auto& t : space.traces) {
        for (const auto& s : seed_subproblems(t)) {
            Subtrace ts = extract_trace(t, s);
            CHECK(density(ts.trace, reg()).value == density(t, reg()).value);
            Trace stitched = stitch_trace(t, ts.trace, s, reg());
            CHECK(trace_equal_mod_ids(stitched, t));
        }
    }
}
