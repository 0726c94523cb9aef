#include <catch2/catch_amalgamated.hpp>

#include "subtrace/inference.hpp"
#include "subtrace/parser.hpp"

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

bool assume_is_true(const Trace& t, std::size_t stmt) {
    const auto& a = std::get<AugAssume>(t.stmts[stmt].node);
    return value_alpha_equal(*a.expr->value,
                             Value{ClosureVal{"t", make_lambda("f", make_var("t")), empty_env()}});
}

}  // namespace

TEST_CASE("strategies map traces to valid subproblems") {
    Trace t = run(kTwoFlip, 1);
    DepGraph g = build_graph(t);

    Subproblem all = select(Strategy::all_choices(), t);
    CHECK(check_subproblem(g, all.selected).ok);
    const auto& obs = std::get<AugObserve>(t.stmts[1].node);
    CHECK(all.absorbing == IdSet{obs.obs_id});

    Subproblem by = select(Strategy::by_labels({"x"}), t);
    CHECK(by.selected == all.selected);  // only one choice in this program

    Subproblem none = select(Strategy::by_labels({"nope"}), t);
    CHECK(none.selected.empty());

    Subproblem single = select(Strategy::single_site("x"), t);
    CHECK(single.selected == by.selected);
}

TEST_CASE("enum-gibbs blackbox reaches the exact posterior in one step") {
    Program p = parse(kTwoFlip);
    InferContext ctx{reg(), {}};
    RandomSource rng(17);
    MetaprogramPtr mp = Metaprogram::blackbox(Kernel{Kernel::Kind::EnumGibbs});
    Trace t = execute(p, reg(), rng);
    int trues = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        Trace next = infer_step(*mp, t, rng, ctx);
        if (assume_is_true(next, 0)) ++trues;
    }
    double freq = static_cast<double>(trues) / n;
    CHECK(freq == Catch::Approx(27.0 / 34.0).margin(0.02));
}

TEST_CASE("prior-mh always accepts when there are no observes") {
    Program p = parse("(assume x (flip 1/2 :label \"x\"))");
    InferContext ctx{reg(), {}};
    RandomSource rng(5);
    Trace t = execute(p, reg(), rng);
    for (int i = 0; i < 50; ++i) {
        Trace prop = kernel_prior_mh(p, t, rng, ctx);
        CHECK(revalidate(prop, reg()).ok);
        t = prop;
    }
}

TEST_CASE("infer_step on a mix extracts, recurses, and stitches") {
    Program p = parse(kTwoFlip);
    InferContext ctx{reg(), {}};
    RandomSource rng(23);
    MetaprogramPtr mp = Metaprogram::mix({MixClause{
        Rational(1), Strategy::by_labels({"x"}),
        Metaprogram::blackbox(Kernel{Kernel::Kind::EnumGibbs})}});
    Trace t = execute(p, reg(), rng);
    for (int i = 0; i < 200; ++i) {
        t = infer_step(*mp, t, rng, ctx);
        CHECK(revalidate(t, reg()).ok);
        CHECK(program_equal(rollback(t), p));
    }
}

TEST_CASE("metaprogram weights must be positive and sum to one") {
    auto gibbs = Metaprogram::blackbox(Kernel{Kernel::Kind::EnumGibbs});
    CHECK_THROWS_AS(Metaprogram::mix({MixClause{Rational(1, 2), Strategy::all_choices(), gibbs}}),
                    error);
    CHECK_THROWS_AS(Metaprogram::mix({MixClause{Rational(-1), Strategy::all_choices(), gibbs},
                                      MixClause{Rational(2), Strategy::all_choices(), gibbs}}),
                    error);
    CHECK_NOTHROW(Metaprogram::mix({MixClause{Rational(1, 3), Strategy::all_choices(), gibbs},
                                    MixClause{Rational(2, 3), Strategy::all_choices(), gibbs}}));
}

TEST_CASE("nested mix recursion operates on the extracted subtrace") {
    // Outer clause selects x's closure; the inner metaprogram then works on
    // the subprogram whose only free choice is x.
    Program p = parse(kTwoFlip);
    InferContext ctx{reg(), {}};
    RandomSource rng(31);
    MetaprogramPtr inner = Metaprogram::mix({MixClause{
        Rational(1), Strategy::by_labels({"x"}),
        Metaprogram::blackbox(Kernel{Kernel::Kind::EnumGibbs})}});
    MetaprogramPtr outer = Metaprogram::mix(
        {MixClause{Rational(1), Strategy::by_labels({"x"}), inner}});
    Trace t = execute(p, reg(), rng);
    for (int i = 0; i < 100; ++i) {
        t = infer_step(*outer, t, rng, ctx);
        REQUIRE(revalidate(t, reg()).ok);
        REQUIRE(program_equal(rollback(t), p));
    }
}

TEST_CASE("run_chain basics") {
    Program p = parse("(assume x (flip 1/2 :label \"x\"))");
    InferContext ctx{reg(), {}};
    MetaprogramPtr mp = Metaprogram::blackbox(Kernel{Kernel::Kind::EnumGibbs});

    SECTION("iters equal to burnin yields no samples") {
        RandomSource rng(2);
        ChainResult res = run_chain(*mp, p, 10, 10, 1, rng, ctx);
        CHECK(res.samples.empty());
    }

    SECTION("thinning keeps every k-th post-burnin sample") {
        RandomSource rng(2);
        ChainResult res = run_chain(*mp, p, 100, 20, 8, rng, ctx);
        CHECK(res.samples.size() == 10);
    }

    SECTION("fair coin converges") {
        RandomSource rng(3);
        ChainResult res = run_chain(*mp, p, 10000, 0, 1, rng, ctx);
        int trues = 0;
        for (const auto& s : res.samples)
            if (assume_is_true(s, 0)) ++trues;
        double freq = static_cast<double>(trues) / static_cast<double>(res.samples.size());
        CHECK(freq == Catch::Approx(0.5).margin(0.02));
    }

    SECTION("deterministic given the seed") {
        RandomSource r1(99), r2(99);
        ChainResult a = run_chain(*mp, p, 200, 50, 2, r1, ctx);
        ChainResult b = run_chain(*mp, p, 200, 50, 2, r2, ctx);
        REQUIRE(a.samples.size() == b.samples.size());
        for (std::size_t i = 0; i < a.samples.size(); ++i)
            CHECK(canonical_string(a.samples[i]) == canonical_string(b.samples[i]));
    }
}

TEST_CASE("two-flip posterior via mix with prior-mh") {
    Program p = parse(kTwoFlip);
    InferContext ctx{reg(), {}};
    MetaprogramPtr mp = Metaprogram::mix({MixClause{
        Rational(1), Strategy::by_labels({"x"}),
        Metaprogram::blackbox(Kernel{Kernel::Kind::PriorMH})}});
    RandomSource rng(7);
    ChainResult res = run_chain(*mp, p, 100000, 1000, 1, rng, ctx);
    int trues = 0;
    for (const auto& s : res.samples)
        if (assume_is_true(s, 0)) ++trues;
    double freq = static_cast<double>(trues) / static_cast<double>(res.samples.size());
    CHECK(freq == Catch::Approx(27.0 / 34.0).margin(0.02));
}

TEST_CASE("zero-density start with prior-mh accepts the forward proposal") {
    // The only positive-density trace has w = 1; a zero-density start must
    // escape on the first accepted proposal.
    Program p = parse("(assume w (dist uniform-int 2 :label \"w\"))\n(observe (flip w :label \"ow\") #t)");
    TraceSpace space = enumerate_traces(p, reg());
    const Trace* zero = nullptr;
    for (std::size_t i = 0; i < space.size(); ++i)
        if (space.densities[i] == 0) zero = &space.traces[i];
    REQUIRE(zero);
    InferContext ctx{reg(), {}};
    RandomSource rng(1);
    Trace next = kernel_prior_mh(p, *zero, rng, ctx);
    // Always accepts: the result is whatever the forward run produced.
    CHECK(revalidate(next, reg()).ok);
}

TEST_CASE("contract violations abort with a diagnostic") {
    Program p = parse(kTwoFlip);
    InferContext ctx{reg(), {}};
    RandomSource rng(3);
    Trace t = execute(p, reg(), rng);
    Subproblem s = select(Strategy::by_labels({"x"}), t);
    Subtrace ts = extract_trace(t, s);
    Trace foreign = run("(assume q (flip 1/2 :label \"q\"))", 1);
    CHECK_THROWS_AS(stitch_trace(t, foreign, s, reg()), error);
}
