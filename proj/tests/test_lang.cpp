#include <catch2/catch_amalgamated.hpp>

#include "subtrace/ast.hpp"
#include "subtrace/distribution.hpp"
#include "subtrace/parser.hpp"
#include "subtrace/printer.hpp"
#include "subtrace/rng.hpp"

using namespace subtrace;

namespace {

Program parse(const std::string& src) {
    static Registry reg = builtin_distributions();
    return parse_program(src, reg.name_check());
}

// Random closed-ish terms for property tests.
ExprPtr random_expr(RandomSource& rng, int depth, const std::vector<std::string>& scope) {
    double u = rng.next_double();
    if (depth <= 0 || u < 0.3) {
        if (!scope.empty() && rng.next_double() < 0.7)
            return make_var(scope[rng.next_u64() % scope.size()]);
        if (rng.next_double() < 0.5) return make_literal(Rational(rng.next_u64() % 7, 1 + rng.next_u64() % 5));
        return make_var("g" + std::to_string(rng.next_u64() % 3));
    }
    if (u < 0.55) {
        std::string param = "v" + std::to_string(rng.next_u64() % 4);
        auto inner = scope;
        inner.push_back(param);
        return make_lambda(param, random_expr(rng, depth - 1, inner));
    }
    if (u < 0.85)
        return make_app(random_expr(rng, depth - 1, scope), random_expr(rng, depth - 1, scope));
    return make_dist("bernoulli", random_expr(rng, depth - 1, scope));
}

}  // namespace

TEST_CASE("parse maps surface syntax onto the core grammar") {
    Program p = parse("(assume x (dist bernoulli 1/2))");
    REQUIRE(p.stmts.size() == 1);
    const auto& a = std::get<AssumeStmt>(p.stmts[0].node);
    CHECK(a.name == "x");
    const auto& d = std::get<DistCall>(a.expr->node);
    CHECK(d.dist == "bernoulli");
    CHECK(std::get<LiteralExpr>(d.param->node).value == Rational(1, 2));
}

TEST_CASE("church booleans desugar to lambda terms") {
    Program p = parse("(assume b #t)");
    const auto& a = std::get<AssumeStmt>(p.stmts[0].node);
    CHECK(expr_equal(a.expr, church_true()));
    CHECK(expr_equal(*a.expr, *make_lambda("t", make_lambda("f", make_var("t")))));
}

TEST_CASE("flip is bernoulli sugar and if thunks its branches") {
    Program p = parse("(observe (dist bernoulli (if x 9/10 1/10)) #t)");
    const auto& o = std::get<ObserveStmt>(p.stmts[0].node);
    const auto& d = std::get<DistCall>(o.expr->node);
    CHECK(d.dist == "bernoulli");
    // The if-desugar is an application spine forcing the selected thunk.
    const auto& force = std::get<App>(d.param->node);
    CHECK(std::holds_alternative<LiteralExpr>(force.arg->node));
    const auto& inner = std::get<App>(force.fn->node);
    CHECK(std::holds_alternative<Lambda>(inner.arg->node));
    // Reprint/reparse reaches a fixpoint.
    std::string once = print_program(p);
    Program p2 = parse(once);
    CHECK(program_equal(p, p2));
    CHECK(print_program(p2) == once);

    Program pf = parse("(assume x (flip 1/2))");
    const auto& fd = std::get<DistCall>(std::get<AssumeStmt>(pf.stmts[0].node).expr->node);
    CHECK(fd.dist == "bernoulli");
}

TEST_CASE("printing is canonical and parse-stable") {
    CHECK(print_program(Program{}) == "");
    Program p;
    p.stmts.push_back(Stmt{AssumeStmt{"x", make_literal(Rational(1, 2))}});
    CHECK(print_program(p) == "(assume x 1/2)");

    const char* sources[] = {
        "(assume x (flip 3/10 :label \"x\"))\n(observe (flip (if x 9/10 1/10) :label \"o\") #t)",
        "(assume f (lambda (a) (a 1)))\n(assume y (f (lambda (b) b)))",
        "(assume u (dist uniform-int 3))",
    };
    for (const char* src : sources) {
        Program p1 = parse(src);
        Program p2 = parse(print_program(p1));
        CHECK(program_equal(p1, p2));
    }
}

TEST_CASE("parse errors carry positions and validation bites") {
    CHECK_THROWS_AS(parse("(assume x (dist nosuch 1/2))"), parse_error);
    CHECK_THROWS_AS(parse("(observe x #t)"), parse_error);
    CHECK_THROWS_AS(parse("(assume x"), parse_error);
    CHECK_THROWS_AS(parse("(assume x 1/2) (assume x 1/3)"), error);
    try {
        parse("(assume x\n  (dist nosuch 1/2))");
        FAIL("expected parse error");
    } catch (const parse_error& e) {
        CHECK(e.line == 2);
        CHECK(std::string(e.what()).find("nosuch") != std::string::npos);
    }
}

TEST_CASE("observe head must be a stochastic choice") {
    CHECK_THROWS_AS(parse("(observe (lambda (x) x) #t)"), parse_error);
    CHECK_NOTHROW(parse("(observe (flip 1/2) #f)"));
}

TEST_CASE("statements may reference earlier bindings only") {
    CHECK_THROWS_WITH(parse("(assume a b)\n(assume b 1)"),
                      Catch::Matchers::ContainsSubstring("before its assume"));
    CHECK_THROWS_WITH(parse("(assume a a)"),
                      Catch::Matchers::ContainsSubstring("before its assume"));
    // Unbound names that are never assumed stay legal (stuck applications).
    CHECK_NOTHROW(parse("(assume s (q 5))"));
}

TEST_CASE("default labels are statement-indexed preorder paths") {
    Program p = parse("(assume x (flip 1/2))\n(assume y (dist bernoulli (flip 1/3)))");
    const auto& x = std::get<DistCall>(std::get<AssumeStmt>(p.stmts[0].node).expr->node);
    CHECK(x.label == "s0/");
    CHECK_FALSE(x.user_label);
    const auto& outer = std::get<DistCall>(std::get<AssumeStmt>(p.stmts[1].node).expr->node);
    CHECK(outer.label == "s1/");
    const auto& inner = std::get<DistCall>(outer.param->node);
    CHECK(inner.label == "s1/0");
}

TEST_CASE("free variables") {
    CHECK(free_variables(*make_var("x")) == std::set<std::string>{"x"});
    CHECK(free_variables(*make_lambda("x", make_var("x"))).empty());
    ExprPtr e = make_app(make_var("f"), make_lambda("x", make_app(make_var("x"), make_var("y"))));
    CHECK(free_variables(*e) == std::set<std::string>({"f", "y"}));
    Registry reg = builtin_distributions();
    CHECK(free_variables(*make_dist("bernoulli", make_var("p")), reg) ==
          std::set<std::string>{"p"});
}

TEST_CASE("free variable binder property over random terms") {
    RandomSource rng(2024);
    for (int i = 0; i < 200; ++i) {
        ExprPtr body = random_expr(rng, 4, {});
        for (const char* name : {"v0", "g1"}) {
            auto fv = free_variables(*make_lambda(name, body));
            auto expect = free_variables(*body);
            expect.erase(name);
            CHECK(fv == expect);
        }
    }
}

TEST_CASE("parse-print round trip on random terms") {
    RandomSource rng(7);
    for (int i = 0; i < 200; ++i) {
        Program p;
        p.stmts.push_back(Stmt{AssumeStmt{"r", random_expr(rng, 5, {})}});
        assign_default_labels(p);
        Program q = parse(print_program(p));
        CHECK(program_equal(p, q));
    }
}

TEST_CASE("desugaring is idempotent under reprint") {
    Program p = parse("(assume x (if (flip 1/2) #t #f))");
    std::string s1 = print_program(p);
    std::string s2 = print_program(parse(s1));
    CHECK(s1 == s2);
}

TEST_CASE("substitution respects shadowing") {
    // (lambda (x) (x y))[y := 3]
    ExprPtr e = make_lambda("x", make_app(make_var("x"), make_var("y")));
    ExprPtr r = substitute(e, "y", make_literal(Rational(3)));
    const auto& l = std::get<Lambda>(r->node);
    CHECK(std::holds_alternative<LiteralExpr>(std::get<App>(l.body->node).arg->node));
    // x occurrences under the binder stay put
    ExprPtr s = substitute(e, "x", make_literal(Rational(3)));
    CHECK(expr_equal(s, e));
}

TEST_CASE("value expression grammar excludes stochastic choices") {
    CHECK(is_value_expr(*church_true()));
    CHECK(is_value_expr(*make_app(make_var("f"), make_literal(Rational(1)))));
    CHECK_FALSE(is_value_expr(*make_dist("bernoulli", make_literal(Rational(1, 2)))));
    CHECK_FALSE(is_value_expr(*make_lambda("x", make_dist("bernoulli", make_var("x")))));
}
