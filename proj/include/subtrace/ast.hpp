#pragma once

#include "subtrace/rational.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace subtrace {

// Distribution-name validation hook handed to the parser by the registry.
using DistNameCheck = std::function<bool(const std::string&)>;

// Surface language: untyped lambda calculus plus Dist(e) stochastic choice
// expressions and exact rational literals. Statements are assume/observe.

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Var {
    std::string name;
};

struct Lambda {
    std::string param;
    ExprPtr body;
};

struct App {
    ExprPtr fn;
    ExprPtr arg;
};

struct DistCall {
    std::string dist;
    ExprPtr param;
    std::string label;    // effective label; "" when never assigned
    bool user_label = false;  // printed only when the source carried :label
};

struct LiteralExpr {
    Rational value;
};

struct Expr {
    std::variant<Var, Lambda, App, DistCall, LiteralExpr> node;
};

inline ExprPtr make_var(std::string name) {
    return std::make_shared<Expr>(Expr{Var{std::move(name)}});
}
inline ExprPtr make_lambda(std::string param, ExprPtr body) {
    return std::make_shared<Expr>(Expr{Lambda{std::move(param), std::move(body)}});
}
inline ExprPtr make_app(ExprPtr fn, ExprPtr arg) {
    return std::make_shared<Expr>(Expr{App{std::move(fn), std::move(arg)}});
}
inline ExprPtr make_dist(std::string dist, ExprPtr param, std::string label = "",
                         bool user_label = false) {
    return std::make_shared<Expr>(
        Expr{DistCall{std::move(dist), std::move(param), std::move(label), user_label}});
}
inline ExprPtr make_literal(Rational value) {
    return std::make_shared<Expr>(Expr{LiteralExpr{std::move(value)}});
}

struct AssumeStmt {
    std::string name;
    ExprPtr expr;
};

struct ObserveStmt {
    ExprPtr expr;         // head must be a DistCall
    ExprPtr constrained;  // a value expression (no DistCall inside)
};

struct Stmt {
    std::variant<AssumeStmt, ObserveStmt> node;
};

struct Program {
    std::vector<Stmt> stmts;
};

// Church booleans; `if` desugars to thunked application so that control
// dependence flows through lambda application.
inline ExprPtr church_true() {
    return make_lambda("t", make_lambda("f", make_var("t")));
}
inline ExprPtr church_false() {
    return make_lambda("t", make_lambda("f", make_var("f")));
}
// (if c a b) => (((c (lambda (_) a)) (lambda (_) b)) 0)
inline ExprPtr desugar_if(ExprPtr c, ExprPtr a, ExprPtr b) {
    return make_app(make_app(make_app(std::move(c), make_lambda("_", std::move(a))),
                             make_lambda("_", std::move(b))),
                    make_literal(Rational(0)));
}

// ---------------------------------------------------------------------------
// Structural equality (DistCall user_label flag is presentation-only).

inline bool expr_equal(const Expr& a, const Expr& b) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* v = std::get_if<Var>(&a.node))
        return v->name == std::get<Var>(b.node).name;
    if (const auto* l = std::get_if<Lambda>(&a.node)) {
        const auto& m = std::get<Lambda>(b.node);
        return l->param == m.param && expr_equal(*l->body, *m.body);
    }
    if (const auto* ap = std::get_if<App>(&a.node)) {
        const auto& bp = std::get<App>(b.node);
        return expr_equal(*ap->fn, *bp.fn) && expr_equal(*ap->arg, *bp.arg);
    }
    if (const auto* d = std::get_if<DistCall>(&a.node)) {
        const auto& e = std::get<DistCall>(b.node);
        return d->dist == e.dist && d->label == e.label && expr_equal(*d->param, *e.param);
    }
    return std::get<LiteralExpr>(a.node).value == std::get<LiteralExpr>(b.node).value;
}

inline bool expr_equal(const ExprPtr& a, const ExprPtr& b) {
    return expr_equal(*a, *b);
}

inline bool stmt_equal(const Stmt& a, const Stmt& b) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* s = std::get_if<AssumeStmt>(&a.node)) {
        const auto& t = std::get<AssumeStmt>(b.node);
        return s->name == t.name && expr_equal(*s->expr, *t.expr);
    }
    const auto& s = std::get<ObserveStmt>(a.node);
    const auto& t = std::get<ObserveStmt>(b.node);
    return expr_equal(*s.expr, *t.expr) && expr_equal(*s.constrained, *t.constrained);
}

inline bool program_equal(const Program& a, const Program& b) {
    if (a.stmts.size() != b.stmts.size()) return false;
    for (std::size_t i = 0; i < a.stmts.size(); ++i)
        if (!stmt_equal(a.stmts[i], b.stmts[i])) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Free variables. Builtin distribution outcomes are closed expressions, so a
// DistCall contributes only its parameter's free variables; a registry hook
// for outcome free variables lives in distribution.hpp.

inline void free_variables_into(const Expr& e, std::set<std::string>& bound,
                                std::set<std::string>& out) {
    if (const auto* v = std::get_if<Var>(&e.node)) {
        if (!bound.count(v->name)) out.insert(v->name);
    } else if (const auto* l = std::get_if<Lambda>(&e.node)) {
        bool inserted = bound.insert(l->param).second;
        free_variables_into(*l->body, bound, out);
        if (inserted) bound.erase(l->param);
    } else if (const auto* a = std::get_if<App>(&e.node)) {
        free_variables_into(*a->fn, bound, out);
        free_variables_into(*a->arg, bound, out);
    } else if (const auto* d = std::get_if<DistCall>(&e.node)) {
        free_variables_into(*d->param, bound, out);
    }
}

inline std::set<std::string> free_variables(const Expr& e) {
    std::set<std::string> bound, out;
    free_variables_into(e, bound, out);
    return out;
}

// ---------------------------------------------------------------------------
// Substitution e[replacement/name]. Used with globally fresh variable names,
// so capture cannot occur; shadowing still stops the walk.

inline ExprPtr substitute(const ExprPtr& e, const std::string& name, const ExprPtr& replacement) {
    if (const auto* v = std::get_if<Var>(&e->node))
        return v->name == name ? replacement : e;
    if (const auto* l = std::get_if<Lambda>(&e->node)) {
        if (l->param == name) return e;
        ExprPtr body = substitute(l->body, name, replacement);
        return body == l->body ? e : make_lambda(l->param, body);
    }
    if (const auto* a = std::get_if<App>(&e->node)) {
        ExprPtr fn = substitute(a->fn, name, replacement);
        ExprPtr arg = substitute(a->arg, name, replacement);
        return (fn == a->fn && arg == a->arg) ? e : make_app(fn, arg);
    }
    if (const auto* d = std::get_if<DistCall>(&e->node)) {
        ExprPtr param = substitute(d->param, name, replacement);
        return param == d->param ? e : make_dist(d->dist, param, d->label, d->user_label);
    }
    return e;
}

// Value grammar: variables, lambdas, applications, literals; no DistCall.
inline bool is_value_expr(const Expr& e) {
    if (std::holds_alternative<DistCall>(e.node)) return false;
    if (const auto* l = std::get_if<Lambda>(&e.node)) return is_value_expr(*l->body);
    if (const auto* a = std::get_if<App>(&e.node))
        return is_value_expr(*a->fn) && is_value_expr(*a->arg);
    return true;
}

// ---------------------------------------------------------------------------
// Default labels: "s<stmt-index>/<preorder-path>" where the path is the
// dot-joined child-index sequence from the statement expression root.

inline ExprPtr assign_default_labels(const ExprPtr& e, const std::string& stmt_prefix,
                                     const std::string& path) {
    auto child = [&](int i) { return path.empty() ? std::to_string(i) : path + "." + std::to_string(i); };
    if (const auto* l = std::get_if<Lambda>(&e->node)) {
        ExprPtr body = assign_default_labels(l->body, stmt_prefix, child(0));
        return body == l->body ? e : make_lambda(l->param, body);
    }
    if (const auto* a = std::get_if<App>(&e->node)) {
        ExprPtr fn = assign_default_labels(a->fn, stmt_prefix, child(0));
        ExprPtr arg = assign_default_labels(a->arg, stmt_prefix, child(1));
        return (fn == a->fn && arg == a->arg) ? e : make_app(fn, arg);
    }
    if (const auto* d = std::get_if<DistCall>(&e->node)) {
        ExprPtr param = assign_default_labels(d->param, stmt_prefix, child(0));
        std::string label = d->label.empty() ? stmt_prefix + "/" + path : d->label;
        if (param == d->param && label == d->label) return e;
        return make_dist(d->dist, param, label, d->user_label);
    }
    return e;
}

inline void assign_default_labels(Program& p) {
    for (std::size_t i = 0; i < p.stmts.size(); ++i) {
        std::string prefix = "s" + std::to_string(i);
        if (auto* a = std::get_if<AssumeStmt>(&p.stmts[i].node)) {
            a->expr = assign_default_labels(a->expr, prefix, "");
        } else {
            auto& o = std::get<ObserveStmt>(p.stmts[i].node);
            o.expr = assign_default_labels(o.expr, prefix, "");
        }
    }
}

}  // namespace subtrace
