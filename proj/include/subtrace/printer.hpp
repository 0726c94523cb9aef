#pragma once

#include "subtrace/ast.hpp"

#include <sstream>
#include <string>

namespace subtrace {

inline void print_expr_into(const Expr& e, std::ostream& os) {
    if (const auto* v = std::get_if<Var>(&e.node)) {
        os << v->name;
    } else if (const auto* l = std::get_if<Lambda>(&e.node)) {
        os << "(lambda (" << l->param << ") ";
        print_expr_into(*l->body, os);
        os << ")";
    } else if (const auto* a = std::get_if<App>(&e.node)) {
        os << "(";
        print_expr_into(*a->fn, os);
        os << " ";
        print_expr_into(*a->arg, os);
        os << ")";
    } else if (const auto* d = std::get_if<DistCall>(&e.node)) {
        os << "(dist " << d->dist << " ";
        print_expr_into(*d->param, os);
        if (d->user_label) os << " :label \"" << d->label << "\"";
        os << ")";
    } else {
        os << rational_to_string(std::get<LiteralExpr>(e.node).value);
    }
}

inline std::string print_expr(const Expr& e) {
    std::ostringstream os;
    print_expr_into(e, os);
    return os.str();
}

// Canonical source text: one statement per line, desugared core forms only.
// parse(print(p)) is structurally equal to p.
inline std::string print_program(const Program& p) {
    std::ostringstream os;
    bool first = true;
    for (const auto& stmt : p.stmts) {
        if (!first) os << "\n";
        first = false;
        if (const auto* a = std::get_if<AssumeStmt>(&stmt.node)) {
            os << "(assume " << a->name << " ";
            print_expr_into(*a->expr, os);
            os << ")";
        } else {
            const auto& o = std::get<ObserveStmt>(stmt.node);
            os << "(observe ";
            print_expr_into(*o.expr, os);
            os << " ";
            print_expr_into(*o.constrained, os);
            os << ")";
        }
    }
    return os.str();
}

}  // namespace subtrace
