#pragma once

#include "subtrace/ast.hpp"
#include "subtrace/printer.hpp"
#include "subtrace/value.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace subtrace {

// Augmented expressions: every evaluated (sub)expression annotated with its
// value and a unique node id. Beta applications additionally record the fresh
// bound name and the executed body; Dist evaluations record the stochastic
// choice id and the executed outcome expression.

struct AugExpr;
using AugExprPtr = std::shared_ptr<const AugExpr>;

struct FreeVarNode {
    std::string name;
};

struct BoundVarNode {
    std::string name;
    NodeId binder;  // node that produced the binding
};

struct LambdaNode {
    std::string param;
    ExprPtr body;  // source syntax; not executed
};

struct BetaTail {
    std::string bound_name;  // execution-fresh
    AugExprPtr body;
};

struct AppNode {
    AugExprPtr fn;
    AugExprPtr arg;
    std::optional<BetaTail> tail;  // nullopt = opaque (stuck) application
};

struct DistNode {
    std::string dist;
    AugExprPtr param;
    NodeId choice_id;  // the Sample node
    AugExprPtr result;
    std::string label;
};

struct LiteralNode {
    Rational value;
};

struct AugExpr {
    NodeId id;
    ValuePtr value;
    std::variant<FreeVarNode, BoundVarNode, LambdaNode, AppNode, DistNode, LiteralNode> node;
};

inline AugExprPtr make_aug(NodeId id, ValuePtr value,
                           std::variant<FreeVarNode, BoundVarNode, LambdaNode, AppNode, DistNode,
                                        LiteralNode> node) {
    return std::make_shared<AugExpr>(AugExpr{id, std::move(value), std::move(node)});
}

struct AugAssume {
    std::string name;
    AugExprPtr expr;
};

// The observed stochastic choice: the head Dist's evaluated parameter plus
// the constrained outcome. obs_id is the Sample node in the dependence graph.
struct AugObserve {
    std::string dist;
    AugExprPtr param;
    NodeId obs_id;
    ExprPtr constrained;
    std::string label;
};

struct AugStmt {
    std::variant<AugAssume, AugObserve> node;
};

struct Trace {
    std::vector<AugStmt> stmts;
};

// ---------------------------------------------------------------------------
// Rollback: drop values and ids, recover the underlying program. Beta tails
// are discarded; observed choices are reconstituted as (dist ...) heads.

inline ExprPtr rollback(const AugExpr& ae) {
    if (const auto* f = std::get_if<FreeVarNode>(&ae.node)) return make_var(f->name);
    if (const auto* b = std::get_if<BoundVarNode>(&ae.node)) return make_var(b->name);
    if (const auto* l = std::get_if<LambdaNode>(&ae.node)) return make_lambda(l->param, l->body);
    if (const auto* a = std::get_if<AppNode>(&ae.node))
        return make_app(rollback(*a->fn), rollback(*a->arg));
    if (const auto* d = std::get_if<DistNode>(&ae.node))
        return make_dist(d->dist, rollback(*d->param), d->label, true);
    return make_literal(std::get<LiteralNode>(ae.node).value);
}

inline Program rollback(const Trace& t) {
    Program p;
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node)) {
            p.stmts.push_back(Stmt{AssumeStmt{a->name, rollback(*a->expr)}});
        } else {
            const auto& o = std::get<AugObserve>(stmt.node);
            p.stmts.push_back(Stmt{ObserveStmt{
                make_dist(o.dist, rollback(*o.param), o.label, true), o.constrained}});
        }
    }
    return p;
}

inline void for_each_node(const AugExpr& ae, const std::function<void(const AugExpr&)>& fn) {
    fn(ae);
    if (const auto* a = std::get_if<AppNode>(&ae.node)) {
        for_each_node(*a->fn, fn);
        for_each_node(*a->arg, fn);
        if (a->tail) for_each_node(*a->tail->body, fn);
    } else if (const auto* d = std::get_if<DistNode>(&ae.node)) {
        for_each_node(*d->param, fn);
        for_each_node(*d->result, fn);
    }
}

inline void for_each_node(const Trace& t, const std::function<void(const AugExpr&)>& fn) {
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node)) for_each_node(*a->expr, fn);
        else for_each_node(*std::get<AugObserve>(stmt.node).param, fn);
    }
}

// ---------------------------------------------------------------------------
// Equality modulo ids: node ids and execution-fresh bound names are renamed
// through bijections built during the walk; id-reference topology (binder
// links, choice ids) must map consistently.

namespace detail {

struct ModIdState {
    std::map<std::uint64_t, std::uint64_t> fwd;
    std::map<std::uint64_t, std::uint64_t> rev;
    std::map<std::string, std::string> name_fwd;
    std::map<std::string, std::string> name_rev;

    bool pair_ids(NodeId a, NodeId b) {
        auto f = fwd.find(a.v);
        if (f != fwd.end()) return f->second == b.v;
        auto r = rev.find(b.v);
        if (r != rev.end()) return false;
        fwd[a.v] = b.v;
        rev[b.v] = a.v;
        return true;
    }

    bool pair_names(const std::string& a, const std::string& b) {
        auto f = name_fwd.find(a);
        if (f != name_fwd.end()) return f->second == b;
        if (name_rev.count(b)) return false;
        name_fwd[a] = b;
        name_rev[b] = a;
        return true;
    }

    bool names_match(const std::string& a, const std::string& b) const {
        auto f = name_fwd.find(a);
        if (f != name_fwd.end()) return f->second == b;
        return !name_rev.count(b) && a == b;
    }
};

// Syntax equality where free occurrences of execution-renamed variables match
// through the bijection; lambda params shadow.
inline bool expr_equal_mod_names(const Expr& a, const Expr& b, ModIdState& st,
                                 std::set<std::string>& shadowed_a) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* v = std::get_if<Var>(&a.node)) {
        const auto& w = std::get<Var>(b.node);
        if (shadowed_a.count(v->name)) return v->name == w.name;
        return st.names_match(v->name, w.name);
    }
    if (const auto* l = std::get_if<Lambda>(&a.node)) {
        const auto& m = std::get<Lambda>(b.node);
        if (l->param != m.param) return false;
        bool inserted = shadowed_a.insert(l->param).second;
        bool ok = expr_equal_mod_names(*l->body, *m.body, st, shadowed_a);
        if (inserted) shadowed_a.erase(l->param);
        return ok;
    }
    if (const auto* ap = std::get_if<App>(&a.node)) {
        const auto& bp = std::get<App>(b.node);
        return expr_equal_mod_names(*ap->fn, *bp.fn, st, shadowed_a) &&
               expr_equal_mod_names(*ap->arg, *bp.arg, st, shadowed_a);
    }
    if (const auto* d = std::get_if<DistCall>(&a.node)) {
        const auto& e = std::get<DistCall>(b.node);
        return d->dist == e.dist && d->label == e.label &&
               expr_equal_mod_names(*d->param, *e.param, st, shadowed_a);
    }
    return std::get<LiteralExpr>(a.node).value == std::get<LiteralExpr>(b.node).value;
}

inline bool expr_equal_mod_names(const ExprPtr& a, const ExprPtr& b, ModIdState& st) {
    std::set<std::string> shadowed;
    return expr_equal_mod_names(*a, *b, st, shadowed);
}

inline bool aug_equal_mod_ids(const AugExpr& a, const AugExpr& b, ModIdState& st) {
    if (a.node.index() != b.node.index()) return false;
    if (!st.pair_ids(a.id, b.id)) return false;
    if (const auto* f = std::get_if<FreeVarNode>(&a.node))
        return f->name == std::get<FreeVarNode>(b.node).name;
    if (const auto* v = std::get_if<BoundVarNode>(&a.node)) {
        const auto& w = std::get<BoundVarNode>(b.node);
        return st.names_match(v->name, w.name) && st.pair_ids(v->binder, w.binder);
    }
    if (const auto* l = std::get_if<LambdaNode>(&a.node)) {
        const auto& m = std::get<LambdaNode>(b.node);
        return l->param == m.param && expr_equal_mod_names(l->body, m.body, st);
    }
    if (const auto* ap = std::get_if<AppNode>(&a.node)) {
        const auto& bp = std::get<AppNode>(b.node);
        if (!aug_equal_mod_ids(*ap->fn, *bp.fn, st)) return false;
        if (!aug_equal_mod_ids(*ap->arg, *bp.arg, st)) return false;
        if (ap->tail.has_value() != bp.tail.has_value()) return false;
        if (!ap->tail) return true;
        if (!st.pair_names(ap->tail->bound_name, bp.tail->bound_name)) return false;
        return aug_equal_mod_ids(*ap->tail->body, *bp.tail->body, st);
    }
    if (const auto* d = std::get_if<DistNode>(&a.node)) {
        const auto& e = std::get<DistNode>(b.node);
        return d->dist == e.dist && d->label == e.label && st.pair_ids(d->choice_id, e.choice_id) &&
               aug_equal_mod_ids(*d->param, *e.param, st) &&
               aug_equal_mod_ids(*d->result, *e.result, st);
    }
    return std::get<LiteralNode>(a.node).value == std::get<LiteralNode>(b.node).value;
}

}  // namespace detail

inline bool trace_equal_mod_ids(const Trace& t1, const Trace& t2) {
    if (t1.stmts.size() != t2.stmts.size()) return false;
    detail::ModIdState st;
    for (std::size_t i = 0; i < t1.stmts.size(); ++i) {
        const auto& a = t1.stmts[i];
        const auto& b = t2.stmts[i];
        if (a.node.index() != b.node.index()) return false;
        if (const auto* x = std::get_if<AugAssume>(&a.node)) {
            const auto& y = std::get<AugAssume>(b.node);
            if (!st.names_match(x->name, y.name)) return false;
            if (!detail::aug_equal_mod_ids(*x->expr, *y.expr, st)) return false;
        } else {
            const auto& ox = std::get<AugObserve>(a.node);
            const auto& oy = std::get<AugObserve>(b.node);
            if (ox.dist != oy.dist || ox.label != oy.label) return false;
            if (!st.pair_ids(ox.obs_id, oy.obs_id)) return false;
            if (!detail::expr_equal_mod_names(ox.constrained, oy.constrained, st)) return false;
            if (!detail::aug_equal_mod_ids(*ox.param, *oy.param, st)) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Canonical serialization: ids renumbered by first visit, execution-fresh
// names renumbered through a map. Two traces are id-equivalent iff their
// canonical strings are equal; the string doubles as the TraceSpace index key.

namespace detail {

struct CanonState {
    std::map<std::uint64_t, std::uint64_t> ids;
    std::map<std::string, std::string> names;

    std::string id(NodeId n) {
        auto [it, inserted] = ids.emplace(n.v, ids.size());
        return std::to_string(it->second);
    }
    // Execution-fresh names (beta/extraction counters) are canonicalized; all
    // other names pass through.
    std::string name(const std::string& n) {
        auto it = names.find(n);
        return it == names.end() ? n : it->second;
    }
    std::string bind(const std::string& n) {
        auto [it, inserted] = names.emplace(n, "%c" + std::to_string(names.size()));
        return it->second;
    }
};

inline void canon_expr(const Expr& e, CanonState& st, std::set<std::string>& shadowed,
                       std::ostringstream& os) {
    if (const auto* v = std::get_if<Var>(&e.node)) {
        os << "v:" << (shadowed.count(v->name) ? v->name : st.name(v->name)) << ";";
    } else if (const auto* l = std::get_if<Lambda>(&e.node)) {
        os << "l:" << l->param << "(";
        bool inserted = shadowed.insert(l->param).second;
        canon_expr(*l->body, st, shadowed, os);
        if (inserted) shadowed.erase(l->param);
        os << ")";
    } else if (const auto* a = std::get_if<App>(&e.node)) {
        os << "a(";
        canon_expr(*a->fn, st, shadowed, os);
        canon_expr(*a->arg, st, shadowed, os);
        os << ")";
    } else if (const auto* d = std::get_if<DistCall>(&e.node)) {
        os << "d:" << d->dist << ":" << d->label << "(";
        canon_expr(*d->param, st, shadowed, os);
        os << ")";
    } else {
        os << "q:" << rational_to_string(std::get<LiteralExpr>(e.node).value) << ";";
    }
}

inline void canon_expr(const ExprPtr& e, CanonState& st, std::ostringstream& os) {
    std::set<std::string> shadowed;
    canon_expr(*e, st, shadowed, os);
}

inline void canon_aug(const AugExpr& ae, CanonState& st, std::ostringstream& os) {
    os << "@" << st.id(ae.id);
    if (const auto* f = std::get_if<FreeVarNode>(&ae.node)) {
        os << "F:" << f->name << ";";
    } else if (const auto* b = std::get_if<BoundVarNode>(&ae.node)) {
        os << "B:" << st.name(b->name) << "#" << st.id(b->binder) << ";";
    } else if (const auto* l = std::get_if<LambdaNode>(&ae.node)) {
        os << "L:" << l->param << "(";
        canon_expr(make_lambda(l->param, l->body), st, os);
        os << ")";
    } else if (const auto* a = std::get_if<AppNode>(&ae.node)) {
        os << "A(";
        canon_aug(*a->fn, st, os);
        canon_aug(*a->arg, st, os);
        if (a->tail) {
            os << "=" << st.bind(a->tail->bound_name) << "(";
            canon_aug(*a->tail->body, st, os);
            os << ")";
        } else {
            os << "=_";
        }
        os << ")";
    } else if (const auto* d = std::get_if<DistNode>(&ae.node)) {
        os << "D:" << d->dist << ":" << d->label << "#" << st.id(d->choice_id) << "(";
        canon_aug(*d->param, st, os);
        os << "->";
        canon_aug(*d->result, st, os);
        os << ")";
    } else {
        os << "Q:" << rational_to_string(std::get<LiteralNode>(ae.node).value) << ";";
    }
}

}  // namespace detail

inline std::string canonical_string(const Trace& t) {
    detail::CanonState st;
    std::ostringstream os;
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node)) {
            os << "[assume " << st.name(a->name) << " ";
            detail::canon_aug(*a->expr, st, os);
            os << "]";
        } else {
            const auto& o = std::get<AugObserve>(stmt.node);
            os << "[observe " << o.dist << ":" << o.label << "#" << st.id(o.obs_id) << " ";
            detail::canon_aug(*o.param, st, os);
            os << " = ";
            detail::canon_expr(o.constrained, st, os);
            os << "]";
        }
    }
    return os.str();
}

// FNV-1a over the canonical string; collisions are resolved by the string key
// wherever exactness matters.
inline std::uint64_t canonical_hash(const Trace& t) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : canonical_string(t)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace subtrace
