#pragma once

#include "subtrace/depgraph.hpp"
#include "subtrace/executor.hpp"
#include "subtrace/trace.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace subtrace {

// ---------------------------------------------------------------------------
// Unnormalized trace density: the product of every stochastic choice's pdf
// and every observe statement's likelihood factor. Exact rational, with a
// log-space float companion for chain runtime.

struct Density {
    Rational value;
    double log_value;  // -inf when value == 0
};

inline Density make_density(Rational r) {
    double lg = r == 0 ? -std::numeric_limits<double>::infinity()
                       : std::log(rational_to_double(r));
    return Density{std::move(r), lg};
}

namespace detail {

inline Rational choice_factor_product(const AugExpr& ae, const Registry& registry) {
    Rational prod = 1;
    for_each_node(ae, [&](const AugExpr& n) {
        if (const auto* d = std::get_if<DistNode>(&n.node)) {
            prod *= registry.at(d->dist).pdf(*d->param->value, rollback(*d->result));
        }
    });
    return prod;
}

}  // namespace detail

// Product over Dist choices only (no observe factors): the forward prior.
inline Rational prior_density(const Trace& t, const Registry& registry) {
    Rational prod = 1;
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node))
            prod *= detail::choice_factor_product(*a->expr, registry);
        else
            prod *= detail::choice_factor_product(*std::get<AugObserve>(stmt.node).param, registry);
    }
    return prod;
}

// Product of observe likelihood factors only.
inline Rational observe_weight(const Trace& t, const Registry& registry) {
    Rational prod = 1;
    for (const auto& stmt : t.stmts) {
        if (const auto* o = std::get_if<AugObserve>(&stmt.node))
            prod *= registry.at(o->dist).pdf(*o->param->value, o->constrained);
    }
    return prod;
}

inline Density density(const Trace& t, const Registry& registry) {
    return make_density(prior_density(t, registry) * observe_weight(t, registry));
}

// ---------------------------------------------------------------------------
// Extraction: converts stochastic choices outside the subproblem into
// hoisted observe statements constraining the recorded outcome, and
// decomposes beta applications whose operator is outside the subproblem into
// hoisted assume statements with the body inlined. Node ids of kept material
// are preserved, so provenance is the identity on surviving ids.

struct Subtrace {
    Trace trace;
    std::map<NodeId, NodeId> provenance;  // subtrace node -> originating node
};

// Where extraction put things, keyed by original-trace ids. Drives stitching.
struct ExtractEvents {
    std::vector<std::size_t> stmt_of_orig;  // original stmt index -> retained stmt index
    std::map<NodeId, std::pair<std::size_t, std::size_t>> beta_stmts;  // App id -> (op, arg)
    std::map<NodeId, std::size_t> dist_obs_stmt;  // choice id -> hoisted observe index
};

namespace detail {

struct ExtractState {
    const IdSet& selected;
    std::vector<AugStmt> out;
    ExtractEvents events;
    std::uint64_t next_fresh;
    // Vanished roots (converted dists, decomposed apps) -> standing
    // replacement root. References to these must be rewritten so the subtrace
    // revalidates exactly, not just modulo ids.
    std::map<NodeId, NodeId> root_map;

    std::string fresh_name() { return "%e" + std::to_string(next_fresh++); }
};

inline AugExprPtr extract_expr(const AugExprPtr& ae, ExtractState& st) {
    if (std::holds_alternative<FreeVarNode>(ae->node) ||
        std::holds_alternative<BoundVarNode>(ae->node) ||
        std::holds_alternative<LambdaNode>(ae->node) ||
        std::holds_alternative<LiteralNode>(ae->node)) {
        return ae;
    }
    if (const auto* a = std::get_if<AppNode>(&ae->node)) {
        if (a->tail && !st.selected.count(a->fn->id)) {
            // Operator outside the subproblem: hoist it and the argument as
            // assume statements, inline the executed body.
            AugExprPtr op = extract_expr(a->fn, st);
            std::size_t op_idx = st.out.size();
            st.out.push_back(AugStmt{AugAssume{st.fresh_name(), op}});
            AugExprPtr arg = extract_expr(a->arg, st);
            std::size_t arg_idx = st.out.size();
            st.out.push_back(AugStmt{AugAssume{a->tail->bound_name, arg}});
            AugExprPtr body = extract_expr(a->tail->body, st);
            st.events.beta_stmts[ae->id] = {op_idx, arg_idx};
            st.root_map[ae->id] = body->id;
            return body;
        }
        AugExprPtr op = extract_expr(a->fn, st);
        AugExprPtr arg = extract_expr(a->arg, st);
        if (op == a->fn && arg == a->arg) return ae;
        return make_aug(ae->id, ae->value, AppNode{op, arg, a->tail});
    }
    const auto& d = std::get<DistNode>(ae->node);
    if (st.selected.count(d.choice_id)) {
        AugExprPtr param = extract_expr(d.param, st);
        if (param == d.param) return ae;
        return make_aug(ae->id, ae->value, DistNode{d.dist, param, d.choice_id, d.result, d.label});
    }
    // Choice outside the subproblem: re-emit as an observe constraining the
    // recorded outcome (the choice id becomes the observe's Sample node) and
    // leave the outcome expression in place.
    AugExprPtr param = extract_expr(d.param, st);
    std::size_t obs_idx = st.out.size();
    st.out.push_back(AugStmt{AugObserve{d.dist, param, d.choice_id, rollback(*d.result), d.label}});
    st.events.dist_obs_stmt[d.choice_id] = obs_idx;
    AugExprPtr result = extract_expr(d.result, st);
    st.root_map[ae->id] = result->id;
    return result;
}

inline NodeId resolve_root(const std::map<NodeId, NodeId>& root_map, NodeId id) {
    auto it = root_map.find(id);
    return it == root_map.end() ? id : it->second;
}

inline ValuePtr rewrite_value(const ValuePtr& v, const std::map<NodeId, NodeId>& root_map) {
    if (const auto* c = std::get_if<ClosureVal>(&v->node)) {
        auto env = std::make_shared<EnvMap>();
        for (const auto& [name, b] : *c->env)
            env->emplace(name, Binding{rewrite_value(b.value, root_map),
                                       resolve_root(root_map, b.id)});
        return make_closure(c->param, c->body, env);
    }
    if (const auto* s = std::get_if<StuckAppVal>(&v->node))
        return make_stuck(rewrite_value(s->fn, root_map), rewrite_value(s->arg, root_map));
    return v;
}

inline AugExprPtr rewrite_refs(const AugExprPtr& ae, const std::map<NodeId, NodeId>& root_map) {
    ValuePtr value = rewrite_value(ae->value, root_map);
    if (const auto* b = std::get_if<BoundVarNode>(&ae->node))
        return make_aug(ae->id, value, BoundVarNode{b->name, resolve_root(root_map, b->binder)});
    if (const auto* a = std::get_if<AppNode>(&ae->node)) {
        std::optional<BetaTail> tail;
        if (a->tail)
            tail = BetaTail{a->tail->bound_name, rewrite_refs(a->tail->body, root_map)};
        return make_aug(ae->id, value,
                        AppNode{rewrite_refs(a->fn, root_map), rewrite_refs(a->arg, root_map),
                                std::move(tail)});
    }
    if (const auto* d = std::get_if<DistNode>(&ae->node))
        return make_aug(ae->id, value,
                        DistNode{d->dist, rewrite_refs(d->param, root_map), d->choice_id,
                                 rewrite_refs(d->result, root_map), d->label});
    return make_aug(ae->id, value, ae->node);
}

inline std::pair<Subtrace, ExtractEvents> extract_impl(const Trace& t, const IdSet& selected) {
    ExtractState st{selected, {}, {}, name_counter_start(rollback(t), "e")};
    for (const auto& stmt : t.stmts) {
        if (const auto* a = std::get_if<AugAssume>(&stmt.node)) {
            AugExprPtr e = extract_expr(a->expr, st);
            st.events.stmt_of_orig.push_back(st.out.size());
            st.out.push_back(AugStmt{AugAssume{a->name, e}});
        } else {
            const auto& o = std::get<AugObserve>(stmt.node);
            AugExprPtr param = extract_expr(o.param, st);
            st.events.stmt_of_orig.push_back(st.out.size());
            st.out.push_back(AugStmt{AugObserve{o.dist, param, o.obs_id, o.constrained, o.label}});
        }
    }
    Subtrace sub;
    for (auto& stmt : st.out) {
        if (auto* a = std::get_if<AugAssume>(&stmt.node)) {
            sub.trace.stmts.push_back(
                AugStmt{AugAssume{a->name, rewrite_refs(a->expr, st.root_map)}});
        } else {
            auto& o = std::get<AugObserve>(stmt.node);
            sub.trace.stmts.push_back(AugStmt{AugObserve{
                o.dist, rewrite_refs(o.param, st.root_map), o.obs_id, o.constrained, o.label}});
        }
    }
    for_each_node(sub.trace, [&](const AugExpr& n) {
        sub.provenance[n.id] = n.id;
        if (const auto* d = std::get_if<DistNode>(&n.node))
            sub.provenance[d->choice_id] = d->choice_id;
    });
    return {std::move(sub), std::move(st.events)};
}

}  // namespace detail

inline Subtrace extract_trace(const Trace& t, const Subproblem& s) {
    return detail::extract_impl(t, s.selected).first;
}

// ---------------------------------------------------------------------------
// Equivalence check (entangled inference correctness): t and t2 may differ
// only in stochastic choices inside S and computations dependent on them.
// Execution-fresh names and node ids are immaterial.

namespace detail {

struct EquivState {
    std::map<std::string, std::string> left;
    std::map<std::string, std::string> right;
    int counter = 0;

    void bind(const std::string& a, const std::string& b) {
        std::string canon = "%q" + std::to_string(counter++);
        left[a] = canon;
        right[b] = canon;
    }
    bool names_match(const std::string& a, const std::string& b) const {
        auto la = left.find(a);
        auto rb = right.find(b);
        if (la != left.end() || rb != right.end())
            return la != left.end() && rb != right.end() && la->second == rb->second;
        return a == b;
    }
};

inline bool equiv_syntax(const Expr& a, const Expr& b, const EquivState& st,
                         std::set<std::string>& shadowed) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* v = std::get_if<Var>(&a.node)) {
        const auto& w = std::get<Var>(b.node);
        if (shadowed.count(v->name)) return v->name == w.name;
        return st.names_match(v->name, w.name);
    }
    if (const auto* l = std::get_if<Lambda>(&a.node)) {
        const auto& m = std::get<Lambda>(b.node);
        if (l->param != m.param) return false;
        bool inserted = shadowed.insert(l->param).second;
        bool ok = equiv_syntax(*l->body, *m.body, st, shadowed);
        if (inserted) shadowed.erase(l->param);
        return ok;
    }
    if (const auto* ap = std::get_if<App>(&a.node)) {
        const auto& bp = std::get<App>(b.node);
        return equiv_syntax(*ap->fn, *bp.fn, st, shadowed) &&
               equiv_syntax(*ap->arg, *bp.arg, st, shadowed);
    }
    if (const auto* d = std::get_if<DistCall>(&a.node)) {
        const auto& e = std::get<DistCall>(b.node);
        return d->dist == e.dist && d->label == e.label &&
               equiv_syntax(*d->param, *e.param, st, shadowed);
    }
    return std::get<LiteralExpr>(a.node).value == std::get<LiteralExpr>(b.node).value;
}

inline bool equiv_syntax(const ExprPtr& a, const ExprPtr& b, const EquivState& st) {
    std::set<std::string> shadowed;
    return equiv_syntax(*a, *b, st, shadowed);
}

// S refers to node ids of the first trace.
inline bool equiv_expr(const IdSet& S, const AugExpr& a, const AugExpr& b, EquivState& st) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* f = std::get_if<FreeVarNode>(&a.node))
        return f->name == std::get<FreeVarNode>(b.node).name;
    if (const auto* v = std::get_if<BoundVarNode>(&a.node))
        return st.names_match(v->name, std::get<BoundVarNode>(b.node).name);
    if (const auto* l = std::get_if<LambdaNode>(&a.node)) {
        const auto& m = std::get<LambdaNode>(b.node);
        return l->param == m.param &&
               equiv_syntax(make_lambda(l->param, l->body), make_lambda(m.param, m.body), st);
    }
    if (const auto* ap = std::get_if<AppNode>(&a.node)) {
        const auto& bp = std::get<AppNode>(b.node);
        if (!equiv_expr(S, *ap->fn, *bp.fn, st)) return false;
        if (!equiv_expr(S, *ap->arg, *bp.arg, st)) return false;
        if (S.count(ap->fn->id)) return true;  // tails unconstrained when the operator may change
        if (ap->tail.has_value() != bp.tail.has_value()) return false;
        if (!ap->tail) return true;
        st.bind(ap->tail->bound_name, bp.tail->bound_name);
        return equiv_expr(S, *ap->tail->body, *bp.tail->body, st);
    }
    if (const auto* d = std::get_if<DistNode>(&a.node)) {
        const auto& e = std::get<DistNode>(b.node);
        if (d->dist != e.dist || d->label != e.label) return false;
        if (!equiv_expr(S, *d->param, *e.param, st)) return false;
        if (S.count(d->choice_id)) return true;  // outcome free to change inside S
        return equiv_expr(S, *d->result, *e.result, st);
    }
    return std::get<LiteralNode>(a.node).value == std::get<LiteralNode>(b.node).value;
}

}  // namespace detail

inline bool equiv(const Subproblem& s, const Trace& t, const Trace& t2) {
    if (t.stmts.size() != t2.stmts.size()) return false;
    detail::EquivState st;
    for (std::size_t i = 0; i < t.stmts.size(); ++i) {
        const auto& a = t.stmts[i];
        const auto& b = t2.stmts[i];
        if (a.node.index() != b.node.index()) return false;
        if (const auto* x = std::get_if<AugAssume>(&a.node)) {
            const auto& y = std::get<AugAssume>(b.node);
            if (x->name != y.name) return false;
            if (!detail::equiv_expr(s.selected, *x->expr, *y.expr, st)) return false;
        } else {
            const auto& ox = std::get<AugObserve>(a.node);
            const auto& oy = std::get<AugObserve>(b.node);
            if (ox.dist != oy.dist || ox.label != oy.label) return false;
            if (!detail::equiv_syntax(ox.constrained, oy.constrained, st)) return false;
            if (!detail::equiv_expr(s.selected, *ox.param, *oy.param, st)) return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Stitching: the dual of extraction. The original trace supplies the
// skeleton; material inside the subproblem is replaced from the mutated
// subtrace; hoisted observes and decomposed applications are re-inlined.
// Values of affected enclosing nodes are recomputed, so the result
// revalidates by construction. The output trace carries fresh ids.

namespace detail {

struct StitchState {
    const Registry& registry;
    const IdSet& selected;                 // over the original trace's ids
    const std::vector<AugStmt>& sub_stmts;  // mutated subtrace statements
    const ExtractEvents& events;
    ExecState exec;
    std::map<std::string, std::string> rename_orig;  // original beta name -> output name
    std::map<std::string, std::string> rename_sub;   // subtrace beta name -> output name

    [[noreturn]] void fail(const std::string& msg) const {
        throw error("stitch: " + msg);
    }
};

inline ExprPtr rename_syntax(const ExprPtr& e, const std::map<std::string, std::string>& map,
                             std::set<std::string>& shadowed) {
    if (const auto* v = std::get_if<Var>(&e->node)) {
        if (shadowed.count(v->name)) return e;
        auto it = map.find(v->name);
        return it == map.end() ? e : make_var(it->second);
    }
    if (const auto* l = std::get_if<Lambda>(&e->node)) {
        bool inserted = shadowed.insert(l->param).second;
        ExprPtr body = rename_syntax(l->body, map, shadowed);
        if (inserted) shadowed.erase(l->param);
        return body == l->body ? e : make_lambda(l->param, body);
    }
    if (const auto* a = std::get_if<App>(&e->node)) {
        ExprPtr fn = rename_syntax(a->fn, map, shadowed);
        ExprPtr arg = rename_syntax(a->arg, map, shadowed);
        return (fn == a->fn && arg == a->arg) ? e : make_app(fn, arg);
    }
    if (const auto* d = std::get_if<DistCall>(&e->node)) {
        ExprPtr param = rename_syntax(d->param, map, shadowed);
        return param == d->param ? e : make_dist(d->dist, param, d->label, d->user_label);
    }
    return e;
}

inline ExprPtr rename_syntax(const ExprPtr& e, const std::map<std::string, std::string>& map) {
    std::set<std::string> shadowed;
    return rename_syntax(e, map, shadowed);
}

inline const AugAssume& expect_assume(const AugStmt& s, StitchState& st) {
    const auto* a = std::get_if<AugAssume>(&s.node);
    if (!a) st.fail("expected hoisted assume statement in subtrace");
    return *a;
}

inline const AugObserve& expect_observe(const AugStmt& s, StitchState& st) {
    const auto* o = std::get_if<AugObserve>(&s.node);
    if (!o) st.fail("expected hoisted observe statement in subtrace");
    return *o;
}

// oc: cursor into the original trace (null once inside fully mutated
// regions). sc: cursor into the mutated subtrace (null only inside unchanged
// outcome trees that were hoisted away entirely -- never when material from
// the subproblem is needed). At least one cursor is always present.
inline AugExprPtr stitch_rep(const AugExpr* oc, const AugExpr* sc, const Env& env,
                             StitchState& st);

inline AugExprPtr stitch_leaf(const AugExpr& cursor,
                              const std::map<std::string, std::string>& renames, const Env& env,
                              StitchState& st) {
    if (const auto* f = std::get_if<FreeVarNode>(&cursor.node)) {
        std::string name = f->name;
        if (auto it = renames.find(name); it != renames.end()) name = it->second;
        if (env_lookup(env, name)) st.fail("free variable became bound: " + name);
        return make_aug(st.exec.fresh_id(), make_symbol(name), FreeVarNode{name});
    }
    if (const auto* b = std::get_if<BoundVarNode>(&cursor.node)) {
        std::string name = b->name;
        if (auto it = renames.find(name); it != renames.end()) name = it->second;
        const Binding* bind = env_lookup(env, name);
        if (!bind) st.fail("unbound variable during replay: " + name);
        return make_aug(st.exec.fresh_id(), bind->value, BoundVarNode{name, bind->id});
    }
    if (const auto* l = std::get_if<LambdaNode>(&cursor.node)) {
        ExprPtr body = rename_syntax(l->body, renames);
        ExprPtr lam = make_lambda(l->param, body);
        Env captured = env_restrict(env, free_variables(*lam, st.registry));
        return make_aug(st.exec.fresh_id(), make_closure(l->param, body, captured),
                        LambdaNode{l->param, body});
    }
    const auto& lit = std::get<LiteralNode>(cursor.node);
    return make_aug(st.exec.fresh_id(), make_rational_value(lit.value), LiteralNode{lit.value});
}

inline AugExprPtr stitch_app(const AugExpr* oc, const AppNode* oa, const AugExpr* sc,
                             const AppNode* sa, const Env& env, StitchState& st) {
    // Decomposed beta: operator and argument live in hoisted assume
    // statements of the subtrace; sc (if present) is the inlined body.
    if (oc && oa->tail && st.events.beta_stmts.count(oc->id)) {
        auto [op_idx, arg_idx] = st.events.beta_stmts.at(oc->id);
        const AugAssume& op_stmt = expect_assume(st.sub_stmts.at(op_idx), st);
        const AugAssume& arg_stmt = expect_assume(st.sub_stmts.at(arg_idx), st);
        AugExprPtr fn = stitch_rep(oa->fn.get(), op_stmt.expr.get(), env, st);
        AugExprPtr arg = stitch_rep(oa->arg.get(), arg_stmt.expr.get(), env, st);
        const auto* c = std::get_if<ClosureVal>(&fn->value->node);
        if (!c) st.fail("decomposed application operator is no longer a closure");
        std::string fresh = st.exec.fresh_name();
        st.rename_orig[oa->tail->bound_name] = fresh;
        st.rename_sub[arg_stmt.name] = fresh;
        Env inner = env_extend(c->env, fresh, Binding{arg->value, arg->id});
        AugExprPtr body = stitch_rep(oa->tail->body.get(), sc, inner, st);
        return make_aug(st.exec.fresh_id(), body->value, AppNode{fn, arg, BetaTail{fresh, body}});
    }
    AugExprPtr fn = stitch_rep(oa ? oa->fn.get() : nullptr, sa ? sa->fn.get() : nullptr, env, st);
    AugExprPtr arg =
        stitch_rep(oa ? oa->arg.get() : nullptr, sa ? sa->arg.get() : nullptr, env, st);
    if (const auto* c = std::get_if<ClosureVal>(&fn->value->node)) {
        std::string fresh = st.exec.fresh_name();
        const AugExpr* oc_body = nullptr;
        const AugExpr* sc_body = nullptr;
        if (oa && oa->tail && oc && value_alpha_equal(*oa->fn->value, *fn->value)) {
            st.rename_orig[oa->tail->bound_name] = fresh;
            oc_body = oa->tail->body.get();
        }
        if (sa) {
            if (!sa->tail) st.fail("subtrace disagrees on application form (expected beta)");
            st.rename_sub[sa->tail->bound_name] = fresh;
            sc_body = sa->tail->body.get();
        }
        if (!oc_body && !sc_body)
            st.fail("no cursor available for mutated application body");
        Env inner = env_extend(c->env, fresh, Binding{arg->value, arg->id});
        AugExprPtr body = stitch_rep(oc_body, sc_body, inner, st);
        return make_aug(st.exec.fresh_id(), body->value, AppNode{fn, arg, BetaTail{fresh, body}});
    }
    if (sa && sa->tail) st.fail("subtrace disagrees on application form (expected opaque)");
    return make_aug(st.exec.fresh_id(), make_stuck(fn->value, arg->value),
                    AppNode{fn, arg, std::nullopt});
}

inline AugExprPtr stitch_dist(const AugExpr* oc, const DistNode* od, const AugExpr* sc,
                              const DistNode* sd, const Env& env, StitchState& st) {
    // Converted choice: constrained by a hoisted observe; outcome comes from
    // the original trace (the constraint pins it).
    if (oc && !st.selected.count(od->choice_id)) {
        auto it = st.events.dist_obs_stmt.find(od->choice_id);
        if (it == st.events.dist_obs_stmt.end())
            st.fail("outside choice has no hoisted observe");
        const AugObserve& obs = expect_observe(st.sub_stmts.at(it->second), st);
        if (obs.dist != od->dist) st.fail("hoisted observe distribution mismatch");
        AugExprPtr param = stitch_rep(od->param.get(), obs.param.get(), env, st);
        AugExprPtr result = stitch_rep(od->result.get(), sc, env, st);
        NodeId choice = st.exec.fresh_id();
        return make_aug(st.exec.fresh_id(), result->value,
                        DistNode{od->dist, param, choice, result, od->label});
    }
    // Choice inside the subproblem (or inside a fully mutated region): the
    // subtrace owns the outcome.
    if (!sd) st.fail("subproblem choice missing from subtrace");
    if (od && od->dist != sd->dist) st.fail("distribution mismatch inside subproblem");
    AugExprPtr param =
        stitch_rep(od ? od->param.get() : nullptr, sd->param.get(), env, st);
    const AugExpr* oc_result = nullptr;
    if (od && expr_alpha_equal(rollback(*od->result), rollback(*sd->result)))
        oc_result = od->result.get();
    AugExprPtr result = stitch_rep(oc_result, sd->result.get(), env, st);
    NodeId choice = st.exec.fresh_id();
    return make_aug(st.exec.fresh_id(), result->value,
                    DistNode{sd->dist, param, choice, result, sd->label});
}

inline AugExprPtr stitch_rep(const AugExpr* oc, const AugExpr* sc, const Env& env,
                             StitchState& st) {
    if (!oc && !sc) throw error("stitch: lost both cursors");
    if (oc) {
        // Extraction replaced converted dists and decomposed applications
        // with other shapes, so dispatch on the original before comparing
        // against the subtrace cursor.
        if (const auto* oa = std::get_if<AppNode>(&oc->node)) {
            if (oa->tail && st.events.beta_stmts.count(oc->id))
                return stitch_app(oc, oa, sc, nullptr, env, st);
            const AppNode* sa = nullptr;
            if (sc) {
                sa = std::get_if<AppNode>(&sc->node);
                if (!sa) st.fail("subtrace shape mismatch at application");
            }
            return stitch_app(oc, oa, sc, sa, env, st);
        }
        if (const auto* od = std::get_if<DistNode>(&oc->node)) {
            const DistNode* sd = nullptr;
            if (st.selected.count(od->choice_id)) {
                if (!sc) st.fail("subproblem choice missing from subtrace");
                sd = std::get_if<DistNode>(&sc->node);
                if (!sd) st.fail("subtrace shape mismatch at subproblem choice");
            }
            return stitch_dist(oc, od, sc, sd, env, st);
        }
        if (sc && oc->node.index() != sc->node.index())
            st.fail("cursor shape mismatch (leaf)");
        return stitch_leaf(*oc, st.rename_orig, env, st);
    }
    if (const auto* sa = std::get_if<AppNode>(&sc->node))
        return stitch_app(nullptr, nullptr, sc, sa, env, st);
    if (const auto* sd = std::get_if<DistNode>(&sc->node))
        return stitch_dist(nullptr, nullptr, sc, sd, env, st);
    return stitch_leaf(*sc, st.rename_sub, env, st);
}

}  // namespace detail

// Stitches a mutated subtrace back into the original trace. The subtrace must
// be a valid trace of the subprogram extract_trace(t, s) rolls back to.
inline Trace stitch_trace(const Trace& t, const Trace& mutated_sub, const Subproblem& s,
                          const Registry& registry) {
    auto [skeleton, events] = detail::extract_impl(t, s.selected);
    Program p_s = rollback(skeleton.trace);
    Program p_sub = rollback(mutated_sub);
    if (p_s.stmts.size() != p_sub.stmts.size())
        throw error("stitch: subtrace statement count differs from subprogram");
    for (std::size_t i = 0; i < p_s.stmts.size(); ++i) {
        if (!stmt_equal(p_s.stmts[i], p_sub.stmts[i]))
            throw error("stitch: subtrace is not from the extracted subprogram (statement " +
                        std::to_string(i) + ")");
    }

    Program p = rollback(t);
    detail::StitchState st{registry,
                           s.selected,
                           mutated_sub.stmts,
                           events,
                           detail::ExecState{registry, nullptr, 1,
                                             detail::name_counter_start(p, "b")},
                           {},
                           {}};
    Env env = empty_env();
    Trace out;
    for (std::size_t i = 0; i < t.stmts.size(); ++i) {
        std::size_t sub_idx = events.stmt_of_orig.at(i);
        const AugStmt& sub_stmt = mutated_sub.stmts.at(sub_idx);
        if (const auto* a = std::get_if<AugAssume>(&t.stmts[i].node)) {
            const AugAssume& sa = detail::expect_assume(sub_stmt, st);
            AugExprPtr e = detail::stitch_rep(a->expr.get(), sa.expr.get(), env, st);
            env = env_extend(env, a->name, Binding{e->value, e->id});
            out.stmts.push_back(AugStmt{AugAssume{a->name, e}});
        } else {
            const auto& o = std::get<AugObserve>(t.stmts[i].node);
            const AugObserve& so = detail::expect_observe(sub_stmt, st);
            if (so.dist != o.dist) st.fail("observe distribution mismatch");
            AugExprPtr param = detail::stitch_rep(o.param.get(), so.param.get(), env, st);
            out.stmts.push_back(
                AugStmt{AugObserve{o.dist, param, st.exec.fresh_id(), o.constrained, o.label}});
        }
    }
    return out;
}

}  // namespace subtrace
