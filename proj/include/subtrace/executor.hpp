#pragma once

#include "subtrace/ast.hpp"
#include "subtrace/distribution.hpp"
#include "subtrace/rng.hpp"
#include "subtrace/trace.hpp"
#include "subtrace/value.hpp"

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace subtrace {

// Chooses the outcome index for one stochastic choice, given the ordered
// support at the evaluated parameter. Random execution and exhaustive
// enumeration both drive the executor through this hook.
using OutcomeOracle =
    std::function<std::size_t(const std::string& dist, const Value& param,
                              const std::vector<ExprPtr>& support)>;

inline OutcomeOracle random_oracle(RandomSource& rng, const Registry& registry) {
    return [&rng, &registry](const std::string& dist, const Value& param,
                             const std::vector<ExprPtr>& support) {
        // Inverse CDF over the registry's declared support order, one uniform
        // draw per choice.
        double u = rng.next_double();
        const auto& d = registry.at(dist);
        Rational cum = 0;
        for (std::size_t i = 0; i + 1 < support.size(); ++i) {
            cum += d.pdf(param, support[i]);
            if (u < rational_to_double(cum)) return i;
        }
        return support.size() - 1;
    };
}

namespace detail {

// Execution-fresh variable names: "%b<k>". The counter starts past every
// %b-name already present in the program so substituted bodies never collide
// with source names (extraction relies on this freshness).
inline std::uint64_t name_counter_floor(const std::string& name, const char* prefix) {
    std::string pre = std::string("%") + prefix;
    if (name.rfind(pre, 0) != 0) return 0;
    std::string digits = name.substr(pre.size());
    if (digits.empty()) return 0;
    for (char c : digits)
        if (c < '0' || c > '9') return 0;
    return std::stoull(digits) + 1;
}

inline void scan_names(const Expr& e, const char* prefix, std::uint64_t& floor) {
    if (const auto* v = std::get_if<Var>(&e.node)) {
        floor = std::max(floor, name_counter_floor(v->name, prefix));
    } else if (const auto* l = std::get_if<Lambda>(&e.node)) {
        floor = std::max(floor, name_counter_floor(l->param, prefix));
        scan_names(*l->body, prefix, floor);
    } else if (const auto* a = std::get_if<App>(&e.node)) {
        scan_names(*a->fn, prefix, floor);
        scan_names(*a->arg, prefix, floor);
    } else if (const auto* d = std::get_if<DistCall>(&e.node)) {
        scan_names(*d->param, prefix, floor);
    }
}

inline std::uint64_t name_counter_start(const Program& p, const char* prefix) {
    std::uint64_t floor = 0;
    for (const auto& stmt : p.stmts) {
        if (const auto* a = std::get_if<AssumeStmt>(&stmt.node)) {
            floor = std::max(floor, name_counter_floor(a->name, prefix));
            scan_names(*a->expr, prefix, floor);
        } else {
            const auto& o = std::get<ObserveStmt>(stmt.node);
            scan_names(*o.expr, prefix, floor);
            scan_names(*o.constrained, prefix, floor);
        }
    }
    return floor;
}

struct ExecState {
    const Registry& registry;
    OutcomeOracle oracle;
    std::uint64_t next_id = 1;
    std::uint64_t next_name;

    NodeId fresh_id() { return NodeId{next_id++}; }
    std::string fresh_name() { return "%b" + std::to_string(next_name++); }
};

inline AugExprPtr exec_expr(const ExprPtr& e, const Env& env, ExecState& st) {
    if (const auto* v = std::get_if<Var>(&e->node)) {
        if (const Binding* b = env_lookup(env, v->name))
            return make_aug(st.fresh_id(), b->value, BoundVarNode{v->name, b->id});
        return make_aug(st.fresh_id(), make_symbol(v->name), FreeVarNode{v->name});
    }
    if (const auto* lit = std::get_if<LiteralExpr>(&e->node)) {
        return make_aug(st.fresh_id(), make_rational_value(lit->value), LiteralNode{lit->value});
    }
    if (const auto* l = std::get_if<Lambda>(&e->node)) {
        Env captured = env_restrict(env, free_variables(*e, st.registry));
        ValuePtr closure = make_closure(l->param, l->body, captured);
        return make_aug(st.fresh_id(), closure, LambdaNode{l->param, l->body});
    }
    if (const auto* a = std::get_if<App>(&e->node)) {
        AugExprPtr fn = exec_expr(a->fn, env, st);
        AugExprPtr arg = exec_expr(a->arg, env, st);
        if (const auto* c = std::get_if<ClosureVal>(&fn->value->node)) {
            std::string fresh = st.fresh_name();
            ExprPtr body = substitute(c->body, c->param, make_var(fresh));
            Env inner = env_extend(c->env, fresh, Binding{arg->value, arg->id});
            AugExprPtr body_ae = exec_expr(body, inner, st);
            return make_aug(st.fresh_id(), body_ae->value,
                            AppNode{fn, arg, BetaTail{fresh, body_ae}});
        }
        ValuePtr stuck = make_stuck(fn->value, arg->value);
        return make_aug(st.fresh_id(), stuck, AppNode{fn, arg, std::nullopt});
    }
    const auto& d = std::get<DistCall>(e->node);
    AugExprPtr param = exec_expr(d.param, env, st);
    std::vector<ExprPtr> support;
    try {
        support = st.registry.at(d.dist).support(*param->value);
    } catch (const error& err) {
        throw error(std::string(err.what()) + " (parameter node " + std::to_string(param->id.v) +
                    ", label '" + d.label + "')");
    }
    if (support.empty()) throw error(d.dist + ": empty support (label '" + d.label + "')");
    std::size_t idx = st.oracle(d.dist, *param->value, support);
    NodeId choice = st.fresh_id();
    AugExprPtr result = exec_expr(support[idx], env, st);
    return make_aug(st.fresh_id(), result->value,
                    DistNode{d.dist, param, choice, result, d.label});
}

}  // namespace detail

// Call-by-value execution of a program into an augmented trace. All
// stochastic choices are resolved through the oracle; observe statements are
// constrained (the observed choice's outcome is fixed, contributing a
// likelihood factor rather than a free choice).
inline Trace execute(const Program& p, const Registry& registry, const OutcomeOracle& oracle) {
    detail::ExecState st{registry, oracle, 1, detail::name_counter_start(p, "b")};
    Env env = empty_env();
    Trace t;
    for (const auto& stmt : p.stmts) {
        if (const auto* a = std::get_if<AssumeStmt>(&stmt.node)) {
            AugExprPtr ae = detail::exec_expr(a->expr, env, st);
            env = env_extend(env, a->name, Binding{ae->value, ae->id});
            t.stmts.push_back(AugStmt{AugAssume{a->name, ae}});
        } else {
            const auto& o = std::get<ObserveStmt>(stmt.node);
            const auto* d = std::get_if<DistCall>(&o.expr->node);
            if (!d) throw error("observe expression must be a stochastic choice");
            AugExprPtr param = detail::exec_expr(d->param, env, st);
            // Surfaces invalid parameters now; a zero factor is legal.
            registry.at(d->dist).pdf(*param->value, o.constrained);
            NodeId obs = st.fresh_id();
            t.stmts.push_back(AugStmt{AugObserve{d->dist, param, obs, o.constrained, d->label}});
        }
    }
    return t;
}

inline Trace execute(const Program& p, const Registry& registry, RandomSource& rng) {
    return execute(p, registry, random_oracle(rng, registry));
}

// ---------------------------------------------------------------------------
// Revalidation: deterministic re-execution replaying each recorded outcome.
// ok iff every node's recorded value matches recomputation, every outcome
// lies in the registered support, and node ids are unique.

struct ValidationReport {
    bool ok = true;
    std::optional<NodeId> node;
    std::string message;
};

namespace detail {

struct RevalFail {
    NodeId node;
    std::string message;
};

struct RevalState {
    const Registry& registry;
    std::set<std::uint64_t> seen_ids;

    void claim(NodeId id) {
        if (!seen_ids.insert(id.v).second)
            throw RevalFail{id, "duplicate node id"};
    }
};

inline void reval_expr(const ExprPtr& expected, const AugExpr& ae, const Env& env,
                       RevalState& st) {
    st.claim(ae.id);
    if (const auto* v = std::get_if<Var>(&expected->node)) {
        const Binding* b = env_lookup(env, v->name);
        if (b) {
            const auto* bv = std::get_if<BoundVarNode>(&ae.node);
            if (!bv || bv->name != v->name) throw RevalFail{ae.id, "expected bound variable " + v->name};
            if (bv->binder != b->id) throw RevalFail{ae.id, "binder id mismatch for " + v->name};
            if (!exact_value_equal(*ae.value, *b->value))
                throw RevalFail{ae.id, "stale value for " + v->name};
        } else {
            const auto* fv = std::get_if<FreeVarNode>(&ae.node);
            if (!fv || fv->name != v->name) throw RevalFail{ae.id, "expected free variable " + v->name};
            if (!exact_value_equal(*ae.value, Value{SymbolVal{v->name}}))
                throw RevalFail{ae.id, "free variable value mismatch"};
        }
        return;
    }
    if (const auto* lit = std::get_if<LiteralExpr>(&expected->node)) {
        const auto* ln = std::get_if<LiteralNode>(&ae.node);
        if (!ln || ln->value != lit->value) throw RevalFail{ae.id, "literal mismatch"};
        if (!exact_value_equal(*ae.value, Value{RationalVal{lit->value}}))
            throw RevalFail{ae.id, "literal value mismatch"};
        return;
    }
    if (const auto* l = std::get_if<Lambda>(&expected->node)) {
        const auto* ln = std::get_if<LambdaNode>(&ae.node);
        if (!ln || ln->param != l->param || !expr_equal(*ln->body, *l->body))
            throw RevalFail{ae.id, "lambda syntax mismatch"};
        const auto* c = std::get_if<ClosureVal>(&ae.value->node);
        if (!c) throw RevalFail{ae.id, "lambda value is not a closure"};
        Env expected_env = env_restrict(env, free_variables(*expected, st.registry));
        if (!exact_value_equal(*ae.value, Value{ClosureVal{l->param, l->body, expected_env}}))
            throw RevalFail{ae.id, "closure capture mismatch"};
        return;
    }
    if (const auto* a = std::get_if<App>(&expected->node)) {
        const auto* an = std::get_if<AppNode>(&ae.node);
        if (!an) throw RevalFail{ae.id, "expected application node"};
        reval_expr(a->fn, *an->fn, env, st);
        reval_expr(a->arg, *an->arg, env, st);
        if (const auto* c = std::get_if<ClosureVal>(&an->fn->value->node)) {
            if (!an->tail) throw RevalFail{ae.id, "operator is a closure but tail is opaque"};
            ExprPtr body = substitute(c->body, c->param, make_var(an->tail->bound_name));
            Env inner = env_extend(c->env, an->tail->bound_name,
                                   Binding{an->arg->value, an->arg->id});
            reval_expr(body, *an->tail->body, inner, st);
            if (!exact_value_equal(*ae.value, *an->tail->body->value))
                throw RevalFail{ae.id, "application value mismatch"};
        } else {
            if (an->tail) throw RevalFail{ae.id, "operator is not a closure but tail is beta"};
            if (!exact_value_equal(*ae.value,
                                   Value{StuckAppVal{an->fn->value, an->arg->value}}))
                throw RevalFail{ae.id, "stuck application value mismatch"};
        }
        return;
    }
    const auto& d = std::get<DistCall>(expected->node);
    const auto* dn = std::get_if<DistNode>(&ae.node);
    if (!dn || dn->dist != d.dist) throw RevalFail{ae.id, "expected " + d.dist + " node"};
    reval_expr(d.param, *dn->param, env, st);
    st.claim(dn->choice_id);
    std::vector<ExprPtr> support;
    try {
        support = st.registry.at(d.dist).support(*dn->param->value);
    } catch (const error& e) {
        throw RevalFail{dn->choice_id, e.what()};
    }
    ExprPtr outcome = rollback(*dn->result);
    bool in_support = false;
    for (const auto& s : support)
        if (expr_alpha_equal(s, outcome)) { in_support = true; break; }
    if (!in_support) throw RevalFail{dn->choice_id, "recorded outcome not in support"};
    reval_expr(outcome, *dn->result, env, st);
    if (!exact_value_equal(*ae.value, *dn->result->value))
        throw RevalFail{ae.id, "dist node value mismatch"};
}

}  // namespace detail

inline ValidationReport revalidate(const Trace& t, const Registry& registry) {
    detail::RevalState st{registry, {}};
    Env env = empty_env();
    try {
        for (const auto& stmt : t.stmts) {
            if (const auto* a = std::get_if<AugAssume>(&stmt.node)) {
                detail::reval_expr(rollback(*a->expr), *a->expr, env, st);
                env = env_extend(env, a->name, Binding{a->expr->value, a->expr->id});
            } else {
                const auto& o = std::get<AugObserve>(stmt.node);
                detail::reval_expr(rollback(*o.param), *o.param, env, st);
                st.claim(o.obs_id);
                if (!is_value_expr(*o.constrained))
                    throw detail::RevalFail{o.obs_id, "constrained expression is not a value"};
                registry.at(o.dist).pdf(*o.param->value, o.constrained);
            }
        }
    } catch (const detail::RevalFail& f) {
        return ValidationReport{false, f.node, f.message};
    } catch (const error& e) {
        return ValidationReport{false, std::nullopt, e.what()};
    }
    return ValidationReport{true, std::nullopt, ""};
}

}  // namespace subtrace
