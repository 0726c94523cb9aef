#pragma once

#include "subtrace/ast.hpp"
#include "subtrace/printer.hpp"

#include <map>
#include <memory>
#include <set>
#include <string>
#include <variant>

namespace subtrace {

// Node identifiers are allocated by a per-execution counter in evaluation
// order; never reused within one trace.
struct NodeId {
    std::uint64_t v = 0;
    auto operator<=>(const NodeId&) const = default;
};

struct Value;
using ValuePtr = std::shared_ptr<const Value>;

struct Binding {
    ValuePtr value;
    NodeId id;  // node that produced this binding
};

// sigma_v and sigma_id fused: domains coincide at every execution step.
using EnvMap = std::map<std::string, Binding>;
using Env = std::shared_ptr<const EnvMap>;

struct SymbolVal {
    std::string name;
};

struct RationalVal {
    Rational value;
};

struct ClosureVal {
    std::string param;
    ExprPtr body;
    Env env;  // restricted to the lambda's free variables
};

struct StuckAppVal {
    ValuePtr fn;
    ValuePtr arg;
};

struct Value {
    std::variant<SymbolVal, RationalVal, ClosureVal, StuckAppVal> node;
};

inline ValuePtr make_symbol(std::string name) {
    return std::make_shared<Value>(Value{SymbolVal{std::move(name)}});
}
inline ValuePtr make_rational_value(Rational r) {
    return std::make_shared<Value>(Value{RationalVal{std::move(r)}});
}
inline ValuePtr make_closure(std::string param, ExprPtr body, Env env) {
    return std::make_shared<Value>(Value{ClosureVal{std::move(param), std::move(body), std::move(env)}});
}
inline ValuePtr make_stuck(ValuePtr fn, ValuePtr arg) {
    return std::make_shared<Value>(Value{StuckAppVal{std::move(fn), std::move(arg)}});
}

inline Env empty_env() {
    static const Env e = std::make_shared<EnvMap>();
    return e;
}

inline Env env_extend(const Env& env, const std::string& name, Binding b) {
    auto m = std::make_shared<EnvMap>(*env);
    (*m)[name] = std::move(b);
    return m;
}

inline const Binding* env_lookup(const Env& env, const std::string& name) {
    auto it = env->find(name);
    return it == env->end() ? nullptr : &it->second;
}

inline Env env_restrict(const Env& env, const std::set<std::string>& names) {
    auto m = std::make_shared<EnvMap>();
    for (const auto& n : names) {
        auto it = env->find(n);
        if (it != env->end()) m->emplace(n, it->second);
    }
    return m;
}

// Exact equality, including binding ids; used by revalidate.
inline bool exact_value_equal(const Value& a, const Value& b) {
    if (a.node.index() != b.node.index()) return false;
    if (const auto* s = std::get_if<SymbolVal>(&a.node))
        return s->name == std::get<SymbolVal>(b.node).name;
    if (const auto* r = std::get_if<RationalVal>(&a.node))
        return r->value == std::get<RationalVal>(b.node).value;
    if (const auto* c = std::get_if<ClosureVal>(&a.node)) {
        const auto& d = std::get<ClosureVal>(b.node);
        if (c->param != d.param || !expr_equal(*c->body, *d.body)) return false;
        if (c->env->size() != d.env->size()) return false;
        auto it1 = c->env->begin();
        auto it2 = d.env->begin();
        for (; it1 != c->env->end(); ++it1, ++it2) {
            if (it1->first != it2->first || it1->second.id != it2->second.id ||
                !exact_value_equal(*it1->second.value, *it2->second.value))
                return false;
        }
        return true;
    }
    const auto& s = std::get<StuckAppVal>(a.node);
    const auto& t = std::get<StuckAppVal>(b.node);
    return exact_value_equal(*s.fn, *t.fn) && exact_value_equal(*s.arg, *t.arg);
}

// ---------------------------------------------------------------------------
// Canonical expression form of a value: closure environments are inlined, so
// execution-generated variable names disappear. Two values are compared (and
// printed) through this form after alpha-normalization.

inline ExprPtr value_to_expr(const Value& v);

inline ExprPtr inline_env(const ExprPtr& e, const Env& env, std::set<std::string> shadowed) {
    if (const auto* var = std::get_if<Var>(&e->node)) {
        if (shadowed.count(var->name)) return e;
        if (const Binding* b = env_lookup(env, var->name)) return value_to_expr(*b->value);
        return e;
    }
    if (const auto* l = std::get_if<Lambda>(&e->node)) {
        auto inner = shadowed;
        inner.insert(l->param);
        ExprPtr body = inline_env(l->body, env, std::move(inner));
        return body == l->body ? e : make_lambda(l->param, body);
    }
    if (const auto* a = std::get_if<App>(&e->node)) {
        ExprPtr fn = inline_env(a->fn, env, shadowed);
        ExprPtr arg = inline_env(a->arg, env, shadowed);
        return (fn == a->fn && arg == a->arg) ? e : make_app(fn, arg);
    }
    if (const auto* d = std::get_if<DistCall>(&e->node)) {
        ExprPtr param = inline_env(d->param, env, shadowed);
        return param == d->param ? e : make_dist(d->dist, param, d->label, d->user_label);
    }
    return e;
}

inline ExprPtr value_to_expr(const Value& v) {
    if (const auto* s = std::get_if<SymbolVal>(&v.node)) return make_var(s->name);
    if (const auto* r = std::get_if<RationalVal>(&v.node)) return make_literal(r->value);
    if (const auto* c = std::get_if<ClosureVal>(&v.node))
        return make_lambda(c->param, inline_env(c->body, c->env, {c->param}));
    const auto& s = std::get<StuckAppVal>(v.node);
    return make_app(value_to_expr(*s.fn), value_to_expr(*s.arg));
}

// Bound variables renamed a0, a1, ... in traversal order; free names kept.
inline ExprPtr alpha_normalize(const ExprPtr& e, std::map<std::string, std::string>& renames,
                               int& counter) {
    if (const auto* v = std::get_if<Var>(&e->node)) {
        auto it = renames.find(v->name);
        return it == renames.end() ? e : make_var(it->second);
    }
    if (const auto* l = std::get_if<Lambda>(&e->node)) {
        std::string fresh = "a" + std::to_string(counter++);
        auto saved = renames.find(l->param);
        std::string old;
        bool had = saved != renames.end();
        if (had) old = saved->second;
        renames[l->param] = fresh;
        ExprPtr body = alpha_normalize(l->body, renames, counter);
        if (had) renames[l->param] = old; else renames.erase(l->param);
        return make_lambda(fresh, body);
    }
    if (const auto* a = std::get_if<App>(&e->node))
        return make_app(alpha_normalize(a->fn, renames, counter),
                        alpha_normalize(a->arg, renames, counter));
    if (const auto* d = std::get_if<DistCall>(&e->node))
        return make_dist(d->dist, alpha_normalize(d->param, renames, counter), d->label,
                         d->user_label);
    return e;
}

inline ExprPtr alpha_normalize(const ExprPtr& e) {
    std::map<std::string, std::string> renames;
    int counter = 0;
    return alpha_normalize(e, renames, counter);
}

inline bool expr_alpha_equal(const ExprPtr& a, const ExprPtr& b) {
    return expr_equal(*alpha_normalize(a), *alpha_normalize(b));
}

// Alpha-insensitive value equality (execution-generated names ignored).
inline bool value_alpha_equal(const Value& a, const Value& b) {
    return expr_alpha_equal(value_to_expr(a), value_to_expr(b));
}

inline std::string print_value(const Value& v) {
    return print_expr(*alpha_normalize(value_to_expr(v)));
}

}  // namespace subtrace
