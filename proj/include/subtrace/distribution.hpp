#pragma once

#include "subtrace/ast.hpp"
#include "subtrace/value.hpp"

#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace subtrace {

// A registered distribution over a finite, ordered list of outcome value
// expressions. pdf is strictly positive on the support, zero off it, and sums
// to exactly 1 at every accepted parameter. Outcome expressions are closed.
struct Distribution {
    std::string name;
    std::function<std::vector<ExprPtr>(const Value&)> support;
    std::function<Rational(const Value&, const ExprPtr&)> pdf;
    std::set<std::string> outcome_free_vars;  // empty for all builtins
};

class Registry {
public:
    void add(Distribution d) { dists_[d.name] = std::move(d); }

    bool contains(const std::string& name) const { return dists_.count(name) > 0; }

    const Distribution& at(const std::string& name) const {
        auto it = dists_.find(name);
        if (it == dists_.end()) throw error("unknown distribution '" + name + "'");
        return it->second;
    }

    DistNameCheck name_check() const {
        return [this](const std::string& n) { return contains(n); };
    }

private:
    std::map<std::string, Distribution> dists_;
};

namespace detail {

inline Rational param_probability(const Value& param, const std::string& dist) {
    const auto* r = std::get_if<RationalVal>(&param.node);
    if (!r) throw error(dist + ": parameter must be a rational value");
    if (r->value < 0 || r->value > 1)
        throw error(dist + ": probability parameter " + rational_to_string(r->value) +
                    " outside [0,1]");
    return r->value;
}

}  // namespace detail

inline Distribution bernoulli_distribution() {
    Distribution d;
    d.name = "bernoulli";
    d.support = [](const Value& param) {
        Rational p = detail::param_probability(param, "bernoulli");
        std::vector<ExprPtr> out;
        if (p > 0) out.push_back(church_true());
        if (p < 1) out.push_back(church_false());
        return out;
    };
    d.pdf = [](const Value& param, const ExprPtr& outcome) {
        Rational p = detail::param_probability(param, "bernoulli");
        if (expr_alpha_equal(outcome, church_true())) return p;
        if (expr_alpha_equal(outcome, church_false())) return Rational(1) - p;
        return Rational(0);
    };
    return d;
}

inline Distribution uniform_int_distribution() {
    Distribution d;
    d.name = "uniform-int";
    auto bound = [](const Value& param) {
        const auto* r = std::get_if<RationalVal>(&param.node);
        if (!r || denominator(r->value) != 1 || r->value < 1)
            throw error("uniform-int: parameter must be a positive integer");
        return numerator(r->value);
    };
    d.support = [bound](const Value& param) {
        BigInt n = bound(param);
        std::vector<ExprPtr> out;
        for (BigInt i = 0; i < n; ++i) out.push_back(make_literal(Rational(i)));
        return out;
    };
    d.pdf = [bound](const Value& param, const ExprPtr& outcome) {
        BigInt n = bound(param);
        const auto* lit = std::get_if<LiteralExpr>(&outcome->node);
        if (!lit || denominator(lit->value) != 1) return Rational(0);
        BigInt k = numerator(lit->value);
        if (k < 0 || k >= n) return Rational(0);
        return Rational(1, n);
    };
    return d;
}

// Categorical over an explicit (outcome, weight) list; the runtime parameter
// is evaluated but ignored. Weights must be positive and sum to exactly 1.
inline Distribution make_categorical(std::string name,
                                     std::vector<std::pair<ExprPtr, Rational>> outcomes) {
    Rational total = 0;
    for (const auto& [e, w] : outcomes) {
        if (!is_value_expr(*e)) throw error(name + ": outcomes must be value expressions");
        if (!free_variables(*e).empty()) throw error(name + ": outcomes must be closed");
        if (w <= 0) throw error(name + ": weights must be positive");
        total += w;
    }
    if (total != 1) throw error(name + ": weights must sum to 1, got " + rational_to_string(total));
    for (std::size_t i = 0; i < outcomes.size(); ++i)
        for (std::size_t j = i + 1; j < outcomes.size(); ++j)
            if (expr_alpha_equal(outcomes[i].first, outcomes[j].first))
                throw error(name + ": duplicate outcome");
    Distribution d;
    d.name = std::move(name);
    auto table = std::make_shared<std::vector<std::pair<ExprPtr, Rational>>>(std::move(outcomes));
    d.support = [table](const Value&) {
        std::vector<ExprPtr> out;
        for (const auto& [e, w] : *table) out.push_back(e);
        return out;
    };
    d.pdf = [table](const Value&, const ExprPtr& outcome) {
        for (const auto& [e, w] : *table)
            if (expr_alpha_equal(e, outcome)) return w;
        return Rational(0);
    };
    return d;
}

inline Registry builtin_distributions() {
    Registry r;
    r.add(bernoulli_distribution());
    r.add(uniform_int_distribution());
    return r;
}

// Free variables including registered outcome expressions (builtin outcomes
// are closed, so this usually reduces to plain free_variables).
inline std::set<std::string> free_variables(const Expr& e, const Registry& registry) {
    std::set<std::string> out = free_variables(e);
    std::function<void(const Expr&)> walk = [&](const Expr& x) {
        if (const auto* l = std::get_if<Lambda>(&x.node)) {
            walk(*l->body);
        } else if (const auto* a = std::get_if<App>(&x.node)) {
            walk(*a->fn);
            walk(*a->arg);
        } else if (const auto* d = std::get_if<DistCall>(&x.node)) {
            if (registry.contains(d->dist)) {
                const auto& fv = registry.at(d->dist).outcome_free_vars;
                out.insert(fv.begin(), fv.end());
            }
            walk(*d->param);
        }
    };
    walk(e);
    return out;
}

}  // namespace subtrace
