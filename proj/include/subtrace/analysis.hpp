#pragma once

#include "subtrace/enumerate.hpp"
#include "subtrace/inference.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace subtrace {

// ---------------------------------------------------------------------------
// Explicit stochastic matrices over an enumerated trace space. Entries stay
// exact rationals throughout; EnumGibbs-only metaprograms and the analytic
// PriorMH construction both admit exact rows.

struct KernelMatrix {
    std::vector<std::vector<Rational>> rows;

    std::size_t size() const { return rows.size(); }

    Rational row_sum_error() const {
        Rational worst = 0;
        for (const auto& row : rows) {
            Rational s = std::accumulate(row.begin(), row.end(), Rational(0));
            Rational err = s > 1 ? s - 1 : Rational(1) - s;
            worst = std::max(worst, err);
        }
        return worst;
    }
};

// ---------------------------------------------------------------------------
// Equivalence classes induced by a strategy: connected components of
// R(t, t') := equiv(select(t), t, t'). Whether R is itself reflexive,
// symmetric, and transitive is the reversibility evidence.

struct ClassDecomposition {
    std::vector<std::vector<std::size_t>> classes;
    std::vector<std::size_t> class_of;
    bool relation_reflexive = true;
    bool relation_symmetric = true;
    bool relation_transitive = true;
};

namespace detail {

inline std::vector<std::vector<bool>> modification_relation(const SelectFn& select_fn,
                                                            const TraceSpace& space) {
    std::size_t n = space.size();
    std::vector<std::vector<bool>> rel(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
        Subproblem s = select_fn(space.traces[i]);
        for (std::size_t j = 0; j < n; ++j)
            rel[i][j] = equiv(s, space.traces[i], space.traces[j]);
    }
    return rel;
}

}  // namespace detail

inline ClassDecomposition decompose_by_strategy(const SelectFn& select_fn,
                                                const TraceSpace& space) {
    auto rel = detail::modification_relation(select_fn, space);
    std::size_t n = space.size();
    ClassDecomposition out;
    out.class_of.assign(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!rel[i][i]) out.relation_reflexive = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (rel[i][j] && !rel[j][i]) out.relation_symmetric = false;
            if (!rel[i][j]) continue;
            for (std::size_t k = 0; k < n; ++k)
                if (rel[j][k] && !rel[i][k]) out.relation_transitive = false;
        }
    }
    // Connected components of the symmetrized relation.
    for (std::size_t i = 0; i < n; ++i) {
        if (out.class_of[i] != n) continue;
        std::size_t cls = out.classes.size();
        out.classes.emplace_back();
        std::vector<std::size_t> stack{i};
        out.class_of[i] = cls;
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            out.classes[cls].push_back(u);
            for (std::size_t v = 0; v < n; ++v) {
                if (out.class_of[v] == n && (rel[u][v] || rel[v][u])) {
                    out.class_of[v] = cls;
                    stack.push_back(v);
                }
            }
        }
        std::sort(out.classes[cls].begin(), out.classes[cls].end());
    }
    return out;
}

// Normalized restriction of the posterior to one class (zero vector when the
// class carries no mass).
inline std::vector<Rational> class_conditional(const Posterior& post,
                                               const std::vector<std::size_t>& members) {
    Rational mass = 0;
    for (std::size_t i : members) mass += post.probs[i];
    std::vector<Rational> cond(members.size(), Rational(0));
    if (mass == 0) return cond;
    for (std::size_t k = 0; k < members.size(); ++k) cond[k] = post.probs[members[k]] / mass;
    return cond;
}

// ---------------------------------------------------------------------------
// Reversibility: the modification relation must be an equivalence relation on
// the space (symmetry + transitivity suffice given reflexivity; equivalent to
// the chain condition on finite spaces). The witness is a violating chain.

struct ReversibilityReport {
    bool reversible = true;
    std::vector<std::size_t> witness_chain;
};

inline ReversibilityReport check_reversible(const SelectFn& select_fn, const TraceSpace& space) {
    auto rel = detail::modification_relation(select_fn, space);
    std::size_t n = space.size();
    for (std::size_t i = 0; i < n; ++i)
        if (!rel[i][i]) return {false, {i}};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (rel[i][j] && !rel[j][i]) return {false, {i, j}};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (!rel[i][j]) continue;
            for (std::size_t k = 0; k < n; ++k)
                if (rel[j][k] && !rel[k][i]) return {false, {i, j, k}};
        }
    return {true, {}};
}

// ---------------------------------------------------------------------------
// Connectivity of a strategy set. Exact mode quantifies over every positive
// probability subset A and pair of strategy class functions; above the cap we
// fall back to the documented sufficient condition (all-positive posterior
// and every stochastic choice covered by some strategy).

struct ConnectivityReport {
    bool connected = false;
    bool exact = false;  // false => sufficient-condition verdict only
    // Witness for a violation in exact mode.
    std::vector<std::size_t> witness_set;
    std::size_t witness_f = 0;
    std::size_t witness_g = 0;
    bool witness_class_aligned = false;
};

inline constexpr std::size_t kConnectivityExactCap = 16;

inline ConnectivityReport check_connectivity(const std::vector<SelectFn>& strategies,
                                             const TraceSpace& space, const Posterior& post) {
    ConnectivityReport out;
    std::size_t n = space.size();
    if (strategies.empty()) throw error("check_connectivity: no strategies");
    if (n > kConnectivityExactCap) {
        // Sufficient condition only.
        out.exact = false;
        for (const auto& pr : post.probs)
            if (pr == 0) { out.connected = false; return out; }
        for (std::size_t i = 0; i < n; ++i) {
            IdSet covered;
            for (const auto& st : strategies) {
                Subproblem s = st(space.traces[i]);
                covered.insert(s.selected.begin(), s.selected.end());
            }
            bool all_covered = true;
            for_each_node(space.traces[i], [&](const AugExpr& ae) {
                if (const auto* d = std::get_if<DistNode>(&ae.node))
                    if (!covered.count(d->choice_id)) all_covered = false;
            });
            if (!all_covered) { out.connected = false; return out; }
        }
        out.connected = true;
        return out;
    }

    out.exact = true;
    std::size_t m = strategies.size();
    std::vector<std::vector<std::size_t>> class_of(m);
    for (std::size_t f = 0; f < m; ++f)
        class_of[f] = decompose_by_strategy(strategies[f], space).class_of;

    auto mass = [&](std::uint32_t mask) {
        Rational s = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) s += post.probs[i];
        return s;
    };
    auto saturate = [&](std::uint32_t mask, std::size_t f) {
        std::uint32_t sat = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(mask & (1u << i))) continue;
            for (std::size_t j = 0; j < n; ++j)
                if (class_of[f][j] == class_of[f][i]) sat |= (1u << j);
        }
        return sat;
    };

    std::uint32_t full = (1u << n) - 1;  // n <= 16 in exact mode
    for (std::uint32_t mask = 1; mask <= full; ++mask) {
        if (mass(mask) == 0) continue;
        std::vector<std::uint32_t> sats(m);
        for (std::size_t f = 0; f < m; ++f) sats[f] = saturate(mask, f);
        bool premise = true;
        for (std::size_t f = 0; f < m && premise; ++f)
            for (std::size_t g = 0; g < m && premise; ++g)
                if (mass(sats[f] & ~sats[g]) != 0) premise = false;
        if (!premise) continue;
        bool conclusion = false;
        for (std::size_t f = 0; f < m; ++f)
            if (mass(full & ~sats[f]) == 0) { conclusion = true; break; }
        if (conclusion) continue;
        // Violation: report the witness set and a pair of unsaturated
        // strategies, and whether the set was aligned with every partition.
        out.connected = false;
        for (std::size_t i = 0; i < n; ++i)
            if (mask & (1u << i)) out.witness_set.push_back(i);
        std::vector<std::size_t> unsat;
        for (std::size_t f = 0; f < m; ++f)
            if (mass(full & ~sats[f]) != 0) unsat.push_back(f);
        out.witness_f = unsat.empty() ? 0 : unsat.front();
        out.witness_g = unsat.size() > 1 ? unsat[1] : out.witness_f;
        out.witness_class_aligned = true;
        for (std::size_t f = 0; f < m; ++f)
            if (sats[f] != mask) out.witness_class_aligned = false;
        return out;
    }
    out.connected = true;
    return out;
}

// ---------------------------------------------------------------------------
// Markov-chain checks on explicit matrices.

// L1 residual of pi^T K - pi^T; exactly 0 for stationary kernels.
inline Rational check_stationary(const KernelMatrix& K, const Posterior& post) {
    std::size_t n = K.size();
    Rational residual = 0;
    for (std::size_t j = 0; j < n; ++j) {
        Rational out = 0;
        for (std::size_t i = 0; i < n; ++i) out += post.probs[i] * K.rows[i][j];
        Rational diff = out - post.probs[j];
        if (diff < 0) diff = -diff;
        residual += diff;
    }
    return residual;
}

namespace detail {

inline std::vector<std::vector<bool>> reachability(const KernelMatrix& K) {
    std::size_t n = K.size();
    std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<std::size_t> stack;
        auto push = [&](std::size_t v) {
            if (!reach[s][v]) {
                reach[s][v] = true;
                stack.push_back(v);
            }
        };
        for (std::size_t j = 0; j < n; ++j)
            if (K.rows[s][j] > 0) push(j);
        while (!stack.empty()) {
            std::size_t u = stack.back();
            stack.pop_back();
            for (std::size_t v = 0; v < n; ++v)
                if (K.rows[u][v] > 0) push(v);
        }
    }
    return reach;
}

}  // namespace detail

// pi-irreducibility on a finite space: every positive-posterior state reaches
// every positive-posterior state in >= 1 steps (paths may pass through null
// states).
inline bool check_irreducible(const KernelMatrix& K, const Posterior& post) {
    auto reach = detail::reachability(K);
    std::size_t n = K.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (post.probs[i] == 0) continue;
        for (std::size_t j = 0; j < n; ++j)
            if (post.probs[j] > 0 && !reach[i][j]) return false;
    }
    return true;
}

// Aperiodicity via the gcd of cycle lengths on the positive-support states; a
// positive diagonal entry suffices.
inline bool check_aperiodic(const KernelMatrix& K, const Posterior& post) {
    std::size_t n = K.size();
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < n; ++i)
        if (post.probs[i] > 0) support.push_back(i);
    if (support.empty()) return false;
    for (std::size_t i : support)
        if (K.rows[i][i] > 0) return true;
    // BFS levels from one support state over support-restricted edges; the
    // period is gcd over edges of (level[u] + 1 - level[v]).
    std::vector<long long> level(n, -1);
    std::vector<std::size_t> queue{support.front()};
    level[support.front()] = 0;
    std::size_t head = 0;
    std::vector<bool> in_support(n, false);
    for (std::size_t i : support) in_support[i] = true;
    while (head < queue.size()) {
        std::size_t u = queue[head++];
        for (std::size_t v = 0; v < n; ++v) {
            if (!in_support[v] || K.rows[u][v] == 0) continue;
            if (level[v] < 0) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    long long g = 0;
    for (std::size_t u : support) {
        if (level[u] < 0) continue;
        for (std::size_t v : support) {
            if (level[v] < 0 || K.rows[u][v] == 0) continue;
            g = std::gcd(g, level[u] + 1 - level[v]);
        }
    }
    return g == 1;
}

inline bool check_aperiodic(const KernelMatrix& K) {
    Posterior uniform;
    uniform.probs.assign(K.size(), Rational(1, static_cast<int>(K.size())));
    return check_aperiodic(K, uniform);
}

// ---------------------------------------------------------------------------
// Matrix construction for metaprograms. A blackbox EnumGibbs row is the
// posterior itself; PriorMH rows follow from proposal probabilities and
// acceptance ratios; a Mix is built per clause by partitioning the space into
// the strategy's classes, recursing on the subprogram space, and pulling the
// sub-matrix back through the extraction bijection.

inline KernelMatrix build_kernel_matrix(const Metaprogram& mp, const TraceSpace& space,
                                        const Registry& registry);

namespace detail {

inline KernelMatrix enum_gibbs_matrix(const TraceSpace& space) {
    Posterior post = posterior(space);
    KernelMatrix K;
    K.rows.assign(space.size(), post.probs);
    return K;
}

inline KernelMatrix prior_mh_matrix(const TraceSpace& space, const Registry& registry) {
    std::size_t n = space.size();
    std::vector<Rational> proposal(n), weight(n);
    for (std::size_t i = 0; i < n; ++i) {
        proposal[i] = prior_density(space.traces[i], registry);
        weight[i] = observe_weight(space.traces[i], registry);
    }
    KernelMatrix K;
    K.rows.assign(n, std::vector<Rational>(n, Rational(0)));
    for (std::size_t i = 0; i < n; ++i) {
        Rational stay = proposal[i];  // self-proposals always accept
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            Rational accept;
            if (weight[i] == 0) {
                accept = 1;  // zero-weight states always accept the proposal
            } else {
                accept = weight[j] / weight[i];
                if (accept > 1) accept = 1;
            }
            K.rows[i][j] = proposal[j] * accept;
            stay += proposal[j] * (Rational(1) - accept);
        }
        K.rows[i][i] = stay;
    }
    return K;
}

struct ClassEmbedding {
    Program subprogram;
    std::shared_ptr<const TraceSpace> subspace;
    std::vector<std::size_t> sub_index_of_member;  // parallel to class member list
};

inline ClassEmbedding embed_class(const SelectFn& select_fn, const TraceSpace& space,
                                  const std::vector<std::size_t>& members,
                                  const Registry& registry) {
    ClassEmbedding out;
    std::vector<Trace> extracted;
    extracted.reserve(members.size());
    for (std::size_t idx : members) {
        Subproblem s = select_fn(space.traces[idx]);
        extracted.push_back(extract_trace(space.traces[idx], s).trace);
    }
    out.subprogram = rollback(extracted.front());
    for (std::size_t k = 1; k < extracted.size(); ++k) {
        if (!program_equal(rollback(extracted[k]), out.subprogram))
            throw error(
                "build_kernel_matrix: traces in one equivalence class extract to different "
                "subprograms (strategy is not reversible)");
    }
    out.subspace =
        std::make_shared<TraceSpace>(enumerate_traces(out.subprogram, registry));
    if (out.subspace->size() != members.size())
        throw error("build_kernel_matrix: extraction is not a bijection onto the subprogram "
                    "trace space (" +
                    std::to_string(members.size()) + " class members vs " +
                    std::to_string(out.subspace->size()) + " subtraces)");
    std::set<std::size_t> used;
    for (const auto& ts : extracted) {
        auto pos = out.subspace->find(ts);
        if (!pos) throw error("build_kernel_matrix: extracted subtrace missing from subspace");
        if (!used.insert(*pos).second)
            throw error("build_kernel_matrix: two class members extract to the same subtrace");
        out.sub_index_of_member.push_back(*pos);
    }
    return out;
}

inline KernelMatrix mix_matrix(const std::vector<MixClause>& clauses, const TraceSpace& space,
                               const Registry& registry) {
    std::size_t n = space.size();
    KernelMatrix K;
    K.rows.assign(n, std::vector<Rational>(n, Rational(0)));
    for (const auto& clause : clauses) {
        SelectFn fn = as_select_fn(clause.strategy);
        ClassDecomposition decomp = decompose_by_strategy(fn, space);
        KernelMatrix clause_matrix;
        clause_matrix.rows.assign(n, std::vector<Rational>(n, Rational(0)));
        for (const auto& members : decomp.classes) {
            ClassEmbedding emb = embed_class(fn, space, members, registry);
            bool zero_mass = emb.subspace->total_density() == 0;
            if (zero_mass) {
                // No conditional to target; the clause holds still.
                for (std::size_t member : members) clause_matrix.rows[member][member] = 1;
                continue;
            }
            KernelMatrix sub = build_kernel_matrix(*clause.sub, *emb.subspace, registry);
            for (std::size_t a = 0; a < members.size(); ++a)
                for (std::size_t b = 0; b < members.size(); ++b)
                    clause_matrix.rows[members[a]][members[b]] =
                        sub.rows[emb.sub_index_of_member[a]][emb.sub_index_of_member[b]];
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                K.rows[i][j] += clause.weight * clause_matrix.rows[i][j];
    }
    return K;
}

}  // namespace detail

inline KernelMatrix build_kernel_matrix(const Metaprogram& mp, const TraceSpace& space,
                                        const Registry& registry) {
    KernelMatrix K;
    if (const auto* k = std::get_if<Kernel>(&mp.node)) {
        K = k->kind == Kernel::Kind::EnumGibbs ? detail::enum_gibbs_matrix(space)
                                               : detail::prior_mh_matrix(space, registry);
    } else {
        K = detail::mix_matrix(std::get<std::vector<MixClause>>(mp.node), space, registry);
    }
    if (K.row_sum_error() != 0)
        throw error("build_kernel_matrix: rows do not sum to 1");
    return K;
}

}  // namespace subtrace
