#pragma once

#include "subtrace/executor.hpp"
#include "subtrace/transform.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace subtrace {

inline constexpr std::size_t kDefaultEnumerationCap = 4096;

// Exhaustive trace space of a finite-support program: one canonical
// representative per id-equivalence class with its exact unnormalized
// density. Keys are canonical serializations, so lookups are exact.
struct TraceSpace {
    std::vector<Trace> traces;
    std::vector<Rational> densities;
    std::map<std::string, std::size_t> index;

    std::optional<std::size_t> find(const Trace& t) const {
        auto it = index.find(canonical_string(t));
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
    std::size_t size() const { return traces.size(); }
    Rational total_density() const {
        Rational sum = 0;
        for (const auto& d : densities) sum += d;
        return sum;
    }
};

// Depth-first exploration of every stochastic choice's outcomes. Agrees with
// execute's support: every executed trace is id-equivalent to some entry.
inline TraceSpace enumerate_traces(const Program& p, const Registry& registry,
                                   std::size_t cap = kDefaultEnumerationCap) {
    TraceSpace space;
    std::vector<std::pair<std::size_t, std::size_t>> trail;  // (chosen index, support size)
    while (true) {
        std::size_t pos = 0;
        OutcomeOracle oracle = [&](const std::string&, const Value&,
                                   const std::vector<ExprPtr>& support) {
            if (pos < trail.size()) {
                if (trail[pos].second != support.size())
                    throw error("enumeration: support size changed on replay");
                return trail[pos++].first;
            }
            trail.emplace_back(0, support.size());
            ++pos;
            return std::size_t{0};
        };
        Trace t = execute(p, registry, oracle);
        if (space.traces.size() >= cap) throw error("enumeration cap exceeded");
        std::string key = canonical_string(t);
        if (space.index.count(key)) throw error("enumeration: duplicate canonical trace");
        space.index.emplace(std::move(key), space.traces.size());
        space.densities.push_back(density(t, registry).value);
        space.traces.push_back(std::move(t));
        // Advance the odometer.
        while (!trail.empty()) {
            if (++trail.back().first < trail.back().second) break;
            trail.pop_back();
        }
        if (trail.empty()) break;
    }
    return space;
}

struct Posterior {
    std::vector<Rational> probs;  // sums to exactly 1
};

inline Posterior posterior(const TraceSpace& space) {
    Rational total = space.total_density();
    if (total == 0) throw error("posterior: all traces have zero density");
    Posterior post;
    post.probs.reserve(space.size());
    for (const auto& d : space.densities) post.probs.push_back(d / total);
    return post;
}

// Histogram over canonical trace keys, as produced by chains or repeated
// execution.
using TraceHistogram = std::map<std::string, std::uint64_t>;

inline void record(TraceHistogram& hist, const Trace& t) {
    ++hist[canonical_string(t)];
}

// Finite-space total variation distance (1/2) * sum |emp_i - pi_i|. A
// histogram key outside the space indicates executor/oracle disagreement and
// is a hard error.
inline double tv_distance(const TraceHistogram& hist, const TraceSpace& space,
                          const Posterior& post) {
    std::uint64_t total = 0;
    for (const auto& [k, n] : hist) total += n;
    if (total == 0) throw error("tv_distance: empty histogram");
    std::vector<double> emp(space.size(), 0.0);
    for (const auto& [k, n] : hist) {
        auto it = space.index.find(k);
        if (it == space.index.end())
            throw error("tv_distance: histogram trace not in enumerated space");
        emp[it->second] = static_cast<double>(n) / static_cast<double>(total);
    }
    double tv = 0;
    for (std::size_t i = 0; i < space.size(); ++i)
        tv += std::abs(emp[i] - rational_to_double(post.probs[i]));
    return tv / 2;
}

}  // namespace subtrace
