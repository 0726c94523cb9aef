#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <stdexcept>
#include <string>

namespace subtrace {

// Exact arithmetic everywhere the semantics demand it. Floats appear only in
// chain statistics and report output.
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string rational_to_string(const Rational& r) {
    if (denominator(r) == 1) return numerator(r).str();
    return numerator(r).str() + "/" + denominator(r).str();
}

inline double rational_to_double(const Rational& r) {
    return static_cast<double>(r);
}

// Accepts "27/100", "-3", "0". Throws subtrace::error on anything else.
inline Rational parse_rational(const std::string& text) {
    auto bad = [&] { throw error("invalid rational literal: '" + text + "'"); };
    if (text.empty()) bad();
    auto slash = text.find('/');
    try {
        if (slash == std::string::npos) return Rational(BigInt(text));
        BigInt num(text.substr(0, slash));
        BigInt den(text.substr(slash + 1));
        if (den == 0) bad();
        return Rational(num, den);
    } catch (const std::runtime_error&) {
        bad();
    }
    return Rational();  // unreachable
}

inline bool looks_like_rational(const std::string& text) {
    if (text.empty()) return false;
    std::size_t i = (text[0] == '-' || text[0] == '+') ? 1 : 0;
    if (i >= text.size()) return false;
    bool seen_slash = false;
    bool digit_since_slash = false;
    for (; i < text.size(); ++i) {
        char c = text[i];
        if (c == '/') {
            if (seen_slash || !digit_since_slash) return false;
            seen_slash = true;
            digit_since_slash = false;
        } else if (c >= '0' && c <= '9') {
            digit_since_slash = true;
        } else {
            return false;
        }
    }
    return digit_since_slash;
}

}  // namespace subtrace
