#pragma once

// Independent arbitrary-precision evaluator used only by tests. It shares no
// arithmetic with the library path: everything runs through GMP integers,
// with the same exactness rules (division must leave no remainder).

#include <optional>
#include <string>

#include <gmpxx.h>

#include "clonelab/expr.hpp"

namespace oracle {

struct GmpResult {
    mpz_class value;
    mpz_class peak_magnitude;
    bool exact = true;
};

inline GmpResult gmp_eval(const clonelab::Expr& e) {
    if (e.is_leaf()) {
        GmpResult r;
        r.value = mpz_class(std::to_string(e.leaf));
        r.peak_magnitude = abs(r.value);
        return r;
    }
    GmpResult l = gmp_eval(*e.lhs);
    GmpResult r = gmp_eval(*e.rhs);
    GmpResult out;
    out.exact = l.exact && r.exact;
    switch (*e.op) {
        case clonelab::Op::Add: out.value = l.value + r.value; break;
        case clonelab::Op::Sub: out.value = l.value - r.value; break;
        case clonelab::Op::Mul: out.value = l.value * r.value; break;
        case clonelab::Op::Div: {
            if (r.value == 0) {
                out.exact = false;
                out.value = 0;
                break;
            }
            mpz_class q, rem;
            mpz_tdiv_qr(q.get_mpz_t(), rem.get_mpz_t(), l.value.get_mpz_t(), r.value.get_mpz_t());
            if (rem != 0) out.exact = false;
            out.value = q;
            break;
        }
    }
    out.peak_magnitude = std::max({l.peak_magnitude, r.peak_magnitude, mpz_class(abs(out.value))});
    return out;
}

inline std::string gmp_eval_string(const clonelab::Expr& e) {
    return gmp_eval(e).value.get_str();
}

} // namespace oracle
