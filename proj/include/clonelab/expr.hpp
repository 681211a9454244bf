#pragma once

#include <cstdint>
#include <cstdlib>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace clonelab {

enum class Op : std::uint8_t { Add, Sub, Mul, Div };

// Magnitude ceiling for every intermediate and final value.
inline constexpr std::int64_t kValueBound = 10'000'000'000'000'000LL; // 10^16

struct EvalError : std::runtime_error {
    enum class Kind { InexactDivision, DivisionByZero, BoundViolation };
    Kind kind;
    EvalError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary expression tree over non-negative integer leaves. Leaf iff !op.
struct Expr {
    std::optional<Op> op;
    std::int64_t leaf = 0;
    std::unique_ptr<Expr> lhs, rhs;

    bool is_leaf() const { return !op.has_value(); }

    static Expr make_leaf(std::int64_t v) {
        Expr e;
        e.leaf = v;
        return e;
    }

    static Expr make(Op o, Expr l, Expr r) {
        Expr e;
        e.op = o;
        e.lhs = std::make_unique<Expr>(std::move(l));
        e.rhs = std::make_unique<Expr>(std::move(r));
        return e;
    }

    Expr copy() const {
        Expr e;
        e.op = op;
        e.leaf = leaf;
        if (lhs) e.lhs = std::make_unique<Expr>(lhs->copy());
        if (rhs) e.rhs = std::make_unique<Expr>(rhs->copy());
        return e;
    }

    int op_count() const {
        if (is_leaf()) return 0;
        return 1 + lhs->op_count() + rhs->op_count();
    }

    friend bool operator==(const Expr& a, const Expr& b) {
        if (a.op != b.op) return false;
        if (a.is_leaf()) return a.leaf == b.leaf;
        return *a.lhs == *b.lhs && *a.rhs == *b.rhs;
    }
};

namespace detail {

inline std::int64_t check_bound(__int128 v, std::uint64_t& peak) {
    if (v > static_cast<__int128>(kValueBound) || v < -static_cast<__int128>(kValueBound)) {
        throw EvalError(EvalError::Kind::BoundViolation, "intermediate value exceeds 10^16");
    }
    auto r = static_cast<std::int64_t>(v);
    std::uint64_t mag = r < 0 ? static_cast<std::uint64_t>(-(r + 1)) + 1 : static_cast<std::uint64_t>(r);
    if (mag > peak) peak = mag;
    return r;
}

inline std::int64_t evaluate_impl(const Expr& e, std::uint64_t& peak) {
    if (e.is_leaf()) return check_bound(e.leaf, peak);
    const std::int64_t l = evaluate_impl(*e.lhs, peak);
    const std::int64_t r = evaluate_impl(*e.rhs, peak);
    __int128 v = 0;
    switch (*e.op) {
        case Op::Add: v = static_cast<__int128>(l) + r; break;
        case Op::Sub: v = static_cast<__int128>(l) - r; break;
        case Op::Mul: v = static_cast<__int128>(l) * r; break;
        case Op::Div:
            if (r == 0) throw EvalError(EvalError::Kind::DivisionByZero, "division by zero");
            if (l % r != 0) throw EvalError(EvalError::Kind::InexactDivision, "inexact division");
            v = l / r;
            break;
    }
    return check_bound(v, peak);
}

} // namespace detail

// Exact integer evaluation. Every node is checked against kValueBound; all
// arithmetic goes through 128-bit intermediates so nothing wraps silently.
inline std::int64_t evaluate_expr(const Expr& e, std::uint64_t* max_magnitude = nullptr) {
    std::uint64_t peak = 0;
    std::int64_t v = detail::evaluate_impl(e, peak);
    if (max_magnitude) *max_magnitude = peak;
    return v;
}

// Rendering uses the conventional signs: + − × ÷ (the latter three are the
// Unicode operators). Every binary node is parenthesized.
inline void render_expr_into(const Expr& e, std::string& out) {
    if (e.is_leaf()) {
        out += std::to_string(e.leaf);
        return;
    }
    out += '(';
    render_expr_into(*e.lhs, out);
    switch (*e.op) {
        case Op::Add: out += "+"; break;
        case Op::Sub: out += "−"; break;
        case Op::Mul: out += "×"; break;
        case Op::Div: out += "÷"; break;
    }
    render_expr_into(*e.rhs, out);
    out += ')';
}

inline std::string render_expr(const Expr& e) {
    std::string out;
    render_expr_into(e, out);
    return out;
}

namespace detail {

// Recursive-descent parser with the usual precedence, so it accepts both the
// fully parenthesized rendered form and free-form infix. ASCII operator
// aliases (- * /) are accepted alongside the Unicode signs.
class ExprParser {
public:
    explicit ExprParser(std::string_view s) : s_(s) {}

    Expr parse() {
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != s_.size()) throw ParseError("trailing input at byte " + std::to_string(pos_));
        return e;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) ++pos_;
    }

    bool try_consume(std::string_view tok) {
        if (s_.substr(pos_, tok.size()) == tok) {
            pos_ += tok.size();
            return true;
        }
        return false;
    }

    std::optional<Op> try_additive() {
        skip_ws();
        if (try_consume("+")) return Op::Add;
        if (try_consume("−") || try_consume("-")) return Op::Sub;
        return std::nullopt;
    }

    std::optional<Op> try_multiplicative() {
        skip_ws();
        if (try_consume("×") || try_consume("*")) return Op::Mul;
        if (try_consume("÷") || try_consume("/")) return Op::Div;
        return std::nullopt;
    }

    Expr parse_sum() {
        Expr e = parse_term();
        while (auto op = try_additive()) e = Expr::make(*op, std::move(e), parse_term());
        return e;
    }

    Expr parse_term() {
        Expr e = parse_factor();
        while (auto op = try_multiplicative()) e = Expr::make(*op, std::move(e), parse_factor());
        return e;
    }

    Expr parse_factor() {
        skip_ws();
        if (pos_ >= s_.size()) throw ParseError("unexpected end of expression");
        if (try_consume("(")) {
            Expr e = parse_sum();
            skip_ws();
            if (!try_consume(")")) throw ParseError("missing ')' at byte " + std::to_string(pos_));
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(s_[pos_]))) return parse_number();
        throw ParseError("unexpected byte at " + std::to_string(pos_));
    }

    Expr parse_number() {
        std::int64_t v = 0;
        std::size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            int d = s_[pos_] - '0';
            if (v > (INT64_MAX - d) / 10) throw ParseError("integer literal too large at byte " + std::to_string(start));
            v = v * 10 + d;
            ++pos_;
        }
        return Expr::make_leaf(v);
    }
};

} // namespace detail

inline Expr parse_expr(std::string_view s) {
    return detail::ExprParser(s).parse();
}

} // namespace clonelab
