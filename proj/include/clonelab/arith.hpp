#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "clonelab/errors.hpp"
#include "clonelab/expr.hpp"
#include "clonelab/rng.hpp"
#include "clonelab/text.hpp"

#include "json.hpp"

namespace clonelab {

struct GenConfig {
    int max_ops = 10;
    std::int64_t operand_max = 10'000'000;     // leaf ceiling, 10^7
    std::int64_t intermediate_max = kValueBound;
    std::vector<Op> allowed_ops = {Op::Add, Op::Sub, Op::Mul, Op::Div};
    std::uint64_t seed = 0;

    void validate() const {
        if (max_ops < 1) throw ConfigError("max_ops must be >= 1");
        if (operand_max < 1) throw ConfigError("operand_max must be >= 1");
        if (operand_max > intermediate_max) throw ConfigError("operand_max exceeds intermediate_max");
        if (intermediate_max > kValueBound) throw ConfigError("intermediate_max exceeds 10^16");
        if (allowed_ops.empty()) throw ConfigError("allowed_ops must be non-empty");
    }
};

struct ArithmeticProblem {
    std::string id;
    std::uint64_t seed = 0; // per-problem stream seed
    Expr expr;
    std::string rendered;
    std::int64_t answer = 0;
    int op_count = 0;
    std::uint64_t max_intermediate_magnitude = 0;
};

namespace detail {

inline constexpr int kResampleLimit = 1000;

struct GenNode {
    Expr expr;
    std::int64_t value = 0;
};

inline GenNode gen_subtree(const GenConfig& cfg, int ops, Rng& rng);

inline GenNode gen_leaf(const GenConfig& cfg, Rng& rng) {
    std::int64_t v = rng.log_uniform(cfg.operand_max);
    return {Expr::make_leaf(v), v};
}

// Division is exact by construction: the divisor subtree is sampled first,
// then the dividend leaf is a sampled multiple of it.
inline GenNode gen_div(const GenConfig& cfg, int ops, Rng& rng) {
    for (int attempt = 0; attempt < kResampleLimit; ++attempt) {
        GenNode divisor = gen_subtree(cfg, ops - 1, rng);
        if (divisor.value == 0) continue;
        std::int64_t mag = std::abs(divisor.value);
        if (mag > cfg.operand_max) continue;
        std::int64_t q_max = cfg.operand_max / mag;
        if (q_max < 1) continue;
        std::int64_t q = rng.log_uniform(q_max);
        std::int64_t dividend = q * mag;
        std::int64_t value = dividend / divisor.value;
        Expr e = Expr::make(Op::Div, Expr::make_leaf(dividend), std::move(divisor.expr));
        return {std::move(e), value};
    }
    throw ConfigError("division resampling exhausted; config infeasible");
}

inline GenNode gen_subtree(const GenConfig& cfg, int ops, Rng& rng) {
    if (ops == 0) return gen_leaf(cfg, rng);

    Op op = cfg.allowed_ops[rng.below(cfg.allowed_ops.size())];
    if (op == Op::Div) return gen_div(cfg, ops, rng);

    int left_ops = static_cast<int>(rng.below(static_cast<std::uint64_t>(ops)));
    int right_ops = ops - 1 - left_ops;
    for (int attempt = 0; attempt < kResampleLimit; ++attempt) {
        GenNode l = gen_subtree(cfg, left_ops, rng);
        GenNode r = gen_subtree(cfg, right_ops, rng);
        __int128 v = 0;
        switch (op) {
            case Op::Add: v = static_cast<__int128>(l.value) + r.value; break;
            case Op::Sub: v = static_cast<__int128>(l.value) - r.value; break;
            case Op::Mul: v = static_cast<__int128>(l.value) * r.value; break;
            case Op::Div: break; // handled above
        }
        if (v > static_cast<__int128>(cfg.intermediate_max) || v < -static_cast<__int128>(cfg.intermediate_max)) {
            continue;
        }
        Expr e = Expr::make(op, std::move(l.expr), std::move(r.expr));
        return {std::move(e), static_cast<std::int64_t>(v)};
    }
    throw ConfigError("subtree resampling exhausted; config infeasible");
}

} // namespace detail

inline ArithmeticProblem generate_problem(const GenConfig& cfg, std::uint64_t index) {
    cfg.validate();
    const std::uint64_t stream_seed = mix_seed({cfg.seed, index});
    Rng rng(stream_seed);

    const int target_ops = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.max_ops)));
    detail::GenNode node = detail::gen_subtree(cfg, target_ops, rng);

    ArithmeticProblem p;
    p.id = "arith-" + std::to_string(index);
    p.seed = stream_seed;
    p.rendered = render_expr(node.expr);
    p.op_count = node.expr.op_count();
    p.answer = evaluate_expr(node.expr, &p.max_intermediate_magnitude);
    p.expr = std::move(node.expr);
    return p;
}

// Normalization applied to a candidate final answer before comparison:
// drop whitespace and thousands-separator commas, strip one leading '+'.
inline std::string normalize_answer(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c)) || c == ',') continue;
        out.push_back(c);
    }
    if (!out.empty() && out.front() == '+') out.erase(out.begin());
    return out;
}

inline bool check_answer(std::int64_t answer, std::string_view answer_text) {
    return normalize_answer(answer_text) == std::to_string(answer);
}

inline bool check_answer(const ArithmeticProblem& p, std::string_view answer_text) {
    return check_answer(p.answer, answer_text);
}

// One problem per line; the answer travels as a decimal string so consumers
// never push 10^16 magnitudes through doubles.
struct DatasetRecord {
    std::string id;
    std::uint64_t seed = 0;
    std::string expression;
    std::string answer;
};

inline nlohmann::ordered_json dataset_record_json(const ArithmeticProblem& p) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["seed"] = p.seed;
    j["expression"] = p.rendered;
    j["answer"] = std::to_string(p.answer);
    return j;
}

inline std::vector<DatasetRecord> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset: " + path);
    std::vector<DatasetRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        DatasetRecord r;
        r.id = j.at("id").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.expression = j.at("expression").get<std::string>();
        r.answer = j.at("answer").get<std::string>();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace clonelab
