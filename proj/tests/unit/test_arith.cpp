#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "clonelab/arith.hpp"

#include "../oracle/gmp_eval.hpp"

using namespace clonelab;

namespace {

void walk_leaves(const Expr& e, const std::function<void(std::int64_t)>& fn) {
    if (e.is_leaf()) {
        fn(e.leaf);
        return;
    }
    walk_leaves(*e.lhs, fn);
    walk_leaves(*e.rhs, fn);
}

} // namespace

TEST_CASE("generation is deterministic per (seed, index)") {
    GenConfig cfg;
    cfg.seed = 7;
    ArithmeticProblem a = generate_problem(cfg, 0);
    ArithmeticProblem b = generate_problem(cfg, 0);
    CHECK(a.rendered == b.rendered);
    CHECK(a.answer == b.answer);
    CHECK(a.seed == b.seed);
    CHECK(a.op_count >= 1);
    CHECK(a.op_count <= 10);

    ArithmeticProblem c = generate_problem(cfg, 1);
    CHECK(a.rendered != c.rendered);

    GenConfig other = cfg;
    other.seed = 8;
    CHECK(generate_problem(other, 0).rendered != a.rendered);
}

TEST_CASE("single add config degenerates to a+b") {
    GenConfig cfg;
    cfg.max_ops = 1;
    cfg.allowed_ops = {Op::Add};
    cfg.seed = 3;
    for (std::uint64_t i = 0; i < 50; ++i) {
        ArithmeticProblem p = generate_problem(cfg, i);
        REQUIRE(p.op_count == 1);
        REQUIRE(p.expr.op == Op::Add);
        REQUIRE(p.expr.lhs->is_leaf());
        REQUIRE(p.expr.rhs->is_leaf());
        REQUIRE(p.expr.lhs->leaf <= 10'000'000);
        REQUIRE(p.expr.rhs->leaf <= 10'000'000);
    }
}

TEST_CASE("generated problems satisfy every invariant") {
    GenConfig cfg;
    cfg.seed = 42;
    for (std::uint64_t i = 0; i < 2000; ++i) {
        ArithmeticProblem p = generate_problem(cfg, i);
        REQUIRE(p.op_count <= 10);
        REQUIRE(p.max_intermediate_magnitude <= 10'000'000'000'000'000ULL);
        walk_leaves(p.expr, [](std::int64_t leaf) {
            REQUIRE(leaf >= 0);
            REQUIRE(leaf <= 10'000'000);
        });
        oracle::GmpResult g = oracle::gmp_eval(p.expr);
        REQUIRE(g.exact); // every division landed exactly
        REQUIRE(g.value.get_str() == std::to_string(p.answer));
    }
}

TEST_CASE("infeasible configs are rejected") {
    GenConfig cfg;
    cfg.operand_max = 100;
    cfg.intermediate_max = 10;
    CHECK_THROWS_AS(generate_problem(cfg, 0), ConfigError);

    GenConfig zero_ops;
    zero_ops.max_ops = 0;
    CHECK_THROWS_AS(generate_problem(zero_ops, 0), ConfigError);
}

TEST_CASE("answer checking normalizes whitespace, commas, and a leading plus") {
    CHECK(check_answer(42, " 42 "));
    CHECK(check_answer(42, "+42"));
    CHECK(check_answer(19'892'428'309'863LL, "19,892,428,309,863"));
    CHECK(check_answer(-7, " -7"));
    CHECK_FALSE(check_answer(42, "41"));
    CHECK_FALSE(check_answer(42, "forty-two"));
    CHECK_FALSE(check_answer(42, ""));
}

TEST_CASE("dataset records carry the answer as a decimal string") {
    GenConfig cfg;
    cfg.seed = 7;
    ArithmeticProblem p = generate_problem(cfg, 5);
    auto j = dataset_record_json(p);
    CHECK(j.at("id").get<std::string>() == "arith-5");
    CHECK(j.at("answer").is_string());
    CHECK(j.at("answer").get<std::string>() == std::to_string(p.answer));
    CHECK(j.at("expression").get<std::string>() == p.rendered);
}
