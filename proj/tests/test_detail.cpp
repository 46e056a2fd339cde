#include <catch2/catch_amalgamated.hpp>

#include "mcpflow/mcpflow.hpp"

using namespace mcpflow;

TEST_CASE("sha256 matches known vectors") {
    CHECK(detail::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(detail::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(detail::sha256_hex("The quick brown fox jumps over the lazy dog") ==
          "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
}

TEST_CASE("rng is deterministic and shuffles stably") {
    detail::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> v2 = v1;
    detail::Rng r1(7), r2(7);
    r1.shuffle(v1);
    r2.shuffle(v2);
    CHECK(v1 == v2);
    std::vector<int> sorted = v1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("derive_seed separates labels") {
    CHECK(detail::derive_seed(1, "a") != detail::derive_seed(1, "b"));
    CHECK(detail::derive_seed(1, "a") != detail::derive_seed(2, "a"));
    CHECK(detail::derive_seed(1, "a") == detail::derive_seed(1, "a"));
}

TEST_CASE("rng below is within bound") {
    detail::Rng r(123);
    for (int i = 0; i < 1000; ++i) CHECK(r.below(17) < 17);
}

TEST_CASE("normalize_ws trims and collapses but preserves case") {
    CHECK(detail::normalize_ws("  Hello   World \t\n ok ") == "Hello World ok");
    CHECK(detail::normalize_ws("Same") == "Same");
}

TEST_CASE("extract_json prefers fenced blocks") {
    std::string text = "noise {\"a\": 1} more\n```json\n{\"b\": 2}\n```\n";
    auto j = detail::extract_json(text);
    REQUIRE(j);
    CHECK((*j)["b"] == 2);

    auto j2 = detail::extract_json("leading text {\"x\": [1,2]} trailing");
    REQUIRE(j2);
    CHECK((*j2)["x"][1] == 2);

    CHECK_FALSE(detail::extract_json("no json here"));
}

TEST_CASE("stable_dump orders keys and ends with newline") {
    json j{{"b", 1}, {"a", 2}};
    std::string s = detail::stable_dump(j);
    CHECK(s.find("\"a\"") < s.find("\"b\""));
    CHECK(s.back() == '\n');
}
