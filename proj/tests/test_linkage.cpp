#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "spice/data.hpp"
#include "spice/errors.hpp"
#include "spice/rng.hpp"

using namespace spice;

namespace {

Dataset tiny_dataset(int n_persons, int n_items,
                     const std::vector<std::pair<int, int>>& pairs) {
    Dataset d;
    BlockSpec pb;
    pb.block_id = 1;
    pb.side = Side::Person;
    pb.dim_K = 1;
    BlockSpec ib;
    ib.block_id = 2;
    ib.side = Side::Item;
    ib.family = ItemFamily::two_pl();
    ib.dim_K = 2;
    for (int i = 0; i < n_persons; ++i) {
        Unit u;
        u.unit_id = i;
        u.block_id = 1;
        u.latent = Vector::Zero(1);
        u.features = Vector::Ones(1);
        d.persons.push_back(u);
        d.person_ids.push_back("p" + std::to_string(i + 1));
        pb.unit_ids.push_back(i);
    }
    for (int j = 0; j < n_items; ++j) {
        Unit u;
        u.unit_id = j;
        u.block_id = 2;
        u.latent = Vector::Zero(2);
        u.features = Vector::Ones(1);
        d.items.push_back(u);
        d.item_ids.push_back("i" + std::to_string(j + 1));
        ib.unit_ids.push_back(j);
    }
    d.person_blocks.push_back(pb);
    d.item_blocks.push_back(ib);
    int n = 0;
    for (auto [p, i] : pairs) {
        ResponseRecord r;
        r.obs_index = n++;
        r.person_index = p;
        r.item_index = i;
        r.value = 1;
        d.responses.push_back(r);
    }
    return d;
}

}  // namespace

TEST_CASE("direct construction of both views") {
    // 2 persons x 2 items, responses (p1,i1),(p1,i2),(p2,i2)
    Dataset d = tiny_dataset(2, 2, {{0, 0}, {0, 1}, {1, 1}});
    const LinkageIndex idx = build_linkage(d.responses, d);
    REQUIRE(idx.of_person(0).size() == 2);
    CHECK(idx.of_person(0)[0].obs == 0);
    CHECK(idx.of_person(0)[1].obs == 1);
    REQUIRE(idx.of_item(1).size() == 2);
    CHECK(idx.of_item(1)[0].obs == 1);
    CHECK(idx.of_item(1)[1].obs == 2);
    CHECK(idx.of_item(1)[0].partner == 0);
    CHECK(idx.of_item(1)[1].partner == 1);
    CHECK(idx.of_item(1)[0].partner_block == 1);
    CHECK(idx.of_person(0)[0].partner_block == 2);
}

TEST_CASE("conservation: both views sum to N") {
    Dataset d = tiny_dataset(5, 4, {{0, 0}, {1, 1}, {2, 2}, {3, 3}, {4, 0}, {0, 2}});
    const LinkageIndex idx = build_linkage(d.responses, d);
    size_t total_p = 0, total_i = 0;
    for (int i = 0; i < 5; ++i) total_p += idx.of_person(i).size();
    for (int j = 0; j < 4; ++j) total_i += idx.of_item(j).size();
    CHECK(total_p == d.responses.size());
    CHECK(total_i == d.responses.size());
}

TEST_CASE("property: multiset round trip from either view on random sparse data") {
    RngStream rng(77, 0, 0, 0, StreamPurpose::Test);
    const int np = 120, ni = 80, n = 10000;
    std::vector<std::pair<int, int>> pairs;
    for (int k = 0; k < n; ++k) {
        pairs.emplace_back(static_cast<int>(rng.uniform_index(np)),
                           static_cast<int>(rng.uniform_index(ni)));
    }
    Dataset d = tiny_dataset(np, ni, pairs);
    const LinkageIndex idx = build_linkage(d.responses, d);

    std::map<std::pair<int, int>, int> original, via_person, via_item;
    for (const auto& r : d.responses) original[{r.person_index, r.item_index}]++;
    for (int i = 0; i < np; ++i) {
        for (const auto& e : idx.of_person(i)) via_person[{i, e.partner}]++;
    }
    for (int j = 0; j < ni; ++j) {
        for (const auto& e : idx.of_item(j)) via_item[{e.partner, j}]++;
    }
    CHECK(via_person == original);
    CHECK(via_item == original);

    // every response appears exactly once per view
    std::vector<int> seen(n, 0);
    for (int i = 0; i < np; ++i) {
        for (const auto& e : idx.of_person(i)) seen[e.obs]++;
    }
    for (int s : seen) CHECK(s == 1);
}

TEST_CASE("dangling indices are reported with rows; empty set rejected") {
    Dataset d = tiny_dataset(2, 2, {{0, 0}, {1, 5}, {3, 1}});
    CHECK_THROWS_WITH_AS(build_linkage(d.responses, d),
                         doctest::Contains("rows: 1 2"), ValidationError);
    Dataset empty = tiny_dataset(2, 2, {});
    CHECK_THROWS_AS(build_linkage(empty.responses, empty), ValidationError);
}

TEST_CASE("validate_dataset rejects inconsistent structures") {
    Dataset d = tiny_dataset(2, 2, {{0, 0}});
    CHECK_NOTHROW(validate_dataset(d));

    Dataset bad = d;
    bad.persons[0].latent = Vector::Zero(3);
    CHECK_THROWS_AS(validate_dataset(bad), ValidationError);

    Dataset bad2 = d;
    bad2.responses[0].value = 7;  // not a 2PL category
    CHECK_THROWS_AS(validate_dataset(bad2), ValidationError);

    Dataset bad3 = d;
    bad3.item_blocks[0].dim_K = 1;  // family has 2 parameters
    CHECK_THROWS_AS(validate_dataset(bad3), ValidationError);
}
