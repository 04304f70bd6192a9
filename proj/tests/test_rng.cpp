#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "spice/rng.hpp"

using namespace spice;

TEST_CASE("streams are reproducible and address-separated") {
    RngStream a(42, 7, 3, 1, StreamPurpose::Unit);
    RngStream b(42, 7, 3, 1, StreamPurpose::Unit);
    for (int i = 0; i < 32; ++i) CHECK(a.next_u32() == b.next_u32());

    RngStream c(42, 7, 3, 1, StreamPurpose::RegB);
    RngStream d(42, 8, 3, 1, StreamPurpose::Unit);
    RngStream e(43, 7, 3, 1, StreamPurpose::Unit);
    RngStream f(42, 7, 4, 1, StreamPurpose::Unit);
    RngStream g(42, 7, 3, 2, StreamPurpose::Unit);
    RngStream ref(42, 7, 3, 1, StreamPurpose::Unit);
    const std::uint32_t first = ref.next_u32();
    CHECK(c.next_u32() != first);
    CHECK(d.next_u32() != first);
    CHECK(e.next_u32() != first);
    CHECK(f.next_u32() != first);
    CHECK(g.next_u32() != first);
}

TEST_CASE("uniform stays strictly inside (0,1) and looks uniform") {
    RngStream rng(1, 0, 0, 0, StreamPurpose::Test);
    std::vector<double> xs;
    for (int i = 0; i < 20000; ++i) {
        const double u = rng.uniform();
        REQUIRE(u > 0.0);
        REQUIRE(u < 1.0);
        xs.push_back(u);
    }
    const double p = testutil::ks_test(xs, [](double x) { return x; });
    CHECK(p > 0.01);
}

TEST_CASE("inverse normal cdf matches erfc-based cdf") {
    CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(inverse_normal_cdf(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-10));
    CHECK(inverse_normal_cdf(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-10));
    RngStream rng(7, 0, 0, 0, StreamPurpose::Test);
    for (int i = 0; i < 2000; ++i) {
        const double p = rng.uniform();
        const double x = inverse_normal_cdf(p);
        CHECK(normal_cdf(x) == doctest::Approx(p).epsilon(1e-9));
    }
    CHECK_THROWS_AS(inverse_normal_cdf(0.0), std::domain_error);
    CHECK_THROWS_AS(inverse_normal_cdf(1.0), std::domain_error);
}

TEST_CASE("normal draws pass a KS test") {
    RngStream rng(3, 1, 2, 0, StreamPurpose::Test);
    std::vector<double> xs;
    for (int i = 0; i < 20000; ++i) xs.push_back(rng.normal());
    const double p = testutil::ks_test(xs, [](double x) { return normal_cdf(x); });
    CHECK(p > 0.01);
}

TEST_CASE("uniform_index covers the range without bias artifacts") {
    RngStream rng(11, 0, 0, 0, StreamPurpose::Test);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
    for (int c : counts) {
        CHECK(c > 9000);
        CHECK(c < 11000);
    }
}

TEST_CASE("gamma and beta sampling have the right first moments") {
    RngStream rng(5, 0, 0, 0, StreamPurpose::Test);
    double sum = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) sum += rng.gamma(2.5);
    CHECK(sum / n == doctest::Approx(2.5).epsilon(0.03));

    double bsum = 0.0;
    for (int i = 0; i < n; ++i) bsum += rng.beta(2.0, 3.0);
    CHECK(bsum / n == doctest::Approx(0.4).epsilon(0.03));
}
