#include "hdae/editing.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

using namespace hdae;
using hdae::test::TempDir;

namespace {

AttributeDirection make_dir(std::vector<double> n, int64_t levels, int64_t dim) {
    AttributeDirection d;
    d.name = "toy";
    d.n = std::move(n);
    d.levels = levels;
    d.dim = dim;
    d.n_hat = normalize_direction(d.n);
    return d;
}

// Two Gaussian clusters separated along the first coordinates of level 0.
struct Toy {
    HierarchicalCode codes;
    std::vector<int> labels;
};

Toy separable_toy(int64_t n, uint64_t seed, double gap = 6.0) {
    auto gen = at::detail::createCPUGenerator(seed);
    auto x = torch::randn({n, 2, 3}, gen, torch::kFloat64);
    std::vector<int> labels;
    for (int64_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        labels.push_back(y);
        x[i][0][0] += y ? gap / 2 : -gap / 2;
    }
    return {HierarchicalCode(x), labels};
}

} // namespace

TEST(NormalizeDirection, Examples) {
    EXPECT_EQ(normalize_direction(std::vector<double>{0, 2, -4}), (std::vector<double>{0, 0.5, 1.0}));
    EXPECT_EQ(normalize_direction(std::vector<double>{3, -3}), (std::vector<double>{0, 0}));
    EXPECT_THROW(normalize_direction(std::vector<double>{}), std::invalid_argument);
}

TEST(NormalizeDirection, MatchesScalarOracle) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> n(37);
        for (auto& v : n) v = nd(rng);
        double lo = 1e300, hi = 0;
        for (double v : n) {
            lo = std::min(lo, std::fabs(v));
            hi = std::max(hi, std::fabs(v));
        }
        auto got = normalize_direction(n);
        for (size_t i = 0; i < n.size(); ++i) {
            EXPECT_NEAR(got[i], (std::fabs(n[i]) - lo) / (hi - lo), 1e-9);
            EXPECT_GE(got[i], 0.0);
            EXPECT_LE(got[i], 1.0);
        }
    }
}

TEST(TruncateDirection, Examples) {
    auto d = make_dir({0.5, -3, 1}, 1, 3);
    EXPECT_EQ(truncate_direction(d, 1).n_prime, (std::vector<double>{0, -3, 0}));
    EXPECT_EQ(truncate_direction(d, 1).support, (std::vector<int64_t>{1}));
    EXPECT_EQ(truncate_direction(d, 3).n_prime, d.n);
    EXPECT_EQ(truncate_direction(d, 0).n_prime, (std::vector<double>{0, 0, 0}));
    EXPECT_THROW(truncate_direction(d, 4), std::invalid_argument);
    EXPECT_THROW(truncate_direction(d, -1), std::invalid_argument);
}

TEST(TruncateDirection, TiesBreakByAscendingIndex) {
    auto d = make_dir({1, -2, 2, 2}, 1, 4);
    EXPECT_EQ(truncate_direction(d, 2).support, (std::vector<int64_t>{1, 2}));
}

TEST(TruncateDirection, NestingAndScaleInvariance) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> n(24);
        for (auto& v : n) v = nd(rng);
        auto d = make_dir(n, 4, 6);
        auto scaled = n;
        for (auto& v : scaled) v *= -3.5;
        auto ds = make_dir(scaled, 4, 6);
        std::vector<int64_t> prev;
        for (int64_t k = 0; k <= 24; ++k) {
            auto s = truncate_direction(d, k).support;
            EXPECT_EQ(static_cast<int64_t>(s.size()), k);
            EXPECT_TRUE(std::includes(s.begin(), s.end(), prev.begin(), prev.end()));
            EXPECT_EQ(truncate_direction(ds, k).support, s);
            prev = s;
        }
    }
}

TEST(Manipulate, IdentityAndInverse) {
    auto d = make_dir({1, 0, 2, 0, -1, 3}, 2, 3);
    auto code = HierarchicalCode(torch::randn({2, 2, 3}));
    auto t = truncate_direction(d, 6);
    EXPECT_TRUE(torch::equal(manipulate(code, t, 0.0).tensor(), code.tensor()));
    EXPECT_TRUE(torch::equal(manipulate(code, truncate_direction(d, 0), 5.0).tensor(), code.tensor()));
    auto back = manipulate(manipulate(code, t, 0.7), t, -0.7);
    EXPECT_TRUE(torch::allclose(back.tensor(), code.tensor(), 1e-6, 1e-6));
    // moves by exactly alpha along the unit direction
    auto delta = (manipulate(code, t, 2.0).flat() - code.flat()).to(torch::kFloat64);
    EXPECT_NEAR(delta[0].norm().item<double>(), 2.0, 1e-5);
    EXPECT_THROW(manipulate(HierarchicalCode(torch::randn({1, 3, 3})), t, 1.0), std::invalid_argument);
}

TEST(Classifier, SeparableToyIsPerfect) {
    auto toy = separable_toy(400, 1);
    auto dir = train_classifier(toy.codes, toy.labels, "toy");
    EXPECT_DOUBLE_EQ(dir.train_accuracy, 1.0);
    EXPECT_EQ(dir.levels, 2);
    EXPECT_EQ(dir.dim, 3);
    EXPECT_EQ(truncate_direction(dir, 1).support, (std::vector<int64_t>{0}));
}

TEST(Classifier, LabelFlipNegatesDirection) {
    auto toy = separable_toy(400, 2, 2.0);
    auto flipped = toy.labels;
    for (auto& y : flipped) y = 1 - y;
    auto a = train_classifier(toy.codes, toy.labels, "a");
    auto b = train_classifier(toy.codes, flipped, "b");
    for (size_t i = 0; i < a.n.size(); ++i) {
        EXPECT_NEAR(a.n[i], -b.n[i], 1e-4 * (1.0 + std::fabs(a.n[i])));
    }
}

TEST(Classifier, DuplicatingSamplesKeepsBoundary) {
    auto toy = separable_toy(200, 3, 1.5);
    auto doubled = HierarchicalCode::cat({toy.codes, toy.codes});
    auto labels = toy.labels;
    labels.insert(labels.end(), toy.labels.begin(), toy.labels.end());
    auto a = train_classifier(toy.codes, toy.labels, "a");
    auto b = train_classifier(doubled, labels, "b");
    EXPECT_DOUBLE_EQ(a.train_accuracy, b.train_accuracy);
    for (size_t i = 0; i < a.n.size(); ++i) {
        EXPECT_NEAR(a.n[i], b.n[i], 1e-4 * (1.0 + std::fabs(a.n[i])));
    }
}

TEST(Classifier, Errors) {
    auto toy = separable_toy(10, 4);
    std::vector<int> single(10, 1);
    EXPECT_THROW(train_classifier(toy.codes, single, "x"), std::invalid_argument);
    auto three = toy.labels;
    three[0] = 2;
    EXPECT_THROW(train_classifier(toy.codes, three, "x"), std::invalid_argument);
    EXPECT_THROW(train_classifier(toy.codes, std::vector<int>(9, 0), "x"), std::invalid_argument);
}

TEST(Classifier, LogitMonotoneInAlpha) {
    auto toy = separable_toy(400, 5, 2.0);
    auto dir = train_classifier(toy.codes, toy.labels, "toy");
    auto code = toy.codes.select(0);
    auto t = truncate_direction(dir, dir.size());
    double prev = attribute_logits(dir, code)[0];
    for (int i = 1; i <= 10; ++i) {
        const double logit = attribute_logits(dir, manipulate(code, t, 0.1 * i))[0];
        EXPECT_GT(logit, prev);
        prev = logit;
    }
}

TEST(LevelAttribution, Examples) {
    auto only0 = make_dir({0, 0, 0, 0, 0, 0}, 3, 2);
    only0.n_hat = {1, 0.5, 0, 0, 0, 0};
    auto a = level_attribution(only0);
    EXPECT_EQ(a.mass, (std::vector<double>{1, 0, 0}));
    EXPECT_EQ(a.argmax, 0);
    auto uniform = make_dir({1, 1, 1, 1, 1, 1}, 3, 2);
    uniform.n_hat = std::vector<double>(6, 1.0);
    for (double m : level_attribution(uniform).mass) {
        EXPECT_DOUBLE_EQ(m, 1.0 / 3.0);
    }
    auto deg = make_dir({2, 2}, 2, 1);
    EXPECT_EQ(level_attribution(deg).mass, (std::vector<double>{0, 0}));
}

TEST(Ecdf, Examples) {
    auto c = ecdf(std::vector<double>{0.3, 0.3, 0.3});
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0], (std::pair<double, double>{0.3, 1.0}));
    auto s = ecdf(std::vector<double>{1, 0});
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0], (std::pair<double, double>{0.0, 0.5}));
    EXPECT_EQ(s[1], (std::pair<double, double>{1.0, 1.0}));
}

TEST(Ecdf, MatchesSortOracle) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> ud(0, 9);
    std::vector<double> v(200);
    for (auto& x : v) x = ud(rng) / 10.0;
    auto got = ecdf(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [value, frac] : got) {
        const auto le = std::upper_bound(sorted.begin(), sorted.end(), value) - sorted.begin();
        EXPECT_DOUBLE_EQ(frac, static_cast<double>(le) / 200.0);
    }
    EXPECT_EQ(got.size(), static_cast<size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin()));
}

TEST(Fidelity, Examples) {
    auto a = torch::rand({3, 4, 4});
    EXPECT_EQ(fidelity(a, a, torch::zeros({4, 4})), 0.0);
    EXPECT_EQ(fidelity(a, torch::rand({3, 4, 4}), torch::ones({4, 4})), 0.0);
    auto orig = torch::zeros({1, 2, 2});
    auto edit = torch::tensor({1.0f, 0.0f, 0.0f, 0.0f}).reshape({1, 2, 2});
    auto mask = torch::tensor({1.0f, 0.0f, 0.0f, 0.0f}).reshape({2, 2});
    EXPECT_EQ(fidelity(orig, edit, mask), 0.0);
    EXPECT_DOUBLE_EQ(fidelity(orig, edit, torch::zeros({2, 2})), 0.25);
    EXPECT_THROW(fidelity(orig, torch::zeros({1, 3, 3}), mask), std::invalid_argument);
}

TEST(LinearProbe, FullSubsetMatchesClassifierAndEmptyIsChance) {
    auto toy = separable_toy(600, 6, 1.0);
    auto dir = train_classifier(toy.codes, toy.labels, "toy");
    EXPECT_DOUBLE_EQ(linear_probe(toy.codes, toy.labels, {0, 1}), dir.train_accuracy);
    EXPECT_NEAR(linear_probe(toy.codes, toy.labels, {}), 0.5, 0.1);
    // the signal lives in level 0
    EXPECT_GT(linear_probe(toy.codes, toy.labels, {0}), linear_probe(toy.codes, toy.labels, {1}) + 0.1);
    EXPECT_THROW(linear_probe(toy.codes, toy.labels, {2}), std::invalid_argument);
}

TEST(Registry, RoundTripAndValidation) {
    TempDir dir;
    auto a = make_dir({1, -2, 0.5, 4}, 2, 2);
    a.bias = 0.25;
    a.train_accuracy = 0.9;
    save_registry(dir / "r.json", {a});
    auto back = load_registry(dir / "r.json");
    ASSERT_EQ(back.size(), 1u);
    EXPECT_EQ(back[0].n, a.n);
    EXPECT_EQ(back[0].n_hat, a.n_hat);
    EXPECT_EQ(back[0].bias, 0.25);
    EXPECT_EQ(back[0].levels, 2);
    {
        std::ofstream out(dir / "bad.json");
        out << R"([{"name":"x","n":[1,2,3],"bias":0,"L":2,"d":2,"train_accuracy":1}])";
    }
    EXPECT_ANY_THROW(load_registry(dir / "bad.json"));
    save_registry(dir / "empty.json", {});
    EXPECT_TRUE(load_registry(dir / "empty.json").empty());
}

TEST(Registry, CsvExports) {
    TempDir dir;
    auto a = make_dir({1, -2, 0.5, 4}, 2, 2);
    write_heatmap_csv(dir / "h.csv", {a});
    write_ecdf_csv(dir / "e.csv", {a});
    std::ifstream h(dir / "h.csv");
    std::string line;
    std::getline(h, line);
    EXPECT_EQ(line, "attribute,level,slot,n_hat");
    int rows = 0;
    while (std::getline(h, line)) ++rows;
    EXPECT_EQ(rows, 4);
}
