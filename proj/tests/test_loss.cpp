#include "support/oracles.hpp"

#include "mrclip/loss.hpp"
#include "mrclip/optim.hpp"

#include <gtest/gtest.h>

#include <numeric>

namespace mrclip {
namespace {

using ad::Tape;
using ad::Tensor;
using testing::Matrix;

std::vector<int> random_labels(Rng& rng, std::size_t b, std::size_t groups) {
    std::vector<int> labels;
    for (std::size_t i = 0; i < b; ++i) {
        labels.push_back(static_cast<int>(rng.below(groups)));
    }
    return labels;
}

double directional(const Matrix& a, const Matrix& c, const std::vector<int>& labels, double tau) {
    Tape<double> tape;
    return supcon_directional(tape.constant(testing::to_tensor<double>(a)), tape.constant(testing::to_tensor<double>(c)),
                              labels, tau)
        .value()
        .item();
}

TEST(SupCon, TwoWayInfoNceClosedForm) {
    const Matrix z{{1, 0}, {0, 1}};
    EXPECT_NEAR(directional(z, z, {0, 1}, 1.0), -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
    EXPECT_NEAR(directional(z, z, {0, 1}, 1.0), 0.3133, 5e-5);
}

TEST(SupCon, IdenticalEmbeddingsGiveLogB) {
    for (std::size_t b : {2u, 5u, 16u}) {
        const Matrix z(b, std::vector<double>{0.6, 0.8});
        EXPECT_NEAR(directional(z, z, std::vector<int>(b, 3), 0.07), std::log(static_cast<double>(b)), 1e-12);
    }
}

TEST(SupCon, MatchesBruteForceOracle) {
    Rng rng(2024);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = std::array<std::size_t, 3>{4, 8, 16}[trial % 3];
        const auto img = testing::random_unit_rows(rng, b, 8);
        const auto txt = testing::random_unit_rows(rng, b, 8);
        const auto labels = random_labels(rng, b, 3);
        const double tau = rng.uniform(0.05, 1.0);
        const double expected = testing::brute_supcon(img, txt, labels, tau);
        EXPECT_NEAR(directional(img, txt, labels, tau), expected, 1e-6 * std::abs(expected));

        Tape<double> tape;
        const double sym = supcon_symmetric(tape.constant(testing::to_tensor<double>(img)),
                                            tape.constant(testing::to_tensor<double>(txt)), labels, tau)
                               .value()
                               .item();
        const double sym_expected = testing::brute_supcon_symmetric(img, txt, labels, tau);
        EXPECT_NEAR(sym, sym_expected, 1e-6 * std::abs(sym_expected));
    }
}

TEST(SupCon, SinglePrecisionMatchesOracle) {
    Rng rng(7);
    const auto img = testing::random_unit_rows(rng, 16, 32);
    const auto txt = testing::random_unit_rows(rng, 16, 32);
    const auto labels = random_labels(rng, 16, 4);
    Tape<float> tape;
    const double got = supcon_symmetric(tape.constant(testing::to_tensor<float>(img)),
                                        tape.constant(testing::to_tensor<float>(txt)), labels, 0.07)
                           .value()
                           .item();
    const double want = testing::brute_supcon_symmetric(img, txt, labels, 0.07);
    EXPECT_NEAR(got, want, 1e-5 * want);
}

TEST(SupCon, SinglePositiveEqualsInfoNce) {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t b = 3 + rng.below(10);
        const auto a = testing::random_unit_rows(rng, b, 6);
        const auto c = testing::random_unit_rows(rng, b, 6);
        std::vector<int> labels(b);
        std::iota(labels.begin(), labels.end(), 0);
        const double expected = testing::infonce(a, c, 0.2);
        EXPECT_NEAR(directional(a, c, labels, 0.2), expected, 1e-6 * expected);
    }
}

TEST(SupCon, SymmetricPropertiesHold) {
    Rng rng(12);
    const auto img = testing::random_unit_rows(rng, 8, 5);
    const auto txt = testing::random_unit_rows(rng, 8, 5);
    const auto labels = random_labels(rng, 8, 3);
    auto sym = [&](const Matrix& x, const Matrix& y) {
        Tape<double> tape;
        return supcon_symmetric(tape.constant(testing::to_tensor<double>(x)), tape.constant(testing::to_tensor<double>(y)),
                                labels, 0.1)
            .value()
            .item();
    };
    EXPECT_NEAR(sym(img, txt), sym(txt, img), 1e-12);
    EXPECT_NEAR(sym(img, img), directional(img, img, labels, 0.1), 1e-12);
}

TEST(SupCon, PermutationInvariant) {
    Rng rng(13);
    const auto a = testing::random_unit_rows(rng, 12, 8);
    const auto c = testing::random_unit_rows(rng, 12, 8);
    const auto labels = random_labels(rng, 12, 4);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix pa, pc;
    std::vector<int> pl;
    for (auto i : perm) {
        pa.push_back(a[i]);
        pc.push_back(c[i]);
        pl.push_back(labels[i]);
    }
    EXPECT_NEAR(directional(a, c, labels, 0.07), directional(pa, pc, pl, 0.07), 1e-6);
}

TEST(SupCon, RejectsBadShapes) {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>({4, 3}, 0.5));
    auto b = tape.constant(Tensor<double>({4, 2}, 0.5));
    EXPECT_THROW(supcon_directional(a, b, {0, 0, 1, 1}, 0.1), Error);
    EXPECT_THROW(supcon_directional(a, a, {0, 1}, 0.1), Error);
}

TEST(SupCon, GradientDescentDecreasesLossOnSeparableBatch) {
    Rng rng(21);
    Tensor<double> img({8, 4}), txt({8, 4});
    for (auto* t : {&img, &txt}) {
        for (auto& v : t->data()) v = rng.normal();
        t->set_requires_grad(true);
    }
    const std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
    std::vector<ad::ParamRef<double>> params{{"img", &img, false}, {"txt", &txt, false}};
    double previous = std::numeric_limits<double>::infinity();
    for (int step = 0; step < 20; ++step) {
        ad::zero_grads(params);
        Tape<double> tape;
        const auto loss = supcon_symmetric(ad::l2_normalize(tape.param(img)), ad::l2_normalize(tape.param(txt)), labels, 0.5);
        tape.backward(loss);
        EXPECT_LE(loss.value().item(), previous + 1e-7) << "step " << step;
        previous = loss.value().item();
        for (auto* t : {&img, &txt}) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                (*t)[i] -= 0.05 * t->grad()[i];
            }
        }
    }
}

} // namespace
} // namespace mrclip
