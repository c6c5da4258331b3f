#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "flowct/error.hpp"
#include "flowct/ops.hpp"
#include "test_util.hpp"

using namespace flowct;
using testutil::max_gradcheck_error;
using testutil::random_tensor;

namespace {

// Direct triple-sum cross-correlation, single batch item.
std::vector<double> naive_conv3d(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>& b,
                                 int stride, int pad) {
    const auto cin = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
    const auto cout = k.dim(0), ks = k.dim(2);
    const auto od = (d + 2 * pad - ks) / stride + 1, oh = (h + 2 * pad - ks) / stride + 1,
               ow = (w + 2 * pad - ks) / stride + 1;
    std::vector<double> out;
    for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t z = 0; z < od; ++z)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t xx = 0; xx < ow; ++xx) {
                    double acc = b.defined() ? b.at(co) : 0.0;
                    for (std::int64_t ci = 0; ci < cin; ++ci)
                        for (std::int64_t a = 0; a < ks; ++a)
                            for (std::int64_t bb = 0; bb < ks; ++bb)
                                for (std::int64_t c = 0; c < ks; ++c) {
                                    const auto iz = z * stride - pad + a, iy = y * stride - pad + bb,
                                               ix = xx * stride - pad + c;
                                    if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= w) continue;
                                    acc += x.at(((ci * d + iz) * h + iy) * w + ix) *
                                           k.at((((co * cin + ci) * ks + a) * ks + bb) * ks + c);
                                }
                    out.push_back(acc);
                }
    return out;
}

} // namespace

TEST_CASE("tensor invariants and construction") {
    Tensor<float> t({2, 3}, 1.5f);
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    t.set_requires_grad(true);
    t.mutable_grad();
    CHECK(t.grad().size() == 6);
}

TEST_CASE("conv3d scalar, identity and oracle cases") {
    Tensor<double> x({1, 1, 1, 1, 1}, 2.0), k({1, 1, 1, 1, 1}, 3.0);
    CHECK(ops::conv3d(x, k, Tensor<double>{}, {}).item() == 6.0);

    std::mt19937_64 gen(1);
    const auto in = random_tensor<double>({1, 2, 5, 4, 3}, gen);
    Tensor<double> ident({2, 2, 3, 3, 3}, 0.0);
    auto iv = ident.mutable_values();
    for (int c = 0; c < 2; ++c) iv[static_cast<std::size_t>(((c * 2 + c) * 3 + 1) * 9 + 1 * 3 + 1)] = 1.0;
    const auto same = ops::conv3d(in, ident, Tensor<double>{}, {1, 1});
    CHECK(std::equal(same.values().begin(), same.values().end(), in.values().begin()));

    const auto x4 = random_tensor<double>({1, 1, 4, 4, 4}, gen);
    const auto k3 = random_tensor<double>({1, 1, 3, 3, 3}, gen);
    const auto got = ops::conv3d(x4, k3, Tensor<double>{}, {1, 1});
    const auto want = naive_conv3d(x4, k3, Tensor<double>{}, 1, 1);
    CHECK(testutil::max_abs_diff(got.values(), want) < 1e-12);

    // Strided, multi-channel, with bias.
    const auto x5 = random_tensor<double>({1, 3, 5, 6, 7}, gen);
    const auto k5 = random_tensor<double>({2, 3, 3, 3, 3}, gen);
    const auto b5 = random_tensor<double>({2}, gen);
    const auto got2 = ops::conv3d(x5, k5, b5, {2, 1});
    CHECK(got2.shape() == Shape{1, 2, 3, 3, 4});
    CHECK(testutil::max_abs_diff(got2.values(), naive_conv3d(x5, k5, b5, 2, 1)) < 1e-12);
}

TEST_CASE("conv3d shape errors name the axis") {
    Tensor<double> x({1, 2, 4, 4, 4}), k({1, 3, 3, 3, 3});
    try {
        ops::conv3d(x, k, Tensor<double>{}, {1, 1});
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("axis 1") != std::string::npos);
    }
    Tensor<double> even({1, 2, 2, 2, 2});
    CHECK_THROWS_AS(ops::conv3d(x, even, Tensor<double>{}, {1, 0}), ShapeError);
}

TEST_CASE("conv3d is linear in the input") {
    std::mt19937_64 gen(2);
    const auto a = random_tensor<double>({1, 2, 4, 4, 4}, gen);
    const auto b = random_tensor<double>({1, 2, 4, 4, 4}, gen);
    const auto k = random_tensor<double>({3, 2, 3, 3, 3}, gen);
    const auto lhs = ops::conv3d(ops::add(ops::scale(a, 2.0), ops::scale(b, -0.5)), k, Tensor<double>{}, {1, 1});
    const auto rhs = ops::add(ops::scale(ops::conv3d(a, k, Tensor<double>{}, {1, 1}), 2.0),
                              ops::scale(ops::conv3d(b, k, Tensor<double>{}, {1, 1}), -0.5));
    CHECK(testutil::max_abs_diff(lhs.values(), rhs.values()) < 1e-12);
}

TEST_CASE("backward basics") {
    std::mt19937_64 gen(3);
    auto w = random_tensor<double>({5}, gen);
    const auto x = random_tensor<double>({5}, gen);
    w.set_requires_grad(true);
    backward(ops::sum(ops::mul(w, x)));
    CHECK(testutil::max_abs_diff(w.grad(), x.values()) == 0.0);

    auto w2 = x.clone();
    w2.set_requires_grad(true);
    backward(ops::mean(ops::square(ops::sub(w2, x))));
    for (double g : w2.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalars and a consumed tape") {
    Tensor<double> w({3}, 1.0);
    w.set_requires_grad(true);
    const auto y = ops::scale(w, 2.0);
    CHECK_THROWS_AS(backward(y), ShapeError);
    const auto loss = ops::sum(y);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), Error);
    CHECK(Tape<double>::active().empty());
}

TEST_CASE("no-grad mode records nothing") {
    Tensor<double> w({3}, 1.0);
    w.set_requires_grad(true);
    {
        NoGradGuard g;
        const auto l = ops::sum(ops::square(w));
        CHECK(Tape<double>::active().empty());
        CHECK_THROWS_AS(backward(l), Error);
    }
    CHECK(GradMode::enabled());
}

TEST_CASE("primitive definitions") {
    const Tensor<double> x({2}, std::vector<double>{-1.5, 2.0});
    const auto r = ops::relu(x);
    CHECK(r.at(0) == 0.0);
    CHECK(r.at(1) == 2.0);

    std::mt19937_64 gen(4);
    const auto v = random_tensor<float>({2, 8, 3, 3, 3}, gen);
    const auto dropped = ops::dropout(v, 0.05, {1, 2, 3}, false);
    CHECK(std::equal(dropped.values().begin(), dropped.values().end(), v.values().begin()));

    // One group of two values {1, 3}: mean 2, population std 1.
    const Tensor<double> g({1, 2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
    const auto n = ops::group_norm(g, 1, Tensor<double>{}, Tensor<double>{}, 0.0);
    CHECK(n.at(0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(n.at(1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(ops::group_norm(random_tensor<double>({1, 6, 1, 1, 1}, gen), 4, Tensor<double>{},
                                    Tensor<double>{}),
                    ConfigError);
}

TEST_CASE("dropout is keyed by (seed, op, step) and rescales survivors") {
    Tensor<double> ones({4096}, 1.0);
    const auto a = ops::dropout(ones, 0.25, {7, 1, 10}, true);
    const auto b = ops::dropout(ones, 0.25, {7, 1, 10}, true);
    const auto c = ops::dropout(ones, 0.25, {7, 1, 11}, true);
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    CHECK_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
    int zeros = 0;
    for (double x : a.values()) {
        CHECK((x == 0.0 || x == doctest::Approx(1.0 / 0.75)));
        zeros += x == 0.0;
    }
    CHECK(zeros > 900);
    CHECK(zeros < 1150);
    CHECK_THROWS_AS(ops::dropout(ones, 1.0, {}, true), DomainError);
}

TEST_CASE("layout ops") {
    const Tensor<double> x({1, 1, 1, 1, 2}, std::vector<double>{1.0, 2.0});
    const auto up = ops::upsample_nearest2x(x);
    CHECK(up.shape() == Shape{1, 1, 2, 2, 4});
    CHECK(up.at(0) == 1.0);
    CHECK(up.at(1) == 1.0);
    CHECK(up.at(2) == 2.0);
    const auto down = ops::downsample_strided2x(up);
    CHECK(std::equal(down.values().begin(), down.values().end(), x.values().begin()));

    std::mt19937_64 gen(5);
    const auto a = random_tensor<double>({2, 3, 2, 2, 2}, gen);
    const auto b = random_tensor<double>({2, 1, 2, 2, 2}, gen);
    const auto cat = ops::concat_channels(a, b);
    CHECK(cat.shape() == Shape{2, 4, 2, 2, 2});
    const auto back = ops::slice_channels(cat, 3, 1);
    CHECK(std::equal(back.values().begin(), back.values().end(), b.values().begin()));
    CHECK_THROWS_AS(ops::concat_channels(a, random_tensor<double>({2, 1, 2, 2, 3}, gen)), ShapeError);
    CHECK_THROWS_AS(ops::add(a, b), ShapeError);
}

TEST_CASE("finite-difference agreement for every primitive") {
    std::mt19937_64 gen(6);
    const double tol = 1e-4;

    auto a = testutil::random_away_from_zero({2, 3, 2, 2, 2}, gen);
    auto b = random_tensor<double>({2, 3, 2, 2, 2}, gen);
    const auto probe = random_tensor<double>({2, 3, 2, 2, 2}, gen);
    auto weigh = [&](const Tensor<double>& y) { return ops::sum(ops::mul(y, probe)); };

    CHECK(max_gradcheck_error({a, b}, [&] { return weigh(ops::add(a, b)); }) < tol);
    CHECK(max_gradcheck_error({a, b}, [&] { return weigh(ops::sub(a, b)); }) < tol);
    CHECK(max_gradcheck_error({a, b}, [&] { return weigh(ops::mul(a, b)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return weigh(ops::scale(a, -1.7)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return weigh(ops::relu(a)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return weigh(ops::silu(a)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return weigh(ops::abs(a)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return weigh(ops::square(a)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return ops::mean(ops::square(a)); }) < tol);
    CHECK(max_gradcheck_error({a}, [&] { return weigh(ops::dropout(a, 0.3, {1, 2, 3}, true)); }) < tol);

    auto gamma = random_tensor<double>({3}, gen, 0.5, 1.5);
    auto beta = random_tensor<double>({3}, gen);
    CHECK(max_gradcheck_error({b, gamma, beta}, [&] { return weigh(ops::group_norm(b, 3, gamma, beta)); }) < tol);

    auto x = random_tensor<double>({2, 4}, gen);
    auto w = random_tensor<double>({3, 4}, gen);
    auto bias = random_tensor<double>({3}, gen);
    const auto lp = random_tensor<double>({2, 3}, gen);
    CHECK(max_gradcheck_error({x, w, bias}, [&] { return ops::sum(ops::mul(ops::linear(x, w, bias), lp)); }) < tol);

    auto ci = random_tensor<double>({1, 2, 4, 3, 5}, gen);
    auto ck = random_tensor<double>({3, 2, 3, 3, 3}, gen);
    auto cb = random_tensor<double>({3}, gen);
    const auto cp1 = random_tensor<double>({1, 3, 4, 3, 5}, gen);
    const auto cp2 = random_tensor<double>({1, 3, 2, 2, 3}, gen);
    CHECK(max_gradcheck_error({ci, ck, cb},
                              [&] { return ops::sum(ops::mul(ops::conv3d(ci, ck, cb, {1, 1}), cp1)); }) < tol);
    CHECK(max_gradcheck_error({ci, ck, cb},
                              [&] { return ops::sum(ops::mul(ops::conv3d(ci, ck, cb, {2, 1}), cp2)); }) < tol);

    auto s = random_tensor<double>({1, 2, 2, 2, 2}, gen);
    const auto up_p = random_tensor<double>({1, 2, 4, 4, 4}, gen);
    CHECK(max_gradcheck_error({s}, [&] { return ops::sum(ops::mul(ops::upsample_nearest2x(s), up_p)); }) < tol);
    const auto dn_p = random_tensor<double>({1, 2, 1, 1, 1}, gen);
    CHECK(max_gradcheck_error({s}, [&] { return ops::sum(ops::mul(ops::downsample_strided2x(s), dn_p)); }) < tol);

    auto m1 = random_tensor<double>({2, 3, 4}, gen);
    auto m2 = random_tensor<double>({2, 4, 2}, gen);
    const auto mp = random_tensor<double>({2, 3, 2}, gen);
    CHECK(max_gradcheck_error({m1, m2}, [&] { return ops::sum(ops::mul(ops::matmul(m1, m2), mp)); }) < tol);
    const auto sp = random_tensor<double>({2, 3, 4}, gen);
    CHECK(max_gradcheck_error({m1}, [&] { return ops::sum(ops::mul(ops::softmax_last(m1), sp)); }) < tol);
    const auto tp = random_tensor<double>({2, 4, 3}, gen);
    CHECK(max_gradcheck_error({m1}, [&] { return ops::sum(ops::mul(ops::transpose_last2(m1), tp)); }) < tol);

    auto cb2 = random_tensor<double>({2, 3}, gen);
    CHECK(max_gradcheck_error({b, cb2}, [&] { return weigh(ops::add_channel_bias(b, cb2)); }) < tol);
    auto c1 = random_tensor<double>({2, 1, 2, 2, 2}, gen);
    const auto catp = random_tensor<double>({2, 4, 2, 2, 2}, gen);
    CHECK(max_gradcheck_error({b, c1}, [&] { return ops::sum(ops::mul(ops::concat_channels(b, c1), catp)); }) < tol);
}

namespace {

ops::AttentionWeights<double> random_attention(int c, std::mt19937_64& gen, bool norm) {
    ops::AttentionWeights<double> w;
    if (norm) {
        w.norm_gamma = random_tensor<double>({c}, gen, 0.5, 1.5);
        w.norm_beta = random_tensor<double>({c}, gen);
        w.norm_groups = 2;
    }
    w.qkv_weight = random_tensor<double>({3 * c, c, 1, 1, 1}, gen);
    w.qkv_bias = random_tensor<double>({3 * c}, gen);
    w.proj_weight = random_tensor<double>({c, c, 1, 1, 1}, gen);
    w.proj_bias = random_tensor<double>({c}, gen);
    return w;
}

// Plain-loop attention without normalization, single head.
std::vector<double> naive_attention(const Tensor<double>& x, const ops::AttentionWeights<double>& w) {
    const auto c = x.dim(1);
    const auto n = x.numel() / c;
    auto tok = [&](std::int64_t ch, std::int64_t t) { return x.at(ch * n + t); };
    std::vector<std::vector<double>> q(n, std::vector<double>(c)), k = q, v = q;
    for (std::int64_t t = 0; t < n; ++t)
        for (std::int64_t o = 0; o < 3 * c; ++o) {
            double acc = w.qkv_bias.at(o);
            for (std::int64_t i = 0; i < c; ++i) acc += w.qkv_weight.at(o * c + i) * tok(i, t);
            (o < c ? q : o < 2 * c ? k : v)[t][o % c] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    for (std::int64_t t = 0; t < n; ++t) {
        std::vector<double> score(n);
        double mx = -1e300;
        for (std::int64_t s = 0; s < n; ++s) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < c; ++i) acc += q[t][i] * k[s][i];
            score[s] = acc / std::sqrt(static_cast<double>(c));
            mx = std::max(mx, score[s]);
        }
        double z = 0.0;
        for (auto& sc : score) z += (sc = std::exp(sc - mx));
        std::vector<double> mixed(c, 0.0);
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t i = 0; i < c; ++i) mixed[i] += score[s] / z * v[s][i];
        for (std::int64_t o = 0; o < c; ++o) {
            double acc = w.proj_bias.at(o);
            for (std::int64_t i = 0; i < c; ++i) acc += w.proj_weight.at(o * c + i) * mixed[i];
            out[o * n + t] = tok(o, t) + acc;
        }
    }
    return out;
}

} // namespace

TEST_CASE("attention: single token, zero projection and naive oracle") {
    std::mt19937_64 gen(7);
    auto w = random_attention(4, gen, false);
    const auto one = random_tensor<double>({1, 4, 1, 1, 1}, gen);
    const auto single = ops::attention_block(one, w, 1);
    // One token: softmax weight 1, output = x + proj(V(x)).
    std::vector<double> want(4);
    for (int o = 0; o < 4; ++o) {
        double acc = w.proj_bias.at(o);
        for (int i = 0; i < 4; ++i) {
            double vi = w.qkv_bias.at(8 + i);
            for (int j = 0; j < 4; ++j) vi += w.qkv_weight.at((8 + i) * 4 + j) * one.at(j);
            acc += w.proj_weight.at(o * 4 + i) * vi;
        }
        want[o] = one.at(o) + acc;
    }
    CHECK(testutil::max_abs_diff(single.values(), want) < 1e-12);

    const auto two = random_tensor<double>({1, 4, 1, 1, 2}, gen);
    CHECK(testutil::max_abs_diff(ops::attention_block(two, w, 1).values(), naive_attention(two, w)) < 1e-12);

    auto z = w;
    z.proj_weight = Tensor<double>({4, 4, 1, 1, 1}, 0.0);
    z.proj_bias = Tensor<double>({4}, 0.0);
    const auto x = random_tensor<double>({1, 4, 2, 2, 2}, gen);
    const auto same = ops::attention_block(x, z, 1);
    CHECK(std::equal(same.values().begin(), same.values().end(), x.values().begin()));

    CHECK_THROWS_AS(ops::attention_block(x, w, 3), ConfigError);
}

TEST_CASE("attention is equivariant to token permutations") {
    std::mt19937_64 gen(8);
    const auto w = random_attention(4, gen, true);
    const auto x = random_tensor<double>({1, 4, 1, 2, 3}, gen);
    std::vector<std::int64_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<double> xp(24);
    for (int c = 0; c < 4; ++c)
        for (int t = 0; t < 6; ++t) xp[c * 6 + t] = x.at(c * 6 + perm[t]);
    const auto y = ops::attention_block(x, w, 2);
    const auto yp = ops::attention_block(Tensor<double>(x.shape(), xp), w, 2);
    for (int c = 0; c < 4; ++c)
        for (int t = 0; t < 6; ++t) CHECK(yp.at(c * 6 + t) == doctest::Approx(y.at(c * 6 + perm[t])).epsilon(1e-12));
}

TEST_CASE("attention gradients match finite differences") {
    std::mt19937_64 gen(9);
    auto w = random_attention(4, gen, true);
    auto x = random_tensor<double>({1, 4, 1, 2, 2}, gen);
    const auto p = random_tensor<double>({1, 4, 1, 2, 2}, gen);
    const double err = max_gradcheck_error(
        {x, w.norm_gamma, w.norm_beta, w.qkv_weight, w.qkv_bias, w.proj_weight, w.proj_bias},
        [&] { return ops::sum(ops::mul(ops::attention_block(x, w, 2), p)); });
    CHECK(err < 1e-4);
}

TEST_CASE("forward values are deterministic") {
    std::mt19937_64 gen(10);
    const auto x = random_tensor<float>({1, 3, 6, 6, 6}, gen);
    const auto k = random_tensor<float>({4, 3, 3, 3, 3}, gen);
    const auto a = ops::conv3d(x, k, Tensor<float>{}, {1, 1});
    const auto b = ops::conv3d(x, k, Tensor<float>{}, {1, 1});
    CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST_CASE("numeric checks flag non-finite outputs") {
    set_numeric_checks(true);
    const Tensor<double> x({2}, std::vector<double>{1e300, 1.0});
    CHECK_THROWS_AS(ops::square(x), NumericalError);
}
