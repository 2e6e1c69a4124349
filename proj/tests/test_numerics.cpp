#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fd_check.hpp"
#include "umc/kernels.hpp"
#include "umc/ops.hpp"

using namespace umc;
using Td = Tensor<double>;
using Tf = Tensor<float>;

namespace {

Td randu(std::vector<int> shape, Rng& rng) {
    Td t(shape);
    for (long i = 0; i < t.numel(); ++i) t.at(i) = rng.normal();
    return t;
}

}  // namespace

TEST_CASE("matmul basics") {
    Td a = Td::from({2, 2}, {1, 2, 3, 4});
    Td eye = Td::from({2, 2}, {1, 0, 0, 1});
    Td r = matmul(a, eye);
    for (int i = 0; i < 4; ++i) CHECK(r.at(i) == a.at(i));

    Td z = Td::zeros({2, 2});
    Td rz = matmul(z, a);
    for (int i = 0; i < 4; ++i) CHECK(rz.at(i) == 0.0);

    Td b = Td::from({2, 1}, {1, 1});
    Td h = matmul(a, b);
    CHECK(h.at(0) == doctest::Approx(3.0));
    CHECK(h.at(1) == doctest::Approx(7.0));

    CHECK_THROWS_AS(matmul(a, Td::zeros({3, 2})), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, Td::zeros({3, 2})),
                         doctest::Contains("[2x2]"), ShapeError);
}

TEST_CASE("matmul associativity on random 4x4 chains") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        Td a = randu({4, 4}, rng), b = randu({4, 4}, rng), c = randu({4, 4}, rng);
        Td l = matmul(matmul(a, b), c);
        Td r = matmul(a, matmul(b, c));
        for (long i = 0; i < 16; ++i) {
            const double denom = std::max(1.0, std::abs(l.at(i)));
            CHECK(std::abs(l.at(i) - r.at(i)) / denom < 1e-5);
        }
    }
}

TEST_CASE("silu values") {
    Td x = Td::from({3}, {0.0, -40.0, 1.0});
    Td y = silu(x);
    CHECK(y.at(0) == 0.0);
    CHECK(std::abs(y.at(1)) < 1e-12);
    CHECK(y.at(2) == doctest::Approx(0.731059).epsilon(1e-5));
}

TEST_CASE("cosine similarity") {
    Td v = Td::from({3}, {1, 2, 3});
    CHECK(cosine_similarity(v, v) == doctest::Approx(1.0));
    Td nv = Td::from({3}, {-1, -2, -3});
    CHECK(cosine_similarity(v, nv) == doctest::Approx(-1.0));
    Td a = Td::from({2}, {1, 0});
    Td b = Td::from({2}, {1, 1});
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.70711).epsilon(1e-4));
    CHECK_THROWS_AS(cosine_similarity(a, Td::zeros({2})), InputError);
}

TEST_CASE("backward trivials") {
    Td w = Td::from({4}, {0.5, -1.0, 2.0, 3.0}, true);
    {
        GradientTape<double> tape;
        Td loss = sum(w);
        tape.backward(loss);
    }
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == 1.0);
    w.zero_grad();
    {
        GradientTape<double> tape;
        Td loss = scale(sum(mul(w, w)), 0.5);
        tape.backward(loss);
    }
    for (int i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(w.at(i)));

    // non-scalar loss rejected
    GradientTape<double> tape;
    Td v = add(w, w);
    CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("grad accumulation when a tensor is used twice") {
    Rng rng(3);
    Td w = randu({3, 3}, rng);
    Td x = randu({3, 3}, rng);
    w.set_requires_grad(true);

    {
        GradientTape<double> tape;
        Td loss = sum(add(matmul(x, w), matmul(x, w)));
        tape.backward(loss);
    }
    std::vector<double> twice = w.grad();
    w.zero_grad();
    {
        GradientTape<double> tape;
        Td loss = sum(matmul(x, w));
        tape.backward(loss);
    }
    for (size_t i = 0; i < twice.size(); ++i)
        CHECK(twice[i] == doctest::Approx(2.0 * w.grad()[i]));
}

TEST_CASE("finite differences for every op, 64-bit") {
    Rng rng(11);
    Td a = randu({3, 4}, rng);
    Td b = randu({4, 5}, rng);
    Td bt = randu({5, 4}, rng);
    Td c = randu({3, 4}, rng);
    Td v = randu({4}, rng);
    Td s = randu({3}, rng);
    Td gain = randu({4}, rng);
    Td sq = randu({4, 4}, rng);
    Td table = randu({6, 4}, rng);
    std::vector<int> ids{0, 3, 5, 1};
    std::vector<int> tgt{1, 0, 2};

    auto check = [&](const char* name, std::function<Td()> f, std::vector<Td> params) {
        auto r = umc::testing::fd_check<double>(f, params);
        INFO(name, " rel err ", r.max_rel_err);
        CHECK(r.max_rel_err < 1e-6);
    };

    check("matmul", [&] { return sum(mul(matmul(a, b), matmul(a, b))); }, {a, b});
    check("matmul_nt", [&] { return sum(mul(matmul_nt(a, bt), matmul_nt(a, bt))); }, {a, bt});
    check("add/sub", [&] { return sum(mul(add(a, c), sub(a, c))); }, {a, c});
    check("scale/add_const", [&] { return sum(mul(scale(a, 1.7), add_const(a, 0.3))); }, {a});
    check("add_row", [&] { return sum(mul(add_row(a, v), add_row(a, v))); }, {a, v});
    check("row_scale", [&] { return sum(mul(row_scale(a, s), row_scale(a, s))); }, {a, s});
    check("silu", [&] { return sum(mul(silu(a), a)); }, {a});
    check("rmsnorm", [&] { return sum(mul(rmsnorm(a, gain), a)); }, {a, gain});
    check("softmax", [&] { return sum(mul(softmax_rows(sq), sq)); }, {sq});
    check("softmax causal", [&] { return sum(mul(softmax_rows(sq, true), sq)); }, {sq});
    check("embedding", [&] { return sum(mul(embedding(table, ids), embedding(table, ids))); }, {table});
    check("slice/concat", [&] {
        auto s1 = slice_cols(a, 0, 2);
        auto s2 = slice_cols(a, 2, 2);
        return sum(mul(concat_cols<double>({s2, s1}), c));
    }, {a});
    check("mse", [&] { return mse_loss(mul(a, a), c); }, {a});
    check("cross_entropy", [&] { return cross_entropy(matmul(randu({3, 4}, rng).clone(), b), tgt); }, {});
    Td logits_in = randu({3, 4}, rng);
    check("cross_entropy grads", [&] { return cross_entropy(matmul(logits_in, b), tgt); }, {logits_in, b});
    check("mean", [&] { return mean(mul(a, a)); }, {a});
}

TEST_CASE("finite differences, 32-bit tolerance") {
    Rng rng(5);
    Tf a({3, 4});
    Tf b({4, 3});
    for (long i = 0; i < a.numel(); ++i) a.at(i) = static_cast<float>(rng.normal());
    for (long i = 0; i < b.numel(); ++i) b.at(i) = static_cast<float>(rng.normal());
    auto f = [&] { return mean(mul(matmul(a, b), matmul(a, b))); };
    auto r = umc::testing::fd_check<float>(f, {a, b}, 5e-2);
    CHECK(r.max_rel_err < 1e-3);
}

TEST_CASE("parallel kernels match serial bitwise") {
    Rng rng(9);
    const int m = 13, k = 17, n = 11;
    std::vector<double> a(m * k), b(k * n), bt(n * k);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    for (auto& x : bt) x = rng.normal();

    std::vector<double> cs(m * n), cp(m * n);
    kernels::mm_nn_serial(a.data(), b.data(), cs.data(), m, k, n, false);
    kernels::mm_nn_parallel(a.data(), b.data(), cp.data(), m, k, n, false);
    CHECK(cs == cp);

    kernels::mm_nt_serial(a.data(), bt.data(), cs.data(), m, k, n, false);
    kernels::mm_nt_parallel(a.data(), bt.data(), cp.data(), m, k, n, false);
    CHECK(cs == cp);

    std::vector<double> ds(k * n), dp(k * n);
    std::vector<double> a2(m * k), b2(m * n);
    for (auto& x : a2) x = rng.normal();
    for (auto& x : b2) x = rng.normal();
    kernels::mm_tn_serial(a2.data(), b2.data(), ds.data(), m, k, n, false);
    kernels::mm_tn_parallel(a2.data(), b2.data(), dp.data(), m, k, n, false);
    CHECK(ds == dp);
}

TEST_CASE("finite outputs after forward/backward") {
    Rng rng(21);
    Td a = randu({4, 4}, rng);
    a.set_requires_grad(true);
    GradientTape<double> tape;
    Td out = rmsnorm(silu(matmul(a, a)), randu({4}, rng));
    Td loss = mean(mul(out, out));
    tape.backward(loss);
    CHECK(out.all_finite());
    for (double g : a.grad()) CHECK(std::isfinite(g));
}
