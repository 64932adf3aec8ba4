#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tsf/fft.hpp"
#include "tsf/tensor.hpp"

#include <cmath>
#include <cstring>
#include <vector>

using namespace tsf;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// independent oracle: naive triple-loop matmul
std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
            }
            c[static_cast<std::size_t>(i) * n + j] = acc;
        }
    }
    return c;
}

} // namespace

TEST_CASE("tensor construction and invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);

    Tensor v({2, 2}, {1, 2, 3, 4});
    CHECK(v.at({1, 0}) == 3.0);
    CHECK(v.all_finite());
}

TEST_CASE("matmul: identity, projector, oracle") {
    Tape tape;
    Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    Var m = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Var r = tape.matmul(eye, m);
    CHECK(tape.value(r) == std::vector<double>{1, 2, 3, 4});

    Var proj = tape.constant(Tensor({2, 2}, {1, 0, 0, 0}));
    Var m2 = tape.constant(Tensor({2, 2}, {5, 6, 7, 8}));
    Var r2 = tape.matmul(proj, m2);
    CHECK(tape.value(r2) == std::vector<double>{5, 6, 0, 0});

    Tensor a = random_tensor({3, 2}, 7);
    Tensor b = random_tensor({2, 4}, 8);
    Var va = tape.constant(a);
    Var vb = tape.constant(b);
    Var vc = tape.matmul(va, vb);
    const auto expect = matmul_oracle(a.data(), b.data(), 3, 2, 4);
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(tape.value(vc)[i] == doctest::Approx(expect[i]).epsilon(1e-14));
    }

    CHECK_THROWS_AS(tape.matmul(va, va), ShapeError);
}

TEST_CASE("softmax: symmetry, overflow safety, direct formula") {
    Tape tape;
    Var x = tape.constant(Tensor({3}, {1, 1, 1}));
    Var s = tape.softmax(x, 0);
    for (double v : tape.value(s)) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    Var big = tape.constant(Tensor({2}, {0, 1000}));
    Var sb = tape.softmax(big, 0);
    CHECK(tape.value(sb)[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(tape.value(sb)[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(tape.all_finite(sb));

    // direct e^x / sum e^x evaluation
    Var t = tape.constant(Tensor({3}, {1, 2, 3}));
    Var st = tape.softmax(t, 0);
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(tape.value(st)[0] == doctest::Approx(std::exp(1.0) / denom).epsilon(1e-14));
    CHECK(tape.value(st)[1] == doctest::Approx(std::exp(2.0) / denom).epsilon(1e-14));
    CHECK(tape.value(st)[2] == doctest::Approx(std::exp(3.0) / denom).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one and are shift-invariant") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Tensor x = random_tensor({4, 5}, 100 + seed, -3.0, 3.0);
        Tape tape;
        Var vx = tape.constant(x);
        Var s = tape.softmax(vx, 1);
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 5; ++j) sum += tape.value(s)[static_cast<std::size_t>(i) * 5 + j];
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
        // adding a constant to a row leaves the softmax unchanged
        Tensor shifted = x;
        for (int j = 0; j < 5; ++j) shifted.data()[j] += 17.25;
        Var vs = tape.constant(shifted);
        Var s2 = tape.softmax(vs, 1);
        for (int j = 0; j < 5; ++j) {
            CHECK(std::abs(tape.value(s2)[static_cast<std::size_t>(j)] -
                           tape.value(s)[static_cast<std::size_t>(j)]) < 1e-12);
        }
    }
}

TEST_CASE("elementwise: basics, broadcast oracle, error contracts") {
    Tape tape;
    Var a = tape.constant(Tensor({2}, {1, 2}));
    Var b = tape.constant(Tensor({2}, {3, 4}));
    CHECK(tape.value(tape.add(a, b)) == std::vector<double>{4, 6});

    Tensor x = random_tensor({2, 3}, 3);
    Var vx = tape.constant(x);
    Var ones = tape.constant(Tensor::ones({2, 3}));
    CHECK(tape.value(tape.mul(vx, ones)) == x.data());

    // broadcast add [2x3] + [1x3]: explicit expansion oracle
    Tensor row = random_tensor({1, 3}, 4);
    Var vrow = tape.constant(row);
    Var sum = tape.add(vx, vrow);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            const double expect = x.data()[static_cast<std::size_t>(i) * 3 + j] + row.data()[static_cast<std::size_t>(j)];
            CHECK(tape.value(sum)[static_cast<std::size_t>(i) * 3 + j] == doctest::Approx(expect).epsilon(1e-15));
        }
    }

    Var zero = tape.constant(Tensor({2}, {0, 1}));
    CHECK_THROWS_AS(tape.div(a, zero), NumericError);
    Var nonpos = tape.constant(Tensor({2}, {-1, 2}));
    CHECK_THROWS_AS(tape.log(nonpos), NumericError);
    Var big = tape.constant(Tensor({1}, {1e9}));
    CHECK_THROWS_AS(tape.exp(big), NumericError);

    Var bad = tape.constant(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS_AS(tape.add(a, bad), ShapeError);
}

TEST_CASE("activations: relu, sigmoid, gelu oracle") {
    Tape tape;
    Var x = tape.constant(Tensor({3}, {-1, 0, 2}));
    CHECK(tape.value(tape.relu(x)) == std::vector<double>{0, 0, 2});

    Var z = tape.constant(Tensor({1}, {0}));
    CHECK(tape.scalar_value(tape.sigmoid(z)) == doctest::Approx(0.5).epsilon(1e-15));

    // gelu(1) from the tanh-approximation formula evaluated directly
    Var one = tape.constant(Tensor({1}, {1.0}));
    const double u = std::sqrt(2.0 / M_PI) * (1.0 + 0.044715);
    const double expect = 0.5 * (1.0 + std::tanh(u));
    CHECK(tape.scalar_value(tape.gelu(one)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("reduce: mean, max with argmax tie rule, sum oracle") {
    Tape tape;
    Var x = tape.constant(Tensor({3}, {2, 4, 6}));
    CHECK(tape.scalar_value(tape.reduce_mean(x, 0)) == doctest::Approx(4.0));

    Var ties = tape.constant(Tensor({3}, {1, 3, 3}));
    Var mx = tape.reduce_max(ties, 0);
    CHECK(tape.scalar_value(mx) == doctest::Approx(3.0));
    CHECK(tape.argmax(mx)[0] == 1); // first occurrence wins

    Tensor r = random_tensor({2, 3}, 5);
    Var vr = tape.constant(r);
    Var s0 = tape.reduce_sum(vr, 0);
    for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int i = 0; i < 2; ++i) acc += r.data()[static_cast<std::size_t>(i) * 3 + j];
        CHECK(tape.value(s0)[static_cast<std::size_t>(j)] == doctest::Approx(acc).epsilon(1e-15));
    }
}

TEST_CASE("structural ops forward semantics") {
    Tape tape;
    Tensor m({3, 2}, {1, 2, 3, 4, 5, 6});
    Var v = tape.constant(m);

    CHECK(tape.value(tape.transpose(v)) == std::vector<double>{1, 3, 5, 2, 4, 6});
    CHECK(tape.value(tape.slice_rows(v, 1, 2)) == std::vector<double>{3, 4, 5, 6});
    CHECK(tape.value(tape.slice_cols(v, 1, 1)) == std::vector<double>{2, 4, 6});
    CHECK(tape.value(tape.pick_rows(v, {2, 0})) == std::vector<double>{5, 6, 1, 2});
    CHECK(tape.value(tape.roll_rows(v, 1)) == std::vector<double>{3, 4, 5, 6, 1, 2});
    CHECK(tape.value(tape.cumsum_rows(v)) == std::vector<double>{1, 2, 4, 6, 9, 12});

    Var rows = tape.constant(Tensor({1, 2}, {9, 9}));
    CHECK(tape.value(tape.scatter_rows(v, rows, {1})) == std::vector<double>{1, 2, 9, 9, 5, 6});
    CHECK_THROWS_AS(tape.scatter_rows(v, tape.constant(Tensor({2, 2}, {0, 0, 0, 0})), {1, 1}),
                    ShapeError);

    Var cat = tape.concat_rows({tape.slice_rows(v, 0, 1), tape.slice_rows(v, 2, 1)});
    CHECK(tape.value(cat) == std::vector<double>{1, 2, 5, 6});
}

TEST_CASE("dft: delta, constant, fast equals naive, round trip, Parseval") {
    std::vector<cdouble> delta = {1, 0, 0, 0};
    auto spec = dft(delta);
    for (const auto& c : spec) {
        CHECK(c.real() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(c.imag() == doctest::Approx(0.0).epsilon(1e-12));
    }

    std::vector<cdouble> flat = {1, 1, 1, 1};
    auto spec2 = dft(flat);
    CHECK(spec2[0].real() == doctest::Approx(4.0));
    for (std::size_t k = 1; k < 4; ++k) CHECK(std::abs(spec2[k]) < 1e-12);

    Rng rng(11);
    std::vector<cdouble> x(16);
    for (auto& c : x) c = cdouble(rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto fast = dft(x);
    auto naive = dft_naive(x, false);
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(fast[k] - naive[k]) < 1e-9);

    // round-trip and Parseval up to n = 4096
    for (std::size_t n : {64u, 1000u, 4096u}) {
        std::vector<cdouble> sig(n);
        for (auto& c : sig) c = cdouble(rng.uniform(-1, 1), rng.uniform(-1, 1));
        auto back = idft(dft(sig));
        double max_err = 0.0;
        for (std::size_t i = 0; i < n; ++i) max_err = std::max(max_err, std::abs(back[i] - sig[i]));
        CHECK(max_err < 1e-9);

        double time_energy = 0.0, freq_energy = 0.0;
        auto spec3 = dft(sig);
        for (std::size_t i = 0; i < n; ++i) {
            time_energy += std::norm(sig[i]);
            freq_energy += std::norm(spec3[i]);
        }
        CHECK(std::abs(time_energy - freq_energy / static_cast<double>(n)) <
              1e-9 * std::max(1.0, time_energy));
    }

    CHECK_THROWS_AS(dft({}), NumericError);
}

TEST_CASE("backward: sum and quadratic closed forms") {
    Param x = make_param(Tensor({3}, {5, -2, 7}));
    x->set_requires_grad(true);
    Tape tape;
    Var vx = tape.leaf(x);
    Var loss = tape.sum_all(vx);
    tape.backward(loss);
    CHECK(x->grad() == std::vector<double>{1, 1, 1});

    Param y = make_param(Tensor({2}, {1, 2}));
    y->set_requires_grad(true);
    Tape tape2;
    Var vy = tape2.leaf(y);
    Var loss2 = tape2.sum_all(tape2.mul(vy, vy));
    tape2.backward(loss2);
    CHECK(y->grad() == std::vector<double>{2, 4});

    // repeated backward accumulates
    tape2.backward(loss2);
    CHECK(y->grad() == std::vector<double>{4, 8});

    // non-scalar loss rejected
    CHECK_THROWS_AS(tape2.backward(vy), ShapeError);

    // var from another tape rejected
    Tape tape3;
    CHECK_THROWS_AS(tape3.backward(loss2), NumericError);
}

TEST_CASE("grad_check: identity-sum, softmax-sum, composite attention math") {
    auto ident = [](Tape& t, Var x) { return t.sum_all(x); };
    CHECK(grad_check1(ident, random_tensor({4}, 21)) < 1e-10);

    auto soft = [](Tape& t, Var x) { return t.sum_all(t.softmax(x, 0)); };
    CHECK(grad_check1(soft, random_tensor({5}, 22)) < 1e-6);

    // scaled-dot attention composed from primitives on 4x2 tensors
    auto attn = [](Tape& t, const std::vector<Var>& in) {
        Var q = in[0], k = in[1], v = in[2];
        Var scores = t.scale(t.matmul(q, t.transpose(k)), 1.0 / std::sqrt(2.0));
        Var w = t.softmax(scores, 1);
        return t.sum_all(t.mul(t.matmul(w, v), in[3]));
    };
    std::vector<Tensor> ins = {random_tensor({4, 2}, 31), random_tensor({4, 2}, 32),
                               random_tensor({4, 2}, 33), random_tensor({4, 2}, 34)};
    CHECK(grad_check(attn, ins) < 1e-4);
}

TEST_CASE("every differentiable op passes finite-difference checks over seeds") {
    struct Case {
        const char* name;
        TensorFn fn;
        std::vector<Shape> shapes;
    };
    auto weighted = [](Tape& t, Var v, std::uint64_t salt) {
        // project to scalar with a fixed random weighting so every output matters
        Rng rng(9000 + salt);
        Tensor w = Tensor::uniform(t.shape(v), rng, -1.0, 1.0);
        return t.sum_all(t.mul(v, t.constant(w)));
    };
    const std::vector<Case> cases = {
        {"add", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.add(x[0], x[1]), 1); }, {{3, 4}, {3, 4}}},
        {"add_broadcast", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.add(x[0], x[1]), 2); }, {{3, 4}, {1, 4}}},
        {"sub", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.sub(x[0], x[1]), 3); }, {{2, 3}, {2, 3}}},
        {"mul_broadcast", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.mul(x[0], x[1]), 4); }, {{3, 4}, {3, 1}}},
        {"div", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.div(x[0], t.add_scalar(x[1], 3.0)), 5); }, {{2, 3}, {2, 3}}},
        {"neg", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.neg(x[0]), 6); }, {{4}}},
        {"exp", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.exp(x[0]), 7); }, {{4}}},
        {"log", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.log(t.add_scalar(x[0], 2.0)), 8); }, {{4}}},
        {"sqrt", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.sqrt(t.add_scalar(x[0], 2.0)), 9); }, {{4}}},
        {"scale", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.scale(x[0], -2.5), 10); }, {{4}}},
        {"relu", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.relu(x[0]), 11); }, {{6}}},
        {"gelu", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.gelu(x[0]), 12); }, {{6}}},
        {"sigmoid", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.sigmoid(x[0]), 13); }, {{6}}},
        {"tanh", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.tanh(x[0]), 14); }, {{6}}},
        {"matmul", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.matmul(x[0], x[1]), 15); }, {{3, 2}, {2, 4}}},
        {"transpose", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.transpose(x[0]), 16); }, {{3, 2}}},
        {"reshape", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.reshape(x[0], {6}), 17); }, {{2, 3}}},
        {"slice_rows", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.slice_rows(x[0], 1, 2), 18); }, {{4, 3}}},
        {"slice_cols", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.slice_cols(x[0], 1, 2), 19); }, {{4, 3}}},
        {"concat_rows", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.concat_rows({x[0], x[1]}), 20); }, {{2, 3}, {1, 3}}},
        {"concat_cols", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.concat_cols({x[0], x[1]}), 21); }, {{2, 3}, {2, 1}}},
        {"pick_rows", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.pick_rows(x[0], {2, 0, 2}), 22); }, {{3, 2}}},
        {"scatter_rows", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.scatter_rows(x[0], x[1], {0, 3}), 23); }, {{4, 2}, {2, 2}}},
        {"roll_rows", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.roll_rows(x[0], 2), 24); }, {{5, 2}}},
        {"cumsum_rows", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.cumsum_rows(x[0]), 25); }, {{4, 2}}},
        {"softmax", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.softmax(x[0], 1), 26); }, {{3, 4}}},
        {"reduce_sum", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.reduce_sum(x[0], 0), 27); }, {{3, 4}}},
        {"reduce_mean", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.reduce_mean(x[0], 1), 28); }, {{3, 4}}},
        {"reduce_max", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.reduce_max(x[0], 1), 29); }, {{3, 4}}},
        {"conv1d", [&](Tape& t, const std::vector<Var>& x) { return weighted(t, t.conv1d(x[0], x[1], 1, 1), 30); }, {{1, 2, 6}, {3, 2, 3}}},
    };

    for (const auto& c : cases) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            std::vector<Tensor> inputs;
            for (std::size_t s = 0; s < c.shapes.size(); ++s) {
                inputs.push_back(random_tensor(c.shapes[s], seed * 100 + s + 1));
            }
            worst = std::max(worst, grad_check(c.fn, inputs));
        }
        INFO(c.name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("tape replay reproduces recorded values bitwise") {
    Param p = make_param(random_tensor({4, 4}, 77));
    p->set_requires_grad(true);
    Tape tape;
    Var x = tape.leaf(p);
    Var y = tape.softmax(tape.matmul(x, tape.transpose(x)), 1);
    Var z = tape.reduce_mean(tape.gelu(y), 0);
    Var loss = tape.sum_all(z);

    const std::vector<double> v1 = tape.value(y);
    const std::vector<double> v2 = tape.value(loss);
    tape.replay();
    CHECK(std::memcmp(tape.value(y).data(), v1.data(), v1.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(tape.value(loss).data(), v2.data(), v2.size() * sizeof(double)) == 0);
}

TEST_CASE("grad_check rejects non-scalar outputs") {
    auto vec = [](Tape&, const std::vector<Var>& x) { return x[0]; };
    CHECK_THROWS_AS(grad_check(vec, {random_tensor({3}, 1)}), ShapeError);
}
