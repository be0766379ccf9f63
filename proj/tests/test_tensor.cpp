#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include "bevkit/common.hpp"
#include "bevkit/ops.hpp"
#include "bevkit/optim.hpp"
#include "bevkit/tensor.hpp"

using namespace bevkit;

namespace {

template <typename T>
Tensor<T> rand_tensor(std::vector<int> shape, std::uint64_t seed, const std::string& tag,
                      bool requires_grad, double lo = -1.0, double hi = 1.0) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    auto rng = make_rng(seed, tag);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t->data) v = static_cast<T>(u(rng));
    return t;
}

// Values bounded away from zero, for kinked ops (relu, abs).
template <typename T>
Tensor<T> rand_tensor_away_from_zero(std::vector<int> shape, std::uint64_t seed,
                                     const std::string& tag, bool requires_grad) {
    auto t = rand_tensor<T>(std::move(shape), seed, tag, requires_grad, 0.2, 1.0);
    auto rng = make_rng(seed, tag + ".sign");
    for (auto& v : t->data)
        if (rng() & 1) v = -v;
    return t;
}

// Projects an arbitrary tensor to a scalar with a fixed random functional.
template <typename T>
Tensor<T> to_scalar(const Tensor<T>& x, std::uint64_t seed) {
    auto w = rand_tensor<T>(x->shape, seed, "to_scalar", false);
    return sum_all(elementwise_mul(x, w));
}

}  // namespace

TEST_CASE("conv2d matches hand cases", "[tensor]") {
    SECTION("1x1 identity kernel is the identity") {
        auto x = rand_tensor<double>({3, 5, 7}, 1, "conv.id", false);
        auto w = make_tensor<double>({3, 3, 1, 1});
        for (int k = 0; k < 3; ++k) w->data[(k * 3 + k)] = 1.0;
        auto b = make_tensor<double>({3});
        auto y = conv2d(x, w, b, 1, 0);
        REQUIRE(y->shape == x->shape);
        for (std::size_t i = 0; i < y->data.size(); ++i) REQUIRE(y->data[i] == x->data[i]);
    }
    SECTION("kernel 4 stride 2 pad 1 halves an 8x8 input") {
        auto x = rand_tensor<double>({2, 8, 8}, 2, "conv.c421", false);
        auto w = rand_tensor<double>({5, 2, 4, 4}, 3, "conv.c421.w", false);
        auto b = make_tensor<double>({5});
        auto y = conv2d(x, w, b, 2, 1);
        REQUIRE(y->shape == std::vector<int>{5, 4, 4});
    }
    SECTION("2x2 ones kernel on [[1,2],[3,4]] gives [[10]]") {
        auto x = make_tensor<double>({1, 2, 2}, {1, 2, 3, 4});
        auto w = make_tensor<double>({1, 1, 2, 2}, {1, 1, 1, 1});
        auto b = make_tensor<double>({1});
        auto y = conv2d(x, w, b, 1, 0);
        REQUIRE(y->shape == std::vector<int>{1, 1, 1});
        REQUIRE(y->data[0] == 10.0);
    }
    SECTION("channel mismatch is rejected") {
        auto x = make_tensor<double>({2, 4, 4});
        auto w = make_tensor<double>({1, 3, 2, 2});
        auto b = make_tensor<double>({1});
        CHECK_THROWS_AS(conv2d(x, w, b), std::invalid_argument);
    }
}

TEST_CASE("linear matches hand cases", "[tensor]") {
    SECTION("identity weight and zero bias") {
        auto x = rand_tensor<double>({4, 3}, 4, "lin.id", false);
        auto w = make_tensor<double>({3, 3});
        for (int i = 0; i < 3; ++i) w->data[i * 3 + i] = 1.0;
        auto b = make_tensor<double>({3});
        auto y = linear(x, w, b);
        REQUIRE(y->data == x->data);
    }
    SECTION("hand matmul") {
        auto x = make_tensor<double>({2}, {1, 2});
        auto w = make_tensor<double>({2, 2}, {1, 0, 0, 2});
        auto b = make_tensor<double>({2}, {1, 1});
        auto y = linear(x, w, b);
        REQUIRE(y->data == std::vector<double>{2, 5});
    }
    SECTION("zero input broadcasts the bias") {
        auto x = make_tensor<double>({3, 2});
        auto w = rand_tensor<double>({2, 5}, 5, "lin.zero", false);
        auto b = make_tensor<double>({5}, {1, 2, 3, 4, 5});
        auto y = linear(x, w, b);
        for (int r = 0; r < 3; ++r)
            for (int j = 0; j < 5; ++j) REQUIRE(y->data[r * 5 + j] == b->data[j]);
    }
    SECTION("dimension mismatch is rejected") {
        auto x = make_tensor<double>({3});
        auto w = make_tensor<double>({2, 2});
        auto b = make_tensor<double>({2});
        CHECK_THROWS_AS(linear(x, w, b), std::invalid_argument);
    }
}

TEST_CASE("norms and activations", "[tensor]") {
    SECTION("layer_norm of a constant vector is zero before affine") {
        auto x = make_tensor<double>({6}, std::vector<double>(6, 3.7));
        auto gamma = make_tensor<double>({6}, std::vector<double>(6, 1.0));
        auto beta = make_tensor<double>({6});
        auto y = layer_norm(x, gamma, beta, 0);
        for (double v : y->data) REQUIRE(v == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("silu value and derivative at zero") {
        auto x = make_tensor<double>({1}, {0.0}, true);
        auto y = silu(x);
        REQUIRE(y->data[0] == 0.0);
        backward(y);
        REQUIRE(x->grad[0] == Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("elementwise_mul by ones is the identity") {
        auto a = rand_tensor<double>({2, 3, 4}, 6, "ep.a", false);
        auto ones = make_tensor<double>({2, 3, 4}, std::vector<double>(24, 1.0));
        REQUIRE(elementwise_mul(a, ones)->data == a->data);
    }
}

TEST_CASE("cross_entropy matches hand values", "[tensor]") {
    SECTION("sharp one-hot logits drive the loss to zero") {
        auto logits = make_tensor<double>({4, 1, 1});
        logits->data = {100.0, 0.0, 0.0, 0.0};
        REQUIRE(cross_entropy(logits, {0})->data[0] < 1e-6);
    }
    SECTION("uniform logits over four classes give ln 4") {
        auto logits = make_tensor<double>({4, 2, 2});
        REQUIRE(cross_entropy(logits, {0, 1, 2, 3})->data[0] ==
                Catch::Approx(std::log(4.0)).margin(1e-12));
    }
    SECTION("two-class hand softmax") {
        auto logits = make_tensor<double>({2, 1, 1}, {1.0, 0.0});
        REQUIRE(cross_entropy(logits, {0})->data[0] ==
                Catch::Approx(std::log1p(std::exp(-1.0))).margin(1e-12));
    }
    SECTION("class id out of range is rejected") {
        auto logits = make_tensor<double>({2, 1, 1});
        CHECK_THROWS_AS(cross_entropy(logits, {2}), std::invalid_argument);
    }
}

TEST_CASE("grad_check frozen cases", "[tensor]") {
    SECTION("polynomial: f(x) = x^2 at x = 3") {
        auto x = make_tensor<double>({1}, {3.0}, true);
        auto f = [&]() { return elementwise_mul(x, x); };
        REQUIRE(grad_check<double>(f, {x}, 1e-5) < 1e-9);
        zero_grad(x);
        auto y = f();
        backward(y);
        REQUIRE(x->grad[0] == Catch::Approx(6.0).margin(1e-12));
    }
    SECTION("linear layer loss") {
        auto x = rand_tensor<double>({3, 4}, 7, "gc.lin.x", true);
        auto w = rand_tensor<double>({4, 5}, 8, "gc.lin.w", true);
        auto b = rand_tensor<double>({5}, 9, "gc.lin.b", true);
        auto f = [&]() { return to_scalar(linear(x, w, b), 10); };
        REQUIRE(grad_check<double>(f, {x, w, b}, 1e-5) < 1e-7);
    }
    SECTION("conv2d + relu chain away from kinks") {
        auto x = rand_tensor_away_from_zero<double>({2, 6, 6}, 11, "gc.conv.x", true);
        auto w = rand_tensor<double>({3, 2, 3, 3}, 12, "gc.conv.w", true);
        auto b = make_tensor<double>({3}, {1.0, 1.2, 1.4}, true);  // keeps pre-activations positive-ish
        auto f = [&]() { return to_scalar(relu(conv2d(x, w, b, 1, 1)), 13); };
        REQUIRE(grad_check<double>(f, {x, w, b}, 1e-5) < 1e-6);
    }
}

TEST_CASE("every primitive passes gradient checking", "[tensor][grad]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = make_rng(seed, "prim.shapes");
        const int c = 1 + static_cast<int>(rng() % 3);
        const int h = 2 + static_cast<int>(rng() % 4);
        const int w = 2 + static_cast<int>(rng() % 4);
        const double tol = 1e-5;

        auto a = rand_tensor<double>({c, h, w}, seed, "prim.a", true);
        auto b = rand_tensor<double>({c, h, w}, seed, "prim.b", true);

        auto check = [&](const char* name, const std::function<Tensor<double>()>& f,
                         std::vector<Tensor<double>> params) {
            const double err = grad_check<double>(f, params, 1e-5, 0, seed);
            INFO("primitive " << name << " seed " << seed);
            REQUIRE(err < tol);
        };

        check("add", [&] { return to_scalar(add(a, b), seed + 1); }, {a, b});
        check("sub", [&] { return to_scalar(sub(a, b), seed + 2); }, {a, b});
        check("elementwise_mul", [&] { return to_scalar(elementwise_mul(a, b), seed + 3); }, {a, b});
        check("scale", [&] { return to_scalar(scale(a, 1.7), seed + 4); }, {a});
        check("silu", [&] { return to_scalar(silu(a), seed + 5); }, {a});
        check("sigmoid", [&] { return to_scalar(sigmoid(a), seed + 6); }, {a});
        check("softplus", [&] { return to_scalar(softplus(a), seed + 7); }, {a});
        check("exp", [&] { return to_scalar(exp_t(a), seed + 8); }, {a});
        check("mean_all", [&] { return mean_all(a); }, {a});

        auto a_nz = rand_tensor_away_from_zero<double>({c, h, w}, seed, "prim.anz", true);
        check("relu", [&] { return to_scalar(relu(a_nz), seed + 9); }, {a_nz});
        check("abs", [&] { return to_scalar(abs_t(a_nz), seed + 10); }, {a_nz});

        // gather with a random permutation
        auto idx = std::make_shared<std::vector<std::uint32_t>>(a->numel());
        for (std::size_t i = 0; i < idx->size(); ++i) (*idx)[i] = static_cast<std::uint32_t>(i);
        std::shuffle(idx->begin(), idx->end(), rng);
        check("gather", [&] { return to_scalar(gather(a, idx, a->shape), seed + 11); }, {a});

        check("concat", [&] { return to_scalar(concat_channels<double>({a, b}), seed + 12); }, {a, b});

        auto cw = rand_tensor<double>({2, c, 3, 3}, seed, "prim.convw", true);
        auto cb = rand_tensor<double>({2}, seed, "prim.convb", true);
        check("conv2d", [&] { return to_scalar(conv2d(a, cw, cb, 2, 1), seed + 13); }, {a, cw, cb});

        auto dw = rand_tensor<double>({c, 1, 3, 3}, seed, "prim.dww", true);
        auto db = rand_tensor<double>({c}, seed, "prim.dwb", true);
        auto pw = rand_tensor<double>({2, c, 1, 1}, seed, "prim.pww", true);
        auto pb = rand_tensor<double>({2}, seed, "prim.pwb", true);
        check("depthwise_separable_conv",
              [&] { return to_scalar(depthwise_separable_conv(a, dw, db, pw, pb), seed + 14); },
              {a, dw, db, pw, pb});

        auto lw = rand_tensor<double>({w, 3}, seed, "prim.lw", true);
        auto lb = rand_tensor<double>({3}, seed, "prim.lb", true);
        check("linear", [&] { return to_scalar(linear(a, lw, lb), seed + 15); }, {a, lw, lb});

        auto gamma = rand_tensor<double>({c}, seed, "prim.gamma", true, 0.5, 1.5);
        auto beta = rand_tensor<double>({c}, seed, "prim.beta", true);
        check("layer_norm", [&] { return to_scalar(layer_norm(a, gamma, beta, 0), seed + 16); },
              {a, gamma, beta});

        auto run_mean = make_tensor<double>({c});
        auto run_var = make_tensor<double>({c}, std::vector<double>(c, 1.0));
        check("batch_norm.train", [&] {
            auto rm = make_tensor<double>({c}, std::vector<double>(run_mean->data));
            auto rv = make_tensor<double>({c}, std::vector<double>(run_var->data));
            return to_scalar(batch_norm(a, gamma, beta, rm, rv, true), seed + 17);
        }, {a, gamma, beta});
        {
            auto warm = batch_norm(a, gamma, beta, run_mean, run_var, true);
        }
        check("batch_norm.eval",
              [&] { return to_scalar(batch_norm(a, gamma, beta, run_mean, run_var, false), seed + 18); },
              {a, gamma, beta});

        check("avg_pool2d", [&] { return to_scalar(avg_pool2d(a, 2), seed + 19); }, {a});
        check("pad2d", [&] { return to_scalar(pad2d(a, 1, 2, 0, 1), seed + 20); }, {a});
        check("crop2d", [&] { return to_scalar(crop2d(a, 1, 1, h - 1, w - 1), seed + 21); }, {a});
        check("upsample_nearest2", [&] { return to_scalar(upsample_nearest2(a), seed + 22); }, {a});
        check("softmax_channels", [&] { return to_scalar(softmax_channels(a), seed + 23); }, {a});

        std::vector<int> target(static_cast<std::size_t>(h) * w);
        for (auto& t : target) t = static_cast<int>(rng() % c);
        check("cross_entropy", [&] { return cross_entropy(a, target); }, {a});

        std::vector<double> bce_target(a->numel());
        for (auto& t : bce_target) t = static_cast<double>(rng() % 1000) / 999.0;
        check("bce_with_logits", [&] { return bce_with_logits(a, bce_target); }, {a});
    }
}

TEST_CASE("conv and linear are linear in their inputs", "[tensor]") {
    auto w = rand_tensor<double>({3, 2, 3, 3}, 31, "lin.prop.w", false);
    auto b = make_tensor<double>({3});
    auto x1 = rand_tensor<double>({2, 5, 5}, 32, "lin.prop.x1", false);
    auto x2 = rand_tensor<double>({2, 5, 5}, 33, "lin.prop.x2", false);
    auto combo = make_tensor<double>({2, 5, 5});
    const double al = 0.6, be = -1.3;
    for (std::size_t i = 0; i < combo->data.size(); ++i)
        combo->data[i] = al * x1->data[i] + be * x2->data[i];

    auto y1 = conv2d(x1, w, b, 1, 1), y2 = conv2d(x2, w, b, 1, 1), yc = conv2d(combo, w, b, 1, 1);
    for (std::size_t i = 0; i < yc->data.size(); ++i)
        REQUIRE(yc->data[i] == Catch::Approx(al * y1->data[i] + be * y2->data[i]).margin(1e-6));
}

TEST_CASE("forward passes are bitwise deterministic", "[tensor]") {
    auto run = [] {
        ParamStore<float> p(123);
        auto x = make_tensor<float>({2, 6, 6});
        auto rng = make_rng(9, "det.x");
        for (auto& v : x->data) v = static_cast<float>(rng() % 100) / 50.0f;
        auto w = p.weight("w", {4, 2, 3, 3}, 18);
        auto b = p.zeros("b", {4});
        return to_scalar(silu(conv2d(x, w, b, 1, 1)), 77)->data[0];
    };
    REQUIRE(run() == run());
}

TEST_CASE("optimizer_step update rules", "[tensor]") {
    SECTION("sgd with momentum, first step") {
        ParamStore<double> store(1);
        auto p = store.zeros("p", {2});
        p->grad_data()[0] = 1.0;
        Optimizer<double> opt;
        opt.rule = OptRule::sgd_momentum;
        opt.schedule = LrSchedule::constant;
        opt.lr0 = 0.1;
        opt.step(store);
        REQUIRE(p->data[0] == Catch::Approx(-0.1).margin(1e-15));
        REQUIRE(p->data[1] == 0.0);
    }
    SECTION("cosine schedule hits lr_min at t = T") {
        Optimizer<double> opt;
        opt.schedule = LrSchedule::cosine;
        opt.lr0 = 2.5e-4;
        opt.lr_min = 1e-5;
        opt.t_max = 500;
        REQUIRE(opt.lr_at(0) == Catch::Approx(2.5e-4).margin(1e-18));
        REQUIRE(opt.lr_at(500) == Catch::Approx(1e-5).margin(1e-18));
        REQUIRE(opt.lr_at(800) == Catch::Approx(1e-5).margin(1e-18));
        REQUIRE(opt.lr_at(250) == Catch::Approx(1e-5 + 0.5 * (2.5e-4 - 1e-5)).margin(1e-12));
    }
    SECTION("adamw first step decreases a positive-gradient param") {
        ParamStore<double> store(1);
        auto p = store.constant("p", {1}, 0.5);
        p->grad_data()[0] = 1.0;
        Optimizer<double> opt;
        opt.rule = OptRule::adamw;
        opt.schedule = LrSchedule::constant;
        opt.lr0 = 1e-2;
        opt.step(store);
        REQUIRE(p->data[0] < 0.5);
        // hand Adam: mhat = 1, vhat = 1 -> step ~ lr * (1 / (1 + eps) + wd * p)
        const double expect = 0.5 - 1e-2 * (1.0 / (1.0 + 1e-8) + 0.01 * 0.5);
        REQUIRE(p->data[0] == Catch::Approx(expect).margin(1e-12));
    }
    SECTION("non-finite gradient names the offending path") {
        ParamStore<double> store(1);
        auto p = store.zeros("layer3.w", {1});
        p->grad_data()[0] = std::numeric_limits<double>::quiet_NaN();
        Optimizer<double> opt;
        CHECK_THROWS_WITH(opt.step(store), Catch::Matchers::ContainsSubstring("layer3.w"));
    }
}

TEST_CASE("checkpoint round trip restores params and optimizer state", "[tensor]") {
    namespace fs = std::filesystem;
    ParamStore<float> store(7);
    auto w = store.weight("enc.w", {3, 2}, 3);
    auto b = store.zeros("enc.b", {2});
    Optimizer<float> opt;
    opt.rule = OptRule::adamw;
    opt.lr0 = 1e-2;
    for (int s = 0; s < 3; ++s) {
        store.zero_grads();
        w->grad_data();
        b->grad_data();
        for (std::size_t i = 0; i < w->data.size(); ++i) w->grad[i] = 0.1f * (s + 1);
        for (std::size_t i = 0; i < b->data.size(); ++i) b->grad[i] = -0.2f;
        opt.step(store);
    }

    const auto path = fs::temp_directory_path() / "bevkit_test_ckpt.bkcp";
    save_checkpoint(store, &opt, path.string());

    ParamStore<float> fresh(999);  // different seed: loaded values must win
    auto w2 = fresh.weight("enc.w", {3, 2}, 3);
    auto b2 = fresh.zeros("enc.b", {2});
    Optimizer<float> opt2;
    load_checkpoint(fresh, &opt2, path.string());

    CHECK(w2->data == w->data);
    CHECK(b2->data == b->data);
    CHECK(opt2.step_count == 3);
    CHECK(opt2.m1.at("enc.w") == opt.m1.at("enc.w"));
    CHECK(opt2.m2.at("enc.w") == opt.m2.at("enc.w"));

    SECTION("shape mismatch is rejected") {
        ParamStore<float> wrong(1);
        wrong.weight("enc.w", {2, 2}, 2);
        wrong.zeros("enc.b", {2});
        CHECK_THROWS_AS(load_checkpoint<float>(wrong, nullptr, path.string()), std::runtime_error);
    }
    fs::remove(path);
}
