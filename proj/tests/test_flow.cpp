#include "support.hpp"

#include "gdro/flow.hpp"

#include <doctest.h>

#include <algorithm>

using namespace gdro;
using gdro::testing::random_net;

namespace {

Vector v2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

/// Output layer that reproduces a fixed velocity regardless of input.
ParamSet constant_field(const Vector& velocity, int input_dim) {
    auto p = ParamSet::zeros({{4, input_dim}, {2, 4}});
    p.layers()[1].bias = velocity;
    return p;
}

}  // namespace

TEST_CASE("perturb: endpoints and midpoint arithmetic") {
    const auto a = perturb(v2(1, 0), v2(0, 1), 0.5);
    CHECK(a.x_t == v2(0.5, 0.5));
    CHECK(a.v_target == v2(-1, 1));

    KeyedRng rng(1);
    for (int i = 0; i < 200; ++i) {
        const Vector x0 = v2(rng.normal(), rng.normal());
        const Vector eps = v2(rng.normal(), rng.normal());
        CHECK(perturb(x0, eps, 0.0).x_t == x0);
        CHECK(perturb(x0, eps, 1.0).x_t == eps);
    }
    CHECK_THROWS_AS(perturb(v2(0, 0), v2(0, 0), 1.5), std::invalid_argument);
    CHECK_THROWS_AS(perturb(v2(0, 0), v2(0, 0), -0.1), std::invalid_argument);
    CHECK_THROWS_AS(perturb(v2(0, 0), Vector::Zero(3), 0.5), ShapeError);
}

TEST_CASE("network_input: concat of x_t, t and one-hot condition") {
    const Vector in = network_input(v2(0.25, -1.0), 0.4, 2, 4);
    CHECK(in.size() == 7);
    CHECK(in(0) == 0.25);
    CHECK(in(1) == -1.0);
    CHECK(in(2) == 0.4);
    CHECK(in(3) == 0.0);
    CHECK(in(4) == 0.0);
    CHECK(in(5) == 1.0);
    CHECK(in(6) == 0.0);
    CHECK_THROWS(network_input(v2(0, 0), 0.4, 4, 4));
}

TEST_CASE("flow_matching_loss: planted, zero and hand-computed cases") {
    const int nc = 3;
    const Vector x0 = v2(0.3, -0.8);
    const Vector eps = v2(1.1, 0.4);
    const std::vector<Example> batch{{x0, 1}};
    const std::vector<FlowDraw> draws{{0.6, eps}};

    // exact prediction: the output layer emits v_target
    CHECK(flow_matching_loss(constant_field(eps - x0, 2 + 1 + nc), batch, draws, nc) == 0.0);

    const auto zero = ParamSet::zeros({{4, 2 + 1 + nc}, {2, 4}});
    const std::vector<Example> origin{{v2(0, 0), 0}};
    const std::vector<FlowDraw> origin_draw{{0.3, v2(0, 0)}};
    CHECK(flow_matching_loss(zero, origin, origin_draw, nc) == 0.0);

    const double expected = (1.1 - 0.3) * (1.1 - 0.3) + (0.4 + 0.8) * (0.4 + 0.8);
    CHECK(flow_matching_loss(zero, batch, draws, nc) == doctest::Approx(expected).epsilon(1e-15));

    CHECK_THROWS_AS(flow_matching_loss(zero, std::vector<Example>{}, std::vector<FlowDraw>{}, nc),
                    std::invalid_argument);
}

TEST_CASE("flow_matching_loss: invariant under batch permutation") {
    const int nc = 4;
    const auto p = random_net(gdro::testing::small_widths(nc, 8), 2);
    KeyedRng rng(3);
    std::vector<Example> batch;
    std::vector<FlowDraw> draws;
    for (int i = 0; i < 9; ++i) {
        batch.push_back({v2(rng.normal(), rng.normal()), static_cast<int>(rng.below(nc))});
        draws.push_back({rng.uniform(0.01, 0.99), v2(rng.normal(), rng.normal())});
    }
    const double base = flow_matching_loss(p, batch, draws, nc);
    std::vector<std::size_t> order{8, 3, 0, 5, 1, 7, 2, 6, 4};
    std::vector<Example> pb;
    std::vector<FlowDraw> pd;
    for (auto i : order) {
        pb.push_back(batch[i]);
        pd.push_back(draws[i]);
    }
    CHECK(flow_matching_loss(p, pb, pd, nc) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("flow_matching_loss: rng overload draws t inside the configured bounds") {
    const int nc = 2;
    const auto p = random_net(gdro::testing::small_widths(nc), 7);
    const std::vector<Example> batch{{v2(1, 0), 0}, {v2(0, 1), 1}};
    FlowConfig cfg;
    KeyedRng a(5), b(5);
    CHECK(flow_matching_loss(p, batch, cfg, a, nc) == flow_matching_loss(p, batch, cfg, b, nc));
    KeyedRng c(6);
    for (int i = 0; i < 1000; ++i) {
        const auto d = draw_flow(cfg, c);
        CHECK(d.t >= cfg.t_min);
        CHECK(d.t <= cfg.t_max);
    }
}

TEST_CASE("euler_sample: constant and zero fields") {
    const VelocityField ones = [](const Vector&, double, int) { return v2(1, 1); };
    const VelocityField zero = [](const Vector&, double, int) { return v2(0, 0); };
    for (int steps : {1, 3, 28}) {
        const Vector x = euler_sample(ones, 0, v2(0, 0), steps);
        CHECK(x(0) == doctest::Approx(-1.0).epsilon(1e-14));
        CHECK(x(1) == doctest::Approx(-1.0).epsilon(1e-14));
        CHECK(euler_sample(zero, 0, v2(0.3, -2.0), steps) == v2(0.3, -2.0));
    }
    CHECK_THROWS_AS(euler_sample(zero, 0, v2(0, 0), 0), std::invalid_argument);
}

TEST_CASE("euler_sample: planted straight-path field recovers x0") {
    KeyedRng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x0 = v2(rng.normal(), rng.normal());
        const Vector eps = v2(rng.normal(), rng.normal());
        const VelocityField field = [&](const Vector&, double, int) { return Vector(eps - x0); };
        for (int steps : {1, 7, 28}) CHECK((euler_sample(field, 0, eps, steps) - x0).norm() < 1e-12);
    }
}

TEST_CASE("euler_sample: time grid runs from 1 down to 0") {
    std::vector<double> ts;
    const VelocityField record = [&](const Vector&, double t, int) {
        ts.push_back(t);
        return v2(0, 0);
    };
    euler_sample(record, 0, v2(0, 0), 4);
    REQUIRE(ts.size() == 4);
    CHECK(ts[0] == 1.0);
    CHECK(ts[1] == 0.75);
    CHECK(ts[2] == 0.5);
    CHECK(ts[3] == 0.25);
}

TEST_CASE("euler_sample: network overloads agree and are deterministic") {
    const int nc = 3;
    const auto p = random_net(gdro::testing::small_widths(nc, 8), 9);
    Matrix noise(2, 4);
    noise << 0.1, -1.2, 0.7, 2.0, 0.5, 0.3, -0.9, -0.4;
    const std::vector<int> conds{0, 2, 1, 2};
    const Matrix batch = euler_sample_batch(p, conds, noise, 28, nc);
    for (int b = 0; b < 4; ++b)
        CHECK(euler_sample(p, conds[static_cast<std::size_t>(b)], Vector(noise.col(b)), 28, nc) == Vector(batch.col(b)));
    CHECK(euler_sample_batch(p, conds, noise, 28, nc) == batch);
}

TEST_CASE("euler_sample: non-finite state reports the step") {
    const VelocityField blowup = [](const Vector& x, double, int) { return Vector(-1e300 * (x.array() + 1.0).matrix()); };
    try {
        euler_sample(blowup, 0, v2(1, 1), 10);
        FAIL("expected SamplerError");
    } catch (const SamplerError& e) {
        CHECK(e.step() >= 0);
        CHECK(e.step() < 10);
    }
}

TEST_CASE("pretrain: zero steps returns the initialization") {
    PretrainConfig cfg;
    cfg.model.hidden_width = 8;
    cfg.steps = 0;
    const auto data = generate_dataset(cfg.task, 64, 1);
    const auto res = pretrain(cfg, data);
    CHECK(res.params == initial_params(cfg));
    CHECK(res.losses.empty());
}

TEST_CASE("pretrain: loss decreases, run is deterministic, log is CSV") {
    PretrainConfig cfg;
    cfg.model.hidden_width = 32;
    cfg.model.hidden_layers = 2;
    cfg.steps = 300;
    cfg.batch_size = 64;
    cfg.seed = 4;
    const auto data = generate_dataset(cfg.task, 2048, cfg.seed);
    const auto a = pretrain(cfg, data);
    const auto b = pretrain(cfg, data);
    CHECK(a.params == b.params);
    REQUIRE(a.losses.size() == 300);

    // compare mean loss over the first and last 50 steps to smooth batch noise
    double head = 0, tail = 0;
    for (int i = 0; i < 50; ++i) {
        head += a.losses[static_cast<std::size_t>(i)].loss;
        tail += a.losses[a.losses.size() - 1 - static_cast<std::size_t>(i)].loss;
    }
    CHECK(tail < head);

    const auto csv = loss_log_csv(a.losses);
    CHECK(csv.rfind("step,loss\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 301);
}

TEST_CASE("FlowConfig: validation") {
    FlowConfig ok;
    CHECK_NOTHROW(ok.validate());
    FlowConfig bad = ok;
    bad.t_min = 0.0;
    CHECK_THROWS(bad.validate());
    bad = ok;
    bad.total_timesteps = 0;
    CHECK_THROWS(bad.validate());
}
