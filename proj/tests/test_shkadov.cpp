#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ppofilm/shkadov.hpp"

using namespace ppofilm;
using namespace ppofilm::shkadov;

namespace {

Grid make_grid(int n, double dx = 0.5) {
    Grid g;
    g.n = n;
    g.dx = dx;
    return g;
}

SolverConfig make_config(int n, double dx = 0.5, double delta = 0.1,
                         double eps = 0.0) {
    SolverConfig c;
    c.delta = delta;
    c.dt = 0.005;
    c.eps = eps;
    c.grid = make_grid(n, dx);
    return c;
}

double total_variation(const std::vector<double>& u) {
    double tv = 0.0;
    for (std::size_t i = 1; i < u.size(); ++i) tv += std::abs(u[i] - u[i - 1]);
    return tv;
}

}  // namespace

TEST_CASE("delta_from_physics matches the definition") {
    CHECK(delta_from_physics(1.0, 3.0) == doctest::Approx(1.0 / 15.0).epsilon(1e-12));
    // 3 Re^2 / W = (15 * 0.1)^3 = 3.375
    CHECK(delta_from_physics(1.5, 2.0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(delta_from_physics(0.0, 1.0), std::domain_error);
    CHECK_THROWS_AS(delta_from_physics(1.0, -2.0), std::domain_error);
}

TEST_CASE("minmod limiter") {
    CHECK(minmod(1.0, 2.0) == 1.0);
    CHECK(minmod(-1.0, 2.0) == 0.0);
    CHECK(minmod(-3.0, -2.0) == -2.0);
    CHECK(minmod(0.0, 5.0) == 0.0);
    CHECK(minmod(2.0, 1.0) == 1.0);
}

TEST_CASE("convective derivative: constant field") {
    const Grid grid = make_grid(32);
    const std::vector<double> f(32, 3.7), sign(32, 1.0);
    std::vector<double> out;
    convective_derivative(f, sign, grid, out);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("convective derivative: exact on linear data") {
    const Grid grid = make_grid(40);
    const double c = 1.3;
    std::vector<double> f(grid.n), sign(grid.n, 1.0);
    for (int i = 0; i < grid.n; ++i) f[i] = c * grid.x_of(i);
    std::vector<double> out;
    convective_derivative(f, sign, grid, out);
    for (int i = 2; i <= grid.n - 2; ++i)
        CHECK(out[i] == doctest::Approx(c).epsilon(1e-12));

    // Negative transport direction.
    std::fill(sign.begin(), sign.end(), -1.0);
    convective_derivative(f, sign, grid, out);
    for (int i = 1; i <= grid.n - 3; ++i)
        CHECK(out[i] == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("convective derivative: step field telescopes to the jump") {
    // Discrete conservation: sum of flux differences telescopes to the
    // boundary flux gap, which equals the jump height for a mid-domain step.
    const Grid grid = make_grid(64);
    std::vector<double> f(grid.n, 0.0), sign(grid.n, 1.0);
    for (int i = 32; i < grid.n; ++i) f[i] = 1.0;
    std::vector<double> out;
    convective_derivative(f, sign, grid, out);

    double integral = 0.0;
    for (int i = 0; i < grid.n; ++i) {
        integral += out[i] * grid.dx;
        if (i < 29 || i > 35) CHECK(out[i] == 0.0);
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("third derivative: polynomials") {
    const Grid grid = make_grid(64);
    std::vector<double> h(grid.n), out;

    for (int i = 0; i < grid.n; ++i) h[i] = 1.0;
    third_derivative(h, grid, out);
    for (double v : out) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    for (int i = 0; i < grid.n; ++i) h[i] = grid.x_of(i) * grid.x_of(i);
    third_derivative(h, grid, out);
    for (int i = 1; i <= grid.n - 4; ++i)
        CHECK(std::abs(out[i]) < 1e-10);

    for (int i = 0; i < grid.n; ++i) {
        const double x = grid.x_of(i);
        h[i] = x * x * x;
    }
    third_derivative(h, grid, out);
    for (int i = 1; i <= grid.n - 4; ++i)
        CHECK(out[i] == doctest::Approx(6.0).epsilon(1e-8));

    CHECK_THROWS_AS(third_derivative(std::vector<double>(4, 1.0), make_grid(4), out),
                    std::invalid_argument);
}

TEST_CASE("rhs: flat film is a fixed point") {
    const SolverConfig config = make_config(64);
    auto state = FilmState::flat(config.grid);
    const std::vector<double> forcing(config.grid.n, 0.0);
    RhsWorkspace ws;
    std::vector<double> dh, dq;
    rhs(state, forcing, config, ws, dh, dq);
    for (int i = 0; i < config.grid.n; ++i) {
        CHECK(dh[i] == doctest::Approx(0.0).epsilon(1e-14));
        CHECK(std::abs(dq[i]) < 1e-12);
    }
}

TEST_CASE("rhs: forcing is additive on the flow-rate equation only") {
    const SolverConfig config = make_config(64);
    auto state = FilmState::flat(config.grid);
    std::vector<double> forcing(config.grid.n, 0.0);
    forcing[20] = 0.25;
    RhsWorkspace ws;
    std::vector<double> dh, dq;
    rhs(state, forcing, config, ws, dh, dq);
    for (int i = 0; i < config.grid.n; ++i) {
        CHECK(dh[i] == doctest::Approx(0.0).epsilon(1e-14));
        if (i == 20)
            CHECK(dq[i] == doctest::Approx(0.25).epsilon(1e-12));
        else
            CHECK(std::abs(dq[i]) < 1e-12);
    }
}

TEST_CASE("rhs: height advection matches the analytic derivative") {
    // h = 1, q = 1 + a sin(kx) gives dh/dt = -a k cos(kx); the error must
    // shrink at the scheme's spatial order under grid refinement.
    const double a = 0.01;
    const double k = 2.0 * std::numbers::pi / 20.0;

    auto max_error = [&](double dx) {
        const int n = static_cast<int>(std::lround(100.0 / dx)) + 1;
        const SolverConfig config = make_config(n, dx);
        auto state = FilmState::flat(config.grid);
        for (int i = 0; i < n; ++i)
            state.q[i] = 1.0 + a * std::sin(k * config.grid.x_of(i));
        const std::vector<double> forcing(n, 0.0);
        RhsWorkspace ws;
        std::vector<double> dh, dq;
        rhs(state, forcing, config, ws, dh, dq);
        double err = 0.0;
        for (int i = 4; i < n - 4; ++i) {
            const double exact = -a * k * std::cos(k * config.grid.x_of(i));
            err = std::max(err, std::abs(dh[i] - exact));
        }
        return err;
    };

    const double coarse = max_error(0.5);
    const double fine = max_error(0.25);
    CHECK(coarse < 0.15 * a * k);  // already small on the production grid
    CHECK(fine < coarse / 1.8);    // converging at least ~first order near crests
}

TEST_CASE("ab2_step: flat film preserved to machine precision") {
    const SolverConfig config = make_config(180);
    auto state = FilmState::flat(config.grid);
    const std::vector<double> forcing(config.grid.n, 0.0);
    Rng rng(7);
    RhsWorkspace ws;
    for (int s = 0; s < 1000; ++s) ab2_step(state, forcing, config, rng, ws);
    for (int i = 0; i < config.grid.n; ++i) {
        CHECK(std::abs(state.h[i] - 1.0) < 1e-12);
        CHECK(std::abs(state.q[i] - 1.0) < 1e-12);
    }
    CHECK(state.step_count == 1000);
    CHECK(state.t == doctest::Approx(5.0));
}

TEST_CASE("ab2_step: second step is Euler plus the AB2 correction") {
    const SolverConfig config = make_config(64);
    const std::vector<double> forcing(config.grid.n, 0.0);
    Rng rng(3);
    RhsWorkspace ws;

    auto perturbed = FilmState::flat(config.grid);
    for (int i = 0; i < config.grid.n; ++i)
        perturbed.h[i] = 1.0 + 0.01 * std::sin(0.3 * config.grid.x_of(i));

    // f0 at the initial state, f1 at the state after one Euler step.
    std::vector<double> f0_h, f0_q, f1_h, f1_q;
    rhs(perturbed, forcing, config, ws, f0_h, f0_q);

    auto state = perturbed;
    ab2_step(state, forcing, config, rng, ws);  // first step: Euler
    auto after_one = state;
    rhs(after_one, forcing, config, ws, f1_h, f1_q);

    ab2_step(state, forcing, config, rng, ws);  // second step: AB2

    // Euler from the same intermediate state.
    auto euler = after_one;
    for (int i = 0; i < config.grid.n; ++i) {
        euler.h[i] += config.dt * f1_h[i];
        euler.q[i] += config.dt * f1_q[i];
    }

    for (int i = 2; i < config.grid.n - 2; ++i) {
        const double expect_h = euler.h[i] + 0.5 * config.dt * (f1_h[i] - f0_h[i]);
        const double expect_q = euler.q[i] + 0.5 * config.dt * (f1_q[i] - f0_q[i]);
        CHECK(state.h[i] == doctest::Approx(expect_h).epsilon(1e-12));
        CHECK(state.q[i] == doctest::Approx(expect_q).epsilon(1e-12));
    }
}

TEST_CASE("ab2_step: blow-up raises a divergence error, not NaN state") {
    const SolverConfig config = make_config(64);
    auto state = FilmState::flat(config.grid);
    std::vector<double> forcing(config.grid.n, -1e7);  // drain the film hard
    Rng rng(1);
    RhsWorkspace ws;
    bool raised = false;
    try {
        for (int s = 0; s < 1000; ++s) ab2_step(state, forcing, config, rng, ws);
    } catch (const DivergenceError& e) {
        raised = true;
        CHECK(e.step() >= 1);
    }
    CHECK(raised);
}

TEST_CASE("boundary conditions") {
    Rng rng(11);

    SUBCASE("no noise: inlet exact") {
        const SolverConfig config = make_config(32);
        auto state = FilmState::flat(config.grid);
        state.h[0] = 2.0;
        state.q[0] = 2.0;
        apply_boundary_conditions(state, config, rng);
        CHECK(state.h[0] == 1.0);
        CHECK(state.q[0] == 1.0);
    }

    SUBCASE("noise bounded by eps") {
        SolverConfig config = make_config(32);
        config.eps = 5e-4;
        auto state = FilmState::flat(config.grid);
        for (int s = 0; s < 200; ++s) {
            apply_boundary_conditions(state, config, rng);
            CHECK(state.h[0] >= 1.0 - 5e-4);
            CHECK(state.h[0] <= 1.0 + 5e-4);
            CHECK(state.q[0] == 1.0);
        }
    }

    SUBCASE("outlet copies the inward neighbor") {
        const SolverConfig config = make_config(32);
        auto state = FilmState::flat(config.grid);
        state.h[config.grid.n - 2] = 1.25;
        state.q[config.grid.n - 2] = 0.75;
        apply_boundary_conditions(state, config, rng);
        CHECK(state.h[config.grid.n - 1] == 1.25);
        CHECK(state.q[config.grid.n - 1] == 0.75);
    }
}

TEST_CASE("TVD sanity: advecting a monotone profile adds no new extrema") {
    const Grid grid = make_grid(100, 1.0);
    std::vector<double> u(grid.n), sign(grid.n, 1.0), deriv;
    for (int i = 0; i < grid.n; ++i) u[i] = i < 40 ? 2.0 : (i > 60 ? 0.0 : (60.0 - i) / 10.0);

    const double dt = 0.2;  // CFL 0.2 for unit transport speed
    double tv_prev = total_variation(u);
    for (int s = 0; s < 50; ++s) {
        convective_derivative(u, sign, grid, deriv);
        for (int i = 0; i < grid.n; ++i) u[i] -= dt * deriv[i];
        const double tv = total_variation(u);
        CHECK(tv <= tv_prev + 1e-12);
        tv_prev = tv;
    }
    // Still monotone non-increasing.
    for (int i = 1; i < grid.n; ++i) CHECK(u[i] <= u[i - 1] + 1e-12);
}

TEST_CASE("determinism: identical config and seed give bit-identical runs") {
    SolverConfig config = make_config(120);
    config.eps = 5e-4;
    const std::vector<double> forcing(config.grid.n, 0.0);

    auto run = [&]() {
        auto state = FilmState::flat(config.grid);
        Rng rng(42);
        RhsWorkspace ws;
        for (int s = 0; s < 500; ++s) ab2_step(state, forcing, config, rng, ws);
        return state;
    };
    const auto a = run();
    const auto b = run();
    for (int i = 0; i < config.grid.n; ++i) {
        CHECK(a.h[i] == b.h[i]);
        CHECK(a.q[i] == b.q[i]);
    }
}

TEST_CASE("snapshot round trip is byte-identical") {
    namespace fs = std::filesystem;
    const SolverConfig config = make_config(64);
    auto state = FilmState::flat(config.grid);
    Rng rng(5);
    for (int i = 0; i < config.grid.n; ++i) {
        state.h[i] = 1.0 + 0.1 * rng.normal();
        state.q[i] = 1.0 + 0.1 * rng.normal();
    }
    state.t = 207.4375;

    const fs::path dir = fs::temp_directory_path() / "ppofilm_snap_test";
    fs::create_directories(dir);
    const fs::path p1 = dir / "a.dat", p2 = dir / "b.dat";
    write_snapshot(p1, state, config);

    const auto snap = read_snapshot(p1);
    CHECK(snap.n == config.grid.n);
    CHECK(snap.dx == config.grid.dx);
    CHECK(snap.delta == config.delta);
    CHECK(snap.t == state.t);

    FilmState reloaded = FilmState::flat(config.grid);
    reloaded.h = snap.h;
    reloaded.q = snap.q;
    reloaded.t = snap.t;
    write_snapshot(p2, reloaded, config);

    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());

    SUBCASE("unknown version rejected") {
        const fs::path bad = dir / "bad.dat";
        std::ofstream f(bad);
        f << "shkadov-state v9 n=4 dx=0.5 delta=0.1 t=0\n1 1\n1 1\n1 1\n1 1\n";
        f.close();
        CHECK_THROWS_AS(read_snapshot(bad), std::runtime_error);
    }

    SUBCASE("truncated file rejected") {
        const fs::path bad = dir / "short.dat";
        std::ofstream f(bad);
        f << "shkadov-state v1 n=4 dx=0.5 delta=0.1 t=0\n1 1\n";
        f.close();
        CHECK_THROWS_AS(read_snapshot(bad), std::runtime_error);
    }
}
