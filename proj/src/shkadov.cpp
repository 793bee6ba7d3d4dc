#include "ppofilm/shkadov.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ppofilm::shkadov {

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

void format_double(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

}  // namespace

Grid Grid::covering(double length, double dx) {
    if (dx <= 0.0) throw std::invalid_argument("grid dx must be positive");
    Grid g;
    g.dx = dx;
    g.n = static_cast<int>(std::lround(length / dx)) + 1;
    if (g.n < 8) throw std::invalid_argument("grid needs at least 8 points");
    if (std::abs(g.length() - length) > dx)
        throw std::invalid_argument("domain length is not a multiple of dx");
    return g;
}

void SolverConfig::validate() const {
    if (delta <= 0.0) throw std::invalid_argument("delta must be positive");
    if (dt <= 0.0) throw std::invalid_argument("dt must be positive");
    if (eps < 0.0) throw std::invalid_argument("eps must be non-negative");
    if (grid.n < 8 || grid.dx <= 0.0) throw std::invalid_argument("invalid grid");
}

FilmState FilmState::flat(const Grid& grid) {
    FilmState s;
    s.h.assign(grid.n, 1.0);
    s.q.assign(grid.n, 1.0);
    s.rhs_h_prev.assign(grid.n, 0.0);
    s.rhs_q_prev.assign(grid.n, 0.0);
    s.has_history = false;
    s.t = 0.0;
    s.step_count = 0;
    return s;
}

double delta_from_physics(double reynolds, double weber) {
    if (reynolds <= 0.0 || weber <= 0.0)
        throw std::domain_error("Reynolds and Weber numbers must be positive");
    return (1.0 / 15.0) * std::cbrt(3.0 * reynolds * reynolds / weber);
}

double minmod(double a, double b) {
    if (a * b <= 0.0) return 0.0;
    return a > 0.0 ? std::min(a, b) : std::max(a, b);
}

void convective_derivative(const std::vector<double>& field,
                           const std::vector<double>& velocity_sign,
                           const Grid& grid,
                           std::vector<double>& out) {
    const int n = grid.n;
    if (static_cast<int>(field.size()) != n ||
        static_cast<int>(velocity_sign.size()) != n)
        throw std::invalid_argument("convective_derivative: length mismatch");
    out.resize(n);

    // Ghost values f[-1] = f[0], f[n] = f[n-1]; the limited slope involving a
    // ghost cell then vanishes, which degrades gracefully to first-order
    // upwind at the ends while keeping the flux-difference form everywhere.
    auto at = [&](int i) {
        return field[std::clamp(i, 0, n - 1)];
    };
    // Interface value at i+1/2 for i in [-1, n-1].
    auto interface = [&](int i) {
        const double sl = velocity_sign[std::clamp(i, 0, n - 1)];
        const double sr = velocity_sign[std::clamp(i + 1, 0, n - 1)];
        if (sl + sr >= 0.0) {
            const double f = at(i);
            return f + 0.5 * minmod(f - at(i - 1), at(i + 1) - f);
        }
        const double f = at(i + 1);
        return f - 0.5 * minmod(f - at(i), at(i + 2) - f);
    };

    const double inv_dx = 1.0 / grid.dx;
    double left = interface(-1);
    for (int i = 0; i < n; ++i) {
        const double right = interface(i);
        out[i] = (right - left) * inv_dx;
        left = right;
    }
}

void third_derivative(const std::vector<double>& h, const Grid& grid,
                      std::vector<double>& out) {
    const int n = grid.n;
    if (static_cast<int>(h.size()) != n)
        throw std::invalid_argument("third_derivative: length mismatch");
    if (n < 5) throw std::invalid_argument("third_derivative needs n >= 5");
    out.resize(n);

    const double inv_dx3 = 1.0 / (grid.dx * grid.dx * grid.dx);

    // Interior i in [1, n-4]: centered second derivative d2[j] for
    // j = i, i+1, i+2, then the second-order forward first derivative
    // (-3 d2[i] + 4 d2[i+1] - d2[i+2]) / (2 dx).
    for (int i = 1; i <= n - 4; ++i) {
        const double d2a = h[i + 1] - 2.0 * h[i] + h[i - 1];
        const double d2b = h[i + 2] - 2.0 * h[i + 1] + h[i];
        const double d2c = h[i + 3] - 2.0 * h[i + 2] + h[i + 1];
        out[i] = 0.5 * (-3.0 * d2a + 4.0 * d2b - d2c) * inv_dx3;
    }

    // One-sided second-order stencils at the ends.
    out[0] = (-2.5 * h[0] + 9.0 * h[1] - 12.0 * h[2] + 7.0 * h[3] - 1.5 * h[4]) * inv_dx3;
    for (int i = n - 3; i < n; ++i) {
        out[i] = (2.5 * h[i] - 9.0 * h[i - 1] + 12.0 * h[i - 2] - 7.0 * h[i - 3] +
                  1.5 * h[i - 4]) *
                 inv_dx3;
    }
}

void rhs(const FilmState& state, const std::vector<double>& forcing,
         const SolverConfig& config, RhsWorkspace& ws,
         std::vector<double>& dh_dt, std::vector<double>& dq_dt) {
    const int n = config.grid.n;
    if (state.size() != n || static_cast<int>(forcing.size()) != n)
        throw std::invalid_argument("rhs: length mismatch");

    ws.sign.resize(n);
    ws.flux_q.resize(n);
    for (int i = 0; i < n; ++i) {
        const double h = state.h[i];
        if (!(h > 0.0))
            throw DivergenceError("non-positive film height", state.step_count);
        ws.sign[i] = state.q[i] >= 0.0 ? 1.0 : -1.0;
        ws.flux_q[i] = state.q[i] * state.q[i] / h;
    }

    convective_derivative(state.q, ws.sign, config.grid, ws.conv_h);
    convective_derivative(ws.flux_q, ws.sign, config.grid, ws.conv_q);
    third_derivative(state.h, config.grid, ws.d3h);

    dh_dt.resize(n);
    dq_dt.resize(n);
    const double inv_5delta = 1.0 / (5.0 * config.delta);
    for (int i = 0; i < n; ++i) {
        const double h = state.h[i];
        dh_dt[i] = -ws.conv_h[i];
        dq_dt[i] = -1.2 * ws.conv_q[i] +
                   inv_5delta * (h * (1.0 + ws.d3h[i]) - state.q[i] / (h * h)) +
                   forcing[i];
    }
}

void apply_boundary_conditions(FilmState& state, const SolverConfig& config, Rng& rng) {
    const int n = state.size();
    state.q[0] = 1.0;
    state.h[0] = config.eps > 0.0 ? 1.0 + rng.uniform(-config.eps, config.eps) : 1.0;
    state.h[n - 1] = state.h[n - 2];
    state.q[n - 1] = state.q[n - 2];
}

void ab2_step(FilmState& state, const std::vector<double>& forcing,
              const SolverConfig& config, Rng& rng, RhsWorkspace& ws) {
    static thread_local std::vector<double> dh_dt, dq_dt;
    rhs(state, forcing, config, ws, dh_dt, dq_dt);

    const int n = state.size();
    const double dt = config.dt;
    if (state.has_history) {
        for (int i = 0; i < n; ++i) {
            state.h[i] += dt * (1.5 * dh_dt[i] - 0.5 * state.rhs_h_prev[i]);
            state.q[i] += dt * (1.5 * dq_dt[i] - 0.5 * state.rhs_q_prev[i]);
        }
    } else {
        for (int i = 0; i < n; ++i) {
            state.h[i] += dt * dh_dt[i];
            state.q[i] += dt * dq_dt[i];
        }
    }
    state.rhs_h_prev.swap(dh_dt);
    state.rhs_q_prev.swap(dq_dt);
    state.has_history = true;
    state.t += dt;
    state.step_count += 1;

    apply_boundary_conditions(state, config, rng);

    for (int i = 0; i < n; ++i) {
        if (!std::isfinite(state.h[i]) || !std::isfinite(state.q[i]) ||
            state.h[i] <= kMinHeight)
            throw DivergenceError("film integration diverged", state.step_count);
    }
}

void write_snapshot(const std::filesystem::path& path, const FilmState& state,
                    const SolverConfig& config) {
    std::string out;
    out.reserve(static_cast<size_t>(state.size()) * 48 + 128);
    out += "shkadov-state v1 n=";
    out += std::to_string(state.size());
    out += " dx=";
    format_double(out, config.grid.dx);
    out += " delta=";
    format_double(out, config.delta);
    out += " t=";
    format_double(out, state.t);
    out += '\n';
    for (int i = 0; i < state.size(); ++i) {
        format_double(out, state.h[i]);
        out += ' ';
        format_double(out, state.q[i]);
        out += '\n';
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << out;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

namespace {
Snapshot parse_header(const std::string& header, const std::filesystem::path& path) {
    Snapshot snap;
    std::istringstream hs(header);
    std::string magic, version, field;
    hs >> magic >> version;
    if (magic != "shkadov-state" || version != "v1")
        throw std::runtime_error("unknown snapshot format in " + path.string() + ": " +
                                 header.substr(0, 32));
    while (hs >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("malformed snapshot header in " + path.string());
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "n") snap.n = std::stoi(value);
        else if (key == "dx") snap.dx = std::stod(value);
        else if (key == "delta") snap.delta = std::stod(value);
        else if (key == "t") snap.t = std::stod(value);
        else throw std::runtime_error("unknown snapshot header key '" + key + "'");
    }
    if (snap.n <= 0) throw std::runtime_error("snapshot missing point count");
    return snap;
}
}  // namespace

Snapshot read_snapshot_header(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string header;
    if (!std::getline(f, header))
        throw std::runtime_error("empty snapshot file " + path.string());
    return parse_header(header, path);
}

Snapshot read_snapshot(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    std::string header;
    if (!std::getline(f, header))
        throw std::runtime_error("empty snapshot file " + path.string());

    Snapshot snap = parse_header(header, path);
    snap.h.resize(snap.n);
    snap.q.resize(snap.n);
    for (int i = 0; i < snap.n; ++i) {
        if (!(f >> snap.h[i] >> snap.q[i]))
            throw std::runtime_error("truncated snapshot " + path.string());
    }
    return snap;
}

}  // namespace ppofilm::shkadov
