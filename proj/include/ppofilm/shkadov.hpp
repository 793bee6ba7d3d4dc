#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ppofilm/rng.hpp"

namespace ppofilm::shkadov {

// Raised when the integration blows up (non-finite values or the film
// thickness dropping below the positivity floor). Carries the step index
// at which the failure was detected.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, long step)
        : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}
    long step() const { return step_; }

private:
    long step_;
};

// Film thickness below this floor is treated as numerical blow-up rather
// than physical thinning.
inline constexpr double kMinHeight = 1e-6;

struct Grid {
    int n = 0;        // number of grid points
    double dx = 0.5;  // spatial step, dimensionless film units

    double x_of(int i) const { return i * dx; }
    double length() const { return (n - 1) * dx; }

    // Grid covering [0, length] with spacing dx; length must be an integer
    // multiple of dx (within rounding).
    static Grid covering(double length, double dx);
};

struct SolverConfig {
    double delta = 0.1;   // Shkadov parameter
    double dt = 0.005;    // time step
    double eps = 5e-4;    // inlet noise amplitude
    Grid grid;

    void validate() const;
};

struct FilmState {
    std::vector<double> h;           // film height
    std::vector<double> q;           // flow rate
    std::vector<double> rhs_h_prev;  // previous-step dh/dt (Adams-Bashforth history)
    std::vector<double> rhs_q_prev;  // previous-step dq/dt
    bool has_history = false;        // false right after reset: first step is Euler
    double t = 0.0;
    long step_count = 0;

    static FilmState flat(const Grid& grid);  // h = q = 1 everywhere
    int size() const { return static_cast<int>(h.size()); }
};

// delta = (1/15) * (3 Re^2 / W)^(1/3); throws std::domain_error on
// non-positive inputs.
double delta_from_physics(double reynolds, double weber);

// Standard minmod limiter: 0 on sign disagreement, else the argument of
// minimum magnitude.
double minmod(double a, double b);

// Upwind-biased TVD flux-difference approximation of d(field)/dx, with
// minmod-limited interface reconstruction. velocity_sign gives the local
// transport direction (>= 0 means downstream). Zero-gradient ghost values
// close the ends, so the discrete sum of derivative*dx telescopes exactly
// to field[n-1] - field[0].
void convective_derivative(const std::vector<double>& field,
                           const std::vector<double>& velocity_sign,
                           const Grid& grid,
                           std::vector<double>& out);

// d3/dx3: second-order centered second derivative chained with a
// second-order forward first derivative on interior points; fully
// one-sided second-order stencils near the ends. Requires n >= 5.
void third_derivative(const std::vector<double>& h, const Grid& grid,
                      std::vector<double>& out);

// Scratch buffers reused across steps so the hot loop does not allocate.
struct RhsWorkspace {
    std::vector<double> sign, flux_q, d3h, conv_h, conv_q;
};

// Right-hand side of the film model:
//   dh/dt = -dq/dx
//   dq/dt = -(6/5) d(q^2/h)/dx + (1/(5 delta)) (h (1 + d3h/dx3) - q/h^2) + forcing
// forcing is a per-point flow-rate injection added to dq/dt only.
void rhs(const FilmState& state, const std::vector<double>& forcing,
         const SolverConfig& config, RhsWorkspace& ws,
         std::vector<double>& dh_dt, std::vector<double>& dq_dt);

// Inlet: q[0] = 1, h[0] = 1 + U(-eps, eps); outlet: first-order
// zero-gradient copy of the inward neighbor.
void apply_boundary_conditions(FilmState& state, const SolverConfig& config, Rng& rng);

// One second-order Adams-Bashforth step (forward Euler on the first step
// after reset), followed by boundary conditions. Throws DivergenceError if
// the updated state is non-finite or h drops below kMinHeight.
void ab2_step(FilmState& state, const std::vector<double>& forcing,
              const SolverConfig& config, Rng& rng, RhsWorkspace& ws);

// --- snapshot format -------------------------------------------------------
//
// Text format, one file per state:
//   shkadov-state v1 n=<n> dx=<dx> delta=<delta> t=<t>
// followed by n lines "<h> <q>" with full double precision.

void write_snapshot(const std::filesystem::path& path, const FilmState& state,
                    const SolverConfig& config);

struct Snapshot {
    int n = 0;
    double dx = 0.0;
    double delta = 0.0;
    double t = 0.0;
    std::vector<double> h, q;
};

// Throws std::runtime_error on unknown versions or malformed content.
Snapshot read_snapshot(const std::filesystem::path& path);

// Parses only the header line (h and q stay empty). Used to validate
// snapshot sets without loading every field.
Snapshot read_snapshot_header(const std::filesystem::path& path);

}  // namespace ppofilm::shkadov
