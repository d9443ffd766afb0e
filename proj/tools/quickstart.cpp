// Minimal end-to-end use of the library: build the 1D heat model, draw one
// random schedule, compare the randomized and original forward solves and
// optimal controls.

#include <cstdio>

#include "rbm/models.hpp"

int main() {
  using namespace rbm;

  Heat1dConfig cfg;
  cfg.spacing = Heat1dSpacing::half_domain;
  const Model m = build_heat1d(cfg);

  std::printf("Var = %.4e  Var_W = %.4f\n", variance(m.decomposition, m.table),
              weighted_variance(m.decomposition, m.table, Resolvent{0.1}));

  const TimeGrid grid = uniform_grid(m.cost.T, 512);
  const OperatorSource original = original_source(m.sys, grid);
  const auto ops = make_step_operators(m.sys, assemble_all(m.decomposition, m.table), grid);
  const Schedule schedule = draw_schedule(grid, m.table, {42, 0});
  const OperatorSource randomized = scheduled_source(ops, schedule);

  const ControlSignal zero = ControlSignal::zero(grid, 1);
  const auto err = error_trajectory(solve_forward(m.sys, zero, randomized), solve_forward(m.sys, zero, original));
  std::printf("relative state error %.3e\n", err.relative_max);

  const OptResult ref = minimize(m.sys, m.cost, original);
  const OptResult rnd = minimize(m.sys, m.cost, randomized);
  std::printf("J(u*) = %.6f  J_h(u*_h) = %.6f  J(u*_h) = %.6f\n", ref.cost, rnd.cost,
              cost(m.sys, m.cost, rnd.control, original));
  return 0;
}
