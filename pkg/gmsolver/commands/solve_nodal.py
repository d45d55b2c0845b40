"""
GM Solver - Solve Nodal Command
Regularized solves in the nodal box, epsilon continuation, multistart
classification and the sign-synchrony verdict
"""

from typing import Any, Dict, Tuple

import numpy as np

from gmsolver.commands import register_command
from gmsolver.commands.base import EXIT_OK, EXIT_PROPERTY, EXIT_SOLVER, BaseCommand
from gmsolver.services.export import write_fields
from gmsolver.services.grid import Field
from gmsolver.services.model import TruncationEnv
from gmsolver.services.nodal_solver import (
    ContinuationSchedule,
    continuation,
    locate_solutions,
    radius_R,
    sign_synchrony_report,
    singular_mass_diagnostic,
)

# Manufactured pair amplitude relative to the nodal box
MANUFACTURED_AMPLITUDE = 0.5


@register_command
class SolveNodalCommand(BaseCommand):

    name = "solve-nodal"
    display_name = "Nodal Solutions"
    description = "Epsilon continuation of the regularized system and sign-synchrony checks"
    order = 4
    requires_nodal = True

    def run(self) -> Tuple[int, Dict[str, Any]]:
        cfg = self.config
        op = self.build_operator()
        eigen = self.eigenpair(op)
        calib = self.calibration(op, eigen)
        schedule = ContinuationSchedule(cfg.epsilons, cfg.continuation_tol, cfg.continuation_max_iter, cfg.warm_start)

        lower = calib.positive.u.lower
        env = TruncationEnv(
            epsilon=schedule.epsilons[0],
            ubar=calib.positive.u.upper, vbar=calib.positive.v.upper,
            phi1=eigen.phi1, mu_chi=cfg.mu_chi,
            ulow=lower, vlow=calib.positive.v.lower,
        )

        if cfg.manufactured:
            grid = op.grid
            mode = np.cos(np.pi * grid.coordinates[:, 0] / grid.extents[0])
            u_star = Field(grid, MANUFACTURED_AMPLITUDE * lower.values * mode)
            v_star = Field(grid, MANUFACTURED_AMPLITUDE * calib.positive.v.lower.values * mode)
            seed = ((1.0 + cfg.seed_perturbation) * u_star, (1.0 + cfg.seed_perturbation) * v_star)
            candidate = continuation(op, cfg.params, env, schedule, seed, manufactured=(u_star, v_star))
            recovery = max((candidate.u_star - u_star).sup_norm(), (candidate.v_star - v_star).sup_norm())
        else:
            first = locate_solutions(op, cfg.params, env, schedule.epsilons[0], cfg.n_seeds, cfg.seed,
                                     schedule.tol, schedule.max_iter, cfg.workers)
            if first.solutions:
                seed = (first.solutions[0].solution.u, first.solutions[0].solution.v)
            else:
                seed = (0.5 * lower, 0.5 * calib.positive.v.lower)
            candidate = continuation(op, cfg.params, env, schedule, seed)
            recovery = None

        final_eps = candidate.epsilons[-1]
        synchrony = sign_synchrony_report(candidate.u_star, candidate.v_star, schedule.tol)
        located = locate_solutions(op, cfg.params, env, final_eps, cfg.n_seeds, cfg.seed,
                                   schedule.tol, schedule.max_iter, cfg.workers)
        radius = radius_R(final_eps, cfg.params, calib.aux)

        write_fields(cfg.out_dir, u_star=candidate.u_star, v_star=candidate.v_star)

        report = {
            'config': cfg.describe(),
            'calibration': calib.to_dict(),
            'manufactured': cfg.manufactured,
            'manufactured_recovery': recovery,
            'continuation': candidate.to_dict(),
            'synchrony': synchrony.to_dict(),
            'locator': located.to_dict(),
            'singular_mass': singular_mass_diagnostic(cfg.params, final_eps, candidate.u_star,
                                                      candidate.v_star, cfg.mu_list),
            'radius_R': radius,
            'ball_constraint_binds': max(candidate.u_star.sup_norm(), candidate.v_star.sup_norm()) >= radius,
        }

        if not candidate.complete:
            self.logger.error(f"Continuation failed at eps={candidate.failed_epsilon!r}")
            return EXIT_SOLVER, report
        if not synchrony.passed:
            self.logger.warning(f"Sign synchrony failed (min u*v = {synchrony.min_uv:.3e})")
            return EXIT_PROPERTY, report
        return EXIT_OK, report
