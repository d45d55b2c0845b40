"""
GM Solver - Degree Command
Degree estimates for the H and N homotopies on a coarse grid and the exact
no-solution witness at t = 0
"""

from typing import Any, Dict, Tuple

import numpy as np

from gmsolver.commands import register_command
from gmsolver.commands.base import EXIT_OK, EXIT_PROPERTY, BaseCommand
from gmsolver.errors import AdmissibilityError
from gmsolver.services.degree import (
    Box,
    BoxDifference,
    CompactMap,
    check_no_solution_t0,
    estimate_degree,
    homotopy_sweep,
    map_eval,
)
from gmsolver.services.model import TruncationEnv
from gmsolver.services.nodal_solver import radius_R


@register_command
class DegreeCommand(BaseCommand):

    name = "degree"
    display_name = "Degree Estimates"
    description = "Multistart degree estimates for the homotopy maps on a coarse grid"
    order = 5
    requires_nodal = True

    def _estimate(self, fmap, region) -> Dict[str, Any]:
        cfg = self.config
        try:
            estimate = estimate_degree(fmap, region, cfg.n_starts, cfg.seed, cfg.degree_tol,
                                       cfg.boundary_samples, cfg.workers)
        except AdmissibilityError as e:
            self.logger.warning(f"Not admissible: {e}")
            return {'admissible': False, 'margin': e.margin, 'witness': e.witness}
        data = estimate.to_dict()
        data['admissible'] = True
        return data

    def run(self) -> Tuple[int, Dict[str, Any]]:
        cfg = self.config
        fine_op = self.build_operator()
        op = self.build_operator(tuple(cfg.degree_nodes for _ in range(cfg.dim)))
        eigen = self.eigenpair(op)
        calib = self.calibration(op, eigen)

        upper, lower = calib.positive.u.upper, calib.positive.u.lower
        env = TruncationEnv(
            epsilon=cfg.degree_epsilon, ubar=upper, vbar=calib.positive.v.upper,
            phi1=eigen.phi1, mu_chi=cfg.mu_chi, ulow=lower, vlow=calib.positive.v.lower,
        )
        R = radius_R(cfg.degree_epsilon, cfg.params, calib.aux)
        dim = 2 * op.size
        ball = Box.symmetric(np.full(dim, R))
        annulus = BoxDifference(ball, Box.symmetric(np.concatenate([lower.values, calib.positive.v.lower.values])))

        h_map = CompactMap('H', op, cfg.params, env, 0.0, eigen.lambda1)
        n_map = CompactMap('N', op, cfg.params, env, 0.0, eigen.lambda1)

        witness = check_no_solution_t0(op, cfg.seed)
        fine_witness = check_no_solution_t0(fine_op, cfg.seed)
        h0 = self._estimate(h_map, ball)
        n0 = self._estimate(n_map, annulus)
        n1 = self._estimate(n_map.at(1.0), annulus)
        phi_u, phi_v = map_eval(n_map, eigen.phi1, eigen.phi1)

        report = {
            'config': cfg.describe(),
            'degree_grid': op.grid.describe(),
            'radius_R': R,
            'no_solution_t0': witness.holds and fine_witness.holds,
            'witness': witness.to_dict(),
            'witness_fine_grid': fine_witness.to_dict(),
            'H_t0': h0,
            'N_t0': n0,
            'N_t1': n1,
            'N_t0_at_phi1': max(phi_u.sup_norm(), phi_v.sup_norm()),
            'sweep_H': homotopy_sweep(h_map.at, cfg.t_grid, ball, cfg.seed, cfg.boundary_samples,
                                      cfg.degree_tol).to_dict(),
            'sweep_N': homotopy_sweep(n_map.at, cfg.t_grid, annulus, cfg.seed, cfg.boundary_samples,
                                      cfg.degree_tol).to_dict(),
        }

        h0_ok = h0.get('admissible') and h0.get('value') == 0 and not h0.get('zeros')
        if not (report['no_solution_t0'] and h0_ok):
            self.logger.warning("t = 0 checks failed for the H homotopy")
            return EXIT_PROPERTY, report
        return EXIT_OK, report
