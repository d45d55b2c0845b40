"""
GM Solver - Solve Sign Command
Positive solution in the certified rectangle, its negation and the strict
separation from the inner corner
"""

from typing import Any, Dict, Tuple

from gmsolver.commands import register_command
from gmsolver.commands.base import EXIT_OK, EXIT_PROPERTY, EXIT_SOLVER, BaseCommand
from gmsolver.services.export import write_fields
from gmsolver.services.model import residual
from gmsolver.services.sign_solver import check_separation, negate, solve_positive


@register_command
class SolveSignCommand(BaseCommand):

    name = "solve-sign"
    display_name = "Constant-Sign Solutions"
    description = "Positive and negative solutions with separation margins"
    order = 3

    def run(self) -> Tuple[int, Dict[str, Any]]:
        cfg = self.config
        op = self.build_operator()
        eigen = self.eigenpair(op)
        calib = self.calibration(op, eigen)

        positive = solve_positive(
            op, cfg.params, calib.positive,
            tol=cfg.tol, max_iter=cfg.max_iter, omega=cfg.omega,
            newton_polish=cfg.newton_polish, linear_tol=cfg.linear_tol,
        )
        negative = negate(positive)

        negative_residual = residual(op, cfg.params, negative.u, negative.v).sup

        sep_pos = check_separation(positive, calib.positive)
        sep_neg = check_separation(negative, calib.negative)

        write_fields(cfg.out_dir, u_plus=positive.u, v_plus=positive.v, u_minus=negative.u, v_minus=negative.v)

        report = {
            'config': cfg.describe(),
            'calibration': calib.to_dict(),
            'positive': positive.to_dict(),
            'negative': negative.to_dict(),
            'negative_residual': negative_residual,
            'separation_positive': sep_pos.to_dict(),
            'separation_negative': sep_neg.to_dict(),
        }

        if not positive.converged:
            self.logger.error(f"Positive solve did not converge (residual {positive.residual:.3e})")
            return EXIT_SOLVER, report
        if not (calib.certificate.passed and sep_pos.passed and sep_neg.passed):
            self.logger.warning("Certificate or separation check failed")
            return EXIT_PROPERTY, report
        return EXIT_OK, report
