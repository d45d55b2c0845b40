"""
GM Solver - Eigen Command
Principal eigenpair of A = -Laplacian + I with zero-flux boundary rows
"""

from typing import Any, Dict, Tuple

from gmsolver.commands import register_command
from gmsolver.commands.base import EXIT_OK, BaseCommand
from gmsolver.services.export import write_fields


@register_command
class EigenCommand(BaseCommand):
    """Writes lambda1, the extrema of phi1 and the phi1 field"""

    name = "eigen"
    display_name = "Principal Eigenpair"
    description = "Inverse iteration for the smallest eigenvalue and its positive eigenvector"
    order = 1

    def run(self) -> Tuple[int, Dict[str, Any]]:
        op = self.build_operator()
        eigen = self.eigenpair(op)

        write_fields(self.config.out_dir, phi1=eigen.phi1)

        report = eigen.to_dict()
        report['grid'] = op.grid.describe()
        report['phi1_relative_deviation'] = (eigen.mu_bar - eigen.mu_underbar) / eigen.mu_bar
        return EXIT_OK, report
