"""
GM Solver - Certify Command
Constants, auxiliary solutions, rectangles and the six-inequality certificate
"""

from typing import Any, Dict, Tuple

from gmsolver.commands import register_command
from gmsolver.commands.base import EXIT_OK, EXIT_PROPERTY, BaseCommand
from gmsolver.services.export import write_fields


@register_command
class CertifyCommand(BaseCommand):

    name = "certify"
    display_name = "Sub/Supersolution Certificate"
    description = "Build the ordered rectangle and check every sub/supersolution inequality nodewise"
    order = 2

    def run(self) -> Tuple[int, Dict[str, Any]]:
        op = self.build_operator()
        eigen = self.eigenpair(op)
        calib = self.calibration(op, eigen)

        write_fields(
            self.config.out_dir,
            w=calib.aux.w, y=calib.aux.y, z=calib.aux.z,
            u_lower=calib.positive.u.lower, u_upper=calib.positive.u.upper,
        )

        report = {
            'config': self.config.describe(),
            'eigen': eigen.to_dict(),
            'constants_forced': self.config.constants_forced,
            'calibration': calib.to_dict(),
        }

        failed = calib.certificate.failed()
        if failed:
            self.logger.warning(f"Certificate failed: {', '.join(failed)}")
            return EXIT_PROPERTY, report
        return EXIT_OK, report
