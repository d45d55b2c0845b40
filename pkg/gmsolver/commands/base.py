"""
GM Solver - Base Command Class
Base class for all batch commands
"""

import logging
import os
from abc import ABC, abstractmethod
from typing import Any, Dict, Tuple

from gmsolver.config import RunConfig
from gmsolver.errors import ConfigError, GMError
from gmsolver.services.export import write_report
from gmsolver.services.grid import NeumannOperator, assemble_neumann_operator, build_grid
from gmsolver.services.linear import EigenPair, principal_eigenpair
from gmsolver.services.subsup import Calibration, calibrate_constants, certify_constants, choose_constants

logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2
EXIT_PROPERTY = 3

COMMAND_LOG_FORMAT = '[%(asctime)s] [%(levelname)s] %(message)s'
COMMAND_LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


def setup_command_logger(command_name: str, out_dir: str) -> logging.Logger:
    """
    Logger for one command run: <command>.log gets everything, main.log
    the INFO milestones. Handlers of an earlier run are closed first.
    """
    os.makedirs(out_dir, exist_ok=True)

    command_logger = logging.getLogger(f"command.{command_name}")
    command_logger.setLevel(logging.DEBUG)
    command_logger.propagate = False

    for handler in command_logger.handlers:
        handler.close()
    command_logger.handlers.clear()

    formatter = logging.Formatter(COMMAND_LOG_FORMAT, datefmt=COMMAND_LOG_DATEFMT)
    for filename, level in ((f"{command_name}.log", logging.DEBUG), ('main.log', logging.INFO)):
        handler = logging.FileHandler(os.path.join(out_dir, filename), encoding='utf-8')
        handler.setLevel(level)
        handler.setFormatter(formatter)
        command_logger.addHandler(handler)

    return command_logger


class BaseCommand(ABC):
    """
    Abstract base class for batch commands.
    All commands must inherit from this class.
    """

    # Should be overridden by subclasses
    name: str = ""
    display_name: str = ""
    description: str = ""
    order: int = 0
    requires_nodal: bool = False

    def __init__(self, config: RunConfig):
        if self.requires_nodal and config.params.beta1 != 0.0:
            raise ConfigError(f"Command '{self.name}' requires beta1 = 0, got {config.params.beta1}")
        self.config = config
        self.logger = setup_command_logger(self.name, config.out_dir)

    @classmethod
    def get_info(cls) -> Dict[str, Any]:
        return {
            'name': cls.name,
            'display_name': cls.display_name,
            'description': cls.description,
            'order': cls.order,
            'requires_nodal': cls.requires_nodal,
        }

    @abstractmethod
    def run(self) -> Tuple[int, Dict[str, Any]]:
        """
        Run the command.
        Returns: (exit_code, report)
        """

    def execute(self) -> Tuple[int, Dict[str, Any]]:
        """Run, map errors to exit codes, write report.json"""
        self.logger.info(f"{self.display_name} started")
        try:
            code, report = self.run()
        except ConfigError as e:
            self.logger.error(f"Configuration error: {e}")
            return EXIT_CONFIG, {'command': self.name, 'error': str(e)}
        except GMError as e:
            self.logger.error(f"Solver failure: {type(e).__name__}: {e}")
            code, report = EXIT_SOLVER, {'error': str(e), 'error_type': type(e).__name__}

        report['command'] = self.name
        report['exit_code'] = code
        write_report(self.config.out_dir, report)
        self.logger.info(f"{self.display_name} finished with exit code {code}")
        return code, report

    # === Helper Methods ===

    def build_operator(self, nodes_per_axis=None) -> NeumannOperator:
        cfg = self.config
        grid = build_grid(cfg.dim, cfg.extents, nodes_per_axis or cfg.nodes)
        return assemble_neumann_operator(grid)

    def eigenpair(self, op: NeumannOperator) -> EigenPair:
        eigen = principal_eigenpair(op, tol=self.config.eigen_tol, max_iter=self.config.eigen_max_iter)
        self.logger.info(f"Principal eigenvalue {eigen.lambda1!r} ({eigen.iterations} iterations)")
        return eigen

    def calibration(self, op: NeumannOperator, eigen: EigenPair) -> Calibration:
        """Forced constants are certified as given, otherwise selected by doubling"""
        cfg = self.config
        if cfg.constants_forced:
            default_C, default_c0 = choose_constants(cfg.params, eigen.lambda1, eigen.mu_bar)
            C = cfg.C if cfg.C is not None else default_C
            c0 = cfg.c0 if cfg.c0 is not None else default_c0
            self.logger.info(f"Certifying forced constants C={C!r}, c0={c0!r}")
            return certify_constants(op, cfg.params, eigen, C, c0, cfg.linear_tol)

        calib = calibrate_constants(op, cfg.params, eigen, max_doublings=cfg.max_doublings, tol=cfg.linear_tol)
        self.logger.info(f"Constants C={calib.C!r}, c0={calib.c0!r} after {calib.doublings} doublings")
        return calib
