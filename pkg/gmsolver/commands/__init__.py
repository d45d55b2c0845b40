"""
GM Solver - Commands
Command registry and helper functions
"""

from typing import Dict, List, Optional, Type

from gmsolver.commands.base import BaseCommand

# Command registry
_commands: Dict[str, Type[BaseCommand]] = {}


def register_command(command_class: Type[BaseCommand]) -> Type[BaseCommand]:
    """Command registration decorator"""
    _commands[command_class.name] = command_class
    return command_class


def get_command(name: str) -> Optional[Type[BaseCommand]]:
    """Get command class by name"""
    return _commands.get(name)


def get_all_commands() -> List[Type[BaseCommand]]:
    """Return all commands sorted by order"""
    return sorted(_commands.values(), key=lambda c: c.order)


def get_command_names() -> List[str]:
    """Return all command names in order"""
    return [c.name for c in get_all_commands()]


# Import commands (auto-registered via register_command decorator)
from gmsolver.commands.eigen import EigenCommand  # noqa: E402,F401
from gmsolver.commands.certify import CertifyCommand  # noqa: E402,F401
from gmsolver.commands.solve_sign import SolveSignCommand  # noqa: E402,F401
from gmsolver.commands.solve_nodal import SolveNodalCommand  # noqa: E402,F401
from gmsolver.commands.degree import DegreeCommand  # noqa: E402,F401
