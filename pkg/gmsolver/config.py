"""
GM Solver - Configuration
YAML run configurations merged over built-in defaults.

ConfigStore serves raw dot-notation lookups; RunConfig is the validated,
typed view the commands work with.
"""

import copy
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import yaml

from gmsolver.errors import ConfigError
from gmsolver.services.model import ProblemParams

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    'grid': {
        'dim': 1,
        'extents': [1.0],
        'nodes': [100],
    },
    'model': {
        'alpha1': 0.5,
        'alpha2': 0.5,
        'beta1': 0.0,
        'beta2': 0.0,
        'rho': 2.0,
        'f1_scale': 1.0,
        'f2_scale': 1.0,
        'literal_f2_exponents': False,
    },
    'constants': {
        'C': None,
        'c0': None,
        'max_doublings': 40,
    },
    'eigen': {
        'tol': 1e-10,
        'max_iter': 500,
    },
    'solver': {
        'tol': 1e-8,
        'linear_tol': 1e-10,
        'max_iter': 10000,
        'omega': 1.0,
        'newton_polish': True,
    },
    'continuation': {
        'epsilons': [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625],
        'tol': 1e-10,
        'max_iter': 200,
        'warm_start': True,
        'n_seeds': 16,
        'mu_chi': 0.1,
        'mu_list': [0.1, 0.01, 0.001],
        'manufactured': True,
        'seed_perturbation': 0.1,
    },
    'degree': {
        'nodes': 4,
        'epsilon': 0.5,
        'n_starts': 64,
        'tol': 1e-10,
        't_grid': [0.0, 0.25, 0.5, 0.75, 1.0],
        'boundary_samples': 256,
    },
    'seed': 0,
    'workers': 0,
    'output': {
        'dir': 'output',
    },
}


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class ConfigStore:
    """
    Layered configuration (defaults, then file).
    Lookups use dot notation: get('grid.nodes').
    """

    def __init__(self, settings: Optional[Dict[str, Any]] = None, source: str = '<defaults>'):
        self._settings = _deep_merge(DEFAULTS, settings or {})
        self.source = source

    @classmethod
    def load(cls, path: str) -> 'ConfigStore':
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f)
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {path} is not valid YAML: {e}")

        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a mapping at top level")
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"Unknown config sections in {path}: {', '.join(unknown)}")

        logger.debug(f"Config loaded: {path}")
        return cls(data, source=path)

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get config value (dot notation supported).
        Example: get('model.rho') or get('seed')
        """
        value: Any = self._settings
        for k in key.split('.'):
            if isinstance(value, dict):
                value = value.get(k)
            else:
                return default
            if value is None:
                return default
        return value

    def set(self, key: str, value: Any) -> None:
        keys = key.split('.')
        target = self._settings
        for k in keys[:-1]:
            target = target.setdefault(k, {})
        target[keys[-1]] = value

    def get_all(self) -> Dict[str, Any]:
        return copy.deepcopy(self._settings)


# =============================================================================
# RUN CONFIG
# =============================================================================

@dataclass(frozen=True)
class RunConfig:
    dim: int
    extents: Tuple[float, ...]
    nodes: Tuple[int, ...]
    params: ProblemParams
    C: Optional[float]
    c0: Optional[float]
    max_doublings: int
    eigen_tol: float
    eigen_max_iter: int
    tol: float
    linear_tol: float
    max_iter: int
    omega: float
    newton_polish: bool
    epsilons: Tuple[float, ...]
    continuation_tol: float
    continuation_max_iter: int
    warm_start: bool
    n_seeds: int
    mu_chi: float
    mu_list: Tuple[float, ...]
    manufactured: bool
    seed_perturbation: float
    degree_nodes: int
    degree_epsilon: float
    n_starts: int
    degree_tol: float
    t_grid: Tuple[float, ...]
    boundary_samples: int
    seed: int
    workers: int
    out_dir: str

    @property
    def constants_forced(self) -> bool:
        return self.C is not None or self.c0 is not None

    def describe(self) -> Dict[str, Any]:
        return {
            'grid': {'dim': self.dim, 'extents': list(self.extents), 'nodes': list(self.nodes)},
            'model': self.params.to_dict(),
            'constants': {'C': self.C, 'c0': self.c0, 'max_doublings': self.max_doublings},
            'seed': self.seed,
        }


def _positive(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def _nonnegative(name: str, value: Any) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if not (math.isfinite(value) and value >= 0):
        raise ConfigError(f"{name} must be non-negative, got {value}")
    return value


def _count(name: str, value: Any, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _tuple(name: str, value: Any, cast=float) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be a list, got {value!r}")
    try:
        return tuple(cast(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} has non-numeric entries: {value!r}")


def build_run_config(store: ConfigStore, out_dir: Optional[str] = None, require_nodal: bool = False) -> RunConfig:
    """
    Validate the store into a RunConfig.

    Raises:
        ConfigError: any invalid or inconsistent value
    """
    try:
        params = ProblemParams(
            alpha1=float(store.get('model.alpha1')),
            alpha2=float(store.get('model.alpha2')),
            beta1=float(store.get('model.beta1', 0.0)),
            beta2=float(store.get('model.beta2', 0.0)),
            rho=float(store.get('model.rho')),
            f1_scale=float(store.get('model.f1_scale', 1.0)),
            f2_scale=float(store.get('model.f2_scale', 1.0)),
            literal_f2_exponents=bool(store.get('model.literal_f2_exponents', False)),
        )
    except (TypeError, ValueError):
        raise ConfigError("model section has missing or non-numeric entries")
    params.validate(require_nodal=require_nodal)

    C = store.get('constants.C')
    c0 = store.get('constants.c0')

    t_grid = _tuple('degree.t_grid', store.get('degree.t_grid'))
    if not t_grid or any(not 0.0 <= t <= 1.0 for t in t_grid):
        raise ConfigError(f"degree.t_grid must be a non-empty subset of [0, 1]: {t_grid}")

    omega = _positive('solver.omega', store.get('solver.omega'))
    if omega > 1.0:
        raise ConfigError(f"solver.omega must lie in (0, 1], got {omega}")

    epsilon = _positive('degree.epsilon', store.get('degree.epsilon'))
    if epsilon >= 1.0:
        raise ConfigError(f"degree.epsilon must lie in (0, 1), got {epsilon}")

    return RunConfig(
        dim=_count('grid.dim', store.get('grid.dim')),
        extents=_tuple('grid.extents', store.get('grid.extents')),
        nodes=_tuple('grid.nodes', store.get('grid.nodes'), cast=int),
        params=params,
        C=None if C is None else _positive('constants.C', C),
        c0=None if c0 is None else _positive('constants.c0', c0),
        max_doublings=_count('constants.max_doublings', store.get('constants.max_doublings'), minimum=0),
        eigen_tol=_positive('eigen.tol', store.get('eigen.tol')),
        eigen_max_iter=_count('eigen.max_iter', store.get('eigen.max_iter')),
        tol=_positive('solver.tol', store.get('solver.tol')),
        linear_tol=_positive('solver.linear_tol', store.get('solver.linear_tol')),
        max_iter=_count('solver.max_iter', store.get('solver.max_iter')),
        omega=omega,
        newton_polish=bool(store.get('solver.newton_polish', True)),
        epsilons=_tuple('continuation.epsilons', store.get('continuation.epsilons')),
        continuation_tol=_positive('continuation.tol', store.get('continuation.tol')),
        continuation_max_iter=_count('continuation.max_iter', store.get('continuation.max_iter')),
        warm_start=bool(store.get('continuation.warm_start', True)),
        n_seeds=_count('continuation.n_seeds', store.get('continuation.n_seeds')),
        mu_chi=_positive('continuation.mu_chi', store.get('continuation.mu_chi')),
        mu_list=_tuple('continuation.mu_list', store.get('continuation.mu_list')),
        manufactured=bool(store.get('continuation.manufactured', True)),
        seed_perturbation=_nonnegative('continuation.seed_perturbation',
                                       store.get('continuation.seed_perturbation', 0.1)),
        degree_nodes=_count('degree.nodes', store.get('degree.nodes'), minimum=3),
        degree_epsilon=epsilon,
        n_starts=_count('degree.n_starts', store.get('degree.n_starts')),
        degree_tol=_positive('degree.tol', store.get('degree.tol')),
        t_grid=t_grid,
        boundary_samples=_count('degree.boundary_samples', store.get('degree.boundary_samples')),
        seed=_count('seed', store.get('seed', 0), minimum=0),
        workers=_count('workers', store.get('workers', 0), minimum=0),
        out_dir=out_dir or str(store.get('output.dir', 'output')),
    )


def load_run_config(path: str, out_dir: Optional[str] = None, require_nodal: bool = False) -> RunConfig:
    return build_run_config(ConfigStore.load(path), out_dir, require_nodal)
