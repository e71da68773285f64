"""Experiment configurations and the solve-estimate-mark-refine loop."""
from __future__ import annotations

import ast
import math
import operator
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .adaptivity import RefinementError, decide_actions, doerfler_mark, mark_all, refine
from .boundary import BoundaryMesh, check_a1_a2, shape_regularity
from .estimator import Indicators, compute_indicators
from .operators import BoundaryData, QuadConfig, solve
from .splines import KnotVector, NurbsCurve

__all__ = [
    "ConvergenceTable",
    "ExperimentConfig",
    "LevelRecord",
    "RunResult",
    "builtin_config",
    "export",
    "fit_rate",
    "load_config",
    "parse_config",
    "run_experiment",
]

EXPERIMENTS = ("circle", "pacman", "slit")
PACMAN_TAU = 4.0 / 7.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one experiment.

    ``data`` is a function of points ``(m, 2)``: the Dirichlet trace ``g`` for
    ``data_kind == "dirichlet"``, the right-hand side ``f`` for ``"direct"``.
    """

    name: str
    degree: int
    knots: tuple
    weights: tuple
    control: tuple
    closed: bool
    data_kind: str
    data: object
    energy: float | None = None
    a: float = 0.0
    b: float = 1.0
    theta: float = 0.75
    mode: str = "adaptive"
    max_knots: int = 1500
    min_eta: float = 0.0
    quad_order: int = 16
    max_levels: int = 200

    def __post_init__(self):
        if self.mode not in ("uniform", "adaptive"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.data_kind not in ("dirichlet", "direct"):
            raise ValueError(f"unknown data kind {self.data_kind!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError("theta must lie in (0, 1]")
        if self.max_knots < 1 or self.quad_order < 2:
            raise ValueError("max_knots and quad_order must be positive")

    def curve(self) -> NurbsCurve:
        kv = KnotVector(self.knots, self.degree, self.closed, self.a, self.b)
        return NurbsCurve(kv, np.asarray(self.weights, dtype=float), np.asarray(self.control, dtype=float))

    def mesh(self) -> BoundaryMesh:
        return BoundaryMesh.from_curve(self.curve())

    def boundary_data(self) -> BoundaryData:
        return BoundaryData(self.data_kind, self.data, energy=self.energy)

    def quad(self) -> QuadConfig:
        return QuadConfig(order=self.quad_order, log_order=min(self.quad_order, 32))


# ---------------------------------------------------------------------------
# built-in experiments


def circle_trace(x):
    x = np.asarray(x, dtype=float)
    return x[:, 0] ** 2 + 10.0 * x[:, 0] * x[:, 1] - x[:, 1] ** 2


def circle_density(x):
    """Normal derivative of ``x^2 + 10xy - y^2`` on the circle of radius 1/10."""
    return 20.0 * circle_trace(x)


def pacman_trace(x, tau: float = PACMAN_TAU):
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[:, 0], x[:, 1])
    alpha = np.arctan2(x[:, 1], x[:, 0])
    return r**tau * np.cos(tau * alpha)


def pacman_density(x, normal, tau: float = PACMAN_TAU):
    """Normal derivative of ``r^tau cos(tau alpha)`` for unit normals ``normal``."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[:, 0], x[:, 1])
    al = np.arctan2(x[:, 1], x[:, 0])
    grad = np.column_stack(
        [
            np.cos(al) * np.cos(tau * al) + np.sin(al) * np.sin(tau * al),
            np.sin(al) * np.cos(tau * al) - np.cos(al) * np.sin(tau * al),
        ]
    )
    return (grad * normal).sum(axis=1) * tau * r ** (tau - 1.0)


def slit_rhs(x):
    return -0.5 * np.asarray(x, dtype=float)[:, 0]


def slit_density(x):
    s = np.asarray(x, dtype=float)[:, 0]
    return -s / np.sqrt(1.0 - s**2)


def _circle() -> ExperimentConfig:
    s = 1.0 / math.sqrt(2.0)
    ctrl = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 0), (1, 1)]
    return ExperimentConfig(
        name="circle",
        degree=2,
        knots=(1 / 4, 1 / 4, 2 / 4, 2 / 4, 3 / 4, 3 / 4, 1, 1, 1),
        weights=(1, s, 1, s, 1, s, 1, 1, s),
        control=tuple((0.1 * px, 0.1 * py) for px, py in ctrl),
        closed=True,
        data_kind="dirichlet",
        data=circle_trace,
        energy=13 * math.pi / 5000,
    )


def pacman_weight(tau: float = PACMAN_TAU) -> float:
    # each circular arc spans the angle (pi / tau) * 2/8; a quadratic NURBS
    # arc is exact for the middle weight cos(half of that angle)
    return math.cos(math.pi / tau / 8.0)


def _pacman(w: float | None = None) -> ExperimentConfig:
    tau = PACMAN_TAU
    w = pacman_weight(tau) if w is None else w

    def arc(k, scale=1.0):
        ang = math.pi / tau * k / 8.0
        return (0.1 * scale * math.cos(ang), 0.1 * scale * math.sin(ang))

    ctrl = (
        arc(2), arc(3, 1 / w), arc(4), arc(4, 0.5), (0.0, 0.0), arc(-4, 0.5), arc(-4),
        arc(-3, 1 / w), arc(-2), arc(-1, 1 / w), arc(0), arc(0), arc(1, 1 / w),
    )
    knots = tuple(k / 6 for k in (1, 1, 2, 2, 3, 3, 4, 4, 5, 5)) + (1, 1, 1)
    return ExperimentConfig(
        name="pacman",
        degree=2,
        knots=knots,
        weights=(1, w, 1, 1, 1, 1, 1, w, 1, w, 1, 1, w),
        control=ctrl,
        closed=True,
        data_kind="dirichlet",
        data=pacman_trace,
        energy=0.083525924784082,
    )


def _slit() -> ExperimentConfig:
    return ExperimentConfig(
        name="slit",
        degree=1,
        knots=(0, 0, 1 / 5, 2 / 5, 3 / 5, 4 / 5, 1, 1),
        weights=(1, 1, 1, 1, 1, 1),
        control=((-1, 0), (-3 / 5, 0), (-1 / 5, 0), (1 / 5, 0), (3 / 5, 0), (1, 0)),
        closed=False,
        data_kind="direct",
        data=slit_rhs,
        energy=math.pi / 4,
        max_knots=1000,
    )


def builtin_config(name: str) -> ExperimentConfig:
    """Configuration of one of the built-in experiments ``circle``, ``pacman``, ``slit``."""
    makers = {"circle": _circle, "pacman": _pacman, "slit": _slit}
    if name not in makers:
        raise ValueError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    return makers[name]()


# ---------------------------------------------------------------------------
# config files

_BINOPS = {
    ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
    ast.Div: operator.truediv, ast.Pow: operator.pow,
}
_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "arctan2": np.arctan2, "hypot": np.hypot,
}
_CONSTS = {"pi": math.pi, "e": math.e}


def _evaluate(node, env):
    """Evaluate an arithmetic expression tree over numbers, names and whitelisted calls."""
    if isinstance(node, ast.Expression):
        return _evaluate(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name):
        if node.id in env:
            return env[node.id]
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ValueError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _evaluate(node.operand, env)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_evaluate(node.left, env), _evaluate(node.right, env))
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if node.keywords:
            raise ValueError("keyword arguments are not allowed")
        return _FUNCS[node.func.id](*(_evaluate(a, env) for a in node.args))
    if isinstance(node, (ast.Tuple, ast.List)):
        return [_evaluate(e, env) for e in node.elts]
    raise ValueError(f"unsupported expression element {type(node).__name__}")


def _number(text: str):
    return _evaluate(ast.parse(text, mode="eval"), {})


def point_function(expr: str):
    """Vectorized function of points from an expression in ``x``, ``y``, ``r`` and ``alpha``."""
    tree = ast.parse(expr, mode="eval")

    def func(pts):
        pts = np.asarray(pts, dtype=float)
        env = {
            "x": pts[:, 0], "y": pts[:, 1],
            "r": np.hypot(pts[:, 0], pts[:, 1]), "alpha": np.arctan2(pts[:, 1], pts[:, 0]),
        }
        return np.broadcast_to(np.asarray(_evaluate(tree, env), dtype=float), (len(pts),)).copy()

    # probe once so that malformed expressions fail at load time
    func(np.zeros((1, 2)))
    return func


_FIELDS = {
    "name": str, "degree": int, "knots": tuple, "weights": tuple, "control": tuple,
    "closed": bool, "data_kind": str, "energy": float, "a": float, "b": float,
    "theta": float, "mode": str, "max_knots": int, "min_eta": float,
    "quad_order": int, "max_levels": int,
}


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines on top of ``base``.

    Values are numbers, strings, booleans or (nested) lists; numeric entries
    may be arithmetic such as ``1/3`` or ``cos(pi/8)``.  The key ``data``
    holds an expression in ``x``, ``y``, ``r`` and ``alpha``.
    """
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "data":
            values["data"] = point_function(ast.literal_eval(val))
            continue
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        kind = _FIELDS[key]
        if kind is str:
            values[key] = str(ast.literal_eval(val))
        elif kind is bool:
            values[key] = val.lower() in ("true", "1", "yes")
        elif kind is tuple:
            seq = _number(val)
            values[key] = tuple(tuple(v) if isinstance(v, list) else v for v in seq)
        elif key == "energy" and val.lower() == "none":
            values[key] = None
        else:
            values[key] = kind(_number(val))
    if base is None:
        missing = {"name", "degree", "knots", "weights", "control", "closed", "data_kind", "data"} - set(values)
        if missing:
            raise ValueError(f"missing keys: {sorted(missing)}")
        return ExperimentConfig(**values)
    return replace(base, **values)


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), base)


# ---------------------------------------------------------------------------
# the loop


@dataclass(frozen=True)
class LevelRecord:
    level: int
    N: int
    estimator: float
    error: float | None
    seconds: float
    energy: float
    kappa: float
    weight_min: float
    weight_max: float
    max_multiplicity: int
    max_rho: float
    orthogonality: float
    marked: int = 0
    bisected: int = 0
    raised: int = 0


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: LevelRecord) -> None:
        if self.rows and row.N <= self.rows[-1].N:
            raise ValueError("knot counts must increase strictly")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        lines = ["level,N,estimator,error,seconds"]
        for r in self.rows:
            err = "" if r.error is None else repr(float(r.error))
            lines.append(f"{r.level},{r.N},{float(r.estimator)!r},{err},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"


@dataclass
class RunResult:
    config: ExperimentConfig
    table: ConvergenceTable
    mesh: BoundaryMesh
    indicators: Indicators
    kappa0: float
    stop_reason: str = ""


def run_experiment(cfg: ExperimentConfig, log=None) -> RunResult:
    """Solve, estimate, mark and refine until ``max_knots`` or ``min_eta`` is reached.

    A refined mesh is only solved while its knot count stays within
    ``max_knots``; the initial mesh is always solved.
    """
    mesh = cfg.mesh()
    data = cfg.boundary_data()
    quad = cfg.quad()
    kappa0 = shape_regularity(mesh)[0]
    table = ConvergenceTable()
    level = 0
    while True:
        start = time.perf_counter()
        system = solve(mesh, data, quad)
        ind = compute_indicators(system)
        seconds = time.perf_counter() - start
        if cfg.mode == "uniform":
            marked = mark_all(mesh)
        else:
            marked = doerfler_mark(ind, cfg.theta)
        decision = decide_actions(mesh, marked)
        bw = mesh.basis_weights
        row = LevelRecord(
            level=level,
            N=mesh.n_knots,
            estimator=ind.eta,
            error=system.energy_error(),
            seconds=seconds,
            energy=system.energy,
            kappa=shape_regularity(mesh)[0],
            weight_min=float(bw.min()),
            weight_max=float(bw.max()),
            max_multiplicity=int(mesh.multiplicities.max()),
            max_rho=check_a1_a2(mesh).max_rho,
            orthogonality=system.orthogonality(),
            **decision.counts,
        )
        table.append(row)
        if log is not None:
            err = "-" if row.error is None else f"{row.error:.4e}"
            log(f"level {level} N={row.N} eta={row.estimator:.4e} err={err} "
                f"marked={row.marked} bisected={row.bisected} raised={row.raised} "
                f"t={seconds:.2f}s")
        done = (
            len(decision.marked) == 0
            or ind.eta <= cfg.min_eta
            or level + 1 >= cfg.max_levels
            or mesh.n_knots >= cfg.max_knots
        )
        if done:
            stop_reason = "converged" if len(decision.marked) == 0 or ind.eta <= cfg.min_eta else (
                "max_levels" if level + 1 >= cfg.max_levels else "max_knots")
            break
        try:
            refined = refine(mesh, decision, kappa0)
        except RefinementError as exc:
            stop_reason = str(exc)
            break
        if refined.n_knots > cfg.max_knots:
            stop_reason = "max_knots"
            break
        mesh = refined
        level += 1
    return RunResult(cfg, table, mesh, ind, kappa0, stop_reason)


def fit_rate(table: ConvergenceTable, window: int = 5, quantity: str | None = None) -> float:
    """Least-squares slope of ``log e`` (or ``log eta``) against ``log N``.

    Uses the last ``window`` rows with a positive value; rows whose error
    was clamped to zero are skipped.  ``quantity`` is ``"error"`` or
    ``"estimator"``; by default the error is used when every row has one.
    """
    rows = table.rows
    if quantity is None:
        quantity = "error" if rows and all(r.error is not None for r in rows) else "estimator"
    if quantity not in ("error", "estimator"):
        raise ValueError(f"unknown quantity {quantity!r}")
    N = np.array([r.N for r in rows], dtype=float)
    v = np.array([getattr(r, quantity) for r in rows], dtype=float)
    keep = np.isfinite(v) & (v > 0.0)
    if keep.sum() < max(window, 2):
        raise ValueError(f"need at least {max(window, 2)} rows with positive values")
    N, v = N[keep][-window:], v[keep][-window:]
    return float(np.polyfit(np.log(N), np.log(v), 1)[0])


def export(result: RunResult, out_dir) -> list[Path]:
    """Write ``convergence.csv``, ``knots.csv`` and ``indicators.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "convergence.csv": result.table.to_csv(),
        "knots.csv": "parameter,multiplicity\n" + result.mesh.dump(),
        "indicators.csv": result.indicators.dump(),
    }
    paths = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        paths.append(path)
    return paths
