"""Command-line workflows: solve / simulate / sweep / verify.

Configuration is a single JSON document (matrices as row-major nested
arrays); a handful of presets are shipped embedded. All numeric output is
CSV (UTF-8, '.' decimal, 17 significant digits) plus plain-text reports,
intended for external plotting. Exit codes: 0 ok, 1 config error, 2 solver
error, 3 verify failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bridge import (
    SteeringProblem,
    corollary_q_zero,
    coupling_roots,
    initial_conditions,
    lemma1_residual,
    solve,
    spurious_root_escape,
)
from .errors import ConfigError, CovsteerError, DomainError
from .hamiltonian import propagate, symplectic_residual
from .monte_carlo import simulate, tolerance_tube
from .systems import make_system, piecewise_constant_coefficient, sampled_coefficient

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# configuration

@dataclass
class MonteCarloConfig:
    n_paths: int = 5000
    n_steps: int = 1000
    seed: int | None = None
    checkpoints: list[float] = field(default_factory=lambda: [i / 10 for i in range(11)])
    tube_level: float = 3.0
    tube_resolution: int = 64


@dataclass
class RunConfig:
    """In-memory mirror of the JSON config; round-trips losslessly."""

    name: str
    system: dict
    sigma0: list
    sigma1: list
    epsilon: float = 1.0
    grid_size: int = 2000
    eps_list: list[float] = field(default_factory=lambda: [10.0, 1.0, 0.1, 0.01, 0.0])
    monte_carlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        for key in ("name", "system", "sigma0", "sigma1"):
            if key not in raw:
                raise ConfigError(f"missing required config field '{key}'")
        known = {
            "name", "system", "sigma0", "sigma1", "epsilon",
            "grid_size", "eps_list", "monte_carlo",
        }
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config field '{key}'")
        mc_raw = raw.get("monte_carlo", {})
        mc_known = {"n_paths", "n_steps", "seed", "checkpoints", "tube_level", "tube_resolution"}
        for key in mc_raw:
            if key not in mc_known:
                raise ConfigError(f"unknown config field 'monte_carlo.{key}'")
        mc = MonteCarloConfig(**mc_raw)
        cfg = cls(
            name=str(raw["name"]),
            system=raw["system"],
            sigma0=raw["sigma0"],
            sigma1=raw["sigma1"],
            epsilon=float(raw.get("epsilon", 1.0)),
            grid_size=int(raw.get("grid_size", 2000)),
            eps_list=[float(e) for e in raw.get("eps_list", [10.0, 1.0, 0.1, 0.01, 0.0])],
            monte_carlo=mc,
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.grid_size < 1:
            raise ConfigError("grid_size must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.monte_carlo.n_paths < 2:
            raise ConfigError("monte_carlo.n_paths must be at least 2")
        if self.monte_carlo.n_steps < 1:
            raise ConfigError("monte_carlo.n_steps must be positive")
        try:
            problem = build_problem(self)
        except (CovsteerError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid problem definition: {exc}") from exc
        n = problem.sys.dim_state
        s0 = np.asarray(self.sigma0, dtype=float)
        if s0.shape != (n, n):
            raise ConfigError(f"sigma0 must be {n}x{n}")


def _coefficient(spec, path: str):
    if isinstance(spec, list):
        return np.array(spec, dtype=float)
    if isinstance(spec, dict):
        kind = spec.get("kind")
        try:
            if kind == "constant":
                return np.array(spec["value"], dtype=float)
            if kind == "piecewise":
                return piecewise_constant_coefficient(spec["breaks"], spec["values"])
            if kind == "sampled":
                return sampled_coefficient(spec["times"], spec["values"])
        except KeyError as exc:
            raise ConfigError(f"{path}: missing key {exc} for kind '{kind}'") from exc
        except DomainError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        raise ConfigError(f"{path}: unknown coefficient kind '{kind}'")
    raise ConfigError(f"{path}: coefficient must be a nested array or an object")


def build_problem(cfg: RunConfig) -> SteeringProblem:
    sysd = cfg.system
    if not isinstance(sysd, dict) or "A" not in sysd or "B" not in sysd:
        raise ConfigError("system: must be an object with at least 'A' and 'B'")
    sys_obj = make_system(
        _coefficient(sysd["A"], "system.A"),
        _coefficient(sysd["B"], "system.B"),
        _coefficient(sysd["Q"], "system.Q") if "Q" in sysd else None,
        _coefficient(sysd["R"], "system.R") if "R" in sysd else None,
    )
    return SteeringProblem(
        sys_obj,
        np.array(cfg.sigma0, dtype=float),
        np.array(cfg.sigma1, dtype=float),
        cfg.epsilon,
    )


def _inertial(q_scale: float, **overrides) -> dict:
    base = {
        "system": {
            "A": [[0.0, 1.0], [0.0, 0.0]],
            "B": [[0.0], [1.0]],
            "Q": [[q_scale, 0.0], [0.0, q_scale]],
            "R": [[1.0]],
        },
        "sigma0": [[2.0, 0.0], [0.0, 2.0]],
        "sigma1": [[0.25, 0.0], [0.0, 0.25]],
        "epsilon": 1.0,
        "grid_size": 2000,
    }
    base.update(overrides)
    return base


PRESETS: dict[str, dict] = {
    "scalar-trivial": {
        "name": "scalar-trivial",
        "system": {"A": [[0.0]], "B": [[1.0]], "Q": [[0.0]], "R": [[1.0]]},
        "sigma0": [[1.0]],
        "sigma1": [[1.0]],
        "epsilon": 1.0,
        "grid_size": 1000,
        "eps_list": [1.0, 0.1, 0.01, 0.0],
    },
    "inertial-q1": dict(_inertial(1.0), name="inertial-q1"),
    "inertial-q10": dict(_inertial(10.0), name="inertial-q10"),
    "inertial-qneg5": dict(_inertial(-5.0), name="inertial-qneg5"),
    "inertial-q0": dict(_inertial(0.0), name="inertial-q0"),
    "inertial-r4": dict(_inertial(1.0), name="inertial-r4"),
}
PRESETS["inertial-r4"]["system"]["R"] = [[4.0]]


def load_config(args) -> RunConfig:
    if args.config is None and args.preset is None:
        raise ConfigError("either --config or --preset is required")
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    else:
        if args.preset not in PRESETS:
            raise ConfigError(
                f"unknown preset '{args.preset}' (available: {', '.join(sorted(PRESETS))})"
            )
        raw = json.loads(json.dumps(PRESETS[args.preset]))
    cfg = RunConfig.from_dict(raw)
    if getattr(args, "seed", None) is not None:
        cfg.monte_carlo.seed = args.seed
    if getattr(args, "steps", None) is not None:
        cfg.monte_carlo.n_steps = args.steps
    if getattr(args, "paths", None) is not None:
        cfg.monte_carlo.n_paths = args.paths
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# CSV emission

def _config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _write_csv(path: Path, header: list[str], rows, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# covsteer {__version__} schema={SCHEMA_VERSION} config={_config_hash(cfg)}\r\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (int, float, np.floating)) else v
                             for v in row])


def _upper_triangle_header(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{i + 1}_{j + 1}" for i in range(n) for j in range(i, n)]


def _upper_triangle(mat: np.ndarray) -> list[float]:
    n = mat.shape[0]
    return [mat[i, j] for i in range(n) for j in range(i, n)]


# ---------------------------------------------------------------------------
# commands

def run_solve(cfg: RunConfig, out_dir: Path) -> dict:
    problem = build_problem(cfg)
    solution = solve(problem, cfg.grid_size)
    n, m = problem.sys.dim_state, problem.sys.dim_input
    out_dir.mkdir(parents=True, exist_ok=True)

    _write_csv(
        out_dir / "gains.csv",
        ["t"] + [f"k_{i + 1}_{j + 1}" for i in range(m) for j in range(n)],
        ([t] + list(solution.k[idx].ravel()) for idx, t in enumerate(solution.grid)),
        cfg,
    )
    for label, arr in (("pi", solution.pi), ("h", solution.h), ("sigma", solution.sigma)):
        _write_csv(
            out_dir / f"{label}.csv",
            ["t"] + _upper_triangle_header(label, n),
            ([t] + _upper_triangle(arr[idx]) for idx, t in enumerate(solution.grid)),
            cfg,
        )

    bt_path = propagate(problem.sys, 0.0, 1.0, np.linspace(0.0, 1.0, 101), cfg.grid_size)
    roots = coupling_roots(problem.sigma0, problem.sigma1, bt_path[-1], problem.epsilon)
    escape_plus = spurious_root_escape(problem, bt_path, roots.z_plus)
    escape_minus = spurious_root_escape(problem, bt_path, roots.z_minus)
    lines = [
        f"covsteer {__version__} solve report ({cfg.name})",
        f"config hash: {_config_hash(cfg)}",
        f"epsilon: {_fmt(problem.epsilon)}",
        f"boundary residual t=0: {_fmt(solution.boundary_residuals[0])}",
        f"boundary residual t=1: {_fmt(solution.boundary_residuals[1])}",
        f"symplectic residual of Phi(1,0): {_fmt(solution.diagnostics['symplectic_residual'])}",
    ]
    if "sum_law_residual" in solution.diagnostics:
        lines.append(f"sum-law residual (max over grid): "
                     f"{_fmt(solution.diagnostics['sum_law_residual'])}")
    lines += [
        f"branch: minus root selected; Pi(0) eigenvalues "
        f"{np.array2string(np.linalg.eigvalsh(solution.pi[0]), precision=6)}",
        f"escape scan (minus root): sign change={escape_minus.sign_change}, "
        f"min |det X|={_fmt(escape_minus.min_abs_determinant)}",
        f"escape scan (plus root):  sign change={escape_plus.sign_change}, "
        f"min |det X|={_fmt(escape_plus.min_abs_determinant)}",
    ]
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"solution": solution, "problem": problem}


def run_simulate(cfg: RunConfig, out_dir: Path) -> dict:
    if cfg.monte_carlo.seed is None:
        raise ConfigError("monte_carlo.seed is required for simulation")
    ctx = run_solve(cfg, out_dir)
    problem, solution = ctx["problem"], ctx["solution"]
    mc = cfg.monte_carlo
    result = simulate(
        problem, solution, mc.n_paths, mc.n_steps, mc.seed, checkpoints=mc.checkpoints
    )
    n = problem.sys.dim_state

    _write_csv(
        out_dir / "paths.csv",
        ["path_id", "t"] + [f"x_{i + 1}" for i in range(n)],
        (
            [pid, t] + list(result.states[pid, ci])
            for pid in range(result.n_paths)
            for ci, t in enumerate(result.grid)
        ),
        cfg,
    )
    _write_csv(
        out_dir / "empirical_cov.csv",
        ["t"] + _upper_triangle_header("cov", n),
        ([t] + _upper_triangle(result.empirical_cov[ci]) for ci, t in enumerate(result.grid)),
        cfg,
    )
    if n == 2:
        tube = tolerance_tube(solution, mc.tube_level, mc.tube_resolution)
        _write_csv(
            out_dir / "tube.csv",
            ["t", "point_index", "z_1", "z_2", "level"],
            (
                [solution.grid[ti], pi, tube[ti, pi, 0], tube[ti, pi, 1], mc.tube_level]
                for ti in range(len(solution.grid))
                for pi in range(tube.shape[1])
            ),
            cfg,
        )
    (out_dir / "cost.txt").write_text(
        f"cost estimate: {_fmt(result.cost_estimate)}\n"
        f"standard error: {_fmt(result.cost_stderr)}\n"
        f"paths: {result.n_paths}  steps: {mc.n_steps}  seed: {mc.seed}\n",
        encoding="utf-8",
    )
    return {"result": result, **ctx}


def run_sweep(cfg: RunConfig, out_dir: Path) -> dict:
    if len(cfg.eps_list) == 0:
        raise ConfigError("eps_list must not be empty for sweep")
    problem = build_problem(cfg)
    bt = propagate(problem.sys, 0.0, 1.0, [1.0], cfg.grid_size)[-1]
    pi0_limit = initial_conditions(
        SteeringProblem(problem.sys, problem.sigma0, problem.sigma1, 0.0), bt
    )[0]
    rows = []
    for eps in cfg.eps_list:
        p_eps = SteeringProblem(problem.sys, problem.sigma0, problem.sigma1, eps)
        sol = solve(p_eps, cfg.grid_size)
        gap = float(np.linalg.norm(sol.pi[0] - pi0_limit))
        rows.append([eps, gap, sol.boundary_residuals[0], sol.boundary_residuals[1]])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out_dir / "sweep.csv",
        ["epsilon", "pi0_gap", "boundary_residual_0", "boundary_residual_1"],
        rows,
        cfg,
    )
    return {"rows": rows}


def run_verify(tol_scale: float = 1.0, seed: int = 20260826,
               debug_plus_branch: bool = False, stream=None) -> int:
    """Batch property checks over the shipped presets; returns the exit code."""
    stream = stream or sys.stdout
    checks: list[tuple[str, bool, str]] = []

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        worst = max(worst, lemma1_residual(_random_spd(rng, dim), _random_spd(rng, dim)))
    tol = 1e-10 * tol_scale
    checks.append(("lemma1-identity", worst < tol, f"max residual {worst:.3e} (tol {tol:.1e})"))

    for name in ("scalar-trivial", "inertial-q1", "inertial-q10", "inertial-qneg5"):
        cfg = RunConfig.from_dict(json.loads(json.dumps(PRESETS[name])))
        problem = build_problem(cfg)
        bts = propagate(problem.sys, 0.0, 1.0, np.linspace(0.0, 1.0, 11), cfg.grid_size)
        res = max(symplectic_residual(bt) for bt in bts)
        tol = 1e-9 * tol_scale
        checks.append(
            (f"symplectic-residual:{name}", res < tol, f"max residual {res:.3e} (tol {tol:.1e})")
        )
        roots = coupling_roots(problem.sigma0, problem.sigma1, bts[-1], problem.epsilon)
        plus = spurious_root_escape(problem, bts, roots.z_plus)
        minus = spurious_root_escape(problem, bts, roots.z_minus)
        checks.append(
            (f"escape-plus-root:{name}", plus.sign_change,
             f"sign change={plus.sign_change}, min |det X|={plus.min_abs_determinant:.3e}")
        )
        checks.append(
            (f"no-escape-minus-root:{name}", not minus.sign_change,
             f"sign change={minus.sign_change}, min |det X|={minus.min_abs_determinant:.3e}")
        )

    for name in ("scalar-trivial", "inertial-q0"):
        cfg = RunConfig.from_dict(json.loads(json.dumps(PRESETS[name])))
        problem = build_problem(cfg)
        bt = propagate(problem.sys, 0.0, 1.0, [1.0], cfg.grid_size)[-1]
        pi0_ham, _ = initial_conditions(problem, bt)
        pi0_gram, _ = corollary_q_zero(problem, cfg.grid_size)
        gap = float(np.abs(pi0_ham - pi0_gram).max())
        tol = 1e-8 * tol_scale
        checks.append(
            (f"gramian-route-equivalence:{name}", gap < tol, f"gap {gap:.3e} (tol {tol:.1e})")
        )

    failed = False
    for name, ok, detail in checks:
        tag = "PASS" if ok else "FAIL"
        print(f"{tag} {name}: {detail}", file=stream)
        if not ok:
            failed = True
    if debug_plus_branch:
        cfg = RunConfig.from_dict(json.loads(json.dumps(PRESETS["scalar-trivial"])))
        problem = build_problem(cfg)
        bts = propagate(problem.sys, 0.0, 1.0, np.linspace(0.0, 1.0, 11), cfg.grid_size)
        plus = spurious_root_escape(problem, bts)
        print(
            f"EXPECTED-FAIL forced-plus-branch: determinant sign change "
            f"{plus.sign_change} (interior singularity of the linearized flow)",
            file=stream,
        )
    return 3 if failed else 0


def _random_spd(rng: np.random.Generator, dim: int, cond_max: float = 1e4) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    spread = rng.uniform(1.0, cond_max)
    eigs = np.exp(rng.uniform(0.0, np.log(spread), dim))
    return (q * eigs) @ q.T


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covsteer",
        description="Steer a linear stochastic system between Gaussian covariances.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the steering problem and emit trajectory CSVs"),
        ("simulate", "solve, then Monte Carlo validate the closed loop"),
        ("sweep", "solve across a list of noise intensities"),
        ("verify", "run the built-in property suites"),
    ):
        p = sub.add_parser(name, help=help_text)
        if name != "verify":
            p.add_argument("--config", help="path to a JSON run configuration")
            p.add_argument("--preset", help=f"named preset ({', '.join(sorted(PRESETS))})")
            p.add_argument("--out", default="out", help="output directory (default: ./out)")
            p.add_argument("--seed", type=int, help="override monte_carlo.seed")
            p.add_argument("--steps", type=int, help="override monte_carlo.n_steps")
            p.add_argument("--paths", type=int, help="override monte_carlo.n_paths")
        else:
            p.add_argument("--seed", type=int, default=20260826)
            p.add_argument("--tol-scale", type=float, default=1.0,
                           help="multiply every verify tolerance by this factor")
            p.add_argument("--debug-plus-branch", action="store_true",
                           help="also show the escape diagnostic on the spurious root")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return run_verify(args.tol_scale, args.seed, args.debug_plus_branch)
        cfg = load_config(args)
        out_dir = Path(args.out)
        if args.command == "solve":
            run_solve(cfg, out_dir)
        elif args.command == "simulate":
            run_simulate(cfg, out_dir)
        elif args.command == "sweep":
            run_sweep(cfg, out_dir)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except CovsteerError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
