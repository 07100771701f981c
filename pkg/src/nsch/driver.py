"""Run configuration, initial data, time loops, output writers and studies."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from nsch.diagnostics import DiagRecord, make_record
from nsch.fespace import fe_space
from nsch.mesh import Mesh, build_structured_mesh
from nsch.potentials import PhysParams
from nsch.schemes import SCHEMES, NonConvergenceError, Params, State, Stepper

log = logging.getLogger(__name__)

EXPERIMENTS = ("example1", "merging", "coarsening", "rotating", "custom")
DROPLET_PAIRS = {
    "merging": (((0.35, 0.5), 0.15), ((0.65, 0.5), 0.15)),
    "coarsening": (((0.3, 0.5), 0.15), ((0.75, 0.5), 0.10)),
}
CSV_COLUMNS = [
    "step", "time", "E_kin", "E_mix", "E_total", "volume", "phi_min", "phi_max",
    "neg_sq", "over_sq", "G_func", "J_func", "fp_iters",
]
RESIDUAL_COLUMNS = [
    "step", "time", "energy_residual", "energy_scale", "G_residual", "G_scale",
    "J_residual", "J_scale", "lin_res_max",
]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scheme: str = "Geps"
    n: int = 32
    dt: float = 1e-4
    t_end: float = 2e-2
    eps: float = 1e-8
    eta: float = 1e-2
    lam: float = 1e-1
    gamma: float = 1e-3
    nu: object = 1.0
    tol: float = 1e-4
    max_iters: int = 50
    lin_tol: float = 1e-10
    experiment: str = "merging"
    out_dir: Optional[str] = None
    cadence: int = 1
    seed: int = 0
    rot_phi0: str = "coarsening"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.rot_phi0 not in DROPLET_PAIRS:
            raise ConfigError(f"rot_phi0 must be one of {sorted(DROPLET_PAIRS)}")
        if self.cadence < 1:
            raise ConfigError("cadence must be at least 1")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if not self.t_end >= 0:
            raise ConfigError("t_end must be non-negative")
        try:
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.num_steps()

    def phys(self) -> PhysParams:
        return PhysParams(eta=self.eta, eps=self.eps, lam=self.lam, gamma=self.gamma, nu=self.nu)

    def params(self) -> Params:
        bc = rotating_velocity if self.experiment == "rotating" else None
        return Params(
            phys=self.phys(), dt=self.dt, scheme=self.scheme, tol=self.tol,
            max_iters=self.max_iters, lin_tol=self.lin_tol, bc=bc,
        )

    def num_steps(self) -> int:
        """Number of uniform steps of size dt to reach t_end (must be whole)."""
        k = round(self.t_end / self.dt)
        if abs(k * self.dt - self.t_end) > 1e-9 * max(self.dt, self.t_end):
            raise ConfigError(f"t_end={self.t_end!r} is not a multiple of dt={self.dt!r}")
        return k


# -- config files ----------------------------------------------------------

_KEY_ALIASES = {"lambda": "lam"}
_INT_KEYS = {"n", "max_iters", "cadence", "seed"}
_STR_KEYS = {"scheme", "experiment", "out_dir", "rot_phi0"}


def _parse_value(key: str, raw: str):
    if key in _STR_KEYS:
        return raw
    if key == "nu":
        parts = [float(v) for v in raw.replace(",", " ").split()]
        if len(parts) == 1:
            return parts[0]
        if len(parts) == 2:
            return tuple(parts)
        raise ValueError("nu takes one value or two (nu0, nu1)")
    if key in _INT_KEYS:
        return int(raw)
    return float(raw)


def parse_config(text: str, base_dir: Optional[Path] = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: repeated key {key!r}")
        try:
            values[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    if base_dir is not None and "out_dir" in values:
        out = Path(values["out_dir"])
        values["out_dir"] = str(out if out.is_absolute() else base_dir / out)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


# -- initial and boundary data -----------------------------------------------

def rotating_velocity(x, y, t=0.0):
    s = np.sin(np.pi * x)
    return (
        2.0 * np.pi * np.cos(np.pi * y) * s**2,
        -4.0 * np.pi * np.cos(np.pi * x) * s * np.sin(np.pi * y),
    )


def droplet(x, y, center, radius, eta):
    dist = np.hypot(x - center[0], y - center[1])
    return 0.5 * (1.0 - np.tanh((dist - radius) / (2.0 * np.sqrt(2.0) * eta)))


def droplet_pair(x, y, name, eta):
    (ca, ra), (cb, rb) = DROPLET_PAIRS[name]
    return np.minimum(1.0, droplet(x, y, ca, ra, eta) + droplet(x, y, cb, rb, eta))


def example1_phase(x, y):
    return 0.5 * (np.cos(5.0 * np.pi * x) * np.sin(3.0 * np.pi * y + 0.5 * np.pi) + 1.0)


def initial_fields(config: RunConfig, mesh: Mesh):
    """Nodal phi0 and full velocity (or None) for the configured experiment."""
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    exp = config.experiment
    if exp == "example1":
        return example1_phase(x, y), None
    if exp in DROPLET_PAIRS:
        return droplet_pair(x, y, exp, config.eta), None
    if exp == "rotating":
        space = fe_space(mesh)
        u = np.zeros((2, space.Nb))
        u[0, : space.N], u[1, : space.N] = rotating_velocity(x, y)
        return droplet_pair(x, y, config.rot_phi0, config.eta), u
    rng = np.random.default_rng(config.seed)
    return 0.5 + 0.05 * rng.uniform(-1.0, 1.0, size=x.shape), None


# -- writers ------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def write_vtk(path: Path, mesh: Mesh, state: State) -> None:
    """Legacy ASCII unstructured grid with nodal phi, mu, p and P1 velocity."""
    N = mesh.num_nodes
    lines = [
        "# vtk DataFile Version 3.0",
        f"nsch t={state.t:.17g}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {N} double",
    ]
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes]
    ne = mesh.num_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.elements]
    lines.append(f"CELL_TYPES {ne}")
    lines += ["5"] * ne
    lines.append(f"POINT_DATA {N}")
    for name, values in (("phi", state.phi), ("mu", state.mu), ("p", state.p)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in values]
    lines.append("VECTORS u double")
    lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in zip(state.u[0, :N], state.u[1, :N])]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


class _CsvSink:
    def __init__(self, path: Path, columns):
        self.columns = columns
        self.fh = open(path, "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(columns)

    def write(self, row: dict):
        self.writer.writerow([_fmt(row[c]) for c in self.columns])
        self.fh.flush()

    def close(self):
        self.fh.close()


# -- runs -----------------------------------------------------------------------

@dataclass
class RunResult:
    state: State
    records: list
    files: list = field(default_factory=list)
    lin_res_max: float = 0.0


class RunAborted(RuntimeError):
    """A step failed to converge; carries the partial result."""

    def __init__(self, cause: NonConvergenceError, result: RunResult):
        super().__init__(str(cause))
        self.cause = cause
        self.result = result


def _row(rec: DiagRecord, lin_res: float) -> dict:
    row = rec.as_dict()
    row["time"] = rec.t
    row["lin_res_max"] = lin_res
    return row


def run(config: RunConfig, mesh: Optional[Mesh] = None, phi0=None, u0=None) -> RunResult:
    """Integrate from 0 to ``config.t_end``.

    Records (with law residuals) are kept for every step; CSV rows and
    VTK snapshots are written every ``cadence`` steps and at the last
    step when ``out_dir`` is set. On a nonconvergent step the files
    written so far are kept and :class:`RunAborted` is raised.
    """
    mesh = mesh or build_structured_mesh(config.n)
    if mesh.n != config.n:
        raise ConfigError(f"mesh has n={mesh.n}, config asks for n={config.n}")
    stepper = Stepper(mesh, config.params())
    if phi0 is None:
        phi0, u_init = initial_fields(config, mesh)
        u0 = u_init if u0 is None else u0
    state = stepper.initial_state(phi0, u0)
    nsteps = config.num_steps()
    out = Path(config.out_dir) if config.out_dir else None
    diag = resid = None
    files = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        diag = _CsvSink(out / "diagnostics.csv", CSV_COLUMNS)
        resid = _CsvSink(out / "residuals.csv", RESIDUAL_COLUMNS)
        files += [out / "diagnostics.csv", out / "residuals.csv"]

    def emit(rec, k, lin_res):
        if out is None or (k % config.cadence and k != nsteps):
            return
        row = _row(rec, lin_res)
        diag.write(row)
        resid.write(row)
        path = out / f"fields_{k}.vtk"
        write_vtk(path, mesh, state)
        files.append(path)

    rec = make_record(stepper, state, 0)
    records = [rec]
    result = RunResult(state, records, files)
    try:
        emit(rec, 0, 0.0)
        for k in range(1, nsteps + 1):
            try:
                new, report = stepper.step(state)
            except NonConvergenceError as exc:
                log.error("step %d: %s", k, exc)
                raise RunAborted(exc, result) from exc
            lin_res = max(r.residual for r in report.solves)
            result.lin_res_max = max(result.lin_res_max, lin_res)
            rec = make_record(stepper, new, k, prev=state, fp_iters=report.iterations)
            # keep the nominal grid time free of accumulated round-off
            state = replace(new, t=k * config.dt)
            rec.t = state.t
            records.append(rec)
            result.state = state
            emit(rec, k, lin_res)
    finally:
        if diag is not None:
            diag.close()
            resid.close()
    return result


# -- studies ----------------------------------------------------------------------

def _as_fraction(x: float) -> Fraction:
    return Fraction(repr(float(x))).limit_denominator(10**15)


def common_final_time(dts) -> float:
    """Smallest positive time that is a whole number of steps for every dt."""
    fr = [_as_fraction(d) for d in dts]
    den = math.lcm(*(f.denominator for f in fr))
    return float(Fraction(math.lcm(*(int(f * den) for f in fr)), den))


def rate(e_coarse: float, e_fine: float, dt_coarse: float, dt_fine: float) -> float:
    """EOC ``log(e/e~) / log(dt/dt~)``."""
    return math.log(e_coarse / e_fine) / math.log(dt_coarse / dt_fine)


ERROR_KEYS = ("e2_phi", "e1_phi", "e2_mu", "e1_mu", "e2_u", "e1_u", "e2_p")


@dataclass
class EOCReport:
    dts: list
    ref_dt: float
    t_end: float
    errors: dict  # key -> list aligned with dts
    rates: dict  # key -> list of len(dts) - 1


def state_errors(mesh: Mesh, s: State, ref: State) -> dict:
    space = fe_space(mesh)
    du, dp = s.u - ref.u, s.p - ref.p
    dphi, dmu = s.phi - ref.phi, s.mu - ref.mu
    return {
        "e2_phi": space.l2_p1(dphi), "e1_phi": space.h1_p1(dphi),
        "e2_mu": space.l2_p1(dmu), "e1_mu": space.h1_p1(dmu),
        "e2_u": space.l2_velocity(du), "e1_u": space.h1_velocity(du),
        "e2_p": space.l2_p1(dp),
    }


def eoc_rates(dts, errors: dict) -> dict:
    return {
        key: [rate(v[i], v[i + 1], dts[i], dts[i + 1]) for i in range(len(dts) - 1)]
        for key, v in errors.items()
    }


def eoc_study(config: RunConfig, dts, ref_dt: float, t_end: Optional[float] = None,
              mesh: Optional[Mesh] = None, ref_mesh: Optional[Mesh] = None) -> EOCReport:
    """Time-convergence study against a fine-step reference on one mesh.

    ``t_end`` defaults to the smallest common multiple of all step sizes.
    Runs are ordered by decreasing ``dt`` in the report.
    """
    dts = sorted((float(d) for d in dts), reverse=True)
    if len(dts) < 2:
        raise ConfigError("an EOC study needs at least two test time steps")
    if not 0 < ref_dt < dts[-1]:
        raise ConfigError("reference dt must be positive and smaller than every test dt")
    mesh = mesh or build_structured_mesh(config.n)
    ref_mesh = ref_mesh or mesh
    if not mesh.same_grid(ref_mesh):
        raise ValueError("test and reference runs must share the spatial mesh")
    if t_end is None:
        t_end = common_final_time(dts + [ref_dt])
    base = replace(config, out_dir=None, t_end=t_end, dt=ref_dt)
    ref = run(base, mesh=ref_mesh).state
    errors = {k: [] for k in ERROR_KEYS}
    for dt in dts:
        s = run(replace(base, dt=dt), mesh=mesh).state
        for k, v in state_errors(mesh, s, ref).items():
            errors[k].append(v)
    return EOCReport(dts, ref_dt, t_end, errors, eoc_rates(dts, errors))


@dataclass
class SweepEntry:
    eps: float
    max_neg_sq: float
    max_over_sq: float
    min_phi: float
    max_phi: float
    records: list = field(repr=False, default_factory=list)


def epsilon_sweep(config: RunConfig, eps_values, mesh: Optional[Mesh] = None) -> list:
    """Max-over-time bound violations for each truncation parameter."""
    eps_values = [float(e) for e in eps_values]
    if config.scheme == "CM":
        raise ConfigError("the CM scheme does not use eps; sweep G_eps or J_eps")
    if len(eps_values) < 2:
        raise ConfigError("an eps sweep needs at least two values")
    mesh = mesh or build_structured_mesh(config.n)
    out = []
    for eps in eps_values:
        sub_dir = None
        if config.out_dir:
            sub_dir = str(Path(config.out_dir) / f"eps_{eps:g}")
        res = run(replace(config, eps=eps, out_dir=sub_dir), mesh=mesh)
        out.append(sweep_entry(eps, res.records))
    return out


def sweep_entry(eps: float, records) -> SweepEntry:
    return SweepEntry(
        eps,
        max(r.neg_sq for r in records),
        max(r.over_sq for r in records),
        min(r.phi_min for r in records),
        max(r.phi_max for r in records),
        list(records),
    )
