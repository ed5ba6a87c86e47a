"""Configured experiments with deterministic CSV tables and a JSON manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .dynamics import ScalarDomainError, ScalarState, scalar_gd_step, train
from .hessian import (analytic_eigenvalues, balanced_minimum, eos_threshold, estimate_sharpness,
                      numerical_hessian)
from .kernels import run_balanced_from_small
from .model import (FactorKind, InitKind, NetworkConfig, TargetMatrix, ValidationError, Weights,
                    make_target)
from .orbit import (Regime, detect_period, diag_gd_step, diag_orbit_roots, eos_ranges,
                    find_orbit_roots, tail_peak_to_peak)

SCHEMA_VERSION = 1
MAX_GRID = 10_000
TAIL_COLUMNS = 16


class ExperimentKind(str, Enum):
    TRAIN = "train"
    BIFURCATION = "bifurcation"
    RANK_P_OSCILLATION = "rank_p_oscillation"
    BALANCING_DECAY = "balancing_decay"
    OSCILLATION_RANGE = "oscillation_range"
    MILD_SHARPENING_MAP = "mild_sharpening_map"
    CONTOUR_TOY = "contour_toy"
    SVS_CONVERGENCE = "svs_convergence"
    DIAGONAL_COMPARE = "diagonal_compare"
    HESSIAN_VERIFY = "hessian_verify"
    ORBIT_ROOTS = "orbit_roots"


NEEDS_GRID = {ExperimentKind.BIFURCATION, ExperimentKind.RANK_P_OSCILLATION,
              ExperimentKind.OSCILLATION_RANGE, ExperimentKind.MILD_SHARPENING_MAP,
              ExperimentKind.CONTOUR_TOY, ExperimentKind.DIAGONAL_COMPARE,
              ExperimentKind.ORBIT_ROOTS}
NEEDS_ETA = {ExperimentKind.TRAIN, ExperimentKind.BALANCING_DECAY, ExperimentKind.SVS_CONVERGENCE}

# field name -> help text; the CLI prints this table under --help
CONFIG_FIELDS = {
    "schema_version": "config format version, must be 1",
    "kind": "experiment kind: " + ", ".join(k.value for k in ExperimentKind),
    "network.depth": "number of layers L >= 2",
    "network.dim": "layer width d",
    "network.rank": "target rank r (1 <= r <= d)",
    "network.init_scale": "init scale alpha >= 0 (also the Hessian-verify alpha)",
    "network.init_kind": "balanced | unbalanced_zero_top | orthogonal_zero_top | gaussian_random",
    "network.seed": "seed for random initializations",
    "target.singular_values": "strictly decreasing positive list of length r",
    "target.factor_kind": "identity | random_orthogonal",
    "target.seed": "seed for random target factors",
    "eta": "learning rate for single-run kinds (train, balancing_decay, svs_convergence)",
    "eta_grid": "learning-rate grid: a list, or {start, stop, num, relative}; relative scales by 2/S_1",
    "max_iters": "iteration budget (default 20000 for d <= 8, 5000 otherwise)",
    "record_every": "record cadence for trajectory kinds (default 1 for d <= 8, 10 otherwise)",
    "depths": "depth list for mild_sharpening_map (default 2..6)",
    "start": "per-layer start values for contour_toy (default [1.5, 2.25])",
    "init_kinds": "init kinds compared by svs_convergence",
    "escape_budget": "max steps to leave the origin saddle in scalar sweeps",
    "out": "output directory; nothing is written when absent",
    "seed": "master seed, overrides network.seed and target.seed when given",
    "_*": "any key starting with an underscore is an ignored annotation",
}


def _fail(name: str, message: str):
    raise ValidationError(f"{name}: {message}")


def _int(data: dict, name: str, default=None, minimum: int | None = None, prefix: str = "") -> int | None:
    v = data.get(name, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        _fail(prefix + name, f"expected an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        _fail(prefix + name, f"must be >= {minimum}, got {v}")
    return v


def _float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(name, f"expected a finite number, got {value!r}")
    return float(value)


def _check_keys(data: dict, allowed: Sequence[str], prefix: str = ""):
    if not isinstance(data, dict):
        _fail(prefix.rstrip(".") or "config", "expected a JSON object")
    for k in data:
        # keys starting with "_" are free-form annotations
        if k not in allowed and not k.startswith("_"):
            _fail(prefix + k, "unknown field")


@dataclass(frozen=True)
class TargetSpec:
    singular_values: tuple
    factor_kind: FactorKind = FactorKind.IDENTITY
    seed: int = 0

    def build(self, dim: int) -> TargetMatrix:
        return make_target(dim, len(self.singular_values), self.singular_values,
                           self.factor_kind, self.seed)


@dataclass(frozen=True)
class EtaGrid:
    """Either explicit ``values`` or ``num`` points on ``[start, stop]``, optionally in units of 2/S_1."""

    values: tuple | None = None
    start: float | None = None
    stop: float | None = None
    num: int | None = None
    relative: bool = False

    def resolve(self, depth: int, sigma_star: float) -> np.ndarray:
        if self.values is not None:
            grid = np.array(self.values, dtype=float)
        else:
            grid = np.linspace(self.start, self.stop, self.num)
        if self.relative:
            grid = grid * eos_threshold(depth, sigma_star)
        return grid

    def to_json(self):
        if self.values is not None:
            return list(self.values)
        return {"start": self.start, "stop": self.stop, "num": self.num, "relative": self.relative}

    @classmethod
    def parse(cls, raw) -> "EtaGrid":
        if isinstance(raw, list):
            vals = tuple(_float(v, "eta_grid") for v in raw)
            if not vals:
                _fail("eta_grid", "must not be empty")
            if len(vals) > MAX_GRID:
                _fail("eta_grid", f"at most {MAX_GRID} points")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                _fail("eta_grid", "must be strictly increasing")
            if vals[0] <= 0:
                _fail("eta_grid", "learning rates must be positive")
            return cls(values=vals)
        if isinstance(raw, dict):
            _check_keys(raw, ("start", "stop", "num", "relative"), "eta_grid.")
            for k in ("start", "stop", "num"):
                if k not in raw:
                    _fail(f"eta_grid.{k}", "missing")
            start, stop = _float(raw["start"], "eta_grid.start"), _float(raw["stop"], "eta_grid.stop")
            num = _int(raw, "num", prefix="eta_grid.", minimum=1)
            relative = raw.get("relative", False)
            if not isinstance(relative, bool):
                _fail("eta_grid.relative", "expected true or false")
            if num > MAX_GRID:
                _fail("eta_grid.num", f"at most {MAX_GRID} points")
            if start <= 0 or (num > 1 and stop <= start):
                _fail("eta_grid", "need 0 < start < stop")
            return cls(start=start, stop=stop, num=num, relative=relative)
        _fail("eta_grid", "expected a list or an object {start, stop, num, relative}")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: ExperimentKind
    network: NetworkConfig
    target: TargetSpec
    eta: float | None = None
    eta_grid: EtaGrid | None = None
    max_iters: int | None = None
    record_every: int | None = None
    depths: tuple | None = None
    start: tuple | None = None
    init_kinds: tuple | None = None
    escape_budget: int = 400_000_000
    out: str | None = None
    seed: int | None = None
    schema_version: int = SCHEMA_VERSION

    @property
    def iterations(self) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return 20_000 if self.network.dim <= 8 else 5_000

    @property
    def cadence(self) -> int:
        if self.record_every is not None:
            return self.record_every
        return 1 if self.network.dim <= 8 else 10

    def grid(self, depth: int | None = None) -> np.ndarray:
        return self.eta_grid.resolve(depth or self.network.depth, self.target.singular_values[0])

    def build_target(self) -> TargetMatrix:
        return self.target.build(self.network.dim)

    def to_dict(self) -> dict:
        net = asdict(self.network)
        net["init_kind"] = self.network.init_kind.value
        out = {
            "schema_version": self.schema_version,
            "kind": self.kind.value,
            "network": net,
            "target": {"singular_values": list(self.target.singular_values),
                       "factor_kind": self.target.factor_kind.value, "seed": self.target.seed},
        }
        optional = {
            "eta": self.eta,
            "eta_grid": None if self.eta_grid is None else self.eta_grid.to_json(),
            "max_iters": self.max_iters, "record_every": self.record_every,
            "depths": None if self.depths is None else list(self.depths),
            "start": None if self.start is None else list(self.start),
            "init_kinds": None if self.init_kinds is None else [k.value for k in self.init_kinds],
            "escape_budget": self.escape_budget, "out": self.out, "seed": self.seed,
        }
        out.update({k: v for k, v in optional.items() if v is not None})
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        top = [k for k in CONFIG_FIELDS if "." not in k and k != "_*"] + ["network", "target"]
        _check_keys(data, top)
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            _fail("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}")
        if "kind" not in data:
            _fail("kind", "missing")
        try:
            kind = ExperimentKind(data["kind"])
        except ValueError:
            _fail("kind", f"unknown kind {data['kind']!r}")
        seed = _int(data, "seed")

        net = data.get("network", {})
        _check_keys(net, ("depth", "dim", "rank", "init_scale", "init_kind", "seed"), "network.")
        for k in ("depth", "dim"):
            if k not in net:
                _fail(f"network.{k}", "missing")
        tgt = data.get("target")
        if tgt is None:
            _fail("target", "missing")
        _check_keys(tgt, ("singular_values", "factor_kind", "seed"), "target.")
        if "singular_values" not in tgt:
            _fail("target.singular_values", "missing")
        sv = tgt["singular_values"]
        if not isinstance(sv, list) or not sv:
            _fail("target.singular_values", "expected a non-empty list")
        sv = tuple(_float(v, "target.singular_values") for v in sv)
        if any(v <= 0 for v in sv) or any(b >= a for a, b in zip(sv, sv[1:])):
            _fail("target.singular_values", "must be positive and strictly decreasing")
        try:
            factor_kind = FactorKind(tgt.get("factor_kind", "identity"))
        except ValueError:
            _fail("target.factor_kind", f"unknown factor kind {tgt.get('factor_kind')!r}")
        try:
            init_kind = InitKind(net.get("init_kind", InitKind.UNBALANCED_ZERO_TOP.value))
        except ValueError:
            _fail("network.init_kind", f"unknown init kind {net.get('init_kind')!r}")
        rank = _int(net, "rank", len(sv), 1, "network.")
        if rank != len(sv):
            _fail("network.rank", f"rank {rank} differs from {len(sv)} target singular values")
        try:
            network = NetworkConfig(
                depth=_int(net, "depth", minimum=2, prefix="network."),
                dim=_int(net, "dim", minimum=1, prefix="network."),
                rank=rank,
                init_scale=_float(net.get("init_scale", 0.01), "network.init_scale"),
                init_kind=init_kind,
                seed=seed if seed is not None else _int(net, "seed", 0, prefix="network."),
            )
        except ValidationError as exc:
            _fail("network", str(exc))
        target = TargetSpec(sv, factor_kind,
                            seed if seed is not None else _int(tgt, "seed", 0, prefix="target."))

        eta = data.get("eta")
        if eta is not None:
            eta = _float(eta, "eta")
            if eta < 0:
                _fail("eta", "must be >= 0")
        grid = EtaGrid.parse(data["eta_grid"]) if "eta_grid" in data else None
        if kind in NEEDS_GRID and grid is None:
            _fail("eta_grid", f"required for kind {kind.value}")
        if kind in NEEDS_ETA and eta is None:
            _fail("eta", f"required for kind {kind.value}")

        depths = data.get("depths")
        if depths is not None:
            if not isinstance(depths, list) or not depths:
                _fail("depths", "expected a non-empty list")
            depths = tuple(_int({"d": v}, "d", minimum=2, prefix="depths.") for v in depths)
            if any(b <= a for a, b in zip(depths, depths[1:])):
                _fail("depths", "must be strictly increasing")
        start = data.get("start")
        if start is not None:
            if not isinstance(start, list):
                _fail("start", "expected a list of per-layer values")
            start = tuple(_float(v, "start") for v in start)
            if len(start) != network.depth:
                _fail("start", f"need {network.depth} values, got {len(start)}")
        init_kinds = data.get("init_kinds")
        if init_kinds is not None:
            if not isinstance(init_kinds, list) or not init_kinds:
                _fail("init_kinds", "expected a non-empty list")
            try:
                init_kinds = tuple(InitKind(k) for k in init_kinds)
            except ValueError as exc:
                _fail("init_kinds", str(exc))
        out = data.get("out")
        if out is not None and not isinstance(out, str):
            _fail("out", "expected a path string")
        return cls(kind=kind, network=network, target=target, eta=eta, eta_grid=grid,
                   max_iters=_int(data, "max_iters", minimum=1),
                   record_every=_int(data, "record_every", minimum=1),
                   depths=depths, start=start, init_kinds=init_kinds,
                   escape_budget=_int(data, "escape_budget", 400_000_000, 1), out=out, seed=seed,
                   schema_version=version)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"config: cannot read {path}: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config: {path} is not valid JSON ({exc})") from exc
        return cls.from_dict(data)


# ---------------------------------------------------------------- tables


@dataclass(frozen=True)
class Column:
    name: str
    unit: str = ""
    kind: str = "float"  # float | int | label


@dataclass
class ResultTable:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def add(self, **values) -> None:
        row = []
        for c in self.columns:
            v = values.pop(c.name, None)
            if v is None:
                row.append(None)
            elif c.kind == "label":
                row.append(str(v.value if isinstance(v, Enum) else v))
            elif c.kind == "int":
                row.append(int(v))
            else:
                v = float(v)
                if not math.isfinite(v):
                    raise ValueError(f"column {c.name}: non-finite value {v}; use the status label")
                row.append(v)
        if values:
            raise KeyError(f"unknown columns {sorted(values)} for table {self.name}")
        self.rows.append(tuple(row))

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> list:
        k = self.names.index(name)
        return [r[k] for r in self.rows]

    def records(self) -> list[dict]:
        return [dict(zip(self.names, r)) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.names)
        for r in self.rows:
            w.writerow(["" if v is None else format(v, ".17g") if isinstance(v, float) else v
                        for v in r])
        return buf.getvalue()

    def write(self, directory: str | os.PathLike) -> Path:
        path = Path(directory) / f"{self.name}.csv"
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(self.to_csv().encode("utf-8"))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
        return path


def input_hash(config: ExperimentConfig) -> str:
    """Git blob id of the canonical config JSON, so equal configs hash equally."""
    payload = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


# ---------------------------------------------------------------- parallel map


def pool_size() -> int:
    env = os.environ.get("EOSLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"EOSLAB_THREADS must be an integer, got {env!r}")
        return max(1, n)
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


def map_cells(fn: Callable, cells: Sequence) -> list:
    """``[fn(c) for c in cells]``, in a process pool when more than one core is available.

    Results come back in input order whatever the scheduling.
    """
    n = min(pool_size(), len(cells))
    if n <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, cells, chunksize=1))


# ---------------------------------------------------------------- experiments

_STATUS = Column("status", kind="label")


def _period_label(p) -> tuple[str, int | None]:
    if isinstance(p, Regime):
        return p.value, None
    return "periodic", p


def _scalar_cell(args):
    sigma0, sigma_star, depth, lr, window, budget = args
    escape, tail, last = run_balanced_from_small(sigma0, sigma_star, depth, lr, window=window,
                                                 max_escape=budget)
    if escape >= budget and math.isfinite(last) and last ** depth < 0.5 * sigma_star:
        return escape, None, "stalled"
    period = detect_period(tail)
    return escape, tail, period


def _bifurcation(cfg: ExperimentConfig) -> ResultTable:
    L, s1 = cfg.network.depth, cfg.target.singular_values[0]
    thr = eos_threshold(L, s1)
    cols = [Column("eta", "lr"), Column("eta_over_threshold"), _STATUS, Column("period", kind="int"),
            Column("escape_steps", "steps", "int")]
    cols += [Column(f"tail_{k}", "sigma_end_to_end") for k in range(1, TAIL_COLUMNS + 1)]
    table = ResultTable("bifurcation", tuple(cols))
    grid = cfg.grid()
    cells = [(cfg.network.init_scale, s1, L, float(lr), cfg.iterations, cfg.escape_budget)
             for lr in grid]
    for lr, (escape, tail, period) in zip(grid, map_cells(_scalar_cell, cells)):
        row = dict(eta=lr, eta_over_threshold=lr / thr, escape_steps=escape)
        if tail is None:
            table.add(status=period, **row)
            continue
        label, p = _period_label(period)
        if label == "diverged":
            table.add(status=label, **row)
            continue
        ends = tail[-TAIL_COLUMNS:] ** L
        table.add(status=label, period=p, **row,
                  **{f"tail_{k + 1}": v for k, v in enumerate(ends)})
    return table


def _rank_cell(args):
    cfg, lr = args
    traj = train(cfg.network, cfg.build_target(), lr, cfg.iterations, record_every=1,
                 track_subspaces=False, track_layers=False)
    if traj.diverged:
        return None
    return tail_peak_to_peak(traj.coordinates)


def _rank_p(cfg: ExperimentConfig) -> ResultTable:
    s = np.array(cfg.target.singular_values)
    r = s.size
    ranges = eos_ranges(cfg.network.depth, s)
    cols = [Column("eta", "lr"), Column("predicted_rank", kind="int"), _STATUS,
            Column("observed_rank", kind="int")]
    cols += [Column(f"amplitude_{i}", "sigma") for i in range(1, r + 1)]
    cols += [Column(f"relative_amplitude_{i}") for i in range(1, r + 1)]
    table = ResultTable("rank_p_oscillation", tuple(cols))
    grid = cfg.grid()
    for lr, amp in zip(grid, map_cells(_rank_cell, [(cfg, float(lr)) for lr in grid])):
        row = dict(eta=lr, predicted_rank=ranges.rank_for(lr))
        if amp is None:
            table.add(status="diverged", **row)
            continue
        rel = amp / s
        table.add(status="ok", observed_rank=int(np.sum(rel > 1e-3)), **row,
                  **{f"amplitude_{i + 1}": a for i, a in enumerate(amp)},
                  **{f"relative_amplitude_{i + 1}": a for i, a in enumerate(rel)})
    return table


def _trajectory_table(name: str, traj, r: int, extra_cols=(), extra=None) -> ResultTable:
    cols = list(extra_cols) + [Column("iteration", "steps", "int"), _STATUS, Column("loss")]
    cols += [Column(f"sigma_{i}", "sigma") for i in range(1, r + 1)]
    has_gaps = traj.records and traj.records[0].balancing_gaps is not None
    has_dist = traj.records and traj.records[0].subspace_distances is not None
    if has_gaps:
        cols += [Column(f"gap_{i}", "sigma^2") for i in range(1, r + 1)]
    if has_dist:
        cols.append(Column("subspace_distance_max"))
    table = ResultTable(name, tuple(cols))
    extra = extra or {}
    for rec in traj.records:
        row = dict(iteration=rec.iteration, status="ok", loss=rec.loss, **extra)
        row.update({f"sigma_{i + 1}": v for i, v in enumerate(rec.target_coordinates[:r])})
        if has_gaps:
            row.update({f"gap_{i + 1}": v for i, v in enumerate(rec.balancing_gaps[:r])})
        if has_dist:
            row["subspace_distance_max"] = float(np.max(rec.subspace_distances))
        table.add(**row)
    if traj.diverged:
        table.add(iteration=traj.diverged_at, status="diverged", **extra)
    return table


def _train(cfg: ExperimentConfig, name: str = "train") -> ResultTable:
    traj = train(cfg.network, cfg.build_target(), cfg.eta, cfg.iterations,
                 record_every=cfg.cadence, track_subspaces=cfg.network.dim <= 64)
    return _trajectory_table(name, traj, cfg.network.rank)


def _scalar_weights(values: Sequence[float]) -> Weights:
    return Weights(tuple(np.array([[v]]) for v in values))


def _contour_toy(cfg: ExperimentConfig) -> ResultTable:
    if cfg.network.dim != 1 or cfg.network.rank != 1:
        _fail("network", "contour_toy needs dim = rank = 1")
    L = cfg.network.depth
    start = cfg.start or ((1.5, 2.25) if L == 2 else None)
    if start is None:
        _fail("start", f"required for depth {L}")
    target = cfg.build_target()
    cols = [Column("eta", "lr"), Column("iteration", "steps", "int"), _STATUS]
    cols += [Column(f"layer_{l}") for l in range(1, L + 1)]
    cols += [Column("product", "sigma"), Column("gap", "sigma^2"), Column("loss")]
    table = ResultTable("contour_toy", tuple(cols))
    for lr in cfg.grid():
        for t, w in contour_path(start, target.singular_values[0], float(lr), cfg.iterations):
            if w is None:
                table.add(eta=lr, iteration=t, status="diverged")
                break
            if t % cfg.cadence:
                continue
            table.add(eta=lr, iteration=t, status="ok", product=float(np.prod(w)),
                      gap=float(np.max(np.abs(w[-1] ** 2 - w[:-1] ** 2))),
                      loss=0.5 * (float(np.prod(w)) - target.singular_values[0]) ** 2,
                      **{f"layer_{l + 1}": v for l, v in enumerate(w)})
    return table


def contour_path(start: Sequence[float], sigma_star: float, lr: float, n: int):
    """Yield ``(t, layer values)`` for GD on ``1/2 (prod w - s*)^2``; ``None`` once diverged."""
    w = np.array(start, dtype=float)
    yield 0, w
    for t in range(1, n + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            w = diag_gd_step(w[:, None], np.array([sigma_star]), lr)[:, 0]
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > 1e12:
            yield t, None
            return
        yield t, w


def _oscillation_range(cfg: ExperimentConfig) -> ResultTable:
    L, s1 = cfg.network.depth, cfg.target.singular_values[0]
    cols = [Column("eta", "lr"), Column("eta_over_threshold"), _STATUS, Column("period", kind="int"),
            Column("predicted_low", "sigma"), Column("predicted_high", "sigma"),
            Column("observed_low", "sigma"), Column("observed_high", "sigma")]
    table = ResultTable("oscillation_range", tuple(cols))
    thr = eos_threshold(L, s1)
    grid = cfg.grid()
    cells = [(cfg.network.init_scale, s1, L, float(lr), cfg.iterations, cfg.escape_budget)
             for lr in grid]
    for lr, (_, tail, period) in zip(grid, map_cells(_scalar_cell, cells)):
        row = dict(eta=lr, eta_over_threshold=lr / thr)
        if tail is None:
            table.add(status=period, **row)
            continue
        label, p = _period_label(period)
        if label == "diverged":
            table.add(status=label, **row)
            continue
        roots = find_orbit_roots(L, s1, float(lr))
        if roots is not None:
            row.update(predicted_low=roots.low ** L, predicted_high=roots.high ** L)
        t = tail[int(0.8 * tail.size):] ** L
        table.add(status=label, period=p, observed_low=t.min(), observed_high=t.max(), **row)
    return table


def _sharpening_cell(args):
    depth, lr, sigma_star, alpha, window, budget = args
    escape, tail, period = _scalar_cell((alpha, sigma_star, depth, lr, window, budget))
    sharp = None
    if tail is not None and np.all(np.isfinite(tail)):
        target = make_target(1, 1, [sigma_star])
        w = _scalar_weights([tail[-1]] * depth)
        sharp = estimate_sharpness(w, target).value
    return escape, period, sharp


def _mild_sharpening(cfg: ExperimentConfig) -> ResultTable:
    s1 = cfg.target.singular_values[0]
    depths = cfg.depths or (2, 3, 4, 5, 6)
    cols = [Column("depth", kind="int"), Column("eta", "lr"), Column("threshold", "lr"),
            Column("predicted_eos", kind="label"), _STATUS, Column("period", kind="int"),
            Column("final_sharpness"), Column("escape_steps", "steps", "int")]
    table = ResultTable("mild_sharpening_map", tuple(cols))
    cells = [(L, float(lr), s1, cfg.network.init_scale, cfg.iterations, cfg.escape_budget)
             for L in depths for lr in cfg.grid()]
    for (L, lr, *_), (escape, period, sharp) in zip(cells, map_cells(_sharpening_cell, cells)):
        thr = eos_threshold(L, s1)
        row = dict(depth=L, eta=lr, threshold=thr, escape_steps=escape,
                   predicted_eos="yes" if lr > thr else "no")
        if isinstance(period, str):
            table.add(status=period, **row)
            continue
        label, p = _period_label(period)
        table.add(status=label, period=p, final_sharpness=sharp if label != "diverged" else None, **row)
    return table


def _svs_convergence(cfg: ExperimentConfig) -> ResultTable:
    kinds = cfg.init_kinds or (cfg.network.init_kind,)
    target = cfg.build_target()
    tables = []
    for kind in kinds:
        net = NetworkConfig(cfg.network.depth, cfg.network.dim, cfg.network.rank,
                            cfg.network.init_scale, kind, cfg.network.seed)
        traj = train(net, target, cfg.eta, cfg.iterations, record_every=cfg.cadence)
        tables.append(_trajectory_table("svs_convergence", traj, net.rank,
                                        (Column("init_kind", kind="label"),), {"init_kind": kind}))
    out = tables[0]
    for t in tables[1:]:
        out.rows.extend(t.rows)
    return out


def _balancing_decay(cfg: ExperimentConfig) -> ResultTable:
    return _train(cfg, "balancing_decay")


def _diag_cell(args):
    depth, s_star, alpha, lr, n = args
    s_star = np.asarray(s_star)
    d = s_star.size
    layers = np.full((depth, d), alpha)
    scalars = [ScalarState([alpha] * depth, v) for v in s_star]
    scalar_ok = True
    target = make_target(d, d, s_star)
    net = NetworkConfig(depth, d, d, alpha, InitKind.BALANCED)
    traj = train(net, target, lr, n, record_every=1, track_subspaces=False, track_layers=False)
    diag_path = [np.prod(layers, axis=0)]
    scalar_diff = 0.0
    for _ in range(n):
        with np.errstate(over="ignore", invalid="ignore"):
            layers = diag_gd_step(layers, s_star, lr)
            if scalar_ok:
                try:
                    scalars = [scalar_gd_step(s, lr) for s in scalars]
                except ScalarDomainError:
                    scalar_ok = False
        if not np.all(np.isfinite(layers)) or np.max(np.abs(layers)) > 1e12:
            return None
        if scalar_ok:
            scalar_diff = max(scalar_diff, float(np.max(np.abs(
                layers - np.array([s.values for s in scalars]).T))))
        diag_path.append(np.prod(layers, axis=0))
    if traj.diverged:
        return None
    matrix_diff = np.max(np.abs(np.array(diag_path) - traj.coordinates), axis=0)
    return scalar_diff if scalar_ok else None, matrix_diff, diag_orbit_roots(depth, s_star, lr)


def _diagonal_compare(cfg: ExperimentConfig) -> ResultTable:
    s = cfg.target.singular_values
    L = cfg.network.depth
    cols = [Column("eta", "lr"), Column("coordinate", kind="int"), _STATUS,
            Column("diag_root_low"), Column("diag_root_high"),
            Column("scalar_root_low"), Column("scalar_root_high"), Column("root_difference"),
            Column("scalar_trajectory_difference"), Column("matrix_trajectory_difference")]
    table = ResultTable("diagonal_compare", tuple(cols))
    grid = cfg.grid()
    cells = [(L, s, cfg.network.init_scale, float(lr), cfg.iterations) for lr in grid]
    for lr, res in zip(grid, map_cells(_diag_cell, cells)):
        if res is None:
            for i in range(len(s)):
                table.add(eta=lr, coordinate=i + 1, status="diverged")
            continue
        scalar_diff, matrix_diff, roots = res
        for i, (v, rd) in enumerate(zip(s, roots)):
            rs = find_orbit_roots(L, v, float(lr))
            row = dict(eta=lr, coordinate=i + 1, scalar_trajectory_difference=scalar_diff,
                       matrix_trajectory_difference=matrix_diff[i])
            if rd is None or rs is None:
                status = "stable" if rd is None and rs is None else "mismatch"
                table.add(status=status, **row)
                continue
            table.add(status="two_cycle", diag_root_low=rd.low, diag_root_high=rd.high,
                      scalar_root_low=rs.low, scalar_root_high=rs.high,
                      root_difference=max(abs(rd.low - rs.low), abs(rd.high - rs.high)), **row)
    return table


def match_eigenvalues(analytic: Sequence[float], numerical: Sequence[float]):
    """Greedy nearest matching, largest analytic value first.

    Returns ``(pairs, leftover)`` with ``pairs[k] = (analytic, numerical)``.
    """
    pool = sorted(numerical, reverse=True)
    pairs = []
    for a in sorted(analytic, reverse=True):
        k = int(np.argmin([abs(a - x) for x in pool]))
        pairs.append((a, pool.pop(k)))
    return pairs, pool


def hessian_comparison(target: TargetMatrix, depth: int, alpha: float):
    """Analytic families, finite-difference spectrum, matching and leftovers at the balanced minimum."""
    spec = analytic_eigenvalues(depth, target.dim, target.rank, target.singular_values, alpha)
    w = balanced_minimum(target, depth, alpha)
    num = np.linalg.eigvalsh(numerical_hessian(w, target))
    pairs, leftover = match_eigenvalues(spec.values(), num)
    return spec, num, pairs, leftover


def _hessian_verify(cfg: ExperimentConfig) -> ResultTable:
    spec, num, pairs, leftover = hessian_comparison(cfg.build_target(), cfg.network.depth,
                                                    cfg.network.init_scale)
    families = {}
    for v, _ in spec.self_interaction:
        families.setdefault(round(v, 12), "self_interaction")
    for _, _, v in spec.cross:
        families.setdefault(round(v, 12), "cross")
    for v in spec.init_interaction:
        families.setdefault(round(v, 12), "init_interaction")
    cols = [Column("rank", kind="int"), Column("family", kind="label"), _STATUS,
            Column("analytic"), Column("numerical"), Column("abs_error"), Column("rel_error")]
    table = ResultTable("hessian_verify", tuple(cols))
    k = 0
    for a, x in pairs:
        k += 1
        err = abs(a - x)
        ok = err <= max(1e-4, 1e-4 * abs(a))
        table.add(rank=k, family=families[round(a, 12)], status="match" if ok else "mismatch",
                  analytic=a, numerical=x, abs_error=err, rel_error=err / abs(a))
    tail_value = spec.top_layer_tail[0]
    for x in sorted(leftover, reverse=True):
        k += 1
        fam = "top_layer_tail" if abs(x - tail_value) <= max(1e-6, 1e-4 * tail_value) and x > 1e-12 \
            else "zero"
        table.add(rank=k, family=fam, status="leftover", numerical=x)
    return table


def _orbit_roots(cfg: ExperimentConfig) -> ResultTable:
    L, s1 = cfg.network.depth, cfg.target.singular_values[0]
    thr = eos_threshold(L, s1)
    cols = [Column("eta", "lr"), Column("eta_over_threshold"), _STATUS,
            Column("rho_low"), Column("rho_high"), Column("residual_low"), Column("residual_high"),
            Column("sigma_low", "sigma"), Column("sigma_high", "sigma")]
    table = ResultTable("orbit_roots", tuple(cols))
    for lr in cfg.grid():
        roots = find_orbit_roots(L, s1, float(lr))
        row = dict(eta=lr, eta_over_threshold=lr / thr)
        if roots is None:
            table.add(status="no_orbit", **row)
            continue
        table.add(status="multiple" if roots.multiple else "found", rho_low=roots.low,
                  rho_high=roots.high, residual_low=roots.residual_low,
                  residual_high=roots.residual_high, sigma_low=roots.low ** L,
                  sigma_high=roots.high ** L, **row)
    return table


RUNNERS = {
    ExperimentKind.TRAIN: _train,
    ExperimentKind.BIFURCATION: _bifurcation,
    ExperimentKind.RANK_P_OSCILLATION: _rank_p,
    ExperimentKind.BALANCING_DECAY: _balancing_decay,
    ExperimentKind.OSCILLATION_RANGE: _oscillation_range,
    ExperimentKind.MILD_SHARPENING_MAP: _mild_sharpening,
    ExperimentKind.CONTOUR_TOY: _contour_toy,
    ExperimentKind.SVS_CONVERGENCE: _svs_convergence,
    ExperimentKind.DIAGONAL_COMPARE: _diagonal_compare,
    ExperimentKind.HESSIAN_VERIFY: _hessian_verify,
    ExperimentKind.ORBIT_ROOTS: _orbit_roots,
}


def run_experiment(config: ExperimentConfig) -> ResultTable:
    """Run one configured experiment; writes ``<kind>.csv`` and ``manifest.json`` when ``out`` is set."""
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    table = RUNNERS[config.kind](config)
    table.manifest = {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "config": config.to_dict(),
        "started_at": started.isoformat(timespec="seconds"),
        "duration_seconds": round(time.perf_counter() - t0, 6),
        "input_hash": input_hash(config),
        "columns": [{"name": c.name, "unit": c.unit, "kind": c.kind} for c in table.columns],
    }
    if config.out is not None:
        table.write(config.out)
        path = Path(config.out) / "manifest.json"
        try:
            path.write_text(json.dumps(table.manifest, indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return table
