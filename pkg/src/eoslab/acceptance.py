"""Acceptance suite: one pass/fail check per reproducibility criterion."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import gradient_flow, iterate_balanced
from .hessian import eos_threshold, minima_sharpness_closed_form
from .kernels import run_balanced_from_small
from .lab import ExperimentConfig, contour_path, hessian_comparison, run_experiment
from .model import Weights, gradients, loss, make_target
from .orbit import (detect_period, eos_ranges, find_orbit_roots, oscillation_bracket,
                    stable_oscillation_condition)
from .rootfind import bisect


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"


HESSIAN_CASES = ((2, 2, (5.0,), 0.01), (2, 3, (3.0, 2.0), 0.05),
                 (3, 2, (5.0,), 0.01), (3, 3, (3.0, 2.0), 0.01))


def hessian_spectrum() -> tuple[bool, str]:
    notes, ok = [], True
    for L, d, s, alpha in HESSIAN_CASES:
        spec, num, pairs, leftover = hessian_comparison(make_target(d, len(s), s), L, alpha)
        worst = max(abs(a - x) / max(1e-4, 1e-4 * abs(a)) for a, x in pairs)
        left = max((abs(x) for x in leftover), default=0.0)
        case_ok = worst <= 1.0 and left < 1e-4
        ok &= case_ok
        notes.append(f"L={L},d={d}: match {worst:.2g} of tol, leftover {left:.3g}")
    return ok, "; ".join(notes)


def eos_threshold_probe() -> tuple[bool, str]:
    thr = eos_threshold(3, 10.0)
    periods = []
    for c in (0.98, 1.02):
        _, tail, _ = run_balanced_from_small(0.01, 10.0, 3, c * thr)
        periods.append(detect_period(tail))
    ok = abs(thr - 0.030943) < 1e-6 and periods == [1, 2]
    return ok, f"2/S={thr:.6f}, periods at 0.98/1.02: {periods[0]}/{periods[1]}"


def orbit_roots_vs_trajectories() -> tuple[bool, str]:
    worst, ok = 0.0, True
    for L in (2, 3, 4):
        for s in (1.0, 10.0):
            lr = 1.1 * eos_threshold(L, s)
            roots = find_orbit_roots(L, s, lr)
            if roots is None:
                return False, f"no roots for L={L}, s*={s}"
            r0 = s ** (1 / L)
            path = iterate_balanced(r0 * (1 + 1e-3), s, L, lr, 10_000)
            lo, hi = sorted(path[-2:])
            worst = max(worst, abs(lo - roots.low), abs(hi - roots.high))
            ok &= 0 < roots.low < r0 < roots.high < (2 * s) ** (1 / L)
    ok &= worst < 1e-8
    return ok, f"max |cycle - root| = {worst:.2e}, roots inside their intervals: {ok}"


RANK_SIGMA = (10.0, 9.5, 9.0)


def rank_p_learning_rates(depth: int = 3, sigma_star=RANK_SIGMA) -> list[float]:
    """One learning rate inside each rank-p window (40% of the way in; 2.5% past 2/S_r for p = r)."""
    w = eos_ranges(depth, sigma_star).windows
    out = [lo + 0.4 * (w[p + 1][0] - lo) for p, (lo, _) in enumerate(w[:-1])]
    out.append(1.025 * w[-1][0])
    return out


def rank_p_selectivity() -> tuple[bool, str]:
    cfg = ExperimentConfig.from_dict({
        "kind": "rank_p_oscillation",
        "network": {"depth": 3, "dim": 50, "rank": 3, "init_scale": 0.01},
        "target": {"singular_values": list(RANK_SIGMA)},
        "eta_grid": rank_p_learning_rates(),
    })
    ok, notes = True, []
    for p, row in enumerate(run_experiment(cfg).records(), start=1):
        if row["status"] != "ok":
            return False, f"rank-{p} run diverged"
        rel = [row[f"relative_amplitude_{i}"] for i in (1, 2, 3)]
        ok &= all(a > 1e-3 for a in rel[:p]) and all(a < 1e-6 for a in rel[p:])
        notes.append(f"p={p} eta={row['eta']:.5f} rel amp " + "/".join(f"{a:.1e}" for a in rel))
    return ok, "; ".join(notes)


CONTOUR_START = (1.5, 2.25)


def balancing_decay() -> tuple[bool, str]:
    def gaps(lr, n):
        out = []
        for _, w in contour_path(CONTOUR_START, 5.0, lr, n):
            if w is None:
                return None, None
            out.append((abs(w[1] ** 2 - w[0] ** 2), w[0] * w[1]))
        return np.array([g for g, _ in out]), np.array([p for _, p in out])

    g, prod = gaps(0.2010, 5000)
    if g is None:
        return False, "eta=0.2010 diverged"
    onset = int(np.argmax(prod >= 5.0))
    monotone = bool(np.all(np.diff(g[onset:]) < 0))
    ratio = g[-1] / g[0]
    g2, _ = gaps(0.18, 5000)
    ratio2 = g2[-1] / g2[0]
    ok = monotone and ratio < 1e-8 and ratio2 > 0.1
    return ok, (f"eta=0.2010: onset t={onset}, strictly decreasing={monotone}, final/initial={ratio:.1e}; "
                f"eta=0.18: final/initial={ratio2:.3f}")


def gf_conservation() -> tuple[bool, str]:
    target = make_target(1, 1, [5.0])
    w = Weights((np.array([[CONTOUR_START[0]]]), np.array([[CONTOUR_START[1]]])))
    traj = gradient_flow(w, target, 1.0, 1e-4, record_every=100)
    err = float(np.max(np.abs(traj.gaps[:, 0] - 2.8125)))
    return err < 1e-6, f"max |gap - 2.8125| = {err:.2e} over {len(traj)} records"


def flattest_minimum(samples: int = 1000, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    root = math.sqrt(5.0)

    def sharp(u):
        a = root * math.exp(u)
        return minima_sharpness_closed_form([a, 5.0 / a], 5.0)

    values = np.array([sharp(u) for u in rng.uniform(-3, 3, samples)])
    h = 1e-6
    u_star = bisect(lambda u: sharp(u + h) - sharp(u - h), -3.0, 3.0, xtol=1e-12)
    a_star = root * math.exp(u_star)
    ok = values.min() >= 10 - 1e-9 and abs(a_star - root) < 1e-6 and abs(sharp(u_star) - 10) < 1e-9
    return ok, f"min sampled {values.min():.9f}, minimizer |a - sqrt(5)| = {abs(a_star - root):.1e}"


def stable_oscillation() -> tuple[bool, str]:
    bad = [L for L in range(3, 33)
           if not (oscillation_bracket(L) > 0 and stable_oscillation_condition(L, 1.0)[1])]
    return not bad, "positive for all L in [3, 32]" if not bad else f"non-positive at L={bad}"


def bifurcation_table():
    cfg = ExperimentConfig.from_dict({
        "kind": "bifurcation", "network": {"depth": 3, "dim": 1, "init_scale": 0.01},
        "target": {"singular_values": [10.0]},
        "eta_grid": {"start": 0.9, "stop": 1.6, "num": 200, "relative": True},
    })
    return run_experiment(cfg)


def period_doubling() -> tuple[bool, str]:
    rows = bifurcation_table().records()
    first = {}
    for r in rows:
        if r["status"] == "periodic":
            first.setdefault(r["period"], r["eta_over_threshold"])
    ok = all(p in first for p in (1, 2, 4)) and first[1] < first[2] < first[4]
    shown = ", ".join(f"period {p} from {first[p]:.3f}" for p in sorted(first) if p <= 8)
    return ok, shown + " (units of 2/S)"


def diagonal_equivalence() -> tuple[bool, str]:
    cfg = ExperimentConfig.from_dict({
        "kind": "diagonal_compare", "network": {"depth": 3, "dim": 3, "init_scale": 0.01},
        "target": {"singular_values": list(RANK_SIGMA)},
        "eta_grid": rank_p_learning_rates(), "max_iters": 5000,
    })
    rows = run_experiment(cfg).records()
    bad = [r for r in rows if r["status"] not in ("two_cycle", "stable")
           or r["scalar_trajectory_difference"] is None]
    if bad:
        return False, f"{len(bad)} coordinates diverged or mismatched"
    worst = max(max(r["root_difference"] or 0.0, r["scalar_trajectory_difference"],
                    r["matrix_trajectory_difference"]) for r in rows)
    cycles = sum(r["status"] == "two_cycle" for r in rows)
    return worst < 1e-10, f"max difference {worst:.1e} over {len(rows)} coordinates ({cycles} on 2-cycles)"


SHARPENING_GRID = {"start": 0.625, "stop": 2.575, "num": 40}


def mild_sharpening() -> tuple[bool, str]:
    cfg = ExperimentConfig.from_dict({
        "kind": "mild_sharpening_map", "network": {"depth": 2, "dim": 1, "init_scale": 0.01},
        "target": {"singular_values": [0.5]}, "eta_grid": SHARPENING_GRID,
        "depths": [2, 3, 4, 5, 6],
    })
    rows = run_experiment(cfg).records()
    step = (SHARPENING_GRID["stop"] - SHARPENING_GRID["start"]) / (SHARPENING_GRID["num"] - 1)
    stable_bad = [r for r in rows if r["predicted_eos"] == "no"
                  and not (r["period"] == 1 and r["final_sharpness"] is not None
                           and r["final_sharpness"] < 2 / r["eta"])]
    offsets = []
    for L in cfg.depths:
        rs = [r for r in rows if r["depth"] == L]
        edge = min((r["eta"] for r in rs if r["period"] != 1), default=math.inf)
        offsets.append((edge - rs[0]["threshold"]) / step)
    ok = not stable_bad and all(abs(o) <= 1 for o in offsets)
    return ok, (f"{len(stable_bad)} sub-threshold cells misclassified; boundary offset in grid cells "
                + "/".join(f"{o:+.2f}" for o in offsets))


def svs_convergence() -> tuple[bool, str]:
    cfg = ExperimentConfig.from_dict({
        "kind": "svs_convergence",
        "network": {"depth": 3, "dim": 10, "rank": 3, "init_scale": 0.01},
        "target": {"singular_values": list(RANK_SIGMA), "factor_kind": "random_orthogonal"},
        "eta": 0.02, "max_iters": 3000, "record_every": 1,
        "init_kinds": ["orthogonal_zero_top", "gaussian_random"],
    })
    rows = run_experiment(cfg).records()
    ok, notes = True, []
    for kind in cfg.init_kinds:
        rs = [r for r in rows if r["init_kind"] == kind.value]
        aligned = next((r["iteration"] for r in rs if r["subspace_distance_max"] < 1e-6), None)
        fitted = next((r["iteration"] for r in rs if r["loss"] < 1e-8), None)
        good = aligned is not None and fitted is not None and aligned <= fitted
        ok &= good
        notes.append(f"{kind.value}: distance<1e-6 at {aligned}, loss<1e-8 at {fitted}, "
                     f"final distance {rs[-1]['subspace_distance_max']:.1e}")
    return ok, "; ".join(notes)


def gradient_check(instances: int = 100, seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        L, d = int(rng.integers(2, 5)), int(rng.integers(1, 5))
        r = int(rng.integers(1, d + 1))
        s = np.sort(rng.uniform(0.5, 3.0, r))[::-1] + np.arange(r, 0, -1) * 1e-3
        target = make_target(d, r, s, "random_orthogonal", int(rng.integers(1 << 30)))
        w = Weights(tuple(rng.standard_normal((d, d)) * 0.8 for _ in range(L)))
        g = np.concatenate([x.ravel() for x in gradients(w, target)])
        x0 = w.flat()
        h = 1e-6
        fd = np.empty_like(x0)
        for j in range(x0.size):
            e = np.zeros_like(x0)
            e[j] = h
            fd[j] = (loss(Weights.from_flat(x0 + e, L, d), target)
                     - loss(Weights.from_flat(x0 - e, L, d), target)) / (2 * h)
        tol = np.maximum(1e-6, 1e-5 * np.abs(g))
        worst = max(worst, float(np.max(np.abs(g - fd) / tol)))
    return worst <= 1.0, f"worst error {worst:.2f} of tolerance over {instances} instances"


CRITERIA: dict[int, tuple[str, Callable[[], tuple[bool, str]]]] = {
    1: ("Hessian spectrum oracle", hessian_spectrum),
    2: ("EOS threshold", eos_threshold_probe),
    3: ("orbit roots match trajectories", orbit_roots_vs_trajectories),
    4: ("rank-p selectivity", rank_p_selectivity),
    5: ("balancing decay beyond EOS", balancing_decay),
    6: ("gradient-flow conservation", gf_conservation),
    7: ("flattest minimum", flattest_minimum),
    8: ("stable-oscillation condition", stable_oscillation),
    9: ("period doubling", period_doubling),
    10: ("diagonal-network equivalence", diagonal_equivalence),
    11: ("mild sharpening", mild_sharpening),
    12: ("SVS convergence", svs_convergence),
    13: ("gradient correctness", gradient_check),
}

SUITES = {
    "all": tuple(CRITERIA),
    "hessian": (1,),
    "orbit": (2, 3, 8, 9, 10),
    "dynamics": (5, 6, 7, 13),
    "rank": (4,),
    "sharpening": (11,),
    "svs": (12,),
    "fast": (1, 2, 3, 5, 6, 7, 8, 9, 10, 13),
}


def run_criterion(number: int) -> CriterionResult:
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crash is a failure with its reason, not an abort of the suite
        passed, detail = False, f"error: {type(exc).__name__}: {exc}"
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0)


def run_suite(suite: str = "all", echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    out = []
    for n in SUITES[suite]:
        res = run_criterion(n)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
