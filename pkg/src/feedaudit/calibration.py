"""Empirical calibration of the tester's absolute constants.

Two constants are left open by the theory: ``c`` scales the threshold and
``C`` scales the sample-size formula. For a grid of null and alternative
instances, the statistic ``G`` does not depend on ``c``, so for a given ``C``
every trial's ratio ``G / tau(c=1)`` pins down exactly which ``c`` values
make that trial correct. The admissible ``c`` range for the whole grid is
then an interval read off order statistics, and ``C`` is bisected to the
smallest value whose interval is non-empty.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CalibrationFailed
from .iid import IIDTestConfig, required_m, simulate_iid_trial
from .rng import derive_rng

MAX_C = 4096.0


@dataclass(frozen=True)
class GridPoint:
    """One calibration instance: ``U`` distribution pairs and a regime label."""

    name: str
    P: tuple
    Q: tuple
    eps1: float
    eps2: float
    delta: float
    regime: str  # "null" or "alt"
    poissonize: bool = True

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if P.shape != Q.shape or P.ndim != 2:
            raise ValueError(f"{self.name}: P and Q must both be U x n")
        dist = float(np.abs(P - Q).sum())
        U = P.shape[0]
        if self.regime == "null" and dist > U * self.eps1 + 1e-12:
            raise ValueError(f"{self.name}: null point has sum l1 {dist} > U*eps1")
        if self.regime == "alt" and dist < U * self.eps2 - 1e-12:
            raise ValueError(f"{self.name}: alternative point has sum l1 {dist} < U*eps2")
        if self.regime not in ("null", "alt"):
            raise ValueError(f"{self.name}: regime must be 'null' or 'alt'")

    @property
    def U(self) -> int:
        return len(self.P)

    @property
    def n(self) -> int:
        return len(self.P[0])

    def to_json(self) -> dict:
        d = asdict(self)
        d["P"] = [list(map(float, r)) for r in self.P]
        d["Q"] = [list(map(float, r)) for r in self.Q]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GridPoint":
        d = dict(d)
        d["P"] = tuple(tuple(r) for r in d["P"])
        d["Q"] = tuple(tuple(r) for r in d["Q"])
        return cls(**d)


@dataclass(frozen=True)
class Calibration:
    c: float
    C: float
    grid_hash: str
    achieved_error: float
    achieved_error_se: float = 0.0
    trials: int = 0
    per_point: dict = field(default_factory=dict, compare=False)

    def to_json(self) -> dict:
        return {"c": self.c, "C": self.C, "grid_hash": self.grid_hash, "achieved_error": self.achieved_error,
                "achieved_error_se": self.achieved_error_se, "trials": self.trials}


def grid_hash(grid) -> str:
    blob = json.dumps([p.to_json() for p in grid], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_calibration(cal: Calibration, path) -> None:
    Path(path).write_text(json.dumps(cal.to_json(), indent=2, sort_keys=True) + "\n")


def load_calibration(path) -> Calibration:
    d = json.loads(Path(path).read_text())
    return Calibration(c=float(d["c"]), C=float(d["C"]), grid_hash=d["grid_hash"],
                       achieved_error=float(d["achieved_error"]),
                       achieved_error_se=float(d.get("achieved_error_se", 0.0)), trials=int(d.get("trials", 0)))


@lru_cache(maxsize=1)
def default_calibration() -> Calibration:
    """The calibration shipped with the package (``data/calibration.json``)."""
    with resources.as_file(resources.files("feedaudit") / "data" / "calibration.json") as p:
        return load_calibration(p)


def _uniform(n):
    return [1.0 / n] * n


def _spread_alternative(n, dist):
    """Uniform with ``+-dist/n`` alternating across symbols; l1 distance ``dist`` for even n."""
    return [1.0 / n + (dist / n if i % 2 == 0 else -dist / n) for i in range(n)]


def default_grid() -> list[GridPoint]:
    """Instances the shipped constants are calibrated on.

    * the i.i.d. regime: n=10, U in {1, 2, 4}, eps=(0, 0.5), delta=0.1,
      Poissonized, null = identical uniforms, alternative = every pair at l1
      distance exactly 0.5 spread evenly over all symbols (the hardest
      shape for a squared-difference statistic);
    * the per-state regime of the regulation procedure on two-state chains:
      n=2, U=3, fixed sample size, per-state risk 0.1 / (2*2).
    """
    grid = []
    for U in (1, 2, 4):
        uni = [_uniform(10)] * U
        grid.append(GridPoint(f"iid-null-U{U}", tuple(map(tuple, uni)), tuple(map(tuple, uni)), 0.0, 0.5, 0.1, "null"))
        alt = [_spread_alternative(10, 0.5)] * U
        grid.append(GridPoint(f"iid-alt-U{U}", tuple(map(tuple, uni)), tuple(map(tuple, alt)), 0.0, 0.5, 0.1, "alt"))
    half = ((0.5, 0.5),) * 3
    grid.append(GridPoint("state-null-n2U3", half, half, 0.0, 0.5, 0.025, "null", poissonize=False))
    grid.append(GridPoint("state-alt-n2U3", ((0.9, 0.1),) * 3, ((0.4, 0.6),) * 3, 0.0, 0.5, 0.025, "alt",
                          poissonize=False))
    return grid


def point_ratios(point: GridPoint, C: float, trials: int, seed) -> tuple[int, np.ndarray]:
    """``G / tau(c=1)`` per trial at the sample size implied by ``C``."""
    m = required_m(point.n, point.U, point.eps1, point.eps2, point.delta, C)
    cfg = IIDTestConfig(U=point.U, n=point.n, m=m, eps1=point.eps1, eps2=point.eps2, delta=point.delta, c=1.0,
                        poissonize=point.poissonize)
    ratios = np.empty(trials)
    for t in range(trials):
        v = simulate_iid_trial(point.P, point.Q, cfg, derive_rng(seed, "calibrate", point.name, t))
        ratios[t] = v.G / v.tau
    return m, ratios


def _bounds(point: GridPoint, ratios: np.ndarray, target: float) -> tuple[float, float]:
    """Admissible ``(c_low, c_high)``: errors at ``c`` stay within ``floor(target * trials)``.

    A null trial errs when ``ratio >= c``, an alternative trial when
    ``ratio < c``. Null points bound ``c`` strictly from below, alternatives
    from above (inclusive).
    """
    allowed = int(math.floor(target * ratios.size + 1e-9))
    if point.regime == "null":
        return float(np.sort(ratios)[::-1][allowed]) if allowed < ratios.size else -math.inf, math.inf
    return -math.inf, float(np.sort(ratios)[allowed]) if allowed < ratios.size else math.inf


def _errors(point: GridPoint, ratios: np.ndarray, c: float) -> float:
    wrong = ratios >= c if point.regime == "null" else ratios < c
    return float(wrong.mean())


def _interval(grid, C, trials, seed, margin):
    lo, hi, cache = -math.inf, math.inf, {}
    for p in grid:
        m, r = point_ratios(p, C, trials, seed)
        cache[p.name] = (m, r)
        a, b = _bounds(p, r, margin * p.delta)
        lo, hi = max(lo, a), min(hi, b)
    return lo, hi, cache


def calibrate_constant(grid, trials: int, seed, margin: float = 1.0, C_start: float = 1.0,
                       rel_tol: float = 0.02) -> Calibration:
    """Find the smallest ``C`` (to ``rel_tol``) for which one ``c`` separates the grid.

    Each point must reach empirical error ``<= margin * point.delta``. The
    returned ``c`` is the geometric midpoint of the admissible interval at
    that ``C`` (arithmetic if the lower end is not positive).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("calibration grid is empty")
    if not any(p.regime == "null" for p in grid) or not any(p.regime == "alt" for p in grid):
        raise ValueError("grid needs both null and alternative points")
    C = C_start
    while True:
        lo, hi, cache = _interval(grid, C, trials, seed, margin)
        if lo < hi and hi > 0:
            break
        if C >= MAX_C:
            raise CalibrationFailed(f"no c separates the grid at C={C}: lower bound {lo:.4g} >= upper bound {hi:.4g}")
        C_fail, C = C, 2 * C
    if C > C_start:
        C_ok = C
        while C_ok / C_fail - 1 > rel_tol:
            mid = math.sqrt(C_ok * C_fail)
            lo_m, hi_m, cache_m = _interval(grid, mid, trials, seed, margin)
            if lo_m < hi_m and hi_m > 0:
                C_ok, lo, hi, cache = mid, lo_m, hi_m, cache_m
            else:
                C_fail = mid
        C = C_ok
    if lo > 0 and math.isfinite(hi):
        c = math.sqrt(lo * hi)
    elif math.isfinite(hi):
        c = hi / 2 if lo <= 0 else (lo + hi) / 2
    else:
        c = max(lo, 0) * 2 or 1.0
    per_point = {}
    worst = 0.0
    for p in grid:
        m, r = cache[p.name]
        err = _errors(p, r, c)
        per_point[p.name] = {"m": m, "error": err}
        worst = max(worst, err)
    # binomial SE, floored at the one-error level so a zero error still carries a band
    se = math.sqrt(max(worst * (1 - worst), 1 / trials) / trials)
    return Calibration(c=float(c), C=float(C), grid_hash=grid_hash(grid), achieved_error=worst,
                       achieved_error_se=se, trials=trials, per_point=per_point)
