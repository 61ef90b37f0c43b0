"""Monte Carlo error analysis: jackknife, autocorrelation, rule of three, fits."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class StatisticsError(ValueError):
    """Not enough samples for the requested statistic."""

    def __init__(self, message: str, required: int | None = None):
        super().__init__(message)
        self.required = required


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float
    n: int

    @property
    def ci(self) -> tuple[float, float]:
        return self.value - 1.96 * self.sigma, self.value + 1.96 * self.sigma

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ci"] = list(self.ci)
        return d


def require(n: int, minimum: int, what: str = "samples") -> None:
    if n < minimum:
        raise StatisticsError(f"need at least {minimum} {what}, got {n}", minimum)


def jackknife(x, stat=np.mean, n_blocks: int | None = None) -> Estimate:
    """Blocked jackknife estimate and standard error of ``stat`` applied to ``x``.

    ``x`` may be 1-d or 2-d (samples along axis 0). ``n_blocks`` defaults to
    ``min(n, 50)``; blocking absorbs short-range autocorrelation.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    require(n, 2)
    nb = min(n, 50) if n_blocks is None else min(n_blocks, n)
    edges = np.linspace(0, n, nb + 1).astype(int)
    full = float(stat(x))
    reps = np.empty(nb)
    for b in range(nb):
        keep = np.concatenate([x[:edges[b]], x[edges[b + 1]:]])
        reps[b] = stat(keep)
    sigma = math.sqrt((nb - 1) / nb * np.sum((reps - reps.mean()) ** 2))
    # bias-corrected value is unstable for ratio statistics at small nb; report the plain one
    return Estimate(full, sigma, n)


def mean_estimate(x) -> Estimate:
    return jackknife(x, np.mean)


def variance_estimate(x) -> Estimate:
    return jackknife(x, lambda v: np.var(v, ddof=1))


def integrated_autocorrelation(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with a self-consistent window ``W >= c tau``."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return 0.5
    y = x - x.mean()
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= c * tau:
            break
    return float(max(tau, 0.5))


def rule_of_three(count: int, n: int) -> tuple[float, float]:
    """Point estimate and 95% upper bound; an empty count is reported as ``3/n``."""
    if n <= 0:
        raise StatisticsError("no trials", 1)
    if count == 0:
        return 0.0, 3.0 / n
    p = count / n
    return p, p + 1.96 * math.sqrt(p * (1 - p) / n)


def linear_fit(x, y, w=None) -> dict:
    """Weighted least squares ``y = a + b x`` with slope error and ``R^2``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=np.float64)
    W = w.sum()
    xm, ym = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    sxy = (w * (x - xm) * (y - ym)).sum()
    b = sxy / sxx
    a = ym - b * xm
    resid = y - a - b * x
    ss_res = (w * resid ** 2).sum()
    ss_tot = (w * (y - ym) ** 2).sum()
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(len(x) - 2, 1)
    slope_se = math.sqrt(ss_res / dof / sxx) if sxx > 0 else float("inf")
    return {"intercept": float(a), "slope": float(b), "slope_se": slope_se, "r2": float(r2)}


def agree(a: Estimate, b: Estimate, k: float = 3.0) -> bool:
    return abs(a.value - b.value) <= k * math.hypot(a.sigma, b.sigma)


def cauchy_doubling(x, k: float = 3.0) -> dict:
    """Compare the mean of the first half with the mean of all samples.

    The difference equals half the difference of the two half-means, whose
    standard error is estimated from the halves separately.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x) // 2
    require(n, 2)
    a, b = x[:n], x[n:2 * n]
    diff = 0.5 * (b.mean() - a.mean())
    se = 0.5 * math.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
    return {"half": float(a.mean()), "full": float(x[:2 * n].mean()), "diff": float(diff),
            "sigma": float(se), "stable": bool(abs(diff) <= k * se)}


def hill_tail_index(x, k: int | None = None) -> float:
    """Hill estimator of the tail index from the top ``k`` order statistics of positive ``x``."""
    x = np.sort(np.asarray(x, dtype=np.float64))[::-1]
    x = x[x > 0]
    n = len(x)
    require(n, 10)
    k = k or max(int(math.sqrt(n)), 5)
    k = min(k, n - 1)
    logs = np.log(x[:k]) - math.log(x[k])
    m = logs.mean()
    return float("inf") if m == 0 else float(1.0 / m)
