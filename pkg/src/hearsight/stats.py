"""One-way ANOVA and Tukey HSD (Tukey-Kramer for unequal group sizes).

Used to compare per-run accuracies of several models. Critical values of
the studentized range come from the embedded table in ``_qtable``; for an
error df that falls between table rows the next smaller tabled df is used,
which is conservative.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.special import betainc

from hearsight._qtable import DF_VALUES, K_VALUES, Q_CRIT
from hearsight.errors import DomainError


@dataclass
class RunGroup:
    model_name: str
    accuracies: list = field(default_factory=list)

    def values(self) -> np.ndarray:
        return np.asarray(self.accuracies, dtype=float)


@dataclass
class AnovaResult:
    F: float
    df_between: int
    df_within: int
    p: float
    ss_between: float
    ss_within: float
    degenerate: bool = False  # zero within-group variance

    @property
    def ms_within(self) -> float:
        return self.ss_within / self.df_within


@dataclass
class TukeyPair:
    group_a: str
    group_b: str
    mean_diff: float  # mean(a) - mean(b)
    q_stat: float
    q_crit: float
    significant: bool


def _check(groups):
    if len(groups) < 2:
        raise DomainError("eval-stats", "anova_oneway", "need at least 2 groups")
    for g in groups:
        v = g.values()
        if v.size < 2:
            raise DomainError("eval-stats", "anova_oneway", f"group {g.model_name!r} needs >= 2 observations")
        if not np.all(np.isfinite(v)):
            raise DomainError("eval-stats", "anova_oneway", f"group {g.model_name!r} has non-finite values")


def f_sf(F: float, d1: float, d2: float) -> float:
    """Survival function of the F distribution via the regularized incomplete beta."""
    if math.isinf(F):
        return 0.0
    if F <= 0:
        return 1.0
    return float(betainc(d2 / 2, d1 / 2, d2 / (d2 + d1 * F)))


def anova_oneway(groups) -> AnovaResult:
    _check(groups)
    vals = [g.values() for g in groups]
    k = len(vals)
    n = sum(v.size for v in vals)
    grand = np.concatenate(vals).mean()
    ssb = float(sum(v.size * (v.mean() - grand) ** 2 for v in vals))
    ssw = float(sum(np.sum((v - v.mean()) ** 2) for v in vals))
    dfb, dfw = k - 1, n - k
    if ssw == 0:
        if ssb == 0:
            return AnovaResult(0.0, dfb, dfw, 1.0, ssb, ssw, degenerate=True)
        return AnovaResult(math.inf, dfb, dfw, 0.0, ssb, ssw, degenerate=True)
    F = (ssb / dfb) / (ssw / dfw)
    return AnovaResult(F, dfb, dfw, f_sf(F, dfb, dfw), ssb, ssw)


def q_critical(k: int, df: float, alpha: float) -> float:
    if alpha not in Q_CRIT:
        raise DomainError("eval-stats", "tukey_hsd", f"alpha {alpha} not in embedded table {sorted(Q_CRIT)}")
    if k not in K_VALUES:
        raise DomainError("eval-stats", "tukey_hsd", f"k={k} groups outside embedded table (2..10)")
    if df < 1:
        raise DomainError("eval-stats", "tukey_hsd", "error degrees of freedom must be >= 1")
    row = max(i for i, d in enumerate(DF_VALUES) if d <= df)
    return Q_CRIT[alpha][row][k - 2]


def tukey_hsd(groups, alpha: float = 0.05) -> list[TukeyPair]:
    _check(groups)
    res = anova_oneway(groups)
    msw = res.ms_within
    qc = q_critical(len(groups), res.df_within, alpha)
    out = []
    for a, b in combinations(groups, 2):
        va, vb = a.values(), b.values()
        diff = float(va.mean() - vb.mean())
        se = math.sqrt(msw / 2 * (1 / va.size + 1 / vb.size))
        if se > 0:
            q = abs(diff) / se
        else:
            q = math.inf if diff != 0 else 0.0
        out.append(TukeyPair(a.model_name, b.model_name, diff, q, qc, q > qc))
    return out


def read_runs(path: str | Path) -> list[RunGroup]:
    """Groups from a CSV with columns model, run_id, accuracy (first-seen model order)."""
    groups: dict[str, RunGroup] = {}
    try:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                name = row["model"]
                groups.setdefault(name, RunGroup(name)).accuracies.append(float(row["accuracy"]))
    except (OSError, KeyError, ValueError) as exc:
        raise DomainError("eval-stats", "read_runs", f"{path}: {exc}") from exc
    return list(groups.values())


def report(groups, alpha: float = 0.05) -> dict:
    a = anova_oneway(groups)
    pairs = tukey_hsd(groups, alpha)

    def num(x):
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")

    return {
        "anova": {
            "F": num(a.F),
            "df_between": a.df_between,
            "df_within": a.df_within,
            "p": a.p,
            "degenerate": a.degenerate,
        },
        "tukey": [
            {
                "pair": [t.group_a, t.group_b],
                "mean_diff": t.mean_diff,
                "q_stat": num(t.q_stat),
                "q_crit": t.q_crit,
                "significant": t.significant,
            }
            for t in pairs
        ],
        "alpha": alpha,
        "groups": {g.model_name: {"n": len(g.accuracies), "mean": float(np.mean(g.accuracies))} for g in groups},
    }
