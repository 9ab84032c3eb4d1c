"""Risk proxies and tuning-parameter selection.

The adaptive criterion ||r + (df/trace V) psi(r)||^2 needs neither the
design covariance nor the noise distribution; with the covariance known,
||r + trace[Sigma A] psi(r)||^2 is the oracle counterpart. Selection picks
the feasible candidate (average psi' of the residuals at least eta) with
the smallest adaptive criterion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NoFeasibleCandidate
from .losses import Loss
from .penalties import ElasticNet  # noqa: F401  (re-exported for callers)
from .sensitivity import SensitivityBundle, trace_sigma_A
from .solver import FitResult

DEFAULT_ETA = 0.05

# trace_V at or below this multiple of n makes the df/trace_V ratio
# meaningless; the report is then flagged instead of carrying a number.
ZERO_TRACE_V_REL = 1e-12


@dataclass(frozen=True)
class CriterionReport:
    crit_adaptive: float
    ratio: float
    constraint_value: float
    constraint_ok: bool
    eta: float
    crit_defined: bool
    crit_oracle: Optional[float] = None


def crit_adaptive(
    fit_result: FitResult,
    bundle: SensitivityBundle,
    loss: Loss,
    eta: float = DEFAULT_ETA,
) -> CriterionReport:
    """||r + (df/trace V) psi(r)||^2 plus the feasibility fields.

    When trace V is numerically zero (<= 1e-12 * n) the ratio is undefined:
    the report comes back flagged (crit_defined False, NaN values,
    constraint_ok False) rather than carrying a garbage number.
    """
    r = fit_result.residuals
    n = r.shape[0]
    constraint_value = bundle.n_hat / n
    if bundle.trace_V <= ZERO_TRACE_V_REL * n:
        return CriterionReport(
            crit_adaptive=math.nan,
            ratio=math.nan,
            constraint_value=constraint_value,
            constraint_ok=False,
            eta=eta,
            crit_defined=False,
        )
    ratio = bundle.df / bundle.trace_V
    combined = r + ratio * loss.psi(r)
    value = float(combined @ combined)
    return CriterionReport(
        crit_adaptive=value,
        ratio=float(ratio),
        constraint_value=float(constraint_value),
        constraint_ok=bool(constraint_value >= eta),
        eta=eta,
        crit_defined=True,
    )


def crit_oracle_sigma(
    fit_result: FitResult,
    bundle: SensitivityBundle,
    Sigma: np.ndarray,
    loss: Loss,
) -> float:
    """||r + trace[Sigma A] psi(r)||^2 (unnormalized; divide by n as needed)."""
    t_hat = trace_sigma_A(bundle, Sigma)
    r = fit_result.residuals
    combined = r + t_hat * loss.psi(r)
    return float(combined @ combined)


def out_of_sample_error(beta_hat, beta_star, Sigma) -> float:
    """(beta_hat - beta_star)' Sigma (beta_hat - beta_star)."""
    diff = np.asarray(beta_hat, dtype=float) - np.asarray(beta_star, dtype=float)
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (diff.shape[0], diff.shape[0]):
        raise ValueError(
            f"covariance shape {Sigma.shape} does not match p={diff.shape[0]}"
        )
    return float(diff @ (Sigma @ diff))


@dataclass(frozen=True)
class SelectionReport:
    selected_index: int
    reports: tuple
    feasible: tuple
    ranking: tuple  # feasible indices sorted by criterion, then by index


def select(
    candidates: Sequence[tuple],
    eta: float = DEFAULT_ETA,
) -> SelectionReport:
    """Pick the feasible candidate minimizing the adaptive criterion.

    ``candidates`` holds (FitResult, SensitivityBundle, Loss) triples. A
    candidate is feasible when its constraint holds and its criterion is
    defined; infeasible candidates stay in the report (never silently
    dropped). Ties break to the smallest index. Raises NoFeasibleCandidate
    when nothing is feasible.
    """
    if len(candidates) == 0:
        raise ValueError("candidate list is empty")
    reports = []
    feasible = []
    for fit_result, bundle, loss in candidates:
        rep = crit_adaptive(fit_result, bundle, loss, eta=eta)
        reports.append(rep)
        feasible.append(rep.constraint_ok and rep.crit_defined)
    idx_feasible = [i for i, ok in enumerate(feasible) if ok]
    if not idx_feasible:
        raise NoFeasibleCandidate(
            f"no candidate meets the feasibility constraint (eta={eta})"
        )
    ranking = sorted(idx_feasible, key=lambda i: (reports[i].crit_adaptive, i))
    return SelectionReport(
        selected_index=ranking[0],
        reports=tuple(reports),
        feasible=tuple(feasible),
        ranking=tuple(ranking),
    )
