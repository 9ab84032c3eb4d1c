"""Sensitivity of the fitted coefficients to perturbations of (y, X).

Everything flows through one p-hat x p-hat matrix: with D = diag{psi'(r)}
and S the active set,

    A_hat = (X_S' D X_S + n * tau_eff * I)^{-1},

the inverse computed from a single Cholesky factorization. From it come the
Jacobian of beta_hat in y (columns A_hat X'e_i psi'(r_i)), the Jacobian in
single design entries, the effective degrees of freedom df = trace[X dbeta/dy],
and trace of V = diag{psi'(r)}(I - X dbeta/dy) — V itself is never
materialized as an n x n matrix; only its trace and matrix-vector products
are exposed.

An intercept fit replaces the inner D by the rank-one-corrected
Psi' = D - psi'(r) psi'(r)' / sum(psi'(r)) in both A_hat and the Jacobian;
trace_V keeps the diagonal outer factor so it matches the finite-difference
oracle's definition verbatim.

A central finite-difference oracle over y provides independent verification,
and contraction_check verifies five summed-derivative identities over the
design entries against their closed forms.

The ridge floor: sensitivity computation uses tau_eff = max(tau, 1e-10) so
that pure-lasso fits (tau = 0) still yield a well-posed system; the floor
used is recorded in the bundle.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .data import Dataset
from .errors import DegenerateFit, NonConvergence, SingularSystem
from .losses import HuberLoss, Loss, SquareLoss
from .penalties import ElasticNet
from .solver import FitOptions, FitResult, fit

TAU_FLOOR = 1e-10


@dataclass(frozen=True)
class SensitivityBundle:
    """Closed-form sensitivity objects for one fit.

    A_hat is the p_hat x p_hat block of the sensitivity matrix on the
    active set (the full matrix is zero elsewhere); psi_diag and
    psi_prime_diag are psi(r_i) and psi'(r_i) at the fitted residuals.
    """

    A_hat: np.ndarray
    df: float
    trace_V: float
    n_hat: float
    p_hat: int
    psi_diag: np.ndarray
    psi_prime_diag: np.ndarray
    active_set: np.ndarray
    tau_eff: float
    p: int
    with_intercept: bool


def _psi_inner_gram(XS: np.ndarray, d: np.ndarray, with_intercept: bool):
    """X_S' D X_S, rank-one corrected to X_S' Psi' X_S for intercept fits.

    Returns (gram, q, s) where q = X_S'd and s = sum(d) feed the same
    rank-one correction elsewhere; q, s are None without an intercept.
    """
    B = XS.T @ (d[:, None] * XS)
    if not with_intercept:
        return B, None, None
    s = float(np.sum(d))
    if s <= 0.0:
        raise DegenerateFit(
            "all residuals have psi' = 0; the intercept correction is undefined"
        )
    q = XS.T @ d
    return B - np.outer(q, q) / s, q, s


def sensitivity_closed_form(
    data: Dataset, loss: Loss, penalty: ElasticNet, fit_result: FitResult
) -> SensitivityBundle:
    """Compute A_hat, df, trace_V, n_hat, p_hat from one factorization.

    An empty active set is not an error: it yields an empty A_hat, df = 0,
    and trace_V = sum(psi'(r)).
    """
    n, p = data.n, data.p
    r = fit_result.residuals
    d = loss.psi_prime(r)
    ps = loss.psi(r)
    n_hat = float(np.sum(d))
    S = fit_result.active_set
    p_hat = int(S.size)
    tau_eff = max(penalty.tau, TAU_FLOOR)

    if p_hat == 0:
        return SensitivityBundle(
            A_hat=np.zeros((0, 0)),
            df=0.0,
            trace_V=n_hat,
            n_hat=n_hat,
            p_hat=0,
            psi_diag=ps,
            psi_prime_diag=d,
            active_set=S,
            tau_eff=tau_eff,
            p=p,
            with_intercept=fit_result.with_intercept,
        )

    XS = data.X[:, S]
    gram, q, s = _psi_inner_gram(XS, d, fit_result.with_intercept)
    M = gram + n * tau_eff * np.eye(p_hat)
    try:
        factor = cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(
            f"sensitivity system singular at p_hat={p_hat}, tau_eff={tau_eff:g}"
        ) from exc
    A_hat = cho_solve(factor, np.eye(p_hat))
    A_hat = 0.5 * (A_hat + A_hat.T)  # symmetrize away factorization roundoff

    # df = trace[A_hat * gram] = p_hat - n*tau_eff*trace[A_hat], because
    # A_hat (gram + n*tau_eff I) = I.
    df = p_hat - n * tau_eff * float(np.trace(A_hat))

    if fit_result.with_intercept:
        # trace_V = trace[D] - trace[A_hat X_S' Psi' D X_S] with
        # X_S' Psi' D X_S = X_S'D^2 X_S - q (X_S'd^2)'/s.
        C = XS.T @ ((d * d)[:, None] * XS) - np.outer(q, XS.T @ (d * d)) / s
        trace_V = n_hat - float(np.sum(A_hat * C.T))
    else:
        C = XS.T @ ((d * d)[:, None] * XS)
        trace_V = n_hat - float(np.sum(A_hat * C))

    return SensitivityBundle(
        A_hat=A_hat,
        df=float(df),
        trace_V=float(trace_V),
        n_hat=n_hat,
        p_hat=p_hat,
        psi_diag=ps,
        psi_prime_diag=d,
        active_set=S,
        tau_eff=tau_eff,
        p=p,
        with_intercept=fit_result.with_intercept,
    )


def a_hat_full(bundle: SensitivityBundle) -> np.ndarray:
    """A_hat embedded into the full p x p matrix (zero off the active set)."""
    A = np.zeros((bundle.p, bundle.p))
    if bundle.p_hat:
        A[np.ix_(bundle.active_set, bundle.active_set)] = bundle.A_hat
    return A


def jacobian_y(
    bundle: SensitivityBundle, data: Dataset, fit_result: FitResult
) -> np.ndarray:
    """p x n Jacobian of beta_hat in y; rows off the active set are zero."""
    J = np.zeros((bundle.p, data.n))
    if bundle.p_hat == 0:
        return J
    XS = data.X[:, bundle.active_set]
    d = bundle.psi_prime_diag
    inner = XS.T * d[None, :]  # X_S' D
    if bundle.with_intercept:
        s = float(np.sum(d))
        if s <= 0.0:
            raise DegenerateFit(
                "all residuals have psi' = 0; the intercept correction is undefined"
            )
        q = XS.T @ d
        inner = inner - np.outer(q, d) / s  # X_S' Psi'
    J[bundle.active_set, :] = bundle.A_hat @ inner
    return J


def jacobian_x_entry(
    bundle: SensitivityBundle,
    data: Dataset,
    fit_result: FitResult,
    i: int,
    j: int,
) -> np.ndarray:
    """Derivative of beta_hat in the single design entry x_ij.

    A_hat e_j psi(r_i) - psi'(r_i) beta_j A_hat X'e_i; with an intercept the
    second term uses the Psi'-corrected Jacobian column, which preserves the
    identity d beta/d x_ij + beta_j * d beta/d y_i = A_hat e_j psi(r_i).
    """
    out = np.zeros(bundle.p)
    if bundle.p_hat == 0:
        return out
    S = bundle.active_set
    pos = np.searchsorted(S, j)
    if pos < S.size and S[pos] == j:
        out[S] = bundle.A_hat[:, pos] * bundle.psi_diag[i]
    beta_j = fit_result.beta_hat[j]
    if beta_j != 0.0:
        if bundle.with_intercept:
            col = jacobian_y(bundle, data, fit_result)[:, i]
            out -= beta_j * col
        else:
            XS = data.X[:, S]
            col_S = bundle.A_hat @ XS[i, :]
            out[S] -= bundle.psi_prime_diag[i] * beta_j * col_S
    return out


def trace_sigma_A(bundle: SensitivityBundle, Sigma: np.ndarray) -> float:
    """trace[Sigma A] restricted to the active block (A vanishes elsewhere)."""
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (bundle.p, bundle.p):
        raise ValueError(
            f"covariance shape {Sigma.shape} does not match p={bundle.p}"
        )
    if bundle.p_hat == 0:
        return 0.0
    block = Sigma[np.ix_(bundle.active_set, bundle.active_set)]
    return float(np.sum(block * bundle.A_hat))


def apply_V(
    bundle: SensitivityBundle, data: Dataset, vec: np.ndarray
) -> np.ndarray:
    """V @ vec with V = D(I - X A X'D), without forming V."""
    d = bundle.psi_prime_diag
    out = d * vec
    if bundle.p_hat:
        XS = data.X[:, bundle.active_set]
        out = out - d * (XS @ (bundle.A_hat @ (XS.T @ (d * vec))))
    return out


def _warm_options(options: FitOptions, beta0: np.ndarray) -> FitOptions:
    return replace(options, initial_point=beta0)


def sensitivity_fd_oracle(
    data: Dataset,
    loss: Loss,
    penalty: ElasticNet,
    options: FitOptions,
    step: float,
):
    """Central finite differences of fit() over each y_i.

    Returns (J_fd, df_fd, trace_V_fd): the p x n Jacobian estimate, its
    df = trace[X J] contraction, and trace[diag{psi'(r)}(I - X J)] with
    psi' evaluated at the unperturbed fit. Per-coordinate steps scale with
    (1 + |y_i|). Refits are warm-started at the base solution, which does
    not change the minimizer (the objective is strictly convex for
    tau > 0), only the iteration count.
    """
    base = fit(data, loss, penalty, options)
    warm = _warm_options(options, base.beta_hat)
    n, p = data.n, data.p
    J = np.empty((p, n))
    for i in range(n):
        delta = step * (1.0 + abs(data.y[i]))
        y_plus = data.y.copy()
        y_plus[i] += delta
        y_minus = data.y.copy()
        y_minus[i] -= delta
        fit_plus = fit(Dataset(data.X, y_plus), loss, penalty, warm)
        fit_minus = fit(Dataset(data.X, y_minus), loss, penalty, warm)
        J[:, i] = (fit_plus.beta_hat - fit_minus.beta_hat) / (2.0 * delta)

    d = loss.psi_prime(base.residuals)
    xj_diag = np.einsum("ij,ji->i", data.X, J)  # (X J)_{ii}
    df_fd = float(np.sum(xj_diag))
    trace_V_fd = float(np.sum(d * (1.0 - xj_diag)))
    return J, df_fd, trace_V_fd


def intercept_psi_matrix(fit_result: FitResult, loss: Loss) -> np.ndarray:
    """The n x n matrix D - psi'(r) psi'(r)'/sum(psi'(r)) of intercept fits.

    Symmetric PSD with zero row sums. Raises DegenerateFit when every
    residual has psi' = 0 (no quadratic-regime observation left).
    """
    d = loss.psi_prime(fit_result.residuals)
    s = float(np.sum(d))
    if s <= 0.0:
        raise DegenerateFit(
            "all residuals have psi' = 0; the intercept correction is undefined"
        )
    return np.diag(d) - np.outer(d, d) / s


@dataclass(frozen=True)
class ContractionReport:
    """Residuals of the five summed-derivative identities at one FD step.

    residuals[k] is the absolute gap for identity k+1 (identities 1 and 2
    report the max gap over their free index); lhs/rhs hold the compared
    values for inspection.
    """

    step: float
    residuals: np.ndarray
    lhs: tuple
    rhs: tuple


def contraction_check(
    data: Dataset,
    loss: Loss,
    penalty: ElasticNet,
    fit_result: FitResult,
    bundle: SensitivityBundle,
    beta_star: np.ndarray,
    step: float = 1e-4,
    options: Optional[FitOptions] = None,
) -> ContractionReport:
    """Verify five identities for sums of derivatives over design entries.

    Identity-white-board, with h = beta_hat - beta_star, G = X, A the full
    sensitivity matrix, D = diag{psi'(r)}, V = D(I - GAG'D):

      1. sum_j d h_j / d g_ij        = trace[A] psi_i - (D G A h)_i
      2. sum_i d psi_i / d g_ij      = -(A G'D psi)_j - trace[V] h_j
      3. sum_ij d(h_j psi_i)/d g_ij  = |psi|^2 tr A - h'AG'D psi
                                         - psi'DGA h - |h|^2 tr V
      4. sum_ij d(h_j (Gh)_i)/d g_ij = tr A psi'Gh - h'AG'DGh + n|h|^2
                                         + psi'GA h - |h|^2 df
      5. sum_ij d(psi_i (G'psi)_j)/d g_ij = -psi'DGAG'psi - tr V psi'Gh
                                         - h'G'V psi + (p - df)|psi|^2

    The left sides are evaluated by central finite differences over every
    g_ij (the response is regenerated as y = G beta_star + eps with eps held
    fixed, so the derivative includes the y-channel); the right sides come
    from the closed forms at the base fit. Perturbed fits are warm-started
    at the base solution. Cost: 2 n p fits.
    """
    if options is None:
        options = FitOptions(kkt_tolerance=1e-11)
    n, p = data.n, data.p
    beta_star = np.asarray(beta_star, dtype=float)
    h = fit_result.beta_hat - beta_star
    G = data.X
    ps = bundle.psi_diag
    d = bundle.psi_prime_diag
    A = a_hat_full(bundle)
    trA = float(np.trace(bundle.A_hat)) if bundle.p_hat else 0.0
    trV = bundle.trace_V
    df = bundle.df

    Ah = A @ h
    Gh = G @ h
    AGtDps = A @ (G.T @ (d * ps))
    Vps = apply_V(bundle, data, ps)
    Gtps = G.T @ ps

    rhs1 = trA * ps - d * (G @ Ah)
    rhs2 = -AGtDps - trV * h
    rhs3 = (
        float(ps @ ps) * trA
        - float(h @ AGtDps)
        - float((d * ps) @ (G @ Ah))
        - float(h @ h) * trV
    )
    rhs4 = (
        trA * float(ps @ Gh)
        - float(Ah @ (G.T @ (d * Gh)))
        + n * float(h @ h)
        + float(ps @ (G @ Ah))
        - float(h @ h) * df
    )
    rhs5 = (
        -float((d * ps) @ (G @ (A @ Gtps)))
        - trV * float(ps @ Gh)
        - float(Gh @ Vps)
        + (p - df) * float(ps @ ps)
    )

    # Finite-difference left sides, all assembled from the same 2np fits.
    eps_vec = data.y - G @ beta_star
    warm = _warm_options(options, fit_result.beta_hat)
    lhs1 = np.zeros(n)
    lhs2 = np.zeros(p)
    lhs3 = 0.0
    lhs4 = 0.0
    lhs5 = 0.0
    for i in range(n):
        for j in range(p):
            sides = []
            for sgn in (1.0, -1.0):
                Gp = G.copy()
                Gp[i, j] += sgn * step
                yp = Gp @ beta_star + eps_vec
                res = fit(Dataset(Gp, yp), loss, penalty, warm)
                hp = res.beta_hat - beta_star
                psp = loss.psi(res.residuals)
                sides.append((hp, psp, Gp))
            (hp, psp, Gp), (hm, psm, Gm) = sides
            inv = 1.0 / (2.0 * step)
            lhs1[i] += (hp[j] - hm[j]) * inv
            lhs2[j] += (psp[i] - psm[i]) * inv
            lhs3 += (hp[j] * psp[i] - hm[j] * psm[i]) * inv
            lhs4 += (hp[j] * (Gp[i] @ hp) - hm[j] * (Gm[i] @ hm)) * inv
            lhs5 += (psp[i] * (Gp[:, j] @ psp) - psm[i] * (Gm[:, j] @ psm)) * inv

    residuals = np.array(
        [
            float(np.max(np.abs(lhs1 - rhs1))),
            float(np.max(np.abs(lhs2 - rhs2))),
            abs(lhs3 - rhs3),
            abs(lhs4 - rhs4),
            abs(lhs5 - rhs5),
        ]
    )
    return ContractionReport(
        step=step,
        residuals=residuals,
        lhs=(lhs1, lhs2, lhs3, lhs4, lhs5),
        rhs=(rhs1, rhs2, rhs3, rhs4, rhs5),
    )


# ---------------------------------------------------------------------------
# Self-contained derivative verification on synthetic fixtures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivativeCheckReport:
    """Outcome of one full derivative-verification run.

    failures is the tuple of check names whose residual exceeded its
    tolerance; empty means everything passed.
    """

    n: int
    p: int
    seed: int
    jacobian_rel_error: float
    df_abs_error: float
    trace_v_abs_error: float
    contraction_reports: tuple
    failures: tuple

    @property
    def passed(self) -> bool:
        return not self.failures


def _fd_safe_fixture(
    n: int,
    p: int,
    loss: Loss,
    penalty: ElasticNet,
    seed: int,
    options: FitOptions,
    attempts: int = 50,
):
    """Draw (data, beta_star, fit) whose solution is FD-stable.

    Finite differencing across a Huber kink or an active-set boundary
    measures a different one-sided object than the closed forms, so
    fixtures are redrawn (seed + attempt) until the fit keeps clear
    margins: every |residual| at least 1e-2 away from the kink, every
    active coefficient above 1e-4 in magnitude, and every inactive
    score at least 1e-5 below the l1 threshold.
    """
    for attempt in range(attempts):
        rng = np.random.default_rng(seed + attempt)
        X = rng.standard_normal((n, p))
        beta_star = rng.standard_normal(p) / np.sqrt(p)
        y = X @ beta_star + rng.standard_normal(n)
        data = Dataset(X, y)
        try:
            result = fit(data, loss, penalty, options)
        except NonConvergence:
            continue

        if isinstance(loss, HuberLoss):
            clearance = float(np.min(np.abs(np.abs(result.residuals) - loss.scale)))
            if clearance <= 1e-2:
                continue
        active = result.active_set
        if active.size and float(np.min(np.abs(result.beta_hat[active]))) <= 1e-4:
            continue
        if penalty.lam > 0:
            score = data.X.T @ loss.psi(result.residuals) / n
            inactive = np.setdiff1d(np.arange(p), active, assume_unique=True)
            if inactive.size:
                slack = penalty.lam - float(np.max(np.abs(score[inactive])))
                if slack <= 1e-5:
                    continue
        return data, beta_star, result
    raise RuntimeError(
        f"no FD-stable fixture found in {attempts} attempts from seed {seed}"
    )


def run_derivative_checks(
    n: int,
    p: int,
    loss: Loss,
    penalty: ElasticNet,
    seed: int,
    fd_step: float = 1e-6,
    contraction_steps=(1e-3, 1e-4),
    jacobian_tolerance: float = 1e-3,
    trace_tolerance: float = 1e-3,
    contraction_tolerance: float = 1e-3,
    fault: Optional[str] = None,
) -> DerivativeCheckReport:
    """Compare every closed-form derivative against finite differences.

    Generates a synthetic fixture, fits it tightly, then checks the
    response Jacobian, df, trace V, and the five design-derivative
    identities. fault='corrupt-a-hat' multiplies the sensitivity matrix
    by 1.37 before checking — a negative control that must fail.
    """
    options = FitOptions(kkt_tolerance=1e-11)
    data, beta_star, result = _fd_safe_fixture(n, p, loss, penalty, seed, options)
    bundle = sensitivity_closed_form(data, loss, penalty, result)

    if fault == "corrupt-a-hat":
        bundle = replace(bundle, A_hat=1.37 * bundle.A_hat)
    elif fault is not None:
        raise ValueError(f"unknown fault: {fault!r}")

    J_closed = jacobian_y(bundle, data, result)
    J_fd, df_fd, trace_v_fd = sensitivity_fd_oracle(
        data, loss, penalty, options, step=fd_step
    )
    scale = max(float(np.linalg.norm(J_fd)), 1e-30)
    jacobian_rel_error = float(np.linalg.norm(J_closed - J_fd)) / scale
    df_abs_error = abs(bundle.df - df_fd)
    trace_v_abs_error = abs(bundle.trace_V - trace_v_fd)

    contraction_reports = tuple(
        contraction_check(
            data, loss, penalty, result, bundle, beta_star, step=s, options=options
        )
        for s in contraction_steps
    )

    failures = []
    if not jacobian_rel_error <= jacobian_tolerance:
        failures.append("jacobian_y")
    if not df_abs_error <= trace_tolerance:
        failures.append("df")
    if not trace_v_abs_error <= trace_tolerance:
        failures.append("trace_V")
    for report in contraction_reports:
        for k in range(5):
            if not report.residuals[k] <= contraction_tolerance:
                failures.append(f"contraction-{k + 1}@step={report.step:g}")

    return DerivativeCheckReport(
        n=n,
        p=p,
        seed=seed,
        jacobian_rel_error=jacobian_rel_error,
        df_abs_error=df_abs_error,
        trace_v_abs_error=trace_v_abs_error,
        contraction_reports=contraction_reports,
        failures=tuple(failures),
    )
