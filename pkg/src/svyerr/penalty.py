"""Optimism estimation: the HT-weighted covariance penalty and design AIC.

Two routes to the penalty are kept deliberately separate so they can
check each other: the trace form tr(J V) from the sandwich, and the
elementwise form that sums per-unit covariances between the fitted
natural parameter and the outcome.  A parametric bootstrap covers
prediction rules with no analytic covariance (for example kNN under 0-1
loss).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import families as fam
from .design import MeatStructure, SurveyDesign
from .families import Family, FamilyKind, Loss, LossKind
from .fit import FitError, GlmFit, fit_weighted_glm, sandwich_variance

__all__ = [
    "PenaltyReport",
    "RuleFit",
    "in_sample_error",
    "cov_lambda_y_elementwise",
    "hte_analytic",
    "daic",
    "aic_naive",
    "estimate_dispersion",
    "hte_bootstrap",
    "glm_rule",
]


@dataclass(frozen=True)
class PenaltyReport:
    """In-sample error, estimated optimism, and the inflated error estimate."""

    err_weighted: float
    omega_hat: float
    err_hat: float
    daic: float | None
    aic_naive: float | None
    p_hat: float | None
    method: str
    B: int | None = None
    phi_hat: float | None = None
    rho_hat: float | None = None
    dropped_replicates: int = 0

    def to_dict(self) -> dict:
        return {
            "err_weighted": self.err_weighted,
            "omega_hat": self.omega_hat,
            "err_hat": self.err_hat,
            "daic": self.daic,
            "aic_naive": self.aic_naive,
            "p_hat": self.p_hat,
            "method": self.method,
            "B": self.B,
            "phi_hat": self.phi_hat,
            "rho_hat": self.rho_hat,
        }


@dataclass(frozen=True)
class RuleFit:
    """In-sample output of a trained prediction rule.

    ``mu`` holds fitted means and ``lam`` the rule's penalty-side
    parameter for its loss (natural parameter for deviance, mu for
    squared error, +-1 for 0-1 loss).
    """

    mu: np.ndarray
    lam: np.ndarray


# a prediction rule is anything that trains on (X, y, design) and
# reports its in-sample (mu, lambda)
PredictionRule = Callable[[np.ndarray, np.ndarray, SurveyDesign], RuleFit]


def in_sample_error(loss: Loss, y, mu_hat, design: SurveyDesign | None = None) -> float:
    """Mean loss on the training data: uniform, or HT-weighted over N."""
    q = np.asarray(fam.loss_q(loss, y, mu_hat))
    if design is None:
        return float(q.mean())
    return float(design.weights @ q) / design.pop_size


def cov_lambda_y_elementwise(fit: GlmFit, model_based: bool = False) -> np.ndarray:
    """Per-unit analytic covariance of the fitted natural parameter with y.

    The hat-matrix form diag{X (X^T Sigma_M Pi^{-1} X)^{-1} X^T Pi^{-1}
    Sigma_O} with Sigma_O the diagonal of squared residuals; used as an
    independent route to the trace penalty.  ``model_based`` replaces the
    observed squared residuals by the fitted outcome variances (for
    gaussian, Sigma_O = sigma-hat^2 I), which makes the uniform-weight
    gaussian penalty exactly 2 p sigma-hat^2 / n.
    """
    w = fit.design.weights
    M = (fit.X * (w * fit.sigma_m)[:, None]).T @ fit.X
    if model_based:
        r2 = fit.sigma_m * fit.family.dispersion
    else:
        r2 = (fit.y - fit.mu) ** 2
    sol = np.linalg.solve(M, fit.X.T)  # (p, n)
    return np.einsum("ij,ji->i", fit.X, sol) * w * r2


def hte_analytic(
    fit: GlmFit,
    loss: Loss | None = None,
    structure: MeatStructure = MeatStructure.INDEPENDENT,
    model_based: bool = False,
    **meat_kwargs,
) -> PenaltyReport:
    """HTE prediction-error report for a fitted GLM.

    Deviance loss uses the trace penalty 2 tr(J V) directly; squared
    error rescales the per-unit natural-parameter covariances by the
    model variance (for gaussian this is the multiplication by
    sigma-hat^2).
    """
    if not fit.converged:
        raise FitError("penalty requires a converged fit")
    if loss is None:
        loss = Loss(LossKind.DEVIANCE, fit.family)
    sw = sandwich_variance(fit, structure, **meat_kwargs)
    tr_jv = sw.trace_JV
    w = fit.design.weights
    N = fit.design.pop_size

    if loss.kind is LossKind.DEVIANCE:
        err_w = fit.deviance_weighted
        if model_based:
            cov = cov_lambda_y_elementwise(fit, model_based=True)
            omega = 2.0 * float(w @ cov) / (N * fit.family.dispersion)
        else:
            omega = 2.0 * tr_jv
    elif loss.kind is LossKind.SQUARED_ERROR:
        if structure is not MeatStructure.INDEPENDENT:
            raise ValueError(
                "squared-error penalty uses the elementwise covariance, which "
                "is only available for the independent meat structure"
            )
        err_w = float(w @ (fit.y - fit.mu) ** 2) / N
        cov_mu = fit.sigma_m * cov_lambda_y_elementwise(fit, model_based=model_based)
        omega = 2.0 * float(w @ cov_mu) / N
    else:
        raise ValueError("analytic penalty is available for deviance and squared error only")

    dval = fit.deviance_weighted + 2.0 * tr_jv
    return PenaltyReport(
        err_weighted=err_w,
        omega_hat=omega,
        err_hat=err_w + omega,
        daic=dval,
        aic_naive=None,
        # per-observation penalty tr(J V) is roughly p/n, so the
        # effective-parameter count carries the n scaling
        p_hat=fit.n * tr_jv,
        method="analytic",
    )


def daic(
    fit: GlmFit,
    structure: MeatStructure = MeatStructure.INDEPENDENT,
    **meat_kwargs,
) -> float:
    """Design-based AIC on the deviance scale.

    The goodness-of-fit term is the HT-weighted deviance, which differs
    from -2 l-hat by a theta-free saturated-model constant; the penalty
    is 2 tr(J V).
    """
    sw = sandwich_variance(fit, structure, **meat_kwargs)
    return fit.deviance_weighted + 2.0 * sw.trace_JV


def aic_naive(fit_unweighted: GlmFit) -> float:
    """Classical AIC on the per-observation deviance scale: err + 2p/n.

    Expects a fit with uniform weights (the "naive" analysis that ignores
    the design).
    """
    n = fit_unweighted.n
    dev_mean = float(np.mean(
        fam.loss_q(Loss(LossKind.DEVIANCE, fit_unweighted.family),
                   fit_unweighted.y, fit_unweighted.mu)
    ))
    return dev_mean + 2.0 * fit_unweighted.p / n


def estimate_dispersion(fit: GlmFit) -> tuple[float, float]:
    """Intra-PSU correlation rho-hat and design effect phi-hat.

    rho-hat pools pairwise within-PSU products of Pearson residuals over
    all PSUs (pair-count weighting); phi-hat = 1 + (nbar - 1) rho-hat at
    the average PSU size.  All-singleton designs return (0, 1).
    """
    design = fit.design
    if design.psu is None:
        raise ValueError("dispersion estimation requires PSU labels")
    v = np.asarray(fam.variance(fit.family, fit.mu))
    e = (fit.y - fit.mu) / np.sqrt(v)
    num = 0.0
    npairs = 0
    sizes = []
    for j in np.unique(design.psu):
        ej = e[design.psu == j]
        m = len(ej)
        sizes.append(m)
        if m >= 2:
            num += (ej.sum() ** 2 - (ej**2).sum()) / 2.0
            npairs += m * (m - 1) // 2
    if npairs == 0:
        warnings.warn("all PSUs are singletons; rho is undefined, returning (0, 1)")
        return 0.0, 1.0
    rho = num / (npairs * float(np.mean(e**2)))
    nbar = float(np.mean(sizes))
    phi = 1.0 + (nbar - 1.0) * rho
    return float(rho), float(phi)


def _draw_responses(rng: np.random.Generator, family: Family, mu: np.ndarray):
    if family.kind is FamilyKind.GAUSSIAN:
        return mu + rng.normal(size=mu.shape) * np.sqrt(family.dispersion)
    if family.kind is FamilyKind.BERNOULLI:
        return (rng.random(mu.shape) < mu).astype(float)
    return rng.poisson(mu).astype(float)


def glm_rule(family: Family, loss: Loss) -> PredictionRule:
    """Wrap a weighted GLM fit as a prediction rule for the bootstrap."""

    def train(X, y, design):
        f = fit_weighted_glm(X, y, family, design)
        return RuleFit(mu=f.mu, lam=np.asarray(fam.lambda_hat(loss, f.mu)))

    return train


def hte_bootstrap(
    rule: PredictionRule,
    X,
    y,
    design: SurveyDesign,
    family_for_sim: Family,
    B: int,
    seed: int,
    loss: Loss,
    phi_hat: float = 1.0,
    rho_hat: float | None = None,
    X_sim=None,
) -> PenaltyReport:
    """Parametric-bootstrap HTE estimate for an arbitrary prediction rule.

    A design-weighted GLM of ``family_for_sim`` supplies the generating
    means; replicate b redraws responses with the rng stream (seed, b),
    retrains the rule, and the per-unit covariance of the rule's lambda
    with the simulated outcome (times phi_hat) yields the optimism.
    ``X_sim`` overrides the design matrix of the generating GLM (for
    rules whose X carries no intercept column).
    """
    if B < 2:
        raise ValueError("bootstrap needs at least two replicates")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)

    base = rule(X, y, design)
    gen = fit_weighted_glm(X if X_sim is None else X_sim, y, family_for_sim, design)
    mu_gen = gen.mu

    lam_star = np.empty((B, n))
    y_star = np.empty((B, n))
    kept = np.zeros(B, dtype=bool)
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        yb = _draw_responses(rng, gen.family, mu_gen)
        try:
            rb = rule(X, yb, design)
        except (FitError, ValueError):
            continue
        lam_star[b] = rb.lam
        y_star[b] = yb
        kept[b] = True
    dropped = int(B - kept.sum())
    if dropped > 0.1 * B:
        raise FitError(f"{dropped}/{B} bootstrap replicates failed to train")
    lam_star = lam_star[kept]
    y_star = y_star[kept]
    Bk = lam_star.shape[0]

    centered = y_star - y_star.mean(axis=0)
    cov_i = phi_hat * (lam_star * centered).sum(axis=0) / (Bk - 1)
    omega = 2.0 * float(design.weights @ cov_i) / design.pop_size
    err_w = in_sample_error(loss, y, base.mu, design)
    return PenaltyReport(
        err_weighted=err_w,
        omega_hat=omega,
        err_hat=err_w + omega,
        daic=None,
        aic_naive=None,
        p_hat=None,
        method="bootstrap",
        B=B,
        phi_hat=phi_hat,
        rho_hat=rho_hat,
        dropped_replicates=dropped,
    )
