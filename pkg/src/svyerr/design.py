"""Complex sampling designs and the score-covariance "meat" matrix.

A :class:`SurveyDesign` carries inclusion probabilities, weights and the
stratum/PSU structure of the sample.  The meat builders return the
estimated covariance of the weighted score: a plain inverse-probability
outer-product sum for independent samples, or the stratified block form
with raw within-PSU blocks and mean-centered cross-PSU blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "SurveyDesign",
    "MeatMatrix",
    "MeatStructure",
    "DesignError",
    "DesignDiagnostics",
    "ht_total",
    "validate_design",
    "meat_independent",
    "meat_stratified_cluster",
]


class DesignError(ValueError):
    """Invalid sampling-design specification."""


class MeatStructure(str, Enum):
    INDEPENDENT = "independent"
    STRATIFIED_CLUSTER = "stratified_cluster"


@dataclass(frozen=True)
class SurveyDesign:
    """Sample-level description of a complex sampling design.

    Attributes:
        pi: inclusion probabilities, each in (0, 1].
        weights: sampling weights; default 1/pi.
        strata: stratum label per unit (optional).
        psu: primary-sampling-unit label per unit, nested in strata (optional).
        pop_size: population size N; defaults to round(sum of weights).
    """

    pi: np.ndarray
    weights: np.ndarray = None  # type: ignore[assignment]
    strata: np.ndarray | None = None
    psu: np.ndarray | None = None
    pop_size: float = None  # type: ignore[assignment]
    hajek: bool = field(default=False)

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=float)
        object.__setattr__(self, "pi", pi)
        if np.any(pi <= 0.0) or np.any(pi > 1.0):
            raise DesignError("inclusion probabilities must lie in (0, 1]")
        w = self.weights
        w = 1.0 / pi if w is None else np.asarray(w, dtype=float)
        if w.shape != pi.shape:
            raise DesignError("weights and pi must have the same length")
        if np.any(w <= 0.0):
            raise DesignError("weights must be positive")
        if self.pop_size is not None and self.hajek:
            w = w * (float(self.pop_size) / w.sum())
        object.__setattr__(self, "weights", w)
        if self.pop_size is None:
            object.__setattr__(self, "pop_size", float(np.round(w.sum())))
        else:
            object.__setattr__(self, "pop_size", float(self.pop_size))
        for name in ("strata", "psu"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v)
                if v.shape != pi.shape:
                    raise DesignError(f"{name} must have the same length as pi")
                object.__setattr__(self, name, v)
        if self.psu is not None and self.strata is not None:
            # each PSU must live inside a single stratum
            seen: dict = {}
            for h, j in zip(self.strata, self.psu):
                if j in seen and seen[j] != h:
                    raise DesignError(f"PSU {j!r} spans strata {seen[j]!r} and {h!r}")
                seen[j] = h

    @property
    def n(self) -> int:
        return int(self.pi.shape[0])

    @classmethod
    def uniform(cls, n: int, pop_size: float | None = None) -> "SurveyDesign":
        """Equal-probability design; pi = n/N (or a census if N is omitted)."""
        if pop_size is None:
            return cls(pi=np.ones(n))
        return cls(pi=np.full(n, n / float(pop_size)), pop_size=float(pop_size))

    @classmethod
    def from_weights(cls, weights, **kwargs) -> "SurveyDesign":
        w = np.asarray(weights, dtype=float)
        return cls(pi=np.minimum(1.0, 1.0 / w), weights=w, **kwargs)


@dataclass(frozen=True)
class MeatMatrix:
    matrix: np.ndarray
    structure: MeatStructure


@dataclass(frozen=True)
class DesignDiagnostics:
    n: int
    n_strata: int
    n_psu: int
    pi_min: float
    pi_max: float
    weight_sum: float
    pop_size: float
    weight_sum_discrepancy: float


def ht_total(values, design: SurveyDesign) -> float:
    """Horvitz-Thompson estimate of the population total of ``values``."""
    values = np.asarray(values, dtype=float)
    if values.shape != design.pi.shape:
        raise DesignError("values must align with the design vectors")
    return float(design.weights @ values)


def validate_design(design: SurveyDesign) -> DesignDiagnostics:
    """Summarize a design: strata/PSU counts and the weight-sum vs N gap."""
    n_strata = len(np.unique(design.strata)) if design.strata is not None else 1
    n_psu = len(np.unique(design.psu)) if design.psu is not None else design.n
    wsum = float(design.weights.sum())
    return DesignDiagnostics(
        n=design.n,
        n_strata=n_strata,
        n_psu=n_psu,
        pi_min=float(design.pi.min()),
        pi_max=float(design.pi.max()),
        weight_sum=wsum,
        pop_size=design.pop_size,
        weight_sum_discrepancy=abs(wsum - design.pop_size) / design.pop_size,
    )


def meat_independent(X, residuals, design: SurveyDesign) -> MeatMatrix:
    """Score covariance for an independently drawn unstratified sample.

    Returns (1/N^2) sum_i w_i^2 r_i^2 x_i x_i^T.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if X.shape[0] != r.shape[0] or r.shape != design.pi.shape:
        raise DesignError("X, residuals, and design must align")
    A = X * (design.weights * r)[:, None]
    V = A.T @ A / design.pop_size**2
    return MeatMatrix(matrix=(V + V.T) / 2.0, structure=MeatStructure.INDEPENDENT)


def meat_stratified_cluster(
    X,
    residuals,
    design: SurveyDesign,
    center_diagonal: bool = False,
    certainty_single_psu: bool = False,
) -> MeatMatrix:
    """Score covariance with the stratified/PSU block structure.

    Within each stratum, same-PSU blocks use raw residual outer products;
    cross-PSU blocks use residuals centered at their within-PSU mean, so
    a stratum of singleton PSUs contributes no cross terms and the result
    collapses to :func:`meat_independent`.  ``center_diagonal`` applies
    the same centering to the same-PSU blocks as well.
    """
    X = np.asarray(X, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if design.strata is None or design.psu is None:
        raise DesignError("stratified meat requires stratum and PSU labels")
    if X.shape[0] != r.shape[0]:
        raise DesignError("X and residuals must align")
    w = design.weights
    N = design.pop_size
    p = X.shape[1]

    V = np.zeros((p, p))
    for h in np.unique(design.strata):
        in_h = design.strata == h
        psus = np.unique(design.psu[in_h])
        if len(psus) < 2 and not certainty_single_psu:
            raise DesignError(
                f"stratum {h!r} has a single PSU; variance within one cluster is "
                "unidentifiable (pass certainty_single_psu=True to treat its "
                "units as independently sampled)"
            )
        raw_terms = []  # per-PSU weighted score sums, raw residuals
        cen_terms = []  # same, residuals centered at the PSU mean prediction
        for j in psus:
            in_j = in_h & (design.psu == j)
            if len(psus) < 2:
                # certainty PSU: its units contribute independently
                A = X[in_j] * (w[in_j] * r[in_j])[:, None]
                V += A.T @ A
                continue
            u = X[in_j].T @ (w[in_j] * r[in_j])
            v = X[in_j].T @ (w[in_j] * (r[in_j] - r[in_j].mean()))
            raw_terms.append(u)
            cen_terms.append(v)
        if not raw_terms:
            continue
        U = np.array(raw_terms)
        C = np.array(cen_terms)
        diag_terms = C if center_diagonal else U
        # sum over same-PSU blocks plus all cross-PSU centered blocks
        s = C.sum(axis=0)
        V += diag_terms.T @ diag_terms + np.outer(s, s) - C.T @ C
    V /= N**2
    return MeatMatrix(matrix=(V + V.T) / 2.0, structure=MeatStructure.STRATIFIED_CLUSTER)
