"""Ambient-space observer for ``g' = g xi`` with biased velocity readings.

The estimate ``A_bar`` lives in the full matrix space and is never pulled
back onto ``F G``; only the bias estimate is constrained to the algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lie_core import AlgebraElement, GroupDescriptor, frob_norm
from .systems import LandmarkFrame, Measurement, SystemState


@dataclass(frozen=True)
class Gains:
    k1: float
    k2: float

    def __post_init__(self):
        for name in ("k1", "k2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"gain {name} must be positive, got {value!r}")


@dataclass
class ObserverState:
    A_bar: np.ndarray
    b_bar: AlgebraElement

    @classmethod
    def from_group(cls, X_bar, b_bar: AlgebraElement, frame: LandmarkFrame) -> "ObserverState":
        """Embed a group-coordinate initial guess as ``A_bar = F X_bar``."""
        return cls(frame.F @ np.asarray(X_bar, dtype=float), b_bar)


@dataclass(frozen=True)
class ErrorPair:
    E_A: np.ndarray
    E_b: AlgebraElement
    norm_EA: float
    norm_Eb: float


def observer_rhs(
    obs: ObserverState, m: Measurement, gains: Gains, desc: GroupDescriptor
) -> tuple[np.ndarray, AlgebraElement]:
    """Right-hand side of the observer ODE.

    ``dA_bar = A_m xi_m + k1 (A_m - A_bar) - A_m b_bar`` and
    ``db_bar = -k2 proj(A_m^T (A_m - A_bar))``.
    """
    A_m = m.A_m
    if A_m.shape != obs.A_bar.shape or A_m.shape != (desc.n, desc.n):
        raise ValueError(f"dimension mismatch: A_m {A_m.shape}, A_bar {obs.A_bar.shape}, group n={desc.n}")
    dA, db = observer_rhs_matrices(obs.A_bar, obs.b_bar.matrix, A_m, m.xi_m.matrix, gains, desc)
    return dA, desc.project(db)


def observer_rhs_matrices(
    A_bar: np.ndarray, b_bar: np.ndarray, A_m: np.ndarray, xi_m: np.ndarray, gains: Gains, desc: GroupDescriptor
) -> tuple[np.ndarray, np.ndarray]:
    """:func:`observer_rhs` on bare matrices, for inner integration loops."""
    innovation = A_m - A_bar
    dA = A_m @ (xi_m - b_bar) + gains.k1 * innovation
    db = desc.project_matrix(A_m.T @ innovation) * (-gains.k2)
    return dA, db


def error_terms(truth: SystemState, frame: LandmarkFrame, obs: ObserverState) -> ErrorPair:
    E_A = frame.F @ truth.g - obs.A_bar
    E_b = truth.b - obs.b_bar
    return ErrorPair(E_A, E_b, frob_norm(E_A), frob_norm(E_b.matrix))


def lyapunov(err: ErrorPair, gains: Gains) -> float:
    return 0.5 * gains.k2 * err.norm_EA**2 + 0.5 * err.norm_Eb**2


def lyapunov_rate_analytic(err: ErrorPair, gains: Gains) -> float:
    """Closed-form ``dV/dt = -k1 k2 |E_A|^2`` along the noiseless error dynamics."""
    return -gains.k1 * gains.k2 * err.norm_EA**2


def error_system_rhs(
    E_A: np.ndarray, E_b: AlgebraElement, A: np.ndarray, gains: Gains, desc: GroupDescriptor
) -> tuple[np.ndarray, AlgebraElement]:
    """Linear error dynamics driven by the true ambient state ``A = F g``."""
    dE_A = -gains.k1 * E_A - A @ E_b.matrix
    dE_b = desc.project(A.T @ E_A) * gains.k2
    return dE_A, dE_b
