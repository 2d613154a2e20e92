"""scikit-learn style wrapper around the observer for sampled measurement logs."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .lie_core import GroupDescriptor, descriptor_by_name
from .observer import Gains, observer_rhs_matrices
from .simulate import rk4_step

ALGEBRA_TOL = 1e-8


def check_measurements(A_m, xi_m, desc: GroupDescriptor) -> tuple[np.ndarray, np.ndarray]:
    """Validate a log of ``(T, n, n)`` state and velocity measurements.

    Velocity readings must already lie in the Lie algebra (to within
    :data:`ALGEBRA_TOL`); they are returned re-projected to remove round-off.
    """
    A_m = np.asarray(A_m, dtype=float)
    xi_m = np.asarray(xi_m, dtype=float)
    shape = (desc.n, desc.n)
    for name, arr in (("A_m", A_m), ("xi_m", xi_m)):
        if arr.ndim != 3 or arr.shape[1:] != shape:
            raise ValueError(f"{name} must have shape (T, {desc.n}, {desc.n}), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains NaN or infinite entries")
    if len(A_m) != len(xi_m):
        raise ValueError(f"A_m and xi_m differ in length: {len(A_m)} vs {len(xi_m)}")
    if len(A_m) < 1:
        raise ValueError("need at least one measurement")
    projected = desc.project_batch(xi_m)
    if np.max(np.abs(projected - xi_m)) > ALGEBRA_TOL:
        raise ValueError(f"xi_m is not in the {desc.name} Lie algebra")
    return A_m, projected


class AmbientObserver(TransformerMixin, BaseEstimator):
    """Observer for ``g' = g xi`` fed by uniformly sampled measurements.

    Parameters
    ----------
    k1, k2 : float
        Positive state and bias gains.
    dt : float
        Sample spacing of the measurement log in seconds.
    group : {"SE3", "SO3"}
        Matrix Lie group of the state.
    interpolation : {"linear", "hold"}
        How measurements are read between samples inside an RK4 step.
    A_bar_init, b_bar_init : array or None
        Initial ambient estimate (default: the first ``A_m``) and initial
        bias estimate (default: zero).

    After :meth:`fit`, ``A_bar_`` and ``b_bar_`` hold the estimate at the last
    sample and ``trajectory_`` / ``bias_trajectory_`` the estimate at every
    sample.
    """

    def __init__(self, k1=2.0, k2=10.0, dt=1e-3, group="SE3", interpolation="linear", A_bar_init=None, b_bar_init=None):
        self.k1 = k1
        self.k2 = k2
        self.dt = dt
        self.group = group
        self.interpolation = interpolation
        self.A_bar_init = A_bar_init
        self.b_bar_init = b_bar_init

    def _setup(self):
        desc = descriptor_by_name(self.group)
        gains = Gains(float(self.k1), float(self.k2))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.interpolation not in ("linear", "hold"):
            raise ValueError("interpolation must be 'linear' or 'hold'")
        return desc, gains

    def _filter(self, A_m, xi_m, y0, desc, gains):
        h = float(self.dt)
        out = np.empty((len(A_m),) + y0.shape)
        y = y0
        out[0] = y
        for k in range(len(A_m) - 1):
            if self.interpolation == "hold":
                stages = [(A_m[k], xi_m[k])] * 3
            else:
                mid = (0.5 * (A_m[k] + A_m[k + 1]), 0.5 * (xi_m[k] + xi_m[k + 1]))
                stages = [(A_m[k], xi_m[k]), mid, (A_m[k + 1], xi_m[k + 1])]

            def rhs(offset, state, stages=stages):
                # rk4_step is called with t = 0, so offset is 0, h/2 or h
                A, xi = stages[int(round(2.0 * offset / h))]
                return np.stack(observer_rhs_matrices(state[0], state[1], A, xi, gains, desc))

            y = rk4_step(rhs, y, 0.0, h)
            y[1] = desc.project_matrix(y[1])
            out[k + 1] = y
        return out

    def _initial_state(self, A_m, desc):
        A0 = A_m[0] if self.A_bar_init is None else np.asarray(self.A_bar_init, dtype=float)
        b0 = np.zeros((desc.n, desc.n)) if self.b_bar_init is None else np.asarray(self.b_bar_init, dtype=float)
        if A0.shape != (desc.n, desc.n) or b0.shape != (desc.n, desc.n):
            raise ValueError("initial estimates must be n x n matrices")
        return np.stack((A0, desc.project_matrix(b0)))

    def partial_fit(self, A_m, xi_m):
        """Continue filtering from the current estimate.

        The new batch is taken to start one ``dt`` after the last sample seen.
        """
        if not hasattr(self, "A_bar_"):
            return self.fit(A_m, xi_m)
        desc, gains = self._setup()
        A_m, xi_m = check_measurements(A_m, xi_m, desc)
        A_all = np.concatenate([self._last_measurement[0][None], A_m])
        xi_all = np.concatenate([self._last_measurement[1][None], xi_m])
        y0 = np.stack((self.A_bar_, self.b_bar_))
        traj = self._filter(A_all, xi_all, y0, desc, gains)[1:]
        self._store(traj, self.n_samples_seen_ + len(A_m), A_m[-1], xi_m[-1])
        return self

    def _store(self, traj, n_seen, last_A=None, last_xi=None):
        self.trajectory_ = traj[:, 0]
        self.bias_trajectory_ = traj[:, 1]
        self.A_bar_ = traj[-1, 0].copy()
        self.b_bar_ = traj[-1, 1].copy()
        self.n_samples_seen_ = n_seen
        if last_A is None:
            self._last_measurement = None
        else:
            self._last_measurement = (last_A, last_xi)

    def fit(self, A_m, xi_m):
        desc, gains = self._setup()
        A_m, xi_m = check_measurements(A_m, xi_m, desc)
        traj = self._filter(A_m, xi_m, self._initial_state(A_m, desc), desc, gains)
        self._store(traj, len(A_m), A_m[-1], xi_m[-1])
        return self

    def transform(self, A_m, xi_m=None):
        """Ambient estimates for a new log, started from the fitted estimate.

        The fitted state is left untouched. Without ``xi_m`` the velocity is
        taken as zero in the algebra, which is rarely what you want.
        """
        check_is_fitted(self, "A_bar_")
        desc, gains = self._setup()
        if xi_m is None:
            xi_m = np.zeros_like(np.asarray(A_m, dtype=float))
        A_m, xi_m = check_measurements(A_m, xi_m, desc)
        y0 = np.stack((self.A_bar_, self.b_bar_))
        return self._filter(A_m, xi_m, y0, desc, gains)[:, 0]

    def fit_transform(self, A_m, xi_m=None, **fit_params):
        return self.fit(A_m, xi_m).trajectory_

    @property
    def bias_(self) -> np.ndarray:
        check_is_fitted(self, "b_bar_")
        return self.b_bar_
