"""Joint fixed-step simulation of the true system and the observer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .lie_core import (
    AlgebraElement,
    GroupDescriptor,
    descriptor_by_name,
    exp_so3,
    frob_norm,
    membership_residual_batch,
    se3_from_parts,
    singular_value_extremes_batch,
)
from .observer import (
    Gains,
    ObserverState,
    error_system_rhs,
    error_terms,
    observer_rhs_matrices,
)
from .systems import (
    LandmarkFrame,
    NoiseConfig,
    NoiseStreams,
    SystemState,
    VelocityProfile,
    constant_profile,
    identity_frame,
    perturb_states,
    se3_landmark_frame,
    se3_circular_profile,
    so3_circular_profile,
    true_trajectory,
)

MAX_TRACE_ROWS = 1_000_000
CHUNK_STEPS = 4096
SIGMA_MIN_FLOOR = 1e-12
RATE_FLOOR = 1e-10
LINEARITY_EPS = 1e-12

TRACE_COLUMNS = ("t", "norm_EA", "norm_Eb", "V", "membership", "sigma_min", "sigma_max", "norm_xi")


class NonFiniteStateError(FloatingPointError):
    pass


class SimulationAborted(RuntimeError):
    """Raised when the observer state stops being finite.

    ``trace`` and ``assumptions`` hold everything recorded before the abort.
    """

    def __init__(self, message: str, trace: "SimulationTrace", assumptions: "AssumptionReport"):
        super().__init__(message)
        self.trace = trace
        self.assumptions = assumptions


def _combine(y, coeffs: Sequence[float], ks: Sequence) -> object:
    if isinstance(y, tuple):
        return tuple(_combine(part, coeffs, [k[i] for k in ks]) for i, part in enumerate(y))
    out = y + coeffs[0] * ks[0]
    for c, k in zip(coeffs[1:], ks[1:]):
        out += c * k
    return out


def _all_finite(y) -> bool:
    if isinstance(y, tuple):
        return all(_all_finite(part) for part in y)
    return bool(np.all(np.isfinite(y)))


def rk4_step(rhs: Callable, state, t: float, h: float):
    """One classical Runge-Kutta step for ``y' = rhs(t, y)``.

    ``state`` is an array or a tuple of arrays; ``rhs`` must return the same
    structure. Raises :class:`NonFiniteStateError` if the result is not finite.
    """
    if not h > 0:
        raise ValueError("step h must be positive")
    k1 = rhs(t, state)
    k2 = rhs(t + 0.5 * h, _combine(state, (0.5 * h,), (k1,)))
    k3 = rhs(t + 0.5 * h, _combine(state, (0.5 * h,), (k2,)))
    k4 = rhs(t + h, _combine(state, (h,), (k3,)))
    out = _combine(state, (h / 6.0, h / 3.0, h / 3.0, h / 6.0), (k1, k2, k3, k4))
    if not _all_finite(out):
        raise NonFiniteStateError(f"non-finite state after RK4 step at t={t!r}")
    return out


@dataclass(frozen=True)
class ProfileSpec:
    name: str
    params: dict = field(default_factory=dict)

    def build(self, desc: GroupDescriptor) -> VelocityProfile:
        if self.name == "se3-circular":
            return se3_circular_profile(**self.params)
        if self.name == "so3-circular":
            return so3_circular_profile(**self.params)
        if self.name == "constant":
            return constant_profile(desc, self.params["coords"])
        raise ValueError(f"unknown velocity profile {self.name!r}")


@dataclass(frozen=True)
class Pose:
    """Group element given by a rotation vector and (for SE(3)) a position."""

    rotation_vector: tuple = (0.0, 0.0, 0.0)
    position: tuple = (0.0, 0.0, 0.0)

    def matrix(self, group: str) -> np.ndarray:
        R = exp_so3(self.rotation_vector)
        if group == "SO3":
            return R
        return se3_from_parts(R, self.position)


def bias_element(desc: GroupDescriptor, omega=(0.0, 0.0, 0.0), v=(0.0, 0.0, 0.0)) -> AlgebraElement:
    """Algebra element for an angular (and linear) velocity offset."""
    from .lie_core import hat3, hat_se3

    if desc.name == "SE3":
        return desc.project(hat_se3(omega, v))
    if desc.name == "SO3":
        return desc.project(hat3(omega))
    raise ValueError(f"bias_element only supports SO3/SE3, got {desc.name}")


@dataclass(frozen=True)
class Scenario:
    group: str
    gains: Gains
    profile: ProfileSpec
    bias: tuple
    noise: NoiseConfig
    initial_truth: Pose
    initial_observer: Pose
    initial_bias_estimate: tuple
    frame: str = "se3-landmarks"
    t_end: float = 15.0
    h: float = 1e-3
    propagation: str = "magnus4"
    measurement_hold: str = "stage"

    def __post_init__(self):
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError("step h must be positive")
        if not self.t_end >= self.h:
            raise ValueError("t_end must be at least one step")
        if self.measurement_hold not in ("stage", "zoh"):
            raise ValueError("measurement_hold must be 'stage' or 'zoh'")
        desc = self.descriptor
        for name in ("bias", "initial_bias_estimate"):
            if len(getattr(self, name)) != desc.d:
                raise ValueError(f"{name} needs {desc.d} algebra coordinates")

    @property
    def descriptor(self) -> GroupDescriptor:
        return descriptor_by_name(self.group)

    @property
    def landmarks(self) -> LandmarkFrame:
        if self.frame == "se3-landmarks":
            if self.group != "SE3":
                raise ValueError("se3-landmarks frame needs the SE3 group")
            return se3_landmark_frame()
        if self.frame == "identity":
            return identity_frame(self.descriptor.n)
        raise ValueError(f"unknown landmark frame {self.frame!r}")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_end / self.h + 1e-9))

    def truth_state(self) -> SystemState:
        desc = self.descriptor
        return SystemState(self.initial_truth.matrix(self.group), desc.element(self.bias))

    def observer_state(self) -> ObserverState:
        desc = self.descriptor
        return ObserverState.from_group(
            self.initial_observer.matrix(self.group), desc.element(self.initial_bias_estimate), self.landmarks
        )


@dataclass
class History:
    """Per-step matrices kept when ``run(..., record_states=True)``.

    ``stage_A[k]`` holds the noiseless ``A = F g`` at ``t_k``, ``t_k + h/2``
    and ``t_k + h``, which is what an RK4 step of the error system needs.
    """

    E_A: list = field(default_factory=list)
    E_b: list = field(default_factory=list)
    stage_A: list = field(default_factory=list)


@dataclass
class SimulationTrace:
    columns: dict
    h: float
    history: Optional[History] = None

    def __len__(self) -> int:
        return len(self.columns["t"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], h: float) -> "SimulationTrace":
        data = np.asarray(rows, dtype=float).reshape(-1, len(TRACE_COLUMNS))
        return cls({name: data[:, i].copy() for i, name in enumerate(TRACE_COLUMNS)}, h)

    def rows(self) -> np.ndarray:
        return np.column_stack([self.columns[name] for name in TRACE_COLUMNS])


class AssumptionReport(NamedTuple):
    M_hat: float
    L_hat: float
    R_hat: float
    violated: bool
    membership_checked: bool

    def as_dict(self) -> dict:
        return {
            "M_hat": self.M_hat,
            "L_hat": self.L_hat,
            "R_hat": self.R_hat,
            "violated": self.violated,
            "membership_checked": self.membership_checked,
        }


def _assumptions(columns: dict, checked: bool) -> AssumptionReport:
    if len(columns["t"]) == 0:
        return AssumptionReport(math.nan, math.nan, math.nan, True, checked)
    M_hat = float(np.max(columns["norm_xi"]))
    L_hat = float(np.min(columns["sigma_min"]))
    R_hat = float(np.max(columns["sigma_max"]))
    violated = not (math.isfinite(M_hat) and math.isfinite(R_hat) and L_hat > SIGMA_MIN_FLOOR)
    return AssumptionReport(M_hat, L_hat, R_hat, violated, checked)


def _stage_measurements(G, G_half, xis, xis_half, bias, frame, desc, block, hold):
    """Stage measurements ``A_m`` and ``xi_m`` of shape ``(m, 3, n, n)``.

    Stage order is step start, midpoint, step end. One noise draw per step is
    shared by all three.
    """
    m = len(G_half)
    starts, ends = G[:-1], G[1:]
    if block is not None:
        starts, G_half, ends = (perturb_states(X, desc, block) for X in (starts, G_half, ends))
        z = np.tensordot(block.z, desc.basis, axes=1)
    else:
        z = 0.0
    A = np.stack([frame.F @ starts, frame.F @ G_half, frame.F @ ends], axis=1)
    xi = np.stack([xis[:-1], xis_half, xis[1:]], axis=1) + bias + (z[:, None] if block is not None else 0.0)
    if hold == "zoh":
        A = np.repeat(A[:, :1], 3, axis=1)
        xi = np.repeat(xi[:, :1], 3, axis=1)
    assert A.shape[0] == m
    return A, xi


def run(
    scenario: Scenario,
    observer_init: Optional[ObserverState] = None,
    record_states: bool = False,
) -> tuple[SimulationTrace, AssumptionReport]:
    """Integrate truth and observer on a shared clock.

    Truth advances by exact group exponentials, the observer by RK4. Noise
    is drawn once per step and held across the RK stages; the noiseless part
    of each stage measurement comes from the true state at the stage time
    (``measurement_hold="stage"``) or from the step start (``"zoh"``).

    The truth trajectory does not depend on the observer, so it is computed
    in vectorised chunks of :data:`CHUNK_STEPS`; only the observer update runs
    step by step.
    """
    # overflow is detected explicitly and turned into SimulationAborted
    with np.errstate(over="ignore", invalid="ignore"):
        return _run(scenario, observer_init, record_states)


def _run(scenario, observer_init, record_states):
    desc = scenario.descriptor
    frame = scenario.landmarks
    gains = scenario.gains
    profile = scenario.profile.build(desc)
    h = scenario.h
    n_steps = scenario.n_steps
    stride = max(1, math.ceil((n_steps + 1) / MAX_TRACE_ROWS))
    streams = NoiseStreams(scenario.noise.seed)
    noisy = scenario.noise.active
    checked = desc.residual is not None

    truth = scenario.truth_state()
    bias = truth.b.matrix
    obs = observer_init if observer_init is not None else scenario.observer_state()
    y = np.stack((np.asarray(obs.A_bar, dtype=float), np.asarray(obs.b_bar.matrix, dtype=float)))
    history = History() if record_states else None
    blocks: list = []

    def emit(ks, G, Y, xis):
        keep = (ks % stride == 0) | (ks == n_steps)
        if history is not None:
            E_A = frame.F @ G - Y[:, 0]
            history.E_A.extend(E_A)
            history.E_b.extend((bias - Y[:, 1]).reshape(len(ks), -1) @ desc._flat.T)
        ks, G, Y, xis = ks[keep], G[keep], Y[keep], xis[keep]
        if not len(ks):
            return
        E_A = frame.F @ G - Y[:, 0]
        E_b = bias - Y[:, 1]
        nA = np.sqrt(np.einsum("kij,kij->k", E_A, E_A))
        nb = np.sqrt(np.einsum("kij,kij->k", E_b, E_b))
        smin, smax = singular_value_extremes_batch(G)
        blocks.append(
            np.column_stack(
                (
                    ks * h,
                    nA,
                    nb,
                    0.5 * gains.k2 * nA**2 + 0.5 * nb**2,
                    membership_residual_batch(desc, G),
                    smin,
                    smax,
                    np.sqrt(np.einsum("kij,kij->k", xis, xis)),
                )
            )
        )

    def finish() -> tuple[SimulationTrace, AssumptionReport]:
        data = np.concatenate(blocks) if blocks else np.zeros((0, len(TRACE_COLUMNS)))
        trace = SimulationTrace.from_rows(data, h)
        trace.history = history
        return trace, _assumptions(trace.columns, checked)

    def rhs_for(A_st, xi_st, t):
        lookup = {t: 0, t + 0.5 * h: 1, t + h: 2}

        def rhs(ts, state):
            i = lookup[ts]
            return np.stack(observer_rhs_matrices(state[0], state[1], A_st[i], xi_st[i], gains, desc))

        return rhs

    g = truth.g
    for start in range(0, n_steps, CHUNK_STEPS):
        ks = np.arange(start, min(start + CHUNK_STEPS, n_steps))
        ts = ks * h
        G, G_half = true_trajectory(g, profile, ts, h, desc, scenario.propagation)
        grid_t = np.append(ts, (ks[-1] + 1) * h)
        xis = profile.matrices(grid_t)
        xis_half = profile.matrices(ts + 0.5 * h)
        block = streams.draw_block(desc, scenario.noise, len(ks)) if noisy else None
        A_st, xi_st = _stage_measurements(
            G, G_half, xis, xis_half, bias, frame, desc, block, scenario.measurement_hold
        )
        if history is not None:
            history.stage_A.extend(zip(frame.F @ G[:-1], frame.F @ G_half, frame.F @ G[1:]))
        Y = np.empty((len(ks),) + y.shape)
        for i, t in enumerate(ts.tolist()):
            Y[i] = y
            try:
                y = rk4_step(rhs_for(A_st[i], xi_st[i], t), y, t, h)
            except NonFiniteStateError as exc:
                emit(ks[: i + 1], G[: i + 1], Y[: i + 1], xis[: i + 1])
                trace, report = finish()
                raise SimulationAborted(str(exc), trace, report) from exc
            # keep b_bar in the algebra
            y[1] = desc.project_matrix(y[1])
        emit(ks, G[:-1], Y, xis[:-1])
        g = G[-1]
        last_xi = xis[-1]
    if n_steps == 0:
        last_xi = profile(0.0).matrix
    emit(np.array([n_steps]), g[None], y[None], last_xi[None])
    return finish()


def integrate_error_system(
    E_A0: np.ndarray,
    E_b0: np.ndarray,
    stage_A: Sequence,
    gains: Gains,
    desc: GroupDescriptor,
    h: float,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4 integration of the linear error system along a recorded ``A(t)``.

    Returns stacked ``E_A`` matrices and ``E_b`` coordinates, one entry per
    grid point (``len(stage_A) + 1`` of them).
    """
    E_A = np.array(E_A0, dtype=float)
    E_b = np.array(E_b0, dtype=float)
    out_A = [E_A]
    out_b = [E_b]
    for k, (A0, A_half, A1) in enumerate(stage_A):
        t = k * h
        lookup = {t: A0, t + 0.5 * h: A_half, t + h: A1}

        def rhs(ts, y):
            dA, db = error_system_rhs(y[0], desc.element(y[1]), lookup[ts], gains, desc)
            return dA, db.coords

        E_A, E_b = rk4_step(rhs, (E_A, E_b), t, h)
        out_A.append(E_A)
        out_b.append(E_b)
    return np.stack(out_A), np.stack(out_b)


class RateFit(NamedTuple):
    rate: float
    r_squared: float
    degenerate: bool


def fit_exponential_rate(trace: SimulationTrace, t_start: float, t_end: float, column: str = "norm_EA") -> RateFit:
    """Least-squares slope and R^2 of ``log(column)`` against ``t`` on a window.

    A constant series gives slope 0 with ``r_squared = 0`` and
    ``degenerate=True``.
    """
    t = trace["t"]
    values = trace[column]
    mask = (t >= t_start - 1e-12) & (t <= t_end + 1e-12)
    if np.count_nonzero(mask) < 2:
        raise ValueError(f"window [{t_start}, {t_end}] holds fewer than two samples")
    tw, yw = t[mask], values[mask]
    if np.any(yw <= 0) or not np.all(np.isfinite(yw)):
        raise ValueError(
            f"nonpositive values of {column} in [{t_start}, {t_end}]; the noise floor was reached, shrink the window"
        )
    logs = np.log(yw)
    slope, intercept = np.polyfit(tw, logs, 1)
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    if ss_tot <= 1e-300 * len(logs):
        return RateFit(0.0, 0.0, True)
    ss_res = float(np.sum((logs - (slope * tw + intercept)) ** 2))
    return RateFit(float(slope), 1.0 - ss_res / ss_tot, False)


def displaced_observer(scenario: Scenario, alpha: float) -> ObserverState:
    """Observer start whose initial error is ``alpha`` times the scenario's."""
    desc = scenario.descriptor
    truth = scenario.truth_state()
    base = scenario.observer_state()
    err = error_terms(truth, scenario.landmarks, base)
    A = scenario.landmarks.F @ truth.g
    return ObserverState(A - alpha * err.E_A, truth.b - err.E_b * alpha)


def linearity_check(scenario: Scenario, alpha: float) -> float:
    """Max relative deviation of the ``alpha``-scaled error trajectory from linear scaling."""
    if scenario.noise.active:
        raise ValueError("linearity_check needs a noiseless scenario")
    if alpha == 0 or not math.isfinite(alpha):
        raise ValueError("alpha must be finite and nonzero")
    tr1, _ = run(scenario, displaced_observer(scenario, 1.0), record_states=True)
    tr2, _ = run(scenario, displaced_observer(scenario, alpha), record_states=True)
    h1, h2 = tr1.history, tr2.history
    worst = 0.0
    for EA1, Eb1, EA2, Eb2 in zip(h1.E_A, h1.E_b, h2.E_A, h2.E_b):
        num = math.sqrt(frob_norm(EA2 - alpha * EA1) ** 2 + float(np.sum((Eb2 - alpha * Eb1) ** 2)))
        den = abs(alpha) * math.sqrt(frob_norm(EA1) ** 2 + float(np.sum(Eb1**2))) + LINEARITY_EPS
        worst = max(worst, num / den)
    return worst
