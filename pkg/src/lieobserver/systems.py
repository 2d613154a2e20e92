"""True system ``g' = g xi`` with constant velocity bias, and its sensors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .lie_core import (
    SE3,
    SO3,
    AlgebraElement,
    GroupDescriptor,
    exp_generic,
    exp_so3,
    exp_so3_batch,
    hat_se3,
    hat3,
)

NOISE_CHANNELS = ("w", "v", "z")
_GAUSS_OFFSET = math.sqrt(3.0) / 6.0
_MAGNUS_BRACKET = math.sqrt(3.0) / 12.0
_SQRT2 = math.sqrt(2.0)


@dataclass
class SystemState:
    g: np.ndarray
    b: AlgebraElement


@dataclass(frozen=True)
class LandmarkFrame:
    """Constant invertible matrix ``F`` mapping the state to ``A = F g``."""

    F: np.ndarray
    F_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        F = np.asarray(self.F, dtype=float)
        if F.ndim != 2 or F.shape[0] != F.shape[1]:
            raise ValueError(f"F must be square, got shape {F.shape}")
        try:
            F_inv = np.linalg.inv(F)
        except np.linalg.LinAlgError:
            raise ValueError("landmark matrix F is singular") from None
        if np.max(np.abs(F @ F_inv - np.eye(F.shape[0]))) > 1e-10:
            raise ValueError("landmark matrix F is too ill-conditioned to invert")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "F_inv", F_inv)


def se3_landmark_frame() -> LandmarkFrame:
    """Three unit landmarks ``(e_i, 1)`` plus the direction ``(-e_3, 0)``."""
    F = np.zeros((4, 4))
    for i in range(3):
        F[i, i] = 1.0
        F[3, i] = 1.0
    F[2, 3] = -1.0
    return LandmarkFrame(F)


def identity_frame(n: int) -> LandmarkFrame:
    return LandmarkFrame(np.eye(n))


@dataclass(frozen=True)
class VelocityProfile:
    """Closed-form velocity ``t -> xi(t)``.

    ``batch`` optionally evaluates matrices for an array of times at once;
    without it :meth:`matrices` falls back to calling ``func`` per sample.
    """

    label: str
    func: Callable[[float], AlgebraElement] = field(repr=False)
    params: dict = field(default_factory=dict)
    batch: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __call__(self, t: float) -> AlgebraElement:
        return self.func(t)

    def matrices(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float).reshape(-1)
        if self.batch is not None:
            return self.batch(ts)
        return np.stack([self.func(float(t)).matrix for t in ts])


def se3_scenario_velocity(t: float, omega_rate: float = 10.0, v_rate: float = 0.5) -> AlgebraElement:
    """Body velocity ``Omega = (-sin 10t, cos 10t, 0)``, ``v = (cos t/2, sin t/2, 0)``."""
    omega = (-math.sin(omega_rate * t), math.cos(omega_rate * t), 0.0)
    v = (math.cos(v_rate * t), math.sin(v_rate * t), 0.0)
    # rotational basis elements carry a 1/sqrt(2) factor
    coords = np.array([_SQRT2 * omega[0], _SQRT2 * omega[1], 0.0, v[0], v[1], 0.0])
    matrix = np.array(
        [[0.0, 0.0, omega[1], v[0]], [0.0, 0.0, -omega[0], v[1]], [-omega[1], omega[0], 0.0, 0.0], [0.0] * 4]
    )
    return AlgebraElement(coords, matrix)


def so3_scenario_velocity(t: float, omega_rate: float = 10.0) -> AlgebraElement:
    omega = (-math.sin(omega_rate * t), math.cos(omega_rate * t), 0.0)
    return AlgebraElement(np.array([_SQRT2 * omega[0], _SQRT2 * omega[1], 0.0]), hat3(omega))


def _circular_rotation_block(ts: np.ndarray, omega_rate: float, n: int) -> np.ndarray:
    out = np.zeros((len(ts), n, n))
    s, c = np.sin(omega_rate * ts), np.cos(omega_rate * ts)
    # hat of (-s, c, 0)
    out[:, 0, 2], out[:, 2, 0] = c, -c
    out[:, 1, 2], out[:, 2, 1] = s, -s
    return out


def se3_circular_profile(omega_rate: float = 10.0, v_rate: float = 0.5) -> VelocityProfile:
    def batch(ts):
        out = _circular_rotation_block(ts, omega_rate, 4)
        out[:, 0, 3] = np.cos(v_rate * ts)
        out[:, 1, 3] = np.sin(v_rate * ts)
        return out

    return VelocityProfile(
        "se3-circular",
        lambda t: se3_scenario_velocity(t, omega_rate, v_rate),
        {"omega_rate": omega_rate, "v_rate": v_rate},
        batch,
    )


def so3_circular_profile(omega_rate: float = 10.0) -> VelocityProfile:
    return VelocityProfile(
        "so3-circular",
        lambda t: so3_scenario_velocity(t, omega_rate),
        {"omega_rate": omega_rate},
        lambda ts: _circular_rotation_block(ts, omega_rate, 3),
    )


def constant_profile(desc: GroupDescriptor, coords) -> VelocityProfile:
    xi = desc.element(coords)
    return VelocityProfile(
        "constant",
        lambda t: xi,
        {"coords": [float(c) for c in xi.coords]},
        lambda ts: np.broadcast_to(xi.matrix, (len(ts),) + xi.matrix.shape).copy(),
    )


def true_rhs(g, xi: AlgebraElement) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != xi.matrix.shape:
        raise ValueError(f"dimension mismatch: {g.shape} vs {xi.matrix.shape}")
    return g @ xi.matrix


def _flow_increment(profile: VelocityProfile, t: float, h: float, method: str) -> np.ndarray:
    if method == "midpoint":
        return h * profile(t + 0.5 * h).matrix
    if method == "magnus4":
        x1 = profile(t + (0.5 - _GAUSS_OFFSET) * h).matrix
        x2 = profile(t + (0.5 + _GAUSS_OFFSET) * h).matrix
        return 0.5 * h * (x1 + x2) + _MAGNUS_BRACKET * h * h * (x1 @ x2 - x2 @ x1)
    raise ValueError(f"unknown propagation method {method!r}")


def propagate_true(
    state: SystemState,
    profile: VelocityProfile,
    t: float,
    h: float,
    desc: GroupDescriptor = SE3,
    method: str = "magnus4",
) -> SystemState:
    """Advance the true state by one exponential step of length ``h``.

    ``method="midpoint"`` uses ``g exp(h xi(t + h/2))``. The default
    ``"magnus4"`` samples ``xi`` at the two Gauss points and adds the
    commutator correction, which is fourth order and still lands exactly in
    the group since the increment lies in the algebra.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    step = desc.exp(_flow_increment(profile, t, h, method))
    return SystemState(state.g @ step, state.b)


def _flow_increments(profile: VelocityProfile, ts: np.ndarray, h: float, method: str) -> np.ndarray:
    if method == "midpoint":
        return h * profile.matrices(ts + 0.5 * h)
    if method == "magnus4":
        x1 = profile.matrices(ts + (0.5 - _GAUSS_OFFSET) * h)
        x2 = profile.matrices(ts + (0.5 + _GAUSS_OFFSET) * h)
        return 0.5 * h * (x1 + x2) + _MAGNUS_BRACKET * h * h * (x1 @ x2 - x2 @ x1)
    raise ValueError(f"unknown propagation method {method!r}")


def true_trajectory(
    g0: np.ndarray,
    profile: VelocityProfile,
    ts: np.ndarray,
    h: float,
    desc: GroupDescriptor = SE3,
    method: str = "magnus4",
) -> tuple[np.ndarray, np.ndarray]:
    """Chain of :func:`propagate_true` steps starting at each time in ``ts``.

    Returns the states at ``ts[0], ts[0] + h, ...`` (one more than ``ts``)
    and the half-step states ``g_k exp(...)`` reached from each ``g_k`` at
    ``ts[k] + h/2``.
    """
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if h <= 0:
        raise ValueError("step h must be positive")
    full = desc.exp_batch(_flow_increments(profile, ts, h, method))
    half = desc.exp_batch(_flow_increments(profile, ts, 0.5 * h, method))
    G = np.empty((len(ts) + 1,) + np.shape(g0))
    G[0] = g0
    for k in range(len(ts)):
        G[k + 1] = G[k] @ full[k]
    return G, G[:-1] @ half


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.0
    seed: int = 0
    enabled: bool = False

    def __post_init__(self):
        if not (self.sigma >= 0.0) or not math.isfinite(self.sigma):
            raise ValueError("noise sigma must be a finite nonnegative number")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("noise seed must fit in an unsigned 64-bit integer")

    @property
    def active(self) -> bool:
        return self.enabled and self.sigma > 0.0


@dataclass(frozen=True)
class NoiseSample:
    """One draw of the three sensor noise channels.

    ``w`` perturbs the state multiplicatively, ``v_noise`` is additive on the
    translation (SE(3) only) and ``z`` is added to the velocity in algebra
    coordinates.
    """

    w: np.ndarray
    v_noise: np.ndarray
    z: np.ndarray


class NoiseStreams:
    """Independent counter-based (Philox) Gaussian streams, one per channel."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        root = np.random.SeedSequence(self.seed)
        self._gens = {
            name: np.random.Generator(np.random.Philox(child))
            for name, child in zip(NOISE_CHANNELS, root.spawn(len(NOISE_CHANNELS)))
        }

    def normal(self, channel: str, sigma: float, size: int) -> np.ndarray:
        return self._gens[channel].normal(0.0, sigma, size)

    def draw(self, desc: GroupDescriptor, noise: NoiseConfig) -> Optional[NoiseSample]:
        if not noise.active:
            return None
        block = self.draw_block(desc, noise, 1)
        return NoiseSample(block.w[0], block.v_noise[0], block.z[0])

    def draw_block(self, desc: GroupDescriptor, noise: NoiseConfig, count: int) -> "NoiseBlock":
        """``count`` consecutive samples per channel, in stream order."""
        s = noise.sigma
        w_dim = 3 if desc.name in ("SE3", "SO3") else desc.d
        v_dim = 3 if desc.name == "SE3" else 0
        return NoiseBlock(
            w=self._gens["w"].normal(0.0, s, (count, w_dim)),
            v_noise=self._gens["v"].normal(0.0, s, (count, v_dim)),
            z=self._gens["z"].normal(0.0, s, (count, desc.d)),
        )


@dataclass(frozen=True)
class NoiseBlock:
    w: np.ndarray
    v_noise: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return len(self.w)


def perturb_states(G: np.ndarray, desc: GroupDescriptor, block: NoiseBlock) -> np.ndarray:
    """Vectorised :func:`perturb_state` over a stack of states."""
    if desc.name == "SE3":
        X = G.copy()
        X[:, :3, :3] = G[:, :3, :3] @ exp_so3_batch(block.w)
        X[:, :3, 3] = G[:, :3, 3] + block.v_noise
        return X
    if desc.name == "SO3":
        return G @ exp_so3_batch(block.w)
    basis = desc.basis
    return G @ desc.exp_batch(np.tensordot(block.w, basis, axes=1))


@dataclass(frozen=True)
class Measurement:
    A_m: np.ndarray
    xi_m: AlgebraElement
    t: float = 0.0


def perturb_state(g: np.ndarray, desc: GroupDescriptor, sample: NoiseSample) -> np.ndarray:
    """Group-consistent noisy copy of ``g``."""
    if desc.name == "SE3":
        X = g.copy()
        X[:3, :3] = g[:3, :3] @ exp_so3(sample.w)
        X[:3, 3] = g[:3, 3] + sample.v_noise
        return X
    if desc.name == "SO3":
        return g @ exp_so3(sample.w)
    return g @ exp_generic(desc.element(sample.w).matrix)


def corrupt(
    state: SystemState,
    xi: AlgebraElement,
    frame: LandmarkFrame,
    desc: GroupDescriptor,
    sample: Optional[NoiseSample],
    t: float = 0.0,
) -> Measurement:
    """Build the measurement for a given (possibly absent) noise draw."""
    if sample is None:
        return Measurement(frame.F @ state.g, xi + state.b, t)
    X_m = perturb_state(state.g, desc, sample)
    return Measurement(frame.F @ X_m, xi + state.b + desc.element(sample.z), t)


def measure(
    state: SystemState,
    xi: AlgebraElement,
    frame: LandmarkFrame,
    noise: NoiseConfig,
    rng: Optional[NoiseStreams] = None,
    desc: GroupDescriptor = SE3,
    t: float = 0.0,
) -> Measurement:
    """Sample ``A_m = F g_m`` and ``xi_m = xi + b + z``.

    With noise disabled (or ``sigma == 0``) the result is exact and ``rng`` is
    not touched.
    """
    sample = None
    if noise.active:
        if rng is None:
            raise ValueError("a NoiseStreams instance is required when noise is enabled")
        sample = rng.draw(desc, noise)
    return corrupt(state, xi, frame, desc, sample, t)
