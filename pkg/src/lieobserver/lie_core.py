"""Small dense matrix Lie group utilities.

Everything here works on plain ``numpy`` arrays. Groups are described by a
:class:`GroupDescriptor` holding a Frobenius-orthonormal basis of the Lie
algebra, so projection onto the algebra is a basis expansion and works the
same way for SO(3), SE(3) and user supplied groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ORTHONORMAL_TOL = 1e-12
SKEW_TOL = 1e-9
SMALL_ANGLE = 1e-4
SERIES_TOL = 1e-15


def _as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {A.shape}")
    return A


def frob_inner(A, B) -> float:
    """Trace inner product ``trace(A.T @ B)``."""
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return float(np.einsum("ij,ij->", A, B))


def frob_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    return float(math.sqrt(np.einsum("ij,ij->", A, A)))


def hat3(x) -> np.ndarray:
    """Skew matrix with ``hat3(x) @ y == np.cross(x, y)``."""
    x0, x1, x2 = np.asarray(x, dtype=float).reshape(3).tolist()
    return np.array([[0.0, -x2, x1], [x2, 0.0, -x0], [-x1, x0, 0.0]])


def vee3(M) -> np.ndarray:
    M = _as_matrix(M, "M")
    if M.shape != (3, 3):
        raise ValueError(f"vee3 expects a 3x3 matrix, got {M.shape}")
    if np.max(np.abs(M + M.T)) > SKEW_TOL:
        raise ValueError("vee3 input is not skew-symmetric")
    return np.array([M[2, 1], M[0, 2], M[1, 0]])


def hat_se3(omega, v) -> np.ndarray:
    w0, w1, w2 = np.asarray(omega, dtype=float).reshape(3).tolist()
    v0, v1, v2 = np.asarray(v, dtype=float).reshape(3).tolist()
    return np.array(
        [[0.0, -w2, w1, v0], [w2, 0.0, -w0, v1], [-w1, w0, 0.0, v2], [0.0, 0.0, 0.0, 0.0]]
    )


def vee_se3(M) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`hat_se3`; returns ``(omega, v)``."""
    M = _as_matrix(M, "M")
    if M.shape != (4, 4):
        raise ValueError(f"vee_se3 expects a 4x4 matrix, got {M.shape}")
    if np.max(np.abs(M[3, :])) > SKEW_TOL:
        raise ValueError("vee_se3 input has a nonzero bottom row")
    return vee3(M[:3, :3]), M[:3, 3].copy()


def _so3_coeffs(theta: float) -> tuple[float, float]:
    # sin(t)/t and (1 - cos(t))/t^2
    if theta < SMALL_ANGLE:
        t2 = theta * theta
        return 1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    return math.sin(theta) / theta, (1.0 - math.cos(theta)) / (theta * theta)


def _rotation_entries(w0: float, w1: float, w2: float) -> tuple[list, float, float]:
    # Rodrigues with K^2 = w w^T - theta^2 I, all in scalar arithmetic
    theta2 = w0 * w0 + w1 * w1 + w2 * w2
    theta = math.sqrt(theta2)
    a, b = _so3_coeffs(theta)
    d = 1.0 - b * theta2
    rows = [
        [d + b * w0 * w0, b * w0 * w1 - a * w2, b * w0 * w2 + a * w1],
        [b * w1 * w0 + a * w2, d + b * w1 * w1, b * w1 * w2 - a * w0],
        [b * w2 * w0 - a * w1, b * w2 * w1 + a * w0, d + b * w2 * w2],
    ]
    return rows, theta, b


def exp_so3(omega) -> np.ndarray:
    """Rodrigues formula for the rotation ``exp(hat3(omega))``."""
    w0, w1, w2 = np.asarray(omega, dtype=float).reshape(3).tolist()
    rows, _, _ = _rotation_entries(w0, w1, w2)
    return np.array(rows)


def exp_se3(xi) -> np.ndarray:
    """Closed-form exponential of a 4x4 ``se(3)`` matrix.

    ``xi`` may be an :class:`AlgebraElement` or its matrix. The translation
    block is ``J(omega) @ v`` with ``J`` the left Jacobian of SO(3).
    """
    M = xi.matrix if isinstance(xi, AlgebraElement) else _as_matrix(xi, "xi")
    (_, m01, m02, v0), (m10, _, m12, v1), (m20, m21, _, v2) = M[:3].tolist()
    w0, w1, w2 = 0.5 * (m21 - m12), 0.5 * (m02 - m20), 0.5 * (m10 - m01)
    rows, theta, b = _rotation_entries(w0, w1, w2)
    theta2 = theta * theta
    if theta < SMALL_ANGLE:
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        c = (theta - math.sin(theta)) / (theta2 * theta)
    # J v = v + b (w x v) + c (w (w.v) - theta^2 v)
    c0, c1, c2 = w1 * v2 - w2 * v1, w2 * v0 - w0 * v2, w0 * v1 - w1 * v0
    wv = w0 * v0 + w1 * v1 + w2 * v2
    s = 1.0 - c * theta2
    rows[0].append(s * v0 + b * c0 + c * w0 * wv)
    rows[1].append(s * v1 + b * c1 + c * w1 * wv)
    rows[2].append(s * v2 + b * c2 + c * w2 * wv)
    rows.append([0.0, 0.0, 0.0, 1.0])
    return np.array(rows)


def exp_generic(M) -> np.ndarray:
    """Matrix exponential by scaling and squaring a truncated Taylor series."""
    M = _as_matrix(M, "M")
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("exp_generic expects a square matrix")
    norm = float(np.max(np.sum(np.abs(M), axis=0))) if n else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    X = M / (2.0**squarings)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 200):
        term = term @ X / k
        result = result + term
        if np.max(np.abs(term)) <= SERIES_TOL * max(1.0, float(np.max(np.abs(result)))):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def _batch_coeffs(theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    small = theta < SMALL_ANGLE
    t2 = theta * theta
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0, (safe - np.sin(safe)) / safe**3)
    return a, b, c


def _batch_rotation(w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    theta = np.sqrt(np.einsum("ki,ki->k", w, w))
    a, b, c = _batch_coeffs(theta)
    K = np.zeros((len(w), 3, 3))
    K[:, 0, 1], K[:, 0, 2], K[:, 1, 2] = -w[:, 2], w[:, 1], -w[:, 0]
    K[:, 1, 0], K[:, 2, 0], K[:, 2, 1] = w[:, 2], -w[:, 1], w[:, 0]
    K2 = K @ K
    R = np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2
    return R, K, K2, np.stack([b, c])


def exp_so3_batch(omegas) -> np.ndarray:
    """:func:`exp_so3` for a stack of rotation vectors of shape ``(N, 3)``."""
    R, _, _, _ = _batch_rotation(np.asarray(omegas, dtype=float).reshape(-1, 3))
    return R


def exp_se3_batch(M) -> np.ndarray:
    """:func:`exp_se3` for a stack of ``se(3)`` matrices of shape ``(N, 4, 4)``."""
    M = np.asarray(M, dtype=float).reshape(-1, 4, 4)
    S = 0.5 * (M[:, :3, :3] - np.swapaxes(M[:, :3, :3], 1, 2))
    w = np.stack([S[:, 2, 1], S[:, 0, 2], S[:, 1, 0]], axis=1)
    R, K, K2, (b, c) = _batch_rotation(w)
    v = M[:, :3, 3]
    out = np.zeros((len(M), 4, 4))
    out[:, :3, :3] = R
    out[:, :3, 3] = v + b[:, None] * np.einsum("kij,kj->ki", K, v) + c[:, None] * np.einsum("kij,kj->ki", K2, v)
    out[:, 3, 3] = 1.0
    return out


def exp_generic_batch(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.stack([exp_generic(m) for m in M]) if len(M) else np.zeros_like(M)


def singular_value_extremes(g) -> tuple[float, float]:
    """Smallest and largest singular value, from the eigenvalues of ``g.T @ g``."""
    g = _as_matrix(g, "g")
    eig = np.linalg.eigvalsh(g.T @ g)
    eig = np.clip(eig, 0.0, None)
    return float(math.sqrt(eig[0])), float(math.sqrt(eig[-1]))


def singular_value_extremes_batch(G) -> tuple[np.ndarray, np.ndarray]:
    G = np.asarray(G, dtype=float)
    eig = np.clip(np.linalg.eigvalsh(np.swapaxes(G, 1, 2) @ G), 0.0, None)
    return np.sqrt(eig[:, 0]), np.sqrt(eig[:, -1])


@dataclass(frozen=True)
class AlgebraElement:
    """An element of a Lie algebra, kept in both coordinate and matrix form."""

    coords: np.ndarray
    matrix: np.ndarray

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        return AlgebraElement(self.coords + other.coords, self.matrix + other.matrix)

    def __sub__(self, other: "AlgebraElement") -> "AlgebraElement":
        return AlgebraElement(self.coords - other.coords, self.matrix - other.matrix)

    def __mul__(self, scalar: float) -> "AlgebraElement":
        return AlgebraElement(self.coords * scalar, self.matrix * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "AlgebraElement":
        return AlgebraElement(-self.coords, -self.matrix)


@dataclass(frozen=True)
class GroupDescriptor:
    """A matrix Lie group ``G`` in ``R^{n x n}`` with an orthonormal algebra basis.

    ``exp`` maps algebra matrices to the group. ``residual`` measures how far a
    matrix is from the group; it is ``None`` when the group has no cheap
    membership test, in which case :func:`membership_residual` reports 0 and
    marks the value as not checkable.
    """

    name: str
    basis: np.ndarray
    exp: Callable[[np.ndarray], np.ndarray] = field(default=exp_generic, repr=False, compare=False)
    residual: Optional[Callable[[np.ndarray], float]] = field(default=None, repr=False, compare=False)
    exp_batch: Callable[[np.ndarray], np.ndarray] = field(default=exp_generic_batch, repr=False, compare=False)
    residual_batch: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False, compare=False)
    _flat: np.ndarray = field(init=False, repr=False, compare=False)
    _projector: np.ndarray = field(init=False, repr=False, compare=False)
    _n: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim != 3 or basis.shape[1] != basis.shape[2]:
            raise ValueError(f"basis must have shape (d, n, n), got {basis.shape}")
        flat = basis.reshape(basis.shape[0], -1)
        gram = flat @ flat.T
        if np.max(np.abs(gram - np.eye(basis.shape[0]))) > ORTHONORMAL_TOL:
            raise ValueError("algebra basis is not Frobenius-orthonormal")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_projector", flat.T @ flat)
        object.__setattr__(self, "_n", basis.shape[1])

    @property
    def n(self) -> int:
        return self._n

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    def element(self, coords) -> AlgebraElement:
        coords = np.asarray(coords, dtype=float).reshape(self.d)
        return AlgebraElement(coords.copy(), (coords @ self._flat).reshape(self.n, self.n))

    def coordinates(self, M) -> np.ndarray:
        M = np.asarray(M, dtype=float)
        if M.shape != (self.n, self.n):
            raise ValueError(f"dimension mismatch: expected {(self.n, self.n)}, got {M.shape}")
        return self._flat @ M.reshape(-1)

    def project(self, M) -> AlgebraElement:
        return self.element(self.coordinates(M))

    def project_batch(self, M: np.ndarray) -> np.ndarray:
        """Project a stack ``(N, n, n)`` of matrices, returning matrices."""
        M = np.asarray(M, dtype=float)
        return (M.reshape(len(M), -1) @ self._projector).reshape(M.shape)

    def project_matrix(self, M: np.ndarray) -> np.ndarray:
        """Matrix form of :meth:`project`, without building coordinates."""
        return (self._projector @ M.reshape(-1)).reshape(self._n, self._n)

    def zero(self) -> AlgebraElement:
        return self.element(np.zeros(self.d))


def proj_algebra(desc: GroupDescriptor, M) -> AlgebraElement:
    """Orthogonal projection of ``M`` onto the Lie algebra of ``desc``."""
    return desc.project(M)


def _det3(R: np.ndarray) -> float:
    (a, b, c), (d, e, f), (g, h, i) = R.tolist()
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


def _so3_residual(R: np.ndarray) -> float:
    return frob_norm(R.T @ R - np.eye(3)) + abs(_det3(R) - 1.0)


def _se3_residual(g: np.ndarray) -> float:
    bottom = g[3, :] - np.array([0.0, 0.0, 0.0, 1.0])
    return _so3_residual(g[:3, :3]) + float(np.linalg.norm(bottom))


def membership_residual(desc: GroupDescriptor, g) -> tuple[float, bool]:
    """Distance-like residual of ``g`` from the group and whether it was checkable."""
    g = _as_matrix(g, "g")
    if g.shape != (desc.n, desc.n):
        raise ValueError(f"dimension mismatch: expected {(desc.n, desc.n)}, got {g.shape}")
    if desc.residual is None:
        return 0.0, False
    return float(desc.residual(g)), True


def _so3_residual_batch(R: np.ndarray) -> np.ndarray:
    gram = np.swapaxes(R, 1, 2) @ R - np.eye(3)
    return np.sqrt(np.einsum("kij,kij->k", gram, gram)) + np.abs(np.linalg.det(R) - 1.0)


def _se3_residual_batch(G: np.ndarray) -> np.ndarray:
    bottom = G[:, 3, :] - np.array([0.0, 0.0, 0.0, 1.0])
    return _so3_residual_batch(G[:, :3, :3]) + np.sqrt(np.einsum("ki,ki->k", bottom, bottom))


def membership_residual_batch(desc: GroupDescriptor, G) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if desc.residual_batch is not None:
        return desc.residual_batch(G)
    if desc.residual is not None:
        return np.array([desc.residual(g) for g in G])
    return np.zeros(len(G))


def _so3_basis() -> np.ndarray:
    return np.stack([hat3(e) / math.sqrt(2.0) for e in np.eye(3)])


def _se3_basis() -> np.ndarray:
    basis = np.zeros((6, 4, 4))
    for i, e in enumerate(np.eye(3)):
        basis[i, :3, :3] = hat3(e) / math.sqrt(2.0)
        basis[3 + i, i, 3] = 1.0
    return basis


def so3_descriptor() -> GroupDescriptor:
    return GroupDescriptor(
        "SO3",
        _so3_basis(),
        exp=lambda M: exp_so3(vee3(0.5 * (M - M.T))),
        residual=_so3_residual,
        exp_batch=lambda M: exp_so3_batch(np.stack([M[:, 2, 1] - M[:, 1, 2], M[:, 0, 2] - M[:, 2, 0], M[:, 1, 0] - M[:, 0, 1]], axis=1) * 0.5),
        residual_batch=_so3_residual_batch,
    )


def se3_descriptor() -> GroupDescriptor:
    return GroupDescriptor(
        "SE3",
        _se3_basis(),
        exp=exp_se3,
        residual=_se3_residual,
        exp_batch=exp_se3_batch,
        residual_batch=_se3_residual_batch,
    )


def generic_descriptor(basis, name: str = "generic", orthonormalize: bool = False) -> GroupDescriptor:
    """Descriptor for a user supplied algebra basis.

    With ``orthonormalize=True`` the basis is first passed through a QR
    factorisation of its flattened matrices, so any linearly independent
    spanning set is accepted.
    """
    basis = np.asarray(basis, dtype=float)
    if orthonormalize:
        d, n, _ = basis.shape
        q, r = np.linalg.qr(basis.reshape(d, -1).T)
        if np.min(np.abs(np.diag(r))) < 1e-12:
            raise ValueError("basis matrices are linearly dependent")
        basis = q.T.reshape(d, n, n)
    return GroupDescriptor(name, basis)


SO3 = so3_descriptor()
SE3 = se3_descriptor()


def descriptor_by_name(name: str) -> GroupDescriptor:
    try:
        return {"SO3": SO3, "SE3": SE3}[name.upper()]
    except KeyError:
        raise ValueError(f"unknown group {name!r}; expected 'SO3' or 'SE3'") from None


def se3_from_parts(R, p) -> np.ndarray:
    out = np.eye(4)
    out[:3, :3] = np.asarray(R, dtype=float)
    out[:3, 3] = np.asarray(p, dtype=float).reshape(3)
    return out
