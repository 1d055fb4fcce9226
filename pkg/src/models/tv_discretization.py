"""
Learned Total-Variation Discretization

The lower-level problem is the saddle-point form of a filtered TV model

    min_{u, q} max_p  1/2 ||A u - f||^2 + lam * sum_l ||q^l||_{1,2} + <D u - F^* q, p>,

where ``p = (p1, p2)`` is the staggered dual field of the forward-difference
gradient and the filter family ``F`` interpolates it onto L grids.

Array layout:
- a dual pair ``p`` is an array of shape (2, H, W): ``p[0]`` is the vertical
  component p1, ``p[1]`` the horizontal component p2;
- L-indexed dual pairs ``q`` have shape (L, 2, H, W);
- ``kernels1`` (L, 2, 3) act on p1 and ``kernels2`` (L, 3, 2) act on p2.

The piggyback primal-dual iteration advances the saddle state and the adjoint
state together; the adjoint yields the gradient of the upper loss
1/2 ||u - g||^2 with respect to every filter tap.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import fft
from scipy.sparse.linalg import LinearOperator, cg

from src.exceptions import (
    ConfigurationError,
    DivergenceError,
    ParameterError,
    ShapeMismatchError,
)
from src.imaging.operators import (
    GRADIENT_NORM_SQUARED,
    DegradationOp,
    apply_degradation_adjoint,
    apply_normal,
    as_image,
    grad_adjoint,
    grad_op,
    initial_estimate,
    kernel_otf,
    tap_correlation,
)

logger = logging.getLogger(__name__)

KERNEL1_SHAPE = (2, 3)
KERNEL2_SHAPE = (3, 2)
ANCHOR_V = (0, 1)
ANCHOR_H = (1, 0)

SYMMETRIES = ("none", "transpose", "rot90")


# ----------------------------------------------------------------------
# Filter family
# ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FilterFamily:
    """
    L pairs of interpolation kernels acting on the dual field.

    The same container carries filter gradients.
    """

    kernels1: np.ndarray
    kernels2: np.ndarray
    symmetry: str = "none"

    def __post_init__(self):
        k1 = np.array(self.kernels1, dtype=np.float64)
        k2 = np.array(self.kernels2, dtype=np.float64)
        if k1.ndim != 3 or k1.shape[1:] != KERNEL1_SHAPE:
            raise ShapeMismatchError(f"kernels1 must have shape (L, 2, 3), got {k1.shape}")
        if k2.ndim != 3 or k2.shape[1:] != KERNEL2_SHAPE:
            raise ShapeMismatchError(f"kernels2 must have shape (L, 3, 2), got {k2.shape}")
        if k1.shape[0] != k2.shape[0] or k1.shape[0] < 1:
            raise ShapeMismatchError(
                f"kernel counts differ or are zero: {k1.shape[0]} and {k2.shape[0]}"
            )
        if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(k2))):
            raise ParameterError("filter taps must be finite")
        if self.symmetry not in SYMMETRIES:
            raise ParameterError(f"unknown symmetry: {self.symmetry}")
        k1.flags.writeable = False
        k2.flags.writeable = False
        object.__setattr__(self, "kernels1", k1)
        object.__setattr__(self, "kernels2", k2)

    @property
    def num_filters(self) -> int:
        return self.kernels1.shape[0]

    def kernel_sums(self) -> np.ndarray:
        """Tap sums of all 2L kernels, ordered (l, component)."""
        return np.stack(
            [self.kernels1.sum(axis=(1, 2)), self.kernels2.sum(axis=(1, 2))], axis=1
        ).reshape(-1)

    @property
    def mu(self) -> float:
        """Mean kernel sum (the shared sum after projection)."""
        return float(self.kernel_sums().mean())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.kernels1.ravel(), self.kernels2.ravel()])

    @classmethod
    def from_flat(cls, values: np.ndarray, num_filters: int, symmetry: str = "none") -> "FilterFamily":
        n1 = num_filters * KERNEL1_SHAPE[0] * KERNEL1_SHAPE[1]
        values = np.asarray(values, dtype=np.float64)
        if values.size != 2 * n1:
            raise ShapeMismatchError(f"expected {2 * n1} taps for L={num_filters}, got {values.size}")
        return cls(
            values[:n1].reshape((num_filters,) + KERNEL1_SHAPE),
            values[n1:].reshape((num_filters,) + KERNEL2_SHAPE),
            symmetry,
        )

    def with_kernels(self, kernels1: np.ndarray, kernels2: np.ndarray) -> "FilterFamily":
        return FilterFamily(kernels1, kernels2, self.symmetry)

    def with_symmetry(self, symmetry: str) -> "FilterFamily":
        return FilterFamily(self.kernels1, self.kernels2, symmetry)


class FilterOperator:
    """Filter family bound to an image grid (spectra computed once)."""

    def __init__(self, fam: FilterFamily, shape: Tuple[int, int]):
        self.fam = fam
        self.shape = tuple(shape)
        self.otf1 = np.stack([kernel_otf(k, ANCHOR_V, self.shape) for k in fam.kernels1])
        self.otf2 = np.stack([kernel_otf(k, ANCHOR_H, self.shape) for k in fam.kernels2])

    def apply(self, p: np.ndarray) -> np.ndarray:
        """``F p`` with shape (L, 2, H, W)."""
        spec = fft.fft2(p)
        z = np.stack([spec[0][np.newaxis] * self.otf1, spec[1][np.newaxis] * self.otf2], axis=1)
        return np.real(fft.ifft2(z))

    def adjoint(self, z: np.ndarray) -> np.ndarray:
        """``F^* z`` with shape (2, H, W)."""
        spec = fft.fft2(z)
        p1 = np.sum(spec[:, 0] * np.conj(self.otf1), axis=0)
        p2 = np.sum(spec[:, 1] * np.conj(self.otf2), axis=0)
        return np.real(fft.ifft2(np.stack([p1, p2])))

    def norm_squared(self) -> float:
        """Exact ``||F||^2``: F^*F is circulant per dual component."""
        power1 = np.sum(np.abs(self.otf1) ** 2, axis=0)
        power2 = np.sum(np.abs(self.otf2) ** 2, axis=0)
        return float(max(power1.max(), power2.max()))


def _check_dual(p: np.ndarray, what: str = "dual pair") -> None:
    if p.ndim != 3 or p.shape[0] != 2:
        raise ShapeMismatchError(f"{what} must have shape (2, H, W), got {p.shape}")


def apply_F(fam: FilterFamily, p: np.ndarray) -> np.ndarray:
    """Apply every filter pair to the dual field; result shape (L, 2, H, W)."""
    _check_dual(p)
    return FilterOperator(fam, p.shape[1:]).apply(p)


def apply_F_adjoint(fam: FilterFamily, z: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`apply_F`; result shape (2, H, W)."""
    if z.ndim != 4 or z.shape[:2] != (fam.num_filters, 2):
        raise ShapeMismatchError(
            f"expected shape ({fam.num_filters}, 2, H, W), got {z.shape}"
        )
    return FilterOperator(fam, z.shape[2:]).adjoint(z)


def operator_norm_F(fam: FilterFamily, shape: Tuple[int, int]) -> float:
    """Operator norm of the filter family on a periodic grid."""
    return float(np.sqrt(FilterOperator(fam, shape).norm_squared()))


# ----------------------------------------------------------------------
# Group soft-thresholding
# ----------------------------------------------------------------------

def _pair_norms(z: np.ndarray) -> np.ndarray:
    return np.sqrt(z[:, 0] ** 2 + z[:, 1] ** 2)


def group_shrink(z: np.ndarray, kappa: float) -> np.ndarray:
    """
    Proximal map of ``kappa * sum_l ||z^l||_{1,2}``.

    Every per-pixel pair ``(z^{l,1}_i, z^{l,2}_i)`` is scaled by
    ``max(0, 1 - kappa / r)``; pairs with r = 0 map to zero.
    """
    if kappa < 0:
        raise ParameterError(f"shrinkage threshold must be >= 0, got {kappa}")
    if kappa == 0:
        return np.array(z, dtype=np.float64, copy=True)
    r = _pair_norms(z)
    scale = np.zeros_like(r)
    np.divide(kappa, r, out=scale, where=r > kappa)
    factor = np.where(r > kappa, 1.0 - scale, 0.0)
    return z * factor[:, np.newaxis]


def group_shrink_jacobian_apply(z: np.ndarray, kappa: float, w: np.ndarray) -> np.ndarray:
    """
    Jacobian of :func:`group_shrink` at ``z`` applied to ``w``.

    On the sphere r = kappa the zero branch is used.
    """
    if kappa < 0:
        raise ParameterError(f"shrinkage threshold must be >= 0, got {kappa}")
    if z.shape != w.shape:
        raise ShapeMismatchError(f"shapes {z.shape} and {w.shape} differ")
    if kappa == 0:
        return np.array(w, dtype=np.float64, copy=True)
    r = _pair_norms(z)
    active = r > kappa
    ratio = np.zeros_like(r)
    np.divide(kappa, r, out=ratio, where=active)
    cubic = np.zeros_like(r)
    np.divide(kappa, r ** 3, out=cubic, where=active)
    inner = np.sum(z * w, axis=1)
    out = (1.0 - ratio)[:, np.newaxis] * w + (cubic * inner)[:, np.newaxis] * z
    return out * active[:, np.newaxis]


# ----------------------------------------------------------------------
# Data proximal map
# ----------------------------------------------------------------------

def _block_mean(spec: np.ndarray, factor: int) -> np.ndarray:
    rows, cols = spec.shape[0] // factor, spec.shape[1] // factor
    return spec.reshape(factor, rows, factor, cols).mean(axis=(0, 2))


def _normal_solve(op: DegradationOp, tau: float, rhs: np.ndarray, method: str) -> np.ndarray:
    """Solve ``(tau A^T A + I) x = rhs``."""
    if tau < 0:
        raise ParameterError(f"prox step must be >= 0, got {tau}")
    if tau == 0:
        return np.array(rhs, dtype=np.float64, copy=True)
    if op.kind == "identity":
        return rhs / (1.0 + tau)
    op.output_shape(rhs.shape)

    if method == "cg":
        shape = rhs.shape

        def matvec(x):
            v = np.asarray(x, dtype=np.float64).reshape(shape)
            return (tau * apply_normal(op, v) + v).ravel()

        system = LinearOperator((rhs.size, rhs.size), matvec=matvec, dtype=np.float64)
        solution, info = cg(system, rhs.ravel(), rtol=1e-13, atol=0.0, maxiter=10 * rhs.size)
        if info != 0:
            logger.warning(f"Data prox CG did not reach tolerance (info={info})")
        return solution.reshape(shape)
    if method != "fft":
        raise ParameterError(f"unknown prox method: {method}")

    otf = op.otf(rhs.shape)
    spec = fft.fft2(rhs)
    if op.kind == "blur":
        return np.real(fft.ifft2(spec / (tau * np.abs(otf) ** 2 + 1.0)))

    # Decimated blur: Woodbury identity with the aliasing-averaged spectrum.
    d = op.factor
    inner = _block_mean(otf * spec, d) / (1.0 + tau * _block_mean(np.abs(otf) ** 2, d))
    correction = tau * np.conj(otf) * np.tile(inner, (d, d))
    return np.real(fft.ifft2(spec - correction))


def prox_data(op: DegradationOp, g: np.ndarray, tau: float, u_bar: np.ndarray,
              method: str = "fft") -> np.ndarray:
    """
    Proximal map of ``u -> 1/2 ||A u - g||^2`` with step ``tau``.

    Solves ``(tau A^T A + I) u = tau A^T g + u_bar`` exactly.

    Args:
        op: Degradation operator
        g: Data-space image
        tau: Step size (>= 0)
        u_bar: Point in the unknown's space
        method: ``"fft"`` (closed form) or ``"cg"`` (normal equations)

    Returns:
        Proximal point
    """
    if op.output_shape(u_bar.shape) != g.shape:
        raise ShapeMismatchError(
            f"data of shape {g.shape} does not match {op.describe()} applied to {u_bar.shape}"
        )
    if tau == 0:
        return np.array(u_bar, dtype=np.float64, copy=True)
    return _normal_solve(op, tau, tau * apply_degradation_adjoint(op, g) + u_bar, method)


def prox_data_jacobian_apply(op: DegradationOp, tau: float, w: np.ndarray,
                             method: str = "fft") -> np.ndarray:
    """Apply ``(tau A^T A + I)^{-1}``, the constant Jacobian of :func:`prox_data`."""
    return _normal_solve(op, tau, w, method)


# ----------------------------------------------------------------------
# Projections
# ----------------------------------------------------------------------

def project_to_sum(taps: np.ndarray, mu: float) -> np.ndarray:
    """Euclidean projection of a kernel onto ``{k : sum(k) = mu}``."""
    taps = np.asarray(taps, dtype=np.float64)
    return taps + (mu - taps.sum()) / taps.size


def project_sum_mu(fam: FilterFamily) -> FilterFamily:
    """
    Projection onto families whose 2L kernel sums share one value.

    The shared value is the mean of the current kernel sums.
    """
    sums1 = fam.kernels1.sum(axis=(1, 2))
    sums2 = fam.kernels2.sum(axis=(1, 2))
    mu = float(np.concatenate([sums1, sums2]).mean())
    n1 = KERNEL1_SHAPE[0] * KERNEL1_SHAPE[1]
    n2 = KERNEL2_SHAPE[0] * KERNEL2_SHAPE[1]
    k1 = fam.kernels1 + ((mu - sums1) / n1)[:, np.newaxis, np.newaxis]
    k2 = fam.kernels2 + ((mu - sums2) / n2)[:, np.newaxis, np.newaxis]
    return fam.with_kernels(k1, k2)


def _transpose_pairing(num_filters: int) -> np.ndarray:
    perm = np.arange(num_filters)
    start = num_filters % 2
    for l in range(start, num_filters - 1, 2):
        perm[l], perm[l + 1] = l + 1, l
    return perm


def _rotation_cycle(num_filters: int) -> np.ndarray:
    l = np.arange(num_filters)
    return 4 * (l // 4) + (l + 1) % 4


def _act(k1: np.ndarray, k2: np.ndarray, symmetry: str) -> Tuple[np.ndarray, np.ndarray]:
    """One generator of the symmetry group applied to the kernel stacks."""
    num_filters = k1.shape[0]
    new1 = np.empty_like(k1)
    new2 = np.empty_like(k2)
    if symmetry == "transpose":
        perm = _transpose_pairing(num_filters)
        for l in range(num_filters):
            new1[perm[l]] = k2[l].T
            new2[perm[l]] = k1[l].T
    else:
        perm = _rotation_cycle(num_filters)
        for l in range(num_filters):
            new1[perm[l]] = np.rot90(k2[l], -1)
            new2[perm[l]] = np.rot90(k1[l], -1)
    return new1, new2


GROUP_ORDER = {"none": 1, "transpose": 2, "rot90": 4}


def check_symmetry(num_filters: int, symmetry: str) -> None:
    """Reject symmetry groups incompatible with the filter count."""
    if symmetry not in SYMMETRIES:
        raise ConfigurationError(f"unknown symmetry: {symmetry}")
    if symmetry == "rot90" and num_filters % 4 != 0:
        raise ConfigurationError(
            f"rot90 symmetry needs L divisible by 4, got L={num_filters}"
        )


def group_action(fam: FilterFamily) -> FilterFamily:
    """The generator of the family's symmetry group (identity for ``"none"``)."""
    check_symmetry(fam.num_filters, fam.symmetry)
    if fam.symmetry == "none":
        return fam
    return fam.with_kernels(*_act(fam.kernels1, fam.kernels2, fam.symmetry))


def project_symmetry(fam: FilterFamily) -> FilterFamily:
    """Orthogonal projection onto group-invariant families (orbit average)."""
    check_symmetry(fam.num_filters, fam.symmetry)
    if fam.symmetry == "none":
        return fam
    acc1 = fam.kernels1.copy()
    acc2 = fam.kernels2.copy()
    cur1, cur2 = fam.kernels1, fam.kernels2
    order = GROUP_ORDER[fam.symmetry]
    for _ in range(order - 1):
        cur1, cur2 = _act(cur1, cur2, fam.symmetry)
        acc1 += cur1
        acc2 += cur2
    return fam.with_kernels(acc1 / order, acc2 / order)


def project_family(fam: FilterFamily) -> FilterFamily:
    """Sum constraint first, then symmetry averaging."""
    return project_symmetry(project_sum_mu(fam))


# ----------------------------------------------------------------------
# Presets and initialization
# ----------------------------------------------------------------------

def _family_from_offsets(spec: List[Dict[str, List[Tuple[int, int, float]]]]) -> FilterFamily:
    """
    Build a family from reading offsets ``(dr, dc, weight)``.

    A reading offset (dr, dc) makes the filter read the dual component at
    ``[i + dr, j + dc]``.
    """
    num_filters = len(spec)
    k1 = np.zeros((num_filters,) + KERNEL1_SHAPE)
    k2 = np.zeros((num_filters,) + KERNEL2_SHAPE)
    for l, entry in enumerate(spec):
        for dr, dc, weight in entry.get("p1", []):
            k1[l, ANCHOR_V[0] - dr, ANCHOR_V[1] - dc] += weight
        for dr, dc, weight in entry.get("p2", []):
            k2[l, ANCHOR_H[0] - dr, ANCHOR_H[1] - dc] += weight
    return FilterFamily(k1, k2)


_CENTRE = {"p1": [(-1, 0, 0.5), (0, 0, 0.5)], "p2": [(0, -1, 0.5), (0, 0, 0.5)]}
_VERTICAL_EDGES = {
    "p1": [(0, 0, 1.0)],
    "p2": [(0, -1, 0.25), (0, 0, 0.25), (1, -1, 0.25), (1, 0, 0.25)],
}
_HORIZONTAL_EDGES = {
    "p1": [(-1, 0, 0.25), (-1, 1, 0.25), (0, 0, 0.25), (0, 1, 0.25)],
    "p2": [(0, 0, 1.0)],
}
_VERTICES = {"p1": [(0, 0, 0.5), (0, 1, 0.5)], "p2": [(0, 0, 0.5), (1, 0, 0.5)]}

PRESETS = {
    "fd": [{"p1": [(0, 0, 1.0)], "p2": [(0, 0, 1.0)]}],
    "cd3": [_CENTRE, _VERTICAL_EDGES, _HORIZONTAL_EDGES],
    "cd4": [_CENTRE, _VERTICAL_EDGES, _HORIZONTAL_EDGES, _VERTICES],
}


def preset_family(name: str) -> FilterFamily:
    """
    Handcrafted families: forward differences (``fd``), interpolation to
    pixel centres and both edge grids (``cd3``) and additionally to the
    vertex grid (``cd4``).
    """
    if name not in PRESETS:
        raise ParameterError(f"unknown preset: {name} (known: {', '.join(PRESETS)})")
    return _family_from_offsets(PRESETS[name])


def init_filter_family(num_filters: int, symmetry: str = "none", seed: int = 42,
                       noise: float = 1e-3) -> FilterFamily:
    """
    Forward-difference kernels replicated L times, perturbed and projected.

    Args:
        num_filters: Number of filter pairs L
        symmetry: Symmetry group of the family
        seed: Random seed of the perturbation
        noise: Standard deviation of the perturbation

    Returns:
        Feasible family
    """
    if num_filters < 1:
        raise ParameterError(f"need at least one filter pair, got {num_filters}")
    check_symmetry(num_filters, symmetry)
    fd = preset_family("fd")
    rng = np.random.default_rng(seed)
    k1 = np.repeat(fd.kernels1, num_filters, axis=0)
    k2 = np.repeat(fd.kernels2, num_filters, axis=0)
    k1 = k1 + noise * rng.standard_normal(k1.shape)
    k2 = k2 + noise * rng.standard_normal(k2.shape)
    return project_family(FilterFamily(k1, k2, symmetry))


# ----------------------------------------------------------------------
# Piggyback primal-dual
# ----------------------------------------------------------------------

@dataclass
class SaddleState:
    """Primal image ``u``, filtered dual ``q`` (L, 2, H, W) and dual ``p`` (2, H, W)."""

    u: np.ndarray
    q: np.ndarray
    p: np.ndarray

    def copy(self) -> "SaddleState":
        return SaddleState(self.u.copy(), self.q.copy(), self.p.copy())


@dataclass
class AdjointState:
    """Adjoint states mirroring :class:`SaddleState`."""

    U: np.ndarray
    Q: np.ndarray
    P: np.ndarray

    def copy(self) -> "AdjointState":
        return AdjointState(self.U.copy(), self.Q.copy(), self.P.copy())

    @classmethod
    def zeros_like(cls, saddle: SaddleState) -> "AdjointState":
        return cls(np.zeros_like(saddle.u), np.zeros_like(saddle.q), np.zeros_like(saddle.p))


def initial_states(op: DegradationOp, f: np.ndarray,
                   num_filters: int) -> Tuple[SaddleState, AdjointState]:
    """Cold start: data-based primal image, zero duals, zero adjoint."""
    u = initial_estimate(op, f)
    shape = u.shape
    saddle = SaddleState(u, np.zeros((num_filters, 2) + shape), np.zeros((2,) + shape))
    return saddle, AdjointState.zeros_like(saddle)


@dataclass(frozen=True)
class PiggybackConfig:
    """
    Settings of the piggyback primal-dual iteration.

    Unset step sizes are filled by :meth:`resolve`.
    """

    sigma_p: Optional[float] = None
    tau_u: Optional[float] = None
    tau_q: Optional[float] = None
    theta: float = 1.0
    iterations: int = 2000
    lam: float = 1.0
    safety: float = 0.99
    check_every: int = 100
    prox_method: str = "fft"

    def __post_init__(self):
        for name in ("sigma_p", "tau_u", "tau_q"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if not 0 <= self.theta <= 1:
            raise ParameterError(f"theta must lie in [0, 1], got {self.theta}")
        if self.iterations < 0:
            raise ParameterError(f"iterations must be >= 0, got {self.iterations}")
        if self.lam <= 0:
            raise ParameterError(f"lam must be positive, got {self.lam}")
        if not 0 < self.safety <= 1:
            raise ParameterError(f"safety must lie in (0, 1], got {self.safety}")
        if self.check_every < 1:
            raise ParameterError(f"check_every must be positive, got {self.check_every}")
        if self.prox_method not in ("fft", "cg"):
            raise ParameterError(f"unknown prox method: {self.prox_method}")

    @property
    def is_resolved(self) -> bool:
        return None not in (self.sigma_p, self.tau_u, self.tau_q)

    def resolve(self, fam: FilterFamily, shape: Tuple[int, int]) -> "PiggybackConfig":
        """
        Fill unset step sizes so that
        ``sigma_p * (tau_u * ||D||^2 + tau_q * ||F||^2) <= safety``.
        """
        sigma_p = self.sigma_p if self.sigma_p is not None else 0.25
        tau_u = self.tau_u
        if tau_u is None:
            tau_u = self.safety / (2.0 * sigma_p * GRADIENT_NORM_SQUARED)
        tau_q = self.tau_q
        if tau_q is None:
            norm_sq = FilterOperator(fam, shape).norm_squared()
            if norm_sq == 0.0:
                raise ConfigurationError("filter family has zero operator norm")
            tau_q = self.safety / (2.0 * sigma_p * norm_sq)
        return replace(self, sigma_p=sigma_p, tau_u=tau_u, tau_q=tau_q)


def _check_finite(step: int, cfg: PiggybackConfig, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DivergenceError(
                f"piggyback iterate became non-finite by iteration {step} "
                f"(sigma_p={cfg.sigma_p:.3e}, tau_u={cfg.tau_u:.3e}, tau_q={cfg.tau_q:.3e})"
            )


def piggyback_pd(fam: FilterFamily, op: DegradationOp, f: np.ndarray, g: Optional[np.ndarray],
                 cfg: PiggybackConfig,
                 init: Optional[Tuple[SaddleState, AdjointState]] = None,
                 track_adjoint: bool = True) -> Tuple[SaddleState, AdjointState]:
    """
    Run the coupled saddle/adjoint iteration for ``cfg.iterations`` steps.

    Args:
        fam: Filter family (read-only)
        op: Degradation operator
        f: Degraded data
        g: Ground truth; ``None`` sets the injected loss gradient to zero
        cfg: Iteration settings (unset step sizes are resolved)
        init: Warm-start states; cold start when omitted
        track_adjoint: Skip the adjoint recursion when False

    Returns:
        Tuple of (saddle state, adjoint state) after the last iteration
    """
    if init is None:
        init = initial_states(op, f, fam.num_filters)
    saddle, adjoint = init
    u, q, p = saddle.u.copy(), saddle.q.copy(), saddle.p.copy()
    U, Q, P = adjoint.U.copy(), adjoint.Q.copy(), adjoint.P.copy()

    if op.output_shape(u.shape) != f.shape:
        raise ShapeMismatchError(
            f"data of shape {f.shape} does not match {op.describe()} applied to {u.shape}"
        )
    if q.shape != (fam.num_filters, 2) + u.shape or p.shape != (2,) + u.shape:
        raise ShapeMismatchError("saddle state shapes do not match the image and filter count")
    if g is not None and g.shape != u.shape:
        raise ShapeMismatchError(f"ground truth shape {g.shape} does not match {u.shape}")

    if not cfg.is_resolved:
        cfg = cfg.resolve(fam, u.shape)
    filters = FilterOperator(fam, u.shape)
    sigma, tau_u, tau_q, theta = cfg.sigma_p, cfg.tau_u, cfg.tau_q, cfg.theta
    kappa = tau_q * cfg.lam
    data_rhs = tau_u * apply_degradation_adjoint(op, f)

    for k in range(cfg.iterations):
        p_new = p + sigma * (grad_op(u).stack() - filters.adjoint(q))
        p_bar = p_new + theta * (p_new - p)
        u_bar = u - tau_u * grad_adjoint(p_bar)
        q_bar = q + tau_q * filters.apply(p_bar)

        if track_adjoint:
            P_new = P + sigma * (grad_op(U).stack() - filters.adjoint(Q))
            P_bar = P_new + theta * (P_new - P)
            U_bar = U - tau_u * grad_adjoint(P_bar)
            if g is not None:
                U_bar -= tau_u * (u - g)
            U = prox_data_jacobian_apply(op, tau_u, U_bar, cfg.prox_method)
            Q = group_shrink_jacobian_apply(q_bar, kappa, Q + tau_q * filters.apply(P_bar))
            P = P_new

        u = _normal_solve(op, tau_u, data_rhs + u_bar, cfg.prox_method)
        q = group_shrink(q_bar, kappa)
        p = p_new

        if (k + 1) % cfg.check_every == 0:
            _check_finite(k + 1, cfg, u, q, p, U, Q, P)

    _check_finite(cfg.iterations, cfg, u, q, p, U, Q, P)
    return SaddleState(u, q, p), AdjointState(U, Q, P)


def filter_grad(saddle: SaddleState, adjoint: AdjointState, symmetry: str = "none") -> FilterFamily:
    """
    Gradient of the upper loss in the filter taps, ``-(Q (x) p + q (x) P)``.

    Args:
        saddle: Final saddle state of a piggyback run
        adjoint: Matching adjoint state
        symmetry: Symmetry tag carried by the returned container

    Returns:
        Family-shaped gradient
    """
    q, p, Q, P = saddle.q, saddle.p, adjoint.Q, adjoint.P
    if q.shape != Q.shape or p.shape != P.shape or q.shape[1:] != p.shape:
        raise ShapeMismatchError("saddle and adjoint states do not match")
    num_filters = q.shape[0]
    g1 = np.empty((num_filters,) + KERNEL1_SHAPE)
    g2 = np.empty((num_filters,) + KERNEL2_SHAPE)
    for l in range(num_filters):
        g1[l] = -(tap_correlation(p[0], Q[l, 0], KERNEL1_SHAPE, ANCHOR_V)
                  + tap_correlation(P[0], q[l, 0], KERNEL1_SHAPE, ANCHOR_V))
        g2[l] = -(tap_correlation(p[1], Q[l, 1], KERNEL2_SHAPE, ANCHOR_H)
                  + tap_correlation(P[1], q[l, 1], KERNEL2_SHAPE, ANCHOR_H))
    return FilterFamily(g1, g2, symmetry)


def restore_tv(f: np.ndarray, op: DegradationOp, fam: FilterFamily,
               cfg: Optional[PiggybackConfig] = None) -> np.ndarray:
    """Restore an image with a filter family (saddle iteration only)."""
    f = as_image(f, "degraded image")
    cfg = cfg or PiggybackConfig()
    saddle, _ = piggyback_pd(fam, op, f, None, cfg, track_adjoint=False)
    return saddle.u
