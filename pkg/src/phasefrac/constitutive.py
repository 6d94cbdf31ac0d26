"""Small-strain plane-strain constitutive models with tension/compression
energy splits.

Tensors are stored by their three independent components, so every function
here works equally on scalars and on arrays of per-element values. Units are
kN and mm throughout.

Two flavours of stress exist:

* the exact split stresses returned by :func:`split_energy`, which are the
  derivatives of the active and passive energies, and
* the *regularized* stress of :func:`regularized_stress`, where every
  positive/negative part is replaced by the smooth sonic-point functions of
  :func:`regularized_eigen`. This is the stress the Newton solver works with,
  and :func:`stress_tangent` is its exact derivative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

SQRT2 = np.sqrt(2.0)
_I = np.array([1.0, 1.0, 0.0])  # identity in Mandel form
_P_DEV = np.eye(3) - 0.5 * np.outer(_I, _I)


class Strain2(NamedTuple):
    """Symmetric 2x2 small strain (``xy`` is the tensor component, not gamma)."""

    xx: np.ndarray | float
    yy: np.ndarray | float
    xy: np.ndarray | float

    @classmethod
    def from_matrix(cls, a) -> "Strain2":
        a = np.asarray(a, dtype=float)
        return cls(a[..., 0, 0], a[..., 1, 1], 0.5 * (a[..., 0, 1] + a[..., 1, 0]))

    @classmethod
    def from_mandel(cls, v) -> "Strain2":
        v = np.asarray(v, dtype=float)
        return cls(v[..., 0], v[..., 1], v[..., 2] / SQRT2)

    def matrix(self) -> np.ndarray:
        xx, yy, xy = np.broadcast_arrays(*map(np.asarray, self))
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2).astype(float)

    def mandel(self) -> np.ndarray:
        xx, yy, xy = np.broadcast_arrays(*map(np.asarray, self))
        return np.stack([xx, yy, SQRT2 * xy], axis=-1).astype(float)

    @property
    def trace(self):
        return self.xx + self.yy

    def __add__(self, other):
        return type(self)(self.xx + other.xx, self.yy + other.yy, self.xy + other.xy)

    def scale(self, c):
        return type(self)(c * self.xx, c * self.yy, c * self.xy)


class Stress2(Strain2):
    """Symmetric 2x2 Cauchy stress in kN/mm^2."""

    __slots__ = ()


class EigenPair2(NamedTuple):
    values: np.ndarray  # (..., 2), descending
    vectors: np.ndarray  # (..., 2, 2), eigenvectors as columns


class SplitModel(str, enum.Enum):
    ISOTROPIC = "isotropic"
    SPECTRAL = "spectral"
    VD = "vd"
    IMPROVED_VD = "improved_vd"

    @classmethod
    def parse(cls, name) -> "SplitModel":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        key = {"ivd": "improved_vd", "improved": "improved_vd", "miehe": "spectral",
               "amor": "vd", "iso": "isotropic"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown split model {name!r}; choose from "
                             f"{[m.value for m in cls]} (or 'ivd')") from None


@dataclass(frozen=True)
class MaterialParams:
    """Lamé constants, fracture parameters and the two regularizations.

    ``k_l`` keeps the degraded stiffness nonsingular and ``alpha`` smooths the
    positive/negative parts used by Newton's method.
    """

    lam: float
    mu: float
    g_c: float
    l: float
    k_l: float = 1e-10
    alpha: float = 1e-3
    m: int = 2

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lam > -self.mu:
            raise ValueError(f"lambda must exceed -mu, got lam={self.lam}, mu={self.mu}")
        if not self.g_c > 0:
            raise ValueError(f"g_c must be positive, got {self.g_c}")
        if not self.l > 0:
            raise ValueError(f"l must be positive, got {self.l}")
        if not (0 <= self.k_l < self.l):
            raise ValueError(f"k_l must satisfy 0 <= k_l << l, got {self.k_l}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.m != 2:
            raise ValueError("only two-dimensional problems are supported")

    @property
    def kappa0(self) -> float:
        return self.lam + 2.0 * self.mu / self.m

    @classmethod
    def from_young_poisson(cls, E: float, nu: float, **kw) -> "MaterialParams":
        """Plane-strain Lamé constants from Young's modulus and Poisson's ratio."""
        lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
        mu = E / (2.0 * (1.0 + nu))
        return cls(lam=lam, mu=mu, **kw)


class SplitResult(NamedTuple):
    psi_act: np.ndarray | float
    psi_pas: np.ndarray | float
    sigma_act: Stress2
    sigma_pas: Stress2


# kinematics and scalar parts ------------------------------------------------

def strain_from_grad(grad_u) -> Strain2:
    """Symmetric part of a displacement gradient ``grad_u[..., i, j] = du_i/dx_j``."""
    return Strain2.from_matrix(grad_u)


def pos_neg(f):
    """``(f+, f-)`` with ``f+ = (f + |f|)/2`` and ``f- = (f - |f|)/2``."""
    f = np.asarray(f, dtype=float)
    a = np.abs(f)
    return 0.5 * (f + a), 0.5 * (f - a)


def regularized_eigen(lam, alpha):
    """Sonic-point smoothing of the positive and negative parts.

    ``lam_plus = (lam + sqrt(lam^2 + alpha^2))/2``, ``lam_minus = lam - lam_plus``,
    evaluated without cancellation on either side of zero.
    """
    lam = np.asarray(lam, dtype=float)
    s = np.hypot(lam, alpha)
    neg = lam < 0
    with np.errstate(divide="ignore"):  # the branch not selected may divide by zero
        plus = np.where(neg, alpha * alpha / (2.0 * (s - lam)), 0.5 * (lam + s))
        minus = np.where(neg, 0.5 * (lam - s), -alpha * alpha / (2.0 * (s + lam)))
    return plus, minus


def _reg_parts(x, alpha):
    """Smoothed parts and their first and third derivatives."""
    s = np.hypot(x, alpha)
    fp, fm = regularized_eigen(x, alpha)
    dp = fp / s
    dm = -fm / s
    d3 = -1.5 * alpha * alpha * x / s ** 5  # same for both parts
    return (fp, dp, d3), (fm, dm, d3)


# spectral decomposition -----------------------------------------------------

def _eig_sym2(xx, yy, xy):
    m = 0.5 * (xx + yy)
    h = 0.5 * (xx - yy)
    r = np.hypot(h, xy)
    return m, h, r


def eigen2(eps: Strain2) -> EigenPair2:
    """Closed-form eigen-decomposition, ``values[..., 0] >= values[..., 1]``.

    For repeated eigenvalues the eigenvector matrix is the identity.
    """
    xx, yy, xy = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in eps))
    m, h, r = _eig_sym2(xx, yy, xy)
    theta = 0.5 * np.arctan2(xy, h)  # atan2(0, 0) = 0 gives the identity basis
    c, s = np.cos(theta), np.sin(theta)
    Q = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    return EigenPair2(np.stack([m + r, m - r], -1), Q)


def _projectors(xx, yy, xy):
    """Eigenvalues and the unit deviator direction ``n = D / r`` (zero if r = 0)."""
    m, h, r = _eig_sym2(xx, yy, xy)
    safe = np.where(r > 0, r, 1.0)
    nxx = np.where(r > 0, h / safe, 1.0)
    nxy = np.where(r > 0, xy / safe, 0.0)
    return m, r, nxx, nxy


def spectral_decompose(eps: Strain2):
    """Split a strain into positive and negative eigen-projections.

    Returns ``(eps_plus, eps_minus, eig)`` with ``eps = eps_plus + eps_minus``.
    """
    xx, yy, xy = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in eps))
    m, r, nxx, nxy = _projectors(xx, yy, xy)
    l1, l2 = m + r, m - r
    p1, m1 = pos_neg(l1)
    p2, m2 = pos_neg(l2)

    def combine(a, b):
        # a P1 + b P2, with P1,2 = (I +- n)/2
        g, hh = 0.5 * (a + b), 0.5 * (a - b)
        return Strain2(g + hh * nxx, g - hh * nxx, hh * nxy)

    return combine(p1, p2), combine(m1, m2), eigen2(eps)


def _sq_norm(t: Strain2):
    """tr(t^2) for a symmetric tensor."""
    return t.xx ** 2 + t.yy ** 2 + 2.0 * t.xy ** 2


def _deviator(eps: Strain2) -> Strain2:
    m = 0.5 * (eps.xx + eps.yy)
    return Strain2(eps.xx - m, eps.yy - m, eps.xy)


def elastic_energy(eps: Strain2, mat: MaterialParams):
    """Undegraded strain energy density ``lam/2 tr(eps)^2 + mu tr(eps^2)``."""
    tr = eps.xx + eps.yy
    return 0.5 * mat.lam * tr ** 2 + mat.mu * _sq_norm(eps)


def hooke_stress(eps: Strain2, mat: MaterialParams) -> Stress2:
    tr = eps.xx + eps.yy
    return Stress2(mat.lam * tr + 2 * mat.mu * eps.xx, mat.lam * tr + 2 * mat.mu * eps.yy,
                   2 * mat.mu * eps.xy)


def split_energy(eps: Strain2, model, mat: MaterialParams) -> SplitResult:
    """Active/passive energy densities and their exact stress derivatives."""
    model = SplitModel.parse(model)
    eps = Strain2(*np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in eps)))
    tr = eps.xx + eps.yy
    zero = np.zeros_like(tr)
    if model is SplitModel.ISOTROPIC:
        return SplitResult(elastic_energy(eps, mat), zero, hooke_stress(eps, mat),
                           Stress2(zero, zero, zero))

    if model is SplitModel.SPECTRAL:
        k, tensor = mat.lam, eps
    else:
        k, tensor = mat.kappa0, _deviator(eps)
    trp, trm = pos_neg(tr)
    vol_act, vol_pas = 0.5 * k * trp ** 2, 0.5 * k * trm ** 2

    if model is SplitModel.VD:
        tp, tm = tensor, Strain2(zero, zero, zero)
    else:
        tp, tm, _ = spectral_decompose(tensor)
    # the deviatoric parts of the deviator are not trace-free themselves; the
    # derivative of mu tr(t^2) through the deviator keeps only their deviators
    sp, sm = (tp, tm) if model is SplitModel.SPECTRAL else (_deviator(tp), _deviator(tm))

    def stress(trace_part, t):
        return Stress2(k * trace_part + 2 * mat.mu * t.xx, k * trace_part + 2 * mat.mu * t.yy,
                       2 * mat.mu * t.xy)

    return SplitResult(
        vol_act + mat.mu * _sq_norm(tp),
        vol_pas + mat.mu * _sq_norm(tm),
        stress(trp, sp),
        stress(trm, sm),
    )


def apply_itcbc(split: SplitResult, d, d_cr) -> SplitResult:
    """Move the passive part into the active part wherever ``d <= d_cr``."""
    zone = np.asarray(d) <= d_cr
    pa, pp = split.psi_act, split.psi_pas
    sa, sp = split.sigma_act, split.sigma_pas
    return SplitResult(
        np.where(zone, pa + pp, pa),
        np.where(zone, 0.0 * pp, pp),
        Stress2(*(np.where(zone, a + p, a) for a, p in zip(sa, sp))),
        Stress2(*(np.where(zone, 0.0 * p, p) for p in sp)),
    )


def degradation(d, mat: MaterialParams):
    return np.asarray(d, dtype=float) ** 2 + mat.k_l


def degraded_energy(split: SplitResult, d, mat: MaterialParams):
    """``(d^2 + k_l) psi_act + psi_pas``."""
    return degradation(d, mat) * split.psi_act + split.psi_pas


def stress(split: SplitResult, d, mat: MaterialParams) -> Stress2:
    """Cauchy stress ``(d^2 + k_l) sigma_act + sigma_pas``."""
    g = degradation(d, mat)
    return Stress2(*(g * a + p for a, p in zip(split.sigma_act, split.sigma_pas)))


def von_mises(sig: Stress2):
    """In-plane equivalent stress ``sqrt(sx^2 + sy^2 - sx sy + 3 txy^2)``."""
    sx, sy, t = sig
    return np.sqrt(np.maximum(sx * sx + sy * sy - sx * sy + 3.0 * t * t, 0.0))


# regularized stress and tangent -----------------------------------------------

def _iso_function(xx, yy, xy, parts, alpha):
    """Value and Mandel tangent of ``sum_i f(lam_i) P_i`` for f a smoothed part.

    ``parts`` is 0 for the positive and 1 for the negative smoothed part.
    """
    m, r, nxx, nxy = _projectors(xx, yy, xy)
    f1, df1, _ = _reg_parts(m + r, alpha)[parts]
    f2, df2, _ = _reg_parts(m - r, alpha)[parts]
    fm, dfm, d3m = _reg_parts(m, alpha)[parts]
    g = 0.5 * (f1 + f2)
    small = r < 1e-3 * np.hypot(m, alpha)
    h = np.where(small, dfm + d3m * r * r / 6.0, (f1 - f2) / (2.0 * np.where(small, 1.0, r)))
    n = np.stack([nxx, -nxx, SQRT2 * nxy], axis=-1)
    n = np.where(r[..., None] > 0, n, 0.0)
    # F = g I + h D with D = r n
    val = g[..., None] * _I + (h * r)[..., None] * n
    a = 0.25 * (df1 + df2)
    b = 0.25 * (df1 - df2)
    ii = np.outer(_I, _I)
    nn = n[..., :, None] * n[..., None, :]
    inx = _I[:, None] * n[..., None, :] + n[..., :, None] * _I[None, :]
    C = (a[..., None, None] * (ii + nn) + b[..., None, None] * inx
         + h[..., None, None] * (np.eye(3) - 0.5 * ii - 0.5 * nn))
    return val, C


def _split_stress_mandel(eps: Strain2, model: SplitModel, mat: MaterialParams):
    """Regularized (sigma_act, sigma_pas, C_act, C_pas) in Mandel form."""
    xx, yy, xy = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in eps))
    tr = xx + yy
    shape = tr.shape
    e = np.stack([xx, yy, SQRT2 * xy], axis=-1)
    ii = np.outer(_I, _I)
    zero3 = np.zeros(shape + (3,))
    zero33 = np.zeros(shape + (3, 3))
    if model is SplitModel.ISOTROPIC:
        C = mat.lam * ii + 2 * mat.mu * np.eye(3)
        return e @ C, zero3, np.broadcast_to(C, shape + (3, 3)).copy(), zero33

    a = mat.alpha
    (tp, dtp, _), (tm, dtm, _) = _reg_parts(tr, a)
    k = mat.lam if model is SplitModel.SPECTRAL else mat.kappa0
    s_act = (k * tp)[..., None] * _I
    s_pas = (k * tm)[..., None] * _I
    C_act = (k * dtp)[..., None, None] * ii
    C_pas = (k * dtm)[..., None, None] * ii
    two_mu = 2.0 * mat.mu
    if model is SplitModel.SPECTRAL:
        vp, Cp = _iso_function(xx, yy, xy, 0, a)
        vm, Cm = _iso_function(xx, yy, xy, 1, a)
    else:
        dev = e @ _P_DEV
        if model is SplitModel.VD:
            vp, Cp = dev, np.broadcast_to(_P_DEV, shape + (3, 3))
            vm, Cm = zero3, zero33
        else:
            dxx, dyy, dxy = dev[..., 0], dev[..., 1], dev[..., 2] / SQRT2
            vp, Cp = _iso_function(dxx, dyy, dxy, 0, a)
            vm, Cm = _iso_function(dxx, dyy, dxy, 1, a)
            vp, vm = vp @ _P_DEV, vm @ _P_DEV
            Cp, Cm = _P_DEV @ Cp @ _P_DEV, _P_DEV @ Cm @ _P_DEV
    return (s_act + two_mu * vp, s_pas + two_mu * vm,
            C_act + two_mu * Cp, C_pas + two_mu * Cm)


def stress_and_tangent_mandel(eps: Strain2, d, model, mat: MaterialParams, d_cr=None):
    """Regularized stress (..., 3) and tangent (..., 3, 3) in Mandel notation.

    Mandel vectors are ``[xx, yy, sqrt(2) xy]`` for strain and stress alike,
    so that the tangent is a symmetric 3x3 matrix.
    """
    model = SplitModel.parse(model)
    sa, sp, Ca, Cp = _split_stress_mandel(eps, model, mat)
    g = np.asarray(degradation(d, mat))
    if d_cr is not None:
        zone = np.asarray(d) <= d_cr
        sa = np.where(zone[..., None], sa + sp, sa)
        sp = np.where(zone[..., None], 0.0, sp)
        Ca = np.where(zone[..., None, None], Ca + Cp, Ca)
        Cp = np.where(zone[..., None, None], 0.0, Cp)
    sig = g[..., None] * sa + sp
    C = g[..., None, None] * Ca + Cp
    return sig, C


def regularized_stress(eps: Strain2, d, model, mat: MaterialParams, d_cr=None) -> Stress2:
    """Stress with every positive/negative part replaced by its smoothed version."""
    sig, _ = stress_and_tangent_mandel(eps, d, model, mat, d_cr)
    return Stress2.from_mandel(sig)


def mandel_to_tensor4(C) -> np.ndarray:
    """Convert (..., 3, 3) Mandel matrices to (..., 2, 2, 2, 2) tensors."""
    C = np.asarray(C)
    idx = [(0, 0), (1, 1), (0, 1)]
    w = np.array([1.0, 1.0, 1.0 / SQRT2])
    out = np.zeros(C.shape[:-2] + (2, 2, 2, 2))
    for a, (i, j) in enumerate(idx):
        for b, (k, l) in enumerate(idx):
            v = C[..., a, b] * w[a] * w[b]
            for p, q in {(i, j), (j, i)}:
                for r, s in {(k, l), (l, k)}:
                    out[..., p, q, r, s] = v
    return out


def stress_tangent(eps: Strain2, d, model, mat: MaterialParams, d_cr=None) -> np.ndarray:
    """Exact derivative of :func:`regularized_stress` as a 2x2x2x2 tensor."""
    _, C = stress_and_tangent_mandel(eps, d, model, mat, d_cr)
    return mandel_to_tensor4(C)
