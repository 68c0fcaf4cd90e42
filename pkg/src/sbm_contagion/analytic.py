"""Asymptotic default fractions, joint roots and resilience verdicts.

Root vectors are ``(R, T, T)`` float arrays indexed ``z[r, alpha, beta]``
(0-based): the mean impact-``r`` exposure that type-``beta`` institutions
direct toward type-``alpha`` creditors through already defaulted debtors.

The map ``phi(z) = f(z) + z`` is monotone, so least fixed points are found by
plain monotone iteration from zero and greatest ones by iteration from the
upper bound ``zeta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import contourpy
import numpy as np

from .model import ModelSpec, all_coordinates, coordinate_mask, parse_coordinates

EPS0 = 1e-2
EPS_MIN = 1e-10
RESOLVE_TOL = 1e-6
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 2_000_000


class SolverError(RuntimeError):
    pass


class NegativeRate(ValueError):
    pass


class InvalidTolerance(ValueError):
    pass


class MaxIterations(SolverError):
    def __init__(self, result: "FixedPoint"):
        super().__init__(
            f"no convergence after {result.iterations} iterations (last increment {result.increment:.3e}, "
            f"residual {result.residual:.3e})"
        )
        self.result = result


class ScheduleNotConverged(SolverError):
    def __init__(self, result: "EpsLimit"):
        super().__init__(f"epsilon schedule did not settle: Cauchy gap {result.gap:.3e} at eps={result.eps_min:g}")
        self.result = result


class EmptyShockSet(ValueError):
    pass


class NonPositiveDirection(ValueError):
    pass


class NotARoot(ValueError):
    pass


class InitialDefaults(ValueError):
    pass


class MultiImpactUnsupported(ValueError):
    pass


class GridTooCoarse(ValueError):
    pass


# -- compound Poisson ------------------------------------------------------------


def compound_poisson_pmf(x, kmax: int) -> np.ndarray:
    """pmf of ``sum_s s * Poi(x_s)`` on ``0..kmax``.

    ``x`` may carry leading batch dimensions; the last axis indexes the
    impact ``s = 1..R``. The pmf is built by convolving the lattice pmfs of
    ``s * Poi(x_s)``; truncating at ``kmax`` is exact for every ``k <= kmax``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise NegativeRate(f"Poisson rates must be non-negative, got {x}")
    if kmax < 0:
        raise ValueError("kmax must be non-negative")
    return _convolve_pmf(x, kmax)


def _convolve_pmf(x: np.ndarray, kmax: int) -> np.ndarray:
    batch = x.shape[:-1]
    p = np.zeros(batch + (kmax + 1,))
    p[..., 0] = 1.0
    for s in range(1, x.shape[-1] + 1):
        rate = x[..., s - 1 : s]
        mmax = kmax // s
        lattice = np.exp(-rate) * np.cumprod(
            np.concatenate([np.ones_like(rate), rate / np.arange(1, mmax + 1)], axis=-1), axis=-1
        )
        out = p * lattice[..., :1]
        for m in range(1, mmax + 1):
            shift = s * m
            out[..., shift:] += p[..., : kmax + 1 - shift] * lattice[..., m : m + 1]
        p = out
    return p


def _panjer_cdf(x: np.ndarray, kmax: int) -> np.ndarray:
    """cdf of the same law via the Panjer recursion ``k p_k = sum_s s x_s p_{k-s}``.

    Hot-path variant for a batch of atoms; ``x`` has shape ``(J, R)``.
    """
    J, R = x.shape
    p = np.empty((kmax + 1, J))
    p[0] = np.exp(-x.sum(axis=1))
    sx = (x * np.arange(1, R + 1)).T
    for k in range(1, kmax + 1):
        m = min(R, k)
        p[k] = (sx[:m] * p[k - 1 :: -1][:m]).sum(axis=0) / k if m > 1 else sx[0] * p[k - 1] / k
    return np.cumsum(p, axis=0).T


def psi(ell, x) -> float:
    """``P(sum_s s * Poi(x_s) >= ell)``; ``ell`` may be ``math.inf``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise NegativeRate(f"Poisson rates must be non-negative, got {x}")
    if ell == math.inf:
        return 0.0
    ell = int(ell)
    if ell <= 0:
        return 1.0
    return float(1.0 - compound_poisson_pmf(x, ell - 1).sum(axis=-1))


# -- compiled system ----------------------------------------------------------------


class System:
    """Array view of a :class:`ModelSpec` for repeated evaluation."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.R, self.T = spec.R, spec.T
        self.prob = spec.probs
        self.vtype = spec.vtypes
        self.in_w = spec.in_w
        self.out_w = spec.out_w
        self.cap = spec.capitals
        self.importance = spec.importances
        finite = np.isfinite(self.cap)
        self.kmax = int(max(self.cap[finite].max(initial=0) - 1, 0))
        self.cap_idx = np.where(finite, self.cap, 0).astype(int)
        self.finite = finite
        # atom contributions are grouped by holder type, in atom order
        self.by_type = [np.flatnonzero(self.vtype == b) for b in range(self.T)]
        self._onehot = np.zeros((self.T, len(self.prob)))
        self._onehot[self.vtype, np.arange(len(self.prob))] = 1.0
        self._rows = np.arange(len(self.prob))
        self._cdf_col = np.maximum(self.cap_idx - 1, 0)
        self._solvent = finite & (self.cap_idx > 0)
        self._fixed = np.where(finite, 1.0, 0.0)  # psi for capital 0 resp. infinity
        weighted = self.prob[:, None, None] * self.out_w
        self.zeta = self._collect(weighted)

    @property
    def shape(self):
        return (self.R, self.T, self.T)

    def _collect(self, per_atom: np.ndarray) -> np.ndarray:
        """Sum ``(J, R, T)`` atom terms into the ``beta`` slot of each atom's type."""
        return np.einsum("bj,jra->rab", self._onehot, per_atom)

    def rates(self, z: np.ndarray) -> np.ndarray:
        """``X[j, s] = sum_gamma in_w[j, s, gamma] * z[s, vtype_j, gamma]``."""
        return np.einsum("jsg,sjg->js", self.in_w, z[:, self.vtype, :])

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return _panjer_cdf(x, self.kmax)

    def psi(self, z: np.ndarray) -> np.ndarray:
        """Default probability of each atom given the exposure vector ``z``."""
        cdf = self.cdf(np.maximum(self.rates(z), 0.0))
        return np.where(self._solvent, 1.0 - cdf[self._rows, self._cdf_col], self._fixed)

    def phi(self, z: np.ndarray) -> np.ndarray:
        return self._collect((self.prob * self.psi(z))[:, None, None] * self.out_w)

    def f(self, z: np.ndarray) -> np.ndarray:
        return self.phi(z) - z

    def g(self, z: np.ndarray, weighting: str = "count", vtype: int | None = None) -> float:
        w = self.prob * self.psi(z)
        if weighting == "importance":
            w = w * self.importance
        elif weighting != "count":
            raise ValueError(f"unknown weighting {weighting!r}")
        if vtype is not None:
            w = w[self.vtype == vtype - 1]
        return float(w.sum())

    def window(self, z: np.ndarray) -> np.ndarray:
        """``P(S_j in {c_j - r', ..., c_j - 1})`` per atom ``j`` and ``r' = 1..R``."""
        cdf = self.cdf(np.maximum(self.rates(z), 0.0))
        J = len(self.prob)
        out = np.zeros((J, self.R))
        rows = np.arange(J)
        for rp in range(1, self.R + 1):
            hi = self.cap_idx - 1
            lo = self.cap_idx - rp - 1
            top = np.where(hi >= 0, cdf[rows, np.clip(hi, 0, None)], 0.0)
            bottom = np.where(lo >= 0, cdf[rows, np.clip(lo, 0, None)], 0.0)
            out[:, rp - 1] = np.where(self.finite, top - bottom, 0.0)
        return out

    def dphi_dir(self, z: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Directional derivative of ``phi`` at ``z`` in direction ``v``."""
        win = self.window(z)
        vsel = np.transpose(v[:, self.vtype, :], (1, 0, 2))
        mass = np.einsum("jsg,jsg->js", self.in_w, vsel)
        m = (mass * win).sum(axis=1)
        return self._collect((self.prob * m)[:, None, None] * self.out_w)

    def jacobian_phi(self, z: np.ndarray) -> np.ndarray:
        """Matrix of ``d phi[r,a,b] / d z[r',b',g]`` flattened to ``(RT^2, RT^2)``."""
        R, T = self.R, self.T
        win = self.window(z)
        B = np.zeros((R, T, T, R, T, T))
        for b, idx in enumerate(self.by_type):
            for j in idx:
                # d phi[:, :, b] / d z[r', b, g] = prob out_w[:, :] in_w[r', g] win[r']
                coeff = self.prob[j] * self.in_w[j] * win[j][:, None]
                B[:, :, b, :, b, :] += self.out_w[j][:, :, None, None] * coeff[None, None, :, :]
        n = R * T * T
        return B.reshape(n, n)


def _system(spec) -> System:
    return spec if isinstance(spec, System) else System(spec)


# -- basic evaluations ----------------------------------------------------------------


def zeta(spec) -> np.ndarray:
    """Upper bound ``zeta[r,a,b] = E[W^{+,r,a} 1{A=b}]`` on every root coordinate."""
    return _system(spec).zeta.copy()


def support(spec) -> frozenset:
    """Coordinates with ``zeta > 0``."""
    z = _system(spec).zeta
    return frozenset(tuple(int(i) for i in idx) for idx in np.argwhere(z > 0))


def f_eval(spec, z) -> np.ndarray:
    return _system(spec).f(np.asarray(z, dtype=float))


def g_eval(spec, z, weighting: str = "count", vtype: int | None = None) -> float:
    """Asymptotic default fraction at ``z``.

    ``weighting="importance"`` weights each atom by its systemic importance;
    ``vtype`` (1-based) restricts the sum to one holder type. Both are
    normalized by the total population, not by the type's size.
    """
    return _system(spec).g(np.asarray(z, dtype=float), weighting, vtype)


def directional_derivative(spec, z, v) -> np.ndarray:
    """``D_v f(z)`` for every coordinate (exact for finitary specs)."""
    sys_ = _system(spec)
    z = np.asarray(z, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), sys_.shape)
    if not np.all(np.isfinite(v)):
        raise ValueError("direction must be finite")
    return sys_.dphi_dir(z, v) - v


# -- fixed points ---------------------------------------------------------------------


@dataclass
class FixedPoint:
    z: np.ndarray
    iterations: int
    increment: float
    residual: float
    eps: float
    converged: bool

    def as_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "iterations": self.iterations,
            "increment": self.increment,
            "residual": self.residual,
            "eps": self.eps,
            "converged": self.converged,
        }


def _shift(sys_: System, eps: float, shift_set) -> np.ndarray:
    if shift_set is None:
        return np.full(sys_.shape, float(eps))
    mask = shift_set if isinstance(shift_set, np.ndarray) else coordinate_mask(shift_set, sys_.R, sys_.T)
    return eps * mask.astype(float)


def least_fixed_point(
    spec,
    eps: float = 0.0,
    shift_set=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    raise_on_fail: bool = True,
    start=None,
) -> FixedPoint:
    """Least fixed point of ``z -> phi(z) + eps * 1_I`` by iteration from 0.

    ``shift_set`` is an iterable of 0-based coordinates (``None`` = all).
    ``start`` may replace 0 by any point below the answer from which the map
    moves upward, e.g. an iterate of the unshifted problem.

    Iteration stops once the sup-norm increment is below ``tol`` (and below
    ``eps / 2`` when shifting) and no longer growing. While the iterate
    squeezes past a point where ``f`` touches zero, each step is at least
    ``eps``, so such a bottleneck is never mistaken for convergence.
    """
    if not tol > 0:
        raise InvalidTolerance(f"tol must be positive, got {tol}")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    sys_ = _system(spec)
    shift = _shift(sys_, eps, shift_set)
    bound = sys_.zeta + shift + 1e-12
    z = np.zeros(sys_.shape) if start is None else np.array(start, dtype=float)
    stop = min(tol, 0.5 * eps) if eps > 0 else tol
    prev_inc = math.inf
    inc = math.inf
    it = 0
    converged = False
    while it < max_iter:
        new = sys_.phi(z) + shift
        it += 1
        step = new - z
        if step.min(initial=0.0) < -1e-12 or np.any(new > bound):
            raise SolverError("monotone iteration left [z_prev, zeta + eps]; inputs are inconsistent")
        inc = float(step.max(initial=0.0))
        z = np.maximum(new, z)
        if inc < stop and inc <= prev_inc:
            converged = True
            break
        prev_inc = inc
    residual = float(np.max(np.abs(sys_.phi(z) + shift - z), initial=0.0))
    result = FixedPoint(z, it, inc, residual, float(eps), converged)
    if not converged and raise_on_fail:
        raise MaxIterations(result)
    return result


def greatest_fixed_point(
    spec, eps: float = 0.0, shift_set=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER
) -> FixedPoint:
    """Largest joint root overall, by monotone iteration downward from ``zeta + eps``."""
    if not tol > 0:
        raise InvalidTolerance(f"tol must be positive, got {tol}")
    sys_ = _system(spec)
    shift = _shift(sys_, eps, shift_set)
    z = sys_.zeta + shift
    inc = math.inf
    it = 0
    converged = False
    while it < max_iter:
        new = np.minimum(sys_.phi(z) + shift, z)
        it += 1
        inc = float(np.max(z - new))
        z = new
        if inc < tol:
            converged = True
            break
    residual = float(np.max(np.abs(sys_.phi(z) + shift - z)))
    result = FixedPoint(z, it, inc, residual, float(eps), converged)
    if not converged:
        raise MaxIterations(result)
    return result


@dataclass
class EpsLimit:
    """Limit of the shifted least fixed points as the shift goes to zero."""

    z: np.ndarray
    gap: float
    converged: bool
    eps_min: float
    trace: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "z": self.z.tolist(),
            "cauchy_gap": self.gap,
            "converged": self.converged,
            "eps_min": self.eps_min,
            "schedule": self.trace,
        }


def eps_schedule(eps0: float = EPS0, eps_min: float = EPS_MIN) -> list:
    out = []
    eps = eps0
    while eps > eps_min:
        out.append(eps)
        eps /= 2.0
    out.append(eps_min)
    return out


def _eps_limit(sys_, shift_set, tol, eps0, eps_min, gap_tol, strict) -> EpsLimit:
    # every unshifted iterate lies below each shifted least fixed point, so the
    # unshifted solve (converged or not) is a valid common starting point
    floor = least_fixed_point(sys_, 0.0, shift_set, tol, raise_on_fail=False).z
    prev = None
    gap = math.inf
    trace = []
    for eps in eps_schedule(eps0, eps_min):
        fp = least_fixed_point(sys_, eps, shift_set, tol, start=floor)
        if prev is not None:
            gap = float(np.max(np.abs(prev - fp.z), initial=0.0))
        trace.append(
            {"eps": eps, "iterations": fp.iterations, "residual": fp.residual, "sup_norm": float(np.max(fp.z, initial=0.0)), "gap": gap}
        )
        prev = fp.z
    result = EpsLimit(prev, gap, gap <= gap_tol, eps_min, trace)
    if strict and not result.converged:
        raise ScheduleNotConverged(result)
    return result


def z_star(
    spec,
    tol: float = DEFAULT_TOL,
    eps0: float = EPS0,
    eps_min: float = EPS_MIN,
    gap_tol: float = RESOLVE_TOL,
    strict: bool = False,
) -> EpsLimit:
    """Largest joint root in the component of the non-negativity set containing 0.

    Computed as the limit of least fixed points under a uniform shift ``eps``
    on every coordinate, with ``eps`` halved from ``eps0`` down to ``eps_min``.
    The reported Cauchy gap is the change between the last two shifts.
    """
    return _eps_limit(_system(spec), None, tol, eps0, eps_min, gap_tol, strict)


def z_zero(
    spec,
    shock_set: Iterable,
    tol: float = DEFAULT_TOL,
    eps0: float = EPS0,
    eps_min: float = EPS_MIN,
    gap_tol: float = RESOLVE_TOL,
    strict: bool = False,
) -> EpsLimit:
    """Smallest joint root that is stable under shocks on ``shock_set``."""
    sys_ = _system(spec)
    coords = frozenset(shock_set)
    if not coords:
        raise EmptyShockSet("shock set must be non-empty")
    outside = coords - support(sys_)
    if outside:
        raise ValueError(f"shock set contains coordinates with zero mean weight: {sorted(outside)}")
    return _eps_limit(sys_, coords, tol, eps0, eps_min, gap_tol, strict)


# -- root certificates ------------------------------------------------------------------


@dataclass
class Certificate:
    holds: bool
    mode: str
    v: np.ndarray
    values: np.ndarray  # D_v f per coordinate (derivative) or kappa per delta (integral)
    kappa: float | None = None

    def as_dict(self) -> dict:
        return {
            "holds": self.holds,
            "mode": self.mode,
            "v": self.v.tolist(),
            "values": np.asarray(self.values).tolist(),
            "kappa": self.kappa,
        }


def default_delta_grid(spec, points: int = 16) -> np.ndarray:
    top = 0.1 * float(np.max(_system(spec).zeta, initial=0.0))
    top = top if top > 0 else 0.1
    return np.geomspace(top * 1e-6, top, points)


def check_root_is_zstar(
    spec,
    root,
    v,
    mode: str = "derivative",
    delta_grid: Sequence[float] | None = None,
    residual_tol: float = 1e-8,
    margin: float = 1e-4,
) -> Certificate:
    """Sufficient test that a joint root is the largest root of its component.

    ``derivative``: every ``D_v f(root)`` is below ``-margin * v``.
    ``integral``: the best ``kappa`` with ``kappa * v >= D_v phi(root + delta v)``
    over every ``delta`` in ``delta_grid`` is below one. The grid stands in for
    "all small delta". A negative answer does not refute the claim.
    """
    sys_ = _system(spec)
    root = np.asarray(root, dtype=float)
    v = np.broadcast_to(np.asarray(v, dtype=float), sys_.shape).copy()
    if np.any(v <= 0):
        raise NonPositiveDirection("certificate direction must be strictly positive")
    res = float(np.max(np.abs(sys_.f(root))))
    if res > residual_tol:
        raise NotARoot(f"|f(root)| = {res:.3e} exceeds {residual_tol:.1e}")
    if mode == "derivative":
        d = sys_.dphi_dir(root, v) - v
        return Certificate(bool(np.all(d < -margin * v)), mode, v, d)
    if mode == "integral":
        grid = default_delta_grid(sys_) if delta_grid is None else np.asarray(delta_grid, dtype=float)
        kappas = np.array([np.max(sys_.dphi_dir(root + delta * v, v) / v) for delta in grid])
        kappa = float(kappas.max())
        return Certificate(kappa < 1.0 - margin, mode, v, kappas, kappa)
    raise ValueError(f"unknown mode {mode!r}")


def find_certificate(spec, root, residual_tol: float = 1e-8, margin: float = 1e-4) -> Certificate:
    """Search for a direction proving ``root`` is the largest root of its component.

    Tries the all-ones direction, then ``(I - B)^{-1} 1`` where ``B`` is the
    Jacobian of ``phi`` at the root. A positive ``v`` with ``B v < v`` exists
    exactly when the spectral radius of ``B`` is below one, and that choice
    attains it.
    """
    sys_ = _system(spec)
    root = np.asarray(root, dtype=float)
    ones = np.ones(sys_.shape)
    cert = check_root_is_zstar(sys_, root, ones, "derivative", residual_tol=residual_tol, margin=margin)
    if cert.holds:
        return cert
    B = sys_.jacobian_phi(root)
    n = B.shape[0]
    try:
        v = np.linalg.solve(np.eye(n) - B, np.ones(n))
    except np.linalg.LinAlgError:
        return cert
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        return cert
    v = v / v.max()
    return check_root_is_zstar(sys_, root, v.reshape(sys_.shape), "derivative", residual_tol=residual_tol, margin=margin)


def spectral_radius(spec, z) -> float:
    B = _system(spec).jacobian_phi(np.asarray(z, dtype=float))
    return float(np.max(np.abs(np.linalg.eigvals(B)))) if B.size else 0.0


# -- resilience -------------------------------------------------------------------------

RESILIENT = "Resilient"
NON_RESILIENT = "NonResilient"
INCONCLUSIVE = "Inconclusive"


@dataclass
class ResilienceReport:
    verdict: str
    z_star: np.ndarray
    certificate: Certificate | None
    g_star: float
    lower_bounds: dict
    tolerances: dict
    schedule: EpsLimit

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "z_star": self.z_star.tolist(),
            "z_star_sup_norm": float(np.max(self.z_star, initial=0.0)),
            "g_z_star": self.g_star,
            "certificate": None if self.certificate is None else self.certificate.as_dict(),
            "lower_bounds": self.lower_bounds,
            "tolerances": self.tolerances,
            "schedule": self.schedule.as_dict(),
        }


def classify_resilience(
    spec: ModelSpec,
    tol: float = DEFAULT_TOL,
    shock_sets: Sequence[Iterable] = (),
    resolve_tol: float = RESOLVE_TOL,
    eps_min: float = EPS_MIN,
) -> ResilienceReport:
    """Resilience verdict for the unshocked system (shock probabilities ignored).

    Resilient when ``z*`` vanishes, and certified when some direction makes
    every directional derivative at 0 negative. NonResilient when ``z*`` is
    bounded away from 0; ``g(z*)`` and, per requested shock set ``I``,
    ``g(z_0(I))`` are the lower bounds on the final default fraction.
    """
    base = spec.without_shock()
    if base.initial_default_mass() > 0:
        raise InitialDefaults("base system has capital-0 atoms; resilience concerns the unshocked system")
    sys_ = System(base)
    zero = np.zeros(sys_.shape)
    cert = find_certificate(sys_, zero)
    limit = z_star(sys_, tol, eps_min=eps_min, gap_tol=resolve_tol)
    zs = limit.z
    norm = float(np.max(zs, initial=0.0))
    if cert.holds:
        verdict = RESILIENT
    elif not limit.converged:
        verdict = INCONCLUSIVE
    elif norm < resolve_tol:
        verdict = RESILIENT
        cert = None
    else:
        verdict = NON_RESILIENT
    bounds = {}
    for coords in shock_sets:
        key = ";".join(f"{r + 1},{a + 1},{b + 1}" for r, a, b in sorted(coords))
        z0 = z_zero(sys_, coords, tol, eps_min=eps_min, gap_tol=resolve_tol)
        bounds[key] = {"g": sys_.g(z0.z), "z0": z0.z.tolist(), "converged": z0.converged, "gap": z0.gap}
    tolerances = {"tol": tol, "resolve_tol": resolve_tol, "eps0": EPS0, "eps_min": eps_min}
    return ResilienceReport(verdict, zs, cert, sys_.g(zs), bounds, tolerances, limit)


# -- subsystem criteria -----------------------------------------------------------------


def subsystem_margin(spec: ModelSpec, alpha: int, z: float) -> float:
    """``E[W^{+,a} W^{-,a} P(Poi(W^{-,a} z) = C - 1) 1{A=a}]`` for single-impact specs.

    ``alpha`` is 1-based. Staying below a level ``e`` for all small ``z > 0``
    is the per-subsystem capital condition.
    """
    if spec.R != 1:
        raise MultiImpactUnsupported("subsystem margin is defined for R = 1 only")
    col = alpha - 1
    total = 0.0
    for a in spec.atoms:
        if a.vtype != alpha or not math.isfinite(a.capital) or a.capital < 1:
            continue
        w_out = a.out_weights[0, col]
        w_in = a.in_weights[0, col]
        lam = w_in * z
        k = int(a.capital) - 1
        pmf = math.exp(-lam) * lam**k / math.factorial(k) if (lam > 0 or k == 0) else 0.0
        total += a.prob * w_out * w_in * pmf
    return total


def cross_weight_bound(spec: ModelSpec) -> float:
    """Smallest ``K`` with external weights at most ``K`` times internal ones, entrywise."""
    K = 0.0
    for a in spec.atoms:
        own = a.vtype - 1
        for w in (a.in_weights, a.out_weights):
            inner = w[:, own]
            for b in range(spec.T):
                if b == own:
                    continue
                ext = w[:, b]
                pos = ext > 0
                if np.any(pos & (inner <= 0)):
                    return math.inf
                if np.any(pos):
                    K = max(K, float(np.max(ext[pos] / inner[pos])))
    return K


def combined_resilience_condition(spec: ModelSpec, z_max: float = 1e-3, points: int = 32) -> dict:
    """Subsystem-margin test for resilience of a multi-type single-impact system.

    The system is resilient if every type's margin stays below
    ``1 / (1 + K^2 (T - 1))`` for small ``z``; ``z`` is probed on a
    log-spaced grid in ``(0, z_max]``.
    """
    K = cross_weight_bound(spec)
    level = 0.0 if math.isinf(K) else 1.0 / (1.0 + K * K * (spec.T - 1))
    grid = np.geomspace(z_max * 1e-6, z_max, points)
    margins = {alpha: max(subsystem_margin(spec, alpha, float(z)) for z in grid) for alpha in range(1, spec.T + 1)}
    holds = not math.isinf(K) and all(m < level for m in margins.values())
    return {"K": K, "level": level, "margins": margins, "holds": holds}


# -- root-set scans ----------------------------------------------------------------------


@dataclass
class AxisMap:
    """Affine embedding ``z = base + t1 * directions[0] (+ t2 * directions[1])``.

    ``functions`` lists ``(label, (r, a, b))`` pairs: the coordinates of ``f``
    whose zero sets are traced, 0-based.
    """

    directions: list
    functions: list
    base: np.ndarray | None = None

    def point(self, spec_shape, ts) -> np.ndarray:
        z = np.zeros(spec_shape) if self.base is None else np.array(self.base, dtype=float)
        for t, d in zip(ts, self.directions):
            z = z + t * np.asarray(d, dtype=float)
        return z


def axis_map_from_dict(data: dict, R: int, T: int) -> AxisMap:
    """Build an :class:`AxisMap` from its JSON form (1-based ``"r,a,b"`` keys)."""
    shape = (R, T, T)

    def coord(text):
        (c,) = parse_coordinates(text, R, T)
        return c

    dirs = [tie(shape, {coord(k): float(v) for k, v in ax["direction"].items()}) for ax in data["axes"]]
    funcs = [(fn["label"], coord(fn["coord"])) for fn in data["functions"]]
    return AxisMap(dirs, funcs)


def tie(shape, coeffs: dict) -> np.ndarray:
    """Direction array with ``coeffs[(r, a, b)]`` at each listed 0-based coordinate."""
    d = np.zeros(shape)
    for idx, c in coeffs.items():
        d[idx] = c
    return d


@dataclass
class Polyline:
    label: str
    segment_id: int
    points: np.ndarray  # (m, 2); second column is zero for 1-D scans


def scan_values(spec, axis_map: AxisMap, lo, hi, resolution) -> tuple:
    """Evaluate the traced ``f`` coordinates on a regular grid."""
    sys_ = _system(spec)
    dims = len(axis_map.directions)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (dims,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (dims,))
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (dims,))
    axes = [np.linspace(lo[i], hi[i], res[i]) for i in range(dims)]
    grids = np.meshgrid(*axes, indexing="ij")
    vals = np.empty((len(axis_map.functions),) + grids[0].shape)
    for pos in np.ndindex(grids[0].shape):
        fz = sys_.f(axis_map.point(sys_.shape, [g[pos] for g in grids]))
        for k, (_, coord) in enumerate(axis_map.functions):
            vals[(k,) + pos] = fz[coord]
    return axes, vals


def rootset_scan(spec, axis_map: AxisMap, lo=0.0, hi=1.0, resolution=201) -> list:
    """Zero contours of the traced functions over a 1-D or 2-D parameter box.

    Contours come from marching squares with linear interpolation; in one
    dimension each sign change yields a single interpolated point.
    """
    axes, vals = scan_values(spec, axis_map, lo, hi, resolution)
    out = []
    for k, (label, _) in enumerate(axis_map.functions):
        lines = _zero_lines(axes, vals[k])
        if not lines:
            raise GridTooCoarse(f"no sign change of {label} on the scanned grid")
        out.extend(Polyline(label, i, pts) for i, pts in enumerate(lines))
    return out


def _zero_lines(axes, v) -> list:
    if len(axes) == 1:
        x = axes[0]
        pts = []
        for i in range(len(x) - 1):
            a, b = v[i], v[i + 1]
            if a == 0:
                pts.append(x[i])
            elif a * b < 0:
                pts.append(x[i] + (x[i + 1] - x[i]) * a / (a - b))
        if v[-1] == 0:
            pts.append(x[-1])
        return [np.array([[p, 0.0]]) for p in pts]
    gen = contourpy.contour_generator(axes[0], axes[1], v.T, line_type=contourpy.LineType.Separate)
    return [np.asarray(seg) for seg in gen.lines(0.0) if len(seg)]


def write_contours_csv(lines: Sequence[Polyline], path, header: Sequence[str] = ()) -> None:
    with open(path, "w") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        fh.write("function_label,segment_id,z1,z2\n")
        for pl in lines:
            for x, y in pl.points:
                fh.write(f"{pl.label},{pl.segment_id},{x:.10g},{y:.10g}\n")


def all_coords(spec) -> frozenset:
    return all_coordinates(spec.R, spec.T)
