"""Minimizing geodesics, the CC distance and the contraction map S_t in H^n.

All routines are vectorized: points are arrays of shape (..., 2n+1), and
leading axes broadcast.  Horizontal coordinates are handled as complex
vectors zeta_j = x_j + i x_{n+j}; a geodesic leaving the origin with
covector chi (complex form chi_c) and twist theta is

    zeta(t) = chi_c (exp(i theta t) - 1) / (i theta)
    z(t)    = |chi|^2 (theta t - sin(theta t)) / (2 theta^2)

and a geodesic from a base point is the left translate of that curve.

Internally everything runs in extended precision (``np.longdouble``) and
results are rounded to float64 once.  A vertical coordinate error delta
costs sqrt(4 pi delta) in CC distance, so a float64 pipeline cannot land
on its target to better than ~1e-8 in CC distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hgroup

LD = np.longdouble
PI = LD("3.14159265358979323846264338327950288")
TWO_PI = 2 * PI

# Taylor coefficients (odd powers) of (u - sin u) / u^2, of the twist
# function f(u) = (u - sin u) / (8 sin^2(u/2)), of its derivative (even
# powers) and of sin(u)/u (even powers).
def _fractions(text):
    return tuple(LD(a) / LD(b) for a, b in (f.split("/") for f in text.split()))


_AREA_SERIES = _fractions(
    "1/6 -1/120 1/5040 -1/362880 1/39916800 -1/6227020800 1/1307674368000 "
    "-1/355687428096000 1/121645100408832000 -1/51090942171709440000 "
    "1/25852016738884976640000 -1/15511210043330985984000000")
_TWIST_SERIES = _fractions(
    "1/12 1/360 1/10080 1/302400 1/9580032 691/217945728000 1/10674892800 "
    "3617/1333827855360000 43867/567677135241216000 174611/80285766269829120000 "
    "77683/1281918185399255040000 236364091/141152011394311972454400000")
_TWIST_DERIV_SERIES = _fractions(
    "1/12 1/120 1/2016 1/43200 1/1064448 691/19813248000 1/821145600 "
    "3617/88921857024000 43867/33392772661248000 174611/4225566645780480000 "
    "77683/61043723114250240000 236364091/6137043973665737932800000")
# (2 sin(u/2) - u cos(u/2)) / u^3, the radial-twist block of the exponential map
_JAC_SERIES = _fractions(
    "1/12 -1/480 1/53760 -1/11612160 1/4087480320 -1/2125489766400 "
    "1/1530352631808000 -1/1456895705481216000 1/1771585177865158656000")
_SINC_SERIES = tuple(LD(s) / LD(d) for d, s in
                     ((1, 1), (6, -1), (120, 1), (5040, -1), (362880, 1), (39916800, -1)))
_SERIES_CUTOFF = LD(1)
_SINC_CUTOFF = LD("0.01")


def _poly(u2, coeffs):
    acc = np.zeros_like(u2)
    for c in reversed(coeffs):
        acc = acc * u2 + c
    return acc


def _ld(a) -> np.ndarray:
    return np.asarray(a, dtype=LD)


def _sinc(u):
    """sin(u)/u, exact at 0."""
    u = _ld(u)
    small = np.abs(u) < _SINC_CUTOFF
    safe = np.where(small, LD(1), u)
    return np.where(small, _poly(u * u, _SINC_SERIES), np.sin(safe) / safe)


def _area_factor(u):
    """(u - sin u) / u^2 with a series branch near 0."""
    u = _ld(u)
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, LD(1), u)
    return np.where(small, u * _poly(u * u, _AREA_SERIES), (safe - np.sin(safe)) / safe**2)


_TWIST_SERIES_64 = tuple(float(c) for c in _TWIST_SERIES)
_TWIST_DERIV_SERIES_64 = tuple(float(c) for c in _TWIST_DERIV_SERIES)


def _twist(theta, series):
    small = np.abs(theta) < 1
    safe = np.where(small, 1, theta)
    direct = (safe - np.sin(safe)) / (8 * np.sin(safe / 2) ** 2)
    return np.where(small, theta * _poly(theta * theta, series), direct)


def _twist_slope(theta, series):
    small = np.abs(theta) < 1
    safe = np.where(small, 1, theta)
    s = np.sin(safe / 2)
    direct = 0.25 - (safe - np.sin(safe)) * np.cos(safe / 2) / (8 * s**3)
    return np.where(small, _poly(theta * theta, series), direct)


def twist_function(theta):
    """(theta - sin theta) / (8 sin^2(theta/2)); odd and increasing on (-2pi, 2pi)."""
    return _twist(_ld(theta), _TWIST_SERIES)


def _twist_derivative(theta):
    return _twist_slope(_ld(theta), _TWIST_DERIV_SERIES)


def solve_twist(ratio, bisect_width: float = 1e-3, max_newton: int = 60, polish: int = 3):
    """Invert the twist function: theta in (-2pi, 2pi) with f(theta) = ratio.

    Bisection narrows a bracket to ``bisect_width`` and safeguarded Newton
    polishes the root in float64; a few unguarded Newton steps in extended
    precision then take it to ~1e-19.
    """
    ratio = _ld(ratio)
    target = np.atleast_1d(np.abs(ratio))
    with np.errstate(over="ignore"):
        tgt = target.astype(float)  # beyond float range theta is 2pi to all digits
    lo = np.zeros_like(tgt)
    hi = np.full_like(tgt, 2 * np.pi)
    while np.any(hi - lo > bisect_width):
        mid = (lo + hi) / 2
        below = _twist(mid, _TWIST_SERIES_64) < tgt
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    theta = (lo + hi) / 2
    active = np.ones(theta.shape, dtype=bool)
    for _ in range(max_newton):
        th = theta[active]
        f = _twist(th, _TWIST_SERIES_64) - tgt[active]
        lo_a = np.where(f < 0, th, lo[active])
        hi_a = np.where(f > 0, th, hi[active])
        step = f / _twist_slope(th, _TWIST_DERIV_SERIES_64)
        # float64 steps stall at the last ulp; the extended-precision polish finishes
        still = np.abs(step) > 1e-14 * np.maximum(1.0, th)
        new = th - step
        new = np.where(still & ((new <= lo_a) | (new >= hi_a)), (lo_a + hi_a) / 2, new)
        lo[active], hi[active], theta[active] = lo_a, hi_a, new
        active[active] = still
        if not active.any():
            break
    theta = _ld(theta)
    for _ in range(polish):
        step = (twist_function(theta) - target) / _twist_derivative(theta)
        theta = np.clip(theta - step, LD(0), TWO_PI)
    theta = np.where(target == 0, LD(0), theta).reshape(ratio.shape)
    return np.copysign(theta, ratio)


def _to_complex(h):
    n = h.shape[-1] // 2
    return h[..., :n] + 1j * h[..., n:]


def _from_complex(c):
    return np.concatenate([c.real, c.imag], axis=-1)


@dataclass
class GeodesicParams:
    """Base point, horizontal covector chi and twist theta of a minimizing geodesic.

    Stored in extended precision; ``to_dict`` rounds to float64.
    """

    base: np.ndarray
    chi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.base = _ld(self.base)
        hgroup.ModelDims.from_dim(self.base.shape[-1])
        self.chi = _ld(self.chi)
        self.theta = _ld(self.theta)
        if self.chi.shape[-1] != self.base.shape[-1] - 1:
            raise ValueError("chi must have length 2n")
        if np.any(np.abs(self.theta) > TWO_PI * (1 + LD(1e-15))):
            raise ValueError("theta must lie in [-2pi, 2pi]")

    @property
    def length(self) -> np.ndarray:
        return np.sqrt(np.sum(self.chi**2, axis=-1)).astype(float)

    def to_dict(self) -> dict:
        return {"base": self.base.astype(float).tolist(),
                "chi": self.chi.astype(float).tolist(),
                "theta": self.theta.astype(float).tolist()}


@dataclass
class GeodesicSolveResult:
    params: GeodesicParams
    unique: np.ndarray


def _relative_point(chi, theta, t):
    """Point at time t of the geodesic from the origin (extended precision)."""
    t = _ld(t)
    u = theta * t
    chord = t * np.exp(0.5j * u) * _sinc(u / 2)
    horiz = _from_complex(_to_complex(chi) * chord[..., None])
    vert = np.sum(chi**2, axis=-1) / 2 * t**2 * _area_factor(u)
    return np.concatenate([horiz, vert[..., None]], axis=-1)


def _geodesic_point_ld(params: GeodesicParams, t) -> np.ndarray:
    rel = _relative_point(params.chi, params.theta, t)
    return hgroup.compose_raw(params.base, rel)


def geodesic_point(params: GeodesicParams, t) -> np.ndarray:
    """Evaluate the geodesic at time(s) t; t broadcasts against the batch of params."""
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(params.theta) > TWO_PI * (1 + LD(1e-15))):
        raise ValueError("theta must lie in [-2pi, 2pi]")
    return _geodesic_point_ld(params, t).astype(float)


def geodesic_velocity(params: GeodesicParams, t) -> np.ndarray:
    """Frame coefficients of the velocity: the rotated control chi_c e^{i theta t}."""
    rot = np.exp(1j * params.theta * _ld(t))
    return _from_complex(_to_complex(params.chi) * rot[..., None]).astype(float)


def _solve_ld(x, y) -> GeodesicSolveResult:
    w = hgroup.compose_raw(-x, y)
    zeta = _to_complex(w[..., :-1])
    r2 = np.sum(np.abs(zeta) ** 2, axis=-1)
    z = w[..., -1]
    if np.any((r2 == 0) & (z == 0)):
        raise ValueError("x == y: no nontrivial geodesic")
    unique = r2 > 0
    theta = np.array(np.copysign(TWO_PI, z))
    if np.any(unique):
        theta[unique] = solve_twist(z[unique] / r2[unique])

    # zeta(1) = chi_c e^{i theta/2} sinc(theta/2)  =>  invert for chi_c
    half = np.where(unique, theta, LD(0)) / 2
    chi_c = zeta * (np.exp(-1j * half) / _sinc(half))[..., None]
    chi = _from_complex(chi_c)
    # Near |theta| = 2pi the twist equation is badly conditioned; rescaling chi
    # so the endpoint height matches z moves the horizontal endpoint far less.
    reached = _relative_point(chi, theta, LD(1))[..., -1]
    fix = unique & (reached != 0) & (z != 0)
    chi = chi * np.sqrt(np.where(fix, z / np.where(fix, reached, LD(1)), LD(1)))[..., None]

    center_chi = np.zeros_like(chi)
    center_chi[..., 0] = np.sqrt(4 * PI * np.abs(z))
    chi = np.where(unique[..., None], chi, center_chi)
    return GeodesicSolveResult(GeodesicParams(x, chi, theta), unique)


def solve_geodesic(x, y) -> GeodesicSolveResult:
    """Minimizing geodesic from x to y parametrized on [0, 1].

    Off the center (x^{-1} y not vertical) the geodesic is unique.  For
    center pairs the canonical selection puts chi on the first horizontal
    axis with theta = +-2pi.
    """
    x = hgroup.as_point(x)
    y = hgroup.as_point(y)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError("dimension mismatch")
    x, y = np.broadcast_arrays(_ld(x), _ld(y))
    return _solve_ld(x, y)


def cc_distance(x, y) -> np.ndarray:
    x = hgroup.as_point(x)
    y = hgroup.as_point(y)
    x, y = np.broadcast_arrays(x, y)
    same = np.all(x == y, axis=-1)
    out = np.zeros(same.shape)
    if np.any(~same):
        out[~same] = solve_geodesic(x[~same], y[~same]).params.length
    return out


def select_point(x, y, t) -> np.ndarray:
    """S_t(x, y): the point at fraction t along the selected geodesic from x to y."""
    x = hgroup.as_point(x)
    y = hgroup.as_point(y)
    x, y = np.broadcast_arrays(x, y)
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    out = np.array(x, dtype=float)
    moving = ~np.all(x == y, axis=-1)
    if np.any(moving):
        res = solve_geodesic(x[moving], y[moving])
        out[moving] = geodesic_point(res.params, t[moving])
    at_end = t == 1
    out[at_end] = y[at_end]
    return out


def contraction_exponent(n: int) -> int:
    return 2 * n + 3


def jacobian_det(x, ybar, t, step: float | None = None) -> np.ndarray:
    """Central-difference Jacobian determinant of x -> S_t(x, ybar).

    The default step is 1e-5 (1 + |x|).  Raises if x lies on ybar . L, where
    the map is not smooth.
    """
    x = hgroup.as_point(x)
    ybar = hgroup.as_point(ybar)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], ybar.shape[:-1], t.shape)
    x = np.broadcast_to(x, shape + x.shape[-1:])
    ybar = np.broadcast_to(ybar, shape + ybar.shape[-1:])
    t = np.broadcast_to(t, shape)
    if np.any((t <= 0) | (t >= 1)):
        raise ValueError("t must lie in (0, 1)")
    if np.any(np.all(x[..., :-1] == ybar[..., :-1], axis=-1)):
        raise ValueError("x lies on ybar . L: S_t(., ybar) is singular there")
    d = x.shape[-1]
    if step is None:
        hstep = 1e-5 * (1.0 + np.linalg.norm(x, axis=-1))
    else:
        hstep = np.full(x.shape[:-1], float(step))
    hstep = _ld(hstep)
    xl, yl = _ld(x), _ld(ybar)
    jac = np.empty(x.shape[:-1] + (d, d), dtype=LD)
    for k in range(d):
        dx = np.zeros(x.shape, dtype=LD)
        dx[..., k] = hstep
        plus = _geodesic_point_ld(_solve_ld(xl + dx, yl).params, _ld(t))
        minus = _geodesic_point_ld(_solve_ld(xl - dx, yl).params, _ld(t))
        jac[..., :, k] = (plus - minus) / (2 * hstep[..., None])
    return np.linalg.det(jac.astype(float))


def _jac_bracket(u):
    u = _ld(u)
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, LD(1), u)
    direct = (2 * np.sin(safe / 2) - safe * np.cos(safe / 2)) / safe**3
    return np.where(small, _poly(u * u, _JAC_SERIES), direct)


def _exp_volume_factor(theta, n: int):
    """theta-dependent part of det D exp at (chi, theta), up to the factor |chi|^2."""
    return _sinc(theta / 2) ** (2 * n - 1) * _jac_bracket(theta)


def jacobian_det_closed(x, ybar, t) -> np.ndarray:
    """Closed-form det of x -> S_t(x, ybar) off ybar . L.

    Writing x = ybar . exp(chi, theta) with s = 1 - t, S_t(x, ybar) is
    ybar . exp(s chi, s theta); polar coordinates in chi give the volume
    factor of exp as |chi|^2 sinc(theta/2)^(2n-1) K(theta), hence
    det = s^(2n+3) H(s theta) / H(theta).
    """
    x = hgroup.as_point(x)
    ybar = hgroup.as_point(ybar)
    t = np.asarray(t, dtype=float)
    if np.any((t <= 0) | (t >= 1)):
        raise ValueError("t must lie in (0, 1)")
    if np.any(np.all(x[..., :-1] == ybar[..., :-1], axis=-1)):
        raise ValueError("x lies on ybar . L: S_t(., ybar) is singular there")
    n = (x.shape[-1] - 1) // 2
    theta = solve_geodesic(ybar, x).params.theta
    return contraction_det(theta, 1 - t, n)


def contraction_det(theta, s, n: int) -> np.ndarray:
    """det of ybar . exp(chi, theta) -> ybar . exp(s chi, s theta), for s in (0, 1]."""
    s = _ld(s)
    theta = _ld(theta)
    ratio = _exp_volume_factor(s * theta, n) / _exp_volume_factor(theta, n)
    return (s ** contraction_exponent(n) * ratio).astype(float)


def preimage_toward(z, y, t):
    """Invert x -> S_t(x, y): the x with S_t(x, y) = z, or NaN if z is not in the image.

    The geodesic from y through z is stretched by 1/(1-t); z is in the image
    exactly when the stretched geodesic is still minimizing (|theta| <= 2pi).
    """
    z = hgroup.as_point(z)
    y = hgroup.as_point(y)
    z, y = np.broadcast_arrays(z, y)
    scale = 1 / (1 - LD(t))
    out = np.full(z.shape, np.nan)
    moving = ~np.all(z == y, axis=-1)
    out[~moving] = y[~moving]
    if np.any(moving):
        res = solve_geodesic(y[moving], z[moving])
        theta = res.params.theta * scale
        ok = res.unique & (np.abs(theta) < TWO_PI)
        stretched = GeodesicParams(res.params.base, res.params.chi * scale,
                                   np.clip(theta, -TWO_PI, TWO_PI))
        pts = geodesic_point(stretched, 1.0)
        pts[~ok] = np.nan
        out[moving] = pts
    return out


@dataclass
class MCPReport:
    t: float
    exponent: int
    samples: int
    seed: int
    volume_E: float
    se_E: float
    volume_image: float
    se_image: float
    ratio: float
    bound: float
    slack: float
    holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mcp_ratio(center, radius: float, y, t: float, samples: int = 100_000, seed: int = 0) -> MCPReport:
    """Monte Carlo check of L(E) <= (1-t)^-(2n+3) L(S_t(E, y)) for a Euclidean ball E.

    Both volumes are hit-or-miss estimates; membership in S_t(E, y) is decided
    by pulling candidate points back through ``preimage_toward``.
    """
    center = hgroup.as_point(center)
    y = hgroup.as_point(y)
    if not radius > 0:
        raise ValueError("ball radius must be positive")
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if not 0 < t < 1:
        raise ValueError("t must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    d = center.shape[-1]
    n = (d - 1) // 2

    cube = center + radius * rng.uniform(-1.0, 1.0, size=(samples, d))
    inside = np.linalg.norm(cube - center, axis=-1) <= radius
    cube_vol = (2.0 * radius) ** d
    frac_E = inside.mean()
    vol_E = cube_vol * frac_E
    se_E = cube_vol * np.sqrt(frac_E * (1 - frac_E) / samples)

    img = select_point(cube[inside], y, t)
    lo, hi = img.min(axis=0), img.max(axis=0)
    pad = 0.1 * (hi - lo) + 1e-9
    lo, hi = lo - pad, hi + pad
    box_vol = float(np.prod(hi - lo))

    cand = rng.uniform(lo, hi, size=(samples, d))
    pre = preimage_toward(cand, y, t)
    hit = np.isfinite(pre[:, 0]) & (np.linalg.norm(pre - center, axis=-1) <= radius)
    frac_I = hit.mean()
    vol_I = box_vol * frac_I
    se_I = box_vol * np.sqrt(frac_I * (1 - frac_I) / samples)

    bound = (1.0 - t) ** (-contraction_exponent(n))
    slack = 3.0 * np.hypot(se_E, bound * se_I)
    ratio = vol_E / vol_I if vol_I > 0 else np.inf
    return MCPReport(
        t=float(t), exponent=contraction_exponent(n), samples=int(samples), seed=int(seed),
        volume_E=float(vol_E), se_E=float(se_E), volume_image=float(vol_I), se_image=float(se_I),
        ratio=float(ratio), bound=float(bound), slack=float(slack),
        holds=bool(vol_E <= bound * vol_I + slack),
    )
