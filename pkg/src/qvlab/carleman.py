"""Weighted annular inequalities: Carleman-type bounds, three-sphere and
doubling estimates, and the bent-weight variant.

Every checker computes both sides of its inequality by quadrature and
reports the empirical constant; no constant is ever assumed. Weights are
powers of |x| (or exp(-2 tau phi(log|x|)) for the bent variant) against an
annular cutoff chi supported away from the origin, where the power weights
are smooth.

Exponent convention: with tau > 0 and eta = (2 tau - n + 2) / 2, the
squared-mass term on the weighted left side carries exponent
E = 2 tau + 2 - 2 eps by default ("proof" variant); the alternative
E = 2 tau + 2 - eps ("statement" variant) is available behind a flag and
both values are logged whenever eps > 0 makes them differ.

The bent weight phi_delta is documented to satisfy a bound on
|phi' - 1| + |phi''| (the weight is a small bend of phi(t) = t, so the
bound must be on the deviation of phi' from 1, not on |phi'| itself);
build_phi_delta certifies both sups numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import QField
from .report import CheckReport
from .variational import (
    QuadratureSpec,
    REFERENCE_QUAD,
    Region,
    annulus,
    ball,
    integrate_region,
    l2_mass,
)

CONVERGENCE_REL_TOL = 1e-4
LINEAR_SLOPE_CAP = 1.0
SMOOTH_SLOPE_CAP = 15.0 / 8.0  # peak slope of the quintic ramp


class CutoffConstructionError(ValueError):
    pass


class BentWeightError(ValueError):
    pass


def _quintic(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _quintic_d(t: np.ndarray) -> np.ndarray:
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    return np.where(inside, 30.0 * t * t * (1.0 - t) ** 2, 0.0)


@dataclass(frozen=True)
class CutoffProfile:
    """Annular cutoff vanishing near the origin.

    kind "piecewise-linear-annular" ramps linearly (the default used in the
    estimates); "smoothed" uses quintic ramps to confirm that verdicts do
    not depend on cutoff regularity. chi is 1 on [a_lo, a_hi] and 0 outside
    [a_in, a_out]; the slope bound |Dchi| <= cap / min ramp width holds with
    cap 1 (linear) or 15/8 (smoothed).
    """

    kind: str
    radii: tuple
    center: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("piecewise-linear-annular", "smoothed"):
            raise CutoffConstructionError("unknown cutoff kind %r" % (self.kind,))
        a_in, a_lo, a_hi, a_out = self.radii
        if not (0.0 < a_in < a_lo <= a_hi < a_out):
            raise CutoffConstructionError(
                "cutoff radii must satisfy 0 < a_in < a_lo <= a_hi < a_out, got %r"
                % (self.radii,))
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def min_ramp(self) -> float:
        a_in, a_lo, a_hi, a_out = self.radii
        return min(a_lo - a_in, a_out - a_hi)

    @property
    def slope_bound(self) -> float:
        cap = LINEAR_SLOPE_CAP if self.kind == "piecewise-linear-annular" else SMOOTH_SLOPE_CAP
        return cap / self.min_ramp

    def breakpoints(self):
        return self.radii

    def support(self, n: int) -> Region:
        center = self.center if len(self.center) == n else (0.0,) * n
        return annulus(center, self.radii[0], self.radii[3])

    def chi_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        a_in, a_lo, a_hi, a_out = self.radii
        up = (r - a_in) / (a_lo - a_in)
        down = (a_out - r) / (a_out - a_hi)
        if self.kind == "smoothed":
            up = _quintic(up)
            down = _quintic(down)
        else:
            up = np.clip(up, 0.0, 1.0)
            down = np.clip(down, 0.0, 1.0)
        return np.where(r < a_lo, up, np.where(r > a_hi, down, 1.0))

    def dchi_r(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        a_in, a_lo, a_hi, a_out = self.radii
        if self.kind == "smoothed":
            up = _quintic_d((r - a_in) / (a_lo - a_in)) / (a_lo - a_in)
            down = -_quintic_d((a_out - r) / (a_out - a_hi)) / (a_out - a_hi)
        else:
            up = np.where((r > a_in) & (r < a_lo), 1.0 / (a_lo - a_in), 0.0)
            down = np.where((r > a_hi) & (r < a_out), -1.0 / (a_out - a_hi), 0.0)
        return np.where(r < a_lo, up, np.where(r > a_hi, down, 0.0))


def linear_cutoff(a_in, a_lo, a_hi, a_out) -> CutoffProfile:
    return CutoffProfile(kind="piecewise-linear-annular", radii=(a_in, a_lo, a_hi, a_out))


def smoothed_cutoff(a_in, a_lo, a_hi, a_out) -> CutoffProfile:
    return CutoffProfile(kind="smoothed", radii=(a_in, a_lo, a_hi, a_out))


@dataclass(frozen=True)
class WeightSpec:
    """Power weight parameters: tau > 0, eps >= 0, and the left-side
    mass-term exponent variant. eta is always recomputed from tau and the
    domain dimension, never stored."""

    tau: float
    eps: float = 0.0
    exponent_variant: str = "proof"

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.eps < 0.0:
            raise ValueError("eps must be nonnegative")
        if self.exponent_variant not in ("proof", "statement"):
            raise ValueError("exponent_variant must be proof or statement")

    def eta(self, n: int) -> float:
        return (2.0 * self.tau - n + 2.0) / 2.0

    def mass_exponent(self, variant: str | None = None) -> float:
        v = variant or self.exponent_variant
        if v == "proof":
            return 2.0 * self.tau + 2.0 - 2.0 * self.eps
        return 2.0 * self.tau + 2.0 - self.eps


def eta_tuned_tau(kappa: float, n: int) -> float:
    """The tau for which eta = kappa, i.e. tau = (2 kappa + n - 2) / 2."""
    return (2.0 * kappa + n - 2.0) / 2.0


# ---------------------------------------------------------------------------
# shared machinery for the weighted two-sided checks


def _require_origin_cutoff(cutoff: CutoffProfile) -> None:
    if any(c != 0.0 for c in cutoff.center):
        raise ValueError("weighted checks require a cutoff centered at the origin")


def _two_sided_report(name, f, params, lhs_fn, rhs_fn, quad, extra=None,
                      signed_lhs=False):
    """Evaluate both sides at the reference and a refined resolution,
    assemble the standard ratio report with the convergence flag."""
    lhs = lhs_fn(quad)
    rhs = rhs_fn(quad)
    fine = quad.refined()
    lhs2 = lhs_fn(fine)
    rhs2 = rhs_fn(fine)

    # a side sitting at roundoff level relative to the dominant magnitude
    # carries no convergence information, so it passes automatically
    scale = max(abs(lhs), abs(rhs), abs(lhs2), abs(rhs2))

    def _converged(a, b):
        if max(abs(a), abs(b)) <= 1e-12 * scale:
            return True
        return abs(a - b) <= CONVERGENCE_REL_TOL * max(abs(a), abs(b), 1e-30)

    converged = _converged(lhs, lhs2) and _converged(rhs, rhs2)
    notes = []
    if not converged:
        notes.append("two-resolution disagreement above %g relative" % CONVERGENCE_REL_TOL)
    if rhs == 0.0:
        if lhs > 0.0:
            verdict = "fail"
            ratio = math.inf
            notes.append("right side vanished while left side is positive")
        else:
            verdict = "pass"
            ratio = 0.0
    else:
        ratio = lhs / rhs
        trivially_true = signed_lhs and lhs <= 0.0
        verdict = "pass" if converged and (math.isfinite(ratio) or trivially_true) else "fail"
    quantities = {"lhs": lhs, "rhs": rhs, "ratio": ratio,
                  "lhs_refined": lhs2, "rhs_refined": rhs2}
    if extra:
        quantities.update(extra)
    return CheckReport(
        name=name,
        field_spec=f.tag,
        params=params,
        quantities=quantities,
        resolutions=quad.meta(),
        verdict=verdict,
        notes=tuple(notes),
    )


def carleman_sides(f: QField, w: WeightSpec, cutoff: CutoffProfile,
                   quad: QuadratureSpec = REFERENCE_QUAD) -> CheckReport:
    """Both sides of the full weighted estimate.

    lhs = int chi sum_i ( eps^2 |f_i|^2 / |x|^E
                          + |Df_i . x - eta f_i|^2 / |x|^{2 tau + 2} ),
    rhs = int |Dchi| sum_i ( |Df_i|^2 / |x|^{2 tau - 1}
                             + |f_i|^2 / |x|^{2 tau + 1} ).
    """
    _require_origin_cutoff(cutoff)
    eta = w.eta(f.n)
    tau = w.tau
    support = cutoff.support(f.n)
    bps = cutoff.breakpoints()
    exponent = w.mass_exponent()

    def lhs_density_for(expval):
        def density(X, r, vals, grads):
            chi = cutoff.chi_r(r)
            radial = np.einsum("nqmk,nk->nqm", grads, X)
            sq = radial - eta * vals
            main = np.einsum("nqm,nqm->n", sq, sq) / r ** (2.0 * tau + 2.0)
            mass = np.einsum("nqm,nqm->n", vals, vals)
            return chi * (w.eps ** 2 * mass / r ** expval + main)
        return density

    def rhs_density(X, r, vals, grads):
        dchi = np.abs(cutoff.dchi_r(r))
        dmag = np.einsum("nqmk,nqmk->n", grads, grads)
        mass = np.einsum("nqm,nqm->n", vals, vals)
        return dchi * (dmag / r ** (2.0 * tau - 1.0) + mass / r ** (2.0 * tau + 1.0))

    def lhs_fn(q):
        return integrate_region(f, support, q, lhs_density_for(exponent), breakpoints=bps)

    def rhs_fn(q):
        return integrate_region(f, support, q, rhs_density, breakpoints=bps)

    extra = {"eta": eta, "mass_exponent": exponent}
    if w.eps > 0.0:
        other = "statement" if w.exponent_variant == "proof" else "proof"
        other_exp = w.mass_exponent(other)
        extra["mass_exponent_" + other] = other_exp
        extra["lhs_" + other + "_variant"] = integrate_region(
            f, support, quad, lhs_density_for(other_exp), breakpoints=bps)
    return _two_sided_report(
        "carleman", f,
        {"tau": tau, "eps": w.eps, "exponent_variant": w.exponent_variant,
         "cutoff": {"kind": cutoff.kind, "radii": cutoff.radii}},
        lhs_fn, rhs_fn, quad, extra=extra)


def first_carleman_sides(f: QField, tau: float, cutoff: CutoffProfile,
                         quad: QuadratureSpec = REFERENCE_QUAD) -> CheckReport:
    """The completed-square estimate: eps = 0, no mass term on the left."""
    _require_origin_cutoff(cutoff)
    w = WeightSpec(tau=tau)
    eta = w.eta(f.n)
    support = cutoff.support(f.n)
    bps = cutoff.breakpoints()

    def lhs_density(X, r, vals, grads):
        chi = cutoff.chi_r(r)
        radial = np.einsum("nqmk,nk->nqm", grads, X)
        sq = radial - eta * vals
        return chi * np.einsum("nqm,nqm->n", sq, sq) / r ** (2.0 * tau + 2.0)

    def rhs_density(X, r, vals, grads):
        dchi = np.abs(cutoff.dchi_r(r))
        dmag = np.einsum("nqmk,nqmk->n", grads, grads)
        mass = np.einsum("nqm,nqm->n", vals, vals)
        return dchi * (dmag / r ** (2.0 * tau - 1.0) + mass / r ** (2.0 * tau + 1.0))

    def lhs_fn(q):
        return integrate_region(f, support, q, lhs_density, breakpoints=bps)

    def rhs_fn(q):
        return integrate_region(f, support, q, rhs_density, breakpoints=bps)

    return _two_sided_report(
        "first-carleman", f,
        {"tau": tau, "cutoff": {"kind": cutoff.kind, "radii": cutoff.radii}},
        lhs_fn, rhs_fn, quad, extra={"eta": eta})


def pre_carleman_sides(f: QField, tau: float, cutoff: CutoffProfile,
                       quad: QuadratureSpec = REFERENCE_QUAD) -> CheckReport:
    """The pre-square estimate with signed left side.

    lhs = int chi sum_i ( |d_r f_i|^2 / |x|^{2 tau}
                          - eta^2 |f_i|^2 / |x|^{2 tau + 2} ),
    rhs = (eta / tau) int |Dchi| sum_i ( |Df_i|^2 / |x|^{2 tau - 1}
                                         + |f_i|^2 / |x|^{2 tau + 1} ).
    The left side may be negative, in which case the bound holds trivially.
    """
    _require_origin_cutoff(cutoff)
    w = WeightSpec(tau=tau)
    eta = w.eta(f.n)
    support = cutoff.support(f.n)
    bps = cutoff.breakpoints()

    def lhs_density(X, r, vals, grads):
        chi = cutoff.chi_r(r)
        radial = np.einsum("nqmk,nk->nqm", grads, X) / r[:, None, None]
        rad_sq = np.einsum("nqm,nqm->n", radial, radial)
        mass = np.einsum("nqm,nqm->n", vals, vals)
        return chi * (rad_sq / r ** (2.0 * tau) - eta ** 2 * mass / r ** (2.0 * tau + 2.0))

    def rhs_density(X, r, vals, grads):
        dchi = np.abs(cutoff.dchi_r(r))
        dmag = np.einsum("nqmk,nqmk->n", grads, grads)
        mass = np.einsum("nqm,nqm->n", vals, vals)
        return dchi * (dmag / r ** (2.0 * tau - 1.0) + mass / r ** (2.0 * tau + 1.0))

    def lhs_fn(q):
        return integrate_region(f, support, q, lhs_density, breakpoints=bps)

    def rhs_fn(q):
        return (eta / tau) * integrate_region(f, support, q, rhs_density, breakpoints=bps)

    return _two_sided_report(
        "pre-carleman", f,
        {"tau": tau, "cutoff": {"kind": cutoff.kind, "radii": cutoff.radii}},
        lhs_fn, rhs_fn, quad, extra={"eta": eta}, signed_lhs=True)


# ---------------------------------------------------------------------------
# three-sphere and doubling


class RadiusHypothesisError(ValueError):
    """A three-sphere radius precondition failed; the message names it."""


def shell_mass(f: QField, x, r: float, quad: QuadratureSpec = REFERENCE_QUAD) -> float:
    """Squared mass of the dyadic shell B_2r minus B_r about x."""
    return l2_mass(f, annulus(x, r, 2.0 * r), quad)


def three_sphere_check(f: QField, x, r1: float, r2: float, r3: float, tau: float,
                       quad: QuadratureSpec = REFERENCE_QUAD) -> CheckReport:
    """Empirical constant of the three-annulus inequality.

    lhs = [1/(1+log(r3/r2)^2) + 1/(1+log(r2/r1)^2)] M(r2) / r2^{2 tau},
    rhs = M(r1) / r1^{2 tau} + M(r3) / r3^{2 tau},
    with M(r) the squared mass of B_2r minus B_r(x). The case split of the
    underlying argument (rescale to the end the middle radius is closer to)
    and the matching eps recipe are recorded.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    if not (r1 < r2 < r3):
        raise RadiusHypothesisError("need r1 < r2 < r3, got %g, %g, %g" % (r1, r2, r3))
    if r3 / r2 <= 2.0:
        raise RadiusHypothesisError("ratio r3/r2 = %g must exceed 2" % (r3 / r2))
    if r2 / r1 <= 2.0:
        raise RadiusHypothesisError("ratio r2/r1 = %g must exceed 2" % (r2 / r1))
    if math.isfinite(f.domain_radius):
        bound = (f.domain_radius - float(np.linalg.norm(x_arr))) / 2.0
        if not r3 < bound:
            raise RadiusHypothesisError(
                "outer radius r3 = %g must stay below (R - |x|)/2 = %g" % (r3, bound))

    def masses(q):
        return (shell_mass(f, x_arr, r1, q), shell_mass(f, x_arr, r2, q),
                shell_mass(f, x_arr, r3, q))

    m1, m2, m3 = masses(quad)
    m1f, m2f, m3f = masses(quad.refined())
    converged = all(abs(a - b) <= CONVERGENCE_REL_TOL * max(abs(a), abs(b), 1e-30)
                    for a, b in ((m1, m1f), (m2, m2f), (m3, m3f)))
    log32 = math.log(r3 / r2)
    log21 = math.log(r2 / r1)
    weight = 1.0 / (1.0 + log32 ** 2) + 1.0 / (1.0 + log21 ** 2)
    lhs = weight * m2 / r2 ** (2.0 * tau)
    rhs = m1 / r1 ** (2.0 * tau) + m3 / r3 ** (2.0 * tau)
    if log32 > log21:
        case = "rescale-to-r1"
        eps = 1.0 / math.sqrt(1.0 + log21 ** 2)
    else:
        case = "rescale-to-r3"
        eps = 1.0 / math.sqrt(1.0 + log32 ** 2)
    notes = []
    if rhs == 0.0:
        c_est = 0.0 if lhs == 0.0 else math.inf
        verdict = "pass" if lhs == 0.0 else "fail"
    else:
        c_est = lhs / rhs
        verdict = "pass" if (math.isfinite(c_est) and converged) else "fail"
    if not converged:
        notes.append("two-resolution disagreement above %g relative" % CONVERGENCE_REL_TOL)
    return CheckReport(
        name="three-sphere",
        field_spec=f.tag,
        params={"center": tuple(x_arr.tolist()), "r1": r1, "r2": r2, "r3": r3, "tau": tau},
        quantities={"lhs": lhs, "rhs": rhs, "c_est": c_est,
                    "shell_mass_r1": m1, "shell_mass_r2": m2, "shell_mass_r3": m3,
                    "eps_recipe": eps},
        resolutions=quad.meta(),
        verdict=verdict,
        notes=tuple(notes),
        provenance={"case": case},
    )


UNDERFLOW_MASS = 1e-280


def doubling_check(f: QField, x, r: float, kappa_x: float,
                   quad: QuadratureSpec = REFERENCE_QUAD, eta_abs: float = 0.1,
                   levels: int = 3, drift_tol: float = 0.25) -> CheckReport:
    """Doubling constant of the squared mass at self-selected small scales.

    Starting from r the op scans dyadically downward until the absorption
    criterion eps^{2 eta_abs} < 1/2 holds (the scale at which the
    higher-radius term of the underlying argument can be reabsorbed), then
    reports C_est(eps) = mass(B_2eps) / mass(B_eps) over `levels` dyadic
    scales from there. Pass requires every C_est finite with relative drift
    at most drift_tol; a vanishing denominator yields a diagnostic verdict.
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    eps = float(r)
    guard = 0
    while eps ** (2.0 * eta_abs) >= 0.5 and guard < 200:
        eps *= 0.5
        guard += 1
    r_x = eps
    scales, ratios = [], []
    trivial = False
    for j in range(levels):
        scale = r_x * 0.5 ** j
        denom = l2_mass(f, ball(x_arr, scale), quad)
        numer = l2_mass(f, ball(x_arr, 2.0 * scale), quad)
        scales.append(scale)
        if denom <= UNDERFLOW_MASS:
            trivial = True
            ratios.append(math.inf if numer > denom else 1.0)
            break
        ratios.append(numer / denom)
    tau_abs = (2.0 * kappa_x + f.n + 4.0 * eta_abs) / 2.0
    expected = 2.0 ** (2.0 * kappa_x + f.n)
    if trivial:
        verdict = "diagnostic"
        notes = ("squared mass below underflow threshold: trivial near x",)
        drift = 0.0
    else:
        finite = all(math.isfinite(c) for c in ratios)
        drift = 0.0
        if len(ratios) >= 2:
            drift = max(abs(a - b) / max(abs(b), 1e-300)
                        for a, b in zip(ratios[:-1], ratios[1:]))
        verdict = "pass" if (finite and drift <= drift_tol) else "fail"
        notes = ()
    return CheckReport(
        name="doubling",
        field_spec=f.tag,
        params={"center": tuple(x_arr.tolist()), "r": r, "kappa_x": kappa_x,
                "eta_abs": eta_abs, "levels": levels, "drift_tol": drift_tol},
        quantities={"absorption_scale": r_x,
                    "absorption_value": r_x ** (2.0 * eta_abs),
                    "tau_abs": tau_abs,
                    "scales": scales, "c_est": ratios,
                    "c_est_final": ratios[-1] if ratios else math.nan,
                    "expected_homogeneous": expected, "drift": drift},
        resolutions=quad.meta(),
        verdict=verdict,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# bent weight


def _hermite(t, a, b, p0, m0, p1, m1, order):
    """Cubic Hermite interpolant on [a, b] with endpoint values p0, p1 and
    endpoint slopes m0, m1; order 0/1/2 selects value/derivative/second."""
    length = b - a
    s = (t - a) / length
    if order == 0:
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return h00 * p0 + h10 * length * m0 + h01 * p1 + h11 * length * m1
    if order == 1:
        h00 = 6 * s ** 2 - 6 * s
        h10 = 3 * s ** 2 - 4 * s + 1
        h01 = -6 * s ** 2 + 6 * s
        h11 = 3 * s ** 2 - 2 * s
        return (h00 * p0 + h10 * length * m0 + h01 * p1 + h11 * length * m1) / length
    h00 = 12 * s - 6
    h10 = 6 * s - 4
    h01 = -12 * s + 6
    h11 = 6 * s - 2
    return (h00 * p0 + h10 * length * m0 + h01 * p1 + h11 * length * m1) / length ** 2


@dataclass(frozen=True)
class BentWeight:
    """phi(t) = t + delta psi(t), a bend of the straight weight exponent.

    psi is the delta-independent shape with psi(t) = -t outside
    [log 2 r1, log r2] and psi(t) = 2 t on the middle window
    [log sqrt(r1 r2), log 2 sqrt(r1 r2)], joined by C^1 cubic connectors.
    On the two ramp windows phi equals the shallow line (1 - delta) t and
    on the middle window it equals the steep line (1 + 2 delta) t, so the
    weight exp(-2 tau phi) is amplified on the middle annulus and eased at
    the two ends. The certified sups bound |phi' - 1| and |phi''|; both
    are exactly linear in delta."""

    delta: float
    r1: float
    r2: float
    sup_dphi_minus_1: float
    sup_d2phi: float
    _knots: tuple

    def phi(self, t):
        return np.asarray(t, dtype=float) + self.delta * self.psi(t)

    def dphi(self, t):
        return 1.0 + self.delta * self.psi(t, order=1)

    def d2phi(self, t):
        return self.delta * self.psi(t, order=2)

    def knot_radii(self) -> tuple:
        """Radii where the weight exponent switches analytic pieces."""
        return tuple(math.exp(t) for t in self._knots)

    def psi(self, t, order: int = 0):
        t = np.asarray(t, dtype=float)
        ta, tm, tm2, tb = self._knots
        if order == 0:
            flat = -t
            mid = 2.0 * t
        elif order == 1:
            flat = np.full(t.shape, -1.0)
            mid = np.full(t.shape, 2.0)
        else:
            flat = np.zeros(t.shape)
            mid = np.zeros(t.shape)
        rise = _hermite(t, ta, tm, -ta, -1.0, 2.0 * tm, 2.0, order)
        fall = _hermite(t, tm2, tb, 2.0 * tm2, 2.0, -tb, -1.0, order)
        out = np.where(t <= ta, flat,
                       np.where(t < tm, rise,
                                np.where(t <= tm2, mid,
                                         np.where(t < tb, fall, flat))))
        return out


def build_phi_delta(delta: float, r1: float, r2: float) -> BentWeight:
    """Construct the bent weight exponent and certify its interval properties.

    Requires r2 > 4 r1 (so the middle window clears both ramp windows) and
    r2 <= 1/2 (the bend is meant for radii below scale one). The interval
    comparisons hold with equality by construction; they are still checked
    numerically on dense grids as a defense against geometry mistakes."""
    if delta < 0.0:
        raise BentWeightError("delta must be nonnegative")
    if not (0.0 < r1 < r2):
        raise BentWeightError("need 0 < r1 < r2")
    if r2 <= 4.0 * r1:
        raise BentWeightError("need r2 > 4 r1 so the bend windows are ordered")
    if r2 > 0.5:
        raise BentWeightError("need r2 <= 1/2 so the bend sits at radii below scale one")
    ta = math.log(2.0 * r1)
    tm = math.log(math.sqrt(r1 * r2))
    tm2 = math.log(2.0 * math.sqrt(r1 * r2))
    tb = math.log(r2)
    knots = (ta, tm, tm2, tb)

    bent = BentWeight(delta=float(delta), r1=float(r1), r2=float(r2),
                      sup_dphi_minus_1=0.0, sup_d2phi=0.0, _knots=knots)
    grid = np.linspace(math.log(r1) - 0.5, math.log(2.0 * r2) + 0.5, 20001)
    sup1 = float(np.max(np.abs(bent.dphi(grid) - 1.0)))
    sup2 = float(np.max(np.abs(bent.d2phi(grid))))
    bent = BentWeight(delta=float(delta), r1=float(r1), r2=float(r2),
                      sup_dphi_minus_1=sup1, sup_d2phi=sup2, _knots=knots)

    # certify the three documented interval properties
    low = np.concatenate([np.linspace(math.log(r1), math.log(2.0 * r1), 101),
                          np.linspace(math.log(r2), math.log(2.0 * r2), 101)])
    tol = 1e-12 * (1.0 + np.abs(low))
    if np.any(bent.phi(low) < (1.0 - delta) * low - tol):
        raise BentWeightError("lower comparison phi(t) >= (1 - delta) t violated "
                              "on the outer ramp windows")
    midw = np.linspace(tm, tm2, 101)
    tol = 1e-12 * (1.0 + np.abs(midw))
    if np.any(bent.phi(midw) > (1.0 + 2.0 * delta) * midw + tol):
        raise BentWeightError("upper comparison phi(t) <= (1 + 2 delta) t violated "
                              "on the middle window")
    return bent


def modified_carleman_sides(f: QField, tau: float, bent: BentWeight,
                            cutoff: CutoffProfile,
                            quad: QuadratureSpec = REFERENCE_QUAD) -> CheckReport:
    """Both sides of the bent-weight estimate, three integrals reported.

    lhs = int chi sum_i |d_r f_i - eta f_i / |x||^2 e^{-2 tau phi(log|x|)};
    rhs boundary term = int |Dchi| sum_i (|x| |Df_i|^2 + |f_i|^2/|x|) w;
    rhs bulk term = (sup|phi'-1| + sup|phi''|)
                    int chi sum_i (|Df_i|^2 + |f_i|^2/|x|^2) w.
    At delta = 0 the weight is |x|^{-2 tau} and the check reduces exactly
    to the completed-square estimate.
    """
    _require_origin_cutoff(cutoff)
    eta = WeightSpec(tau=tau).eta(f.n)
    support = cutoff.support(f.n)
    bps = tuple(sorted(set(cutoff.breakpoints()) | set(bent.knot_radii())))
    bulge = bent.sup_dphi_minus_1 + bent.sup_d2phi

    def weight(r):
        return np.exp(-2.0 * tau * bent.phi(np.log(r)))

    def lhs_density(X, r, vals, grads):
        chi = cutoff.chi_r(r)
        radial = np.einsum("nqmk,nk->nqm", grads, X) / r[:, None, None]
        sq = radial - (eta / r)[:, None, None] * vals
        return chi * np.einsum("nqm,nqm->n", sq, sq) * weight(r)

    def boundary_density(X, r, vals, grads):
        dchi = np.abs(cutoff.dchi_r(r))
        dmag = np.einsum("nqmk,nqmk->n", grads, grads)
        mass = np.einsum("nqm,nqm->n", vals, vals)
        return dchi * (r * dmag + mass / r) * weight(r)

    def bulk_density(X, r, vals, grads):
        chi = cutoff.chi_r(r)
        dmag = np.einsum("nqmk,nqmk->n", grads, grads)
        mass = np.einsum("nqm,nqm->n", vals, vals)
        return chi * (dmag + mass / r ** 2) * weight(r)

    def run(q):
        lhs = integrate_region(f, support, q, lhs_density, breakpoints=bps)
        boundary = integrate_region(f, support, q, boundary_density, breakpoints=bps)
        bulk_int = integrate_region(f, support, q, bulk_density, breakpoints=bps)
        return lhs, boundary, bulk_int

    lhs, boundary, bulk_int = run(quad)
    lhs2, boundary2, bulk2 = run(quad.refined())
    pairs = ((lhs, lhs2), (boundary, boundary2), (bulk_int, bulk2))
    scale = max(abs(v) for pair in pairs for v in pair)
    converged = all(
        max(abs(a), abs(b)) <= 1e-12 * scale
        or abs(a - b) <= CONVERGENCE_REL_TOL * max(abs(a), abs(b), 1e-30)
        for a, b in pairs)
    rhs = boundary + bulge * bulk_int
    notes = []
    if not converged:
        notes.append("two-resolution disagreement above %g relative" % CONVERGENCE_REL_TOL)
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else math.inf
        verdict = "pass" if lhs == 0.0 else "fail"
    else:
        ratio = lhs / rhs
        verdict = "pass" if (math.isfinite(ratio) and converged) else "fail"
    return CheckReport(
        name="modified-carleman",
        field_spec=f.tag,
        params={"tau": tau, "delta": bent.delta, "r1": bent.r1, "r2": bent.r2,
                "cutoff": {"kind": cutoff.kind, "radii": cutoff.radii}},
        quantities={"lhs": lhs, "rhs": rhs, "ratio": ratio,
                    "rhs_boundary": boundary, "rhs_bulk_integral": bulk_int,
                    "bulk_coefficient": bulge,
                    "sup_dphi_minus_1": bent.sup_dphi_minus_1,
                    "sup_d2phi": bent.sup_d2phi},
        resolutions=quad.meta(),
        verdict=verdict,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# sweep helper


def carleman_tau_sweep(f: QField, taus, cutoffs, quad: QuadratureSpec = REFERENCE_QUAD,
                       eps_for=None, exponent_variant: str = "proof"):
    """Rows of the (tau x cutoff) sweep for one field.

    eps_for(cutoff) supplies the eps used at each cutoff (default: the
    three-sphere recipe value 1 / sqrt(1 + log(a_hi/a_lo)^2) from the
    cutoff's plateau ratio). Returns a list of row dictionaries matching
    the sweep CSV schema.
    """
    rows = []
    for cutoff in cutoffs:
        if eps_for is None:
            ratio = cutoff.radii[2] / cutoff.radii[1]
            eps = 1.0 / math.sqrt(1.0 + math.log(ratio) ** 2)
        else:
            eps = eps_for(cutoff)
        for tau in taus:
            w = WeightSpec(tau=float(tau), eps=float(eps),
                           exponent_variant=exponent_variant)
            rep = carleman_sides(f, w, cutoff, quad)
            rows.append({
                "field": f.tag,
                "tau": float(tau),
                "eps": float(eps),
                "cutoff_kind": cutoff.kind,
                "cutoff_radii": cutoff.radii,
                "lhs": rep.quantities["lhs"],
                "rhs": rep.quantities["rhs"],
                "ratio": rep.quantities["ratio"],
                "verdict": rep.verdict,
            })
    return rows


def tau_trend_statistic(rows):
    """Spearman rank correlation of ratio against tau over sweep rows.

    Nonpositive correlation is the no-upward-trend criterion; the value is
    reported either way.
    """
    from scipy.stats import spearmanr

    taus = [row["tau"] for row in rows]
    ratios = [row["ratio"] for row in rows]
    if len(set(taus)) < 2:
        raise ValueError("need at least two distinct tau values for a trend")
    stat = spearmanr(taus, ratios)
    return float(stat.statistic)
