"""Numerical probes of sectoriality, R-bounds, resolvent decay and
Laurent expansions at resolvent poles.

The probes are deliberately literal: the sectorial bound is sampled on
rays, the R-bound estimator enumerates (or Monte Carlo samples) Rademacher
sign patterns exactly as in its defining inequality, and Laurent
coefficients are extracted with trapezoid contour integrals, which are
spectrally accurate for the periodic analytic integrand on a circle.
"""

import cmath
import json
import math

import numpy as np
import scipy.linalg

from . import funcalc, linop
from .errors import ArgumentError, ContourHitsSpectrum, SingularShift

#: per-decade growth ratio below which lambda (A+lambda)^{-1} counts as bounded
SIMPLE_POLE_RATIO = 1.05


class SectorProbeReport:
    """Sampled sectorial bound |lambda| ||(A+lambda)^{-1}|| on a sector."""

    def __init__(self, angle_theta, samples, skipped=0):
        self.angle_theta = angle_theta
        self.samples = samples          # list of (lambda, bound_value)
        self.skipped = skipped          # samples on/near the spectrum
        values = [b for _, b in samples]
        self.estimated_K = max(values) if values else 0.0
        moduli = [abs(l) for l, _ in samples]
        self.min_modulus_sampled = min(moduli) if moduli else 0.0
        self.max_modulus_sampled = max(moduli) if moduli else 0.0

    def to_json(self):
        return json.dumps({
            "theta": self.angle_theta,
            "samples": [{"re": l.real, "im": l.imag, "value": v}
                        for l, v in self.samples],
            "estimated_K": self.estimated_K,
            "skipped": self.skipped,
        }, sort_keys=True)

    def to_csv(self):
        lines = ["lambda_re,lambda_im,bound"]
        lines += ["%.17g,%.17g,%.17g" % (l.real, l.imag, v)
                  for l, v in self.samples]
        return "\n".join(lines) + "\n"


def sectorial_bound_probe(A, theta, radial_samples=40, modulus_range=(1e-3, 1e3),
                          rays=9):
    """Sample |lambda| ||(A+lambda)^{-1}|| over rays of the sector S_theta.

    ``rays`` angles are spread over [-theta, theta]; moduli are log-spaced
    over ``modulus_range``.  Samples hitting the spectrum are skipped and
    counted in the report.
    """
    if not 0.0 <= theta < math.pi:
        raise ArgumentError("theta must lie in [0, pi)")
    r_min, r_max = modulus_range
    if r_min <= 0:
        raise ArgumentError("modulus range must be positive")
    W = A.weighted_entries()
    eye = np.eye(A.dim)
    psis = np.linspace(-theta, theta, rays) if theta > 0 else np.array([0.0])
    moduli = np.geomspace(r_min, r_max, radial_samples)
    samples = []
    skipped = 0
    for psi in psis:
        for r in moduli:
            lam = r * cmath.exp(1j * psi)
            smin = scipy.linalg.svdvals(W + lam * eye)[-1]
            if smin <= 1e-14 * max(r, np.linalg.norm(W, 2)):
                skipped += 1
                continue
            samples.append((lam, r / smin))
    return SectorProbeReport(theta, samples, skipped)


class RBoundEstimate:
    """Result of :func:`rademacher_rbound_estimate`."""

    def __init__(self, family_size, trials, vector_dim, max_ratio,
                 uniform_norm_bound):
        self.family_size = family_size
        self.trials = trials
        self.vector_dim = vector_dim
        self.max_ratio = max_ratio
        self.uniform_norm_bound = uniform_norm_bound

    def to_json(self):
        return json.dumps({
            "family_size": self.family_size,
            "trials": self.trials,
            "vector_dim": self.vector_dim,
            "max_ratio": self.max_ratio,
            "uniform_norm_bound": self.uniform_norm_bound,
        }, sort_keys=True)


def _weighted_norm(weights, v):
    if weights is None:
        return float(np.linalg.norm(v))
    return float(math.sqrt(np.real(np.vdot(v, weights * v))))


def rademacher_rbound_estimate(family, trials, vectors_per_trial=1, seed=0,
                               mc_draws=4096, force_mc=False):
    """Estimate the randomized square-function bound of an operator family.

    Each trial draws N <= len(family) operators and Gaussian vectors and
    evaluates both sides of the square-function inequality over Rademacher
    signs: exactly over all 2^N patterns when N <= 12, otherwise by
    ``mc_draws`` Monte Carlo sign draws.  Single-operator patterns are
    always included so the estimate attains the worst sampled one-term
    ratio.  Deterministic for a fixed seed.
    """
    if not family:
        raise ArgumentError("family must be nonempty")
    dim = family[0].dim
    weights = family[0].inner_weights
    for T in family:
        if T.dim != dim:
            raise ArgumentError("operators in the family must share dim")
    rng = np.random.default_rng(seed)
    max_ratio = 0.0
    for _ in range(max(1, trials)):
        n_ops = int(rng.integers(1, len(family) + 1))
        idx = rng.choice(len(family), size=n_ops, replace=False)
        for _ in range(max(1, vectors_per_trial)):
            xs = rng.standard_normal((n_ops, dim)) \
                + 1j * rng.standard_normal((n_ops, dim))
            ys = np.array([family[k].entries @ x
                           for k, x in zip(idx, xs)])
            if n_ops <= 12 and not force_mc:
                signs = np.array(np.meshgrid(
                    *([[-1.0, 1.0]] * n_ops))).reshape(n_ops, -1).T
            else:
                signs = rng.choice([-1.0, 1.0], size=(mc_draws, n_ops))
            if weights is None:
                lhs2 = np.mean(np.sum(np.abs(signs @ ys) ** 2, axis=1))
                rhs2 = np.mean(np.sum(np.abs(signs @ xs) ** 2, axis=1))
            else:
                lhs2 = np.mean(np.sum(weights * np.abs(signs @ ys) ** 2,
                                      axis=1))
                rhs2 = np.mean(np.sum(weights * np.abs(signs @ xs) ** 2,
                                      axis=1))
            if rhs2 > 0:
                max_ratio = max(max_ratio, math.sqrt(lhs2 / rhs2))
            for k, x, y in zip(idx, xs, ys):
                nx = _weighted_norm(weights, x)
                if nx > 0:
                    max_ratio = max(max_ratio,
                                    _weighted_norm(weights, y) / nx)
    # every member is probed once as a single-operator pattern, so the
    # estimate attains the worst sampled one-term ratio deterministically
    for T in family:
        x = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        nx = _weighted_norm(weights, x)
        if nx > 0:
            max_ratio = max(max_ratio,
                            _weighted_norm(weights, T.entries @ x) / nx)
    uniform = max(linop.operator_norm(T) for T in family)
    return RBoundEstimate(len(family), trials, dim, max_ratio, uniform)


def power_resolvent_decay_fit(A, sigma, theta, samples=40):
    """Least-squares decay fit of ||A^sigma (A+lambda)^{-1}|| on S_theta rays.

    Returns (C_fit, exponent_fit) from the regression of the log norm
    against log(1+|lambda|); the decay bound for sectorial A demands
    exponent_fit <= -(1-sigma) + 0.05.
    """
    if sigma == 1.0:
        Asig = A
    else:
        Asig = funcalc.frac_power(A, funcalc.PowerSpec(sigma))
    lo, hi = funcalc._spectral_bracket(A)
    moduli = np.geomspace(0.01 * lo, 100.0 * hi, samples)
    psis = sorted({-theta, 0.0, theta})
    xs, ys = [], []
    for psi in psis:
        for r in moduli:
            lam = r * cmath.exp(1j * psi)
            # (A+lam)^{-1} A^sigma = A^sigma (A+lam)^{-1}: functions of A
            sol = linop.shifted_solve(A, lam, Asig.entries)
            g = linop.operator_norm(A.with_entries(sol))
            xs.append(math.log1p(r))
            ys.append(math.log(max(g, 1e-300)))
    slope, intercept = np.polyfit(xs, ys, 1)
    return math.exp(intercept), float(slope)


class LaurentExpansion:
    """Laurent coefficients of the resolvent around a pole.

    coefficients maps k -> B_k for k in {-order, ..., K_max} with
    (A+lambda)^{-1} = sum_k (lambda - pole)^k B_k on the annulus inside
    ``contour_radius``.
    """

    def __init__(self, pole, order, coefficients, contour_radius):
        self.pole = pole
        self.order = order
        self.coefficients = coefficients
        self.contour_radius = contour_radius

    def resum(self, lam):
        """Evaluate the truncated expansion at lambda."""
        acc = np.zeros_like(next(iter(self.coefficients.values())))
        for k, B in self.coefficients.items():
            acc = acc + (lam - self.pole) ** k * B
        return acc


def default_contour_radius(A, pole):
    """Half the distance from the pole to the nearest other spectrum point."""
    ev = -np.linalg.eigvals(A.entries)   # resolvent singularities in lambda
    scale = max(np.max(np.abs(ev)), abs(pole), 1.0)
    dist = np.abs(ev - pole)
    others = dist[dist > 1e-10 * scale]
    if len(others) == 0:
        return max(1.0, 0.5 * abs(pole))
    return 0.5 * float(np.min(others))


def laurent_coefficients(A, pole, order_guess=1, K_max=2, contour_radius=None,
                         contour_nodes=128):
    """Extract Laurent coefficients B_k by trapezoid contour integrals.

    B_k = (1/2 pi i) closed-integral (lambda-pole)^{-k-1} (A+lambda)^{-1} dlambda
    over the circle of radius ``contour_radius`` around the pole.
    """
    if contour_nodes < 64:
        raise ArgumentError("contour_nodes must be >= 64")
    if contour_radius is None:
        contour_radius = default_contour_radius(A, pole)
    R = float(contour_radius)
    phis = 2.0 * math.pi * np.arange(contour_nodes) / contour_nodes
    offsets = R * np.exp(1j * phis)
    ev = -np.linalg.eigvals(A.entries)
    scale = max(np.max(np.abs(ev)), abs(pole) + R, 1.0)
    for lam in pole + offsets:
        if np.min(np.abs(ev - lam)) < 1e-10 * scale:
            raise ContourHitsSpectrum(
                "contour node %r within tolerance of the spectrum" % (lam,))
    try:
        resolvents = np.stack([
            linop.shifted_solve(A, lam, np.eye(A.dim, dtype=complex))
            for lam in pole + offsets])
    except SingularShift as exc:
        raise ContourHitsSpectrum(str(exc))
    coefficients = {}
    for k in range(-order_guess, K_max + 1):
        phase = np.exp(-1j * k * phis) / (R ** k * contour_nodes)
        coefficients[k] = np.tensordot(phase, resolvents, axes=(0, 0))
    return LaurentExpansion(pole, order_guess, coefficients, R)


def verify_laurent_identities(exp, A):
    """Residuals of the recurrence satisfied by Laurent coefficients.

    For a pole of order mu at lambda0 the coefficients obey
    (A+lambda0) B_{-mu} = 0, (A+lambda0) B_0 + B_{-1} = I and
    (A+lambda0) B_k + B_{k-1} = 0 for the remaining k.  Returns a map
    from identity label to residual norm.
    """
    lam0 = exp.pole
    shifted = A.entries + lam0 * np.eye(A.dim)
    eye = np.eye(A.dim)
    out = {}
    ks = sorted(exp.coefficients)
    low = ks[0]
    out["annihilation[k=%d]" % low] = float(np.linalg.norm(
        shifted @ exp.coefficients[low], 2))
    for k in ks:
        if k - 1 not in exp.coefficients:
            continue
        lhs = shifted @ exp.coefficients[k] + exp.coefficients[k - 1]
        if k == 0:
            lhs = lhs - eye
        out["recurrence[k=%d]" % k] = float(np.linalg.norm(lhs, 2))
    return out


def simple_pole_check(A, modulus_floor=1e-8, rays=(0.0, math.pi / 4,
                                                   -math.pi / 4)):
    """Check boundedness of lambda (A+lambda)^{-1} as lambda -> 0.

    Samples |lambda| from 1 down to ``modulus_floor`` along the given rays;
    the pole at 0 counts as simple when the per-decade growth ratio of the
    sampled norms stays below ``SIMPLE_POLE_RATIO``.  The resolvent norm
    is evaluated as 1/sigma_min(A + lambda) in the weighted metric, which
    stays meaningful arbitrarily close to the pole (an LU condition
    estimate would reject those shifts for stiff operators even though
    lambda (A+lambda)^{-1} itself is bounded).
    """
    W = A.weighted_entries()
    eye = np.eye(A.dim)
    decades = int(math.ceil(-math.log10(modulus_floor)))
    values = []
    blew_up = False
    for d in range(decades + 1):
        r = 10.0 ** (-d)
        best = 0.0
        for psi in rays:
            lam = r * cmath.exp(1j * psi)
            smin = float(scipy.linalg.svdvals(W + lam * eye)[-1])
            if smin == 0.0:
                blew_up = True
                break
            best = max(best, abs(lam) / smin)
        if blew_up:
            break
        values.append(best)
    ratios = [values[i + 1] / values[i] for i in range(len(values) - 1)
              if values[i] > 0]
    is_simple = not blew_up and all(r < SIMPLE_POLE_RATIO for r in ratios)
    return is_simple, max(values) if values else math.inf
