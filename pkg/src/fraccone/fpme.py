"""Semi-implicit time integration of the fractional porous medium
equation on the discretized cone, plus probes of its linearization.

The equation u' + (-Delta)^sigma u^m = 0 is advanced in the substituted
variable w = u^m: each step freezes the coefficient m*w^{(m-1)/m} at the
current state and solves the linear system

    (I + dt * M_w * Lsigma) w+ = w,

where Lsigma is the fractional power of minus the assembled cone
Laplacian and M_w the diagonal multiplication by the frozen coefficient
in physical space.  Multiplication by a radial function never mixes
cross-section modes, so for radial states the stepping is done block by
block; non-radial states are supported on the circle cross-section
through trigonometric collocation.
"""

import csv
import io
import math
import warnings

import numpy as np
import scipy.linalg

from . import funcalc, linop, sectorial
from .cone import (EXT_WITH_C_OMEGA, ConeFunction, mellin_norm,
                   tip_decay_fit, weight_window)
from .errors import ArgumentError, NonPositiveState, SolveFailed

#: default shift grid of the sectoriality probes
DEFAULT_C_GRID = (0.25, 1.0, 4.0, 16.0, 64.0)


class FpmeConfig:
    """Time stepping parameters.

    sigma in (0,1) (sigma = 1 selects the plain Laplacian), m > 0, step
    size dt > 0, horizon t_end, positivity floor and the weight gamma
    used for the per-step norm diagnostics.
    """

    def __init__(self, sigma, m, dt, t_end, positivity_floor=1e-10,
                 gamma=None, scheme="semi_implicit_euler",
                 snapshot_stride=1):
        if not 0.0 < sigma <= 1.0:
            raise ArgumentError("sigma must lie in (0, 1]")
        if m <= 0:
            raise ArgumentError("m must be positive")
        if dt <= 0 or t_end < 0:
            raise ArgumentError("dt must be positive and t_end nonnegative")
        if positivity_floor <= 0:
            raise ArgumentError("positivity_floor must be positive")
        if scheme != "semi_implicit_euler":
            raise ArgumentError("unknown scheme %r" % (scheme,))
        self.sigma = float(sigma)
        self.m = float(m)
        self.dt = float(dt)
        self.t_end = float(t_end)
        self.positivity_floor = float(positivity_floor)
        self.gamma = gamma
        self.scheme = scheme
        self.snapshot_stride = int(snapshot_stride)


class TrajectoryRecord:
    """Times, stored snapshots and per-step diagnostics of a run.

    ``diagnostics[i]`` is a dict with keys min_value, sup_norm,
    h0gamma_norm, tip_alpha and clamp_count describing the state at
    ``times[i]``.  ``stability_hint`` records dt * ||Lsigma||.
    """

    def __init__(self):
        self.times = []
        self.snapshots = []
        self.diagnostics = []
        self.stability_hint = None

    def append(self, t, snapshot, diag):
        if self.times and t <= self.times[-1]:
            raise ArgumentError("times must be strictly increasing")
        self.times.append(t)
        self.snapshots.append(snapshot)
        self.diagnostics.append(diag)

    def to_csv(self, stream=None):
        """Diagnostics table with header t,min_value,sup_norm,h0gamma_norm,tip_alpha."""
        own = stream is None
        if own:
            stream = io.StringIO()
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["t", "min_value", "sup_norm", "h0gamma_norm",
                         "tip_alpha"])
        for t, diag in zip(self.times, self.diagnostics):
            writer.writerow(["%.17g" % t]
                            + ["%.17g" % diag[key] for key in
                               ("min_value", "sup_norm", "h0gamma_norm",
                                "tip_alpha")])
        if own:
            return stream.getvalue()
        return None

    def snapshot_csv(self, index, stream=None):
        """Physical values of one snapshot: rows x_i, columns collocation."""
        own = stream is None
        if own:
            stream = io.StringIO()
        writer = csv.writer(stream, lineterminator="\n")
        values = to_physical_values(self.snapshots[index].op,
                                    self.snapshots[index])
        for row in np.atleast_2d(values.T).T:
            writer.writerow(["%.17g" % v for v in np.real(row)])
        if own:
            return stream.getvalue()
        return None


# ---------------------------------------------------------------------------
# physical-space synthesis


def _collocation_basis(op):
    """Cross-section collocation matrix B[q, ch] = phi_ch(y_q).

    Supported for the circle cross-section (trigonometric collocation at
    equally spaced angles, invertible because the channel count is odd)
    and trivially for radial-only data (single collocation point).
    """
    channels = op.channels
    Q = len(channels)
    if Q == op.cross_section.components:
        return np.ones((Q, Q))
    if op.cross_section.n != 1:
        raise ArgumentError(
            "physical-space synthesis beyond radial data is only available "
            "for the circle cross-section")
    y = 2.0 * math.pi * np.arange(Q) / Q
    B = np.empty((Q, Q))
    seen = {}
    for col, j in enumerate(channels):
        copy = seen.get(j, 0)
        seen[j] = copy + 1
        if j == 0:
            B[:, col] = 1.0
        elif copy == 0:
            B[:, col] = np.cos(j * y)
        else:
            B[:, col] = np.sin(j * y)
    return B


def _is_radial(op, fun):
    k_B = op.cross_section.components
    for ch, vec in fun.coefficients.items():
        if ch >= k_B and np.any(vec):
            return False
    return True


def to_physical_values(op, fun):
    """Collocation values, shape (grid.count, channel count).

    Radial-only functions return a single column.  Tip constants are
    folded into their mode-0 radial profiles.
    """
    if _is_radial(op, fun):
        cols = [fun.radial_values(c)
                for c in range(op.cross_section.components)]
        return np.stack(cols, axis=1)
    B = _collocation_basis(op)
    V = np.stack([fun.radial_values(c) for c in range(len(op.channels))],
                 axis=1)
    return V @ B.T


def function_from_physical(op, values):
    """Inverse of :func:`to_physical_values` (modes + tip constants)."""
    values = np.atleast_2d(np.asarray(values, dtype=complex))
    if values.shape[0] == 1:
        values = values.T
    fun = ConeFunction(op)
    k_B = op.cross_section.components
    if values.shape[1] == k_B:
        for comp in range(k_B):
            part = ConeFunction.from_radial(op, values[:, comp],
                                            channel=comp)
            fun.coefficients.update(part.coefficients)
            fun.c_omega_part[comp] = part.c_omega_part[comp]
        return fun
    B = _collocation_basis(op)
    V = np.linalg.solve(B, values.T).T
    for ch in range(len(op.channels)):
        part = ConeFunction.from_radial(op, V[:, ch], channel=ch)
        fun.coefficients.update(part.coefficients)
        if op.is_augmented_channel(ch):
            fun.c_omega_part[ch] = part.c_omega_part[ch]
    return fun


# ---------------------------------------------------------------------------
# fractional generator


def build_frac_generator(op, sigma):
    """Fractional power Lsigma = (-(assembled cone Laplacian))^sigma.

    Works block by block: invertible mode blocks through half-line
    quadrature, the augmented (kernel-carrying) mode-0 block through the
    vanishing-shift Richardson limit, which maps the kernel to 0 exactly
    up to solver roundoff.  sigma = 1 returns the negated blocks
    themselves.  The result is a block-diagonal DenseOperator over all
    channels, matching the state layout of the stepping routines.
    """
    if op.extension != EXT_WITH_C_OMEGA:
        raise ArgumentError("the generator requires the tip-constant "
                            "extension")
    blocks = {}
    for j, block in op.mode_blocks.items():
        neg = block.with_entries(-block.entries)
        if sigma == 1.0:
            blocks[j] = neg
        elif j == 0:
            spec = funcalc.PowerSpec(sigma, 0.0, method="resolvent_limit")
            blocks[j] = funcalc.frac_power(neg, spec)
        else:
            spec = funcalc.PowerSpec(sigma, 0.0, method="balakrishnan")
            blocks[j] = funcalc.frac_power(neg, spec)
    entries = scipy.linalg.block_diag(
        *[blocks[j].entries for j in op.channels])
    weights = np.concatenate([blocks[j].inner_weights for j in op.channels])
    return linop.DenseOperator(entries, inner_weights=weights,
                               label="fractional generator sigma=%g" % sigma)


def _channel_slices(op):
    slices = []
    start = 0
    for ch in range(len(op.channels)):
        dim = op.block_for_channel(ch).dim
        slices.append(slice(start, start + dim))
        start += dim
    return slices, start


def _state_vector(op, fun):
    slices, total = _channel_slices(op)
    out = np.zeros(total, dtype=complex)
    for ch, sl in enumerate(slices):
        vec = fun.coefficients.get(ch)
        block = out[sl]
        if vec is not None:
            block[:op.grid.count] = vec
        if op.is_augmented_channel(ch):
            block[-1] = fun.c_omega_part[ch]
    return out


def _function_from_state(op, state):
    slices, _ = _channel_slices(op)
    fun = ConeFunction(op)
    for ch, sl in enumerate(slices):
        block = state[sl]
        fun.coefficients[ch] = np.array(block[:op.grid.count])
        if op.is_augmented_channel(ch):
            fun.c_omega_part[ch] = block[-1]
    return fun


def _radial_multiplier_matrix(op, g, augmented):
    """Matrix of multiplication by the radial function g on one channel.

    In the (H part, tip constant) coordinates of an augmented channel
    the multiplication reads [[diag(g), g*chi - g0*chi], [0, g0]] with
    g0 the value of g at the innermost point, so exactly constant g acts
    as g0 times the identity and the kernel direction stays decoupled.
    """
    M = op.grid.count
    if not augmented:
        return np.diag(g.astype(complex))
    out = np.zeros((M + 1, M + 1), dtype=complex)
    out[:M, :M] = np.diag(g)
    g0 = g[0]
    out[:M, M] = (g - g0) * op.chi
    out[M, M] = g0
    return out


def _multiplier_operator(op, g_phys):
    """Full multiplication operator for the frozen coefficient.

    ``g_phys`` has one column per collocation point (a single column for
    radial coefficients).  Radial coefficients keep the block-diagonal
    structure; non-radial ones (circle only) conjugate the pointwise
    multiplication through the collocation basis.
    """
    slices, total = _channel_slices(op)
    out = np.zeros((total, total), dtype=complex)
    if g_phys.shape[1] == op.cross_section.components:
        g = g_phys[:, 0]
        for ch, sl in enumerate(slices):
            aug = op.is_augmented_channel(ch)
            comp = ch if aug and ch < g_phys.shape[1] else 0
            out[sl, sl] = _radial_multiplier_matrix(
                op, g_phys[:, comp] if aug else g, aug)
        return out
    B = _collocation_basis(op)
    Binv = np.linalg.inv(B)
    M = op.grid.count
    # coefficient-space multiplication at radial index i mixes channels
    # through Binv diag(g_i) B; the tip constants transform with the
    # innermost mixing matrix so that locally constant coefficients act
    # exactly on the tip unknowns and the H parts absorb the remainder
    # through the cutoff profile.
    mix0 = Binv @ (g_phys[0][:, None] * B)
    for i in range(M):
        mix = Binv @ (g_phys[i][:, None] * B)
        for ca, sa in enumerate(slices):
            row = sa.start + i
            for cb, sb in enumerate(slices):
                out[row, sb.start + i] = mix[ca, cb]
                if op.is_augmented_channel(cb):
                    out[row, sb.stop - 1] = (op.chi[i]
                                             * (mix[ca, cb] - mix0[ca, cb]))
    for ca, sa in enumerate(slices):
        if not op.is_augmented_channel(ca):
            continue
        for cb, sb in enumerate(slices):
            if op.is_augmented_channel(cb):
                out[sa.stop - 1, sb.stop - 1] = mix0[ca, cb]
    return out


def step_semi_implicit(w, cfg, Lsigma, op=None, _solver_cache=None):
    """One frozen-coefficient implicit Euler step in the w variable.

    Solves (I + dt * M_w * Lsigma) w+ = w with M_w the multiplication by
    m * w^{(m-1)/m} evaluated pointwise in physical space, then clamps
    the result at the positivity floor.  The returned ConeFunction
    carries the number of clamped values in its ``clamp_count``
    attribute.
    """
    if op is None:
        op = w.op
    phys = to_physical_values(op, w)
    if np.min(phys.real) < cfg.positivity_floor - 1e-15:
        raise NonPositiveState(
            "state dips to %g below the positivity floor %g"
            % (float(np.min(phys.real)), cfg.positivity_floor))
    state = _state_vector(op, w)
    try:
        if cfg.m == 1.0:
            if _solver_cache is not None and "lu" in _solver_cache:
                lu = _solver_cache["lu"]
            else:
                system = (np.eye(len(state))
                          + cfg.dt * Lsigma.entries)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore",
                                          scipy.linalg.LinAlgWarning)
                    lu = scipy.linalg.lu_factor(system)
                if _solver_cache is not None:
                    _solver_cache["lu"] = lu
            new_state = scipy.linalg.lu_solve(lu, state)
        else:
            g = cfg.m * np.real(phys) ** ((cfg.m - 1.0) / cfg.m)
            Mw = _multiplier_operator(op, g)
            system = np.eye(len(state)) + cfg.dt * (Mw @ Lsigma.entries)
            new_state = np.linalg.solve(system, state)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolveFailed("implicit step solve failed (%s); try halving dt"
                          % exc)
    if not np.all(np.isfinite(new_state)):
        raise SolveFailed("implicit step produced non-finite values; try "
                          "halving dt")
    w_plus = _function_from_state(op, new_state)
    phys_plus = to_physical_values(op, w_plus)
    clamped = np.maximum(phys_plus.real, cfg.positivity_floor)
    clamp_count = int(np.count_nonzero(phys_plus.real
                                       < cfg.positivity_floor))
    if clamp_count:
        w_plus = function_from_physical(op, clamped)
    w_plus.clamp_count = clamp_count
    return w_plus


def _diagnostics(op, u, gamma, floor_window=None):
    phys = to_physical_values(op, u)
    diag = {
        "min_value": float(np.min(phys.real)),
        "sup_norm": float(np.max(np.abs(phys))),
        "h0gamma_norm": mellin_norm(u, 0, gamma, op),
    }
    try:
        window = floor_window or (op.grid.x_min, 0.1)
        diag["tip_alpha"] = tip_decay_fit(u, window)[0]
    except Exception:
        diag["tip_alpha"] = float("nan")
    return diag


def run(u0, cfg, op, Lsigma=None):
    """Advance the equation from u0 to t_end and record the trajectory.

    The state is advanced in w = u^m; snapshots store u = w^{1/m}.
    Diagnostics per recorded time: physical minimum, sup norm, weighted
    L2 norm at the configured gamma and the fitted tip decay exponent of
    the non-constant part.
    """
    gamma = op.grid.gamma if cfg.gamma is None else cfg.gamma
    try:
        _, _, sigma0 = weight_window(op.cross_section)
        if cfg.sigma <= sigma0:
            warnings.warn("sigma=%g is at or below the critical order %g "
                          "for this cross-section; the scheme runs but the "
                          "decay theory does not apply" % (cfg.sigma, sigma0))
    except Exception:
        pass
    phys0 = to_physical_values(op, u0)
    if np.min(phys0.real) <= 0:
        raise NonPositiveState("initial data must be strictly positive")
    if Lsigma is None:
        Lsigma = build_frac_generator(op, cfg.sigma)
    record = TrajectoryRecord()
    record.stability_hint = cfg.dt * linop.operator_norm(Lsigma)
    w = function_from_physical(op, np.real(phys0) ** cfg.m)
    record.append(0.0, u0, dict(_diagnostics(op, u0, gamma),
                                clamp_count=0))
    steps = int(round(cfg.t_end / cfg.dt))
    cache = {}
    t = 0.0
    for k in range(steps):
        w = step_semi_implicit(w, cfg, Lsigma, op, _solver_cache=cache)
        t = (k + 1) * cfg.dt
        if (k + 1) % cfg.snapshot_stride and (k + 1) != steps:
            continue
        phys_w = to_physical_values(op, w)
        u = function_from_physical(
            op, np.maximum(phys_w.real, cfg.positivity_floor)
            ** (1.0 / cfg.m))
        record.append(t, u, dict(_diagnostics(op, u, gamma),
                                 clamp_count=w.clamp_count))
    return record


# ---------------------------------------------------------------------------
# linearization probes


class CommutatorReport:
    """Outcome of :func:`commutator_decay_scan`."""

    def __init__(self, weighted_norm, lambda_exponent, mu_exponent,
                 alpha, beta, samples, passed):
        self.weighted_norm = weighted_norm
        self.lambda_exponent = lambda_exponent
        self.mu_exponent = mu_exponent
        self.alpha = alpha
        self.beta = beta
        self.samples = samples
        self.passed = passed


def _radial_profile(op, w_mult):
    phys = to_physical_values(op, w_mult)
    if phys.shape[1] != op.cross_section.components:
        raise ArgumentError("the multiplier of the probes must be radial")
    return np.real(phys[:, 0])


def commutator_decay_scan(w_mult, op, sigma, nu, rho, sample_grid, c=1.0):
    """Fractional-order smallness of the multiplication commutator.

    Per mode block, with A = c - (cone Laplacian block) and W the
    multiplication by the radial profile of ``w_mult``, measures the
    weighted commutator norm ||A^rho (W A^sigma - A^sigma W) A^{-nu}||
    and samples || [W,(A+mu)^{-1}] (A+lambda)^{-1} || over the given
    shift grid; decay exponents in log(1+|lambda|) and log(1+|mu|) are
    fitted by least squares.  alpha is the order ratio min(1, nu/sigma)
    and beta the excess of the fitted mu decay beyond first order.
    """
    if c <= 0:
        raise ArgumentError("c must be positive")
    g = _radial_profile(op, w_mult)
    M = op.grid.count
    best_norm = 0.0
    samples = {}
    lam_values = [complex(v) for v in sample_grid]
    norms = np.zeros((len(lam_values), len(lam_values)))
    for j, block in op.mode_blocks.items():
        aug = block.dim != M
        A = block.with_entries(c * np.eye(block.dim) - block.entries)
        W = _radial_multiplier_matrix(op, g, aug)
        Asig = funcalc.frac_power(A, funcalc.PowerSpec(sigma, 0.0)).entries
        Arho = funcalc.frac_power(A, funcalc.PowerSpec(rho, 0.0)).entries
        Anuinv = funcalc.inv_frac_power(
            A, funcalc.PowerSpec(nu, 0.0)).entries
        comm = W @ Asig - Asig @ W
        weighted = A.with_entries(Arho @ comm @ Anuinv)
        best_norm = max(best_norm, linop.operator_norm(weighted))
        eye = np.eye(block.dim, dtype=complex)
        for a, mu in enumerate(lam_values):
            Rmu = linop.shifted_solve(A, mu, eye)
            comm_mu = W @ Rmu - Rmu @ W
            for b, lam in enumerate(lam_values):
                Rlam = linop.shifted_solve(A, lam, eye)
                val = linop.operator_norm(
                    A.with_entries(comm_mu @ Rlam))
                norms[a, b] = max(norms[a, b], val)
    # least-squares decay exponents of the sampled table
    logs = np.log1p(np.abs(lam_values))
    usable = norms > 0
    lam_exp = mu_exp = 0.0
    if np.any(usable):
        rows = []
        rhs = []
        for a in range(len(lam_values)):
            for b in range(len(lam_values)):
                if norms[a, b] > 0:
                    rows.append([logs[a], logs[b], 1.0])
                    rhs.append(math.log(norms[a, b]))
        coef, *_ = np.linalg.lstsq(np.array(rows), np.array(rhs),
                                   rcond=None)
        mu_exp, lam_exp = float(coef[0]), float(coef[1])
        for a, mu in enumerate(lam_values):
            for b, lam in enumerate(lam_values):
                samples[(mu, lam)] = float(norms[a, b])
    alpha = min(1.0, nu / sigma)
    beta = max(0.0, -mu_exp - 1.0)
    passed = (math.isfinite(best_norm)
              and lam_exp <= -(1.0 - alpha) + 0.1
              and beta > 0.0)
    return CommutatorReport(best_norm, lam_exp, mu_exp, alpha, beta,
                            samples, passed)


class SectorialityProbeReport:
    """Outcome of :func:`linearization_sectoriality_probe`."""

    def __init__(self, bounds, growths, c_star, rbound):
        self.bounds = bounds
        self.growths = growths
        self.c_star = c_star
        self.rbound = rbound


def linearization_sectoriality_probe(w_mult, op, sigma, c_grid=None,
                                     theta=3.0 * math.pi / 4.0,
                                     Lsigma_blocks=None, seed=0):
    """Sectoriality of the frozen-coefficient linearization W Lsigma + c.

    The multiplier must be radial and uniformly positive.  For each c the
    block-wise sector probe is run at angle theta; c_star is the smallest
    c whose bound profile grows less than 2x across the sampled modulus
    range.  At c_star a Rademacher R-bound estimate over 8 sampled
    boundary shifts is attached.
    """
    g = _radial_profile(op, w_mult)
    if np.min(g) <= 0:
        raise ArgumentError("the multiplier must be bounded below by a "
                            "positive constant")
    if c_grid is None:
        c_grid = DEFAULT_C_GRID
    M = op.grid.count
    if Lsigma_blocks is None:
        Lsigma_blocks = {}
        for j, block in op.mode_blocks.items():
            neg = block.with_entries(-block.entries)
            if j == 0:
                Lsigma_blocks[j] = funcalc.frac_power(
                    neg, funcalc.PowerSpec(sigma, 0.0,
                                           method="resolvent_limit"))
            else:
                Lsigma_blocks[j] = funcalc.frac_power(
                    neg, funcalc.PowerSpec(sigma, 0.0))
    bounds = {}
    growths = {}
    c_star = None
    products = {}
    for j, Lb in Lsigma_blocks.items():
        aug = Lb.dim != M
        W = _radial_multiplier_matrix(op, g, aug)
        products[j] = Lb.with_entries(W @ Lb.entries)
    for c in c_grid:
        K = 0.0
        growth = 0.0
        for j, WL in products.items():
            shifted = WL.with_entries(WL.entries + c * np.eye(WL.dim))
            rep = sectorial.sectorial_bound_probe(shifted, theta)
            K = max(K, rep.estimated_K)
            # stability: the bound profile must flatten out at large
            # modulus instead of growing without saturation
            by_modulus = {}
            for lam, value in rep.samples:
                r = abs(lam)
                by_modulus[r] = max(by_modulus.get(r, 0.0), value)
            radii = sorted(by_modulus)
            if len(radii) >= 8:
                head = max(by_modulus[r] for r in radii[:-4])
                tail = max(by_modulus[r] for r in radii[-4:])
                if head > 0:
                    growth = max(growth, tail / head)
        bounds[c] = K
        growths[c] = growth
        if c_star is None and growth < 2.0:
            c_star = c
    rbound = None
    if c_star is not None:
        family = []
        radii = np.geomspace(0.1, 100.0, 8)
        psi = math.pi - theta
        for idx, r in enumerate(radii):
            lam = r * complex(math.cos(psi), math.sin(psi)
                              * (1 if idx % 2 == 0 else -1))
            blocks = []
            weights = []
            for j, WL in products.items():
                sol = linop.shifted_solve(
                    WL.with_entries(WL.entries + c_star * np.eye(WL.dim)),
                    lam, np.eye(WL.dim, dtype=complex))
                blocks.append(lam * sol)
                weights.append(WL.inner_weights)
            family.append(linop.DenseOperator(
                scipy.linalg.block_diag(*blocks),
                inner_weights=np.concatenate(weights)))
        rbound = sectorial.rademacher_rbound_estimate(family, trials=40,
                                                      seed=seed)
    return SectorialityProbeReport(bounds, growths, c_star, rbound)
