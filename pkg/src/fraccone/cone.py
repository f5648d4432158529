"""Cone geometry layer: cross-section spectra, weight windows, and the
log-radial discretization of the cone Laplacian.

The cone is modeled as x in (0, 1] times a cross-section; separation of
variables turns the Laplacian into independent radial blocks

    A_j = x^{-2} ((x d/dx)^2 + (n-1)(x d/dx) + lambda_j),

one per cross-section eigenvalue lambda_j.  On a log-uniform grid x = e^t
the dilation x d/dx becomes d/dt exactly, so each block is a constant-
coefficient tridiagonal stencil times the diagonal prefactor x^{-2}.  The
blocks are assembled through the similarity

    A_j = X^{-2} E (T - mu_j^2 I) E^{-1},     E = diag(x^{-(n-1)/2}),

with T the Dirichlet second-difference matrix in t and
mu_j = sqrt(((n-1)/2)^2 - lambda_j).  This form makes every block exactly
symmetric in the metric with weights x^{n+1} dt and manifestly negative
definite, and keeps the interior stencil rows shift-invariant so that the
discrete dilation identity holds to machine precision.

Near the tip, functions that are locally constant are carried by one
extra scalar unknown per boundary component (the "tip constant" omega)
rather than by grid values: the augmented mode-0 block is
blockdiag(A_0, 0), the omega direction spans the kernel, and the
grid/omega split of a function is performed by the decomposition map
using a fixed cutoff profile equal to 1 near the tip.
"""

import math

import numpy as np
import scipy.linalg

from .errors import (ArgumentError, EmptyWindow, GridTooCoarse, ShiftTooLarge,
                     UnsupportedSmoothness, WindowEmpty)
from .linop import DenseOperator

#: mode truncation: stop once |lambda_j| reaches this value ...
MODE_EIGENVALUE_CAP = 1e4
#: ... or once this many distinct eigenvalues are in play, whichever first
MODE_COUNT_CAP = 64

#: grid points required for the stencil/window machinery to make sense
MIN_GRID_COUNT = 32

#: allowed deviation of the log spacing from uniformity
LOG_UNIFORMITY_TOL = 1e-14


class CrossSection:
    """Spectral data of the cross-section Laplacian.

    Parameters
    ----------
    n : int
        Cross-section dimension (the cone has dimension n+1).
    eigenvalues : list of float
        Distinct eigenvalues lambda_j of the cross-section Laplacian,
        starting with lambda_0 = 0 and strictly decreasing.
    multiplicities : list of int
        Multiplicity of each eigenvalue; the first equals the number of
        boundary components (constants on each component).
    components : int
        Number of boundary components k_B.
    """

    def __init__(self, n, eigenvalues, multiplicities, components=1, label=""):
        if int(n) != n or n < 1:
            raise ArgumentError("cross-section dimension must be a positive "
                                "integer")
        eigenvalues = [float(v) for v in eigenvalues]
        multiplicities = [int(m) for m in multiplicities]
        if len(eigenvalues) != len(multiplicities) or not eigenvalues:
            raise ArgumentError("eigenvalues and multiplicities must be "
                                "nonempty lists of equal length")
        if eigenvalues[0] != 0.0:
            raise ArgumentError("lambda_0 must be 0 (constants)")
        if any(m < 1 for m in multiplicities):
            raise ArgumentError("multiplicities must be positive")
        if int(components) != components or components < 1:
            raise ArgumentError("components must be a positive integer")
        if multiplicities[0] != components:
            raise ArgumentError("multiplicity of lambda_0 = 0 must equal the "
                                "number of boundary components")
        for a, b in zip(eigenvalues, eigenvalues[1:]):
            if not b < a:
                raise ArgumentError("eigenvalues must be strictly decreasing")
        self.n = int(n)
        self.eigenvalues = eigenvalues
        self.multiplicities = multiplicities
        self.components = int(components)
        self.label = label

    def __repr__(self):
        return ("CrossSection(n=%d, modes=%d, components=%d, label=%r)"
                % (self.n, len(self.eigenvalues), self.components, self.label))


def builtin_circle(max_modes=MODE_COUNT_CAP):
    """Unit circle cross-section: n = 1, lambda_j = -j^2.

    Multiplicities are 1 for j = 0 and 2 for j >= 1 (cos and sin).
    """
    eigs, mults = [0.0], [1]
    j = 1
    while len(eigs) < max_modes and j * j < MODE_EIGENVALUE_CAP:
        eigs.append(-float(j * j))
        mults.append(2)
        j += 1
    return CrossSection(1, eigs, mults, components=1, label="circle")


def builtin_sphere(max_modes=MODE_COUNT_CAP):
    """Unit 2-sphere cross-section: n = 2, lambda_l = -l(l+1), mult 2l+1."""
    eigs, mults = [0.0], [1]
    ell = 1
    while len(eigs) < max_modes and ell * (ell + 1) < MODE_EIGENVALUE_CAP:
        eigs.append(-float(ell * (ell + 1)))
        mults.append(2 * ell + 1)
        ell += 1
    return CrossSection(2, eigs, mults, components=1, label="sphere")


def cross_section_from_file(path):
    """Read a CrossSection from a key: value text file.

    Recognized keys: ``n``, ``eigenvalues`` (comma-separated),
    ``multiplicities`` (comma-separated), ``components``.  Blank lines and
    lines starting with ``#`` are ignored.
    """
    data = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise ArgumentError("malformed cross-section line %r" % line)
            key, _, value = line.partition(":")
            data[key.strip().lower()] = value.strip()
    try:
        n = int(data["n"])
        eigs = [float(v) for v in data["eigenvalues"].split(",")]
        mults = [int(v) for v in data["multiplicities"].split(",")]
    except KeyError as exc:
        raise ArgumentError("cross-section file missing key %s" % exc)
    components = int(data.get("components", mults[0] if mults else 1))
    return CrossSection(n, eigs, mults, components=components, label=path)


class ConeGrid:
    """Log-uniform radial grid on (0, 1).

    Grid points are x_i = exp(t_i) with t_i = log(x_min) + i*dt,
    dt = -log(x_min)/count, i = 0..count-1.  The outer point x = 1 is the
    Dirichlet ghost eliminated by the last stencil row, so every unknown
    sits strictly inside (0, 1) and all interior rows share one stencil.
    """

    def __init__(self, x_min, count, gamma):
        if not 0.0 < x_min < 1.0:
            raise ArgumentError("x_min must lie in (0, 1)")
        if int(count) != count or count < MIN_GRID_COUNT:
            raise GridTooCoarse("grid needs at least %d points, got %r"
                                % (MIN_GRID_COUNT, count))
        self.x_min = float(x_min)
        self.count = int(count)
        self.gamma = float(gamma)
        self.spacing = -math.log(self.x_min) / self.count
        self.log_points = math.log(self.x_min) + self.spacing * np.arange(self.count)
        self.log_points.setflags(write=False)
        self.points = np.exp(self.log_points)
        self.points.setflags(write=False)
        steps = np.diff(self.log_points)
        if steps.size and np.max(np.abs(steps - self.spacing)) > LOG_UNIFORMITY_TOL:
            raise ArgumentError("grid is not log-uniform")

    def __repr__(self):
        return ("ConeGrid(x_min=%g, count=%d, gamma=%g)"
                % (self.x_min, self.count, self.gamma))


def mu_exponents(cs):
    """Indicial exponents mu_j = sqrt(((n-1)/2)^2 - lambda_j)."""
    half = 0.5 * (cs.n - 1)
    return [math.sqrt(half * half - lam) for lam in cs.eigenvalues]


def weight_window(cs):
    """Admissible weight interval and critical order.

    Returns (gamma_lo, gamma_hi, sigma0) with the open interval
    (n-3)/2 < gamma < min(-1 + mu_1, (n+1)/2) and
    sigma0 = max(0, ((n+3)/2 - mu_1)/2).  Raises EmptyWindow when the
    interval is empty (first nonzero eigenvalue too close to 0).
    """
    mus = mu_exponents(cs)
    if len(mus) < 2:
        raise EmptyWindow("cross-section carries only the zero eigenvalue; "
                          "no spectral gap to open a weight window")
    n = cs.n
    lo = 0.5 * (n - 3)
    hi = min(-1.0 + mus[1], 0.5 * (n + 1))
    if not hi > lo:
        raise EmptyWindow("weight window (%g, %g) is empty" % (lo, hi))
    sigma0 = max(0.0, 0.5 * (0.5 * (n + 3) - mus[1]))
    return lo, hi, sigma0


def asymptotics_exponents(cs, gamma):
    """Tip asymptotics exponents q_j^± = (n-1)/2 ± mu_j inside the window.

    Only exponents in the open interval
    I_gamma = ((n-3)/2 - gamma, (n+1)/2 - gamma) are returned, sorted by
    q.  When mu_j = 0 the two signs coincide and a single entry with
    sign '+' is emitted.
    """
    half = 0.5 * (cs.n - 1)
    lo = 0.5 * (cs.n - 3) - gamma
    hi = 0.5 * (cs.n + 1) - gamma
    out = []
    for j, mu in enumerate(mu_exponents(cs)):
        signs = (("+", mu),) if mu == 0.0 else (("+", mu), ("-", -mu))
        for sign, off in signs:
            q = half + off
            if lo < q < hi:
                out.append((q, j, sign))
    out.sort(key=lambda item: (item[0], item[1]))
    return out


EXT_MINIMAL = "minimal"
EXT_WITH_C_OMEGA = "with_C_omega"


class ConeOperator:
    """Assembled log-radial cone Laplacian.

    Attributes
    ----------
    cross_section, grid : the inputs of assembly.
    mode_blocks : dict j -> DenseOperator
        Radial block of the j-th distinct eigenvalue; under the
        ``with_C_omega`` extension the j = 0 block carries one extra
        tip-constant column/row (blockdiag of the grid block and 0).
    channels : list of int
        Mode index j of each scalar channel, eigenvalue multiplicities
        unrolled; the first k_B channels are the mode-0 copies.
    extension : {"minimal", "with_C_omega"}
    chi : ndarray
        Cutoff profile on the grid, 1 near the tip, 0 near x = 1; the
        synthesized contribution of each tip constant is omega * chi.
    """

    def __init__(self, cross_section, grid, mode_blocks, channels, extension,
                 chi):
        self.cross_section = cross_section
        self.grid = grid
        self.mode_blocks = mode_blocks
        self.channels = channels
        self.extension = extension
        self.outer_bc = "dirichlet"
        self.chi = chi

    def __repr__(self):
        return ("ConeOperator(n=%d, modes=%d, count=%d, extension=%r)"
                % (self.cross_section.n, len(self.mode_blocks),
                   self.grid.count, self.extension))

    def block_for_channel(self, channel):
        return self.mode_blocks[self.channels[channel]]

    def is_augmented_channel(self, channel):
        """True when this channel carries a tip-constant unknown."""
        return (self.extension == EXT_WITH_C_OMEGA
                and self.channels[channel] == 0)


def _cutoff_profile(grid):
    """Radial profile carried by each tip-constant unknown.

    The profile is the constant 1: on the bounded model cone the locally
    constant function near the tip extends by the constant itself, which
    keeps the synthesized kernel element strictly positive, makes powers
    of tip constants tip constants again (exact steady states of the
    nonlinear evolution) and renders multiplication by radial
    coefficients exact on the augmented coordinates.
    """
    chi = np.ones(grid.count)
    chi.setflags(write=False)
    return chi


def _truncate_modes(cs, max_modes):
    cap = MODE_COUNT_CAP if max_modes is None else int(max_modes)
    keep = 1
    while (keep < len(cs.eigenvalues) and keep < cap
           and abs(cs.eigenvalues[keep]) < MODE_EIGENVALUE_CAP):
        keep += 1
    return keep


def assemble_cone_laplacian(cs, grid, extension=EXT_WITH_C_OMEGA,
                            max_modes=None):
    """Assemble the per-mode radial blocks of the cone Laplacian.

    Each block is A_j = X^{-2} E (T - mu_j^2 I) E^{-1} with T the
    second-difference matrix in t = log x closed by zero ghost values at
    both ends (Dirichlet at x = 1; vanishing-to-admissible-order at the
    tip, where the locally constant part is carried by the tip-constant
    unknown under ``with_C_omega``).  Blocks share the metric with
    weights x^{n+1} dt in which they are exactly symmetric and negative
    definite; the augmented mode-0 block appends one zero row/column for
    the tip constant, which spans the kernel.
    """
    if extension not in (EXT_MINIMAL, EXT_WITH_C_OMEGA):
        raise ArgumentError("extension must be %r or %r"
                            % (EXT_MINIMAL, EXT_WITH_C_OMEGA))
    if grid.count < MIN_GRID_COUNT:
        raise GridTooCoarse("grid needs at least %d points" % MIN_GRID_COUNT)
    if extension == EXT_WITH_C_OMEGA:
        lo, hi, _ = weight_window(cs)
        if not lo < grid.gamma < hi:
            raise ArgumentError(
                "weight gamma=%g outside the admissible interval (%g, %g) "
                "for the tip-constant extension" % (grid.gamma, lo, hi))
    keep = _truncate_modes(cs, max_modes)
    n = cs.n
    x = grid.points
    dt = grid.spacing
    M = grid.count
    half = 0.5 * (n - 1)
    # shared pieces: Dirichlet second difference and the similarity E
    T = (np.diag(np.full(M, -2.0)) + np.diag(np.ones(M - 1), 1)
         + np.diag(np.ones(M - 1), -1)) / dt ** 2
    E = x ** (-half)
    weights = x ** (n + 1.0) * dt
    mus = mu_exponents(cs)
    mode_blocks = {}
    for j in range(keep):
        S = T - mus[j] ** 2 * np.eye(M)
        block = (x ** -2.0)[:, None] * (E[:, None] * S * (1.0 / E)[None, :])
        if j == 0 and extension == EXT_WITH_C_OMEGA:
            aug = np.zeros((M + 1, M + 1), dtype=complex)
            aug[:M, :M] = block
            w = np.concatenate([weights, [1.0]])
            mode_blocks[j] = DenseOperator(aug, inner_weights=w,
                                           label="cone mode 0 (+tip const)")
        else:
            mode_blocks[j] = DenseOperator(block, inner_weights=weights,
                                           label="cone mode %d" % j)
    channels = []
    for j in range(keep):
        channels.extend([j] * cs.multiplicities[j])
    return ConeOperator(cs, grid, mode_blocks, channels, extension,
                        _cutoff_profile(grid))


def assembled_operator(op):
    """Block-diagonal DenseOperator over all channels of ``op``.

    Channel blocks appear in channel order; augmented channels contribute
    their tip-constant row/column.  Useful for feeding the whole operator
    to the probe and calculus layers.
    """
    blocks = [op.block_for_channel(c).entries for c in range(len(op.channels))]
    weights = np.concatenate(
        [op.block_for_channel(c).inner_weights for c in range(len(op.channels))])
    return DenseOperator(scipy.linalg.block_diag(*blocks),
                         inner_weights=weights,
                         label="assembled cone laplacian")


class ConeFunction:
    """Function on the discretized cone, stored mode by mode.

    ``coefficients`` maps a channel index to its radial grid vector (the
    H part); ``c_omega_part`` holds one tip constant per boundary
    component (the locally constant part near the tip).  The physical
    radial profile of channel c is coefficients[c] + omega_c * chi for
    the mode-0 channels and coefficients[c] alone otherwise.
    """

    def __init__(self, op, coefficients=None, c_omega_part=None):
        self.op = op
        self.grid = op.grid
        self.coefficients = {}
        if coefficients:
            for ch, vec in coefficients.items():
                vec = np.asarray(vec, dtype=complex)
                if vec.shape != (op.grid.count,):
                    raise ArgumentError("channel %r vector has wrong length"
                                        % (ch,))
                self.coefficients[int(ch)] = vec
        k_B = op.cross_section.components
        if c_omega_part is None:
            self.c_omega_part = np.zeros(k_B, dtype=complex)
        else:
            self.c_omega_part = np.asarray(c_omega_part, dtype=complex)
            if self.c_omega_part.shape != (k_B,):
                raise ArgumentError("c_omega_part must have one entry per "
                                    "boundary component")

    def radial_values(self, channel):
        """Physical radial profile of a channel, tip constant included."""
        vec = self.coefficients.get(channel)
        if vec is None:
            vec = np.zeros(self.grid.count, dtype=complex)
        if self.op.is_augmented_channel(channel) and channel < len(self.c_omega_part):
            vec = vec + self.c_omega_part[channel] * self.op.chi
        return vec

    @classmethod
    def from_radial(cls, op, values, channel=0):
        """Split a physical radial profile into H part and tip constant.

        The tip constant is read off at the innermost grid point; the H
        part is the remainder after subtracting omega * chi and vanishes
        at the tip by construction.  For non-augmented channels the whole
        profile is the H part.
        """
        values = np.asarray(values, dtype=complex)
        if values.shape != (op.grid.count,):
            raise ArgumentError("profile length does not match the grid")
        fun = cls(op)
        if op.is_augmented_channel(channel):
            omega = values[0]
            fun.c_omega_part[channel] = omega
            fun.coefficients[channel] = values - omega * op.chi
        else:
            fun.coefficients[channel] = values.copy()
        return fun


def mellin_norm(u, s, gamma, op):
    """Discrete Mellin weighted Sobolev norm of order s in {0, 1, 2}.

    The square of the norm is the maximum over k <= s of

        sum_channels sum_i x_i^{n+1-2*gamma} |(x d/dx)^k u_ch(x_i)|^2
                     * (1 + |lambda_j|)^{s-k} * dt,

    with (x d/dx) realized as the second-order difference in t = log x
    and cross-section derivatives realized spectrally through powers of
    (1 + |lambda_j|).  Tip constants are folded into their mode-0 radial
    profiles first.  The t-integral uses trapezoid weights; the missing
    x = 1 endpoint of the half-open grid is supplied by linear
    extrapolation of the integrand.
    """
    if s not in (0, 1, 2):
        raise UnsupportedSmoothness("smoothness order must be 0, 1 or 2, "
                                    "got %r" % (s,))
    n = op.cross_section.n
    x = op.grid.points
    dt = op.grid.spacing
    weight = x ** (n + 1.0 - 2.0 * gamma)
    lams = op.cross_section.eigenvalues
    best = 0.0
    for k in range(s + 1):
        total = 0.0
        for ch in range(len(op.channels)):
            vec = u.radial_values(ch)
            if not np.any(vec):
                continue
            for _ in range(k):
                vec = np.gradient(vec, dt)
            lam = lams[op.channels[ch]]
            f = weight * np.abs(vec) ** 2
            f_end = max(2.0 * f[-1] - f[-2], 0.0)
            integral = dt * (0.5 * f[0] + float(np.sum(f[1:]))
                             + 0.5 * f_end)
            total += (1.0 + abs(lam)) ** (s - k) * integral
        best = max(best, total)
    return math.sqrt(best)


def tip_decay_fit(u, fit_window):
    """Least-squares decay exponent of the H part near the tip.

    Fits log max_channels |u_H(x)| against log x over grid points with
    x_a <= x <= x_b and returns (slope, r2).  Raises WindowEmpty when
    fewer than two usable points fall in the window or the H part
    vanishes there.
    """
    x_a, x_b = fit_window
    op = u.op
    grid = u.grid
    if not (grid.x_min <= x_a < x_b <= 1.0):
        raise ArgumentError("fit window must satisfy x_min <= x_a < x_b <= 1")
    profile = np.zeros(grid.count)
    for ch, vec in u.coefficients.items():
        profile = np.maximum(profile, np.abs(vec))
    mask = (grid.points >= x_a) & (grid.points <= x_b) & (profile > 1e-300)
    if np.count_nonzero(mask) < 2:
        raise WindowEmpty("no usable H-part samples in the fit window "
                          "[%g, %g]" % (x_a, x_b))
    t = grid.log_points[mask]
    y = np.log(profile[mask])
    slope, intercept = np.polyfit(t, y, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(r2)


def dilation_covariance_check(op, lam, shift_steps, trials=20, seed=0,
                              vectors=None):
    """Exactness of the discrete dilation identity on interior rows.

    With rho = exp(k*dt) acting as an index shift by k, the identity

        (lam - A) u = rho^2 kappa (lam/rho^2 - A) kappa^{-1} u,
        (kappa u)_i = rho^eta u_{i+k},   eta = (n+1)/2 - gamma,

    holds exactly on rows whose stencil stays away from both ends.  Both
    sides are applied to random vectors supported on the interior index
    range and the maximum relative mismatch over all trials, modes and
    comparison rows is returned.
    """
    k = int(shift_steps)
    if k < 0:
        raise ArgumentError("shift_steps must be nonnegative")
    M = op.grid.count
    if k >= M // 4:
        raise ShiftTooLarge("shift of %d steps on %d points leaves no "
                            "interior rows (limit %d)" % (k, M, M // 4))
    lo_idx, hi_idx = k + 1, M - 2 - k
    if hi_idx < lo_idx:
        raise WindowEmpty("no interior rows for shift %d" % k)
    rows = slice(1, M - 1 - k)
    dt = op.grid.spacing
    rho = math.exp(k * dt)
    eta = 0.5 * (op.cross_section.n + 1) - op.grid.gamma
    rng = np.random.default_rng(seed)
    if vectors is None:
        vectors = []
        for _ in range(trials):
            v = np.zeros(M, dtype=complex)
            v[lo_idx:hi_idx + 1] = (rng.standard_normal(hi_idx + 1 - lo_idx)
                                    + 1j * rng.standard_normal(hi_idx + 1 - lo_idx))
            vectors.append(v)
    else:
        vectors = [np.asarray(v, dtype=complex) for v in vectors]
        if all(not np.any(v[lo_idx:hi_idx + 1]) for v in vectors):
            raise WindowEmpty("supplied vectors vanish on the interior "
                              "index range [%d, %d]" % (lo_idx, hi_idx))
    worst = 0.0
    for j, block in op.mode_blocks.items():
        A = block.entries[:M, :M]
        for u in vectors:
            lhs = lam * u - A @ u
            shifted = np.zeros(M, dtype=complex)
            shifted[k:] = rho ** (-eta) * u[:M - k]
            w = (lam / rho ** 2) * shifted - A @ shifted
            rhs = np.empty(M, dtype=complex)
            rhs[:M - k] = rho ** (2.0 + eta) * w[k:]
            rhs[M - k:] = 0.0
            scale = max(np.max(np.abs(lhs[rows])), 1e-300)
            worst = max(worst, float(np.max(np.abs(lhs[rows] - rhs[rows]))
                                     / scale))
    return worst


class SpectrumReport:
    """Per-block spectral diagnostics of an assembled cone operator."""

    def __init__(self, blocks, kernel_count, expected_kernel, passed):
        self.blocks = blocks
        self.kernel_count = kernel_count
        self.expected_kernel = expected_kernel
        self.passed = passed


def spectrum_check(op, kernel_tol=1e-8, symmetry_tol=1e-10):
    """Verify the blocks are symmetric in the metric with spectrum in
    [0, infinity) for -A, and count the kernel dimension.

    Multiplicities are honored when counting kernel vectors, so the total
    equals the number of boundary components exactly under the
    tip-constant extension and zero otherwise.
    """
    blocks = []
    kernel_total = 0
    passed = True
    for j in sorted(op.mode_blocks):
        block = op.mode_blocks[j]
        W = block.weighted_entries()
        sym_res = float(np.max(np.abs(W - W.conj().T)))
        scale = max(float(np.max(np.abs(W))), 1.0)
        eigs = scipy.linalg.eigvalsh(-0.5 * (W + W.conj().T))
        max_imag = 0.0
        kernel = int(np.count_nonzero(np.abs(eigs) <= kernel_tol * scale))
        min_eig = float(eigs[0])
        copies = op.cross_section.multiplicities[j]
        kernel_total += kernel * copies
        ok = (sym_res <= symmetry_tol * scale
              and min_eig >= -kernel_tol * scale)
        passed = passed and ok
        blocks.append({"mode": j, "symmetry_residual": sym_res,
                       "max_imag": max_imag, "min_eigenvalue": min_eig,
                       "kernel_count": kernel, "ok": ok})
    expected = (op.cross_section.components
                if op.extension == EXT_WITH_C_OMEGA else 0)
    passed = passed and kernel_total == expected
    return SpectrumReport(blocks, kernel_total, expected, passed)
