import math
import warnings

import numpy as np
import pytest

from fraccone import cone, fpme, linop
from fraccone.errors import ArgumentError, NonPositiveState, SolveFailed


@pytest.fixture(scope="module")
def flat_op():
    cs = cone.builtin_circle(max_modes=3)
    grid = cone.ConeGrid(1e-3, 64, -0.5)
    return cone.assemble_cone_laplacian(cs, grid)


@pytest.fixture(scope="module")
def generator_half(flat_op):
    return fpme.build_frac_generator(flat_op, 0.5)


def mode_eigenpair(op, channel=1):
    """Ground eigenpair (kappa, psi) of -A on a non-augmented channel."""
    block = op.block_for_channel(channel)
    eig = linop.eigen_decompose(block.with_entries(-block.entries))
    order = np.argsort(eig.eigenvalues.real)
    kappa = float(eig.eigenvalues[order[0]].real)
    psi = np.real(eig.right_vectors[:, order[0]])
    return kappa, psi / np.max(np.abs(psi))


def channel_projection(op, vec, psi, channel=1):
    w = op.block_for_channel(channel).inner_weights
    return float(np.real(np.vdot(psi, w * vec) / np.vdot(psi, w * psi)))


# ---------------------------------------------------------------------------
# configuration and records


def test_config_validation():
    with pytest.raises(ArgumentError):
        fpme.FpmeConfig(sigma=1.5, m=1, dt=1e-3, t_end=1e-2)
    with pytest.raises(ArgumentError):
        fpme.FpmeConfig(sigma=0.5, m=0.0, dt=1e-3, t_end=1e-2)
    with pytest.raises(ArgumentError):
        fpme.FpmeConfig(sigma=0.5, m=1, dt=-1e-3, t_end=1e-2)
    with pytest.raises(ArgumentError):
        fpme.FpmeConfig(sigma=0.5, m=1, dt=1e-3, t_end=1e-2,
                        positivity_floor=0.0)
    with pytest.raises(ArgumentError):
        fpme.FpmeConfig(sigma=0.5, m=1, dt=1e-3, t_end=1e-2,
                        scheme="leapfrog")


def test_trajectory_record_basics(flat_op):
    rec = fpme.TrajectoryRecord()
    fun = cone.ConeFunction(flat_op, c_omega_part=[1.0])
    diag = {"min_value": 1.0, "sup_norm": 1.0, "h0gamma_norm": 1.0,
            "tip_alpha": 0.0}
    rec.append(0.0, fun, diag)
    with pytest.raises(ArgumentError):
        rec.append(0.0, fun, diag)
    rec.append(0.5, fun, diag)
    lines = rec.to_csv().splitlines()
    assert lines[0] == "t,min_value,sup_norm,h0gamma_norm,tip_alpha"
    assert len(lines) == 3
    snap = rec.snapshot_csv(0).splitlines()
    assert len(snap) == flat_op.grid.count


def test_physical_roundtrip(flat_op):
    rng = np.random.default_rng(0)
    fun = cone.ConeFunction(
        flat_op,
        {ch: rng.standard_normal(flat_op.grid.count)
         for ch in range(len(flat_op.channels))},
        c_omega_part=[0.7])
    values = fpme.to_physical_values(flat_op, fun)
    assert values.shape == (flat_op.grid.count, len(flat_op.channels))
    back = fpme.function_from_physical(flat_op, values)
    again = fpme.to_physical_values(flat_op, back)
    assert np.max(np.abs(again - values)) <= 1e-12 * np.max(np.abs(values))


# ---------------------------------------------------------------------------
# fractional generator


def test_generator_first_power_is_negated_operator(flat_op):
    L1 = fpme.build_frac_generator(flat_op, 1.0)
    A = cone.assembled_operator(flat_op)
    assert np.max(np.abs(L1.entries + A.entries)) <= 1e-9 * \
        np.max(np.abs(A.entries))


def test_generator_annihilates_kernel(flat_op, generator_half):
    fun = cone.ConeFunction(flat_op, c_omega_part=[1.0])
    state = fpme._state_vector(flat_op, fun)
    image = generator_half.entries @ state
    assert np.max(np.abs(image)) <= 1e-7


def test_generator_block_square_roots(flat_op, generator_half):
    block = flat_op.mode_blocks[1]
    base = np.sort(np.linalg.eigvals(-block.entries).real)
    M = flat_op.grid.count
    sl = slice(M + 1, 2 * M + 1)
    got = np.sort(np.linalg.eigvals(
        generator_half.entries[sl, sl]).real)
    assert np.max(np.abs(got - np.sqrt(base))) <= 1e-7 * np.max(np.sqrt(base))


def test_generator_requires_tip_constant_extension():
    cs = cone.builtin_circle(max_modes=2)
    grid = cone.ConeGrid(1e-3, 64, -0.5)
    op = cone.assemble_cone_laplacian(cs, grid,
                                      extension=cone.EXT_MINIMAL)
    with pytest.raises(ArgumentError):
        fpme.build_frac_generator(op, 0.5)


# ---------------------------------------------------------------------------
# stepping


def test_step_scales_eigenmode(flat_op, generator_half):
    kappa, psi = mode_eigenpair(flat_op)
    kappa_sig = math.sqrt(kappa)
    cfg = fpme.FpmeConfig(sigma=0.5, m=1, dt=1e-3, t_end=1e-3)
    w = cone.ConeFunction(flat_op, {1: 0.1 * psi}, c_omega_part=[2.0])
    w_plus = fpme.step_semi_implicit(w, cfg, generator_half, flat_op)
    # the tip constant spans the kernel and survives untouched
    assert abs(w_plus.c_omega_part[0] - 2.0) <= 1e-7
    # the eigenmode contracts by the implicit Euler factor
    want = 0.1 / (1.0 + cfg.dt * kappa_sig)
    got = channel_projection(flat_op, w_plus.coefficients[1], psi)
    assert abs(got - want) <= 1e-6 * want


def test_step_constant_is_stationary(flat_op, generator_half):
    cfg = fpme.FpmeConfig(sigma=0.5, m=2, dt=1e-3, t_end=1e-3)
    w = cone.ConeFunction(flat_op, c_omega_part=[4.0])
    w_plus = fpme.step_semi_implicit(w, cfg, generator_half, flat_op)
    phys = fpme.to_physical_values(flat_op, w_plus)
    assert np.max(np.abs(phys - 4.0)) <= 1e-10
    assert w_plus.clamp_count == 0


def test_step_rejects_non_positive_state(flat_op, generator_half):
    cfg = fpme.FpmeConfig(sigma=0.5, m=1, dt=1e-3, t_end=1e-3)
    values = np.full(flat_op.grid.count, -1.0)
    w = cone.ConeFunction.from_radial(flat_op, values)
    with pytest.raises(NonPositiveState):
        fpme.step_semi_implicit(w, cfg, generator_half, flat_op)


def test_step_singular_system_reports_solve_failure(flat_op):
    cfg = fpme.FpmeConfig(sigma=0.5, m=1, dt=1.0, t_end=1.0)
    _, total = fpme._channel_slices(flat_op)
    bad = linop.DenseOperator(-np.eye(total))
    w = cone.ConeFunction(flat_op, c_omega_part=[1.0])
    with pytest.raises(SolveFailed):
        fpme.step_semi_implicit(w, cfg, bad, flat_op)


# ---------------------------------------------------------------------------
# trajectories


def test_run_constant_steady_state(flat_op, generator_half):
    u0 = cone.ConeFunction(flat_op, c_omega_part=[3.0])
    cfg = fpme.FpmeConfig(sigma=0.5, m=2, dt=1e-3, t_end=2e-2,
                          snapshot_stride=5)
    rec = fpme.run(u0, cfg, flat_op, Lsigma=generator_half)
    sups = [d["sup_norm"] for d in rec.diagnostics]
    assert max(abs(s - 3.0) for s in sups) <= 1e-10
    assert all(d["clamp_count"] == 0 for d in rec.diagnostics)
    assert rec.stability_hint is not None


def test_run_linear_eigenmode_first_order(flat_op, generator_half):
    kappa, psi = mode_eigenpair(flat_op)
    kappa_sig = math.sqrt(kappa)
    T = 4e-3
    phys_psi = fpme.to_physical_values(
        flat_op, cone.ConeFunction(flat_op, {1: psi}))
    errors = []
    for dt in (4e-4, 2e-4, 1e-4):
        cfg = fpme.FpmeConfig(sigma=0.5, m=1, dt=dt, t_end=T,
                              snapshot_stride=10 ** 9)
        u0 = fpme.function_from_physical(flat_op, 2.0 + 0.5 * phys_psi)
        rec = fpme.run(u0, cfg, flat_op, Lsigma=generator_half)
        final = rec.snapshots[-1]
        amp = channel_projection(flat_op, final.coefficients[1], psi)
        errors.append(abs(amp - 0.5 * math.exp(-kappa_sig * T)))
    assert errors[-1] <= 1e-3
    assert 1.8 <= errors[0] / errors[1] <= 2.2
    assert 1.8 <= errors[1] / errors[2] <= 2.2


def test_run_positive_bump_regression(flat_op, generator_half):
    x = flat_op.grid.points
    u0 = fpme.function_from_physical(flat_op, (1.0 + x)[:, None])
    cfg = fpme.FpmeConfig(sigma=0.5, m=2, dt=1e-3, t_end=2e-2)
    rec = fpme.run(u0, cfg, flat_op, Lsigma=generator_half)
    mins = [d["min_value"] for d in rec.diagnostics]
    sups = [d["sup_norm"] for d in rec.diagnostics]
    assert min(mins) >= cfg.positivity_floor
    assert all(b <= a + 1e-8 for a, b in zip(sups[1:], sups[2:]))
    assert all(d["clamp_count"] == 0 for d in rec.diagnostics)


def test_run_zero_horizon_single_snapshot(flat_op, generator_half):
    u0 = cone.ConeFunction(flat_op, c_omega_part=[1.0])
    cfg = fpme.FpmeConfig(sigma=0.75, m=1, dt=1e-3, t_end=0.0)
    rec = fpme.run(u0, cfg, flat_op, Lsigma=generator_half)
    assert rec.times == [0.0]
    assert len(rec.snapshots) == 1


def test_run_warns_below_critical_order(flat_op, generator_half):
    u0 = cone.ConeFunction(flat_op, c_omega_part=[1.0])
    cfg = fpme.FpmeConfig(sigma=0.4, m=1, dt=1e-3, t_end=0.0)
    with pytest.warns(UserWarning):
        fpme.run(u0, cfg, flat_op, Lsigma=generator_half)


def test_run_rejects_non_positive_initial_data(flat_op, generator_half):
    u0 = cone.ConeFunction(flat_op)   # identically zero
    cfg = fpme.FpmeConfig(sigma=0.75, m=1, dt=1e-3, t_end=1e-3)
    with pytest.raises(NonPositiveState):
        fpme.run(u0, cfg, flat_op, Lsigma=generator_half)


def test_substitution_consistency():
    # the substitution u = w^{1/m} turns the w step back into the original
    # equation: one implicit step in w agrees with the explicit update
    # u - dt * Lsigma w to second order in dt.  A mild grid keeps
    # dt * ||Lsigma|| small enough to see the asymptotic order.
    cs = cone.builtin_circle(max_modes=3)
    grid = cone.ConeGrid(0.1, 32, -0.5)
    op = cone.assemble_cone_laplacian(cs, grid)
    L = fpme.build_frac_generator(op, 0.5)
    phys0 = (1.0 + op.grid.points)[:, None]
    m = 2.0
    diffs = []
    for dt in (2e-4, 1e-4):
        cfg = fpme.FpmeConfig(sigma=0.5, m=m, dt=dt, t_end=dt)
        w0 = fpme.function_from_physical(op, phys0 ** m)
        w1 = fpme.step_semi_implicit(w0, cfg, L, op)
        u_implicit = fpme.to_physical_values(op, w1) ** (1.0 / m)
        Lw = L.entries @ fpme._state_vector(op, w0)
        Lw_phys = fpme.to_physical_values(
            op, fpme._function_from_state(op, Lw))
        u_explicit = phys0 - dt * np.real(Lw_phys)
        diffs.append(np.max(np.abs(np.real(u_implicit) - u_explicit)))
    assert 3.5 <= diffs[0] / diffs[1] <= 4.5


# ---------------------------------------------------------------------------
# linearization probes


def bump_multiplier(op, amplitude=0.5):
    profile = 1.0 + amplitude * np.exp(-(op.grid.log_points + 3.0) ** 2)
    return cone.ConeFunction.from_radial(op, profile)


def test_commutator_constant_multiplier_vanishes(flat_op):
    w = cone.ConeFunction.from_radial(flat_op,
                                      np.ones(flat_op.grid.count))
    rep = fpme.commutator_decay_scan(w, flat_op, 0.5, 0.6, 0.05,
                                     (1.0, 4.0, 16.0, 64.0))
    assert rep.weighted_norm <= 1e-10
    assert all(v <= 1e-12 for v in rep.samples.values())


def test_commutator_bump_multiplier(flat_op):
    rep = fpme.commutator_decay_scan(bump_multiplier(flat_op), flat_op,
                                     0.5, 0.6, 0.05,
                                     (1.0, 4.0, 16.0, 64.0))
    assert math.isfinite(rep.weighted_norm)
    assert rep.weighted_norm > 0
    assert rep.alpha == pytest.approx(1.0)
    assert rep.lambda_exponent <= 0.1
    assert rep.mu_exponent < -1.0
    assert rep.beta > 0.0
    assert rep.passed
    with pytest.raises(ArgumentError):
        fpme.commutator_decay_scan(bump_multiplier(flat_op), flat_op,
                                   0.5, 0.6, 0.05, (1.0,), c=0.0)


def test_sectoriality_probe_unit_multiplier(flat_op):
    w = cone.ConeFunction.from_radial(flat_op,
                                      np.ones(flat_op.grid.count))
    rep = fpme.linearization_sectoriality_probe(w, flat_op, 0.5,
                                                c_grid=(0.25, 1.0))
    assert rep.c_star == 0.25
    # W = I makes the shifted operator normal with positive spectrum
    assert rep.bounds[0.25] <= 1.0 / math.sin(math.pi / 4.0) + 1e-6
    assert rep.rbound is not None
    assert rep.rbound.max_ratio <= rep.rbound.uniform_norm_bound + 1e-6


def test_sectoriality_probe_bump_multiplier(flat_op):
    rep = fpme.linearization_sectoriality_probe(
        bump_multiplier(flat_op, 0.1), flat_op, 0.5, c_grid=(0.25, 1.0))
    assert rep.c_star is not None
    assert math.isfinite(rep.bounds[rep.c_star])


def test_sectoriality_probe_rejects_vanishing_multiplier(flat_op):
    profile = np.ones(flat_op.grid.count)
    profile[5] = 0.0
    w = cone.ConeFunction.from_radial(flat_op, profile)
    with pytest.raises(ArgumentError):
        fpme.linearization_sectoriality_probe(w, flat_op, 0.5,
                                              c_grid=(0.25,))
