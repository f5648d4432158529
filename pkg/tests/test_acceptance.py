"""Acceptance gate: one test per published criterion.

Each test prints a single PASS line with its runtime; tolerances and
runtime caps are asserted inside the test bodies.
"""

import contextlib
import json
import math
import os
import time

import numpy as np
import pytest

from fraccone import cli, cone, fpme, funcalc, linop, sectorial


@contextlib.contextmanager
def budget(name, seconds):
    start = time.monotonic()
    yield
    elapsed = time.monotonic() - start
    assert elapsed <= seconds, "%s exceeded %gs (%.1fs)" % (name, seconds,
                                                            elapsed)
    print("PASS %s (%.1fs)" % (name, elapsed))


def random_normal_matrix(rng, dim, lo=1e-2, hi=1e4):
    Q = np.linalg.qr(rng.standard_normal((dim, dim)))[0]
    d = np.exp(rng.uniform(math.log(lo), math.log(hi), dim))
    return linop.DenseOperator(Q @ np.diag(d) @ Q.T)


@pytest.fixture(scope="module")
def flat_op():
    cs = cone.builtin_circle(max_modes=3)
    grid = cone.ConeGrid(1e-3, 64, -0.5)
    return cone.assemble_cone_laplacian(cs, grid)


@pytest.fixture(scope="module")
def generator_half(flat_op):
    return fpme.build_frac_generator(flat_op, 0.5)


def test_criterion_01_fractional_power_oracle():
    rng = np.random.default_rng(42)
    with budget("criterion 1: fractional-power oracle equivalence", 10.0):
        for i in range(50):
            A = random_normal_matrix(rng, int(rng.integers(2, 17)))
            sigma = (0.25, 0.5, 0.75)[i % 3]
            ref = funcalc.frac_power(
                A, funcalc.PowerSpec(sigma, method="eigen_oracle"))
            got = funcalc.frac_power(A, funcalc.PowerSpec(sigma))
            err = (np.linalg.norm(got.entries - ref.entries, 2)
                   / np.linalg.norm(ref.entries, 2))
            assert err <= 1e-8


def test_criterion_02_fractional_resolvent_identity():
    rng = np.random.default_rng(7)
    with budget("criterion 2: fractional resolvent identity and path "
                "independence", 30.0):
        for sigma in (0.4, 0.6):
            A = random_normal_matrix(rng, 6, lo=0.5, hi=50.0)
            Asig = funcalc.frac_power(
                A, funcalc.PowerSpec(sigma, method="eigen_oracle"))
            sector = math.pi * (1.0 - sigma)
            for _ in range(20):
                psi = rng.uniform(-sector + 0.1, sector - 0.1)
                r = math.exp(rng.uniform(math.log(0.1), math.log(100.0)))
                lam = r * complex(math.cos(psi), math.sin(psi))
                v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
                got = funcalc.frac_resolvent_apply(A, sigma, lam, v)
                ref = linop.shifted_solve(Asig, lam, v)
                assert np.linalg.norm(got - ref) <= 1e-7 * np.linalg.norm(ref)
            # path deformation: half-line versus rotated rays
            lam = 2.0 * complex(math.cos(0.2), math.sin(0.2))
            v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
            half = funcalc.frac_resolvent_apply(A, sigma, lam, v)
            for phi in (0.7, -0.7):
                ray = funcalc.frac_resolvent_apply(A, sigma, lam, v,
                                                   theta_contour=phi)
                assert np.linalg.norm(ray - half) <= \
                    1e-7 * np.linalg.norm(half)


def test_criterion_03_shift_comparison_scaling():
    A = linop.DenseOperator(np.diag([0.0, 1.0]))
    with budget("criterion 3: shift comparison scaling law", 5.0):
        cs = np.geomspace(1e-4, 1e-2, 6)
        for sigma in (0.25, 0.5):
            rows = funcalc.shift_comparison_probe(A, sigma, cs)
            slope = np.polyfit([math.log(c) for c, _, _ in rows],
                               [math.log(m) for _, m, _ in rows], 1)[0]
            assert abs(slope - sigma) <= 0.02


def test_criterion_04_power_resolvent_decay():
    rng = np.random.default_rng(11)
    with budget("criterion 4: power-resolvent decay fit", 20.0):
        for i in range(10):
            A = random_normal_matrix(rng, int(rng.integers(3, 8)),
                                     lo=0.1, hi=100.0)
            sigma = float(rng.uniform(0.25, 0.9))
            theta = (0.0, math.pi / 2)[i % 2]
            _, slope = sectorial.power_resolvent_decay_fit(A, sigma, theta,
                                                           samples=25)
            assert slope <= -(1.0 - sigma) + 0.05


def test_criterion_05_laurent_identities(flat_op):
    with budget("criterion 5: Laurent coefficient identities", 30.0):
        listed = [
            (linop.DenseOperator(np.diag([0.0, 2.0])), 1),
            (linop.DenseOperator(np.eye(2)), 1),
            (linop.DenseOperator([[0.0, 1.0], [0.0, 0.0]]), 2),
        ]
        for A, order in listed:
            exp = sectorial.laurent_coefficients(A, 0.0, order_guess=order,
                                                 contour_radius=1.0
                                                 if order == 2 else None)
            res = sectorial.verify_laurent_identities(exp, A)
            assert max(res.values()) <= 1e-8
        A = cone.assembled_operator(flat_op)
        minus = A.with_entries(-A.entries)
        exp = sectorial.laurent_coefficients(minus, 0.0)
        res = sectorial.verify_laurent_identities(exp, minus)
        assert max(res.values()) <= 1e-6
        is_simple, _ = sectorial.simple_pole_check(minus)
        assert is_simple


def test_criterion_06_rbound_mechanism(generator_half):
    theta = 3.0 * math.pi / 4.0
    sigma = 0.5
    with budget("criterion 6: randomized square-function bound", 60.0):
        psi = math.pi - (math.pi - theta) * sigma - 1e-2
        family = []
        for idx, r in enumerate(np.geomspace(0.1, 100.0, 8)):
            ang = psi if idx % 2 == 0 else -psi
            lam = r * complex(math.cos(ang), math.sin(ang))
            sol = linop.shifted_solve(generator_half, lam,
                                      np.eye(generator_half.dim,
                                             dtype=complex))
            family.append(generator_half.with_entries(lam * sol))
        est = sectorial.rademacher_rbound_estimate(family, trials=40, seed=0)
        assert math.isfinite(est.max_ratio)
        assert est.max_ratio <= est.uniform_norm_bound + 1e-6
        mc = sectorial.rademacher_rbound_estimate(family, trials=40, seed=0,
                                                  force_mc=True)
        assert abs(mc.max_ratio - est.max_ratio) <= 0.05 * est.max_ratio


def test_criterion_07_cone_geometry_formulas():
    with budget("criterion 7: cone geometry formulas", 1.0):
        circle = cone.builtin_circle()
        sphere = cone.builtin_sphere()
        assert cone.mu_exponents(circle)[1] == pytest.approx(1.0)
        assert cone.mu_exponents(sphere)[1] == pytest.approx(1.5)
        assert cone.weight_window(circle) == (-1.0, 0.0, 0.5)
        assert cone.weight_window(sphere) == (-0.5, 0.5, 0.5)
        assert cone.asymptotics_exponents(circle, -0.5) == \
            [(0.0, 0, "+"), (1.0, 1, "+")]


def test_criterion_08_dilation_covariance():
    with budget("criterion 8: dilation covariance", 5.0):
        cs = cone.builtin_circle(max_modes=3)
        grid = cone.ConeGrid(1e-3, 256, -0.5)
        op = cone.assemble_cone_laplacian(cs, grid)
        for k in (1, 2, 4):
            assert cone.dilation_covariance_check(op, 1.0, k) <= 1e-10


def test_criterion_09_extension_dichotomy():
    with budget("criterion 9: extension dichotomy", 10.0):
        cs = cone.builtin_circle(max_modes=3)
        for gamma in (-0.75, -0.5, -0.25):
            grid = cone.ConeGrid(1e-3, 64, gamma)
            full = cone.assemble_cone_laplacian(cs, grid)
            assert cone.spectrum_check(full).kernel_count == cs.components
            bare = cone.assemble_cone_laplacian(cs, grid,
                                                extension=cone.EXT_MINIMAL)
            assert cone.spectrum_check(bare).kernel_count == 0


def test_criterion_10_fpme_linear_benchmark(flat_op, generator_half):
    with budget("criterion 10: linear-mode time stepping benchmark", 60.0):
        block = flat_op.mode_blocks[1]
        eig = linop.eigen_decompose(block.with_entries(-block.entries))
        idx = int(np.argmin(eig.eigenvalues.real))
        kappa = float(eig.eigenvalues[idx].real)
        psi = np.real(eig.right_vectors[:, idx])
        psi /= np.max(np.abs(psi))
        w = block.inner_weights
        T = 1e-2
        phys_psi = fpme.to_physical_values(
            flat_op, cone.ConeFunction(flat_op, {1: psi}))
        errors = []
        for dt in (4e-4, 2e-4, 1e-4):
            cfg = fpme.FpmeConfig(sigma=0.5, m=1, dt=dt, t_end=T,
                                  snapshot_stride=10 ** 9)
            u0 = fpme.function_from_physical(flat_op, 2.0 + 0.5 * phys_psi)
            rec = fpme.run(u0, cfg, flat_op, Lsigma=generator_half)
            vec = rec.snapshots[-1].coefficients[1]
            amp = float(np.real(np.vdot(psi, w * vec)
                                / np.vdot(psi, w * psi)))
            exact = 0.5 * math.exp(-math.sqrt(kappa) * T)
            errors.append(abs(amp - exact))
        assert errors[-1] <= 1e-3 * 0.5
        assert 1.8 <= errors[0] / errors[1] <= 2.2
        assert 1.8 <= errors[1] / errors[2] <= 2.2


def test_criterion_11_steady_state_and_positivity(flat_op, generator_half):
    with budget("criterion 11: steady state and positivity", 60.0):
        # a) constant data over 1000 steps of the nonlinear scheme
        u0 = cone.ConeFunction(flat_op, c_omega_part=[2.0])
        cfg = fpme.FpmeConfig(sigma=0.5, m=2, dt=1e-3, t_end=1.0,
                              snapshot_stride=250)
        rec = fpme.run(u0, cfg, flat_op, Lsigma=generator_half)
        assert rec.times[-1] == pytest.approx(1.0)   # all 1000 steps taken
        for snap in rec.snapshots:
            assert abs(snap.c_omega_part[0] - 2.0) <= 1e-10
            for vec in snap.coefficients.values():
                assert np.max(np.abs(vec)) <= 1e-10
        assert all(d["clamp_count"] == 0 for d in rec.diagnostics)
        # b) nonlinear bump regression on the finer grid never clamps
        cs = cone.builtin_circle(max_modes=3)
        grid = cone.ConeGrid(1e-3, 128, -0.5)
        op = cone.assemble_cone_laplacian(cs, grid)
        u0 = fpme.function_from_physical(op, 1.0 + op.grid.points)
        cfg = fpme.FpmeConfig(sigma=0.75, m=2, dt=1e-3, t_end=2e-2)
        rec = fpme.run(u0, cfg, op)
        assert all(d["clamp_count"] == 0 for d in rec.diagnostics)
        assert min(d["min_value"] for d in rec.diagnostics) >= \
            cfg.positivity_floor


def test_criterion_12_tip_decay_report(tmp_path):
    with budget("criterion 12: tip decay rate report", 60.0):
        assert cli.main(["decay", "--out", str(tmp_path)]) == 0
        with open(os.path.join(str(tmp_path), "decay.json")) as fh:
            doc = json.load(fh)
        assert doc["target_exponent"] == pytest.approx(0.0)
        assert doc["tip_alpha_mid"] >= doc["target_exponent"] - 0.1
        assert doc["passed"] is True


def test_criterion_13_commutator_scan():
    with budget("criterion 13: commutator smallness scan", 120.0):
        norms = {}
        reports = {}
        for count in (64, 128):
            cs = cone.builtin_circle(max_modes=3)
            grid = cone.ConeGrid(1e-3, count, -0.5)
            op = cone.assemble_cone_laplacian(cs, grid)
            profile = 1.0 + 0.5 * np.exp(-(op.grid.log_points + 3.0) ** 2)
            w = cone.ConeFunction.from_radial(op, profile)
            rep = fpme.commutator_decay_scan(w, op, 0.5, 0.6, 0.05,
                                             (1.0, 4.0, 16.0, 64.0, 256.0))
            assert math.isfinite(rep.weighted_norm)
            norms[count] = rep.weighted_norm
            reports[count] = rep
        change = abs(norms[128] - norms[64]) / norms[64]
        assert change < 0.25
        for rep in reports.values():
            assert rep.mu_exponent < -1.0
            assert rep.passed


def test_criterion_14_reproducibility(tmp_path):
    with budget("criterion 14: reproducible verification reports", 120.0):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert cli.main(["verify", "--out", str(a), "--seed", "5"]) == 0
        assert cli.main(["verify", "--out", str(b), "--seed", "5"]) == 0
        bytes_a = (a / "verify.json").read_bytes()
        bytes_b = (b / "verify.json").read_bytes()
        assert bytes_a == bytes_b
