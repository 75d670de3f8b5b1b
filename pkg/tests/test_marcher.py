import math

import numpy as np
import pytest

from ksmarch.errors import (BoundOverflow, InconsistentInitialState, LipschitzBudgetExceeded,
                            VRepresentabilityBreakdown)
from ksmarch.experiments import convergence_orders, roundtrip_model, run_roundtrip
from ksmarch.fock import LatticeModel, build_basis, chain_hopping, slater_amplitudes
from ksmarch.marcher import (ExactSource, MarchConfig, StencilSource, check_initial_consistency,
                             fit_initial_orbitals, march, required_precision, required_steps)
from ksmarch.oracle import DensityTrace, exact_dn, generate_trace, measure_density, uniform_grid
from ksmarch.propagator import KSState, ManyBodyState, ground_orbitals
from ksmarch.waveforms import PotentialSchedule, constant, sinusoid


def current_carrying_dimer():
    """Dimer orbital with a relative phase, so the initial current is nonzero."""
    phi = np.array([[np.sqrt(0.7)], [np.sqrt(0.3) * np.exp(0.9j)]])
    model = LatticeModel(chain_hopping(2), 1, sinusoid([0.0, 0.0], [0.3, -0.3], omega=1.0))
    b = build_basis(2, 1)
    return phi, model, b, ManyBodyState(slater_amplitudes(phi, b))


class TestConfig:
    def test_grid(self):
        cfg = MarchConfig(z=7, t0=0.5, t1=2.25)
        assert abs(cfg.z * cfg.dt - (cfg.t1 - cfg.t0)) <= 1e-12
        assert cfg.time(7) == pytest.approx(2.25)

    @pytest.mark.parametrize("kw", [{"z": 0}, {"t1": 0.0}, {"L": 0.0}, {"eps": -1.0},
                                    {"restart_growth": 1.0}, {"source_mode": "magic"}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            MarchConfig(**kw)


class TestConsistency:
    def test_slater_passes(self):
        phi, model, b, psi = current_carrying_dimer()
        rep = check_initial_consistency(KSState(phi), ExactSource(model, b, psi), model.T, tol=1e-8)
        assert rep.passed

    def test_zeroed_phases_fail_on_current(self):
        phi, model, b, psi = current_carrying_dimer()
        flat = KSState(np.abs(phi))
        with pytest.raises(InconsistentInitialState) as info:
            check_initial_consistency(flat, ExactSource(model, b, psi), model.T, tol=1e-8)
        assert np.max(np.abs(info.value.density_residual)) < 1e-12
        assert np.max(np.abs(info.value.current_residual)) > 1e-3

    def test_infinite_tolerance(self):
        phi, model, b, psi = current_carrying_dimer()
        assert check_initial_consistency(KSState(np.abs(phi)), ExactSource(model, b, psi), model.T,
                                         tol=math.inf).passed

    def test_against_trace(self):
        phi, model, b, psi = current_carrying_dimer()
        tr = generate_trace(model, b, psi, uniform_grid(-0.002, 1e-3, 5), substeps=10)
        assert check_initial_consistency(KSState(phi), tr, model.T, tol=1e-7).passed

    def test_phase_fit_single_electron(self):
        M = 4
        model = LatticeModel(chain_hopping(M), 1, constant(np.zeros(M)))
        b = build_basis(M, 1)
        rng = np.random.default_rng(3)
        amp = rng.standard_normal(M) + 1j * rng.standard_normal(M)
        psi = ManyBodyState(amp / np.linalg.norm(amp))
        fit = fit_initial_orbitals(measure_density(psi, b), exact_dn(psi, model, b), model.T, 1)
        assert check_initial_consistency(fit, ExactSource(model, b, psi), model.T, tol=1e-8).passed

    def test_phase_fit_many_electrons_warns(self):
        with pytest.warns(UserWarning):
            fit = fit_initial_orbitals(np.full(4, 0.5), np.zeros(4), chain_hopping(4), 2)
        assert fit.gram_deviation() < 1e-10


class TestMarch:
    def test_first_order(self):
        errs = [run_roundtrip(z).potential_error for z in (25, 50, 100)]
        orders = convergence_orders(errs)
        assert np.all((orders > 0.8) & (orders < 1.2)), orders

    def test_outputs(self):
        rt = run_roundtrip(40)
        res = rt.result
        assert res.potentials.shape == (40, 4)
        assert res.ks_densities.shape == res.target_densities.shape == (41, 4)
        assert len(res.diagnostics) == 40 and res.K.shape == (40, 4, 4)
        assert np.max(np.abs(res.potentials.sum(axis=1))) <= 1e-12
        assert len(res.ks_states) == 41

    def test_density_error_refinement(self):
        a = run_roundtrip(50).result.density_error[-1]
        b = run_roundtrip(100).result.density_error[-1]
        assert b <= 1.05 * a

    def test_deterministic(self):
        a, b = run_roundtrip(30).result, run_roundtrip(30).result
        assert np.array_equal(a.potentials, b.potentials)
        assert np.array_equal(a.ks_densities, b.ks_densities)

    def test_self_map_with_shifted_potential(self):
        """With W=0 and Phi=Psi, the recovered potential is the external one up to a constant."""
        base = roundtrip_model()
        shifted = PotentialSchedule("sinusoid", base.potential.static + 2.5, base.potential.amplitude,
                                    base.potential.params)
        rt = run_roundtrip(100, model=base.with_potential(shifted))
        assert rt.potential_error < 0.03

    def test_understated_L_restarts(self):
        rt = run_roundtrip(50, L=0.05)
        assert rt.restarts >= 1
        assert rt.result.L >= 0.05 * 2 ** rt.restarts * 0.999

    def test_restart_budget(self):
        model = roundtrip_model()
        b = build_basis(4, 1)
        phi0 = ground_orbitals(model.T, model.V(0.0), 1)
        src = ExactSource(model, b, ManyBodyState(slater_amplitudes(phi0, b)))
        with pytest.raises(LipschitzBudgetExceeded) as info:
            march(KSState(phi0), src, model, MarchConfig(z=50, L=1e-3, max_restarts=2))
        assert info.value.step is not None

    def test_breakdown_reports_step(self):
        model = LatticeModel(chain_hopping(3), 1, constant(np.zeros(3)))
        b = build_basis(3, 1)
        phi = np.array([[1.0], [0.0], [0.0]])
        src = ExactSource(model, b, ManyBodyState(slater_amplitudes(phi, b)))
        with pytest.raises(VRepresentabilityBreakdown) as info:
            march(KSState(phi), src, model, MarchConfig(z=10))
        assert info.value.step == 0

    def test_stencil_mode_noiseless(self):
        model = roundtrip_model()
        b = build_basis(4, 1)
        phi0 = ground_orbitals(model.T, model.V(0.0), 1)
        psi0 = ManyBodyState(slater_amplitudes(phi0, b))
        z, h = 100, 0.01
        tr = generate_trace(model, b, psi0, uniform_grid(-0.02, 0.01, z + 5), substeps=8)
        res = march(KSState(phi0), StencilSource(tr, h), model,
                    MarchConfig(z=z, L=4.0, source_mode="stencil", stencil_h=h, kernel_tol=None))
        assert res.density_error.max() < 0.01

    def test_stencil_source_holds_on_coarse_trace(self):
        tr = DensityTrace([0.0, 0.1, 0.2, 0.3], np.array([[1.0, 0.0], [0.9, 0.1], [0.7, 0.3], [0.4, 0.6]]), 1)
        src = StencilSource(tr, 0.1)
        assert np.array_equal(src.d2n(3, 0.15), src.d2n(1, 0.1))
        assert np.array_equal(src.density(3, 0.15), tr.values[1])


class TestStepBounds:
    def test_required_steps_example(self):
        assert required_steps(1.0, 2, 0.1, 0.5, 1.0) == 29800
        assert 10 * (math.exp(8) - 1) == pytest.approx(29799.58, abs=0.01)

    def test_required_steps_limits(self):
        assert required_steps(1.0, 2, math.inf, 0.5, 1.0) == 0
        a = required_steps(1.0, 2, 0.1, 0.3, 1.0)
        b = required_steps(1.0, 4, 0.1, 0.3, 1.0)
        assert abs(b - 2 * a) <= 1
        with pytest.raises(BoundOverflow) as info:
            required_steps(1.0, 2, 0.1, 100.0, 1.0)
        assert info.value.log_value > 700

    def test_required_precision_example(self):
        d = required_precision(2, 0.1, 1.0, 0.5, 1.0)
        inv = (math.sqrt(2) * 2 / 0.4) ** 2 * (math.exp(8) - 1) ** 2
        assert d == pytest.approx(1 / inv, rel=1e-12)
        assert d == pytest.approx(2.25e-9, rel=2e-3)

    def test_required_precision_scaling(self):
        base = required_precision(2, 0.1, 1.0, 0.5, 1.0)
        assert required_precision(2, 0.2, 1.0, 0.5, 1.0) == pytest.approx(4 * base, rel=1e-12)
        assert required_precision(4, 0.1, 1.0, 0.5, 1.0) == pytest.approx(base / 4, rel=1e-12)
        assert required_precision(2, 0.1, 0.0, 0.5, 1.0) == math.inf
        with pytest.raises(BoundOverflow):
            required_precision(2, 0.1, 1.0, 100.0, 1.0)
