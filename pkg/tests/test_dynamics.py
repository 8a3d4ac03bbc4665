import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oehnn.dynamics import (
    SystemSpec,
    canonical_field,
    coupled_field,
    coupled_hamiltonian,
    coupled_system,
    duffing_field,
    duffing_hamiltonian,
    duffing_system,
    field_fn,
    grad_hamiltonian,
    hamiltonian_fn,
    structure_matrices,
)


def small_states(dim):
    return arrays(np.float64, (dim,), elements=st.floats(-0.5, 0.5))


class TestSystemSpec:
    def test_valid(self):
        spec = duffing_system()
        assert spec.n_states == 2
        assert spec.n_inputs == 1

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(n_masses=0, masses=(), stiffnesses=(), input_map=(0,)),
            dict(n_masses=1, masses=(-1.0,), stiffnesses=(1.0,), input_map=(0,)),
            dict(n_masses=1, masses=(1.0,), stiffnesses=(0.0,), input_map=(0,)),
            dict(n_masses=1, masses=(1.0,), stiffnesses=(1.0,), input_map=(1,)),
            dict(n_masses=2, masses=(1.0,), stiffnesses=(1.0, 1.0), input_map=(0,)),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SystemSpec(**kwargs)


class TestStructureMatrices:
    def test_blocks(self):
        S = structure_matrices(coupled_system())
        n = 2
        assert np.array_equal(S.J[:n, n:], np.eye(n))
        assert np.array_equal(S.J[n:, :n], -np.eye(n))
        assert np.array_equal(S.C, np.eye(4))
        # input enters the second momentum only
        assert np.array_equal(S.G[:, 0], [0, 0, 0, 1])

    def test_skew_and_square(self):
        for spec in (duffing_system(), coupled_system()):
            J = structure_matrices(spec).J
            assert np.array_equal(J.T, -J)
            assert np.array_equal(J @ J, -np.eye(spec.n_states))

    @given(g=arrays(np.float64, (4,), elements=st.floats(-100, 100)))
    def test_quadratic_form_vanishes(self, g):
        J = structure_matrices(coupled_system()).J
        assert abs(g @ (J @ g)) <= 1e-12 * max(1.0, g @ g)


class TestCanonicalField:
    def test_block_structure(self):
        S = structure_matrices(duffing_system())
        assert np.allclose(canonical_field([2.0, 3.0], [0.0], S), [3.0, -2.0])

    def test_pure_input_channel(self):
        S = structure_matrices(duffing_system())
        assert np.allclose(canonical_field([0.0, 0.0], [1.0], S), [0.0, 1.0])

    def test_two_mass_blocks(self):
        S = structure_matrices(coupled_system())
        out = canonical_field([1.0, 2.0, 3.0, 4.0], [0.0], S)
        assert np.allclose(out, [3.0, 4.0, -1.0, -2.0])

    def test_dimension_mismatch(self):
        S = structure_matrices(duffing_system())
        with pytest.raises(ValueError):
            canonical_field([1.0, 2.0, 3.0], [0.0], S)
        with pytest.raises(ValueError):
            canonical_field([1.0, 2.0], [0.0, 0.0], S)


class TestDuffing:
    spec = duffing_system()

    def test_equilibrium(self):
        assert np.allclose(duffing_field([0.0, 0.0], 0.0, self.spec), [0.0, 0.0])

    def test_force_enters_momentum(self):
        assert np.allclose(duffing_field([0.0, 0.0], 1.0, self.spec), [0.0, 1.0])

    def test_hand_evaluated_point(self):
        # spring force at q=0.5: 0.5 - 0.125 = 0.375
        assert np.allclose(duffing_field([0.5, 1.0], 0.0, self.spec), [1.0, -0.375])

    def test_hamiltonian_values(self):
        assert duffing_hamiltonian([0.0, 0.0], self.spec) == 0.0
        # potential at q=1 equals the integral of the spring force from 0 to 1
        q = np.linspace(0.0, 1.0, 100001)
        integral = np.trapezoid(q - q**3, q)
        assert integral == pytest.approx(0.25, abs=1e-8)
        assert duffing_hamiltonian([1.0, 0.0], self.spec) == pytest.approx(integral, abs=1e-8)
        assert duffing_hamiltonian([0.0, 1.0], self.spec) == pytest.approx(0.5)

    def test_linear_spring_variant(self):
        spec = duffing_system(cubic=False)
        assert np.allclose(duffing_field([0.5, 0.0], 0.0, spec), [0.0, -0.5])
        assert duffing_hamiltonian([1.0, 0.0], spec) == pytest.approx(0.5)


class TestCoupled:
    spec = coupled_system()

    def test_equilibrium(self):
        assert np.allclose(coupled_field([0, 0, 0, 0], 0.0, self.spec), np.zeros(4))

    def test_input_on_second_momentum(self):
        assert np.allclose(coupled_field([0, 0, 0, 0], 1.0, self.spec), [0, 0, 0, 1])

    def test_symmetric_displacement(self):
        # both masses at 0.2: coupling spring unstretched, only the ground
        # spring pulls on mass 1 with 0.2 - 0.2**3 = 0.192
        out = coupled_field([0.2, 0.2, 0.0, 0.0], 0.0, self.spec)
        assert np.allclose(out, [0.0, 0.0, -0.192, 0.0])

    def test_momentum_scaling(self):
        out = coupled_field([0, 0, 0.5, -0.25], 0.0, self.spec)
        assert np.allclose(out[:2], [1.0, -0.5])


class TestConsistency:
    @pytest.mark.parametrize("spec", [duffing_system(), coupled_system()])
    def test_canonical_assembly_matches_direct_field(self, spec):
        rng = np.random.default_rng(0)
        S = structure_matrices(spec)
        direct = field_fn(spec)
        for _ in range(50):
            x = rng.uniform(-0.5, 0.5, spec.n_states)
            via_gradient = canonical_field(grad_hamiltonian(x, spec), [0.0], S)
            assert np.allclose(via_gradient, direct(x, 0.0), atol=1e-12, rtol=0)

    @pytest.mark.parametrize("spec", [duffing_system(), coupled_system()])
    def test_gradient_matches_finite_differences(self, spec):
        rng = np.random.default_rng(1)
        ham = hamiltonian_fn(spec)
        eps = 1e-6
        for _ in range(20):
            x = rng.uniform(-0.5, 0.5, spec.n_states)
            grad = grad_hamiltonian(x, spec)
            for i in range(spec.n_states):
                e = np.zeros(spec.n_states)
                e[i] = eps
                fd = (ham(x + e) - ham(x - e)) / (2 * eps)
                assert grad[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)

    @settings(max_examples=30)
    @given(x=small_states(2), p=st.floats(-0.5, 0.5))
    def test_energy_rate_vanishes_unforced(self, x, p):
        # (dH/dx) . xdot == 0 along the unforced flow
        spec = duffing_system()
        grad = grad_hamiltonian(x, spec)
        xdot = duffing_field(x, 0.0, spec)
        assert abs(grad @ xdot) <= 1e-12
        del p

    def test_batched_evaluation(self):
        spec = coupled_system()
        rng = np.random.default_rng(2)
        xs = rng.uniform(-0.5, 0.5, (7, 4))
        us = rng.normal(size=(7, 1))
        batched = coupled_field(xs, us, spec)
        rows = np.stack([coupled_field(xs[i], us[i, 0], spec) for i in range(7)])
        assert np.allclose(batched, rows, atol=1e-15)
        assert np.allclose(
            coupled_hamiltonian(xs, spec),
            [coupled_hamiltonian(x, spec) for x in xs],
        )
