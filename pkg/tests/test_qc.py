import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distreach import qc
from distreach.errors import DimensionMismatch, NegativeGamma, NegativeMultiplier
from distreach.model import Box
from distreach.reformulate import forward, reform_scenario

from conftest import random_scenario


def sample_box(rng, box, n):
    return box.lower + (box.upper - box.lower) * rng.random((n, box.dim))


@pytest.fixture
def agent(rng):
    sc = random_scenario(rng, M=3, n_x=2, n_u=2, hidden=(5, 3), topology="all", u_limit=0.5)
    ra = reform_scenario(sc)[1]
    box = Box(-np.ones(ra.net.input_dim), 2 * np.ones(ra.net.input_dim))
    return ra, box, qc.BasisLayout.for_net(ra.net)


class TestLayout:
    def test_widths_and_segments(self, agent):
        ra, _, lay = agent
        # two neighbors: merged hidden layers are twice as wide
        assert lay.widths == (6, 10, 6, 2, 2, 1)
        assert lay.dim == 27 and lay.n_relu == 20 and lay.one == 26
        assert lay.relu == slice(6, 26)
        assert lay.z_last == slice(24, 26)

    def test_stack_checks_width(self, agent):
        ra, _, lay = agent
        with pytest.raises(DimensionMismatch):
            lay.stack([np.zeros(3)])


class TestInputQc:
    def test_nonnegative_inside(self, rng, agent):
        ra, box, lay = agent
        gamma = rng.random(box.dim)
        P = qc.build_input_qc(box, gamma)
        v = np.hstack([sample_box(rng, box, 500), np.ones((500, 1))])
        assert np.all(qc.quad(P, v) >= -1e-9)

    def test_negative_outside(self):
        box = Box([0.0], [1.0])
        P = qc.build_input_qc(box, [1.0])
        assert qc.quad(P, [2.0, 1.0]) < 0

    def test_rejects_negative_gamma(self, agent):
        _, box, _ = agent
        with pytest.raises(NegativeGamma):
            qc.build_input_qc(box, -np.ones(box.dim))


class TestReluQc:
    @given(st.integers(0, 10_000))
    def test_nonnegative_on_true_activations(self, seed):
        rng = np.random.default_rng(seed)
        sc = random_scenario(rng, M=2, n_u=1, hidden=(4,), u_limit=0.3)
        net = reform_scenario(sc)[1].net
        lay = qc.BasisLayout.for_net(net)
        n = lay.n_relu
        Q = qc.build_relu_qc(rng.standard_normal(n), rng.random(n), rng.random(n), n)
        fp = forward(net, 2 * rng.standard_normal((20, net.input_dim)))
        v = lay.stack(fp.activations)
        assert np.all(qc.quad(qc.lift_relu_qc(net, Q, lay), v) >= -1e-9)

    def test_preactivation_rows_reproduce_forward(self, rng, agent):
        ra, box, lay = agent
        fp = forward(ra.net, sample_box(rng, box, 30))
        v = lay.stack(fp.activations)
        pre = qc.preactivation_rows(ra.net, lay)
        np.testing.assert_allclose(v @ pre.T, np.hstack(fp.preactivations), atol=1e-12)

    def test_shape_checks(self):
        with pytest.raises(DimensionMismatch):
            qc.build_relu_qc(np.zeros(2), np.zeros(3), np.zeros(3), 3)
        with pytest.raises(NegativeMultiplier):
            qc.build_relu_qc(np.zeros(3), -np.ones(3), np.zeros(3), 3)


class TestOutputQc:
    @given(st.integers(0, 10_000), st.floats(-10, 10))
    def test_factor_two_identity(self, seed, h):
        rng = np.random.default_rng(seed)
        H = rng.standard_normal(3)
        x = rng.standard_normal(3)
        S = qc.build_output_qc(H, h)
        v = np.append(x, 1.0)
        assert abs(qc.quad(S, v) - 2 * (H @ x - h)) <= 1e-9 * (1 + abs(h) + np.abs(x).sum())

    def test_lifted_equals_next_state(self, rng, agent):
        ra, box, lay = agent
        w = rng.standard_normal(ra.n_out)
        H = rng.standard_normal(ra.n_out)
        S = qc.build_output_qc(H, 0.7)
        X = sample_box(rng, box, 40)
        fp = forward(ra.net, X)
        v = lay.stack(fp.activations)
        x_next = X @ ra.A_tilde.T + fp.output @ ra.B.T + w
        np.testing.assert_allclose(qc.quad(qc.lift_output_qc(ra, S, w, lay), v), 2 * (x_next @ H - 0.7), atol=1e-9)

    def test_basis_matrix_shapes(self, agent):
        ra, _, lay = agent
        assert qc.input_basis_matrix(lay).shape == (lay.n_in + 1, lay.dim)
        assert qc.relu_basis_matrix(ra.net, lay).shape == (2 * lay.n_relu + 1, lay.dim)
        assert qc.output_basis_matrix(ra, np.zeros(ra.n_out), lay).shape == (ra.n_out + 1, lay.dim)
        with pytest.raises(DimensionMismatch):
            qc.output_basis_matrix(ra, np.zeros(ra.n_out + 1), lay)
