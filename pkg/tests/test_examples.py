"""Worked examples with values fixed by hand expansion or an independent oracle."""
import numpy as np
import pytest

from distreach import qc
from distreach.model import AgentModel, Box, Mlp, NeighborGraph, validate_scenario
from distreach.reach import box_normals, one_step
from distreach.reformulate import build_lambda, build_omega, evaluate, forward, pre_saturation, reform_scenario
from distreach.scenarios import PlatoonSpec, platoon_ct, platoon_scenario
from distreach.sdp import assemble_facet_sdp, solve_facet
from distreach.sim import CtModel, interval_oracle, zoh_discretize

from conftest import random_scenario

# fine-step RK4 (h = 1e-5) transition of the platoon follower, tau = 0.5, T = 0.1
PLATOON_AD = np.array([
    [1.0, -0.09999999999999393, -0.00468268826949548],
    [0.0, 1.0, 0.09063462346100941],
    [0.0, 0.0, 0.8187307530779899],
])
PLATOON_PRED_COL = np.array([0.09999999999999393, 0.0, 0.0])
PLATOON_BD = np.array([-0.00031731173050453, 0.00936537653899094, 0.18126924692201804])


def test_lambda_matches_loop_construction(rng):
    q, n = 3, 2
    x = rng.standard_normal((1 + q) * n)
    expected = []
    for r in range(q):
        expected.extend(x[:n])
        expected.extend(x[(r + 1) * n:(r + 2) * n])
    assert np.array_equal(build_lambda(q, n) @ x, np.array(expected))


def test_omega_sums_exactly(rng):
    v = rng.standard_normal((4, 3))
    assert np.array_equal(build_omega(4, 3) @ v.ravel(), ((v[0] + v[1]) + v[2]) + v[3])


def test_two_neighbor_merge(rng):
    sc = random_scenario(rng, M=3, topology="all", hidden=(6,))
    ra = reform_scenario(sc)[1]
    for _ in range(100):
        x = rng.standard_normal(6)
        direct = evaluate(sc.nets[(1, 2)], x[[0, 1, 2, 3]]) + evaluate(sc.nets[(1, 3)], x[[0, 1, 4, 5]])
        assert np.all(np.abs(pre_saturation(ra.net, x) - direct) <= 1e-9 * (1 + np.abs(direct)))


def test_clamp_exact(rng):
    sc = random_scenario(rng, M=2, u_limit=0.2)
    net = reform_scenario(sc)[1].net
    X = 3 * rng.standard_normal((1000, 4))
    u = evaluate(net, X)
    clamped = np.minimum(np.maximum(pre_saturation(net, X), net.u_lower), net.u_upper)
    saturated = np.abs(clamped) == 0.2
    assert np.array_equal(u[saturated], clamped[saturated])
    # inside the limits the ReLU pair reproduces p up to rounding of u_upper - (span - (p - u_lower))
    assert np.all(np.abs(u - clamped) <= 4 * np.finfo(float).eps * 0.4)


def test_reformed_step_matches_direct_simulator(rng):
    sc = random_scenario(rng, M=3, topology="all")
    reformed = reform_scenario(sc)
    for _ in range(500):
        x = {j: rng.standard_normal(2) for j in (1, 2, 3)}
        for i, ra in reformed.items():
            a = sc.graph[i]
            u = sum(evaluate(sc.nets[(i, j)], np.concatenate([x[i], x[j]])) for j in a.neighbor_ids)
            u = np.clip(u, a.u_lower, a.u_upper)
            direct = a.A_self @ x[i] + sum(A @ x[j] for j, A in a.A_neighbors) + a.B @ u + a.w(0)
            step = ra.step(np.concatenate([x[j] for j in ra.members]), 0)
            assert np.all(np.abs(step - direct) <= 1e-10)


class TestHandExpansions:
    def test_input_qc_center(self):
        # each coordinate contributes -2 l_j u_j = 2 at the center
        P = qc.build_input_qc(Box([-1.0], [1.0]), [1.0])
        assert qc.quad(P, [0.0, 1.0]) == 2.0
        P = qc.build_input_qc(Box([-1.0, -1.0], [1.0, 1.0]), [1.0, 1.0])
        assert qc.quad(P, [0.0, 0.0, 1.0]) == 4.0

    def test_input_qc_outside(self):
        P = qc.build_input_qc(Box([-1.0], [1.0]), [1.0])
        assert qc.quad(P, [2.0, 1.0]) == -6.0

    def test_relu_complementarity(self):
        Q = qc.build_relu_qc([1.0, 1.0], [0.0, 0.0], [0.0, 0.0], 2)
        assert qc.quad(Q, [1.0, -1.0, 1.0, 0.0, 1.0]) == 0.0

    def test_relu_random_pairs(self, rng):
        for _ in range(1000):
            n = 3
            nu_hat = rng.standard_normal(n)
            Q = qc.build_relu_qc(rng.standard_normal(n), rng.random(n), rng.random(n), n)
            assert qc.quad(Q, np.concatenate([nu_hat, np.maximum(nu_hat, 0.0), [1.0]])) >= -1e-12

    @pytest.mark.parametrize("x,value", [((2.0, 5.0), -2.0), ((4.0, 0.0), 2.0)])
    def test_output_qc(self, x, value):
        S = qc.build_output_qc([1.0, 0.0], 3.0)
        assert qc.quad(S, [*x, 1.0]) == value


class TestLifts:
    @pytest.fixture
    def setup(self, rng):
        sc = random_scenario(rng, M=2, hidden=(5, 4), u_limit=0.4)
        ra = reform_scenario(sc)[1]
        lay = qc.BasisLayout.for_net(ra.net)
        fp = forward(ra.net, rng.standard_normal((50, 4)))
        return ra, lay, fp

    def test_input_lift_is_substitution(self, rng, setup):
        ra, lay, fp = setup
        P = rng.standard_normal((5, 5))
        P = P + P.T
        v = rng.standard_normal((20, lay.dim))
        v[:, -1] = 1.0
        np.testing.assert_allclose(qc.quad(qc.lift_input_qc(P, lay), v),
                                   qc.quad(P, np.hstack([v[:, :4], v[:, -1:]])), rtol=1e-12, atol=1e-12)

    def test_relu_lift_is_substitution(self, rng, setup):
        ra, lay, fp = setup
        n = lay.n_relu
        Q = qc.build_relu_qc(rng.standard_normal(n), rng.random(n), rng.random(n), n)
        v = lay.stack(fp.activations)
        local = np.hstack([np.hstack(fp.preactivations), np.hstack(fp.activations[1:]), np.ones((50, 1))])
        np.testing.assert_allclose(qc.quad(qc.lift_relu_qc(ra.net, Q, lay), v), qc.quad(Q, local), atol=1e-9)
        assert np.all(qc.quad(qc.lift_relu_qc(ra.net, Q, lay), v) >= -1e-9)

    def test_output_lift_touches_only_input_last_and_constant(self, rng, setup):
        ra, lay, _ = setup
        Psi = qc.lift_output_qc(ra, qc.build_output_qc(rng.standard_normal(2), 1.0), np.zeros(2), lay)
        inner = slice(lay.n_in, lay.z_last.start)
        assert np.all(Psi[inner, :] == 0) and np.all(Psi[:, inner] == 0)
        assert np.all(Psi[:lay.one, :lay.one] == 0)


def test_platoon_basis_dimension():
    sc = platoon_scenario(PlatoonSpec(M=1, horizon=1))
    ra = reform_scenario(sc)[1]
    sdp = assemble_facet_sdp(ra, Box.point(np.zeros(6)), np.eye(3)[0], np.zeros(3))
    assert sdp.dim == 39 and sdp.n_lmi == 1


def test_constant_control_matches_interval_hull(rng):
    agents = [
        AgentModel.static(0, [[0.0, 18.0, 0.0]], 1),
        AgentModel(id=1, A_self=PLATOON_AD, A_neighbors=((0, np.outer(PLATOON_PRED_COL, [0, 1, 0])),),
                   B=PLATOON_BD[:, None], u_lower=[-5.0], u_upper=[5.0], w_seq=(np.zeros(3),)),
    ]
    const = Mlp(((np.zeros((4, 6)), np.zeros(4)), (np.zeros((4, 4)), np.zeros(4)), (np.zeros((1, 4)), np.array([1.3]))))
    sc = validate_scenario(NeighborGraph(agents), {(1, 0): const},
                           {1: Box([-0.1, 19.95, -0.01], [0.1, 20.05, 0.01])})
    reformed = reform_scenario(sc)
    nxt, _ = one_step(sc, reformed, dict(sc.init), 0)
    in_box = sc.init[1].product(Box.point([0.0, 18.0, 0.0]))
    hull = interval_oracle(reformed[1], in_box, np.zeros(3))
    np.testing.assert_allclose(nxt[1].lower, hull.lower, atol=1e-4)
    np.testing.assert_allclose(nxt[1].upper, hull.upper, atol=1e-4)


def test_facets_dominate_sampled_successors(rng):
    sc = random_scenario(rng, M=1, static_leader=True)
    ra = reform_scenario(sc)[1]
    box = sc.init[1].product(sc.box_at(0, 0))
    X = box.lower + (box.upper - box.lower) * rng.random((10 ** 5, box.dim))
    Y = ra.step(X, 0)
    for H in box_normals(2):
        rep = solve_facet(assemble_facet_sdp(ra, box, H, ra.w(0)))
        assert rep.h_value >= (Y @ H).max()


class TestZohValues:
    def test_scalar(self):
        d = zoh_discretize(CtModel([[-1.0]], (), [[1.0]], 1.0))
        assert abs(d.A_self[0, 0] - 0.36787944117144233) <= 1e-12
        assert abs(d.B[0, 0] - 0.6321205588285577) <= 1e-12

    def test_platoon(self):
        d = zoh_discretize(platoon_ct(0.5, 0.1, 0))
        np.testing.assert_allclose(d.A_self, PLATOON_AD, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(d.A_neighbors[0][1][:, 1], PLATOON_PRED_COL, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(d.B[:, 0], PLATOON_BD, rtol=1e-8, atol=1e-12)
