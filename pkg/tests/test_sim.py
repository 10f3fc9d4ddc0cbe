import numpy as np
import pytest

from conftest import SQRT3
from pontkoop.sim import (BlowUpError, NotStabilizableError, closed_loop_rollout, costate_limit_check,
                          evaluate_cost, find_steady_state, flow_with_sensitivity, integrate, riccati_residual,
                          solve_are)
from pontkoop.structure import monodromy


def test_constant_field():
    tr = integrate(lambda t, y: np.zeros(2), [1.0, 2.0], 3.0)
    assert np.allclose(tr.states, [1.0, 2.0])


def test_exponential():
    tr = integrate(lambda t, y: y, [1.0], 1.0)
    assert abs(tr.final[0] - np.e) <= 1e-9


def test_oscillator_period():
    tr = integrate(lambda t, y: np.array([y[1], -y[0]]), [1.0, 0.0], 2 * np.pi)
    assert np.max(np.abs(tr.final - [1.0, 0.0])) <= 1e-8


def test_rk4_order():
    errs = [abs(integrate(lambda t, y: y, [1.0], 1.0, method="RK4", step=h).final[0] - np.e) for h in (0.1, 0.05)]
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.2)


def test_t_eval_exact_times():
    tr = integrate(lambda t, y: -y, [1.0], 2.0, t_eval=[0.0, 0.5, 2.0])
    assert np.array_equal(tr.times, [0.0, 0.5, 2.0])
    assert tr.states[1, 0] == pytest.approx(np.exp(-0.5), abs=1e-9)


def test_times_strictly_increasing():
    tr = integrate(lambda t, y: np.array([y[1], -y[0]]), [1.0, 0.0], 5.0)
    assert np.all(np.diff(tr.times) > 0)


def test_blow_up_guard():
    with pytest.raises(BlowUpError) as info:
        integrate(lambda t, y: y ** 2, [1.0], 2.0, bound=1e3)
    assert 0.9 < info.value.t_escape < 1.0
    assert len(info.value.trajectory.times) > 1


def test_bad_inputs():
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, [np.nan], 1.0)
    with pytest.raises(ValueError):
        integrate(lambda t, y: y, [1.0], -1.0)


def test_monodromy_shared_integrator(vdp_field):
    z0 = [0.2, -0.1, 0.3, 0.05]
    assert np.array_equal(monodromy(vdp_field, z0, 0.7), flow_with_sensitivity(vdp_field, z0, 0.7)[1])


def test_are_double_integrator():
    sol = solve_are([[0, 1], [0, 0]], [[0], [1]], np.eye(2), [[1]])
    assert np.allclose(sol.P, [[SQRT3, 1], [1, SQRT3]], atol=1e-9)
    assert sol.residual <= 1e-9
    assert np.max(np.abs(sol.P - sol.P.T)) <= 1e-12


def test_are_lyapunov_case():
    sol = solve_are(-np.eye(2), np.zeros((2, 1)), np.eye(2), [[1]])
    assert np.allclose(sol.P, 0.5 * np.eye(2), atol=1e-9)


def test_are_not_stabilizable():
    with pytest.raises(NotStabilizableError):
        solve_are(np.eye(1), np.zeros((1, 1)), np.eye(1), [[1]])


def test_are_rejects_indefinite_r():
    with pytest.raises(ValueError):
        solve_are(-np.eye(1), np.eye(1), np.eye(1), [[-1]])


def test_vanderpol_steady_state_and_are(vdp, vdp_n15):
    st = vdp_n15.steady
    assert np.allclose(st.x_p, 0) and np.allclose(st.lambda_p, 0)
    assert np.allclose(st.A, [[0, 1], [-1, -0.5]])
    assert np.allclose(st.B, 0)
    P = vdp_n15.are.P
    assert np.min(np.linalg.eigvalsh(P)) > 0
    assert np.max(np.abs(riccati_residual(P, st.A, st.B, st.Q, st.R, st.S))) <= 1e-9


def test_rollout_from_origin_stays(vdp, vdp_n4):
    tr = closed_loop_rollout(vdp, vdp_n4.law, [0.0, 0.0], 5.0)
    assert np.allclose(tr.states[:, :2], 0.0, atol=1e-12)
    assert evaluate_cost(tr, vdp, vdp_n4.law).value == pytest.approx(0.0, abs=1e-14)


def test_lqr_rollout_matches_matrix_exponential(lqr, lqr_syn):
    def expm(M):
        w, V = np.linalg.eig(M)
        return (V @ np.diag(np.exp(w)) @ np.linalg.inv(V)).real

    A = np.array([[0, 1], [0, 0]])
    K = np.array([[1.0, SQRT3]])
    x0 = np.array([1.0, -0.5])
    tr = closed_loop_rollout(lqr, lqr_syn.law, x0, 3.0, t_eval=[0.0, 1.0, 3.0])
    for t, y in zip(tr.times, tr.states):
        assert np.allclose(y[:2], expm((A - np.array([[0], [1]]) @ K) * t) @ x0, atol=1e-7)


def test_lqr_cost(lqr, lqr_syn):
    P = np.array([[SQRT3, 1], [1, SQRT3]])
    x0 = np.array([0.4, -0.8])
    c = evaluate_cost(closed_loop_rollout(lqr, lqr_syn.law, x0), lqr, lqr_syn.law)
    assert c.confident
    assert c.value == pytest.approx(0.5 * x0 @ P @ x0, abs=1e-6)


def test_vanderpol_cost_near_value_function(vdp, vdp_n4):
    x0 = np.array([0.4, 0.3])
    c = evaluate_cost(closed_loop_rollout(vdp, vdp_n4.law, x0), vdp, vdp_n4.law)
    V = 0.5 * x0 @ x0
    assert abs(c.value - V) <= 0.02 * V
    assert c.value >= V - 1e-4


def test_vanderpol_corner_rollout(vdp, vdp_n4):
    tr = closed_loop_rollout(vdp, vdp_n4.law, [1.0, 1.0], 20.0)
    assert np.linalg.norm(tr.final[:2]) <= 1e-2


def test_costate_limit_origin(vdp_field, vdp_n15):
    assert costate_limit_check(vdp_field, vdp_n15.law, [0.0, 0.0], 5.0) == pytest.approx(0.0, abs=1e-10)


def test_costate_limit_lqr(lqr_field, lqr_syn):
    # on the stable manifold lam(t) = P x(t) with x(t) = expm((A - BK) t) x0
    Acl = np.array([[0.0, 1.0], [-1.0, -SQRT3]])
    w, V = np.linalg.eig(Acl * 10.0)
    x10 = (V @ np.diag(np.exp(w)) @ np.linalg.inv(V)).real @ [0.5, -0.3]
    exact = np.linalg.norm(np.array([[SQRT3, 1], [1, SQRT3]]) @ x10)
    assert costate_limit_check(lqr_field, lqr_syn.law, [0.5, -0.3], 10.0) == pytest.approx(exact, rel=1e-4)


def test_costate_limit_vanderpol(vdp_field, vdp_n15):
    assert costate_limit_check(vdp_field, vdp_n15.law, [0.3, 0.2], 8.0) <= 0.05


def test_steady_state_newton_from_guess(vdp, vdp_field, vdp_n15):
    st = find_steady_state(vdp, vdp_field, vdp_n15.ustar, [0.01, -0.01, 0.02, 0.0])
    assert np.allclose(st.x_p, 0, atol=1e-10)
