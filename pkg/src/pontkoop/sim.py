"""ODE integration, steady-state Riccati oracle, closed-loop rollouts and costs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import OcpModel, PontryaginField, hamiltonian, lam_vars, u_vars, x_vars
from .poly import PolyBundle

log = logging.getLogger(__name__)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class BlowUpError(ArithmeticError):
    """State norm exceeded the guard; `trajectory` holds everything up to the escape."""

    def __init__(self, msg: str, trajectory: "Trajectory"):
        super().__init__(msg)
        self.trajectory = trajectory
        self.t_escape = float(trajectory.times[-1])


class NotStabilizableError(ArithmeticError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)
    status: str = "ok"
    message: str = ""

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path, header_comment: str = "", names: Sequence[str] | None = None) -> None:
        names = list(names) if names else [f"y{i + 1}" for i in range(self.states.shape[1])]
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(",".join(["t"] + names) + "\n")
            for t, y in zip(self.times, self.states):
                fh.write(",".join(repr(float(v)) for v in (t, *y)) + "\n")


def integrate(rhs: Callable, y0, t_end: float, *, method: str = "RK45", tol: float = 1e-10,
              step: float | None = None, t_eval: Sequence[float] | None = None, bound: float = 1e8,
              stop: Callable | None = None, catch: tuple = (), max_steps: int = 10_000_000) -> Trajectory:
    """Integrate ``y' = rhs(t, y)`` from 0 to `t_end`.

    ``method="RK45"`` is adaptive Dormand-Prince with per-step error
    ``<= tol`` (mixed absolute/relative); ``method="RK4"`` is classical RK4
    with fixed `step`.  When `t_eval` is given, steps are clipped to land on
    those times exactly and only they are recorded.  `stop(t, y)` ends the run
    early; exceptions listed in `catch` raised by `rhs` truncate the
    trajectory instead of propagating.
    """
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("y0 must be finite")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    outs = np.array(sorted(t_eval), float) if t_eval is not None else None
    if outs is not None and (outs.min() < 0 or outs.max() > t_end + 1e-15):
        raise ValueError("t_eval must lie in [0, t_end]")
    meta = {"integrator": "adaptive-RK45" if method == "RK45" else "fixed-RK4", "tol": tol}
    if method == "RK4":
        if step is None or step <= 0:
            raise ValueError("RK4 needs a positive step")
        meta["step"] = step

    ts, ys = [], []
    t = 0.0
    k_out = 0
    if outs is None or (len(outs) and outs[0] == 0.0):
        ts.append(0.0)
        ys.append(y.copy())
        k_out = 1 if outs is not None else 0

    def record(t, y):
        nonlocal k_out
        if outs is None:
            ts.append(t)
            ys.append(y.copy())
        elif k_out < len(outs) and abs(t - outs[k_out]) <= 1e-14 * max(1.0, t_end):
            ts.append(float(outs[k_out]))
            ys.append(y.copy())
            k_out += 1

    def traj(status="ok", message=""):
        return Trajectory(np.array(ts), np.array(ys).reshape(len(ys), y.size), meta, status, message)

    def next_target():
        if outs is not None and k_out < len(outs):
            return min(outs[k_out], t_end)
        return t_end

    try:
        f0 = np.asarray(rhs(t, y), float)
    except catch as exc:
        return traj("truncated", f"rhs failed at t=0: {exc}")

    if method == "RK4":
        h_nom = step
    else:
        scale = tol + tol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((f0 / scale) ** 2))
        h_nom = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h_nom = min(h_nom, t_end)

    n_steps = 0
    while t < t_end * (1 - 1e-15) and t_end - t > 1e-14:
        if n_steps >= max_steps:
            return traj("truncated", "max_steps reached")
        target = next_target()
        h = min(h_nom, target - t)
        if h <= 0:
            record(t, y)
            continue
        try:
            if method == "RK4":
                k1 = f0
                k2 = np.asarray(rhs(t + h / 2, y + h / 2 * k1), float)
                k3 = np.asarray(rhs(t + h / 2, y + h / 2 * k2), float)
                k4 = np.asarray(rhs(t + h, y + h * k3), float)
                y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                f_new = np.asarray(rhs(t + h, y_new), float)
                accept = True
            else:
                K = [f0]
                for s in range(1, 7):
                    ys_ = y + h * sum(a * k for a, k in zip(_A[s], K))
                    K.append(np.asarray(rhs(t + _C[s] * h, ys_), float))
                y_new = y + h * sum(b * k for b, k in zip(_B5, K) if b)
                f_new = K[6]
                err_vec = h * sum(e * k for e, k in zip(_E, K))
                sc = tol + tol * np.maximum(np.abs(y), np.abs(y_new))
                err = np.sqrt(np.mean((err_vec / sc) ** 2))
                accept = err <= 1.0 and np.all(np.isfinite(y_new))
                if not np.isfinite(err):
                    fac = 0.1
                else:
                    fac = 0.9 * (max(err, 1e-10)) ** (-0.2)
                    fac = min(5.0, max(0.2, fac))
        except catch as exc:
            return traj("truncated", f"rhs failed near t={t:.6g}: {exc}")
        n_steps += 1
        if not accept:
            h_nom = h * min(fac, 0.9)
            if h_nom < 1e-14 * max(1.0, t_end):
                return traj("truncated", f"step size underflow at t={t:.6g}")
            continue
        clipped = h < h_nom
        t = target if h == target - t else t + h
        y = y_new
        f0 = f_new
        if method == "RK45":
            h_grow = h * fac
            h_nom = max(h_nom, h_grow) if clipped else h_grow
        record(t, y)
        if np.max(np.abs(y)) > bound:
            if outs is not None:
                ts.append(t)
                ys.append(y.copy())
            raise BlowUpError(f"|y| exceeded {bound:g} at t={t:.6g}", traj("blowup"))
        if stop is not None and stop(t, y):
            if outs is not None:
                ts.append(t)
                ys.append(y.copy())
            return traj("stopped")
    return traj()


# flow sensitivities ------------------------------------------------------------


def flow_with_sensitivity(field: PontryaginField, z0, t: float, tol: float = 1e-10,
                          bound: float = 1e8) -> tuple:
    """``(Gamma_t(z0), dGamma_t/dz(z0))`` via the first-order variational equation."""
    n = field.dim
    z0 = np.asarray(z0, float)
    if t == 0:
        return z0.copy(), np.eye(n)

    def rhs(_, w):
        z = w[:n]
        G = w[n:].reshape(n, n)
        return np.concatenate([field.rhs(z), (field.jacobian(z) @ G).ravel()])

    tr = integrate(rhs, np.concatenate([z0, np.eye(n).ravel()]), t, tol=tol, bound=bound)
    return tr.final[:n], tr.final[n:].reshape(n, n)


# steady state and Riccati ----------------------------------------------------------


@dataclass(frozen=True)
class SteadyState:
    x_p: np.ndarray
    u_p: np.ndarray
    lambda_p: np.ndarray
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class AreSolution:
    P: np.ndarray
    residual: float
    horizon: float


def find_steady_state(model: OcpModel, field: PontryaginField, ustar, y_guess=None,
                      tol: float = 1e-12, max_iter: int = 50) -> SteadyState:
    """Zero of the Pontryagin field (Newton from `y_guess`, default the origin) plus its linearization."""
    n = model.n_x
    y = np.zeros(2 * n) if y_guess is None else np.array(y_guess, float)
    for _ in range(max_iter):
        r = field.rhs(y)
        if np.max(np.abs(r)) <= tol:
            break
        y = y - np.linalg.lstsq(field.jacobian(y), r, rcond=None)[0]
    else:
        raise ArithmeticError("steady-state Newton did not converge")
    x_p, lam_p = y[:n], y[n:]
    u_p = np.atleast_1d(ustar(x_p, lam_p))
    H = hamiltonian(model)
    av = model.all_vars
    xs, us = x_vars(n), u_vars(model.n_u)
    pt = np.concatenate([x_p, u_p, lam_p])

    def mat(rows, cols, poly_of):
        polys = [poly_of(a, b) for a in rows for b in cols]
        if not polys:
            return np.zeros((len(rows), len(cols)))
        return PolyBundle(polys, av)(pt).reshape(len(rows), len(cols))

    fv = [fi.embed(av) for fi in model.f]
    A = mat(range(n), xs, lambda i, b: fv[i].diff(b))
    B = mat(range(n), us, lambda i, b: fv[i].diff(b))
    Q = mat(xs, xs, lambda a, b: H.diff(a).diff(b))
    R = mat(us, us, lambda a, b: H.diff(a).diff(b))
    S = mat(xs, us, lambda a, b: H.diff(a).diff(b))
    f_val = model.dynamics()(np.concatenate([x_p, u_p]))
    h_u = PolyBundle([H.diff(u) for u in us], av)(pt) if us else np.zeros(0)
    if np.max(np.abs(f_val), initial=0) > 1e-10 or np.max(np.abs(h_u), initial=0) > 1e-10:
        raise ArithmeticError("steady state does not satisfy f = 0 and H_u = 0")
    return SteadyState(x_p, u_p, lam_p, A, B, Q, R, S)


def riccati_residual(P, A, B, Q, R, S=None) -> np.ndarray:
    S = np.zeros_like(B) if S is None else S
    K = P @ B + S
    return P @ A + A.T @ P + Q - K @ np.linalg.solve(R, K.T)


def solve_are(A, B, Q, R, S=None, eps: float = 1e-6, tol: float = 1e-11,
              max_horizon: float = 1e4, bound: float = 1e10) -> AreSolution:
    """Stabilizing ARE solution by backward sweep of the Riccati ODE from ``P(T) = eps I``.

    The horizon is doubled until ``||Pdot|| <= tol``.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, float)) for M in (A, B, Q, R))
    S = np.zeros_like(B) if S is None else np.atleast_2d(np.asarray(S, float))
    n = A.shape[0]
    if np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0):
        raise ValueError("R must be positive definite")

    def rhs(_, p):
        P = p.reshape(n, n)
        D = riccati_residual(P, A, B, Q, R, S)
        return (0.5 * (D + D.T)).ravel()

    P = eps * np.eye(n)
    done, chunk = 0.0, 10.0
    while True:
        try:
            tr = integrate(rhs, P.ravel(), chunk, tol=1e-12, bound=bound)
        except BlowUpError:
            raise NotStabilizableError("backward Riccati sweep diverged (pair not stabilizable?)") from None
        P = tr.final.reshape(n, n)
        P = 0.5 * (P + P.T)
        done += chunk
        res = float(np.max(np.abs(riccati_residual(P, A, B, Q, R, S))))
        if res <= tol:
            break
        if done >= max_horizon:
            raise NotStabilizableError(f"no convergence within horizon {done:g} (residual {res:.2e})")
        chunk = done
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise NotStabilizableError("Riccati limit is not positive definite")
    return AreSolution(P, res, done)


# closed loop -----------------------------------------------------------------------


def _feedback_callable(law) -> Callable:
    if hasattr(law, "as_feedback"):
        return law.as_feedback()
    return law


def closed_loop_rollout(model: OcpModel, law, x0, t_end: float | None = None, *, tol: float = 1e-10,
                        t_eval=None, decay: float = 1e-8, cap: float = 200.0, bound: float = 1e6) -> Trajectory:
    """Integrate ``xdot = f(x, mu(x))`` together with the running cost ``l - l_star``.

    With ``t_end=None`` the rollout runs until the cost integrand drops below
    `decay` (or to `cap`).  The last state column is the accumulated cost.
    Costate solver failures truncate the trajectory and flag it.
    """
    mu = _feedback_callable(law)
    fb = model.dynamics()
    lb = model.running_cost()
    n = model.n_x
    last = {"integrand": np.inf}

    def rhs(_, w):
        x = w[:n]
        u = np.atleast_1d(mu(x))
        xu = np.concatenate([x, u])
        integrand = lb(xu)[0] - model.l_star
        last["integrand"] = integrand
        return np.concatenate([fb(xu), [integrand]])

    stop = None
    horizon = t_end
    if t_end is None:
        horizon = cap
        stop = lambda t, w: abs(last["integrand"]) < decay  # noqa: E731
    tr = integrate(rhs, np.concatenate([np.asarray(x0, float), [0.0]]), horizon, tol=tol,
                   t_eval=t_eval, stop=stop, bound=bound, catch=(ArithmeticError, np.linalg.LinAlgError))
    tr.meta["has_cost"] = True
    return tr


@dataclass(frozen=True)
class CostEstimate:
    value: float
    tail_integrand: float
    t_end: float
    confident: bool

    def __float__(self):
        return self.value


def evaluate_cost(traj: Trajectory, model: OcpModel, law, decay: float = 1e-8) -> CostEstimate:
    """Accumulated ``int (l - l_star) dt`` with a tail-truncation diagnostic."""
    n = model.n_x
    if traj.meta.get("has_cost"):
        value = float(traj.states[-1, n])
    else:
        mu = _feedback_callable(law)
        vals = [model.running_cost()(np.concatenate([x[:n], np.atleast_1d(mu(x[:n]))]))[0] - model.l_star
                for x in traj.states]
        value = float(_trapezoid(vals, traj.times))
    x_end = traj.states[-1, :n]
    u_end = np.atleast_1d(_feedback_callable(law)(x_end))
    tail = abs(float(model.running_cost()(np.concatenate([x_end, u_end]))[0] - model.l_star))
    confident = tail < decay and traj.status in ("ok", "stopped")
    if not confident:
        log.warning("cost tail not decayed (integrand %.2e at t=%.3g, status %s)", tail, traj.times[-1], traj.status)
    return CostEstimate(value, tail, float(traj.times[-1]), confident)


def costate_limit_check(field: PontryaginField, law, x0, t_end: float, lambda_p=None,
                        tol: float = 1e-10, bound: float = 1e3) -> float:
    """``||lam(t_end) - lam_p||`` along the Pontryagin flow from ``(x0, Lambda(x0))``.

    Raises :class:`BlowUpError` (with ``t_escape``) when the trajectory leaves
    the bound, which happens when ``Lambda(x0)`` is off the stable manifold.
    """
    n = field.n_x
    x0 = np.asarray(x0, float)
    lam0 = law.costate(x0).lam
    lam_p = np.zeros(n) if lambda_p is None else np.asarray(lambda_p, float)
    tr = integrate(lambda _, y: field.rhs(y), np.concatenate([x0, lam0]), t_end, tol=tol, bound=bound)
    return float(np.linalg.norm(tr.final[n:] - lam_p))


def state_names(model: OcpModel) -> list:
    return list(x_vars(model.n_x)) + ["cost"]


def costate_names(n_x: int) -> list:
    return list(lam_vars(n_x))
