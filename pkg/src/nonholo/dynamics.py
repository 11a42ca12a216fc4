"""Time integration, conserved-quantity monitoring and the full constrained oracle.

States are flat vectors.  For the compressed system on TQ̄ the vector is
(r, ṙ); for T*Q̄ it is (r, p); for the full system on Q it is (q, q̇) in
coordinate velocities.  The DAE oracle integrates the Lagrange-d'Alembert
equations on Q with multipliers, independently of the reduction code.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import RK45

from . import autodiff as ad
from .compression import CompressedSystem, geometry
from .system import MechanicalSystem, PhaseState

RK45_TOL = 1e-9


class IntegrationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    names: tuple = ()
    kind: str = "tangent"
    space: str = "Qbar"
    observables: dict = field(default_factory=dict)
    exit_flag: Optional[str] = None
    steps: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def completed(self) -> bool:
        return self.exit_flag is None

    def phase_states(self):
        half = self.states.shape[1] // 2
        return [PhaseState(s[:half], s[half:], self.kind, self.space) for s in self.states]

    def column_names(self) -> list:
        half = self.states.shape[1] // 2
        names = list(self.names) if len(self.names) == half else [f"q{i}" for i in range(half)]
        prefix = "d" if self.kind == "tangent" else "p_"
        return ["t"] + names + [prefix + n for n in names] + list(self.observables)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.column_names())
            obs = [np.asarray(v) for v in self.observables.values()]
            for i, (t, s) in enumerate(zip(self.times, self.states)):
                row = [t, *s, *(o[i] for o in obs)]
                w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# integrators


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(field_fn: Callable, initial, step: float, horizon: float, method: str = "rk4",
              guard: Optional[Callable] = None, post_step: Optional[Callable] = None,
              names: Sequence[str] = (), kind: str = "tangent", space: str = "Qbar",
              rtol: float = RK45_TOL, atol: float = RK45_TOL) -> Trajectory:
    """Integrate y' = field_fn(y) from ``initial`` up to ``horizon``.

    ``guard(y)`` returns False once the state has left the chart; the
    trajectory is then truncated and ``exit_flag`` set.  ``post_step(y)``
    may project the state after every accepted step.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    y = np.array(initial.as_vector() if isinstance(initial, PhaseState) else initial, dtype=float)
    if guard is not None and not guard(y):
        raise ValueError("initial state is outside the chart ranges")
    times, states = [0.0], [y.copy()]
    exit_flag = None
    if method == "rk4":
        n = int(round(horizon / step))
        if abs(n * step - horizon) > 1e-9 * max(1.0, horizon):
            n = int(np.ceil(horizon / step))
        t = 0.0
        for i in range(n):
            h = min(step, horizon - t)
            y = _rk4_step(field_fn, y, h)
            if post_step is not None:
                y = post_step(y)
            t = horizon if i == n - 1 else t + h
            if not np.all(np.isfinite(y)):
                raise IntegrationError(f"non-finite state at t = {t:.6g}")
            if guard is not None and not guard(y):
                exit_flag = f"left chart range at t = {t:.6g}"
                break
            times.append(t)
            states.append(y.copy())
    elif method == "rk45":
        if horizon > 0:
            solver = RK45(lambda t, yy: field_fn(yy), 0.0, y, horizon, max_step=max(step, 1e-12),
                          rtol=rtol, atol=atol, first_step=min(step, horizon))
            while solver.status == "running":
                solver.step()
                if solver.status == "failed":
                    raise IntegrationError(solver.message or "RK45 failed")
                yy = np.array(solver.y)
                if post_step is not None:
                    yy = post_step(yy)
                if guard is not None and not guard(yy):
                    exit_flag = f"left chart range at t = {solver.t:.6g}"
                    break
                times.append(float(solver.t))
                states.append(yy)
    else:
        raise ValueError(f"unknown method {method!r} (rk4 or rk45)")
    return Trajectory(np.array(times), np.array(states), tuple(names), kind, space,
                      exit_flag=exit_flag, steps=len(times) - 1)


# ---------------------------------------------------------------------------
# compressed-system helpers


def _as_compressed(obj) -> CompressedSystem:
    return obj if isinstance(obj, CompressedSystem) else CompressedSystem(obj)


def chart_guard(system: MechanicalSystem, which: str = "Qbar") -> Callable:
    c = system.chart
    size = system.m if which == "Qbar" else system.n
    return lambda y: c.inside(y[:size], which)


def integrate_compressed(system, initial, step: float, horizon: float, method: str = "rk4",
                         kind: str = "tangent") -> Trajectory:
    """Integrate the compressed dynamics on TQ̄ (kind='tangent') or T*Q̄."""
    cs = _as_compressed(system)
    m = cs.m
    if kind == "tangent":
        fn = lambda y: cs.tangent_field(y[:m], y[m:])
    elif kind == "cotangent":
        fn = cs.hamiltonian_field
    else:
        raise ValueError("kind must be 'tangent' or 'cotangent'")
    names = cs.system.chart.names[:m]
    return integrate(fn, initial, step, horizon, method, guard=chart_guard(cs.system),
                     names=names, kind=kind, space="Qbar")


def energy_observable(system, kind: str = "tangent") -> Callable:
    cs = _as_compressed(system)
    m = cs.m

    def E(y):
        g = geometry(cs.system, y[:m])
        v = y[m:] if kind == "tangent" else np.linalg.solve(g.kbar, y[m:])
        return 0.5 * float(v @ g.kbar @ v) + float(g.U)

    return E


def momentum_observable(system, xi, kind: str = "tangent") -> Callable:
    """g_ξ = ⟨p, ξ_Q̄⟩ with p = κ̄ṙ on the tangent side."""
    from .routh import _generators

    cs = _as_compressed(system)
    m = cs.m
    xi = np.asarray(xi, dtype=float)

    def g(y):
        r = y[:m]
        p = y[m:] if kind == "tangent" else None
        if p is not None:
            p = geometry(cs.system, r).kbar @ y[m:]
        else:
            p = y[m:]
        Z, _ = _generators(cs.system, r)
        return float(p @ (np.asarray(Z) @ xi))

    return g


def add_observables(traj: Trajectory, observables: dict) -> Trajectory:
    for name, fn in observables.items():
        traj.observables[name] = np.array([fn(s) for s in traj.states])
    return traj


# ---------------------------------------------------------------------------
# monitoring


@dataclass
class DriftReport:
    entries: dict

    def as_dict(self) -> dict:
        return {k: dict(v) for k, v in self.entries.items()}

    def max_drift(self, name: str) -> float:
        return self.entries[name]["max_drift"]

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def monitor(traj: Trajectory, observables: Optional[dict] = None) -> DriftReport:
    """Per observable: max |obs(t) - obs(0)| and the slope of a linear fit."""
    if observables:
        add_observables(traj, observables)
    out = {}
    for name, vals in traj.observables.items():
        vals = np.asarray(vals, dtype=float)
        dev = np.abs(vals - vals[0])
        rate = 0.0
        if len(vals) > 1 and traj.times[-1] > traj.times[0]:
            rate = float(np.polyfit(traj.times, vals, 1)[0])
        out[name] = {"initial": float(vals[0]), "final": float(vals[-1]),
                     "max_drift": float(dev.max()), "drift_rate": rate}
    return DriftReport(out)


# ---------------------------------------------------------------------------
# the full constrained oracle on Q


def _full_data(system: MechanicalSystem, q):
    """κ, ∂κ, U, ∂U, ε and ∂ε at a point of Q (first-order AD)."""
    n = system.n
    qa = ad.seed_array(q)
    kap = system.metric(qa)
    K, dK = np.asarray(ad.value_of(kap), float), ad.partials_of(kap, n)
    U = system.U(qa)
    dU = ad.partials_of(U, n) if isinstance(U, ad.ADScalar) else np.zeros(n)
    if system.k:
        eps = system.constraint_matrix(qa)
        E, dE = np.asarray(ad.value_of(eps), float), ad.partials_of(eps, n)
    else:
        E, dE = np.zeros((0, n)), np.zeros((0, n, n))
    return K, dK, dU, E, dE


def constrained_acceleration(system: MechanicalSystem, q, qdot):
    """Solve [[κ, -εᵀ], [ε, 0]] (q̈, λ) = (F, -(∂ε·q̇) q̇)."""
    n = system.n
    K, dK, dU, E, dE = _full_data(system, q)
    # F_i = ½ q̇ᵀ ∂_iκ q̇ - ∂_i U - (∂_k κ q̇)_i q̇^k
    F = 0.5 * np.einsum("a,abi,b->i", qdot, dK, qdot) - dU - np.einsum("iak,a,k->i", dK, qdot, qdot)
    k = E.shape[0]
    if k == 0:
        return np.linalg.solve(K, F), np.zeros(0)
    rhs_c = -np.einsum("bik,i,k->b", dE, qdot, qdot)
    KKT = np.zeros((n + k, n + k))
    KKT[:n, :n] = K
    KKT[:n, n:] = -E.T
    KKT[n:, :n] = E
    try:
        sol = np.linalg.solve(KKT, np.concatenate([F, rhs_c]))
    except np.linalg.LinAlgError as exc:
        raise IntegrationError("singular multiplier system") from exc
    return sol[:n], sol[n:]


def project_velocity(system: MechanicalSystem, q, qdot):
    """Minimal κ-norm correction putting q̇ back into D."""
    if system.k == 0:
        return qdot
    K = np.asarray(system.metric(np.asarray(q, float)), dtype=float)
    E = np.asarray(system.constraint_matrix(np.asarray(q, float)), dtype=float)
    Ki_Et = np.linalg.solve(K, E.T)
    lam = np.linalg.solve(E @ Ki_Et, E @ qdot)
    return qdot - Ki_Et @ lam


def constraint_residual(system: MechanicalSystem, y) -> float:
    n = system.n
    if system.k == 0:
        return 0.0
    E = np.asarray(system.constraint_matrix(y[:n]), dtype=float)
    return float(np.max(np.abs(E @ y[n:])))


def lift_state(system: MechanicalSystem, r, rdot, s=None) -> np.ndarray:
    """(q, q̇) on Q from (r, ṙ) on TQ̄: q̇ = (ṙ, -Aṙ)."""
    r = np.asarray(r, dtype=float)
    s = system.base_fiber() if s is None else np.asarray(s, dtype=float)
    q = np.concatenate([r, s])
    A = np.asarray(system.connection(q), dtype=float).reshape(system.k, system.m)
    return np.concatenate([q, np.asarray(rdot, float), -A @ np.asarray(rdot, float)])


def dae_oracle(system: MechanicalSystem, initial, step: float, horizon: float,
               project: bool = True, tol: float = 1e-12) -> Trajectory:
    """RK4 on the full constrained equations with velocity projection."""
    n = system.n
    y0 = np.array(initial.as_vector() if isinstance(initial, PhaseState) else initial, dtype=float)
    if y0.shape != (2 * n,):
        raise ValueError(f"initial state must have {2 * n} entries (q, q̇)")
    if constraint_residual(system, y0) > tol:
        raise ValueError("initial velocity violates the constraints")

    def fn(y):
        acc, _ = constrained_acceleration(system, y[:n], y[n:])
        return np.concatenate([y[n:], acc])

    def post(y):
        return np.concatenate([y[:n], project_velocity(system, y[:n], y[n:])]) if project else y

    traj = integrate(fn, y0, step, horizon, "rk4", guard=chart_guard(system, "Q"),
                     post_step=post, names=system.chart.names, kind="tangent", space="Q")
    traj.observables["constraint_residual"] = np.array([constraint_residual(system, y) for y in traj.states])
    return traj


def project_to_qbar(system: MechanicalSystem, traj: Trajectory) -> np.ndarray:
    """(r, ṙ) columns of a full trajectory on Q."""
    n, m = system.n, system.m
    return np.hstack([traj.states[:, :m], traj.states[:, n:n + m]])


def oracle_discrepancy(system, r0, rdot0, step: float, horizon: float) -> dict:
    """Sup-norm gap between the projected DAE oracle and the compressed flow."""
    cs = _as_compressed(system)
    S = cs.system
    full = dae_oracle(S, lift_state(S, r0, rdot0), step, horizon)
    red = integrate_compressed(cs, np.concatenate([r0, rdot0]), step, horizon)
    k = min(len(full.times), len(red.times))
    gap = float(np.max(np.abs(project_to_qbar(S, full)[:k] - red.states[:k])))
    return {"max_discrepancy": gap,
            "max_constraint_residual": float(np.max(full.observables["constraint_residual"])),
            "samples": int(k), "oracle_exit": full.exit_flag, "reduced_exit": red.exit_flag}
