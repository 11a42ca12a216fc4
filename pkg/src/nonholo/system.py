"""Nonholonomic systems written in coordinates adapted to their symmetries.

Coordinates on Q are ordered ``q = (x, y, s)``:

* ``x`` - shape coordinates (base of Q̄ → Q̄/H),
* ``y`` - H-fiber coordinates,
* ``s`` - G_W-fiber coordinates, on which G_W acts by translation.

``r = (x, y)`` are the coordinates of Q̄ = Q/G_W.  The constraint distribution
is D = span{X_α = ∂/∂r^α - A^B_α ∂/∂s^B} and the vertical complement is
W = span{∂/∂s^B}.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad

PERIODIC = "periodic"


@dataclass(frozen=True)
class AdaptedChart:
    shape_names: tuple
    h_fiber_names: tuple
    gw_fiber_names: tuple
    ranges: dict = field(default_factory=dict)
    margin: float = 0.05

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("coordinate blocks must be disjoint")
        for key in self.ranges:
            if key not in names:
                raise ValueError(f"range given for unknown coordinate {key!r}")

    @property
    def names(self) -> tuple:
        return tuple(self.shape_names) + tuple(self.h_fiber_names) + tuple(self.gw_fiber_names)

    @property
    def n(self) -> int:
        return len(self.names)

    @property
    def n_shape(self) -> int:
        return len(self.shape_names)

    @property
    def n_h(self) -> int:
        return len(self.h_fiber_names)

    @property
    def n_gw(self) -> int:
        return len(self.gw_fiber_names)

    @property
    def m(self) -> int:
        """Dimension of Q̄."""
        return self.n_shape + self.n_h

    def index(self, name: str) -> int:
        return self.names.index(name)

    def range_of(self, name: str):
        return self.ranges.get(name, PERIODIC)

    def sample(self, rng: np.random.Generator, which: str = "Q") -> np.ndarray:
        """Uniform sample inside the declared ranges (shrunk by the margin)."""
        names = self.names if which == "Q" else self.names[: self.m]
        out = np.empty(len(names))
        for k, name in enumerate(names):
            rg = self.range_of(name)
            if rg == PERIODIC:
                out[k] = rng.uniform(-np.pi, np.pi)
            else:
                lo, hi = rg
                out[k] = rng.uniform(lo + self.margin, hi - self.margin)
        return out

    def inside(self, q, which: str = "Q", margin: Optional[float] = None) -> bool:
        margin = self.margin if margin is None else margin
        names = self.names if which == "Q" else self.names[: self.m]
        for k, name in enumerate(names):
            rg = self.range_of(name)
            if rg == PERIODIC:
                continue
            lo, hi = rg
            if not (lo + margin <= q[k] <= hi - margin):
                return False
        return True


@dataclass
class MechanicalSystem:
    """Kinetic metric, potential and constraint connection in adapted coordinates.

    ``metric(q)`` returns the n×n kinetic energy matrix κ, ``connection(q)``
    the |s|×m matrix A^B_α, ``potential(q)`` the potential U.  All three must
    accept ADScalar arrays.  ``h_generators(r)`` returns the infinitesimal
    generators of the H-action on Q̄ as columns of an m×|h| matrix; by default
    H acts by translation of the y coordinates.  ``definite=False`` declares
    an indefinite (but nondegenerate) kinetic form; validation then checks
    nondegeneracy instead of positivity.

    ``jet(q)``, when given, is a hand-differentiated shortcut used by the
    integrators at plain points: it returns ``(κ, ∂κ, A, ∂A)`` with the
    derivative index last.  It must agree with the AD route.
    """

    chart: AdaptedChart
    metric: Callable
    connection: Callable
    potential: Optional[Callable] = None
    h_generators: Optional[Callable] = None
    h_abelian: bool = True
    structure_constants: Optional[np.ndarray] = None
    definite: bool = True
    name: str = ""
    parameters: dict = field(default_factory=dict)
    jet: Optional[Callable] = None

    @property
    def n(self) -> int:
        return self.chart.n

    @property
    def m(self) -> int:
        return self.chart.m

    @property
    def k(self) -> int:
        return self.chart.n_gw

    def U(self, q):
        if self.potential is None:
            return 0.0 * q[0]
        return self.potential(q)

    def generators(self, r):
        if self.h_generators is not None:
            return self.h_generators(r)
        c = self.chart
        g = np.zeros((c.m, c.n_h))
        for a in range(c.n_h):
            g[c.n_shape + a, a] = 1.0
        return g

    def frame(self, q):
        """Columns X_α (n×m) and Z_B (n×k) of the adapted frame at q."""
        A = self.connection(q)
        m, k = self.m, self.k
        if isinstance(A, ad.ADScalar):
            top = ad.constant(np.eye(m), A.n, A.order)
            X = ad.concatenate([top, -A])
        else:
            X = np.vstack([np.eye(m), -np.asarray(A, dtype=float)])
        Z = np.vstack([np.zeros((m, k)), np.eye(k)])
        return X, Z

    def frame_matrix(self, q) -> np.ndarray:
        X, Z = self.frame(np.asarray(q, dtype=float))
        return np.hstack([X, Z])

    def constraint_matrix(self, q):
        """Rows are the constraint one-forms ε^B = ds^B + A^B_α dr^α."""
        A = self.connection(q)
        if isinstance(A, ad.ADScalar):
            right = ad.constant(np.eye(self.k), A.n, A.order)
            return ad.stack([[A[b, j] for j in range(self.m)] + [right[b, c] for c in range(self.k)]
                             for b in range(self.k)])
        return np.hstack([np.asarray(A, dtype=float), np.eye(self.k)])

    def base_fiber(self) -> np.ndarray:
        """Representative s used when evaluating G_W-invariant quantities."""
        return np.zeros(self.k)

    def full_point(self, r) -> np.ndarray:
        return np.concatenate([np.asarray(r, dtype=float), self.base_fiber()])


@dataclass
class PhaseState:
    """A point of TQ / T*Q (frame coordinates) or of TQ̄ / T*Q̄.

    ``fibers`` holds (ṙ, v) or (p_α, p_B) in the adapted frame for states on
    Q, and ṙ or p for states on Q̄.
    """

    coords: np.ndarray
    fibers: np.ndarray
    kind: str = "tangent"  # or "cotangent"
    space: str = "Q"       # or "Qbar"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.fibers = np.asarray(self.fibers, dtype=float)
        if self.kind not in ("tangent", "cotangent"):
            raise ValueError(f"unknown representation {self.kind!r}")
        if self.space not in ("Q", "Qbar"):
            raise ValueError(f"unknown space {self.space!r}")
        if self.coords.shape != self.fibers.shape:
            raise ValueError("coordinates and fibers must have the same length")

    def is_constrained(self, system: MechanicalSystem, tol: float = 1e-12) -> bool:
        if self.space == "Qbar":
            return True
        if self.kind == "tangent":
            return bool(np.all(np.abs(self.fibers[system.m:]) <= tol))
        back = legendre_inverse(system, self)
        return bool(np.all(np.abs(back.fibers[system.m:]) <= tol))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.coords, self.fibers])


class SingularMetric(ArithmeticError):
    pass


def _check_dims(system: MechanicalSystem, state: PhaseState):
    size = system.n if state.space == "Q" else system.m
    if state.coords.shape != (size,):
        raise ValueError(f"state has {state.coords.size} coordinates, expected {size}")


def frame_metric(system: MechanicalSystem, q) -> np.ndarray:
    """κ in the frame {X_α, Z_B}."""
    q = np.asarray(q, dtype=float)
    kappa = np.asarray(system.metric(q), dtype=float)
    F = system.frame_matrix(q)
    return F.T @ kappa @ F


def compressed_metric(system: MechanicalSystem, r) -> np.ndarray:
    """κ̄_αβ = κ(X_α, X_β) at a point of Q̄."""
    G = frame_metric(system, system.full_point(r))
    return G[: system.m, : system.m]


def _fiber_metric(system, state):
    if state.space == "Q":
        return frame_metric(system, state.coords)
    return compressed_metric(system, state.coords)


def legendre(system: MechanicalSystem, state: PhaseState) -> PhaseState:
    """Frame velocities to frame momenta: p = G·v."""
    if state.kind != "tangent":
        raise ValueError("legendre expects a tangent state")
    _check_dims(system, state)
    G = _fiber_metric(system, state)
    return PhaseState(state.coords, G @ state.fibers, "cotangent", state.space)


def legendre_inverse(system: MechanicalSystem, state: PhaseState) -> PhaseState:
    if state.kind != "cotangent":
        raise ValueError("legendre_inverse expects a cotangent state")
    _check_dims(system, state)
    G = _fiber_metric(system, state)
    try:
        v = np.linalg.solve(G, state.fibers)
    except np.linalg.LinAlgError as exc:
        raise SingularMetric(str(exc)) from exc
    return PhaseState(state.coords, v, "tangent", state.space)


def energy(system: MechanicalSystem, state: PhaseState) -> float:
    """Kinetic plus potential energy of a tangent or cotangent state."""
    _check_dims(system, state)
    q = state.coords if state.space == "Q" else system.full_point(state.coords)
    U = float(ad.value_of(system.U(np.asarray(q, dtype=float))))
    G = _fiber_metric(system, state)
    if state.kind == "tangent":
        v = state.fibers
        return 0.5 * float(v @ G @ v) + U
    p = state.fibers
    return 0.5 * float(p @ np.linalg.solve(G, p)) + U


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    samples: int
    min_metric_eigenvalue: float
    min_frame_singular_value: float
    direct_sum_violation: float
    gw_invariance_violation: float
    h_invariance_violation: float
    tol: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "samples": self.samples,
            "min_metric_eigenvalue": self.min_metric_eigenvalue,
            "min_frame_singular_value": self.min_frame_singular_value,
            "direct_sum_violation": self.direct_sum_violation,
            "gw_invariance_violation": self.gw_invariance_violation,
            "h_invariance_violation": self.h_invariance_violation,
            "passed": self.passed,
            "failures": list(self.failures),
        }


def validate(system: MechanicalSystem, samples: int = 100, seed: int = 0,
             tol: float = 1e-10) -> ValidationReport:
    """Sample the chart and check the structural hypotheses.

    Checked: κ symmetric positive definite, the frame {X_α, Z_B} has full
    rank, D ∩ W = 0 (D + W = TQ), κ, U and A do not depend on the G_W-fiber
    coordinates, and the compressed metric and potential are invariant under
    the H-action.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    c = system.chart
    m = system.m
    min_eig = np.inf
    min_sv = np.inf
    dsum = 0.0
    gw_inv = 0.0
    h_inv = 0.0
    failures = []
    for _ in range(samples):
        q = c.sample(rng)
        kappa = np.asarray(system.metric(q), dtype=float)
        sym = float(np.max(np.abs(kappa - kappa.T)))
        try:
            eigs = np.linalg.eigvalsh(0.5 * (kappa + kappa.T))
            eig = float(np.min(eigs)) if system.definite else float(np.min(np.abs(eigs)))
        except np.linalg.LinAlgError:
            eig = -np.inf
        if sym > tol:
            eig = min(eig, -sym)
        min_eig = min(min_eig, eig)
        F = system.frame_matrix(q)
        sv = np.linalg.svd(F, compute_uv=False)
        min_sv = min(min_sv, float(sv[-1]))
        # D ⊕ W: the constraint forms must be the identity on W
        eps = np.asarray(system.constraint_matrix(q), dtype=float)
        X, Z = F[:, :m], F[:, m:]
        dsum = max(dsum, float(np.max(np.abs(eps @ X), initial=0.0)),
                   float(np.max(np.abs(eps @ Z - np.eye(system.k)), initial=0.0)))
        # G_W invariance: partials along s
        qa = ad.seed_array(q)
        gw = slice(m, system.n)
        for val in (system.metric(qa), system.connection(qa), system.U(qa)):
            if isinstance(val, ad.ADScalar):
                gw_inv = max(gw_inv, float(np.max(np.abs(val.partials[..., gw]), initial=0.0)))
        # H invariance of the compressed metric and potential: Lie derivative
        h_inv = max(h_inv, _h_invariance(system, q[:m]))
    if not min_eig > 0.0:
        failures.append("metric is not symmetric positive definite" if system.definite
                        else "metric is degenerate or not symmetric")
    if not min_sv > 1e-8:
        failures.append("adapted frame is rank deficient")
    if dsum > tol:
        failures.append("D and W do not split TQ")
    if gw_inv > tol:
        failures.append("coefficients depend on G_W-fiber coordinates")
    if h_inv > tol:
        failures.append("compressed Lagrangian is not H-invariant")
    return ValidationReport(samples, float(min_eig), float(min_sv), dsum, gw_inv, h_inv, tol, failures)


def _h_invariance(system: MechanicalSystem, r) -> float:
    """max |L_ξ κ̄|, |ξ(U)| over a basis of generators ξ of the H-action."""
    m = system.m
    ra = ad.seed_array(r)
    q = ad.concatenate([ra, system.base_fiber()])
    kappa = system.metric(q)
    X, _ = system.frame(q)
    kbar = ad.matmul(ad.transpose(X), ad.matmul(kappa, X))
    U = system.U(q)
    gens = system.generators(ad.seed_array(r))
    gval = np.asarray(ad.value_of(gens), dtype=float)
    dgen = ad.partials_of(gens, m)[:, :, :m] if isinstance(gens, ad.ADScalar) else np.zeros(gval.shape + (m,))
    kv = np.asarray(ad.value_of(kbar), dtype=float)
    dk = ad.partials_of(kbar, len(q.value))[:, :, :m]
    dU = ad.partials_of(U, len(q.value))[..., :m]
    worst = 0.0
    for a in range(gval.shape[1]):
        xi = gval[:, a]
        dxi = dgen[:, a, :]  # ∂ξ^α/∂r^β
        # (L_ξ κ̄)_αβ = ξ^γ ∂_γ κ̄_αβ + κ̄_γβ ∂_α ξ^γ + κ̄_αγ ∂_β ξ^γ
        lie = np.einsum("abg,g->ab", dk, xi) + dxi.T @ kv + kv @ dxi
        worst = max(worst, float(np.max(np.abs(lie))), abs(float(np.asarray(dU) @ xi)))
    return worst


def connection_from_constraints(chart: AdaptedChart, forms: Callable) -> Callable:
    """Turn raw constraint one-forms into the connection matrix A.

    ``forms(q)`` returns a k×n coefficient matrix whose row B is the one-form
    ε^B = c^B_j dq^j, rows ordered like the G_W-fiber names.  The s-block is
    inverted pointwise so the rows become ds^B + A^B_α dr^α.
    """
    m, k = chart.m, chart.n_gw

    def connection(q):
        c = forms(q)
        if not isinstance(c, ad.ADScalar):
            c = np.asarray(c, dtype=float)
            if c.shape != (k, m + k):
                raise ValueError(f"constraint matrix must be {k}x{m + k}, got {c.shape}")
            cs = c[:, m:]
            if np.linalg.cond(cs) > 1e12:
                raise SingularMetric("constraint forms do not restrict to a basis on the G_W fiber")
            return np.linalg.solve(cs, c[:, :m])
        if np.linalg.cond(np.asarray(c.value)[:, m:]) > 1e12:
            raise SingularMetric("constraint forms do not restrict to a basis on the G_W fiber")
        return ad.solve(c[:, m:], c[:, :m])

    return connection
