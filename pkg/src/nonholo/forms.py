"""Differential forms in a single coordinate chart.

A :class:`CoordinateForm` of degree k on an n-dimensional chart stores its
coefficients on strictly increasing index tuples ``(i1 < ... < ik)``.  The
coefficients are produced by one callable ``components(point) -> dict`` so
that a model can compute all of them from shared intermediate results (the
metric, the curvature, ...).  Missing keys mean the coefficient is zero.

Evaluation at a point gives a :class:`FormValue`, a plain alternating tensor
that can be evaluated on vectors, contracted and wedged.  Derivatives of the
coefficients come from forward-mode AD, so ``components`` must be written with
the functions in :mod:`nonholo.autodiff`.
"""

from __future__ import annotations

from itertools import combinations
from typing import Callable

import numpy as np

from . import autodiff as ad

ZERO_TOL = 1e-10
MAX_DEGREE = 3


class FormError(ValueError):
    pass


def canonical(idx) -> tuple[tuple[int, ...], int]:
    """Sort an index tuple; return (sorted, sign) or (None, 0) if repeated."""
    idx = list(idx)
    if len(set(idx)) != len(idx):
        return None, 0
    sign = 1
    # bubble sort keeps track of the permutation parity
    for i in range(len(idx)):
        for j in range(len(idx) - 1 - i):
            if idx[j] > idx[j + 1]:
                idx[j], idx[j + 1] = idx[j + 1], idx[j]
                sign = -sign
    return tuple(idx), sign


def _add(acc: dict, key, val):
    if key in acc:
        acc[key] = acc[key] + val
    else:
        acc[key] = val


def _check_keys(coeffs: dict, degree: int, dim: int):
    for key in coeffs:
        if len(key) != degree:
            raise FormError(f"index {key} does not match degree {degree}")
        if any(key[i] >= key[i + 1] for i in range(len(key) - 1)):
            raise FormError(f"index {key} is not strictly increasing")
        if key and (key[0] < 0 or key[-1] >= dim):
            raise FormError(f"index {key} out of range for dimension {dim}")


def wedge_coeffs(a: dict, b: dict) -> dict:
    out: dict = {}
    for ia, ca in a.items():
        for ib, cb in b.items():
            key, sign = canonical(ia + ib)
            if key is None:
                continue
            _add(out, key, sign * (ca * cb))
    return out


def interior_coeffs(vec, coeffs: dict) -> dict:
    out: dict = {}
    for idx, c in coeffs.items():
        for pos, i in enumerate(idx):
            rest = idx[:pos] + idx[pos + 1:]
            sign = -1 if pos % 2 else 1
            _add(out, rest, sign * (vec[i] * c))
    return out


def _d_from_jet(jets: dict, dim: int, lower) -> dict:
    """Antisymmetrize first partials; ``lower`` extracts ∂_j of a coefficient."""
    out: dict = {}
    for idx, c in jets.items():
        for j in range(dim):
            if j in idx:
                continue
            key, sign = canonical((j,) + idx)
            _add(out, key, sign * lower(c, j))
    return out


class FormValue:
    """A k-form at a single point: sparse alternating coefficients."""

    def __init__(self, degree: int, dim: int, coeffs: dict):
        self.degree = degree
        self.dim = dim
        self.coeffs = {k: float(ad.value_of(v)) for k, v in coeffs.items()}

    def __getitem__(self, idx):
        key, sign = canonical(idx)
        if key is None:
            return 0.0
        return sign * self.coeffs.get(key, 0.0)

    def evaluate(self, *vectors) -> float:
        if len(vectors) != self.degree:
            raise FormError(f"{self.degree}-form needs {self.degree} vectors, got {len(vectors)}")
        vs = [np.asarray(v, dtype=float) for v in vectors]
        for v in vs:
            if v.shape != (self.dim,):
                raise FormError(f"vector of shape {v.shape} does not match dimension {self.dim}")
        if self.degree == 0:
            return self.coeffs.get((), 0.0)
        total = 0.0
        for idx, c in self.coeffs.items():
            mat = np.array([[v[i] for v in vs] for i in idx])
            total += c * np.linalg.det(mat)
        return float(total)

    def contract(self, vector) -> "FormValue":
        if self.degree == 0:
            raise FormError("cannot contract a 0-form")
        v = np.asarray(vector, dtype=float)
        return FormValue(self.degree - 1, self.dim, interior_coeffs(v, self.coeffs))

    def wedge(self, other: "FormValue") -> "FormValue":
        return FormValue(self.degree + other.degree, self.dim, wedge_coeffs(self.coeffs, other.coeffs))

    def __add__(self, other: "FormValue") -> "FormValue":
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            _add(out, k, v)
        return FormValue(self.degree, self.dim, out)

    def __sub__(self, other: "FormValue") -> "FormValue":
        return self + other * -1.0

    def __mul__(self, s: float) -> "FormValue":
        return FormValue(self.degree, self.dim, {k: s * v for k, v in self.coeffs.items()})

    __rmul__ = __mul__

    def matrix(self) -> np.ndarray:
        """Antisymmetric matrix ω(e_i, e_j) of a 2-form."""
        if self.degree != 2:
            raise FormError("matrix() is only defined for 2-forms")
        m = np.zeros((self.dim, self.dim))
        for (i, j), c in self.coeffs.items():
            m[i, j] = c
            m[j, i] = -c
        return m

    def vector(self) -> np.ndarray:
        if self.degree != 1:
            raise FormError("vector() is only defined for 1-forms")
        v = np.zeros(self.dim)
        for (i,), c in self.coeffs.items():
            v[i] = c
        return v

    def max_abs(self) -> float:
        return max((abs(c) for c in self.coeffs.values()), default=0.0)

    def __repr__(self):
        return f"FormValue(degree={self.degree}, coeffs={self.coeffs})"


class CoordinateForm:
    """Degree-k form whose coefficients are AD-evaluable functions of a point."""

    def __init__(self, degree: int, dim: int, components: Callable, name: str = ""):
        if degree < 0 or degree > MAX_DEGREE:
            raise FormError(f"degree must be in [0, {MAX_DEGREE}]")
        self.degree = degree
        self.dim = dim
        self._components = components
        self.name = name

    @classmethod
    def from_coefficients(cls, degree: int, dim: int, funcs: dict, name: str = ""):
        norm: dict = {}
        for idx, f in funcs.items():
            key, sign = canonical(idx)
            if key is None:
                raise FormError(f"repeated index in {idx}")
            norm[key] = (sign, f)
        _check_keys(norm, degree, dim)

        def components(point):
            return {k: s * f(point) for k, (s, f) in norm.items()}

        return cls(degree, dim, components, name)

    @classmethod
    def zero(cls, degree: int, dim: int):
        return cls(degree, dim, lambda point: {}, "0")

    @classmethod
    def canonical_symplectic(cls, half: int):
        """Σ dq^i ∧ dp_i on coordinates (q, p) of dimension 2·half."""
        coeffs = {(i, half + i): 1.0 for i in range(half)}
        return cls(2, 2 * half, lambda point: dict(coeffs), "dq∧dp")

    def components(self, point) -> dict:
        coeffs = self._components(point)
        _check_keys(coeffs, self.degree, self.dim)
        return coeffs

    def at(self, point) -> FormValue:
        point = _as_point(point, self.dim)
        return FormValue(self.degree, self.dim, self.components(point))

    def jet(self, point, order: int = 1) -> dict:
        """Coefficients as ADScalars of the given order w.r.t. the point."""
        point = _as_point(point, self.dim)
        seeded = ad.seed_array(point, order=order)
        out = {}
        for k, v in self.components(seeded).items():
            out[k] = v if isinstance(v, ad.ADScalar) else ad.constant(v, self.dim, order)
        return out

    # algebra ----------------------------------------------------------
    def __add__(self, other: "CoordinateForm") -> "CoordinateForm":
        _same_shape(self, other)

        def comp(point):
            out = dict(self._components(point))
            for k, v in other._components(point).items():
                _add(out, k, v)
            return out

        return CoordinateForm(self.degree, self.dim, comp, f"({self.name}+{other.name})")

    def __neg__(self) -> "CoordinateForm":
        return self.scale(-1.0)

    def __sub__(self, other: "CoordinateForm") -> "CoordinateForm":
        return self + (-other)

    def scale(self, factor) -> "CoordinateForm":
        """Multiply by a constant or by a function of the point."""

        def comp(point):
            s = factor(point) if callable(factor) else factor
            return {k: s * v for k, v in self._components(point).items()}

        return CoordinateForm(self.degree, self.dim, comp, f"s·{self.name}")

    def wedge(self, other: "CoordinateForm") -> "CoordinateForm":
        if self.dim != other.dim:
            raise FormError("dimension mismatch in wedge")
        if self.degree + other.degree > MAX_DEGREE:
            raise FormError("wedge would exceed the supported degree")

        def comp(point):
            return wedge_coeffs(self._components(point), other._components(point))

        return CoordinateForm(self.degree + other.degree, self.dim, comp,
                              f"{self.name}∧{other.name}")

    def d(self) -> "CoordinateForm":
        """Exterior derivative as a form (differentiable once more)."""
        if self.degree + 1 > MAX_DEGREE:
            raise FormError("exterior derivative would exceed the supported degree")
        base = self

        def comp(point):
            if isinstance(point, ad.ADScalar):
                if point.hessian is not None:
                    raise FormError("d(form) supports at most one further derivative")
                jets = base.jet(point.value, order=2)
                lower = lambda c, j: ad.ADScalar(c.partials[..., j], c.hessian[..., j, :])
                inner = _d_from_jet(jets, base.dim, lower)
                # chain rule through the incoming point's Jacobian
                jac = point.partials
                return {k: ad.ADScalar(v.value, v.partials @ jac) for k, v in inner.items()}
            jets = base.jet(point, order=1)
            return _d_from_jet(jets, base.dim, lambda c, j: float(c.partials[j]))

        return CoordinateForm(self.degree + 1, self.dim, comp, f"d{self.name}")


class CoordinateVectorField:
    """n components, each a function of the point (one callable for all)."""

    def __init__(self, dim: int, components: Callable, name: str = ""):
        self.dim = dim
        self._components = components
        self.name = name

    @classmethod
    def constant(cls, vector):
        v = np.asarray(vector, dtype=float)
        return cls(len(v), lambda point: v, "const")

    def at(self, point) -> np.ndarray:
        val = np.asarray(ad.value_of(self._components(_as_point(point, self.dim))), dtype=float)
        if val.shape != (self.dim,):
            raise FormError(f"vector field returned shape {val.shape}, expected ({self.dim},)")
        return val

    def __call__(self, point):
        return self._components(point)


def _same_shape(a, b):
    if a.degree != b.degree or a.dim != b.dim:
        raise FormError("forms must share degree and dimension")


def _as_point(point, dim):
    if isinstance(point, ad.ADScalar):
        if point.shape != (dim,):
            raise FormError(f"point has shape {point.shape}, expected ({dim},)")
        return point
    p = np.asarray(point, dtype=float)
    if p.shape != (dim,):
        raise FormError(f"point has shape {p.shape}, expected ({dim},)")
    return p


# ---------------------------------------------------------------------------
# module-level operations

def evaluate_form(form: CoordinateForm, point, *vectors) -> float:
    """Alternating multilinear evaluation of ``form`` at ``point``."""
    if len(vectors) != form.degree:
        raise FormError(f"{form.degree}-form needs {form.degree} vectors")
    return form.at(point).evaluate(*vectors)


def exterior_derivative(form: CoordinateForm, point) -> FormValue:
    """(dω)_p from AD partials of the coefficients."""
    if form.degree + 1 > MAX_DEGREE:
        raise FormError("exterior derivative would exceed the supported degree")
    jets = form.jet(point, order=1)
    coeffs = _d_from_jet(jets, form.dim, lambda c, j: float(c.partials[j]))
    return FormValue(form.degree + 1, form.dim, coeffs)


def interior_product(field, form: CoordinateForm, point) -> FormValue:
    """i_X ω at the point (contraction in the first slot)."""
    if form.degree == 0:
        raise FormError("interior product of a 0-form is undefined")
    if isinstance(field, CoordinateVectorField):
        if field.dim != form.dim:
            raise FormError("vector field and form dimensions differ")
        vec = field.at(point)
    else:
        vec = np.asarray(field, dtype=float)
        if vec.shape != (form.dim,):
            raise FormError("vector and form dimensions differ")
    return form.at(point).contract(vec)


def differential(func: Callable, dim: int, name: str = "") -> CoordinateForm:
    """The 1-form df of a scalar AD-evaluable function."""

    def comp(point):
        if isinstance(point, ad.ADScalar):
            if point.hessian is not None:
                raise FormError("df supports at most one further derivative")
            inner = func(ad.seed_array(point.value, order=2))
            g = ad.ADScalar(inner.partials, inner.hessian @ point.partials)
            return {(i,): g[i] for i in range(dim)}
        val = func(ad.seed_array(point, order=1))
        if not isinstance(val, ad.ADScalar):
            return {}
        return {(i,): float(val.partials[i]) for i in range(dim)}

    return CoordinateForm(1, dim, comp, f"d{name}")


def function_form(func: Callable, dim: int, name: str = "") -> CoordinateForm:
    """A 0-form."""
    return CoordinateForm(0, dim, lambda point: {(): func(point)}, name)


def all_index_tuples(degree: int, dim: int):
    return list(combinations(range(dim), degree))


def contraction(field: CoordinateVectorField, form: CoordinateForm) -> CoordinateForm:
    """The form i_X ω as a CoordinateForm (differentiable if X and ω are)."""
    if form.degree == 0:
        raise FormError("interior product of a 0-form is undefined")
    if field.dim != form.dim:
        raise FormError("vector field and form dimensions differ")

    def comp(point):
        return interior_coeffs(field(point), form.components(point))

    return CoordinateForm(form.degree - 1, form.dim, comp, name=f"i_{field.name}{form.name}")


def lie_derivative(field: CoordinateVectorField, form: CoordinateForm, point) -> FormValue:
    """L_X ω = i_X dω + d(i_X ω) at the point (Cartan's formula)."""
    first = interior_product(field, form.d(), point) if form.degree < form.dim else None
    second = contraction(field, form).d().at(point) if form.degree > 0 else None
    if first is None:
        return second
    if second is None:
        return first
    return first + second
