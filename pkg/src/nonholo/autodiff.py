"""Forward-mode automatic differentiation with optional second derivatives.

An :class:`ADScalar` carries a value together with its partial derivatives
with respect to a fixed set of seeded coordinates.  The value may be a plain
float or a numpy array; in the array case every entry has its own partials
(stored on a trailing axis), which lets metric matrices and connection
coefficients be differentiated with a handful of numpy calls.

When seeded with ``order=2`` a Hessian is propagated as well.  This is what
makes d(dω), Jacobiators and the derivative of derived quantities possible
without nesting dual numbers.
"""

from __future__ import annotations

import numpy as np


class ADScalar:
    """Value plus partials (and optionally a Hessian) over ``n`` seeded directions."""

    __slots__ = ("value", "partials", "hessian")
    __array_ufunc__ = None  # make ndarray <op> ADScalar defer to us

    def __init__(self, value, partials, hessian=None):
        self.value = value
        self.partials = partials
        self.hessian = hessian

    # -- introspection -------------------------------------------------
    @property
    def n(self) -> int:
        return self.partials.shape[-1]

    @property
    def order(self) -> int:
        return 1 if self.hessian is None else 2

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self) -> int:
        return np.ndim(self.value)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"ADScalar(value={self.value!r}, partials={self.partials!r})"

    # -- arithmetic ----------------------------------------------------
    def __neg__(self):
        h = None if self.hessian is None else -self.hessian
        return ADScalar(-self.value, -self.partials, h)

    def __pos__(self):
        return self

    def __add__(self, other):
        if self.hessian is None and isinstance(self.value, float):
            if isinstance(other, ADScalar):
                if other.hessian is None and isinstance(other.value, float):
                    return ADScalar(self.value + other.value, self.partials + other.partials)
            elif isinstance(other, (float, int)):
                return ADScalar(self.value + other, self.partials)
        if isinstance(other, ADScalar):
            v = self.value + other.value
            p = _bcast_p(self.partials, v) + _bcast_p(other.partials, v)
            h = None
            if self.hessian is not None and other.hessian is not None:
                h = _bcast_h(self.hessian, v) + _bcast_h(other.hessian, v)
            return ADScalar(v, p, h)
        v = self.value + other
        return ADScalar(v, _bcast_p(self.partials, v),
                        None if self.hessian is None else _bcast_h(self.hessian, v))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if self.hessian is None and isinstance(self.value, float):
            if isinstance(other, ADScalar):
                if other.hessian is None and isinstance(other.value, float):
                    return ADScalar(self.value * other.value,
                                    self.value * other.partials + other.value * self.partials)
            elif isinstance(other, (float, int)):
                return ADScalar(self.value * other, other * self.partials)
        if isinstance(other, ADScalar):
            a, b = self.value, other.value
            av, bv = np.asarray(a)[..., None], np.asarray(b)[..., None]
            p = av * other.partials + bv * self.partials
            h = None
            if self.hessian is not None and other.hessian is not None:
                h = (av[..., None] * other.hessian + bv[..., None] * self.hessian
                     + _outer(self.partials, other.partials)
                     + _outer(other.partials, self.partials))
            return ADScalar(a * b, p, h)
        c = np.asarray(other)
        h = None if self.hessian is None else c[..., None, None] * self.hessian
        return ADScalar(self.value * other, c[..., None] * self.partials, h)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, ADScalar):
            return self * reciprocal(other)
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, k):
        if isinstance(k, ADScalar):
            return exp(log(self) * k)
        x = np.asarray(self.value, dtype=float)
        if k == 2:
            return self * self
        return _unary(self, x ** k, k * x ** (k - 1), k * (k - 1) * x ** (k - 2))

    # -- array-ish helpers ---------------------------------------------
    def __getitem__(self, idx):
        h = None if self.hessian is None else self.hessian[idx]
        return ADScalar(self.value[idx], self.partials[idx], h)

    def __iter__(self):
        for i in range(len(self.value)):
            yield self[i]

    @property
    def T(self):
        if self.ndim != 2:
            raise ValueError("transpose needs a 2-d ADScalar array")
        h = None if self.hessian is None else self.hessian.transpose(1, 0, 2, 3)
        return ADScalar(self.value.T, self.partials.transpose(1, 0, 2), h)

    def sum(self, axis=None):
        nd = self.ndim
        axes = tuple(range(nd)) if axis is None else (axis,)
        h = None if self.hessian is None else self.hessian.sum(axis=axes)
        return ADScalar(np.sum(self.value, axis=axes), self.partials.sum(axis=axes), h)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


# ---------------------------------------------------------------------------
# internal helpers

def _bcast_p(p, v):
    shape = np.shape(v) + p.shape[-1:]
    return p if p.shape == shape else np.broadcast_to(p, shape)


def _bcast_h(h, v):
    shape = np.shape(v) + h.shape[-2:]
    return h if h.shape == shape else np.broadcast_to(h, shape)


def _outer(p, q):
    return p[..., :, None] * q[..., None, :]


def _unary(a: ADScalar, f, df, d2f):
    if a.hessian is None and isinstance(a.value, float):
        return ADScalar(float(f), float(df) * a.partials)
    df = np.asarray(df)
    p = df[..., None] * a.partials
    h = None
    if a.hessian is not None:
        h = df[..., None, None] * a.hessian + np.asarray(d2f)[..., None, None] * _outer(a.partials, a.partials)
    return ADScalar(f, p, h)


# ---------------------------------------------------------------------------
# seeding

def variables(x, order: int = 1) -> list[ADScalar]:
    """Seed each entry of ``x`` as an independent coordinate."""
    x = np.asarray(x, dtype=float)
    n = x.size
    eye = np.eye(n)
    out = []
    for i in range(n):
        h = np.zeros((n, n)) if order >= 2 else None
        out.append(ADScalar(float(x[i]), eye[i].copy(), h))
    return out


def seed_array(x, order: int = 1) -> ADScalar:
    """Seed a whole vector at once; returns one array-valued ADScalar."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.zeros((n, n, n)) if order >= 2 else None
    return ADScalar(x.copy(), np.eye(n), h)


def constant(value, n: int, order: int = 1) -> ADScalar:
    v = np.asarray(value, dtype=float)
    h = np.zeros(v.shape + (n, n)) if order >= 2 else None
    return ADScalar(v if v.ndim else float(v), np.zeros(v.shape + (n,)), h)


def is_ad(x) -> bool:
    return isinstance(x, ADScalar)


def value_of(x):
    return x.value if isinstance(x, ADScalar) else x


def partials_of(x, n: int):
    if isinstance(x, ADScalar):
        return x.partials
    return np.zeros(np.shape(x) + (n,))


def shift(x: ADScalar, i: int) -> ADScalar:
    """The partial ∂x/∂q^i as a first-order ADScalar (needs a Hessian)."""
    if x.hessian is None:
        raise ValueError("shift needs a second-order ADScalar")
    return ADScalar(x.partials[..., i], x.hessian[..., i, :])


def gradient_as_ad(x: ADScalar) -> ADScalar:
    """All first partials as an ADScalar array (one order lower)."""
    if x.hessian is None:
        raise ValueError("gradient_as_ad needs a second-order ADScalar")
    return ADScalar(x.partials, x.hessian)


# ---------------------------------------------------------------------------
# elementary functions (accept floats, arrays or ADScalar)

def sin(x):
    if isinstance(x, ADScalar):
        s, c = np.sin(x.value), np.cos(x.value)
        return _unary(x, s, c, -s)
    return np.sin(x)


def cos(x):
    if isinstance(x, ADScalar):
        s, c = np.sin(x.value), np.cos(x.value)
        return _unary(x, c, -s, -c)
    return np.cos(x)


def tan(x):
    if isinstance(x, ADScalar):
        t = np.tan(x.value)
        sec2 = 1.0 + t * t
        return _unary(x, t, sec2, 2.0 * t * sec2)
    return np.tan(x)


def exp(x):
    if isinstance(x, ADScalar):
        e = np.exp(x.value)
        return _unary(x, e, e, e)
    return np.exp(x)


def log(x):
    if isinstance(x, ADScalar):
        v = np.asarray(x.value, dtype=float)
        return _unary(x, np.log(v), 1.0 / v, -1.0 / (v * v))
    return np.log(x)


def sqrt(x):
    if isinstance(x, ADScalar):
        r = np.sqrt(x.value)
        return _unary(x, r, 0.5 / r, -0.25 / (r * r * r))
    return np.sqrt(x)


def reciprocal(x):
    if isinstance(x, ADScalar):
        v = np.asarray(x.value, dtype=float)
        inv = 1.0 / v
        return _unary(x, inv if v.ndim else float(inv), -inv * inv, 2.0 * inv * inv * inv)
    return 1.0 / x


# ---------------------------------------------------------------------------
# array construction and linear algebra

def _meta(items):
    for it in items:
        if isinstance(it, ADScalar):
            return it.n, it.order
    return None


def _flatten(nested):
    if isinstance(nested, (list, tuple)):
        out = []
        for item in nested:
            out.extend(_flatten(item))
        return out
    return [nested]


def _shape_of(nested):
    if isinstance(nested, (list, tuple)):
        return (len(nested),) + _shape_of(nested[0])
    return ()


def stack(nested):
    """Build an array-valued ADScalar from a nested list of scalars.

    Plain numbers are treated as constants.  If nothing in the list is an
    ADScalar a float ndarray is returned.
    """
    flat = _flatten(nested)
    meta = _meta(flat)
    shape = _shape_of(nested)
    if meta is None:
        return np.array(flat, dtype=float).reshape(shape)
    n, order = meta
    vals = np.empty(len(flat))
    parts = np.zeros((len(flat), n))
    hess = np.zeros((len(flat), n, n)) if order >= 2 else None
    for k, it in enumerate(flat):
        if isinstance(it, ADScalar):
            vals[k] = it.value
            parts[k] = it.partials
            if hess is not None and it.hessian is not None:
                hess[k] = it.hessian
        else:
            vals[k] = it
    h = None if hess is None else hess.reshape(shape + (n, n))
    return ADScalar(vals.reshape(shape), parts.reshape(shape + (n,)), h)


def concatenate(parts):
    meta = _meta(parts)
    if meta is None:
        return np.concatenate([np.atleast_1d(p) for p in parts])
    n, order = meta
    ps = [p if isinstance(p, ADScalar) else constant(np.atleast_1d(p), n, order) for p in parts]
    ps = [ADScalar(np.atleast_1d(p.value), p.partials.reshape(np.shape(np.atleast_1d(p.value)) + (n,)),
                   None if p.hessian is None else p.hessian.reshape(np.shape(np.atleast_1d(p.value)) + (n, n)))
          for p in ps]
    h = None
    if order >= 2:
        h = np.concatenate([p.hessian for p in ps])
    return ADScalar(np.concatenate([p.value for p in ps]), np.concatenate([p.partials for p in ps]), h)


def _letters(nd, start):
    return "".join(chr(ord(start) + k) for k in range(nd))


def _matmul_sub(a_nd, b_nd):
    # einsum subscripts for a @ b on leading axes (1-d or 2-d)
    if a_nd == 2 and b_nd == 2:
        return "ij", "jk", "ik"
    if a_nd == 2 and b_nd == 1:
        return "ij", "j", "i"
    if a_nd == 1 and b_nd == 2:
        return "j", "jk", "k"
    if a_nd == 1 and b_nd == 1:
        return "j", "j", ""
    raise ValueError("matmul supports 1-d and 2-d operands")


def matmul(a, b):
    if not isinstance(a, ADScalar) and not isinstance(b, ADScalar):
        return np.asarray(a) @ np.asarray(b)
    av, bv = value_of(a), value_of(b)
    sa, sb, so = _matmul_sub(np.ndim(av), np.ndim(bv))
    val = np.einsum(f"{sa},{sb}->{so}", av, bv)
    parts = 0.0
    if isinstance(b, ADScalar):
        parts = parts + np.einsum(f"{sa},{sb}n->{so}n", av, b.partials)
    if isinstance(a, ADScalar):
        parts = parts + np.einsum(f"{sa}n,{sb}->{so}n", a.partials, bv)
    order2 = all(not isinstance(t, ADScalar) or t.hessian is not None for t in (a, b))
    h = None
    if order2:
        h = 0.0
        if isinstance(b, ADScalar):
            h = h + np.einsum(f"{sa},{sb}mn->{so}mn", av, b.hessian)
        if isinstance(a, ADScalar):
            h = h + np.einsum(f"{sa}mn,{sb}->{so}mn", a.hessian, bv)
        if isinstance(a, ADScalar) and isinstance(b, ADScalar):
            cross = np.einsum(f"{sa}m,{sb}n->{so}mn", a.partials, b.partials)
            h = h + cross + np.swapaxes(cross, -1, -2)
    return ADScalar(val if np.ndim(val) else float(val), parts, h)


def transpose(a):
    return a.T if isinstance(a, ADScalar) else np.asarray(a).T


def inv(m):
    """Matrix inverse with derivatives d(M⁻¹) = -M⁻¹ dM M⁻¹."""
    if not isinstance(m, ADScalar):
        return np.linalg.inv(m)
    mi = np.linalg.inv(m.value)
    dm = m.partials
    p = -np.einsum("ij,jkn,kl->iln", mi, dm, mi)
    h = None
    if m.hessian is not None:
        # ∂mn(M⁻¹) = M⁻¹ (∂m M M⁻¹ ∂n M + ∂n M M⁻¹ ∂m M - ∂mn M) M⁻¹
        t = np.einsum("ijm,jk,kln->ilmn", dm, mi, dm)
        inner = t + np.swapaxes(t, -1, -2) - m.hessian
        h = np.einsum("ij,jkmn,kl->ilmn", mi, inner, mi)
    return ADScalar(mi, p, h)


def solve(m, rhs):
    return matmul(inv(m), rhs)


def outer(a, b):
    """Outer product of two 1-d operands."""
    if not isinstance(a, ADScalar) and not isinstance(b, ADScalar):
        return np.outer(a, b)
    na = len(value_of(a))
    nb = len(value_of(b))
    return stack([[a[i] * b[j] for j in range(nb)] for i in range(na)])


def dot(a, b):
    return matmul(a, b)


def cross(a, b):
    """Cross product of two 3-vectors (lists, arrays or ADScalar arrays)."""
    return stack([a[1] * b[2] - a[2] * b[1],
                  a[2] * b[0] - a[0] * b[2],
                  a[0] * b[1] - a[1] * b[0]])


# ---------------------------------------------------------------------------
# convenience

def gradient(f, x):
    """Gradient of a scalar function at ``x`` via forward mode."""
    y = f(seed_array(x))
    return np.array(y.partials, dtype=float)


def jacobian(f, x):
    y = f(seed_array(x))
    return np.array(y.partials, dtype=float)


def hessian(f, x):
    y = f(seed_array(x, order=2))
    return np.array(y.hessian, dtype=float)


def einsum(subscripts: str, *operands):
    """First-order einsum; second derivatives of operands are dropped."""
    vals = [value_of(o) for o in operands]
    val = np.einsum(subscripts, *vals)
    if not any(isinstance(o, ADScalar) for o in operands):
        return val
    ins, out = subscripts.replace(" ", "").split("->")
    ins = ins.split(",")
    free = next(ch for ch in "zyxwvutsrqponZYXWVUTSRQPON" if ch not in subscripts)
    parts = 0.0
    for k, o in enumerate(operands):
        if not isinstance(o, ADScalar):
            continue
        sub = ",".join(s + free if i == k else s for i, s in enumerate(ins)) + "->" + out + free
        args = [o.partials if i == k else vals[i] for i in range(len(operands))]
        parts = parts + np.einsum(sub, *args)
    return ADScalar(val if np.ndim(val) else float(val), parts)


def first_order(x):
    """Drop second derivatives (no-op for plain values)."""
    if isinstance(x, ADScalar):
        return ADScalar(x.value, x.partials)
    return x


def compose(x, jac):
    """Chain rule for a first-order ADScalar in q with q = q(z), jac = ∂q/∂z."""
    if not isinstance(x, ADScalar):
        return x
    return ADScalar(x.value, np.asarray(x.partials) @ jac)


def place(shape, blocks, like=None):
    """Zero array of ``shape`` with blocks written in: blocks = [(index, value), ...].

    The result is an ADScalar shaped like ``like`` (or like the first AD block)
    when any block carries derivatives, else a plain ndarray.
    """
    meta = None
    for src in ([like] if like is not None else []) + [b for _, b in blocks]:
        if isinstance(src, ADScalar):
            meta = (src.n, src.order)
            break
    if meta is None:
        out = np.zeros(shape)
        for idx, b in blocks:
            out[idx] = b
        return out
    n, order = meta
    val = np.zeros(shape)
    par = np.zeros(tuple(shape) + (n,))
    hes = np.zeros(tuple(shape) + (n, n)) if order >= 2 else None
    for idx, b in blocks:
        if isinstance(b, ADScalar):
            val[idx] = b.value
            par[idx] = b.partials
            if hes is not None:
                hes[idx] = b.hessian
        else:
            val[idx] = b
    return ADScalar(val, par, hes)
