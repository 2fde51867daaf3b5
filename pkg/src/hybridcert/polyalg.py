"""Sparse multivariate polynomials and matrix polynomials.

A :class:`Polynomial` maps exponent tuples to coefficients.  Coefficients are
normally floats, but any object supporting ``+``, ``-``, multiplication by a
float and truthiness (``bool(c)`` is False for a zero coefficient) works; the
SOS machinery uses this to carry polynomials whose coefficients are affine
expressions in decision variables (see :class:`LinExpr`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

Monomial = tuple[int, ...]


def monomial_degree(m: Monomial) -> int:
    return sum(m)


def grlex_key(m: Monomial) -> tuple:
    """Graded lexicographic sort key (total degree first, then lex)."""
    return (sum(m), tuple(-e for e in m))


def monomials_up_to(nvars: int, degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``degree`` in grlex order."""
    out: list[Monomial] = []
    for d in range(degree + 1):
        out.extend(monomials_of_degree(nvars, d))
    return sorted(out, key=grlex_key)


def monomials_of_degree(nvars: int, degree: int) -> list[Monomial]:
    if nvars == 0:
        return [()] if degree == 0 else []
    out = []
    for combo in itertools.combinations_with_replacement(range(nvars), degree):
        e = [0] * nvars
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return sorted(out, key=grlex_key)


def _add_monomials(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class LinExpr:
    """Affine expression ``const + sum_k coef_k * v_k`` over integer variable ids.

    Immutable by convention.  Used as a polynomial coefficient when the
    polynomial contains unknowns.
    """

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Mapping[int, float] | None = None, const: float = 0.0):
        self.coeffs = {k: v for k, v in (coeffs or {}).items() if v != 0}
        self.const = float(const)

    @classmethod
    def var(cls, k: int, scale: float = 1.0) -> "LinExpr":
        return cls({k: scale})

    def __bool__(self) -> bool:
        return bool(self.coeffs) or self.const != 0

    def __add__(self, other):
        if isinstance(other, LinExpr):
            c = dict(self.coeffs)
            for k, v in other.coeffs.items():
                c[k] = c.get(k, 0.0) + v
            return LinExpr(c, self.const + other.const)
        return LinExpr(self.coeffs, self.const + float(other))

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({k: -v for k, v in self.coeffs.items()}, -self.const)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, LinExpr):
            if other.coeffs and self.coeffs:
                raise TypeError("product of two non-constant LinExpr is not affine")
            if not other.coeffs:
                other = other.const
            else:
                return other * self.const
        s = float(other)
        if s == 0:
            return LinExpr()
        return LinExpr({k: v * s for k, v in self.coeffs.items()}, self.const * s)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def __eq__(self, other):
        if isinstance(other, LinExpr):
            return self.coeffs == other.coeffs and self.const == other.const
        if isinstance(other, (int, float)):
            return not self.coeffs and self.const == other
        return NotImplemented

    def __hash__(self):
        return hash((frozenset(self.coeffs.items()), self.const))

    def value(self, x: Sequence[float] | np.ndarray) -> float:
        return self.const + sum(v * x[k] for k, v in self.coeffs.items())

    def __repr__(self):
        parts = [f"{v:+g}*v{k}" for k, v in sorted(self.coeffs.items())]
        if self.const or not parts:
            parts.insert(0, f"{self.const:g}")
        return "LinExpr(" + " ".join(parts) + ")"


def _coef_value(c: Any, values: np.ndarray | None) -> float:
    if isinstance(c, LinExpr):
        if values is None:
            raise TypeError("polynomial has symbolic coefficients; pass variable values")
        return c.value(values)
    return float(c)


class Polynomial:
    """Immutable sparse polynomial in ``nvars`` variables.

    Zero coefficients are never stored, so two polynomials are equal iff their
    term maps are equal.
    """

    __slots__ = ("_terms", "nvars")

    def __init__(self, terms: Mapping[Monomial, Any] | None, nvars: int):
        self.nvars = int(nvars)
        clean = {}
        for m, c in (terms or {}).items():
            m = tuple(int(e) for e in m)
            if len(m) != self.nvars:
                raise ValueError(f"monomial {m} has length {len(m)}, expected {self.nvars}")
            if any(e < 0 for e in m):
                raise ValueError(f"negative exponent in {m}")
            if c:
                clean[m] = c
        self._terms = clean

    # construction helpers
    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls({}, nvars)

    @classmethod
    def constant(cls, c, nvars: int) -> "Polynomial":
        return cls({(0,) * nvars: c}, nvars)

    @classmethod
    def variable(cls, i: int, nvars: int) -> "Polynomial":
        if not 0 <= i < nvars:
            raise ValueError(f"variable index {i} out of range for nvars={nvars}")
        e = [0] * nvars
        e[i] = 1
        return cls({tuple(e): 1.0}, nvars)

    @classmethod
    def from_coeffs(cls, coeffs: Mapping[Monomial, Any], nvars: int) -> "Polynomial":
        return cls(coeffs, nvars)

    # basic properties
    @property
    def terms(self) -> dict[Monomial, Any]:
        return dict(self._terms)

    def items(self) -> list[tuple[Monomial, Any]]:
        """Terms in grlex order."""
        return sorted(self._terms.items(), key=lambda t: grlex_key(t[0]))

    def coeff(self, m: Monomial):
        return self._terms.get(tuple(m), 0.0)

    def __iter__(self) -> Iterator[Monomial]:
        return iter(sorted(self._terms, key=grlex_key))

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        return max((sum(m) for m in self._terms), default=-1)

    def degree_in(self, var: int) -> int:
        return max((m[var] for m in self._terms), default=-1)

    def is_symbolic(self) -> bool:
        return any(isinstance(c, LinExpr) and c.coeffs for c in self._terms.values())

    # arithmetic
    def _check(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise ValueError(f"nvars mismatch: {self.nvars} vs {other.nvars}")

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        return Polynomial.constant(other, self.nvars)

    def __add__(self, other) -> "Polynomial":
        other = self._lift(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out[m] + c if m in out else c
        return Polynomial(out, self.nvars)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self._terms.items()}, self.nvars)

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._lift(other) - self

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            if isinstance(other, LinExpr) or not other:
                other = Polynomial.constant(other, self.nvars)
            else:
                s = float(other)
                return Polynomial({m: c * s for m, c in self._terms.items()}, self.nvars)
        self._check(other)
        out: dict[Monomial, Any] = {}
        for ma, ca in self._terms.items():
            for mb, cb in other._terms.items():
                m = _add_monomials(ma, mb)
                p = ca * cb
                out[m] = out[m] + p if m in out else p
        return Polynomial(out, self.nvars)

    def __rmul__(self, other) -> "Polynomial":
        return self * other

    def __truediv__(self, s: float) -> "Polynomial":
        return self * (1.0 / float(s))

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(1.0, self.nvars)
        base = self
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, Polynomial):
            return self.nvars == other.nvars and self._terms == other._terms
        if isinstance(other, (int, float)):
            return self == Polynomial.constant(other, self.nvars)
        return NotImplemented

    def __hash__(self):
        return hash((self.nvars, frozenset((m, c) for m, c in self._terms.items())))

    # calculus
    def differentiate(self, var: int) -> "Polynomial":
        if not 0 <= var < self.nvars:
            raise ValueError(f"variable index {var} out of range")
        out = {}
        for m, c in self._terms.items():
            k = m[var]
            if k:
                mm = list(m)
                mm[var] -= 1
                out[tuple(mm)] = c * float(k)
        return Polynomial(out, self.nvars)

    def gradient(self) -> list["Polynomial"]:
        return [self.differentiate(i) for i in range(self.nvars)]

    # evaluation
    def exponent_array(self) -> tuple[np.ndarray, list]:
        ms = list(self)
        E = np.array(ms, dtype=float).reshape(len(ms), self.nvars)
        return E, [self._terms[m] for m in ms]

    def evaluate(self, x, values: np.ndarray | None = None):
        """Evaluate at a point ``(nvars,)`` or a batch ``(N, nvars)``.

        ``values`` supplies decision-variable values for symbolic coefficients.
        """
        x = np.asarray(x, dtype=float)
        batch = x.ndim == 2
        X = x if batch else x[None, :]
        if X.shape[1] != self.nvars:
            raise ValueError(f"point has dimension {X.shape[1]}, expected {self.nvars}")
        E, cs = self.exponent_array()
        c = np.array([_coef_value(ci, values) for ci in cs], dtype=float)
        if len(c) == 0:
            out = np.zeros(X.shape[0])
        else:
            out = np.prod(X[:, None, :] ** E[None, :, :], axis=2) @ c
        return out if batch else float(out[0])

    __call__ = evaluate

    def substitute_values(self, values: np.ndarray) -> "Polynomial":
        """Replace symbolic coefficients by their numeric value."""
        return Polynomial({m: _coef_value(c, values) for m, c in self._terms.items()}, self.nvars)

    # structure
    def embed(self, nvars: int, index_map: Sequence[int] | None = None) -> "Polynomial":
        """Widen to ``nvars`` variables; variable i goes to ``index_map[i]``."""
        if index_map is None:
            index_map = list(range(self.nvars))
        if len(index_map) != self.nvars or nvars < self.nvars:
            raise ValueError("bad embedding")
        out = {}
        for m, c in self._terms.items():
            e = [0] * nvars
            for i, k in enumerate(m):
                e[index_map[i]] += k
            out[tuple(e)] = c
        return Polynomial(out, nvars)

    def compose(self, subs: Sequence["Polynomial"]) -> "Polynomial":
        """Substitute ``x_i -> subs[i]`` (all subs share the same nvars)."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitution per variable")
        nv = subs[0].nvars
        result = Polynomial.zero(nv)
        powers: dict[tuple[int, int], Polynomial] = {}
        for m, c in self._terms.items():
            term = Polynomial.constant(c, nv)
            for i, k in enumerate(m):
                if k:
                    if (i, k) not in powers:
                        powers[(i, k)] = subs[i] ** k
                    term = term * powers[(i, k)]
            result = result + term
        return result

    def chop(self, tol: float) -> "Polynomial":
        return Polynomial({m: c for m, c in self._terms.items() if abs(c) > tol}, self.nvars)

    def max_abs_coeff(self) -> float:
        return max((abs(float(c)) for c in self._terms.values()), default=0.0)

    # serialization
    def to_records(self) -> list[dict]:
        return [{"exponents": list(m), "coeff": float(c)} for m, c in self.items()]

    @classmethod
    def from_records(cls, records: Iterable[Mapping], nvars: int) -> "Polynomial":
        out: dict[Monomial, float] = {}
        for r in records:
            m = tuple(int(e) for e in r["exponents"])
            out[m] = out.get(m, 0.0) + float(r["coeff"])
        return cls(out, nvars)

    def __repr__(self):
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.items():
            mono = "*".join(f"x{i}^{e}" if e > 1 else f"x{i}" for i, e in enumerate(m) if e)
            parts.append(f"{c!r}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    return p + q


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    return p * q


def differentiate(p: Polynomial, var: int) -> Polynomial:
    return p.differentiate(var)


def evaluate(p: Polynomial, x) -> float:
    return p.evaluate(x)


def taylor_expand_sin(order: int, nvars: int = 1, var: int = 0) -> Polynomial:
    """Maclaurin polynomial of ``sin`` up to ``order`` in variable ``var``."""
    if order < 1:
        raise ValueError("order must be >= 1")
    x = Polynomial.variable(var, nvars)
    out = Polynomial.zero(nvars)
    for k in range(1, order + 1, 2):
        sign = -1.0 if (k // 2) % 2 else 1.0
        out = out + (x ** k) * (sign / math.factorial(k))
    return out


def taylor_expand_cos(order: int, nvars: int = 1, var: int = 0) -> Polynomial:
    if order < 0:
        raise ValueError("order must be >= 0")
    x = Polynomial.variable(var, nvars)
    out = Polynomial.zero(nvars)
    for k in range(0, order + 1, 2):
        sign = -1.0 if (k // 2) % 2 else 1.0
        out = out + (x ** k) * (sign / math.factorial(k))
    return out


@dataclass(frozen=True, eq=False)
class PolyMatrix:
    """Row-major grid of polynomials sharing one ``nvars``."""

    entries: tuple[tuple[Polynomial, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.entries)
        object.__setattr__(self, "entries", rows)
        if not rows or not rows[0]:
            raise ValueError("empty PolyMatrix")
        ncols = len(rows[0])
        nv = rows[0][0].nvars
        for r in rows:
            if len(r) != ncols:
                raise ValueError("ragged PolyMatrix")
            for p in r:
                if p.nvars != nv:
                    raise ValueError("entries with different nvars")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[Polynomial]]) -> "PolyMatrix":
        return cls(tuple(tuple(r) for r in rows))

    @classmethod
    def identity(cls, n: int, nvars: int) -> "PolyMatrix":
        return cls.from_rows(
            [[Polynomial.constant(1.0 if i == j else 0.0, nvars) for j in range(n)] for i in range(n)]
        )

    @classmethod
    def zeros(cls, rows: int, cols: int, nvars: int) -> "PolyMatrix":
        return cls.from_rows([[Polynomial.zero(nvars)] * cols for _ in range(rows)])

    @classmethod
    def from_numeric(cls, A, nvars: int) -> "PolyMatrix":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls.from_rows([[Polynomial.constant(float(v), nvars) for v in row] for row in A])

    @classmethod
    def column(cls, polys: Sequence[Polynomial]) -> "PolyMatrix":
        return cls.from_rows([[p] for p in polys])

    @classmethod
    def block(cls, blocks: Sequence[Sequence["PolyMatrix"]]) -> "PolyMatrix":
        rows = []
        for brow in blocks:
            for i in range(brow[0].rows):
                rows.append([p for b in brow for p in b.entries[i]])
        return cls.from_rows(rows)

    @property
    def rows(self) -> int:
        return len(self.entries)

    @property
    def cols(self) -> int:
        return len(self.entries[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def nvars(self) -> int:
        return self.entries[0][0].nvars

    def __getitem__(self, ij: tuple[int, int]) -> Polynomial:
        i, j = ij
        return self.entries[i][j]

    def map(self, fn) -> "PolyMatrix":
        return PolyMatrix.from_rows([[fn(p) for p in r] for r in self.entries])

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix.from_rows([[self.entries[i][j] for i in range(self.rows)] for j in range(self.cols)])

    T = property(transpose)

    def is_symmetric(self) -> bool:
        if self.rows != self.cols:
            return False
        return all(
            self.entries[i][j] == self.entries[j][i]
            for i in range(self.rows)
            for j in range(i + 1, self.cols)
        )

    def _check_same(self, other: "PolyMatrix"):
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} vs {other.shape}")

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        self._check_same(other)
        return PolyMatrix.from_rows(
            [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(self.entries, other.entries)]
        )

    def __neg__(self) -> "PolyMatrix":
        return self.map(lambda p: -p)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-other)

    def __mul__(self, s) -> "PolyMatrix":
        """Entry-wise scaling by a float, LinExpr or scalar Polynomial."""
        return self.map(lambda p: p * s)

    __rmul__ = __mul__

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        if self.cols != other.rows:
            raise ValueError(f"cannot multiply {self.shape} by {other.shape}")
        nv = self.nvars
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = Polynomial.zero(nv)
                for k in range(self.cols):
                    a, b = self.entries[i][k], other.entries[k][j]
                    if not a.is_zero() and not b.is_zero():
                        acc = acc + a * b
                row.append(acc)
            out.append(row)
        return PolyMatrix.from_rows(out)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        return self.shape == other.shape and all(
            a == b for ra, rb in zip(self.entries, other.entries) for a, b in zip(ra, rb)
        )

    def differentiate(self, var: int) -> "PolyMatrix":
        return self.map(lambda p: p.differentiate(var))

    def degree(self) -> int:
        return max(p.degree() for r in self.entries for p in r)

    def evaluate(self, x, values: np.ndarray | None = None) -> np.ndarray:
        """Numeric value at a point ``(nvars,)`` -> ``(rows, cols)``, or at a
        batch ``(N, nvars)`` -> ``(N, rows, cols)``."""
        x = np.asarray(x, dtype=float)
        vals = [[p.evaluate(x, values) for p in r] for r in self.entries]
        if x.ndim == 2:
            return np.stack([np.stack(r, axis=-1) for r in vals], axis=-2)
        return np.array(vals, dtype=float)

    def substitute_values(self, values: np.ndarray) -> "PolyMatrix":
        return self.map(lambda p: p.substitute_values(values))

    def compose(self, subs: Sequence[Polynomial]) -> "PolyMatrix":
        return self.map(lambda p: p.compose(subs))

    def symmetrize(self) -> "PolyMatrix":
        """Return (M + M')/2, built so the result is exactly symmetric."""
        n = self.rows
        rows = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                p = self.entries[i][i] if i == j else (self.entries[i][j] + self.entries[j][i]) * 0.5
                rows[i][j] = rows[j][i] = p
        return PolyMatrix.from_rows(rows)

    def __repr__(self):
        return "PolyMatrix(" + "; ".join(", ".join(repr(p) for p in r) for r in self.entries) + ")"


def evaluate_matrix(W: PolyMatrix, x) -> np.ndarray:
    return W.evaluate(x)


def lie_derivative(W: PolyMatrix, f: Sequence[Polynomial]) -> PolyMatrix:
    """Entry-wise derivative of ``W`` along the vector field ``f``."""
    if len(f) != W.nvars:
        raise ValueError(f"field has {len(f)} components, W has {W.nvars} variables")
    nv = W.nvars

    def along(p: Polynomial) -> Polynomial:
        acc = Polynomial.zero(nv)
        for i, fi in enumerate(f):
            if p.degree_in(i) > 0 and not fi.is_zero():
                acc = acc + p.differentiate(i) * fi
        return acc

    return W.map(along)


def jacobian(polys: Sequence[Polynomial]) -> PolyMatrix:
    return PolyMatrix.from_rows([[p.differentiate(j) for j in range(p.nvars)] for p in polys])
