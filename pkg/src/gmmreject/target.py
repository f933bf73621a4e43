"""Support domains, log-density targets and forward-mode gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class TargetError(ValueError):
    """The user log-density returned something it must not (NaN)."""


class GradientError(ArithmeticError):
    """A gradient came back with non-finite components."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``lower <= x <= upper``; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D with equal length")
        if np.isnan(lower).any() or np.isnan(upper).any():
            raise ValueError("domain bounds must not be NaN")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be < its upper bound")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, dims: int) -> "Domain":
        return cls(np.full(dims, -np.inf), np.full(dims, np.inf))

    @classmethod
    def box(cls, lower, upper, dims: Optional[int] = None) -> "Domain":
        if dims is not None:
            lower = np.broadcast_to(np.asarray(lower, dtype=float), (dims,))
            upper = np.broadcast_to(np.asarray(upper, dtype=float), (dims,))
        return cls(lower, upper)

    @property
    def dims(self) -> int:
        return self.lower.shape[0]

    def compact(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def center(self) -> np.ndarray:
        if not self.compact():
            raise ValueError("center() requires a compact domain")
        return (self.lower + self.upper) / 2

    def range(self) -> np.ndarray:
        if not self.compact():
            raise ValueError("range() requires a compact domain")
        return self.upper - self.lower

    def scale(self) -> np.ndarray:
        """Per-dimension range, with 1 standing in for unbounded dimensions."""
        width = self.upper - self.lower
        return np.where(np.isfinite(width), width, 1.0)

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lower) & (X <= self.upper), axis=-1)

    def clip_interior(self, X, margin: float = 1e-9) -> np.ndarray:
        """Clamp points to the domain, keeping a relative margin off each finite bound."""
        X = np.asarray(X, dtype=float)
        pad = margin * self.scale()
        return np.clip(X, self.lower + pad, self.upper - pad)

    def to_dict(self) -> dict:
        return {"lower": [_encode_float(v) for v in self.lower],
                "upper": [_encode_float(v) for v in self.upper]}

    @classmethod
    def from_dict(cls, obj: dict) -> "Domain":
        return cls(np.array([float(v) for v in obj["lower"]]),
                   np.array([float(v) for v in obj["upper"]]))


def _encode_float(v: float):
    # JSON has no infinity literal
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def domain_center(dm: Domain) -> np.ndarray:
    return dm.center()


def domain_range(dm: Domain) -> np.ndarray:
    return dm.range()


class Dual:
    """Dual number carrying a value and a gradient vector.

    Supports ``+ - * / **``, comparisons on the value, and the methods
    ``exp``, ``log``, ``log1p``, ``sqrt``, ``sin``, ``cos``, ``tanh`` and
    ``abs``. Because numpy dispatches ufuncs on object arrays to methods of
    the same name, ``np.exp(x[0])`` or ``np.sum(x ** 2)`` work on arrays of
    ``Dual``.
    """

    __slots__ = ("value", "partials")
    __array_priority__ = 100

    def __init__(self, value: float, partials):
        self.value = float(value)
        self.partials = np.asarray(partials, dtype=float)

    @classmethod
    def variables(cls, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        eye = np.eye(x.shape[0])
        out = np.empty(x.shape[0], dtype=object)
        for i, xi in enumerate(x):
            out[i] = cls(xi, eye[i])
        return out

    def _lift(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual(other, np.zeros_like(self.partials))

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.partials + other.partials)
        return Dual(self.value + other, self.partials)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.partials - other.partials)
        return Dual(self.value - other, self.partials)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.partials)

    def __neg__(self):
        return Dual(-self.value, -self.partials)

    def __pos__(self):
        return self

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value * other.value,
                        self.partials * other.value + self.value * other.partials)
        return Dual(self.value * other, self.partials * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            v = self.value / other.value
            return Dual(v, (self.partials - v * other.partials) / other.value)
        return Dual(self.value / other, self.partials / other)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, power):
        if isinstance(power, Dual):
            # a**b = exp(b log a)
            return (power * self.log()).exp()
        if power == 0:
            return Dual(1.0, np.zeros_like(self.partials))
        v = self.value ** power
        return Dual(v, power * self.value ** (power - 1) * self.partials)

    def __rpow__(self, base):
        return (self * math.log(base)).exp()

    def exp(self):
        v = math.exp(self.value)
        return Dual(v, v * self.partials)

    def log(self):
        if self.value == 0.0:
            return Dual(-math.inf, np.full_like(self.partials, np.nan))
        return Dual(math.log(self.value), self.partials / self.value)

    def log1p(self):
        return Dual(math.log1p(self.value), self.partials / (1.0 + self.value))

    def sqrt(self):
        v = math.sqrt(self.value)
        with np.errstate(divide="ignore", invalid="ignore"):
            return Dual(v, self.partials / (2.0 * v))

    def sin(self):
        return Dual(math.sin(self.value), math.cos(self.value) * self.partials)

    def cos(self):
        return Dual(math.cos(self.value), -math.sin(self.value) * self.partials)

    def tanh(self):
        v = math.tanh(self.value)
        return Dual(v, (1.0 - v * v) * self.partials)

    def __abs__(self):
        return self if self.value >= 0 else -self

    absolute = __abs__

    def __lt__(self, other):
        return self.value < _val(other)

    def __le__(self, other):
        return self.value <= _val(other)

    def __gt__(self, other):
        return self.value > _val(other)

    def __ge__(self, other):
        return self.value >= _val(other)

    def __float__(self):
        return self.value

    def __repr__(self):
        return f"Dual({self.value!r}, {self.partials!r})"


def _val(x):
    return x.value if isinstance(x, Dual) else x


@dataclass(frozen=True)
class LogTarget:
    """A log-density ``log f`` restricted to ``domain``.

    ``fn`` maps one point (1-D array of length ``d``) to a scalar, or, with
    ``vectorized=True``, an ``(n, d)`` array to ``(n,)``. ``-inf`` is a legal
    value; NaN is not. ``grad`` optionally supplies ``grad log f`` with the
    same calling convention; otherwise gradients come from :class:`Dual`
    evaluation of ``fn`` (which must then be written with Dual-compatible
    operations).
    """

    fn: Callable
    domain: Domain
    grad: Optional[Callable] = None
    vectorized: bool = False
    name: str = field(default="target", compare=False)

    @property
    def dims(self) -> int:
        return self.domain.dims

    @property
    def provides_gradient(self) -> bool:
        return self.grad is not None

    def evaluate(self, X) -> np.ndarray:
        """log f for each row of ``X``; ``-inf`` outside the domain."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dims:
            raise ValueError(f"expected points of dimension {self.dims}, got {X.shape[1]}")
        inside = self.domain.contains(X)
        out = np.full(X.shape[0], -np.inf)
        if inside.any():
            if self.vectorized:
                vals = np.asarray(self.fn(X[inside]), dtype=float).reshape(-1)
            else:
                vals = np.array([float(self.fn(x)) for x in X[inside]])
            out[inside] = vals
        if np.isnan(out).any():
            bad = X[np.isnan(out)][0]
            raise TargetError(f"log-density returned NaN at {bad.tolist()}")
        if np.any(out == np.inf):
            raise TargetError("log-density returned +inf")
        return out

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.grad is not None:
            if self.vectorized:
                g = np.asarray(self.grad(x[None, :]), dtype=float).reshape(-1)
            else:
                g = np.asarray(self.grad(x), dtype=float).reshape(-1)
        else:
            xd = Dual.variables(x)
            arg = xd[None, :] if self.vectorized else xd
            res = self.fn(arg)
            if isinstance(res, np.ndarray):
                res = res.reshape(-1)[0]
            g = res.partials if isinstance(res, Dual) else np.zeros(self.dims)
        if g.shape != (self.dims,) or not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient at {x.tolist()}")
        return g


def log_density(t: LogTarget, x) -> float:
    return float(t.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0])


def grad_log_density(t: LogTarget, x) -> np.ndarray:
    return t.gradient(x)
