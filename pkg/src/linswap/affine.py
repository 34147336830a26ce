"""Affine maps ``x -> Mx + b`` and their flat coordinates.

A map of R^d is identified with a vector of length d(d+1): the columns of M
followed by b (column-major order of the d x (d+1) block ``[M | b]``).  Ellipsoid
states in transformation space depend on this order, so it must not change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


def flat_dim(d: int) -> int:
    return d * (d + 1)


def outer_flat(c, x) -> np.ndarray:
    """Flat vector of ``[c x^T | c]``: the gradient of ``phi -> <c, phi(x)>``."""
    c = np.asarray(c, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.outer(c, np.append(x, 1.0)).ravel(order="F")


@dataclass(frozen=True, eq=False)
class AffineMap:
    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).reshape(-1)
        if M.shape != (b.shape[0], b.shape[0]):
            raise DimensionMismatch(f"matrix {M.shape} does not match offset of length {b.shape[0]}")
        M.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @classmethod
    def identity(cls, d: int) -> "AffineMap":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def constant(cls, a) -> "AffineMap":
        a = np.asarray(a, dtype=float)
        return cls(np.zeros((a.shape[0], a.shape[0])), a)

    @classmethod
    def from_flat(cls, v, d: int) -> "AffineMap":
        v = np.asarray(v, dtype=float)
        if v.shape != (flat_dim(d),):
            raise DimensionMismatch(f"flat vector of length {v.shape} is not d(d+1) for d={d}")
        block = v.reshape((d, d + 1), order="F")
        return cls(block[:, :d], block[:, d])

    @staticmethod
    def dim_from_flat(n: int) -> int:
        d = int(round((-1 + np.sqrt(1 + 4 * n)) / 2))
        if d * (d + 1) != n:
            raise DimensionMismatch(f"{n} is not of the form d(d+1)")
        return d

    def flat(self) -> np.ndarray:
        return np.hstack([self.M, self.b[:, None]]).ravel(order="F")

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"point of dimension {x.shape[-1]} for a map of R^{self.dim}")
        return x @ self.M.T + self.b

    def frob_norm(self) -> float:
        return float(np.sqrt(np.sum(self.M ** 2) + np.sum(self.b ** 2)))

    def compose(self, other: "AffineMap") -> "AffineMap":
        """``self ∘ other``."""
        return AffineMap(self.M @ other.M, self.M @ other.b + self.b)

    def inverse(self) -> "AffineMap":
        Minv = np.linalg.inv(self.M)
        return AffineMap(Minv, -Minv @ self.b)

    def __add__(self, other: "AffineMap") -> "AffineMap":
        return AffineMap(self.M + other.M, self.b + other.b)

    def __sub__(self, other: "AffineMap") -> "AffineMap":
        return AffineMap(self.M - other.M, self.b - other.b)

    def __mul__(self, s: float) -> "AffineMap":
        return AffineMap(self.M * s, self.b * s)

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {"M": self.M.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "AffineMap":
        return cls(np.asarray(data["M"], dtype=float), np.asarray(data["b"], dtype=float))

    def __repr__(self) -> str:
        return f"AffineMap(M={self.M.tolist()}, b={self.b.tolist()})"
