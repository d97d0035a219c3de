"""Input distributions q(x) used for data generation and Monte-Carlo quadrature."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError


@dataclass(frozen=True)
class InputDistribution:
    """Law of the inputs X_t.

    ``kind="standard_normal"`` draws i.i.d. N(0, 1) coordinates and has a
    strictly positive density on all of R^d. ``kind="uniform"`` draws each
    coordinate from U(lo, hi); it is a convenience extension whose density
    vanishes outside the box, so the positivity assumption on q does not
    hold for it. Both have finite sixth moments.
    """

    kind: str = "standard_normal"
    d: int = 1
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("standard_normal", "uniform"):
            raise InvalidInputError(f"unknown input distribution {self.kind!r}")
        if self.d < 1:
            raise InvalidInputError("input dimension must be >= 1")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise InvalidInputError("uniform input requires lo < hi")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "standard_normal":
            return rng.standard_normal((n, self.d))
        return rng.uniform(self.lo, self.hi, size=(n, self.d))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "d": self.d}
        if self.kind == "uniform":
            out.update(lo=self.lo, hi=self.hi)
        return out

    @classmethod
    def from_dict(cls, doc: dict, d: int | None = None) -> "InputDistribution":
        doc = dict(doc)
        unknown = set(doc) - {"kind", "d", "lo", "hi"}
        if unknown:
            raise InvalidInputError(f"unknown input-distribution keys {sorted(unknown)}")
        if d is not None:
            doc.setdefault("d", d)
        return cls(**doc)
