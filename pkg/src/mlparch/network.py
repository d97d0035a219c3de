"""One-hidden-layer perceptron: parameters, transfer functions, derivatives.

The network with ``k`` hidden units and ``d`` inputs is

    F(x) = beta + sum_i a_i * phi(b_i + w_i . x)

and its parameters flatten to a vector of length ``2k + 1 + k*d`` in the
fixed order ``(beta, a_1..a_k, b_1..b_k, w_11..w_1d, ..., w_k1..w_kd)``.
Every other module (optimizer, reparameterization, file IO) relies on that
ordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import InputShapeError, InvalidInputError

__all__ = [
    "HiddenUnit",
    "MlpParams",
    "TransferFunction",
    "Logistic",
    "Tanh",
    "get_transfer",
    "n_params",
    "forward",
    "grad_params",
    "hessian_params",
    "load_params",
    "save_params",
    "params_to_dict",
    "params_from_dict",
]


# ---------------------------------------------------------------------------
# Transfer functions
# ---------------------------------------------------------------------------


class TransferFunction:
    """Bounded activation with closed-form derivatives up to third order.

    Subclasses implement ``value``, ``d1``, ``d2`` and ``d3``; all accept
    scalars or arrays and are vectorized.
    """

    name: str = ""
    #: sup over the reals of |phi|
    sup: float = 1.0

    def value(self, z):
        raise NotImplementedError

    def d1(self, z):
        raise NotImplementedError

    def d2(self, z):
        raise NotImplementedError

    def d3(self, z):
        raise NotImplementedError

    def __call__(self, z):
        return self.value(z)

    def __repr__(self):
        return f"{type(self).__name__}()"

    def __eq__(self, other):
        return type(self) is type(other)

    def __hash__(self):
        return hash(type(self))


class Logistic(TransferFunction):
    """sigma(z) = 1 / (1 + exp(-z)), with values in (0, 1)."""

    name = "logistic"
    sup = 1.0

    def value(self, z):
        return expit(z)

    def d1(self, z):
        # expit(z) * expit(-z) keeps full relative precision in both tails
        return expit(z) * expit(np.negative(z))

    def d2(self, z):
        s = expit(z)
        return self.d1(z) * (1.0 - 2.0 * s)

    def d3(self, z):
        s = expit(z)
        return self.d1(z) * (1.0 - 6.0 * s * (1.0 - s))


class Tanh(TransferFunction):
    """Hyperbolic tangent, an odd function with values in (-1, 1)."""

    name = "tanh"
    sup = 1.0

    def value(self, z):
        return np.tanh(z)

    def d1(self, z):
        # sech^2 via exp(-2|z|); avoids cancellation in 1 - tanh^2
        e = np.exp(-2.0 * np.abs(z))
        return 4.0 * e / (1.0 + e) ** 2

    def d2(self, z):
        return -2.0 * np.tanh(z) * self.d1(z)

    def d3(self, z):
        t = np.tanh(z)
        return self.d1(z) * (6.0 * t * t - 2.0)


_TRANSFERS = {"logistic": Logistic, "tanh": Tanh}


def get_transfer(phi: str | TransferFunction = "tanh") -> TransferFunction:
    """Resolve a transfer function from its name (``"tanh"`` or ``"logistic"``)."""
    if isinstance(phi, TransferFunction):
        return phi
    try:
        return _TRANSFERS[str(phi).lower()]()
    except KeyError:
        raise InvalidInputError(
            f"unknown transfer function {phi!r}; expected one of {sorted(_TRANSFERS)}"
        ) from None


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def n_params(k: int, d: int) -> int:
    """Dimension ``2k + 1 + k*d`` of the parameter vector."""
    return 2 * k + 1 + k * d


def _readonly(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HiddenUnit:
    """One term ``a * phi(b + w . x)`` of the network."""

    a: float
    b: float
    w: np.ndarray

    def __post_init__(self):
        w = _readonly(np.atleast_1d(self.w))
        if w.ndim != 1:
            raise InputShapeError("hidden unit weight must be a vector")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "w", w)

    def __eq__(self, other):
        if not isinstance(other, HiddenUnit):
            return NotImplemented
        return (
            self.a == other.a
            and self.b == other.b
            and np.array_equal(self.w, other.w)
        )


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Immutable parameter set of a k-unit network.

    Stored as arrays: ``beta`` (float), ``a`` and ``b`` of shape (k,), and
    ``W`` of shape (k, d) whose row ``i`` is ``w_i``.

    Examples
    --------
    >>> theta = MlpParams(beta=1.0, a=[2.0], b=[0.0], W=[[1.0]])
    >>> theta.to_flat().tolist()
    [1.0, 2.0, 0.0, 1.0]
    """

    beta: float
    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        a = _readonly(np.atleast_1d(self.a))
        b = _readonly(np.atleast_1d(self.b))
        W = _readonly(self.W)
        if W.ndim == 1:
            W = _readonly(W.reshape(len(a), -1))
        if a.ndim != 1 or a.shape != b.shape or W.ndim != 2 or W.shape[0] != a.shape[0]:
            raise InputShapeError(
                f"inconsistent shapes a={a.shape}, b={b.shape}, W={W.shape}"
            )
        if a.shape[0] < 1 or W.shape[1] < 1:
            raise InvalidInputError("a network needs k >= 1 units and d >= 1 inputs")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "W", W)

    @property
    def k(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def dim(self) -> int:
        return n_params(self.k, self.d)

    @property
    def units(self) -> tuple[HiddenUnit, ...]:
        return tuple(HiddenUnit(a, b, w) for a, b, w in zip(self.a, self.b, self.W))

    @classmethod
    def from_units(cls, beta: float, units: Sequence[HiddenUnit]) -> "MlpParams":
        if len(units) == 0:
            raise InvalidInputError("a network needs at least one hidden unit")
        dims = {u.w.shape[0] for u in units}
        if len(dims) != 1:
            raise InputShapeError(f"hidden units have differing input dimensions {dims}")
        return cls(
            beta=beta,
            a=[u.a for u in units],
            b=[u.b for u in units],
            W=np.vstack([u.w for u in units]),
        )

    def to_flat(self) -> np.ndarray:
        return np.concatenate(([self.beta], self.a, self.b, self.W.ravel()))

    @classmethod
    def from_flat(cls, flat, k: int, d: int) -> "MlpParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (n_params(k, d),):
            raise InputShapeError(
                f"flat vector has shape {flat.shape}, expected ({n_params(k, d)},) for k={k}, d={d}"
            )
        return cls(
            beta=flat[0],
            a=flat[1 : 1 + k],
            b=flat[1 + k : 1 + 2 * k],
            W=flat[1 + 2 * k :].reshape(k, d),
        )

    def permute(self, perm: Sequence[int]) -> "MlpParams":
        """Reorder hidden units; unit ``i`` of the result is unit ``perm[i]``."""
        perm = np.asarray(perm, dtype=int)
        return MlpParams(self.beta, self.a[perm], self.b[perm], self.W[perm])

    def replace(self, **changes) -> "MlpParams":
        fields = {"beta": self.beta, "a": self.a, "b": self.b, "W": self.W}
        fields.update(changes)
        return MlpParams(**fields)

    def __eq__(self, other):
        if not isinstance(other, MlpParams):
            return NotImplemented
        return (
            self.a.shape == other.a.shape
            and self.W.shape == other.W.shape
            and np.array_equal(self.to_flat(), other.to_flat())
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _as_inputs(theta: MlpParams, x):
    """Return (X of shape (n, d), was_single)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1)
    elif x.ndim != 2:
        raise InputShapeError(f"inputs must be a vector or a 2-d array, got ndim={x.ndim}")
    if x.shape[1] != theta.d:
        raise InputShapeError(f"input has dimension {x.shape[1]}, network expects d={theta.d}")
    return x, single


def forward(theta: MlpParams, phi: TransferFunction, x):
    """Evaluate ``beta + sum_i a_i phi(b_i + w_i . x)``.

    ``x`` is a single input of length d (returns a float) or an (n, d)
    array (returns shape (n,)).
    """
    X, single = _as_inputs(theta, x)
    out = theta.beta + phi.value(X @ theta.W.T + theta.b) @ theta.a
    return float(out[0]) if single else out


def grad_params(theta: MlpParams, phi: TransferFunction, x):
    """Gradient of ``F_theta(x)`` with respect to the flat parameter vector.

    Returns shape (dim,) for a single input, (n, dim) for a batch.
    """
    X, single = _as_inputs(theta, x)
    n, k, d = X.shape[0], theta.k, theta.d
    Z = X @ theta.W.T + theta.b
    aD1 = phi.d1(Z) * theta.a
    J = np.empty((n, n_params(k, d)))
    J[:, 0] = 1.0
    J[:, 1 : 1 + k] = phi.value(Z)
    J[:, 1 + k : 1 + 2 * k] = aD1
    J[:, 1 + 2 * k :] = (aD1[:, :, None] * X[:, None, :]).reshape(n, k * d)
    return J[0] if single else J


def hessian_params(theta: MlpParams, phi: TransferFunction, x):
    """Second derivatives of ``F_theta(x)`` in the flat parameter vector.

    Returns a symmetric (dim, dim) matrix for a single input or an
    (n, dim, dim) stack for a batch. Entries involving beta, and the
    (a_i, a_j) block, are identically zero.
    """
    X, single = _as_inputs(theta, x)
    n, k, d = X.shape[0], theta.k, theta.d
    p = n_params(k, d)
    Z = X @ theta.W.T + theta.b
    D1 = phi.d1(Z)
    aD2 = phi.d2(Z) * theta.a
    H = np.zeros((n, p, p))
    for i in range(k):
        ia, ib = 1 + i, 1 + k + i
        iw = slice(1 + 2 * k + i * d, 1 + 2 * k + (i + 1) * d)
        H[:, ia, ib] = H[:, ib, ia] = D1[:, i]
        H[:, ia, iw] = D1[:, i, None] * X
        H[:, iw, ia] = H[:, ia, iw]
        H[:, ib, ib] = aD2[:, i]
        H[:, ib, iw] = aD2[:, i, None] * X
        H[:, iw, ib] = H[:, ib, iw]
        H[:, iw, iw] = aD2[:, i, None, None] * (X[:, :, None] * X[:, None, :])
    return H[0] if single else H


# ---------------------------------------------------------------------------
# Parameter files
# ---------------------------------------------------------------------------


def params_to_dict(theta: MlpParams, phi: TransferFunction | str, **extra) -> dict:
    phi = get_transfer(phi)
    doc = {
        "k": theta.k,
        "d": theta.d,
        "transfer": phi.name,
        "flat_theta": [float(v) for v in theta.to_flat()],
    }
    doc.update(extra)
    return doc


def params_from_dict(doc: dict) -> tuple[MlpParams, TransferFunction]:
    try:
        k, d = int(doc["k"]), int(doc["d"])
        flat = doc["flat_theta"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed parameter document: {exc}") from None
    phi = get_transfer(doc.get("transfer", "tanh"))
    return MlpParams.from_flat(flat, k, d), phi


def save_params(path, theta: MlpParams, phi: TransferFunction | str, **extra) -> None:
    Path(path).write_text(json.dumps(params_to_dict(theta, phi, **extra), indent=2) + "\n")


def load_params(path) -> tuple[MlpParams, TransferFunction]:
    """Read a parameter file with fields ``{k, d, transfer, flat_theta}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: not a JSON document ({exc})") from None
    return params_from_dict(doc)
