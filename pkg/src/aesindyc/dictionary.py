"""Polynomial candidate library over latent state and latent control.

Terms are state monomials of total degree 1..deg_state in graded
lexicographic order, followed by pure control monomials of degree
1..deg_control.  There is no constant term and no state-control cross term.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ConfigError, ShapeError
from .ndiff import Tensor, concat_last


def _graded_lex(n_vars: int, max_degree: int) -> list[tuple[int, ...]]:
    terms = []
    for degree in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), degree):
            exps = [0] * n_vars
            for v in combo:
                exps[v] += 1
            terms.append(tuple(exps))
    return terms


@dataclass(frozen=True)
class DictionarySpec:
    n_state: int
    n_control: int
    deg_state: int
    deg_control: int
    terms: tuple  # exponent tuples of length n_state + n_control

    @property
    def d(self) -> int:
        return len(self.terms)

    def __len__(self):
        return len(self.terms)

    @property
    def exponents(self) -> np.ndarray:
        return np.array(self.terms, dtype=np.int64).reshape(len(self.terms), self.n_state + self.n_control)

    def to_dict(self) -> dict:
        return {
            "n_state": self.n_state,
            "n_control": self.n_control,
            "deg_state": self.deg_state,
            "deg_control": self.deg_control,
            "terms": [list(t) for t in self.terms],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DictionarySpec":
        terms = tuple(tuple(int(e) for e in t) for t in data["terms"])
        width = data["n_state"] + data["n_control"]
        if any(len(t) != width for t in terms):
            raise ConfigError("dictionary term width does not match n_state + n_control")
        return cls(data["n_state"], data["n_control"], data["deg_state"], data["deg_control"], terms)


def expected_size(n_state: int, n_control: int, deg_state: int, deg_control: int) -> int:
    return sum(comb(n_state + k - 1, k) for k in range(1, deg_state + 1)) + sum(
        comb(n_control + k - 1, k) for k in range(1, deg_control + 1)
    )


def build_spec(n_state: int, n_control: int, deg_state: int = 3, deg_control: int = 1) -> DictionarySpec:
    if min(n_state, n_control) < 1 or min(deg_state, deg_control) < 1:
        raise ConfigError(
            f"dictionary needs positive dims and degrees, got ({n_state}, {n_control}, {deg_state}, {deg_control})"
        )
    state = [t + (0,) * n_control for t in _graded_lex(n_state, deg_state)]
    control = []
    for degree in range(1, deg_control + 1):
        for combo in itertools.combinations_with_replacement(range(n_control), degree):
            exps = [0] * n_control
            for v in combo:
                exps[v] += 1
            control.append((0,) * n_state + tuple(exps))
    return DictionarySpec(n_state, n_control, deg_state, deg_control, tuple(state + control))


def _monomials(z: np.ndarray, E: np.ndarray):
    """``z`` (B, n), ``E`` (d, n) -> per-factor powers (B, d, n) and products (B, d)."""
    factors = z[:, None, :] ** E[None, :, :]
    return factors, np.prod(factors, axis=-1)


def _theta_tensor(spec: DictionarySpec, z):
    E = spec.exponents
    zv = z.value
    factors, theta = _monomials(zv, E)

    def backward(g):
        # d theta_i / d z_k = E_ik z_k^(E_ik - 1) prod_{j != k} z_j^E_ij
        gz = np.empty_like(zv)
        for k in range(zv.shape[1]):
            ek = E[:, k]
            dfac = ek[None, :] * zv[:, k : k + 1] ** np.maximum(ek - 1, 0)[None, :]
            others = np.prod(np.delete(factors, k, axis=-1), axis=-1)
            gz[:, k] = np.sum(g * dfac * others, axis=1)
        return (gz,)

    return Tensor(theta, (z,), backward)


def evaluate(spec: DictionarySpec, z_x, z_u):
    """Evaluate every term in spec order.

    Accepts single vectors or ``(B, n)`` batches, as arrays or tape tensors.
    """
    xv = z_x.value if isinstance(z_x, Tensor) else np.asarray(z_x, dtype=np.float64)
    uv = z_u.value if isinstance(z_u, Tensor) else np.asarray(z_u, dtype=np.float64)
    if xv.shape[-1] != spec.n_state or uv.shape[-1] != spec.n_control:
        raise ShapeError(
            f"latent dims ({xv.shape[-1]}, {uv.shape[-1]}) do not match dictionary ({spec.n_state}, {spec.n_control})"
        )
    single = xv.ndim == 1
    if isinstance(z_x, Tensor) or isinstance(z_u, Tensor):
        if single:
            raise ShapeError("tape evaluation expects batched (B, n) inputs")
        return _theta_tensor(spec, concat_last(z_x, z_u))
    z = np.concatenate([np.atleast_2d(xv), np.atleast_2d(uv)], axis=-1)
    theta = _monomials(z, spec.exponents)[1]
    return theta[0] if single else theta


def _var_name(spec: DictionarySpec, k: int) -> str:
    if k < spec.n_state:
        return f"z_x{k + 1}"
    return f"z_u{k - spec.n_state + 1}"


def term_name(spec: DictionarySpec, i: int) -> str:
    """Readable monomial, e.g. ``"z_x1^2 z_x2"``."""
    if not 0 <= i < spec.d:
        raise IndexError(f"term index {i} out of range [0, {spec.d})")
    parts = []
    for k, e in enumerate(spec.terms[i]):
        if e == 1:
            parts.append(_var_name(spec, k))
        elif e > 1:
            parts.append(f"{_var_name(spec, k)}^{e}")
    return " ".join(parts)


def parse_term_name(spec: DictionarySpec, name: str) -> tuple:
    """Inverse of :func:`term_name`."""
    exps = [0] * (spec.n_state + spec.n_control)
    for part in name.split():
        var, _, power = part.partition("^")
        kind, idx = var[:3], int(var[3:]) - 1
        k = idx if kind == "z_x" else spec.n_state + idx
        exps[k] += int(power) if power else 1
    return tuple(exps)


def term_degree(spec: DictionarySpec, i: int) -> int:
    return sum(spec.terms[i])


def is_control_term(spec: DictionarySpec, i: int) -> bool:
    return sum(spec.terms[i][: spec.n_state]) == 0
