"""Reading off the learned latent dynamics from Xi."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .dictionary import term_name
from .errors import ConfigError

DEFAULT_THRESHOLD = 0.15


def _check_threshold(threshold: float) -> None:
    if not threshold >= 0:
        raise ConfigError(f"threshold must be >= 0, got {threshold}")


def active_mask(Xi, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Entries strictly above ``threshold`` in magnitude."""
    _check_threshold(threshold)
    return np.abs(np.asarray(Xi, dtype=np.float64)) > threshold


def count_active_terms(p, threshold: float = DEFAULT_THRESHOLD) -> int:
    return int(active_mask(p.Xi, threshold).sum())


def extract_equations(p, threshold: float = DEFAULT_THRESHOLD) -> list[str]:
    """One line per latent state, e.g. ``z_x,1(t+1) = +0.912·z_x1 -0.203·z_u2``.

    Terms keep dictionary order; coefficients print with three decimals.
    """
    Xi = np.asarray(p.Xi, dtype=np.float64)
    mask = active_mask(Xi, threshold)
    lines = []
    for i in range(Xi.shape[1]):
        terms = [f"{Xi[j, i]:+.3f}·{term_name(p.spec, j)}" for j in range(Xi.shape[0]) if mask[j, i]]
        lines.append(f"z_x,{i + 1}(t+1) = " + (" ".join(terms) if terms else "0"))
    return lines


def xi_export(p, path) -> Path:
    """Write Xi transposed: header of term names, one row per latent state.

    Values use ``repr`` so parsing them back gives the same doubles.
    """
    path = Path(path)
    Xi = np.asarray(p.Xi, dtype=np.float64)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([term_name(p.spec, j) for j in range(Xi.shape[0])])
        for i in range(Xi.shape[1]):
            w.writerow([repr(float(v)) for v in Xi[:, i]])
    return path


def xi_import(path):
    """Inverse of :func:`xi_export`; returns ``(names, Xi)`` with Xi shaped ``d x n_latent``."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    return names, data.T.reshape(len(names), len(rows) - 1)
