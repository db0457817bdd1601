"""Empirical transforms and numerical Laplace inversion."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

EULER_M = 25


@dataclass(frozen=True)
class LstCurve:
    """Values of a Laplace-Stieltjes transform on a grid of arguments.

    ``se`` is zero for analytic curves.  ``provenance`` says where the values
    came from (``"analytic"``, ``"empirical"``, ``"plug-in"``, ...).
    """

    grid: np.ndarray
    values: np.ndarray
    se: np.ndarray
    provenance: str

    @classmethod
    def analytic(cls, func, grid, provenance="analytic"):
        grid = np.asarray(grid, dtype=float)
        values = np.array([float(np.real(func(g))) for g in grid])
        return cls(grid, values, np.zeros_like(values), provenance)

    def rows(self):
        return [
            {"theta": float(g), "value": float(v), "se": float(s)}
            for g, v, s in zip(self.grid, self.values, self.se)
        ]

    def write_csv(self, path, header=None, column="theta"):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([column, "value", "se"])
            for g, v, s in zip(self.grid, self.values, self.se):
                writer.writerow([repr(float(g)), repr(float(v)), repr(float(s))])


def batch_means_se(x, batches=32):
    """Standard error of the mean of a serially correlated stream by batch means.

    Trailing observations that do not fill a batch are dropped.
    """
    x = np.asarray(x, dtype=float)
    size = x.shape[0] // batches
    if size < 1:
        raise ValueError(f"need at least {batches} observations for {batches} batches")
    means = x[: size * batches].reshape(batches, size, *x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(batches)


def empirical_lst(samples, grid, batches=None):
    """Mean of ``exp(-theta * s)`` for each ``theta`` with its standard error.

    With ``batches`` set, the standard error comes from batch means (for
    correlated samples from one long run); otherwise it is ``sd / sqrt(n)``.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("empirical_lst needs at least one sample")
    if np.any(s < 0):
        raise ValueError("samples must be non-negative")
    grid = np.asarray(grid, dtype=float)
    values = np.empty(grid.size)
    se = np.empty(grid.size)
    for i, theta in enumerate(grid):
        e = np.exp(-theta * s)
        values[i] = e.mean()
        if batches:
            se[i] = batch_means_se(e, batches)
        else:
            se[i] = e.std(ddof=1) / np.sqrt(s.size) if s.size > 1 else 0.0
    return LstCurve(grid, values, se, "empirical")


def _euler_weights(m):
    k = np.arange(2 * m + 1)
    xi = np.zeros(2 * m + 1)
    xi[0] = 0.5
    xi[1 : m + 1] = 1.0
    xi[2 * m] = 2.0**-m
    for j in range(1, m):
        xi[2 * m - j] = xi[2 * m - j + 1] + 2.0**-m * comb(m, j)
    nodes = m * np.log(10.0) / 3.0 + 1j * np.pi * k
    return nodes, (-1.0) ** k * xi


def invert_lst_to_cdf(lst, x_grid, m=EULER_M, support_start=0.0):
    """Distribution function from a Laplace-Stieltjes transform.

    Inverts ``lst(s) / s`` with the Euler algorithm (``2m + 1`` transform
    evaluations per point, complex arguments).  ``lst`` must accept complex
    input.  For a law supported on ``[support_start, inf)`` the transform is
    shifted first, which keeps a leading atom or delay from spoiling the
    series; the CDF is zero to the left of ``support_start``.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    nodes, weights = _euler_weights(m)
    out = np.empty(x_grid.size)
    for i, x in enumerate(x_grid):
        shifted = x - support_start
        if shifted < 0:
            out[i] = 0.0
            continue
        if shifted == 0:
            raise ValueError(f"cannot invert at the support start x={x!r}; use x > {support_start!r}")
        s = nodes / shifted
        vals = lst(s) * np.exp(s * support_start) / s
        value = 10.0 ** (m / 3.0) / shifted * np.sum(weights * np.real(vals))
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite inversion value at x={x!r}")
        out[i] = value
    return out


def clamp_cdf(values):
    """Clip to [0, 1] and enforce monotonicity."""
    return np.maximum.accumulate(np.clip(values, 0.0, 1.0))


def empirical_cdf(samples, x_grid):
    s = np.sort(np.asarray(samples, dtype=float))
    return np.searchsorted(s, np.asarray(x_grid, dtype=float), side="right") / s.size
