"""Small array helpers shared by the ensemble, oracle and CLI layers."""

import typing

import numpy as np


def complex_to_json(z: complex) -> typing.Union[float, list[float]]:
    """A complex number as JSON: a plain float when real, else ``[re, im]``."""
    z = complex(z)
    if z.imag == 0.0:
        return z.real
    return [z.real, z.imag]


def complex_from_json(value) -> complex:
    """
    Inverse of :py:func:`complex_to_json`. Also accepts strings such as
    ``"2+1j"``.
    """
    if isinstance(value, bool):
        raise TypeError("a boolean is not a complex number")
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValueError(f"complex as list needs [re, im], got {value!r}")
        return complex(float(value[0]), float(value[1]))
    if isinstance(value, str):
        return complex(value.replace(" ", ""))
    return complex(value)


def uniform_grid(horizon: float, n_points: int) -> np.ndarray:
    """``n_points`` equidistant times covering [0, horizon]."""
    if n_points < 2:
        raise ValueError(f"a time grid needs at least 2 points, got {n_points}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    return np.linspace(0.0, float(horizon), int(n_points))


def lattice(lo: float, hi: float, spacing: float) -> np.ndarray:
    """
    Points lo, lo + spacing, ... up to hi (inclusive within rounding).

    Points are ``lo + k * spacing``, rounded to 12 decimals, so 0 is exactly
    0 for symmetric ranges.
    """
    if spacing <= 0:
        raise ValueError(f"lattice spacing must be positive, got {spacing}")
    if hi < lo:
        raise ValueError(f"empty lattice range [{lo}, {hi}]")
    n = int(np.floor((hi - lo) / spacing + 1e-9)) + 1
    pts = lo + spacing * np.arange(n)
    return np.round(pts, 12)


def tree_reduce(items: list, combine: typing.Callable):
    """
    Combine ``items`` pairwise, level by level, in index order.

    The combination order only depends on ``len(items)``, which makes the
    result independent of how the items were computed.
    """
    if not items:
        raise ValueError("nothing to reduce")
    level = list(items)
    while len(level) > 1:
        nxt = [combine(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]
