"""Square-QAM constellations with Gray labelling, normalised to unit average power."""

import math

import numpy as np


def qam_constellation(order: int) -> np.ndarray:
    """Return the ``order``-point square QAM constellation as a complex vector.

    Gray labelling per axis: the symbol index splits into an in-phase label
    (high bits) and a quadrature label (low bits), and adjacent amplitude
    levels differ in exactly one label bit.  The constellation is scaled so
    that the average symbol energy over a uniform prior is exactly 1.
    """
    side = math.isqrt(order)
    if side * side != order or order < 4:
        raise ValueError(f"modulation order must be a perfect square >= 4, got {order}")
    # gray code of the level position p in 0..side-1
    gray = np.arange(side) ^ (np.arange(side) >> 1)
    # label -> amplitude level: invert the gray map
    level_of_label = np.empty(side, dtype=np.int64)
    level_of_label[gray] = np.arange(side)
    amps = 2 * level_of_label - (side - 1)
    scale = math.sqrt(3.0 / (2.0 * (order - 1)))
    bits = side.bit_length() - 1
    idx = np.arange(order)
    i_label = idx >> bits
    q_label = idx & (side - 1)
    return scale * (amps[i_label] + 1j * amps[q_label])


def qam_demod(z: np.ndarray, order: int) -> np.ndarray:
    """Nearest-point hard decision, returned as constellation indices.

    Exact for square QAM: per-axis rounding to the closest amplitude level
    is the minimum-distance rule. Ties on decision boundaries round half
    away from zero, matching the slicer used at synthesis.
    """
    side = math.isqrt(order)
    if side * side != order or order < 4:
        raise ValueError(f"modulation order must be a perfect square >= 4, got {order}")
    z = np.asarray(z)
    scale = math.sqrt(3.0 / (2.0 * (order - 1)))
    gray = np.arange(side) ^ (np.arange(side) >> 1)
    bits = side.bit_length() - 1

    def axis_label(vals):
        pos = np.round((vals / scale + (side - 1)) / 2.0).astype(np.int64)
        pos = np.clip(pos, 0, side - 1)
        return gray[pos]

    i_label = axis_label(z.real)
    q_label = axis_label(z.imag)
    return (i_label << bits) | q_label


def min_distance(order: int) -> float:
    """Minimum distance between constellation points at unit average power."""
    return 2.0 * math.sqrt(3.0 / (2.0 * (order - 1)))
