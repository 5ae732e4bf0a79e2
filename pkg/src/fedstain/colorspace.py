"""RGB <-> CIELAB conversion for float C×H×W images.

RGB values live in [0, 1] (sRGB, D65 white point).  LAB channels come
out in the usual units: L in [0, 100], a/b roughly in [-128, 127].
Conversions are pure numpy so they stay deterministic and differentiably
simple to test (round-trip within float tolerance for in-gamut colors).
"""

from __future__ import annotations

import numpy as np

# sRGB (linear) -> XYZ, D65
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
_WHITE = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0

RGB = "RGB"
LAB = "LAB"
COLOR_SPACES = (RGB, LAB)


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    c = np.clip(c, 0.0, None)
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _lab_f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(ft):
    return np.where(ft > _DELTA, ft**3, 3 * _DELTA**2 * (ft - 4.0 / 29.0))


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert a 3×H×W RGB image in [0, 1] to LAB."""
    lin = _srgb_to_linear(np.asarray(rgb, dtype=np.float64))
    xyz = np.einsum("ij,jhw->ihw", _RGB2XYZ, lin) / _WHITE[:, None, None]
    f = _lab_f(xyz)
    lab = np.empty_like(f)
    lab[0] = 116.0 * f[1] - 16.0
    lab[1] = 500.0 * (f[0] - f[1])
    lab[2] = 200.0 * (f[1] - f[2])
    return lab


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Convert a 3×H×W LAB image back to RGB in [0, 1] (gamut-clipped)."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[0] + 16.0) / 116.0
    fx = fy + lab[1] / 500.0
    fz = fy - lab[2] / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)]) * _WHITE[:, None, None]
    lin = np.einsum("ij,jhw->ihw", _XYZ2RGB, xyz)
    return np.clip(_linear_to_srgb(lin), 0.0, 1.0)


def to_working_space(rgb: np.ndarray, color_space: str) -> np.ndarray:
    """Map an RGB [0, 1] image into the configured working space."""
    if color_space == RGB:
        return np.asarray(rgb, dtype=np.float64)
    if color_space == LAB:
        return rgb_to_lab(rgb)
    raise ValueError(f"unknown color space {color_space!r}")


def from_working_space(image: np.ndarray, color_space: str) -> np.ndarray:
    """Map a working-space image back to RGB [0, 1]."""
    if color_space == RGB:
        return np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if color_space == LAB:
        return lab_to_rgb(image)
    raise ValueError(f"unknown color space {color_space!r}")
