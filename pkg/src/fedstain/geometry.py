"""Morphological ops for augmentation chains.

Each op is a small descriptor tuple; a chain of ops is composed into a
single affine map about the image center and applied with one
interpolation pass (order-1, reflect padding), so pure flip/90-degree
chains stay numerically exact and mixed chains cost one resampling
instead of one per op.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

#: Default op families: flips, 90-degree rotation, small-angle rotation,
#: mild scaling, sub-10% translation.
DEFAULT_OP_SET = ("hflip", "vflip", "rot90", "rotate", "scale", "translate")

MAX_ROTATE_DEG = 15.0
SCALE_RANGE = (0.9, 1.1)
MAX_TRANSLATE_FRAC = 0.1


def sample_op(name: str, shape, rng: np.random.Generator):
    """Draw a concrete op descriptor for the named family."""
    _, h, w = shape
    if name in ("identity", "hflip", "vflip"):
        return (name,)
    if name == "rot90":
        return (name, int(rng.integers(1, 4)))
    if name == "rotate":
        return (name, float(rng.uniform(-MAX_ROTATE_DEG, MAX_ROTATE_DEG)))
    if name == "scale":
        return (name, float(rng.uniform(*SCALE_RANGE)))
    if name == "translate":
        return (
            name,
            float(rng.uniform(-MAX_TRANSLATE_FRAC, MAX_TRANSLATE_FRAC) * h),
            float(rng.uniform(-MAX_TRANSLATE_FRAC, MAX_TRANSLATE_FRAC) * w),
        )
    raise ValueError(f"unknown op family {name!r}")


def _op_matrix(op) -> np.ndarray:
    """Forward homogeneous 3x3 matrix of one op in centered (row, col) coords."""
    name = op[0]
    mat = np.eye(3)
    if name == "identity":
        return mat
    if name == "hflip":
        mat[1, 1] = -1.0
        return mat
    if name == "vflip":
        mat[0, 0] = -1.0
        return mat
    if name == "rot90":
        theta = np.pi / 2 * op[1]
    elif name == "rotate":
        theta = np.deg2rad(op[1])
    elif name == "scale":
        s = op[1]
        mat[0, 0] = mat[1, 1] = s
        return mat
    elif name == "translate":
        mat[0, 2] = op[1]
        mat[1, 2] = op[2]
        return mat
    else:
        raise ValueError(f"unknown op {op!r}")
    c, s = np.cos(theta), np.sin(theta)
    if name == "rot90":
        # exact entries for quarter turns
        c, s = round(c), round(s)
    mat[0, 0], mat[0, 1] = c, -s
    mat[1, 0], mat[1, 1] = s, c
    return mat


def chain_matrix(ops) -> np.ndarray:
    """Forward matrix of a chain (ops applied left to right)."""
    mat = np.eye(3)
    for op in ops:
        mat = _op_matrix(op) @ mat
    return mat


_GRID_CACHE: dict = {}


def _grid(h: int, w: int):
    key = (h, w)
    if key not in _GRID_CACHE:
        _GRID_CACHE[key] = np.mgrid[0:h, 0:w]
    return _GRID_CACHE[key]


def apply_chain(image: np.ndarray, ops) -> np.ndarray:
    """Apply a chain of ops to a C×H×W image, preserving shape."""
    image = np.asarray(image, dtype=np.float64)
    _, h, w = image.shape
    forward = chain_matrix(ops)
    inverse = np.linalg.inv(forward)
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    lin = inverse[:2, :2]
    # output pixel o maps to input pixel lin @ (o - center) + t + center
    offset = inverse[:2, 2] + center - lin @ center

    # flip/quarter-turn chains are integer pixel permutations: gather
    # directly, which is exact and much cheaper than resampling
    lin_int = np.rint(lin)
    off_int = np.rint(offset)
    if (
        np.max(np.abs(lin - lin_int)) < 1e-12
        and np.max(np.abs(offset - off_int)) < 1e-9
    ):
        yy, xx = _grid(h, w)
        src_y = (lin_int[0, 0] * yy + lin_int[0, 1] * xx + off_int[0]).astype(np.intp)
        src_x = (lin_int[1, 0] * yy + lin_int[1, 1] * xx + off_int[1]).astype(np.intp)
        if (
            src_y.min() >= 0
            and src_y.max() < h
            and src_x.min() >= 0
            and src_x.max() < w
        ):
            return image[:, src_y, src_x]

    matrix3 = np.eye(3)
    matrix3[1:, 1:] = lin
    offset3 = np.array([0.0, offset[0], offset[1]])
    return ndimage.affine_transform(
        image, matrix3, offset=offset3, order=1, mode="reflect", prefilter=False
    )
