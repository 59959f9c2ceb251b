"""
Tensor conventions: numpy arrays, NCHW, float32 for training and inference, float64
("check mode") for gradient and oracle verification.
"""
from typing import Any, Type

import numpy as np

from errors import NonFiniteError

DTYPE = np.float32
CHECK_DTYPE = np.float64


def as_tensor(x: Any, check: bool = False) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=CHECK_DTYPE if check else DTYPE)


def assert_finite(arr: np.ndarray, what: str, error: Type[NonFiniteError] = NonFiniteError) -> None:
    """Raise error when arr holds NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise error(f"{what}: {bad} non-finite value(s)")
