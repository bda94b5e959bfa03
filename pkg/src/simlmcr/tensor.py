"""Four-mode GC×GC-MS tensors and the reshapes used by the ALS loop.

Axis convention is ``(i, k, l, j)``: modulation, second-dimension scan,
sample, mass channel.  Every unfolding uses one canonical row order in
which ``i`` varies fastest, then ``k``, then ``l``::

    row(i, k, l) = i + I * (k + K * l)

This is column-major (Fortran) order over ``(i, k, l)``, so all reshapes
below are plain ``order="F"`` reshapes of contiguous data.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Gc2Dataset",
    "AugmentedMatrix",
    "ComponentProfile",
    "augment",
    "unaugment",
    "profile_as_mode1_matrix",
    "mode1_matrix_as_profile",
    "vector_as_mode2_matrix",
    "mode2_matrix_as_vector",
    "canonical_row",
    "write_container",
    "read_container",
    "write_csv",
    "DimensionError",
]

_INDEX_LIMIT = np.iinfo(np.int64).max
CONTAINER_ORDER = "ikl-row-major"
CONTAINER_DTYPE = "f64le"


class DimensionError(ValueError):
    """Array shape does not agree with the declared tensor dimensions."""


def _check_dims(dims: Sequence[int], n: int) -> Tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) != n or any(d < 1 for d in dims):
        raise DimensionError(f"expected {n} positive dimensions, got {dims}")
    total = 1
    for d in dims:
        total *= d
        if total > _INDEX_LIMIT:
            raise OverflowError(f"flat index overflows int64 for dims {dims}")
    return dims


def canonical_row(i: int, k: int, l: int, dims: Sequence[int]) -> int:
    """Flat row index of ``(i, k, l)`` in the augmented matrix."""
    I, K = dims[0], dims[1]
    return i + I * (k + K * l)


@dataclass(frozen=True)
class Gc2Dataset:
    """Dense ``(I, K, L, J)`` data tensor with optional axis labels.

    ``rt1``/``rt2`` are first- and second-dimension retention times and
    ``mz`` the mass axis; each must match its dimension when given.
    """

    data: np.ndarray
    rt1: Optional[np.ndarray] = None
    rt2: Optional[np.ndarray] = None
    mz: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4:
            raise DimensionError(f"tensor must have 4 modes, got {data.ndim}")
        _check_dims(data.shape, 4)
        if not np.all(np.isfinite(data)):
            raise ValueError("tensor contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        for name, axis in (("rt1", 0), ("rt2", 1), ("mz", 3)):
            labels = getattr(self, name)
            if labels is None:
                continue
            labels = np.array(labels, dtype=np.float64, copy=True).ravel()
            if labels.shape[0] != data.shape[axis]:
                raise DimensionError(
                    f"{name} has {labels.shape[0]} labels for axis of length "
                    f"{data.shape[axis]}"
                )
            labels.setflags(write=False)
            object.__setattr__(self, name, labels)

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, Gc2Dataset):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class AugmentedMatrix:
    """The ``(IKL, J)`` unfolding of a :class:`Gc2Dataset`."""

    values: np.ndarray
    dims: Tuple[int, int, int, int]
    row_order: str = field(default=CONTAINER_ORDER)

    def __post_init__(self):
        dims = _check_dims(self.dims, 4)
        values = np.array(self.values, dtype=np.float64, copy=True)
        I, K, L, J = dims
        if values.shape != (I * K * L, J):
            raise DimensionError(
                f"matrix shape {values.shape} does not match dims {dims}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dims", dims)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ComponentProfile:
    """Concatenated elution profile of one component (length ``IKL``)."""

    vector: np.ndarray
    dims: Tuple[int, int, int]
    index: int = 0

    def __post_init__(self):
        dims = _check_dims(self.dims, 3)
        vector = np.array(self.vector, dtype=np.float64, copy=True).ravel()
        if vector.shape[0] != dims[0] * dims[1] * dims[2]:
            raise DimensionError(
                f"profile length {vector.shape[0]} does not match dims {dims}"
            )
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)
        object.__setattr__(self, "dims", dims)


def augment(dataset: Gc2Dataset) -> AugmentedMatrix:
    """Unfold the tensor to the ``(IKL, J)`` augmented matrix."""
    I, K, L, J = _check_dims(dataset.dims, 4)
    values = dataset.data.reshape(I * K * L, J, order="F")
    return AugmentedMatrix(values, (I, K, L, J))


def unaugment(matrix: AugmentedMatrix) -> Gc2Dataset:
    """Inverse of :func:`augment`."""
    I, K, L, J = matrix.dims
    if matrix.values.shape != (I * K * L, J):
        raise DimensionError(
            f"matrix shape {matrix.values.shape} does not match dims {matrix.dims}"
        )
    return Gc2Dataset(matrix.values.reshape(I, K, L, J, order="F"))


def profile_as_mode1_matrix(profile: ComponentProfile) -> np.ndarray:
    """Reshape a profile to ``(I, K*L)``.

    Column ``k + K*l`` holds the first-dimension elution profile observed
    at scan ``k`` of sample ``l``.
    """
    I, K, L = profile.dims
    return profile.vector.reshape(I, K * L, order="F")


def mode1_matrix_as_profile(matrix: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    I, K, L = _check_dims(dims, 3)
    matrix = np.asarray(matrix)
    if matrix.shape != (I, K * L):
        raise DimensionError(f"expected ({I}, {K * L}), got {matrix.shape}")
    return matrix.reshape(I * K * L, order="F")


def vector_as_mode2_matrix(v: np.ndarray, K: int, L: int) -> np.ndarray:
    """Reshape a length ``K*L`` vector so column ``l`` is sample ``l``."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != K * L:
        raise DimensionError(f"expected vector of length {K * L}, got {v.shape}")
    return v.reshape(K, L, order="F")


def mode2_matrix_as_vector(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {matrix.shape}")
    return matrix.reshape(-1, order="F")


# -- container files -------------------------------------------------------


def write_container(path, values: np.ndarray, dims: Sequence[int]) -> None:
    """Write an augmented ``(IKL, J)`` array to the binary container.

    Layout: one JSON header line, then ``I*K*L*J`` little-endian float64
    values, augmented-matrix rows in canonical order, ``j`` fastest.
    """
    dims = _check_dims(dims, 4)
    I, K, L, J = dims
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (I * K * L, J):
        raise DimensionError(f"values shape {values.shape} does not match {dims}")
    header = {"dims": list(dims), "order": CONTAINER_ORDER, "dtype": CONTAINER_DTYPE}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_container(path) -> AugmentedMatrix:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: bad container header") from exc
    if header.get("order") != CONTAINER_ORDER or header.get("dtype") != CONTAINER_DTYPE:
        raise ValueError(f"{path}: unsupported container layout {header}")
    dims = _check_dims(header["dims"], 4)
    I, K, L, J = dims
    expected = I * K * L * J * 8
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").reshape(I * K * L, J)
    return AugmentedMatrix(values.astype(np.float64), dims)


def write_csv(path, dataset: Gc2Dataset) -> None:
    """Row per ``(i, k, l)`` in canonical order, column per mass channel."""
    mat = augment(dataset)
    I, K, L, J = mat.dims
    ii, kk, ll = np.meshgrid(np.arange(I), np.arange(K), np.arange(L), indexing="ij")
    index = np.column_stack(
        [ii.ravel(order="F"), kk.ravel(order="F"), ll.ravel(order="F")]
    )
    buf = io.StringIO()
    cols = ["i", "k", "l"] + [f"ch{j}" for j in range(J)]
    buf.write(",".join(cols) + "\n")
    for idx, row in zip(index, mat.values):
        buf.write(",".join(str(int(x)) for x in idx))
        buf.write("," + ",".join(repr(float(x)) for x in row) + "\n")
    Path(path).write_text(buf.getvalue())
