"""Boundary contraction of the machine-by-layer grid network.

Each machine contributes a column: its evolved input vector at the bottom,
one site tensor per rule layer crossing it, and a plug on top (all-ones for a
trace, nothing for the open machine, or any vector).  Site tensors are stored
with axes ``(v_in, v_out, h_left, h_right)``; the two horizontal extents are
1 at the ends of a layer's span.  Columns are folded one at a time into a
boundary tensor whose axes are the horizontal bonds of the layers crossing
the current cut.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractionShapeError

TRACE = "trace"
OPEN = "open"


@dataclass(frozen=True)
class Site:
    layer: int
    tensor: np.ndarray  # (P, P, HL, HR)


@dataclass(frozen=True)
class SiteColumn:
    machine: int
    input_vector: np.ndarray
    sites: tuple[Site, ...] = ()
    top_plug: str | np.ndarray = TRACE

    @property
    def extent(self) -> int:
        return len(self.input_vector)


@dataclass
class Boundary:
    """Dense tensor over the bonds crossing a cut.

    ``labels[k]`` is the layer owning axis ``k``; when ``open_extent`` is set,
    one extra trailing axis carries the open machine's task index.
    """

    labels: tuple[int, ...]
    data: np.ndarray
    open_extent: int | None = None

    @classmethod
    def trivial(cls) -> Boundary:
        return cls((), np.array(1.0))

    @property
    def channel_extents(self) -> tuple[int, ...]:
        return tuple(self.data.shape[: len(self.labels)])


@dataclass
class ContractionStats:
    max_boundary: int = 1
    max_intermediate: int = 1
    columns: int = 0
    boundary_sizes: list[int] = field(default_factory=list)

    def observe(self, size: int) -> None:
        self.max_intermediate = max(self.max_intermediate, size)


def _orient(tensor: np.ndarray, reverse: bool) -> np.ndarray:
    return tensor.transpose(0, 1, 3, 2) if reverse else tensor


def contract_column(
    boundary: Boundary,
    column: SiteColumn,
    reverse: bool = False,
    stats: ContractionStats | None = None,
) -> Boundary:
    """Absorb one machine column into ``boundary``.

    With ``reverse=True`` the sweep runs right to left, so each site's right
    bond is the incoming one.
    """
    vec = np.asarray(column.input_vector, dtype=float)
    # working tensor axes: [*labels, (open), v]
    labels = list(boundary.labels)
    work = np.multiply.outer(boundary.data, vec)
    if stats:
        stats.observe(work.size)
    touched = set()
    for site in sorted(column.sites, key=lambda s: s.layer):
        tensor = _orient(np.asarray(site.tensor, dtype=float), reverse)
        p_in, p_out, h_in, h_out = tensor.shape
        if p_in != work.shape[-1]:
            raise ContractionShapeError(
                f"machine {column.machine}, layer {site.layer}: vertical extent "
                f"{p_in} != {work.shape[-1]}"
            )
        v_axis = work.ndim - 1
        if site.layer in labels:
            axis = labels.index(site.layer)
            if work.shape[axis] != h_in:
                raise ContractionShapeError(
                    f"machine {column.machine}, layer {site.layer}: bond extent "
                    f"{work.shape[axis]} != {h_in}"
                )
            work = np.tensordot(work, tensor, axes=([axis, v_axis], [2, 0]))
            del labels[axis]
        else:
            if h_in != 1:
                raise ContractionShapeError(
                    f"machine {column.machine}, layer {site.layer}: layer enters "
                    f"without an incoming bond (extent {h_in})"
                )
            work = np.tensordot(work, tensor[:, :, 0, :], axes=([v_axis], [0]))
        # axes now: [*labels, (open), v_out, h_out]
        if stats:
            stats.observe(work.size)
        touched.add(site.layer)
        if h_out == 1:
            work = work[..., 0]
        else:
            work = np.moveaxis(work, -1, len(labels))
            labels.append(site.layer)

    stale = [layer for layer in boundary.labels if layer not in touched]
    if stale:
        raise ContractionShapeError(
            f"machine {column.machine}: layers {stale} cross the cut but have no site here"
        )

    plug = column.top_plug
    open_extent = boundary.open_extent
    if isinstance(plug, str) and plug == OPEN:
        if open_extent is not None:
            raise ContractionShapeError("only one open column per contraction")
        open_extent = work.shape[-1]
    elif isinstance(plug, str) and plug == TRACE:
        work = work.sum(axis=-1)
    else:
        plug_vec = np.asarray(plug, dtype=float)
        if plug_vec.shape != (work.shape[-1],):
            raise ContractionShapeError(f"machine {column.machine}: plug has wrong extent")
        work = work @ plug_vec
    result = Boundary(tuple(labels), work, open_extent)
    if stats:
        stats.columns += 1
        stats.boundary_sizes.append(int(work.size))
        stats.max_boundary = max(stats.max_boundary, int(work.size))
    return result


def full_contract(
    columns: Sequence[SiteColumn],
    reverse: bool = False,
    stats: ContractionStats | None = None,
) -> float | np.ndarray:
    """Fold every column, left to right (or right to left).

    Returns a float when all plugs are closed, otherwise the vector over the
    open machine's tasks.
    """
    ordered = sorted(columns, key=lambda c: c.machine, reverse=reverse)
    boundary = Boundary.trivial()
    for column in ordered:
        boundary = contract_column(boundary, column, reverse=reverse, stats=stats)
    if boundary.labels:
        raise ContractionShapeError(f"layers {list(boundary.labels)} left dangling at the edge")
    if boundary.open_extent is None:
        return float(boundary.data)
    return np.asarray(boundary.data, dtype=float)


def apply_operator_to_basis(columns: Sequence[SiteColumn], assignment: Sequence[int]) -> float:
    """Diagonal element <x|R|x> of the stacked layers, evolution weights removed."""
    basis_columns = []
    for col in columns:
        e = np.zeros(col.extent)
        e[assignment[col.machine]] = 1.0
        basis_columns.append(SiteColumn(col.machine, e, col.sites, e))
    return float(full_contract(basis_columns))


def peak_elements(columns: Sequence[SiteColumn]) -> int:
    """Largest intermediate (in elements) a left-to-right sweep will allocate.

    Computed from shapes only, so a memory cap can be enforced before any
    contraction work is done.
    """
    crossing: dict[int, int] = {}
    open_extent = 1
    peak = 1
    for col in sorted(columns, key=lambda c: c.machine):
        boundary = int(np.prod(list(crossing.values()), dtype=np.int64)) if crossing else 1
        size = boundary * open_extent * col.extent
        peak = max(peak, size)
        for site in sorted(col.sites, key=lambda s: s.layer):
            _, p_out, h_in, h_out = site.tensor.shape
            size = size // h_in * h_out
            peak = max(peak, size)
            if h_out == 1:
                crossing.pop(site.layer, None)
            else:
                crossing[site.layer] = h_out
        if isinstance(col.top_plug, str) and col.top_plug == OPEN:
            open_extent = col.extent
    return peak
