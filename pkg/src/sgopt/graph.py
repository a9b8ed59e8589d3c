"""Constrained factor graph over the trajectory variables of a cart-pole chain.

Variables are small dense vectors (cart state, pendulum state, control
scalar) indexed by kind, body and time step.  Factors are affine residual
blocks; finite-weight factors contribute squared residuals to the objective
and constraint factors must hold exactly.  Graphs are built once and treated
as immutable afterwards; elimination works on its own mutable copy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Mapping, Sequence, Set, Tuple

import numpy as np

from .errors import DimensionMismatch, UnknownVariable
from .linalg import FloatArray, RowWeight

_KIND_LABEL = ("X", "th", "U")


class VarKind(IntEnum):
    """Variable kinds, in the order used for tie-breaking."""

    CART = 0
    PENDULUM = 1
    CONTROL = 2


@dataclass(frozen=True)
class VariableKey:
    """Identifier of one trajectory variable: kind, body index, time step."""

    kind: VarKind
    body: int
    time: int

    def order_rank(self) -> Tuple[int, int, int]:
        """Total order used everywhere iteration must be deterministic:
        later time steps first, then kind, then body index."""
        return (-self.time, int(self.kind), self.body)

    def __str__(self) -> str:
        return f"{_KIND_LABEL[self.kind]}{self.body}^{self.time}"


def cart(body: int, time: int) -> VariableKey:
    return VariableKey(VarKind.CART, body, time)


def pend(body: int, time: int) -> VariableKey:
    return VariableKey(VarKind.PENDULUM, body, time)


def control(body: int, time: int) -> VariableKey:
    return VariableKey(VarKind.CONTROL, body, time)


_KIND_DIM = {VarKind.CART: 2, VarKind.PENDULUM: 2, VarKind.CONTROL: 1}


@dataclass(frozen=True)
class VariableInfo:
    """A variable and its (fixed per kind) dimension."""

    key: VariableKey
    dim: int

    def __post_init__(self) -> None:
        if self.dim != _KIND_DIM[self.key.kind]:
            raise DimensionMismatch(
                f"{self.key} must have dim {_KIND_DIM[self.key.kind]}, got {self.dim}"
            )


class Factor:
    """Affine residual block: rows of ``sum_k B_k x_k - rhs`` with one weight kind.

    ``blocks[i]`` multiplies the variable ``keys[i]``.  All rows of a factor
    share the same RowWeight; mixed soft/hard row sets are split into
    separate factors.
    """

    __slots__ = ("keys", "blocks", "rhs", "weight")

    def __init__(
        self,
        keys: Sequence[VariableKey],
        blocks: Sequence[FloatArray],
        rhs: FloatArray,
        weight: RowWeight,
    ) -> None:
        self.keys: Tuple[VariableKey, ...] = tuple(keys)
        self.blocks: Tuple[FloatArray, ...] = tuple(
            np.asarray(b, dtype=float) for b in blocks
        )
        self.rhs: FloatArray = np.asarray(rhs, dtype=float)
        self.weight = weight
        if len(self.keys) != len(self.blocks):
            raise DimensionMismatch(
                f"{len(self.keys)} keys but {len(self.blocks)} blocks"
            )
        if len(set(self.keys)) != len(self.keys):
            raise DimensionMismatch(f"duplicate keys in factor: {self.keys}")
        rows = self.rhs.shape[0]
        for key, block in zip(self.keys, self.blocks):
            if block.ndim != 2 or block.shape[0] != rows:
                raise DimensionMismatch(
                    f"block for {key} has shape {block.shape}, expected ({rows}, dim)"
                )

    @property
    def rows(self) -> int:
        return self.rhs.shape[0]

    def __repr__(self) -> str:
        kind = "hard" if self.weight.is_constraint else f"soft:{self.weight.weight:g}"
        return f"Factor([{', '.join(map(str, self.keys))}], rows={self.rows}, {kind})"


class FactorGraph:
    """Append-only container of variables and factors with adjacency tracking."""

    def __init__(self) -> None:
        self._variables: Dict[VariableKey, VariableInfo] = {}
        self._factors: List[Factor] = []
        self._adjacency: Dict[VariableKey, Set[int]] = {}

    # -- construction -----------------------------------------------------
    def add_variable(self, info: VariableInfo) -> None:
        if info.key in self._variables:
            raise DimensionMismatch(f"variable {info.key} added twice")
        self._variables[info.key] = info
        self._adjacency[info.key] = set()

    def add_factor(self, factor: Factor) -> int:
        for key, block in zip(factor.keys, factor.blocks):
            info = self._variables.get(key)
            if info is None:
                raise UnknownVariable(f"factor references unknown variable {key}")
            if block.shape[1] != info.dim:
                raise DimensionMismatch(
                    f"block for {key} has {block.shape[1]} cols, variable dim is {info.dim}"
                )
        fid = len(self._factors)
        self._factors.append(factor)
        for key in factor.keys:
            self._adjacency[key].add(fid)
        return fid

    # -- queries -----------------------------------------------------------
    @property
    def variables(self) -> Mapping[VariableKey, VariableInfo]:
        return self._variables

    @property
    def factors(self) -> Sequence[Factor]:
        return self._factors

    def factor_ids_of(self, key: VariableKey) -> frozenset:
        if key not in self._adjacency:
            raise UnknownVariable(str(key))
        return frozenset(self._adjacency[key])

    def neighbors(self, key: VariableKey) -> Set[VariableKey]:
        """All variables sharing at least one factor with ``key``."""
        if key not in self._adjacency:
            raise UnknownVariable(str(key))
        out: Set[VariableKey] = set()
        for fid in self._adjacency[key]:
            out.update(self._factors[fid].keys)
        out.discard(key)
        return out

    def total_dim(self) -> int:
        return sum(info.dim for info in self._variables.values())

    def column_offsets(
        self, column_order: Sequence[VariableKey]
    ) -> Dict[VariableKey, int]:
        offsets: Dict[VariableKey, int] = {}
        pos = 0
        for key in column_order:
            info = self._variables.get(key)
            if info is None:
                raise UnknownVariable(str(key))
            offsets[key] = pos
            pos += info.dim
        return offsets

    def assemble_dense(
        self, column_order: Sequence[VariableKey]
    ) -> Tuple[FloatArray, FloatArray, List[RowWeight]]:
        """Stack all factors into (F, g, row weights) under the given column order.

        ``column_order`` must be a permutation of the graph's variables.  Rows
        appear in factor insertion order; each factor contributes one
        RowWeight per scalar row.
        """
        if set(column_order) != set(self._variables) or len(column_order) != len(
            self._variables
        ):
            raise UnknownVariable("column order is not a permutation of the variables")
        offsets = self.column_offsets(column_order)
        n = self.total_dim()
        m = sum(f.rows for f in self._factors)
        big_f = np.zeros((m, n))
        g = np.zeros(m)
        weights: List[RowWeight] = []
        row = 0
        for factor in self._factors:
            r = factor.rows
            for key, block in zip(factor.keys, factor.blocks):
                off = offsets[key]
                big_f[row : row + r, off : off + block.shape[1]] = block
            g[row : row + r] = factor.rhs
            weights.extend([factor.weight] * r)
            row += r
        return big_f, g, weights

    def residual_cost(
        self, values: Mapping[VariableKey, FloatArray]
    ) -> Tuple[float, float]:
        """Evaluate (weighted soft cost, max hard-constraint violation).

        ``values`` must cover every variable in the graph.
        """
        if isinstance(values, Solution):
            values = values.values
        for key in self._variables:
            if key not in values:
                raise UnknownVariable(f"no value for {key}")
        cost = 0.0
        violation = 0.0
        for factor in self._factors:
            resid = -factor.rhs
            for key, block in zip(factor.keys, factor.blocks):
                resid = resid + block @ np.asarray(values[key], dtype=float)
            if factor.weight.is_constraint:
                violation = max(violation, float(np.max(np.abs(resid), initial=0.0)))
            else:
                cost += factor.weight.weight * float(resid @ resid)
        return cost, violation

    def dump(self) -> str:
        """Plain-text debug serialization: one line per variable and factor."""
        lines = []
        for key in sorted(self._variables, key=VariableKey.order_rank):
            lines.append(f"var {key} dim={self._variables[key].dim}")
        for factor in self._factors:
            kind = "hard" if factor.weight.is_constraint else f"soft:{factor.weight.weight:.12g}"
            parts = []
            for key, block in zip(factor.keys, factor.blocks):
                entries = ",".join(
                    "[" + ",".join(f"{v:.12g}" for v in row) + "]" for row in block
                )
                parts.append(f"{key}:[{entries}]")
            rhs = ",".join(f"{v:.12g}" for v in factor.rhs)
            lines.append(f"factor {kind} rows={factor.rows} {' '.join(parts)} rhs=[{rhs}]")
        return "\n".join(lines) + "\n"


@dataclass
class Solution:
    """Assignment of every variable plus the soft cost evaluated there."""

    values: Dict[VariableKey, FloatArray] = field(default_factory=dict)
    total_cost: float = 0.0


def sorted_keys(keys: Iterable[VariableKey]) -> List[VariableKey]:
    """Sort keys by the canonical total order (time descending, kind, body)."""
    return sorted(keys, key=VariableKey.order_rank)
