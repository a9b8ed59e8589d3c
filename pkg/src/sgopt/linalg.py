"""Dense row-elimination kernels for mixed soft/hard least-squares blocks.

A local subproblem is a stacked matrix over columns ``[frontal | separator |
rhs]`` whose rows either carry a finite least-squares weight or are hard
constraints (conceptually infinite weight).  Elimination first consumes hard
rows by exact row reduction, then orthogonalizes the remaining finite rows
over any frontal columns the constraints did not cover.  The result is a
triangular conditional for the frontal columns plus marginal rows over the
separator.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .errors import InfeasibleConstraint, RankDeficient, SingularDiagonal

FloatArray = npt.NDArray[np.float64]

# A frontal pivot counts as zero below this fraction of its column's largest
# absolute entry; rows count as zero below this fraction of their own scale.
PIVOT_RTOL = 1e-12


@dataclass(frozen=True)
class RowWeight:
    """Weight kind of a factor row: finite (soft) or a hard constraint.

    ``weight is None`` marks a hard constraint row; otherwise ``weight`` is
    the nonnegative least-squares weight applied to the squared residual.
    """

    weight: float | None = 1.0

    def __post_init__(self) -> None:
        if self.weight is not None and self.weight < 0.0:
            raise ValueError(f"finite row weight must be nonnegative, got {self.weight}")

    @classmethod
    def finite(cls, weight: float = 1.0) -> "RowWeight":
        return cls(float(weight))

    @classmethod
    def constraint(cls) -> "RowWeight":
        return cls(None)

    @property
    def is_constraint(self) -> bool:
        return self.weight is None


CONSTRAINT = RowWeight.constraint()
UNIT_WEIGHT = RowWeight.finite(1.0)


@dataclass(frozen=True)
class EliminationResult:
    """Output of one local elimination.

    ``conditional_rows`` has one row per frontal column over ``[frontal |
    separator | rhs]``; its leading block is upper triangular with nonzero
    diagonal.  ``marginal_rows`` spans ``[separator | rhs]`` only; the
    frontal columns have been substituted out.
    """

    conditional_rows: FloatArray
    conditional_weights: Tuple[RowWeight, ...]
    marginal_rows: FloatArray
    marginal_weights: Tuple[RowWeight, ...]


def qr_factorize(a: FloatArray) -> Tuple[FloatArray, Callable[[FloatArray], FloatArray]]:
    """Factor ``a`` as Q R by modified Gram-Schmidt.

    Returns the upper-trapezoidal factor ``R`` (``min(m, n)`` rows, diagonal
    made nonnegative) and a callable applying ``Q^T`` to right-hand sides, so
    that ``|a y - b|^2 = |R y - Q^T b|^2 + const`` for full-rank ``a``.
    Rank deficiency surfaces as zero diagonal entries; the caller decides how
    to react.
    """
    a = np.asarray(a, dtype=float)
    m, n = a.shape
    k = min(m, n)
    work = a.copy()
    q = np.zeros((m, k))
    r = np.zeros((k, n))
    col_scale = np.max(np.abs(a), axis=0, initial=0.0)
    for j in range(k):
        v = work[:, j]
        nrm = float(np.linalg.norm(v))
        if nrm <= PIVOT_RTOL * col_scale[j] or col_scale[j] == 0.0:
            continue  # dependent column: leave R[j, j] = 0
        qj = v / nrm
        r[j, j] = nrm
        if j + 1 < n:
            proj = qj @ work[:, j + 1 :]
            r[j, j + 1 :] = proj
            work[:, j + 1 :] -= np.outer(qj, proj)
        work[:, j] = 0.0
        q[:, j] = qj

    def q_apply(b: FloatArray) -> FloatArray:
        return q.T @ np.asarray(b, dtype=float)

    return r, q_apply


def triangularize_rows(rows: FloatArray) -> FloatArray:
    """Compress finite rows to their triangular factor, dropping zero rows.

    The rhs column is treated like any other column, so the squared residual
    of the row set is preserved exactly for every argument.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.shape[0] <= 1:
        return rows.copy()
    r, _ = qr_factorize(rows)
    scale = np.max(np.abs(rows), initial=0.0)
    keep = np.max(np.abs(r), axis=1, initial=0.0) > PIVOT_RTOL * max(scale, 1.0)
    return r[keep]


def echelonize_rows(rows: FloatArray, feasibility_scale: float = 1.0) -> FloatArray:
    """Row-reduce hard-constraint rows to echelon form, dropping redundant rows.

    Raises InfeasibleConstraint when a row reduces to 0 = c with c nonzero
    relative to ``feasibility_scale``.  The rhs column must be last.
    """
    work = np.asarray(rows, dtype=float).copy()
    m, ncols = work.shape
    n_coef = ncols - 1
    out: List[FloatArray] = []
    active = list(range(m))
    for j in range(n_coef):
        if not active:
            break
        col = np.abs(work[active, j])
        i_loc = int(np.argmax(col))
        col_scale = float(np.max(np.abs(work[:, j]), initial=0.0))
        if col_scale == 0.0 or col[i_loc] <= PIVOT_RTOL * col_scale:
            continue
        gi = active.pop(i_loc)
        pivot_row = work[gi] / work[gi, j]
        pivot_row[j] = 1.0
        if active:
            work[active] -= np.outer(work[active, j], pivot_row)
        out.append(pivot_row)
    for gi in active:
        row = work[gi]
        if np.max(np.abs(row[:n_coef]), initial=0.0) > PIVOT_RTOL * max(feasibility_scale, 1.0):
            out.append(row.copy())
        elif abs(row[-1]) > PIVOT_RTOL * max(feasibility_scale, 1.0) * 1e3:
            raise InfeasibleConstraint(
                f"constraint row reduced to 0 = {row[-1]:.3e} during row reduction"
            )
    if not out:
        return np.zeros((0, ncols))
    return np.vstack(out)


def constrained_eliminate(
    a: FloatArray, weights: Sequence[RowWeight], frontal_cols: int
) -> EliminationResult:
    """Eliminate the leading ``frontal_cols`` columns of a stacked subproblem.

    Args:
        a: local matrix over ``[frontal | separator | rhs]`` columns; the
            rhs is the last column.
        weights: one RowWeight per row of ``a``.
        frontal_cols: number of leading columns to eliminate.

    Hard rows are consumed first: for each frontal column the largest hard
    pivot (partial pivoting among constraint rows only) becomes a conditional
    row normalized to unit diagonal, and is subtracted from every other row.
    Frontal columns without a hard pivot are then orthogonalized out of the
    finite rows.  Finite rows are pre-scaled by sqrt(weight), so all finite
    output rows carry unit weight.

    Raises:
        InfeasibleConstraint: a hard row reduced to 0 = c, c nonzero.
        RankDeficient: finite rows do not span a frontal column that the
            constraints left uncovered.
    """
    a = np.asarray(a, dtype=float)
    m, ncols = a.shape
    f = int(frontal_cols)
    if not (1 <= f < ncols):
        raise ValueError(f"frontal_cols must lie in [1, {ncols - 1}], got {f}")
    if len(weights) != m:
        raise ValueError(f"expected {m} row weights, got {len(weights)}")

    work = a.copy()
    hard_active: List[int] = []
    soft_idx: List[int] = []
    for i, w in enumerate(weights):
        if w.is_constraint:
            hard_active.append(i)
        else:
            soft_idx.append(i)
            if w.weight != 1.0:
                work[i] *= np.sqrt(w.weight)

    overall_scale = float(np.max(np.abs(work), initial=0.0))
    col_scale = np.max(np.abs(work), axis=0, initial=0.0)
    conditional = np.zeros((f, ncols))
    cond_weights: List[RowWeight | None] = [None] * f

    # Phase 1: hard rows pivot on frontal columns, left to right.  Adding a
    # multiple of a hard row changes nothing on the feasible set, so it may be
    # subtracted from soft rows as well.
    for j in range(f):
        if not hard_active:
            break
        col = np.abs(work[hard_active, j])
        i_loc = int(np.argmax(col))
        if col_scale[j] == 0.0 or col[i_loc] <= PIVOT_RTOL * col_scale[j]:
            continue
        gi = hard_active.pop(i_loc)
        pivot_row = work[gi] / work[gi, j]
        pivot_row[j] = 1.0
        others = hard_active + soft_idx
        if others:
            work[others] -= np.outer(work[others, j], pivot_row)
        conditional[j] = pivot_row
        cond_weights[j] = CONSTRAINT

    marg_rows: List[FloatArray] = []
    marg_weights: List[RowWeight] = []
    # Leftover hard rows have only sub-tolerance frontal entries; they are
    # constraints purely among separator variables (or infeasible).
    for gi in hard_active:
        row = work[gi].copy()
        row[:f] = 0.0
        tail = row[f:]
        if np.max(np.abs(tail[:-1]), initial=0.0) > PIVOT_RTOL * max(overall_scale, 1.0):
            marg_rows.append(tail)
            marg_weights.append(CONSTRAINT)
        elif abs(tail[-1]) > PIVOT_RTOL * max(overall_scale, 1.0) * 1e3:
            raise InfeasibleConstraint(
                f"hard rows are inconsistent: reduced to 0 = {tail[-1]:.3e}"
            )

    # Phase 2: frontal columns without a hard pivot are eliminated from the
    # soft rows by modified Gram-Schmidt.
    remaining = [j for j in range(f) if cond_weights[j] is None]
    soft_work = work[soft_idx] if soft_idx else np.zeros((0, ncols))
    for j in remaining:
        v = soft_work[:, j]
        nrm = float(np.linalg.norm(v))
        if col_scale[j] == 0.0 or nrm <= PIVOT_RTOL * col_scale[j]:
            raise RankDeficient(
                f"frontal column {j} is not spanned by the finite rows"
            )
        qj = v / nrm
        row_j = qj @ soft_work
        row_j[j] = nrm
        soft_work = soft_work - np.outer(qj, row_j)
        soft_work[:, j] = 0.0
        conditional[j] = row_j
        cond_weights[j] = UNIT_WEIGHT

    # Whatever soft content is left belongs to the marginal on the separator.
    for row in soft_work:
        tail = row[f:].copy()
        if np.max(np.abs(tail), initial=0.0) > PIVOT_RTOL * max(overall_scale, 1.0):
            marg_rows.append(tail)
            marg_weights.append(UNIT_WEIGHT)

    marginal = (
        np.vstack(marg_rows) if marg_rows else np.zeros((0, ncols - f))
    )
    return EliminationResult(
        conditional_rows=conditional,
        conditional_weights=tuple(w for w in cond_weights if w is not None),
        marginal_rows=marginal,
        marginal_weights=tuple(marg_weights),
    )


def solve_triangular(r: FloatArray, d: FloatArray) -> FloatArray:
    """Back-substitute the upper-triangular system ``r y = d``.

    Raises SingularDiagonal if any diagonal entry of ``r`` is zero.
    """
    r = np.asarray(r, dtype=float)
    d = np.asarray(d, dtype=float)
    n = r.shape[0]
    if r.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {r.shape}")
    if d.shape != (n,):
        raise ValueError(f"rhs shape {d.shape} does not match matrix size {n}")
    y = np.zeros(n)
    for i in range(n - 1, -1, -1):
        diag = r[i, i]
        if diag == 0.0:
            raise SingularDiagonal(f"zero diagonal at row {i}")
        y[i] = (d[i] - r[i, i + 1 :] @ y[i + 1 :]) / diag
    return y
