"""Exact rational linear programming.

Dense two-phase tableau simplex with Bland's rule. Arithmetic runs on
``gmpy2.mpq`` and results come back as ``fractions.Fraction``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from gmpy2 import mpq

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

_ZERO = mpq(0)
_ONE = mpq(1)


class LPError(RuntimeError):
    """An LP that must be solvable turned out infeasible or unbounded."""


@dataclass
class LinearProgram:
    """``minimize c.x`` subject to sparse equality and ``<=`` rows.

    Variables are non-negative unless listed in ``free``. Rows are
    mappings from variable index to coefficient.
    """

    n_vars: int
    objective: dict[int, Fraction] = field(default_factory=dict)
    eq_rows: list[tuple[dict[int, Fraction], Fraction]] = field(default_factory=list)
    le_rows: list[tuple[dict[int, Fraction], Fraction]] = field(default_factory=list)
    free: set[int] = field(default_factory=set)

    def add_eq(self, coeffs: Mapping[int, Fraction], rhs) -> None:
        self._check(coeffs)
        self.eq_rows.append((dict(coeffs), Fraction(rhs)))

    def add_le(self, coeffs: Mapping[int, Fraction], rhs) -> None:
        self._check(coeffs)
        self.le_rows.append((dict(coeffs), Fraction(rhs)))

    def add_ge(self, coeffs: Mapping[int, Fraction], rhs) -> None:
        self.add_le({k: -v for k, v in coeffs.items()}, -Fraction(rhs))

    def _check(self, coeffs: Mapping[int, Fraction]) -> None:
        for k in coeffs:
            if not 0 <= k < self.n_vars:
                raise IndexError(f"variable {k} out of range 0..{self.n_vars - 1}")

    def solve(self) -> "LPResult":
        return simplex(self)


@dataclass
class LPResult:
    status: str
    x: list[Fraction] | None = None
    value: Fraction | None = None

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def simplex(lp: LinearProgram) -> LPResult:
    # Column layout: original vars (free ones get a negative twin appended),
    # then one slack per <= row, then artificials.
    columns: list[tuple[int, int]] = [(k, 1) for k in range(lp.n_vars)]
    for k in sorted(lp.free):
        columns.append((k, -1))
    twin = {k: lp.n_vars + pos for pos, k in enumerate(sorted(lp.free))}
    n_struct = len(columns)

    rows: list[list] = []
    rhs: list = []
    basis: list[int] = []
    n_le = len(lp.le_rows)
    n_cols = n_struct + n_le
    needs_artificial: list[int] = []

    def expand(coeffs: Mapping[int, Fraction]) -> list:
        row = [_ZERO] * n_cols
        for k, v in coeffs.items():
            v = mpq(v.numerator, v.denominator) if isinstance(v, Fraction) else mpq(v)
            row[k] += v
            if k in twin:
                row[twin[k]] -= v
        return row

    for r, (coeffs, b) in enumerate(lp.le_rows):
        row = expand(coeffs)
        row[n_struct + r] = _ONE
        b = mpq(b.numerator, b.denominator)
        if b < 0:
            row = [-v for v in row]
            b = -b
            needs_artificial.append(len(rows))
            basis.append(-1)
        else:
            basis.append(n_struct + r)
        rows.append(row)
        rhs.append(b)
    for coeffs, b in lp.eq_rows:
        row = expand(coeffs)
        b = mpq(b.numerator, b.denominator)
        if b < 0:
            row = [-v for v in row]
            b = -b
        needs_artificial.append(len(rows))
        basis.append(-1)
        rows.append(row)
        rhs.append(b)

    n_art = len(needs_artificial)
    total = n_cols + n_art
    for row in rows:
        row.extend([_ZERO] * n_art)
    for a, r in enumerate(needs_artificial):
        rows[r][n_cols + a] = _ONE
        basis[r] = n_cols + a

    tab = _Tableau(rows, rhs, basis, total)

    if n_art:
        cost = [_ZERO] * n_cols + [_ONE] * n_art
        tab.set_objective(cost)
        tab.run(allowed=total)
        if tab.objective_value() != 0:
            return LPResult(INFEASIBLE)
        tab.drive_out_artificials(n_cols)

    cost = [_ZERO] * n_cols
    for k, v in lp.objective.items():
        v = mpq(v.numerator, v.denominator) if isinstance(v, Fraction) else mpq(v)
        cost[k] += v
        if k in twin:
            cost[twin[k]] -= v
    tab.truncate(n_cols)
    tab.set_objective(cost)
    if not tab.run(allowed=n_cols):
        return LPResult(UNBOUNDED)

    values = [_ZERO] * n_cols
    for r, var in enumerate(tab.basis):
        values[var] = tab.rhs[r]
    x = []
    for k in range(lp.n_vars):
        v = values[k] - (values[twin[k]] if k in twin else _ZERO)
        x.append(Fraction(int(v.numerator), int(v.denominator)))
    val = tab.objective_value()
    return LPResult(OPTIMAL, x, Fraction(int(val.numerator), int(val.denominator)))


class _Tableau:
    def __init__(self, rows, rhs, basis, n_cols):
        self.rows = rows
        self.rhs = rhs
        self.basis = basis
        self.n_cols = n_cols
        self.reduced: list = []
        self.obj = _ZERO
        self.cost: list = []

    def set_objective(self, cost: Sequence) -> None:
        self.cost = list(cost)
        red = list(cost)
        obj = _ZERO
        for r, var in enumerate(self.basis):
            c = cost[var]
            if c:
                row = self.rows[r]
                for k in range(len(red)):
                    if row[k]:
                        red[k] -= c * row[k]
                obj += c * self.rhs[r]
        self.reduced = red
        self.obj = obj

    def objective_value(self):
        return self.obj

    def run(self, allowed: int) -> bool:
        """Pivot until optimal; False when unbounded."""
        while True:
            enter = next((k for k in range(allowed) if self.reduced[k] < 0), None)
            if enter is None:
                return True
            leave = None
            best = None
            for r, row in enumerate(self.rows):
                a = row[enter]
                if a > 0:
                    ratio = self.rhs[r] / a
                    if (
                        best is None
                        or ratio < best
                        or (ratio == best and self.basis[r] < self.basis[leave])
                    ):
                        best, leave = ratio, r
            if leave is None:
                return False
            self.pivot(leave, enter)

    def pivot(self, r: int, c: int) -> None:
        row = self.rows[r]
        p = row[c]
        if p != 1:
            inv = 1 / p
            row = [v * inv if v else v for v in row]
            self.rows[r] = row
            self.rhs[r] *= inv
        nz = [k for k, v in enumerate(row) if v]
        b = self.rhs[r]
        for r2, other in enumerate(self.rows):
            if r2 != r:
                f = other[c]
                if f:
                    for k in nz:
                        other[k] -= f * row[k]
                    self.rhs[r2] -= f * b
        f = self.reduced[c]
        if f:
            for k in nz:
                self.reduced[k] -= f * row[k]
            self.obj += f * b
        self.basis[r] = c

    def drive_out_artificials(self, n_cols: int) -> None:
        r = 0
        while r < len(self.rows):
            if self.basis[r] >= n_cols:
                row = self.rows[r]
                enter = next((k for k in range(n_cols) if row[k]), None)
                if enter is None:
                    # redundant equality
                    del self.rows[r]
                    del self.rhs[r]
                    del self.basis[r]
                    continue
                self.pivot(r, enter)
            r += 1

    def truncate(self, n_cols: int) -> None:
        self.rows = [row[:n_cols] for row in self.rows]
        self.n_cols = n_cols
