"""Bounded-variable linear programs with primal solutions and row duals.

Two backends behind one contract:

* a dense two-phase primal simplex with Bland's rule (deterministic pivots,
  exact duals; the default for the small stage problems), and
* scipy's HiGHS interface for large assembled programs such as the two-stage
  extensive form, where a dense tableau is out of the question.

Row duals follow the value-function convention: ``dual[i] = dV/d rhs[i]`` for
the minimization problem, so a binding ``<=`` row has a nonpositive dual and a
binding ``>=`` row a nonnegative one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

LE, EQ, GE = "<=", "=", ">="

_FEAS_TOL = 1e-9
_COST_TOL = 1e-9
_PHASE1_TOL = 1e-7

BASIC, AT_LOWER, AT_UPPER = 0, 1, 2


class LpError(RuntimeError):
    """Raised for malformed programs or solver breakdowns (never silent)."""


@dataclass
class LinearProgram:
    """min c.x subject to rows (a.x rel rhs) and variable bounds l <= x <= u.

    Rows are stored CSR-style so that million-column extensive forms assemble
    without dense blowup.
    """

    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    row_starts: np.ndarray
    row_cols: np.ndarray
    row_vals: np.ndarray
    relations: list[str]
    rhs: np.ndarray
    var_names: list[str]
    row_names: list[str]

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rhs.shape[0]

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s, e = self.row_starts[i], self.row_starts[i + 1]
        return self.row_cols[s:e], self.row_vals[s:e]

    def var_index(self, name: str) -> int:
        try:
            return self.var_names.index(name)
        except ValueError:
            raise LpError(f"no variable named {name!r}") from None

    def dense_matrix(self) -> np.ndarray:
        a = np.zeros((self.n_rows, self.n_vars))
        if self.row_cols.size:
            row_of = np.repeat(
                np.arange(self.n_rows), np.diff(self.row_starts)
            )
            np.add.at(a, (row_of, self.row_cols), self.row_vals)
        return a

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_rows)
        for i in range(self.n_rows):
            cols, vals = self.row(i)
            out[i] = vals @ x[cols]
        return out

    def with_bounds(self, fixings: dict[int, float]) -> "LinearProgram":
        lower = self.lower.copy()
        upper = self.upper.copy()
        for j, v in fixings.items():
            if not (self.lower[j] - 1e-12 <= v <= self.upper[j] + 1e-12):
                raise LpError(
                    f"fixing {self.var_names[j]}={v} violates bounds "
                    f"[{self.lower[j]}, {self.upper[j]}]"
                )
            lower[j] = upper[j] = v
        return LinearProgram(
            self.c, lower, upper, self.row_starts, self.row_cols, self.row_vals,
            self.relations, self.rhs, self.var_names, self.row_names,
        )


class LpBuilder:
    """Incremental construction of a LinearProgram."""

    def __init__(self):
        self._c: list[float] = []
        self._lo: list[float] = []
        self._hi: list[float] = []
        self._vnames: list[str] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._starts: list[int] = [0]
        self._rels: list[str] = []
        self._rhs: list[float] = []
        self._rnames: list[str] = []

    def add_var(self, name: str, lo: float, hi: float, cost: float = 0.0) -> int:
        if not lo <= hi:
            raise LpError(f"variable {name}: lower {lo} > upper {hi}")
        if not np.isfinite(cost):
            raise LpError(f"variable {name}: non-finite cost {cost}")
        self._vnames.append(name)
        self._lo.append(lo)
        self._hi.append(hi)
        self._c.append(cost)
        return len(self._c) - 1

    def add_row(self, name: str, coeffs, rel: str, rhs: float) -> int:
        if rel not in (LE, EQ, GE):
            raise LpError(f"row {name}: unknown relation {rel!r}")
        if not np.isfinite(rhs):
            raise LpError(f"row {name}: non-finite rhs {rhs}")
        for j, v in coeffs:
            if not np.isfinite(v):
                raise LpError(f"row {name}: non-finite coefficient on column {j}")
            if v != 0.0:
                self._cols.append(j)
                self._vals.append(v)
        self._starts.append(len(self._cols))
        self._rels.append(rel)
        self._rhs.append(rhs)
        self._rnames.append(name)
        return len(self._rhs) - 1

    def build(self) -> LinearProgram:
        n = len(self._c)
        if any(c >= n for c in self._cols):
            raise LpError("row references a column beyond the variable count")
        return LinearProgram(
            c=np.asarray(self._c, dtype=float),
            lower=np.asarray(self._lo, dtype=float),
            upper=np.asarray(self._hi, dtype=float),
            row_starts=np.asarray(self._starts, dtype=np.int64),
            row_cols=np.asarray(self._cols, dtype=np.int64),
            row_vals=np.asarray(self._vals, dtype=float),
            relations=list(self._rels),
            rhs=np.asarray(self._rhs, dtype=float),
            var_names=list(self._vnames),
            row_names=list(self._rnames),
        )


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    basis: np.ndarray | None = field(default=None, repr=False)  # simplex warm-start

    def value(self, lp: LinearProgram, name: str) -> float:
        return float(self.x[lp.var_index(name)])


# --------------------------------------------------------------------------
# dense bounded-variable simplex
# --------------------------------------------------------------------------

_SIMPLEX_SIZE_LIMIT = 4000


def _slack_bounds(rel: str) -> tuple[float, float]:
    if rel == LE:
        return 0.0, np.inf
    if rel == GE:
        return -np.inf, 0.0
    return 0.0, 0.0


class _Simplex:
    """Two-phase primal simplex on min c.z, A z = b, l <= z <= u.

    z stacks [structural vars | row slacks]; artificials are appended for
    phase 1 only.  Entering variable: lowest eligible index (Bland), which
    also breaks leaving ties, so the method cannot cycle and pivots are
    reproducible bit for bit.
    """

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        m, n = lp.n_rows, lp.n_vars
        if m + n > _SIMPLEX_SIZE_LIMIT:
            raise LpError(
                f"dense simplex refused: {n} vars + {m} rows exceeds "
                f"{_SIMPLEX_SIZE_LIMIT}; use the highs backend"
            )
        a = np.zeros((m, n + m))
        a[:, :n] = lp.dense_matrix()
        lo = np.concatenate([lp.lower, np.zeros(m)])
        hi = np.concatenate([lp.upper, np.zeros(m)])
        for i, rel in enumerate(lp.relations):
            lo[n + i], hi[n + i] = _slack_bounds(rel)
            a[i, n + i] = 1.0
        self.a = a
        self.lo = lo
        self.hi = hi
        self.b = lp.rhs.astype(float).copy()
        self.m, self.n = m, n
        self.n_total = n + m

    # -- state: vstat per column, values for nonbasic columns ---------------
    def _nonbasic_value(self, j: int, stat: int) -> float:
        if stat == AT_LOWER:
            v = self.lo[j]
            return v if np.isfinite(v) else 0.0
        v = self.hi[j]
        return v if np.isfinite(v) else 0.0

    def _initial_state(self, warm: np.ndarray | None):
        if warm is not None and warm.shape[0] == self.n_total:
            vstat = warm.astype(np.int8).copy()
            basis = np.flatnonzero(vstat == BASIC)
            if basis.shape[0] == self.m:
                x = self._nonbasic_vector(vstat)
                x[basis] = 0.0
                try:
                    xb = self._basic_values(basis, vstat, x)
                except np.linalg.LinAlgError:
                    xb = None
                if xb is not None and np.all(np.isfinite(xb)):
                    x[basis] = xb
                    if self._within_bounds(basis, x):
                        return vstat, basis.tolist(), x, True
        # cold start: everything nonbasic at its bound, artificials basic
        vstat = np.full(self.n_total, AT_LOWER, dtype=np.int8)
        vstat[~np.isfinite(self.lo) & np.isfinite(self.hi)] = AT_UPPER
        return vstat, None, self._nonbasic_vector(vstat), False

    def _nonbasic_vector(self, vstat) -> np.ndarray:
        lo_val = np.where(np.isfinite(self.lo), self.lo, 0.0)
        hi_val = np.where(np.isfinite(self.hi), self.hi, 0.0)
        return np.where(vstat == AT_UPPER, hi_val, lo_val)

    def _basic_values(self, basis, vstat, x) -> np.ndarray:
        bmat = self.a[:, basis]
        rhs = self.b - self.a @ x + bmat @ x[basis]
        return np.linalg.solve(bmat, rhs)

    def _within_bounds(self, basis, x) -> bool:
        xb = x[basis]
        return bool(
            np.all(xb >= self.lo[basis] - 1e-7) and np.all(xb <= self.hi[basis] + 1e-7)
        )

    def solve(self, warm: np.ndarray | None = None) -> LpSolution:
        vstat, basis, x, warm_ok = self._initial_state(warm)
        if not warm_ok:
            # crash: rows whose slack can absorb the residual start with the
            # slack basic; only the rest get phase-1 artificials
            residual = self.b - self.a @ x
            sigma = np.where(residual >= 0.0, 1.0, -1.0)
            a_art = np.hstack([self.a, np.diag(sigma)])
            lo = np.concatenate([self.lo, np.zeros(self.m)])
            hi = np.concatenate([self.hi, np.full(self.m, np.inf)])
            c1 = np.zeros(self.n_total + self.m)
            x = np.concatenate([x, np.zeros(self.m)])
            vstat = np.concatenate([vstat, np.full(self.m, AT_LOWER, dtype=np.int8)])
            basis = []
            for i in range(self.m):
                s_col = self.n + i
                s_val = residual[i] + x[s_col]  # x[s_col] is the slack's start value
                if self.lo[s_col] - 1e-12 <= s_val <= self.hi[s_col] + 1e-12:
                    x[s_col] = s_val
                    vstat[s_col] = BASIC
                    basis.append(s_col)
                    hi[self.n_total + i] = 0.0  # artificial not needed
                else:
                    art = self.n_total + i
                    x[art] = abs(residual[i])
                    c1[art] = 1.0
                    vstat[art] = BASIC
                    basis.append(art)
            status, basis = self._iterate(a_art, c1, lo, hi, basis, vstat, x, phase=1)
            if status != OPTIMAL:
                raise LpError("phase-1 simplex terminated abnormally")
            if c1 @ x > _PHASE1_TOL:
                return LpSolution(status=INFEASIBLE)
            # freeze artificials at zero and reuse the final basis for phase 2
            hi[self.n_total:] = 0.0
            lo[self.n_total:] = 0.0
            c2 = np.zeros(self.n_total + self.m)
            c2[: self.n] = self.lp.c
            status, basis = self._iterate(a_art, c2, lo, hi, basis, vstat, x, phase=2)
            if status == UNBOUNDED:
                return LpSolution(status=UNBOUNDED)
            a_full, c_full = a_art, c2
        else:
            c2 = np.zeros(self.n_total)
            c2[: self.n] = self.lp.c
            status, basis = self._iterate(
                self.a, c2, self.lo, self.hi, basis, vstat, x, phase=2
            )
            if status == UNBOUNDED:
                return LpSolution(status=UNBOUNDED)
            a_full, c_full = self.a, c2

        bmat = a_full[:, basis]
        y = np.linalg.solve(bmat.T, c_full[basis])
        xs = x[: self.n]
        red = self.lp.c - y @ self.a[:, : self.n]
        return LpSolution(
            status=OPTIMAL,
            x=xs.copy(),
            objective=float(self.lp.c @ xs),
            duals=y.copy(),
            reduced_costs=red,
            basis=vstat[: self.n_total].copy(),
        )

    def _iterate(self, a, c, lo, hi, basis, vstat, x, phase) -> str:
        n_cols = a.shape[1]
        max_pivots = 20000 + 200 * n_cols
        fixed = lo == hi
        basis = np.asarray(basis, dtype=np.int64)
        col_ids = np.arange(n_cols)

        def refactor():
            try:
                inv = np.linalg.inv(a[:, basis])
            except np.linalg.LinAlgError:
                raise LpError(f"singular basis in phase {phase}") from None
            if not np.all(np.isfinite(inv)):
                raise LpError(f"singular basis in phase {phase}")
            return inv

        binv = refactor()
        since_refactor = 0
        for _ in range(max_pivots):
            if since_refactor >= 60:
                binv = refactor()
                since_refactor = 0
            y = c[basis] @ binv
            d = c - y @ a
            eligible = ~fixed & (
                ((vstat == AT_LOWER) & (d < -_COST_TOL))
                | ((vstat == AT_UPPER) & (d > _COST_TOL))
            )
            cand = col_ids[eligible]
            if cand.size == 0:
                return OPTIMAL, basis
            entering = int(cand[0])  # Bland: lowest eligible index
            direction = 1.0 if vstat[entering] == AT_LOWER else -1.0

            w = binv @ a[:, entering]
            delta = direction * w
            xb, lob, hib = x[basis], lo[basis], hi[basis]
            with np.errstate(divide="ignore", invalid="ignore"):
                lim_dn = np.where(delta > 1e-11, (xb - lob) / delta, np.inf)
                lim_up = np.where(delta < -1e-11, (hib - xb) / -delta, np.inf)
            limits = np.minimum(lim_dn, lim_up)
            limits[~np.isfinite(limits)] = np.inf
            best = float(limits.min(initial=np.inf))
            flip = hi[entering] - lo[entering]
            use_flip = np.isfinite(flip) and flip < best - 1e-12
            if use_flip:
                step = flip
            elif not np.isfinite(best):
                return UNBOUNDED, basis
            else:
                step = max(best, 0.0)
                ties = np.flatnonzero(limits <= best + 1e-12)
                leaving_pos = int(ties[np.argmin(basis[ties])])  # Bland tie-break
                leaving_to = AT_LOWER if lim_dn[leaving_pos] <= lim_up[leaving_pos] else AT_UPPER

            x[entering] += direction * step
            x[basis] -= delta * step
            if use_flip:
                vstat[entering] = AT_UPPER if direction > 0 else AT_LOWER
                x[entering] = hi[entering] if direction > 0 else lo[entering]
                continue
            out = basis[leaving_pos]
            vstat[out] = leaving_to
            x[out] = lo[out] if leaving_to == AT_LOWER else hi[out]
            vstat[entering] = BASIC
            basis[leaving_pos] = entering
            # product-form inverse update: O(m^2) instead of refactorizing
            pivot = w[leaving_pos]
            if abs(pivot) < 1e-11:
                binv = refactor()
                since_refactor = 0
            else:
                row = binv[leaving_pos] / pivot
                binv -= np.outer(w, row)
                binv[leaving_pos] = row
                since_refactor += 1
        raise LpError(f"simplex exceeded {max_pivots} pivots in phase {phase}")


# --------------------------------------------------------------------------
# HiGHS backend (large instances)
# --------------------------------------------------------------------------

def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy import sparse
    from scipy.optimize import linprog

    rels = np.array([{LE: 0, EQ: 1, GE: 2}[r] for r in lp.relations], dtype=np.int8)
    row_lens = np.diff(lp.row_starts)
    row_of = np.repeat(np.arange(lp.n_rows), row_lens)
    keep_ub = rels[row_of] != 1
    sign = np.where(rels[row_of] == 2, -1.0, 1.0)

    a_ub = sparse.csr_matrix(
        (lp.row_vals[keep_ub] * sign[keep_ub],
         (row_of[keep_ub], lp.row_cols[keep_ub])),
        shape=(lp.n_rows, lp.n_vars),
    )
    ub_rows = np.flatnonzero(rels != 1)
    a_ub = a_ub[ub_rows]
    b_ub = np.where(rels[ub_rows] == 2, -lp.rhs[ub_rows], lp.rhs[ub_rows])

    keep_eq = ~keep_ub
    a_eq = sparse.csr_matrix(
        (lp.row_vals[keep_eq], (row_of[keep_eq], lp.row_cols[keep_eq])),
        shape=(lp.n_rows, lp.n_vars),
    )
    eq_rows = np.flatnonzero(rels == 1)
    a_eq = a_eq[eq_rows]
    b_eq = lp.rhs[eq_rows]

    res = linprog(
        lp.c,
        A_ub=a_ub if ub_rows.size else None,
        b_ub=b_ub if ub_rows.size else None,
        A_eq=a_eq if eq_rows.size else None,
        b_eq=b_eq if eq_rows.size else None,
        bounds=np.column_stack([lp.lower, lp.upper]),
        method="highs",
    )
    if res.status == 2:
        return LpSolution(status=INFEASIBLE)
    if res.status == 3:
        return LpSolution(status=UNBOUNDED)
    if res.status != 0:
        raise LpError(f"highs failed: {res.message}")

    duals = np.zeros(lp.n_rows)
    if ub_rows.size:
        mus = np.asarray(res.ineqlin.marginals)
        duals[ub_rows] = np.where(rels[ub_rows] == 2, -mus, mus)
    if eq_rows.size:
        duals[eq_rows] = np.asarray(res.eqlin.marginals)
    red = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return LpSolution(
        status=OPTIMAL,
        x=np.asarray(res.x),
        objective=float(res.fun),
        duals=duals,
        reduced_costs=red,
    )


_AUTO_SIMPLEX_LIMIT = 600


def solve(
    lp: LinearProgram,
    backend: str = "auto",
    warm_basis: np.ndarray | None = None,
) -> LpSolution:
    """Solve the program; deterministic for identical inputs on either backend."""
    if backend == "auto":
        backend = "simplex" if lp.n_vars + lp.n_rows <= _AUTO_SIMPLEX_LIMIT else "highs"
    if backend == "simplex":
        return _Simplex(lp).solve(warm=warm_basis)
    if backend == "highs":
        return _solve_highs(lp)
    raise LpError(f"unknown backend {backend!r}")


def solve_with_fixed(
    lp: LinearProgram,
    fixings: dict[str, float],
    backend: str = "auto",
    warm_basis: np.ndarray | None = None,
) -> LpSolution:
    """Solve with named variables pinned to values (bounds narrowed to a point)."""
    if not fixings:
        return solve(lp, backend=backend, warm_basis=warm_basis)
    by_index = {lp.var_index(name): v for name, v in fixings.items()}
    return solve(lp.with_bounds(by_index), backend=backend, warm_basis=warm_basis)


def to_lp_text(lp: LinearProgram) -> str:
    """Render in CPLEX LP interchange format for cross-checks against other solvers."""
    out = ["Minimize", " obj:"]
    terms = [
        f" {c:+.12g} {name}" for c, name in zip(lp.c, lp.var_names) if c != 0.0
    ]
    out[1] += "".join(terms) if terms else " 0 " + lp.var_names[0]
    out.append("Subject To")
    for i in range(lp.n_rows):
        cols, vals = lp.row(i)
        body = "".join(
            f" {v:+.12g} {lp.var_names[j]}" for j, v in zip(cols, vals)
        )
        rel = {LE: "<=", EQ: "=", GE: ">="}[lp.relations[i]]
        out.append(f" {lp.row_names[i]}:{body} {rel} {lp.rhs[i]:.12g}")
    out.append("Bounds")
    for j, name in enumerate(lp.var_names):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == hi:
            out.append(f" {name} = {lo:.12g}")
        elif not np.isfinite(lo) and not np.isfinite(hi):
            out.append(f" {name} free")
        elif not np.isfinite(hi):
            out.append(f" {lo:.12g} <= {name}")
        elif not np.isfinite(lo):
            out.append(f" -inf <= {name} <= {hi:.12g}")
        else:
            out.append(f" {lo:.12g} <= {name} <= {hi:.12g}")
    out.append("End")
    return "\n".join(out) + "\n"
