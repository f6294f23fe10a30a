"""Standard-form cone programs and the solver adapter.

A program is ``min c'x  s.t.  A x = b,  x_i in cones`` where each cone
membership is either a nonnegative orthant over a variable set or a
second-order cone over an ordered variable list (radius first). The
builder keeps memberships disjoint by construction; constants enter
cones only through auxiliary variables pinned by equalities.

The solve adapter is deliberately narrow: any conic backend satisfying
the residual contract can sit behind it. The current backend is
clarabel's interior-point solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
NUMERICAL_LIMIT = "numerical_limit"

RESIDUAL_TOL = 1e-7


@dataclass(frozen=True)
class NonnegativeCone:
    vars: tuple[int, ...]


@dataclass(frozen=True)
class SecondOrderCone:
    vars: tuple[int, ...]  # radius first, then components


@dataclass
class ConicProgram:
    n_vars: int
    c: np.ndarray
    # equalities in triplet form, kept for serialization and residual checks
    a_rows: np.ndarray
    a_cols: np.ndarray
    a_vals: np.ndarray
    b: np.ndarray
    cones: list
    var_names: list[str] = field(default_factory=list)

    @property
    def n_eq(self) -> int:
        return len(self.b)

    def equalities(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(
            (self.a_vals, (self.a_rows, self.a_cols)),
            shape=(self.n_eq, self.n_vars))

    def soc_count(self) -> int:
        return sum(1 for c in self.cones if isinstance(c, SecondOrderCone))


@dataclass(frozen=True)
class ConicSolution:
    x: np.ndarray
    status: str  # optimal | infeasible | numerical_limit
    objective: float
    diagnostics: dict


class ProgramBuilder:
    """Incremental construction of a standard-form program."""

    def __init__(self):
        self._names: list[str] = []
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._b: list[float] = []
        self._obj: dict[int, float] = {}
        self._cones: list = []
        self._in_cone: set[int] = set()

    def var(self, name: str) -> int:
        self._names.append(name)
        return len(self._names) - 1

    def nonneg_var(self, name: str) -> int:
        i = self.var(name)
        self._cones.append(NonnegativeCone((i,)))
        self._in_cone.add(i)
        return i

    def add_eq(self, coeffs: dict[int, float], rhs: float) -> int:
        """Add sum(coeff * x) = rhs; returns the row index."""
        row = len(self._b)
        for col, val in coeffs.items():
            if val != 0.0:
                self._rows.append(row)
                self._cols.append(col)
                self._vals.append(float(val))
        self._b.append(float(rhs))
        return row

    def add_le(self, coeffs: dict[int, float], rhs: float, slack_name: str) -> int:
        """Add sum(coeff * x) <= rhs via an explicit nonnegative slack."""
        s = self.nonneg_var(slack_name)
        full = dict(coeffs)
        full[s] = full.get(s, 0.0) + 1.0
        self.add_eq(full, rhs)
        return s

    def add_soc(self, ordered_vars: list[int]) -> None:
        """Membership ||x[1:]|| <= x[0] over fresh, disjoint variables."""
        for i in ordered_vars:
            if i in self._in_cone:
                raise ValueError(f"variable {self._names[i]} already in a cone")
            self._in_cone.add(i)
        self._cones.append(SecondOrderCone(tuple(ordered_vars)))

    def soc_of_expr(self, tag: str, radius: tuple[dict[int, float], float],
                    components: list[tuple[dict[int, float], float]]) -> None:
        """||(expr_1, ...)|| <= expr_0 through pinned auxiliary variables.

        Each expr is (linear coefficients, constant). Auxiliaries keep
        cone memberships disjoint even when expressions share variables.
        """
        aux = [self.var(f"{tag}.soc{k}") for k in range(len(components) + 1)]
        coeffs, const = radius
        eq = {i: -v for i, v in coeffs.items()}
        eq[aux[0]] = eq.get(aux[0], 0.0) + 1.0
        self.add_eq(eq, const)
        for k, (coeffs, const) in enumerate(components, start=1):
            eq = {i: -v for i, v in coeffs.items()}
            eq[aux[k]] = eq.get(aux[k], 0.0) + 1.0
            self.add_eq(eq, const)
        self.add_soc(aux)

    def set_objective(self, coeffs: dict[int, float]) -> None:
        self._obj = dict(coeffs)

    def add_objective(self, var: int, coeff: float) -> None:
        self._obj[var] = self._obj.get(var, 0.0) + coeff

    def build(self) -> ConicProgram:
        n = len(self._names)
        c = np.zeros(n)
        for i, v in self._obj.items():
            c[i] = v
        return ConicProgram(
            n_vars=n,
            c=c,
            a_rows=np.asarray(self._rows, dtype=np.int64),
            a_cols=np.asarray(self._cols, dtype=np.int64),
            a_vals=np.asarray(self._vals, dtype=float),
            b=np.asarray(self._b, dtype=float),
            cones=list(self._cones),
            var_names=list(self._names),
        )


def solve(program: ConicProgram, verbose: bool = False) -> ConicSolution:
    """Solve a standard-form program with the clarabel backend.

    On ``optimal`` the primal equality residual and the cone violations
    are both verified to be below 1e-7; a solver that claims success
    without meeting that is downgraded to ``numerical_limit``.
    """
    n = program.n_vars
    a_eq = sparse.coo_matrix(
        (program.a_vals, (program.a_rows, program.a_cols)),
        shape=(program.n_eq, n))

    # clarabel form: A x + s = b, s in K. Equalities first (zero cone),
    # then one row per cone-member variable: s = x_i.
    blocks = [a_eq]
    rhs = [program.b]
    cones = [clarabel.ZeroConeT(program.n_eq)] if program.n_eq else []
    nonneg = [i for c in program.cones if isinstance(c, NonnegativeCone) for i in c.vars]
    if nonneg:
        sel = sparse.coo_matrix(
            (-np.ones(len(nonneg)), (np.arange(len(nonneg)), nonneg)),
            shape=(len(nonneg), n))
        blocks.append(sel)
        rhs.append(np.zeros(len(nonneg)))
        cones.append(clarabel.NonnegativeConeT(len(nonneg)))
    for cone in program.cones:
        if isinstance(cone, SecondOrderCone):
            idx = list(cone.vars)
            sel = sparse.coo_matrix(
                (-np.ones(len(idx)), (np.arange(len(idx)), idx)),
                shape=(len(idx), n))
            blocks.append(sel)
            rhs.append(np.zeros(len(idx)))
            cones.append(clarabel.SecondOrderConeT(len(idx)))

    a_full = sparse.vstack(blocks).tocsc()
    b_full = np.concatenate(rhs)
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    solver = clarabel.DefaultSolver(
        sparse.csc_matrix((n, n)), program.c, a_full, b_full, cones, settings)
    raw = solver.solve()
    status_str = str(raw.status)
    x = np.asarray(raw.x)

    diagnostics = {
        "backend": "clarabel",
        "backend_status": status_str,
        "iterations": raw.iterations,
        "solve_time": raw.solve_time,
    }
    if status_str in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return ConicSolution(x, INFEASIBLE, float("nan"), diagnostics)
    if status_str not in ("Solved", "AlmostSolved"):
        return ConicSolution(x, NUMERICAL_LIMIT, float("nan"), diagnostics)

    eq_res, cone_res = residuals(program, x)
    diagnostics["eq_residual"] = eq_res
    diagnostics["cone_residual"] = cone_res
    status = OPTIMAL if max(eq_res, cone_res) <= RESIDUAL_TOL else NUMERICAL_LIMIT
    return ConicSolution(x, status, float(program.c @ x), diagnostics)


def residuals(program: ConicProgram, x: np.ndarray) -> tuple[float, float]:
    """(equality, cone) infinity-norm violations of a candidate point."""
    if program.n_eq:
        eq_res = float(np.max(np.abs(program.equalities() @ x - program.b)))
    else:
        eq_res = 0.0
    cone_res = 0.0
    for cone in program.cones:
        if isinstance(cone, NonnegativeCone):
            for i in cone.vars:
                cone_res = max(cone_res, -float(x[i]))
        else:
            r = float(x[cone.vars[0]])
            tail = np.array([x[i] for i in cone.vars[1:]])
            cone_res = max(cone_res, float(np.linalg.norm(tail)) - r)
    return eq_res, max(0.0, cone_res)


def to_json(program: ConicProgram) -> str:
    """Serialize to the documented cross-solver debugging structure."""
    doc = {
        "n_vars": program.n_vars,
        "objective": program.c.tolist(),
        "equalities": {
            "rows": program.a_rows.tolist(),
            "cols": program.a_cols.tolist(),
            "vals": program.a_vals.tolist(),
            "rhs": program.b.tolist(),
        },
        "cones": [
            {"type": "nonnegative" if isinstance(c, NonnegativeCone) else "second_order",
             "vars": list(c.vars)}
            for c in program.cones
        ],
        "var_names": program.var_names,
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def from_json(text: str) -> ConicProgram:
    doc = json.loads(text)
    cones = []
    for rec in doc["cones"]:
        cls = NonnegativeCone if rec["type"] == "nonnegative" else SecondOrderCone
        cones.append(cls(tuple(rec["vars"])))
    eq = doc["equalities"]
    return ConicProgram(
        n_vars=int(doc["n_vars"]),
        c=np.asarray(doc["objective"], dtype=float),
        a_rows=np.asarray(eq["rows"], dtype=np.int64),
        a_cols=np.asarray(eq["cols"], dtype=np.int64),
        a_vals=np.asarray(eq["vals"], dtype=float),
        b=np.asarray(eq["rhs"], dtype=float),
        cones=cones,
        var_names=list(doc.get("var_names", [])),
    )
