"""Compile the agents' logical constraints into mixed-integer affine rows.

Every implication of the charging problem is rewritten with four standard
big-M gadgets (threshold indicators in both directions, logical AND, and the
product of a binary with a bounded expression). The big-M values are always
the exact bounds of the guarded expression over the variable box.

The compiled set can be checked point-wise, dumped as LP-style text, or
handed to ``scipy.optimize.milp`` to decide whether auxiliaries exist that
complete a given partial assignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import coo_matrix

from .strategy import (
    Aggregates,
    GameContext,
    Strategy,
    VehicleParams,
    pulse_width_target,
)

GADGET_EPS = 1e-6
ROW_TOL = 1e-9
VERIFY_TOL = 1e-7

CONTINUOUS = "continuous"
BINARY = "binary"
INTEGER = "integer"


class GadgetError(ValueError):
    """A gadget would be vacuous or infeasible for the given bounds."""


@dataclass(frozen=True, order=True)
class VarRef:
    owner: int
    name: str
    t: int
    kind: str = field(default=CONTINUOUS, compare=False)

    def __str__(self) -> str:
        return f"{self.name}_{self.owner}_{self.t}"


@dataclass
class Affine:
    """``const + sum coef * var``."""

    coeffs: dict[VarRef, float] = field(default_factory=dict)
    const: float = 0.0

    @classmethod
    def of(cls, v: VarRef, coef: float = 1.0) -> "Affine":
        return cls({v: coef}, 0.0)

    @classmethod
    def constant(cls, c: float) -> "Affine":
        return cls({}, float(c))

    def __add__(self, other) -> "Affine":
        other = _as_affine(other)
        coeffs = dict(self.coeffs)
        for v, c in other.coeffs.items():
            coeffs[v] = coeffs.get(v, 0.0) + c
        return Affine(coeffs, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine({v: -c for v, c in self.coeffs.items()}, -self.const)

    def __sub__(self, other) -> "Affine":
        return self + (-_as_affine(other))

    def __rsub__(self, other) -> "Affine":
        return _as_affine(other) - self

    def __mul__(self, k: float) -> "Affine":
        return Affine({v: c * k for v, c in self.coeffs.items()}, self.const * k)

    __rmul__ = __mul__

    def value(self, assignment: Mapping[VarRef, float]) -> float:
        return self.const + sum(c * assignment[v] for v, c in self.coeffs.items())


def _as_affine(x) -> Affine:
    if isinstance(x, Affine):
        return x
    if isinstance(x, VarRef):
        return Affine.of(x)
    return Affine.constant(float(x))


@dataclass
class Row:
    """``expr <= 0`` or ``expr == 0``; ``tag`` names the constraint it came from."""

    expr: Affine
    sense: str
    tag: str

    def residual(self, assignment: Mapping[VarRef, float]) -> float:
        return self.expr.value(assignment)

    def satisfied(self, assignment: Mapping[VarRef, float], tol: float = ROW_TOL) -> bool:
        r = self.residual(assignment)
        return abs(r) <= tol if self.sense == "==" else r <= tol


def le(lhs, rhs, tag: str) -> Row:
    return Row(_as_affine(lhs) - _as_affine(rhs), "<=", tag)


def ge(lhs, rhs, tag: str) -> Row:
    return Row(_as_affine(rhs) - _as_affine(lhs), "<=", tag)


def eq(lhs, rhs, tag: str) -> Row:
    return Row(_as_affine(lhs) - _as_affine(rhs), "==", tag)


@dataclass
class MixedIntegerConstraintSet:
    bounds: dict[VarRef, tuple[float, float]] = field(default_factory=dict)
    rows: list[Row] = field(default_factory=list)

    def declare(self, v: VarRef, lo: float, hi: float) -> VarRef:
        if v.kind == BINARY:
            lo, hi = 0.0, 1.0
        self.bounds[v] = (float(lo), float(hi))
        return v

    def add(self, rows: Iterable[Row]) -> None:
        for r in rows:
            for v in r.expr.coeffs:
                if v not in self.bounds:
                    raise KeyError(f"row {r.tag} uses undeclared variable {v}")
            self.rows.append(r)

    def extend(self, other: "MixedIntegerConstraintSet") -> None:
        self.bounds.update(other.bounds)
        self.rows.extend(other.rows)

    def bounds_of(self, expr) -> tuple[float, float]:
        """Exact range of an affine expression over the variable box."""
        expr = _as_affine(expr)
        lo = hi = expr.const
        for v, c in expr.coeffs.items():
            a, b = self.bounds[v]
            lo += min(c * a, c * b)
            hi += max(c * a, c * b)
        return lo, hi

    @property
    def variables(self) -> list[VarRef]:
        return sorted(self.bounds)

    def violated(self, assignment: Mapping[VarRef, float], tol: float = ROW_TOL) -> list[str]:
        bad = []
        for v, (lo, hi) in self.bounds.items():
            val = assignment[v]
            if val < lo - tol or val > hi + tol:
                bad.append(f"bounds:{v}")
            elif v.kind != CONTINUOUS and abs(val - round(val)) > tol:
                bad.append(f"integrality:{v}")
        bad.extend(r.tag for r in self.rows if not r.satisfied(assignment, tol))
        return bad

    def check(self, assignment: Mapping[VarRef, float], tol: float = ROW_TOL) -> bool:
        return not self.violated(assignment, tol)

    def to_lp_text(self) -> str:
        lines = ["\\ mixed-integer feasibility problem", "Minimize", " obj: 0", "Subject To"]
        for i, r in enumerate(self.rows):
            terms = " ".join(f"{c:+.12g} {v}" for v, c in sorted(r.expr.coeffs.items()) if c != 0)
            op = "=" if r.sense == "==" else "<="
            lines.append(f" r{i}_{r.tag.replace('[', '_').replace(']', '')}: {terms or '0 dummy'} {op} {-r.expr.const:.12g}")
        lines.append("Bounds")
        for v in self.variables:
            lo, hi = self.bounds[v]
            lines.append(f" {lo:.12g} <= {v} <= {hi:.12g}")
        generals = [str(v) for v in self.variables if v.kind == INTEGER]
        binaries = [str(v) for v in self.variables if v.kind == BINARY]
        if generals:
            lines += ["Generals", " " + " ".join(generals)]
        if binaries:
            lines += ["Binaries", " " + " ".join(binaries)]
        lines.append("End")
        return "\n".join(lines) + "\n"

    def _compiled(self):
        key = (len(self.bounds), len(self.rows))
        cached = getattr(self, "_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        variables = self.variables
        index = {v: i for i, v in enumerate(variables)}
        lo = np.array([self.bounds[v][0] for v in variables])
        hi = np.array([self.bounds[v][1] for v in variables])
        integrality = np.array([0 if v.kind == CONTINUOUS else 1 for v in variables])
        rows, cols, data, upper, lower = [], [], [], [], []
        for ri, r in enumerate(self.rows):
            for v, c in r.expr.coeffs.items():
                if c != 0:
                    rows.append(ri)
                    cols.append(index[v])
                    data.append(c)
            upper.append(-r.expr.const)
            lower.append(-r.expr.const if r.sense == "==" else -np.inf)
        constraints = []
        if self.rows:
            A = coo_matrix((data, (rows, cols)), shape=(len(self.rows), len(variables))).tocsr()
            constraints.append(LinearConstraint(A, np.array(lower), np.array(upper)))
        compiled = (variables, index, lo, hi, integrality, constraints)
        self._cache = (key, compiled)
        return compiled

    def solve_feasibility(self, fixed: Mapping[VarRef, float] | None = None) -> dict[VarRef, float] | None:
        """Find an integer-feasible point agreeing with ``fixed``; ``None`` when there is none."""
        variables, index, lo, hi, integrality, constraints = self._compiled()
        lo, hi = lo.copy(), hi.copy()
        for v, val in (fixed or {}).items():
            i = index[v]
            if val < lo[i] - ROW_TOL or val > hi[i] + ROW_TOL:
                return None
            lo[i] = hi[i] = val
        res = milp(
            c=np.zeros(len(variables)),
            integrality=integrality,
            bounds=Bounds(lo, hi),
            constraints=constraints,
        )
        if res.status != 0 or res.x is None:
            return None
        point = {
            v: float(round(res.x[i])) if v.kind != CONTINUOUS else float(res.x[i])
            for i, v in enumerate(variables)
        }
        # the solver's own tolerance is wider than the gadget band, so re-check
        if not self.check(point, VERIFY_TOL):
            return None
        return point


# --- gadgets ------------------------------------------------------------------

def gadget_geq(phi: VarRef, f, c: float, M: float, m: float, eps: float = GADGET_EPS, tag: str = "geq") -> list[Row]:
    """``[phi = 1] <=> [f >= c]``; values of ``f`` in ``(c - eps, c)`` are excluded."""
    if M < c or m > c:
        raise GadgetError(f"{tag}: threshold {c} outside the range [{m}, {M}] of the expression")
    f = _as_affine(f)
    return [
        le((c - m) * Affine.of(phi), f - m, f"{tag}:lower"),
        ge((M - c + eps) * Affine.of(phi), f - c + eps, f"{tag}:upper"),
    ]


def gadget_leq(phi: VarRef, f, c: float, M: float, m: float, eps: float = GADGET_EPS, tag: str = "leq") -> list[Row]:
    """``[phi = 1] <=> [f <= c]``; values of ``f`` in ``(c, c + eps)`` are excluded."""
    if M < c or m > c:
        raise GadgetError(f"{tag}: threshold {c} outside the range [{m}, {M}] of the expression")
    f = _as_affine(f)
    return [
        le((M - c) * Affine.of(phi), M - f, f"{tag}:upper"),
        ge((c + eps - m) * Affine.of(phi), eps + c - f, f"{tag}:lower"),
    ]


def gadget_and(phi: VarRef, sigma, tau, tag: str = "and") -> list[Row]:
    """``[phi = 1] <=> [sigma = 1] and [tau = 1]``; inputs may be affine in binaries (e.g. ``1 - x``)."""
    p = Affine.of(phi)
    sigma, tau = _as_affine(sigma), _as_affine(tau)
    return [
        le(p - sigma, 0, f"{tag}:left"),
        le(p - tau, 0, f"{tag}:right"),
        le(sigma + tau - p, 1, f"{tag}:both"),
    ]


def gadget_product(g: VarRef, f, phi: VarRef, M: float, m: float, tag: str = "product") -> list[Row]:
    """``g = phi * f`` for ``f`` in ``[m, M]``."""
    if m > M:
        raise GadgetError(f"{tag}: empty range [{m}, {M}]")
    f = _as_affine(f)
    G, P = Affine.of(g), Affine.of(phi)
    return [
        le(m * P, G, f"{tag}:g_lower"),
        le(G, M * P, f"{tag}:g_upper"),
        le(-M * (1 - P), G - f, f"{tag}:diff_lower"),
        le(G - f, -m * (1 - P), f"{tag}:diff_upper"),
    ]


# --- per-agent compilation ----------------------------------------------------

def agent_vars(owner: int, context: GameContext) -> dict[str, list[VarRef]]:
    H = context.horizon.length
    hbar = context.station.min_charge_intervals

    def series(name, kind, n=H):
        return [VarRef(owner, name, t, kind) for t in range(n)]

    out = {
        "u": series("u", CONTINUOUS),
        "x": series("x", CONTINUOUS, H + 1),
        "delta": series("delta", BINARY),
        "theta": series("theta", BINARY),
        "phi_lh": series("phi_lh", BINARY),
        "phi_hl": series("phi_hl", BINARY),
        "psi": series("psi", BINARY),
        "sigma": series("sigma", BINARY),
        "omega": series("omega", BINARY),
        "g": series("g", INTEGER, H - 1),
        "q": series("q", INTEGER, H - 1),
        "nu": [VarRef(owner, "nu", 0, BINARY)],
    }
    for h in range(1, hbar + 1):
        out[f"mu{h}"] = series(f"mu{h}", BINARY)
    return out


def compile_agent(
    params: VehicleParams,
    context: GameContext,
    others: Aggregates | None = None,
    owner: int = 0,
    eps: float = GADGET_EPS,
    include_coupling: bool = True,
) -> MixedIntegerConstraintSet:
    """Rows of one agent's feasible set, the other agents entering as constants."""
    H = context.horizon.length
    W = context.horizon.half_width
    st = context.station
    hbar = st.min_charge_intervals
    V = agent_vars(owner, context)
    cs = MixedIntegerConstraintSet()

    for v in V["u"]:
        cs.declare(v, 0.0, st.u_max_per_vehicle)
    for v in V["x"]:
        cs.declare(v, 0.0, 1.0)
    target = pulse_width_target(context.horizon)
    for t in range(H - 1):
        cs.declare(V["g"][t], -target[t], H - target[t])
        cs.declare(V["q"][t], -target[t], H - target[t])
    for name, series in V.items():
        if name not in ("u", "x", "g", "q"):
            for v in series:
                cs.declare(v, 0, 1)

    u, x, d, th = V["u"], V["x"], V["delta"], V["theta"]
    A = Affine.of

    # state of charge
    cs.add([eq(A(x[0]), params.x0, "soc_initial")])
    cs.add(eq(A(x[t + 1]), A(x[t]) + params.b * A(u[t]), f"soc_dynamics[{t}]") for t in range(H))

    # energy only while plugged, at least the minimum when plugged
    for t in range(H):
        cs.add([le(A(u[t]), st.u_max_per_vehicle * A(d[t]), f"energy_upper[{t}]")])
        cs.add(gadget_geq(d[t], A(u[t]), st.u_min, st.u_max_per_vehicle, 0.0, eps, f"charge_indicator[{t}]"))

    # rising / falling edges of the entry pulse; theta(-1) = 0
    for t in range(H):
        prev = A(th[t - 1]) if t > 0 else Affine.constant(0.0)
        cs.add(gadget_and(V["phi_lh"][t], 1 - prev, A(th[t]), f"rising_edge[{t}]"))
        cs.add(gadget_and(V["phi_hl"][t], prev, 1 - A(th[t]), f"falling_edge[{t}]"))
    cs.add([eq(sum((A(v) for v in V["phi_lh"]), Affine()), 1, "single_rising_edge")])
    cs.add([eq(sum((A(v) for v in V["phi_hl"]), Affine()), 1, "single_falling_edge")])

    # pulse width at its falling edge
    width = sum((A(v) for v in th), Affine())
    for t in range(H - 1):
        cs.add([eq(A(V["g"][t]), width - float(target[t]), f"pulse_width_gap[{t}]")])
        lo, hi = cs.bounds_of(A(V["g"][t]))
        cs.add(gadget_product(V["q"][t], A(V["g"][t]), V["phi_hl"][t + 1], hi, lo, f"pulse_width_product[{t}]"))
        cs.add([eq(A(V["q"][t]), 0, f"pulse_width[{t}]")])

    # no charging from W+1 intervals before the falling edge on
    for t in range(H):
        upto = min(t + W + 1, H - 1)
        edges = sum((A(V["phi_hl"][p]) for p in range(upto + 1)), Affine())
        cs.add([le(edges + A(d[t]), 1, f"no_charge_after_exit[{t}]")])

    # when charging ends the entry pulse is centred there
    for t in range(H):
        prev = A(d[t - 1]) if t > 0 else Affine.constant(0.0)
        cs.add(gadget_and(V["psi"][t], prev, 1 - A(d[t]), f"charge_end[{t}]"))
        for r in range(max(0, t - W), min(t + W, H - 1) + 1):
            cs.add([ge(A(th[r]) - A(V["psi"][t]), 0, f"exit_after_charge[{t},{r}]")])

    # once started, charge for at least hbar more intervals; delta beyond the horizon is 0
    for t in range(H):
        prev = A(d[t - 1]) if t > 0 else Affine.constant(0.0)
        cs.add(gadget_and(V["sigma"][t], 1 - prev, A(d[t]), f"charge_start[{t}]"))
        mus = Affine()
        for h in range(1, hbar + 1):
            nxt = A(d[t + h]) if t + h < H else Affine.constant(0.0)
            mu = V[f"mu{h}"][t]
            cs.add(gadget_and(mu, A(V["sigma"][t]), nxt, f"charge_follow[{t},{h}]"))
            mus = mus + A(mu)
        cs.add([eq(mus - hbar * A(V["sigma"][t]), 0, f"min_charge_duration[{t}]")])

    # wide pulse <=> nothing in the first W+1 intervals
    nu = V["nu"][0]
    # 0 < nu + early/(W+1) <= 1, scaled by W+1; both sides are integers so "> 0" is ">= 1"
    early = sum((A(th[p]) for p in range(W + 1)), Affine())
    cs.add([ge((W + 1) * A(nu) + early, 1, "min_stay:lower"), le((W + 1) * A(nu) + early, W + 1, "min_stay:upper")])
    lo, hi = cs.bounds_of(width)
    cs.add(gadget_geq(nu, width, W + 2, hi, lo, eps, "min_stay_indicator"))

    # charge reaches the reference before merging back. omega(t) = 1 exactly when
    # x(t) < x_ref; the threshold is moved by eps so that x = x_ref counts as enough.
    for t in range(H):
        lo, hi = cs.bounds_of(A(x[t]))
        cs.add(gadget_leq(V["omega"][t], A(x[t]), params.x_ref - eps, hi, lo, eps, f"soc_below_ref[{t}]"))
        cs.add([le(A(V["omega"][t]) + A(th[max(0, t - W)]), 1, f"soc_gate[{t}]")])

    # FIFO: nobody new starts before earlier waiting vehicles
    for t in range(min(context.fifo_start, H)):
        cs.add([le(A(d[t]), 0, f"fifo[{t}]")])

    if include_coupling:
        if others is None:
            others = Aggregates.zeros(H)
        e_room = context.energy_room(others)
        p_room = context.plug_room(others)
        for t in range(H):
            cs.add([le(A(u[t]), float(e_room[t]), f"energy_cap[{t}]")])
            cs.add([le(A(d[t]), float(p_room[t]), f"plug_cap[{t}]")])
    return cs


def compile_game(
    cohort: Sequence[VehicleParams],
    context: GameContext,
    eps: float = GADGET_EPS,
) -> MixedIntegerConstraintSet:
    """Joint constraint set ``A z <= b`` of the whole cohort, shared caps written over all agents."""
    H = context.horizon.length
    st = context.station
    cs = MixedIntegerConstraintSet()
    for i, p in enumerate(cohort):
        cs.extend(compile_agent(p, context, owner=i, eps=eps, include_coupling=False))
    A = Affine.of
    for t in range(H):
        energy = sum((A(VarRef(i, "u", t)) for i in range(len(cohort))), Affine())
        plugs = sum((A(VarRef(i, "delta", t, BINARY)) for i in range(len(cohort))), Affine())
        cs.add([le(energy, st.max_energy_per_interval - context.u_old[t], f"energy_cap[{t}]")])
        cs.add([le(plugs, st.plug_count - context.delta_old[t], f"plug_cap[{t}]")])
    return cs


def primary_values(strategy: Strategy, owner: int = 0) -> dict[VarRef, float]:
    out: dict[VarRef, float] = {}
    for t, val in enumerate(strategy.u):
        out[VarRef(owner, "u", t)] = float(val)
    for t, val in enumerate(strategy.x):
        out[VarRef(owner, "x", t)] = float(val)
    for t, val in enumerate(strategy.delta):
        out[VarRef(owner, "delta", t, BINARY)] = float(val)
    for t, val in enumerate(strategy.theta):
        out[VarRef(owner, "theta", t, BINARY)] = float(val)
    return out


def lift(strategy: Strategy, params: VehicleParams, context: GameContext, owner: int = 0) -> dict[VarRef, float]:
    """Complete a strategy with the auxiliaries its logical meaning prescribes."""
    H = context.horizon.length
    W = context.horizon.half_width
    hbar = context.station.min_charge_intervals
    d = np.concatenate(([0], strategy.delta, np.zeros(hbar + 1, dtype=int))).astype(int)  # d[t+1] = delta(t)
    th = np.concatenate(([0], strategy.theta)).astype(int)
    out = primary_values(strategy, owner)
    target = pulse_width_target(context.horizon)
    width = int(strategy.theta.sum())
    for t in range(H):
        out[VarRef(owner, "phi_lh", t, BINARY)] = float((1 - th[t]) * th[t + 1])
        out[VarRef(owner, "phi_hl", t, BINARY)] = float(th[t] * (1 - th[t + 1]))
        out[VarRef(owner, "psi", t, BINARY)] = float(d[t] * (1 - d[t + 1]))
        sigma = (1 - d[t]) * d[t + 1]
        out[VarRef(owner, "sigma", t, BINARY)] = float(sigma)
        for h in range(1, hbar + 1):
            out[VarRef(owner, f"mu{h}", t, BINARY)] = float(sigma * d[t + 1 + h])
        out[VarRef(owner, "omega", t, BINARY)] = float(strategy.x[t] < params.x_ref - GADGET_EPS / 2)
    for t in range(H - 1):
        g = width - int(target[t])
        out[VarRef(owner, "g", t, INTEGER)] = float(g)
        out[VarRef(owner, "q", t, INTEGER)] = float(g * th[t + 1] * (1 - (th[t + 2] if t + 2 <= H else 0)))
    out[VarRef(owner, "nu", 0, BINARY)] = float(width >= W + 2)
    return out
