"""Anisotropic order selection from truncation-error maps, plus the drivers
that alternate solving, estimation and re-adaptation.

Selection is per element: the cheapest order pair (by degrees of freedom)
whose predicted truncation error meets the threshold, searched first among
measured entries, then in the extrapolated region, with an (n_max, n_max)
fallback when nothing qualifies.  Jump limiting and the conforming pass then
raise orders until the field is admissible; limited elements keep their
decision path but their reported prediction is re-read at the final orders.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import multigrid
from . import tau as tau_est
from .errors import AdaptationError, ConfigError
from .fields import NodalField, OrderField, transfer
from .mesh import SIDE_NORMAL_DIR, SIDE_TANGENT_DIR

JUMP_RULES = ("strict-one", "softened")
DECISION_PATHS = ("inner-map", "extrapolated", "fallback-N_max", "stage-capped")


@dataclass(frozen=True)
class AdaptConfig:
    """Threshold, order bounds and regularity rules for one adaptation run.

    ``stages`` lists the reference orders of successive adaptation passes
    (strictly increasing); a single entry gives the plain one-pass process.
    """

    tau_max: float
    n_max: int
    n_min: int = 1
    jump_rule: str = "strict-one"
    conforming_tags: tuple[str, ...] = ()
    stages: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "conforming_tags", tuple(self.conforming_tags))
        if self.tau_max <= 0.0:
            raise ConfigError("tau_max must be positive")
        if self.n_min < 1 or self.n_max < self.n_min:
            raise ConfigError("order bounds need 1 <= n_min <= n_max")
        if self.jump_rule not in JUMP_RULES:
            raise ConfigError(f"unknown jump rule {self.jump_rule!r}")
        if any(b <= a for a, b in zip(self.stages, self.stages[1:])):
            raise ConfigError("stages must be strictly increasing")
        if self.stages and not (
            self.n_min <= self.stages[0] and self.stages[-1] <= self.n_max
        ):
            raise ConfigError("stages must lie within [n_min, n_max]")


@dataclass
class ElementDecision:
    element: int
    old_orders: tuple[int, int]
    new_orders: tuple[int, int]
    path: str
    predicted_tau: float

    def __post_init__(self):
        if self.path not in DECISION_PATHS:
            raise AdaptationError(f"unknown decision path {self.path!r}")


@dataclass
class AdaptationReport:
    stage: int
    dofs_before: int
    dofs_after: int
    decisions: list[ElementDecision]

    def histogram(self) -> dict[str, int]:
        counts = dict.fromkeys(DECISION_PATHS, 0)
        for d in self.decisions:
            counts[d.path] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "dofs_before": self.dofs_before,
            "dofs_after": self.dofs_after,
            "histogram": self.histogram(),
            "elements": [
                {
                    "element": d.element,
                    "old": list(d.old_orders),
                    "new": list(d.new_orders),
                    "path": d.path,
                    "predicted_tau": d.predicted_tau,
                }
                for d in self.decisions
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def order_field_csv(field: OrderField) -> str:
    lines = ["element,n1,n2"]
    for e, (n1, n2) in enumerate(field.orders):
        lines.append(f"{e},{n1},{n2}")
    return "\n".join(lines) + "\n"


def _candidate_key(pair: tuple[int, int]):
    # min DOF, ties to the smaller max order, then the smaller first order
    n1, n2 = pair
    return ((n1 + 1) * (n2 + 1), max(n1, n2), n1)


def select_orders(tmap, cfg: AdaptConfig) -> tuple[OrderField, AdaptationReport]:
    """Cheapest admissible order pair per element.

    Measured sub-reference pairs are searched first; if none meets the
    threshold the whole (possibly extrapolated) rectangle up to ``n_max``
    is searched, mixing measured and extrapolated entries; if that fails
    too the element falls back to (n_max, n_max).
    """
    nel = tmap.num_elements
    arr = np.empty((nel, 2), dtype=int)
    decisions = []
    lo, hi = cfg.n_min, cfg.n_max
    for e in range(nel):
        d1, d2 = tmap.tau[e]
        if not d1 or not d2:
            raise AdaptationError(f"element {e} has an empty truncation-error map")
        feasible = [
            (pair, v) for pair, v in tmap.inner_map(e).items()
            if v <= cfg.tau_max and lo <= pair[0] <= hi and lo <= pair[1] <= hi
        ]
        path = "inner-map"
        if not feasible:
            feasible = [
                ((n1, n2), d1[n1] + d2[n2])
                for n1 in range(lo, hi + 1) if n1 in d1
                for n2 in range(lo, hi + 1) if n2 in d2
                if d1[n1] + d2[n2] <= cfg.tau_max
            ]
            path = "extrapolated"
        if feasible:
            pair, predicted = min(feasible, key=lambda it: _candidate_key(it[0]))
        else:
            pair = (hi, hi)
            predicted = tmap.combined(e, hi, hi)
            predicted = float("inf") if predicted is None else predicted
            path = "fallback-N_max"
        arr[e] = pair
        old = tuple(int(x) for x in tmap.fine_orders.orders[e])
        decisions.append(ElementDecision(e, old, pair, path, predicted))
    field = OrderField(arr)
    report = AdaptationReport(0, tmap.fine_orders.dofs(), field.dofs(), decisions)
    return field, report


def _face_slot_pairs(msh):
    """Order-array slots paired across each interior face.

    Each face contributes two pairs: the tangential components of its two
    elements and the normal components, read off each element's own side so
    differently oriented neighbors pair the right directions.
    """
    pairs = []
    for f in msh.faces:
        if f.is_boundary:
            continue
        pairs.append((f.left, SIDE_TANGENT_DIR[f.side_left] - 1,
                      f.right, SIDE_TANGENT_DIR[f.side_right] - 1))
        pairs.append((f.left, SIDE_NORMAL_DIR[f.side_left] - 1,
                      f.right, SIDE_NORMAL_DIR[f.side_right] - 1))
    return pairs


def limit_jumps(msh, orders: OrderField, rule: str = "strict-one") -> OrderField:
    """Raise orders until every interior face satisfies the jump rule.

    strict-one caps the jump at one order per face component; softened only
    requires each side to reach floor(2/3) of its neighbor.  Orders are never
    lowered, so the sweep terminates at or below the field's maximum.
    """
    if rule not in JUMP_RULES:
        raise ConfigError(f"unknown jump rule {rule!r}")
    arr = orders.orders.copy()
    pairs = _face_slot_pairs(msh)
    for _ in range(arr.size * (int(arr.max()) + 1) + 1):
        changed = False
        for ea, da, eb, db in pairs:
            a, b = int(arr[ea, da]), int(arr[eb, db])
            floor_a = b - 1 if rule == "strict-one" else (2 * b) // 3
            if a < floor_a:
                a = floor_a
                arr[ea, da] = floor_a
                changed = True
            floor_b = a - 1 if rule == "strict-one" else (2 * a) // 3
            if b < floor_b:
                arr[eb, db] = floor_b
                changed = True
        if not changed:
            return OrderField(arr)
    raise AdaptationError("jump limiting failed to reach a fixed point")


def conforming_pass(msh, orders: OrderField, tags, rule: str | None = None) -> OrderField:
    """Share the maximum tangential order among elements on tagged boundaries.

    With ``rule`` given, alternates the sharing pass with ``limit_jumps``
    until neither changes the field (each pass only raises orders, so the
    alternation terminates).
    """
    tags = tuple(tags)
    unknown = [t for t in tags if t not in msh.boundary_tags]
    if unknown:
        raise AdaptationError(f"unknown boundary tags: {unknown}")
    slots_by_tag = {
        tag: [(msh.faces[i].left, SIDE_TANGENT_DIR[msh.faces[i].side_left] - 1)
              for i in msh.boundary_tags[tag]]
        for tag in tags
    }

    def share(arr) -> bool:
        changed = False
        for slots in slots_by_tag.values():
            top = max(int(arr[e, d]) for e, d in slots)
            for e, d in slots:
                if arr[e, d] != top:
                    arr[e, d] = top
                    changed = True
        return changed

    arr = orders.orders.copy()
    if rule is None:
        share(arr)
        return OrderField(arr)
    for _ in range(arr.size * (int(arr.max()) + 1) + 1):
        changed = share(arr)
        limited = limit_jumps(msh, OrderField(arr), rule)
        changed = changed or not limited.same_orders(OrderField(arr))
        arr = limited.orders.copy()
        if not changed:
            return limited
    raise AdaptationError("conforming pass failed to reach a fixed point")


@dataclass
class AdaptationRun:
    """Final state of an adaptive solve plus everything measured on the way.

    ``work_units`` counts node-sweeps (one RK3 sweep of one degree of
    freedom): solver work is rescaled by each hierarchy's finest DOF count,
    so totals stay comparable between runs whose order fields differ.
    """

    Q: NodalField
    orders: OrderField
    reports: list[AdaptationReport]
    maps: list  # one TauMap per stage
    work_units: float
    history: list[dict]


def _regularize(msh, field: OrderField, cfg: AdaptConfig) -> OrderField:
    if cfg.conforming_tags:
        return conforming_pass(msh, field, cfg.conforming_tags, cfg.jump_rule)
    return limit_jumps(msh, field, cfg.jump_rule)


def run_multi_stage(
    msh,
    law,
    cfg: AdaptConfig,
    final_tol: float = 1e-8,
    level_tol: float = 1e-1,
    smoother: multigrid.SmootherConfig | None = None,
    time_config=None,
    isolated: bool = True,
    max_cycles: int = 300,
) -> AdaptationRun:
    """Adapt through ``cfg.stages``: solve, estimate, select, transfer, repeat.

    Every stage converges to tau_max/10 before estimating.  Elements whose
    selection exceeds the next stage's order are capped there and revisited;
    the rest are frozen at their selected orders.  When no element is capped
    the remaining stages are skipped and the field is final; the last stage
    caps at n_max.  The final field is converged to ``final_tol``.
    """
    stages = cfg.stages
    if not stages:
        raise ConfigError("adaptation needs at least one stage order")
    nel = msh.num_elements
    threshold = cfg.tau_max / 10.0

    orders = OrderField.uniform(nel, stages[0])
    solver = multigrid.FASSolver(msh, law, orders, smoother, time_config)
    solver.solve_fmg(threshold, level_tol=level_tol, max_cycles=max_cycles)

    work = 0.0
    history: list[dict] = []
    reports: list[AdaptationReport] = []
    maps = []
    active = np.ones(nel, dtype=bool)
    frozen_paths = [""] * nel

    for i in range(len(stages)):
        last = i == len(stages) - 1
        cap = cfg.n_max if last else stages[i + 1]
        tmap = tau_est.estimate(msh, law, solver.Q, cfg.tau_max,
                                isolated=isolated, fine_op=solver.finest.op)
        tau_est.extrapolate_map(tmap, cfg.n_max)
        maps.append(tmap)
        selection, raw_report = select_orders(tmap, cfg)

        arr = orders.orders.copy()
        paths = list(frozen_paths)
        any_capped = False
        for e in range(nel):
            if not active[e]:
                continue
            n1, n2 = selection.orders[e]
            if n1 > cap or n2 > cap:
                arr[e] = (min(n1, cap), min(n2, cap))
                paths[e] = "stage-capped"
                any_capped = True
            else:
                arr[e] = (n1, n2)
                paths[e] = raw_report.decisions[e].path
                active[e] = False
        frozen_paths = paths

        new_field = _regularize(msh, OrderField(arr), cfg)
        decisions = []
        for e in range(nel):
            new = tuple(int(x) for x in new_field.orders[e])
            predicted = tmap.combined(e, *new)
            if predicted is None:
                raise AdaptationError(
                    f"element {e} has no map entry at final orders {new}"
                )
            old = tuple(int(x) for x in orders.orders[e])
            decisions.append(ElementDecision(e, old, new, paths[e], predicted))
        reports.append(AdaptationReport(
            i + 1, orders.dofs(), new_field.dofs(), decisions))

        work += (solver.work_units + tmap.work_units) * orders.dofs()
        history.extend(solver.log)
        state = transfer(solver.Q, new_field)
        orders = new_field
        solver = multigrid.FASSolver(msh, law, orders, smoother, time_config)
        solver.set_state(state)
        if last or not any_capped:
            solver.converge(final_tol, max_cycles=max_cycles)
            break
        solver.converge(threshold, max_cycles=max_cycles)

    work += solver.work_units * orders.dofs()
    history.extend(solver.log)
    # hand back the hierarchy's own field instance so callers can build
    # operators directly against the returned state
    return AdaptationRun(solver.Q, solver.finest.orders, reports, maps,
                         work, history)


def run_single_stage(msh, law, P: int, cfg: AdaptConfig, **kwargs) -> AdaptationRun:
    """One adaptation pass from uniform reference order ``P``."""
    return run_multi_stage(
        msh, law, dataclasses.replace(cfg, stages=(P,)), **kwargs
    )
