"""Partitioning glyphs into pattern classes.

Greedy fixed-cost k-median (GKM) and its two k-means hybrids, the First-Fit
baseline with multi-pass refinement, an exhaustive optimum for small
instances, and empirical checks of the greedy's approximation guarantees.

Internally every cost and distance is an integer number of oracle units
(see :mod:`glyphbook.metric`); results expose exact bit values as Fractions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .bitmap import Bitmap, DegenerateCentroidError, average_and_threshold, pattern_glyph
from .metric import DistanceOracle, cross_distances

FIRST_MATCH = "first_match"
BEST_MATCH = "best_match"

BRUTE_FORCE_CAP = 20
INNER_LOOP_CAP = 32
MAX_KMEANS_ROUNDS = 100


def _bits(scale: Fraction, units) -> Fraction:
    return scale * int(units)


def _json_number(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)


# --- data types ------------------------------------------------------------

@dataclass
class Partition:
    """Disjoint classes covering the glyph indices.

    ``representatives[i]`` is a vertex index (the class is represented by that
    glyph's bitmap) or a synthesized :class:`Bitmap`.
    """

    classes: list
    representatives: list
    order: list | None = None

    def __post_init__(self):
        if len(self.classes) != len(self.representatives):
            raise ValueError("one representative per class is required")
        if any(len(c) == 0 for c in self.classes):
            raise ValueError("classes must be nonempty")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def labels(self, n: int | None = None) -> np.ndarray:
        n = sum(len(c) for c in self.classes) if n is None else n
        out = np.full(n, -1, dtype=np.int64)
        for k, members in enumerate(self.classes):
            out[list(members)] = k
        if (out < 0).any():
            raise ValueError("partition does not cover every glyph")
        return out

    def as_sets(self) -> list[frozenset]:
        return [frozenset(c) for c in self.classes]


@dataclass
class TraceStep:
    vertex: int
    cost: int
    delta_before: int
    delta_after: int
    gain: int
    accepted: bool
    replacements: list = field(default_factory=list)

    @property
    def rate(self) -> Fraction:
        return Fraction(self.gain, self.cost)

    def as_dict(self, scale: Fraction) -> dict:
        d = {
            "vertex": self.vertex,
            "cost": _json_number(_bits(scale, self.cost)),
            "delta_before": _json_number(_bits(scale, self.delta_before)),
            "delta_after": _json_number(_bits(scale, self.delta_after)),
            "rate": _json_number(self.rate),
            "accepted": self.accepted,
        }
        if self.replacements:
            d["replacements"] = self.replacements
        return d


@dataclass
class Solution:
    """A chosen pattern set S and the glyph assignment it induces.

    ``assignment[v]`` is the pattern vertex serving glyph ``v`` or ``None`` when
    the glyph is self-coded (its own cost is no more than d(v, S)). Vertex
    indices ``>= n`` refer to synthesized patterns in ``virtual``.
    """

    chosen: tuple
    assignment: list
    unit_scale: Fraction
    cost_units: int
    capped_units: int
    true_units: int | None
    trace: list
    virtual: dict = field(default_factory=dict)

    @property
    def cost_bits(self) -> Fraction:
        return _bits(self.unit_scale, self.cost_units)

    @property
    def capped_distortion_bits(self) -> Fraction:
        return _bits(self.unit_scale, self.capped_units)

    @property
    def true_distortion_bits(self) -> Fraction | None:
        return None if self.true_units is None else _bits(self.unit_scale, self.true_units)

    @property
    def objective_units(self) -> int:
        return self.cost_units + self.capped_units

    @property
    def objective_bits(self) -> Fraction:
        return _bits(self.unit_scale, self.objective_units)

    @property
    def self_coded(self) -> list[int]:
        return [v for v, a in enumerate(self.assignment) if a is None]

    def to_partition(self) -> Partition:
        """Classes per serving pattern (in pick order), then self-coded singletons."""
        groups: dict = {w: [] for w in self.chosen}
        singles = []
        for v, a in enumerate(self.assignment):
            if a is None:
                singles.append([v])
            else:
                groups[a].append(v)
        classes, reps = [], []
        for w in self.chosen:
            if groups[w]:
                classes.append(groups[w])
                reps.append(self.virtual[w] if w in self.virtual else w)
        for s in singles:
            classes.append(s)
            reps.append(s[0])
        return Partition(classes, reps)

    def trace_json(self) -> list[dict]:
        return [step.as_dict(self.unit_scale) for step in self.trace]


@dataclass
class OptResult:
    opt_set: tuple
    unit_scale: Fraction
    cost_units: int
    distortion_units: int

    @property
    def opt_cost_bits(self) -> Fraction:
        return _bits(self.unit_scale, self.cost_units)

    @property
    def opt_distortion_bits(self) -> Fraction:
        return _bits(self.unit_scale, self.distortion_units)

    @property
    def opt_objective_units(self) -> int:
        return self.cost_units + self.distortion_units

    @property
    def opt_objective_bits(self) -> Fraction:
        return _bits(self.unit_scale, self.opt_objective_units)


# --- objective -------------------------------------------------------------

def _capped(oracle: DistanceOracle, S) -> np.ndarray:
    cur = oracle.costs.copy()
    if len(S):
        cur = np.minimum(cur, oracle.units[:, list(S)].min(axis=1))
    return cur


def capped_distortion_units(S, oracle: DistanceOracle) -> int:
    return int(_capped(oracle, S).sum())


def capped_distortion(S, oracle: DistanceOracle) -> Fraction:
    """Sum over glyphs of min(d(v, S), c(v)); the empty set caps every term."""
    return _bits(oracle.unit_scale, capped_distortion_units(S, oracle))


def distortion_units(S, oracle: DistanceOracle) -> int:
    if not len(S):
        raise ValueError("distortion of the empty set is infinite")
    cols = np.stack([oracle.exact_column(w) for w in S], axis=1)
    return int(cols.min(axis=1).sum())


def objective_units(S, oracle: DistanceOracle) -> int:
    return int(oracle.costs[list(S)].sum()) + capped_distortion_units(S, oracle)


def _argmax_rate(gains: np.ndarray, costs: np.ndarray) -> int:
    """Index maximizing gains/costs exactly; ties go to the lowest index."""
    ratio = gains / costs
    top = ratio.max()
    cand = np.nonzero(ratio >= top * (1 - 1e-9) - 1e-12)[0]
    best = int(cand[0])
    for i in cand[1:]:
        i = int(i)
        if int(gains[i]) * int(costs[best]) > int(gains[best]) * int(costs[i]):
            best = i
    return best


def _gains(cur: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.maximum(cur[:, None] - cols, 0).sum(axis=0)


def _assign(oracle: DistanceOracle, chosen, cols: np.ndarray) -> list:
    """Serving pattern per glyph, or None when c(v) <= d(v, S)."""
    if not len(chosen):
        return [None] * oracle.n
    best = cols.argmin(axis=1)
    dmin = cols[np.arange(oracle.n), best]
    return [None if oracle.costs[v] <= dmin[v] else chosen[best[v]] for v in range(oracle.n)]


# --- greedy k-median -------------------------------------------------------

def greedy_k_median(oracle: DistanceOracle) -> Solution:
    """Greedily add the vertex with the best capped-distortion drop per unit cost.

    Stops before the first addition that fails to strictly lower
    c(S) + delta(S); that rejected step is kept in the trace with
    ``accepted=False``.
    """
    if oracle.n < 1:
        raise ValueError("need at least one vertex")
    D, costs = oracle.units, oracle.costs
    chosen: list[int] = []
    cur = costs.copy()
    cost_S = 0
    trace = []
    while True:
        gains = _gains(cur, D)
        v = _argmax_rate(gains, costs)
        delta = int(cur.sum())
        gain = int(gains[v])
        step = TraceStep(v, int(costs[v]), delta, delta - gain, gain, accepted=False)
        trace.append(step)
        if cost_S + int(costs[v]) + delta - gain >= cost_S + delta:
            break
        step.accepted = True
        chosen.append(v)
        cost_S += int(costs[v])
        cur = np.minimum(cur, D[:, v])
    return _finish(oracle, chosen, trace, {}, None)


def _finish(oracle, chosen, trace, virtual, virtual_cols) -> Solution:
    n = oracle.n
    if chosen:
        cols = np.stack([virtual_cols[w] if w >= n else oracle.exact_column(w)
                         for w in chosen], axis=1)
    else:
        cols = np.zeros((n, 0), dtype=np.int64)
    assignment = _assign(oracle, chosen, cols)
    capped = np.minimum(oracle.costs, cols.min(axis=1)) if chosen else oracle.costs
    cost = sum(int(oracle.costs[w]) if w < n else virtual[w][1] for w in chosen)
    true = int(cols.min(axis=1).sum()) if chosen else None
    return Solution(tuple(chosen), assignment, oracle.unit_scale, cost, int(capped.sum()),
                    true, trace, {w: bm for w, (bm, _) in virtual.items()})


def gkm_with_k_means(oracle: DistanceOracle, epsilon=0, inner_cap: int = INNER_LOOP_CAP) -> Solution:
    """Greedy k-median where each pick may be swapped for its class centroid.

    After choosing the best-rate vertex, the centroid of the glyphs it would
    serve replaces it for as long as that raises the rate by more than
    ``epsilon``. Centroids enter S as virtual vertices costing kappa per ink
    pixel.
    """
    if not oracle.glyphs:
        raise ValueError("centroid refinement needs the oracle's glyphs")
    eps = None if epsilon is None or (isinstance(epsilon, float) and math.isinf(epsilon)) \
        else Fraction(epsilon)
    n = oracle.n
    D, costs = oracle.units, oracle.costs
    ink_units = oracle.model.ink_units
    chosen: list[int] = []
    virtual: dict = {}
    virtual_cols: dict = {}
    cur = costs.copy()
    cost_S = 0
    trace = []

    def rate_of(col, cost):
        return Fraction(int(np.maximum(cur - col, 0).sum()), cost)

    while True:
        gains = _gains(cur, D)
        v0 = _argmax_rate(gains, costs)
        v, v_col, v_cost, v_bm = v0, oracle.exact_column(v0), int(costs[v0]), None
        replacements = []
        for it in range(inner_cap):
            members = np.nonzero(v_col <= cur)[0]
            if len(members) == 0:
                break
            try:
                bm = average_and_threshold([oracle.glyphs[w] for w in members])
            except DegenerateCentroidError:
                break
            cand = pattern_glyph(bm)
            c_col = cross_distances(oracle.glyphs, [cand], oracle.model)[:, 0]
            c_cost = cand.ink_count * ink_units
            r_old, r_new = rate_of(v_col, v_cost), rate_of(c_col, c_cost)
            if eps is None or not r_new > r_old + eps:
                break
            replacements.append({"iteration": it, "rate_before": float(r_old),
                                 "rate_after": float(r_new), "cost": c_cost})
            v, v_col, v_cost, v_bm = -1, c_col, c_cost, bm
        else:
            replacements.append({"iteration": inner_cap, "capped": True})

        delta = int(cur.sum())
        gain = int(np.maximum(cur - v_col, 0).sum())
        label = v if v_bm is None else n + len(virtual)
        step = TraceStep(label, v_cost, delta, delta - gain, gain, accepted=False,
                         replacements=replacements)
        trace.append(step)
        if v_cost + delta - gain >= delta:
            break
        step.accepted = True
        if v_bm is not None:
            virtual[label] = (v_bm, v_cost)
            virtual_cols[label] = v_col
        chosen.append(label)
        cost_S += v_cost
        cur = np.minimum(cur, v_col)
    return _finish(oracle, chosen, trace, virtual, virtual_cols)


# --- First-Fit and modified k-means ----------------------------------------

def first_fit(order: Sequence, distance: Callable, threshold) -> Partition:
    """Single pass: each item joins the first class whose first member is within threshold.

    ``distance(p, c)`` is evaluated with ``p`` the class's first element; the
    match test is strict (``distance < threshold``).
    """
    classes: list[list] = []
    for c in order:
        for members in classes:
            if distance(members[0], c) < threshold:
                members.append(c)
                break
        else:
            classes.append([c])
    return Partition(classes, [m[0] for m in classes], order=list(order))


def _threshold_units(threshold, oracle: DistanceOracle) -> int:
    """Smallest integer unit count that fails ``d < threshold``."""
    if isinstance(threshold, float) and math.isinf(threshold):
        return np.iinfo(np.int64).max
    return math.ceil(Fraction(threshold) / oracle.unit_scale)


def first_fit_oracle(oracle: DistanceOracle, threshold, order=None) -> Partition:
    """First-Fit over the oracle's glyphs (reading order unless ``order`` is given)."""
    order = list(range(oracle.n)) if order is None else list(order)
    tu = _threshold_units(threshold, oracle)
    return first_fit(order, lambda p, c: oracle.d_units(c, p), tu)


def _class_patterns(part: Partition, oracle: DistanceOracle) -> list[Bitmap]:
    out = []
    for members, rep in zip(part.classes, part.representatives):
        try:
            out.append(average_and_threshold([oracle.glyphs[i] for i in members]))
        except DegenerateCentroidError:
            out.append(rep if isinstance(rep, Bitmap) else oracle.glyphs[rep].bitmap)
    return out


def _reassign(patterns: list[Bitmap], oracle: DistanceOracle, mode: str, tu: int) -> Partition:
    pglyphs = [pattern_glyph(p) for p in patterns]
    D = cross_distances(oracle.glyphs, pglyphs, oracle.model)
    groups: list[list[int]] = [[] for _ in patterns]
    singles: list[list[int]] = []
    for i in range(oracle.n):
        row = D[i]
        if mode == FIRST_MATCH:
            hits = np.nonzero(row < tu)[0]
            j = int(hits[0]) if len(hits) else -1
        else:
            j = int(row.argmin()) if len(row) else -1
            if j >= 0 and row[j] >= tu:
                j = -1
        if j >= 0:
            groups[j].append(i)
            continue
        # unmatched glyphs seed new singleton classes that later glyphs may join
        for s in singles:
            if oracle.d_units(i, s[0]) < tu:
                s.append(i)
                break
        else:
            singles.append([i])
    classes = [g for g in groups if g] + singles
    reps = [p for g, p in zip(groups, patterns) if g] + [s[0] for s in singles]
    return Partition(classes, reps)


def modified_k_means(start: Partition, oracle: DistanceOracle, mode: str = FIRST_MATCH,
                     threshold=math.inf, min_decrease=1,
                     max_rounds: int = MAX_KMEANS_ROUNDS) -> tuple[Partition, list[int]]:
    """Average, threshold and reassign until the class count stops dropping by ``min_decrease``.

    Returns the most recent partition having the smallest class count seen
    (the start partition included) and the class count after every round.
    """
    if mode not in (FIRST_MATCH, BEST_MATCH):
        raise ValueError(f"unknown k-means mode {mode!r}")
    tu = _threshold_units(threshold, oracle)
    best = current = start
    counts = [start.n_classes]
    for _ in range(max_rounds):
        nxt = _reassign(_class_patterns(current, oracle), oracle, mode, tu)
        counts.append(nxt.n_classes)
        if nxt.n_classes <= best.n_classes:
            best = nxt
        decrease = current.n_classes - nxt.n_classes
        current = nxt
        if decrease < min_decrease:
            break
    return best, counts


def gkm_then_k_means(oracle: DistanceOracle, threshold=math.inf, min_decrease=1,
                     mode: str = BEST_MATCH) -> tuple[Partition, int, int]:
    """GKM classes refined by modified k-means; returns (partition, count before, count after).

    Glyphs move to their closest averaged pattern; with the default infinite
    threshold no new classes can appear, so the count only falls.
    """
    initial = greedy_k_median(oracle).to_partition()
    final, _ = modified_k_means(initial, oracle, mode, threshold, min_decrease)
    return final, initial.n_classes, final.n_classes


# --- exhaustive optimum and guarantee checks -------------------------------

def _subset_mins(cols: np.ndarray) -> np.ndarray:
    """Row-wise minimum over every subset of the columns; row 0 (empty) is a sentinel."""
    m = cols.shape[1]
    big = 1 << 40
    out = np.empty((1 << m, cols.shape[0]), dtype=np.int64)
    out[0] = big
    for b in range(m):
        lo, hi = 1 << b, 1 << (b + 1)
        out[lo:hi] = np.minimum(out[0:lo], cols[:, b][None, :])
    return out


def brute_force_opt(oracle: DistanceOracle, cap: int = BRUTE_FORCE_CAP) -> OptResult:
    """Minimize c(S) + d(S) over every nonempty S by enumeration.

    Ties prefer the smaller set, then the lexicographically smaller index tuple.
    """
    n = oracle.n
    if n > cap:
        raise ValueError(f"brute force is limited to n <= {cap} vertices (got n={n})")
    D = oracle.exact_units()
    costs = oracle.costs
    low_bits = min(n, 14)
    high_bits = n - low_bits
    low_masks = np.arange(1 << low_bits, dtype=np.int64)
    low_min = _subset_mins(D[:, :low_bits])
    low_cost = np.zeros(1 << low_bits, dtype=np.int64)
    for b in range(low_bits):
        low_cost[(low_masks >> b) & 1 == 1] += costs[b]

    best_val, best_masks = None, []
    for h in range(1 << high_bits):
        hcols = [low_bits + b for b in range(high_bits) if h >> b & 1]
        hcost = int(costs[hcols].sum()) if hcols else 0
        mins = low_min
        if hcols:
            mins = np.minimum(low_min, D[:, hcols].min(axis=1)[None, :])
        vals = mins.sum(axis=1) + low_cost + hcost
        if not hcols:
            vals[0] = np.iinfo(np.int64).max
        v = int(vals.min())
        hits = (low_masks[vals == v] | (h << low_bits)).tolist()
        if best_val is None or v < best_val:
            best_val, best_masks = v, hits
        elif v == best_val:
            best_masks.extend(hits)

    def key(mask):
        members = tuple(i for i in range(n) if mask >> i & 1)
        return len(members), members

    opt = min(best_masks, key=key)
    S = key(opt)[1]
    cost = int(costs[list(S)].sum())
    return OptResult(S, oracle.unit_scale, cost, best_val - cost)


def all_capped_distortions(oracle: DistanceOracle) -> np.ndarray:
    """delta(S) in units for every subset S, indexed by bitmask."""
    n = oracle.n
    if n > BRUTE_FORCE_CAP:
        raise ValueError(f"subset enumeration is limited to n <= {BRUTE_FORCE_CAP}")
    mins = _subset_mins(oracle.exact_units())
    return np.minimum(mins, oracle.costs[None, :]).sum(axis=1)


def check_supermodularity(oracle: DistanceOracle, cap: int = 10) -> dict:
    """Exhaustively test delta(S) - delta(S+v) >= delta(T) - delta(T+v) for S <= T, v not in T."""
    n = oracle.n
    if n > cap:
        raise ValueError(f"supermodularity check is limited to n <= {cap}")
    delta = all_capped_distortions(oracle)
    masks = np.arange(1 << n, dtype=np.int64)
    # enumerate every (S, T) with S a submask of T: 3^n pairs
    S_list, T_list = [], []
    for t in range(1 << n):
        s = t
        while True:
            S_list.append(s)
            T_list.append(t)
            if s == 0:
                break
            s = (s - 1) & t
    S_arr, T_arr = np.array(S_list), np.array(T_list)
    checked = violations = 0
    first = None
    for v in range(n):
        bit = 1 << v
        ok = (T_arr & bit) == 0
        s, t = S_arr[ok], T_arr[ok]
        lhs = delta[s] - delta[s | bit]
        rhs = delta[t] - delta[t | bit]
        bad = lhs < rhs
        checked += int(ok.sum())
        if bad.any() and first is None:
            i = int(np.argmax(bad))
            first = {"S": int(s[i]), "T": int(t[i]), "v": v}
        violations += int(bad.sum())
    monotone_bad = sum(int((delta[masks] < delta[masks | (1 << v)]).sum()) for v in range(n))
    return {"checked": checked, "violations": violations, "counterexample": first,
            "monotonicity_violations": monotone_bad}


@dataclass
class GuaranteeReport:
    decay_checks: list
    ratio_bound_slack: float
    log_n_bound_slack: float
    objective_capped_bits: Fraction
    objective_true_bits: Fraction | None

    @property
    def decay_violations(self) -> int:
        return sum(1 for c in self.decay_checks if not c["skipped"] and not c["holds"])

    @property
    def bound_violations(self) -> int:
        return int(self.ratio_bound_slack < 0) + int(self.log_n_bound_slack < 0)

    @property
    def holds(self) -> bool:
        return self.decay_violations == 0 and self.bound_violations == 0

    def as_dict(self) -> dict:
        return {
            "decay_checks": self.decay_checks,
            "decay_violations": self.decay_violations,
            "ratio_bound_slack": self.ratio_bound_slack,
            "log_n_bound_slack": self.log_n_bound_slack,
            "objective_capped_bits": _json_number(self.objective_capped_bits),
            "objective_true_bits": (None if self.objective_true_bits is None
                                    else _json_number(self.objective_true_bits)),
            "holds": self.holds,
        }


def check_guarantees(solution: Solution, opt: OptResult, n: int) -> GuaranteeReport:
    """Evaluate the decay invariant on every greedy prefix and both objective bounds.

    Work is in unit counts (the bounds are scale-invariant), with 60-digit
    decimal arithmetic for exp and ln, and no tolerance.
    """
    accepted = [s for s in solution.trace if s.accepted]
    if solution.trace:
        delta0 = solution.trace[0].delta_before
    else:
        delta0 = solution.capped_units
    dopt, copt = opt.distortion_units, opt.cost_units
    checks = []
    with localcontext() as ctx:
        ctx.prec = 60
        denom = delta0 - dopt
        cost = 0
        prefixes = [(0, delta0)]
        for s in accepted:
            cost += s.cost
            prefixes.append((cost, s.delta_after))
        for t, (c_S, d_S) in enumerate(prefixes):
            entry = {"step": t, "cost": c_S, "delta": d_S}
            if denom <= 0 or d_S <= dopt:
                entry.update(skipped=True, holds=True, reason=(
                    "vacuous: delta(empty) == d(OPT)" if denom <= 0 else "delta(S) <= d(OPT)"))
            else:
                lhs = Decimal(d_S - dopt) / Decimal(denom)
                rhs = (Decimal(-c_S) / Decimal(copt)).exp()
                entry.update(skipped=False, holds=bool(lhs <= rhs), lhs=float(lhs),
                             rhs=float(rhs), slack=float(rhs - lhs))
            checks.append(entry)

        obj = Decimal(solution.objective_units)
        bound1 = Decimal(dopt) + (1 + (Decimal(delta0) / Decimal(copt)).ln()) * Decimal(copt)
        bound2 = 2 * Decimal(dopt) + (1 + Decimal(n).ln()) * Decimal(copt)
        scale = solution.unit_scale
        slack1 = float((bound1 - obj) * Decimal(scale.numerator) / Decimal(scale.denominator))
        slack2 = float((bound2 - obj) * Decimal(scale.numerator) / Decimal(scale.denominator))
    return GuaranteeReport(checks, slack1, slack2, solution.objective_bits,
                           None if solution.true_units is None
                           else solution.cost_bits + solution.true_distortion_bits)


def induced_objective_units(patterns: Sequence[Bitmap], oracle: DistanceOracle) -> int:
    """c(P) + sum_v min(d(v, P), c(v)) for an arbitrary pattern list P."""
    if not patterns:
        return int(oracle.costs.sum())
    pg = [pattern_glyph(p) for p in patterns]
    D = cross_distances(oracle.glyphs, pg, oracle.model)
    cost = sum(g.ink_count for g in pg) * oracle.model.ink_units
    return cost + int(np.minimum(D.min(axis=1), oracle.costs).sum())


def partition_objective_units(part: Partition, oracle: DistanceOracle) -> int:
    """Objective of a partition's representatives viewed as the pattern set."""
    if all(not isinstance(r, Bitmap) for r in part.representatives):
        return objective_units(part.representatives, oracle)
    return induced_objective_units(
        [r if isinstance(r, Bitmap) else oracle.glyphs[r].bitmap for r in part.representatives],
        oracle)
