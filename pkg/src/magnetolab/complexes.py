"""Graded generator tables and structural feasibility checks for Floer-type complexes.

Generators come from closed orbits (a pair x_-, x_+ per iterate) and from a
Morse function on the compact part. Differentials are never computed; only
their skeletons are: entries fixed by the local theory, entries forced to zero
by the period filtration, and free entries.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .flow import ArityError
from .linearization import DegeneracyError, OrbitIndexData, good_bad, grading, iterate_index

MORSE_SPECS = {"none": [], "point": [0], "sphere": [2, 0], "torus": [2, 1, 1, 0],
               "circle": [1, 0]}

FIXED = "fixed"
FIXED_PM = "fixed+-"  # fixed up to sign (bad orbits, a = +-2)
ZERO = "forced-zero"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class Generator:
    id: str
    degree: int
    period: float
    kind: str  # "orbit" or "morse"
    sign: str | None = None  # "+" or "-" for orbit generators
    prime: str | None = None
    k: int | None = None
    morse_index: int | None = None
    good: bool = True
    homotopy: object = None

    def to_json(self):
        return {"id": self.id, "degree": self.degree, "period": self.period, "kind": self.kind,
                "sign": self.sign, "prime": self.prime, "k": self.k,
                "morse_index": self.morse_index, "good": self.good,
                "homotopy": list(self.homotopy) if isinstance(self.homotopy, tuple) else self.homotopy}


@dataclass
class OrbitRecord:
    """A prime orbit with its index data and period, as input to build_table."""
    name: str
    data: OrbitIndexData
    period: float
    homotopy: tuple | None = None

    @classmethod
    def from_json(cls, doc):
        try:
            data = OrbitIndexData(int(doc["mu"]), doc["kind"], doc.get("delta"))
            hom = doc.get("homotopy")
            return cls(str(doc["name"]), data, float(doc["period"]),
                       tuple(hom) if hom is not None else None)
        except (KeyError, TypeError, ValueError) as exc:
            raise ArityError(f"malformed orbit record {doc!r}: {exc}") from None


@dataclass
class GeneratorTable:
    generators: list
    cutoff: float | None = None
    # degrees d with missing_below < d < missing_above are complete
    missing_below: float = -math.inf
    missing_above: float = math.inf
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [g.id for g in self.generators]
        if len(set(ids)) != len(ids):
            raise ValueError("generator ids must be unique")

    def __len__(self):
        return len(self.generators)

    def by_id(self, gid):
        for g in self.generators:
            if g.id == gid:
                return g
        raise KeyError(gid)

    def in_degree(self, d):
        return [g for g in self.generators if g.degree == d]

    def degrees(self):
        """Degrees of all generators, highest first."""
        return sorted((g.degree for g in self.generators), reverse=True)

    def counts(self):
        out = {}
        for g in self.generators:
            out[g.degree] = out.get(g.degree, 0) + 1
        return dict(sorted(out.items(), reverse=True))

    def complete(self, d):
        return self.missing_below < d < self.missing_above

    @property
    def truncated(self):
        return math.isfinite(self.missing_below) or math.isfinite(self.missing_above)

    def is_subtable_of(self, other):
        """Every generator here appears in ``other`` with the same data."""
        theirs = {g.id: g for g in other.generators}
        return all(g.id in theirs and theirs[g.id] == g for g in self.generators)

    def to_json(self):
        return {"generators": [g.to_json() for g in self.generators], "cutoff": self.cutoff,
                "counts": {str(k): v for k, v in self.counts().items()},
                "complete_degrees": [_finite(self.missing_below), _finite(self.missing_above)],
                "meta": self.meta}


def _finite(x):
    return None if not math.isfinite(x) else x


def morse_generators(spec):
    if isinstance(spec, str):
        if spec not in MORSE_SPECS:
            raise ArityError(f"unknown Morse spec {spec!r}; choose from {sorted(MORSE_SPECS)}")
        indices = MORSE_SPECS[spec]
    else:
        indices = [int(i) for i in spec]
    seen = {}
    out = []
    for i in indices:
        j = seen.get(i, 0)
        seen[i] = j + 1
        gid = f"m{i}" if j == 0 else f"m{i}_{j}"
        out.append(Generator(gid, i, 0.0, "morse", morse_index=i, homotopy="trivial"))
    return out


def build_table(orbits, cutoff=None, k_max=None, morse="none", n=2, resonance_tol=1e-9):
    """Generator table of all iterates with period <= cutoff (and k <= k_max).

    Each iterate x^k contributes x^k_- and x^k_+ in degrees (n - 1 - mu, n - mu)
    with mu the transverse index of x^k. Resonant elliptic iterates are rejected.
    """
    if cutoff is None and k_max is None:
        raise ArityError("build_table needs a period cutoff or k_max")
    gens = list(morse_generators(morse))
    below, above = -math.inf, math.inf
    for rec in orbits:
        if isinstance(rec, dict):
            rec = OrbitRecord.from_json(rec)
        if rec.period <= 0:
            raise ArityError(f"orbit {rec.name}: period must be positive")
        data = rec.data
        k = 0
        while True:
            kk = k + 1
            if k_max is not None and kk > k_max:
                break
            if cutoff is not None and kk * rec.period > cutoff * (1 + 1e-12):
                break
            if data.kind == "elliptic":
                x = kk * data.delta
                if abs(x - round(x)) < resonance_tol:
                    raise DegeneracyError(f"orbit {rec.name}: iterate {kk} is resonant "
                                          f"(k * rotation number = {x:.12g})")
            mu = iterate_index(data, kk)
            good = good_bad(data.mu, data.kind, kk)
            dm, dp = grading(mu, n)
            hom = None if rec.homotopy is None else tuple(kk * int(h) for h in rec.homotopy)
            for sgn, deg in (("-", dm), ("+", dp)):
                gens.append(Generator(f"{rec.name}^{kk}{sgn}", deg, kk * rec.period, "orbit",
                                      sgn, rec.name, kk, None, good, hom))
            k = kk
        # where can the omitted iterates land?
        mu_next = iterate_index(data, k + 1)
        increasing = data.delta > 0 if data.kind == "elliptic" else data.mu >= 0
        if increasing:
            below = max(below, n - mu_next)
        else:
            above = min(above, n - 1 - mu_next)
    return GeneratorTable(gens, cutoff, below, above, {"k_max": k_max, "morse": morse})


def table_from_counts(counts):
    """Anonymous table with the given number of generators per degree (period 0)."""
    gens = []
    for d, c in sorted(counts.items(), reverse=True):
        for j in range(int(c)):
            gens.append(Generator(f"g{d}_{j}", int(d), 0.0, "morse", morse_index=int(d)))
    return GeneratorTable(gens)


# structured differentials ------------------------------------------------------

def _same_iterate(g, h):
    return g.kind == "orbit" and h.kind == "orbit" and g.prime == h.prime and g.k == h.k


class StructuredDifferential:
    """Skeletons of the differential d (degree +1) and BV operator D (degree -1).

    Entries <op g, h> are fixed by the local theory of an iterate, forced to
    zero when h has strictly larger period than g, or unknown.
    """

    def __init__(self, table):
        self.table = table

    def entry(self, op, g, h):
        """(state, value) of <op g, h>; value is a Fraction for fixed entries."""
        if op == "d":
            if h.degree != g.degree + 1:
                raise ArityError("differential raises degree by one")
            if h.period > g.period:
                return ZERO, Fraction(0)
            if _same_iterate(g, h) and g.sign == "-" and h.sign == "+":
                return (FIXED, Fraction(0)) if g.good else (FIXED_PM, Fraction(2))
            return UNKNOWN, None
        if op == "D":
            if h.degree != g.degree - 1:
                raise ArityError("BV operator lowers degree by one")
            if h.period > g.period:
                return ZERO, Fraction(0)
            if _same_iterate(g, h) and g.sign == "+" and h.sign == "-":
                return FIXED, Fraction(g.k if g.good else 0)
            return UNKNOWN, None
        raise ArityError(f"unknown operator {op!r}")

    def block(self, op, d):
        """Source generators in degree d, targets, and the entry states."""
        src = self.table.in_degree(d)
        tgt = self.table.in_degree(d + 1 if op == "d" else d - 1)
        states = [[self.entry(op, g, h) for g in src] for h in tgt]
        return src, tgt, states

    def unknowns(self, op, degrees):
        out = []
        for d in degrees:
            src, tgt, st = self.block(op, d)
            for i, h in enumerate(tgt):
                for j, g in enumerate(src):
                    if st[i][j][0] == UNKNOWN:
                        out.append((g.id, h.id))
        return out

    def filtration_sound(self):
        """No entry that may be non-zero goes to a strictly larger period."""
        for op in ("d", "D"):
            for g in self.table.generators:
                tgt_deg = g.degree + 1 if op == "d" else g.degree - 1
                for h in self.table.in_degree(tgt_deg):
                    state, val = self.entry(op, g, h)
                    if h.period > g.period and not (state in (ZERO, FIXED) and val == 0):
                        return False
        return True

    def is_zero(self, op, g, h):
        state, val = self.entry(op, g, h)
        return state == ZERO or (state == FIXED and val == 0)

    def is_nonzero(self, op, g, h):
        state, val = self.entry(op, g, h)
        return state == FIXED_PM or (state == FIXED and val != 0)


def _peel(sd, op, cols, rows):
    """Triangular pivots proving injectivity of op on span(cols) into span(rows).

    Repeatedly picks a column with a fixed non-zero entry in a row where every
    other remaining column is zero. Returns (pivots, stuck columns).
    """
    remaining = list(cols)
    pivots = []
    progress = True
    while remaining and progress:
        progress = False
        # prefer the largest period, as in the filtration argument
        for c in sorted(remaining, key=lambda g: (-g.period, g.id)):
            for r in rows:
                if not sd.is_nonzero(op, c, r):
                    continue
                if all(sd.is_zero(op, o, r) for o in remaining if o is not c):
                    pivots.append((c.id, r.id, str(sd.entry(op, c, r)[1])))
                    remaining.remove(c)
                    progress = True
                    break
            if progress:
                break
    return pivots, remaining


def delta_injective_top(table, degree=2):
    """Is D : C^degree -> C^(degree-1) injective on orbit generators by triangularity?

    Returns (ok, witness). Morse generators in the top degree are excluded
    from the claim and listed in the witness.
    """
    sd = StructuredDifferential(table)
    top = table.in_degree(degree)
    cols = [g for g in top if g.kind == "orbit"]
    morse = [g.id for g in top if g.kind == "morse"]
    minus = [g for g in cols if g.sign != "+"]
    if minus:
        return False, {"reason": "degree contains x_- generators", "offending": [g.id for g in minus],
                       "morse_excluded": morse}
    rows = table.in_degree(degree - 1)
    pivots, stuck = _peel(sd, "D", cols, rows)
    if stuck:
        bad = [g.id for g in stuck if not g.good]
        return False, {"reason": "bad orbit kills the pivot" if bad else "no fixed pivot (period tie)",
                       "offending": bad or [g.id for g in stuck], "pivots": pivots,
                       "morse_excluded": morse}
    return True, {"pivots": pivots, "morse_excluded": morse}


# rank-nullity feasibility ------------------------------------------------------

def acyclicity_feasible(table, target=None, complete=None):
    """Ranks r_d of d_d : C_d -> C_(d+1) with c_d - r_d - r_(d-1) = h_d.

    ``table`` is a GeneratorTable or a {degree: count} dict; ``target`` maps
    degrees to cohomology dimensions (default 0). Only degrees that are
    complete in a truncated table are constrained. Depth-first search over
    all admissible rank vectors.
    """
    if isinstance(table, GeneratorTable):
        counts = table.counts()
        if complete is None:
            complete = (table.missing_below, table.missing_above)
    else:
        counts = {int(k): int(v) for k, v in table.items()}
    if complete is None:
        complete = (-math.inf, math.inf)
    target = {int(k): int(v) for k, v in (target or {}).items()}
    if any(v < 0 for v in counts.values()) or any(v < 0 for v in target.values()):
        raise ArityError("counts and target dimensions must be non-negative")

    def c(d):
        return counts.get(d, 0)

    def comp(d):
        return complete[0] < d < complete[1]

    degs = list(counts) + list(target)
    if not degs:
        return {"feasible": True, "ranks": {}, "failing_degrees": []}
    hi, lo = max(degs), min(degs) - 1

    def cap(d):
        if comp(d) and comp(d + 1):
            return min(c(d), c(d + 1))
        if comp(d):
            return c(d)
        if comp(d + 1):
            return c(d + 1)
        return 0

    failing = set()
    ranks = {}

    def search(d):
        # ranks r_hi .. r_d assigned; check the equation at degree d + 1
        if comp(d + 1) and d + 1 <= hi:
            if c(d + 1) - ranks[d + 1] - ranks[d] != target.get(d + 1, 0):
                failing.add(d + 1)
                return False
        if d == lo:
            return True
        for r in range(cap(d - 1) + 1):
            ranks[d - 1] = r
            if search(d - 1):
                return True
        del ranks[d - 1]
        return False

    ok = False
    for r in range(cap(hi) + 1):
        ranks.clear()
        ranks[hi] = r
        if search(hi):
            ok = True
            break
    out = {"feasible": ok, "counts": counts, "target": target,
           "failing_degrees": sorted(failing, reverse=True)}
    if ok:
        out["ranks"] = {d: ranks[d] for d in sorted(ranks, reverse=True)}
        out["failing_degrees"] = []
    else:
        d = min(failing) if failing else hi
        out["reason"] = (f"rank-nullity fails in degree(s) {sorted(failing, reverse=True)}"
                         f" (window {d - 1}..{d + 1})")
        out["window"] = [d + 1, d, d - 1]
    return out


def rank_q(M):
    """Exact rank of a matrix of integers or Fractions."""
    A = [[Fraction(x) for x in row] for row in M]
    if not A or not A[0]:
        return 0
    rows, cols = len(A), len(A[0])
    r = 0
    for j in range(cols):
        p = next((i for i in range(r, rows) if A[i][j] != 0), None)
        if p is None:
            continue
        A[r], A[p] = A[p], A[r]
        for i in range(r + 1, rows):
            if A[i][j] != 0:
                f = A[i][j] / A[r][j]
                A[i] = [a - f * b for a, b in zip(A[i], A[r])]
        r += 1
        if r == rows:
            break
    return r


# completions and the BV obstruction ----------------------------------------------

def completions(table, degrees, values=(-1, 0, 1), acyclic_at=(), max_assignments=600_000):
    """Integer completions of the skeletons on generators in ``degrees``.

    Yields (gens, d, D) with d, D matrices (target row, source column) over the
    window that satisfy d d = 0 and d D + D d = 0 wherever the window contains
    every intermediate degree, and vanishing cohomology in ``acyclic_at``.
    """
    sd = StructuredDifferential(table)
    degrees = sorted(set(degrees))
    gens = [g for d in sorted(degrees, reverse=True) for g in table.in_degree(d)]
    pos = {g.id: i for i, g in enumerate(gens)}
    n = len(gens)
    dfix = np.zeros((n, n), dtype=np.int64)
    Dfix = np.zeros((n, n), dtype=np.int64)
    free = {"d": [], "D": []}
    for g in gens:
        for h in gens:
            for op, M in (("d", dfix), ("D", Dfix)):
                want = g.degree + 1 if op == "d" else g.degree - 1
                if h.degree != want:
                    continue
                state, val = sd.entry(op, g, h)
                i, j = pos[h.id], pos[g.id]
                if state == FIXED:
                    M[i, j] = int(val)
                elif state == FIXED_PM:
                    free[op].append((i, j, (int(val), -int(val))))
                elif state == UNKNOWN:
                    free[op].append((i, j, tuple(values)))
    for op in ("d", "D"):
        size = math.prod(len(v) for _, _, v in free[op])
        if size > max_assignments:
            raise ArityError(f"{size} assignments of {op} entries exceed max_assignments")
    deg = np.array([g.degree for g in gens])
    lo, hi = degrees[0], degrees[-1]
    # d d: entries from degree e to e + 2 with e + 1 in the window are complete
    dd_rows = deg >= lo + 2
    # d D + D d on degree e needs e - 1 and e + 1 in the window
    mid = (deg > lo) & (deg < hi)

    def acyclic_ok(dm):
        for e in acyclic_at:
            src_e = np.where(deg == e)[0]
            src_prev = np.where(deg == e - 1)[0]
            tgt_next = np.where(deg == e + 1)[0]
            r_e = rank_q(dm[np.ix_(tgt_next, src_e)].tolist()) if len(tgt_next) and len(src_e) else 0
            r_p = rank_q(dm[np.ix_(src_e, src_prev)].tolist()) if len(src_e) and len(src_prev) else 0
            if len(src_e) - r_e - r_p != 0:
                return False
        return True

    for dvals in itertools.product(*[v for _, _, v in free["d"]]):
        dm = dfix.copy()
        for (i, j, _), x in zip(free["d"], dvals):
            dm[i, j] = x
        sq = dm @ dm
        if np.any(sq[dd_rows]):
            continue
        if not acyclic_ok(dm):
            continue
        for Dvals in itertools.product(*[v for _, _, v in free["D"]]):
            Dm = Dfix.copy()
            for (i, j, _), x in zip(free["D"], Dvals):
                Dm[i, j] = x
            anti = dm @ Dm + Dm @ dm
            if np.any(anti[np.ix_(mid, mid)]):
                continue
            yield gens, dm, Dm


def bv_obstruction(table, scenario, search=True, values=(-1, 0, 1), max_assignments=600_000):
    """Propagate filtration, fixed entries and d D + D d = 0 through a cycle scenario.

    ``scenario`` names a degree and the generators spanning the cycle
    candidate y. The argument: y exists by rank-nullity; acyclicity gives
    y = d z, which kills coefficients whose d-column is zero; if D vanishes on
    the degree of z then D y = -d D z = 0; a triangular fixed pivot of D on the
    surviving generators then contradicts D y = 0.
    """
    if not isinstance(scenario, dict) or "cycle" not in scenario:
        raise ArityError("scenario needs a 'cycle' list of generator ids")
    ids = list(scenario["cycle"])
    if not ids:
        raise ArityError("scenario cycle is empty")
    try:
        cyc = [table.by_id(i) for i in ids]
    except KeyError as exc:
        raise ArityError(f"unknown generator {exc.args[0]!r} in scenario") from None
    d = cyc[0].degree
    if any(g.degree != d for g in cyc):
        raise ArityError("cycle generators must share one degree")
    if "degree" in scenario and int(scenario["degree"]) != d:
        raise ArityError(f"scenario degree {scenario['degree']} does not match generators ({d})")
    need = [d - 2, d - 1, d, d + 1]
    missing = [e for e in need if not table.complete(e)]
    if missing:
        raise ArityError(f"table is truncated in degree(s) {missing}; raise the cutoff")
    sd = StructuredDifferential(table)
    steps = []
    report = {"scenario": scenario.get("name", ""), "degree": d, "cycle": ids, "steps": steps}

    # 1. a non-zero cycle in span(cyc)
    up = table.in_degree(d + 1)
    reach = [h for h in up if any(not sd.is_zero("d", g, h) for g in cyc)]
    if len(cyc) <= len(reach):
        steps.append(f"d restricted to the cycle span may be injective ({len(cyc)} -> {len(reach)})")
        report.update(verdict="no-obstruction", reason="no cycle forced by rank-nullity")
        return _with_search(report, table, d, search, values, max_assignments)
    steps.append(f"rank-nullity: span of {len(cyc)} generators -> {len(reach)} targets "
                 f"{[h.id for h in reach]} has a kernel; y != 0 is a cycle")
    # 2. y = d z: coefficients with an identically zero d-column vanish
    down = table.in_degree(d - 1)
    killed = [g for g in cyc if all(sd.is_zero("d", w, g) for w in down)]
    alive = [g for g in cyc if g not in killed]
    for g in killed:
        steps.append(f"coefficient of {g.id} in y = d z vanishes: every entry <d w, {g.id}> is zero")
    if not alive:
        report.update(verdict="contradiction", reason="y = d z forces y = 0")
        return _with_search(report, table, d, search, values, max_assignments)
    # 3. D z = 0 when D vanishes on C_(d-1)
    below2 = table.in_degree(d - 2)
    if not all(sd.is_zero("D", w, h) for w in down for h in below2):
        steps.append(f"D on degree {d - 1} is not forced to vanish")
        report.update(verdict="no-obstruction", reason="cannot conclude D z = 0")
        return _with_search(report, table, d, search, values, max_assignments)
    steps.append(f"D z = 0: all targets in degree {d - 2} have strictly larger period")
    steps.append("D y = D d z = -d D z = 0")
    # 4. D injective on the surviving span
    pivots, stuck = _peel(sd, "D", alive, table.in_degree(d - 1))
    if stuck:
        steps.append(f"no fixed pivot for {[g.id for g in stuck]}")
        report.update(verdict="no-obstruction", reason="D not provably injective on the surviving span")
        return _with_search(report, table, d, search, values, max_assignments)
    for c, r, v in pivots:
        steps.append(f"<D y, {r}> = lambda({c}) * {v} != 0")
    report.update(verdict="contradiction", reason="D y != 0 contradicts D y = 0", pivots=pivots)
    return _with_search(report, table, d, search, values, max_assignments)


def _with_search(report, table, d, search, values, max_assignments):
    if not search:
        return report
    checked = 0
    acyclic = 0
    try:
        for _ in completions(table, [d - 2, d - 1, d, d + 1], values, (), max_assignments):
            checked += 1
        for _ in completions(table, [d - 2, d - 1, d, d + 1], values, (d,), max_assignments):
            acyclic += 1
    except ArityError as exc:
        report["search"] = {"skipped": str(exc)}
        return report
    report["search"] = {"values": list(values), "consistent_completions": checked,
                        "acyclic_completions": acyclic}
    return report


# Morse-Bott counts and rotation windows ---------------------------------------------

def mb_e1_counts(a, equivariant=False):
    """Generators per degree (2, 1, 0, -1, ...) from the numbers a_j of orbits of index 2j - 1.

    Non-equivariant: (1, a_1, a_1 + 1, a_2, a_2, a_3, a_3, ...). Equivariant
    E_1 page: (1, a_1, 2, a_2, 2, a_3, 2, ...). Counts are exact for degrees
    >= 2 - 2 len(a).
    """
    a = [int(x) for x in a]
    if any(x <= 0 for x in a) or any(y < x for x, y in zip(a, a[1:])):
        raise ArityError("a-sequence must be non-decreasing positive integers")
    counts = {2: 1}
    if not a:
        counts[0] = 2 if equivariant else 1
        return counts
    for j, aj in enumerate(a, start=1):
        counts[3 - 2 * j] = aj
        if equivariant:
            counts[2 - 2 * j] = 2
        else:
            counts[2 - 2 * j] = aj + 1 if j == 1 else aj
    return counts


def delta_window(m, intersect=False):
    """Open interval for the rotation number forced by counts a_1 = 1, a_j = 2.

    2m D and (2m + 1) D in (m, m + 1) give D in (1/2, (m + 1)/(2m + 1)); with
    ``intersect`` the intersection over 1 <= j <= m is returned. The
    intervals shrink to the rational point 1/2.
    """
    m = int(m)
    if m < 1:
        raise ArityError("m must be >= 1")
    lo, hi = Fraction(0), Fraction(10**9)
    for j in (range(1, m + 1) if intersect else [m]):
        lo = max(lo, Fraction(j, 2 * j))
        hi = min(hi, Fraction(j + 1, 2 * j + 1))
    return {"interval": (lo, hi), "open": True, "limit": Fraction(1, 2),
            "flag": "rational limit contradicts an irrational rotation number"}
