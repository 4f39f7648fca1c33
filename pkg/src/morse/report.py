"""
Morse-theoretic bookkeeping for the knot potential.

The knot complement has Betti numbers [1, 1, 0, 0], hence Euler characteristic 0. The point at infinity is a
critical point of index 0 (Φ(∞) = 0) and is counted by convention; harmonicity rules out finite points of index 0
or 3. The alternating sum of the m_i then forces m1 - m2 = 1, and the tunneling built from the m2 unstable arcs gives
cp(K) >= 2 t(K) + 2.
"""

import logging
import re
from dataclasses import dataclass, field
from math import gcd
from typing import Dict, List, Optional, Sequence

from src.errors import IndexOutOfRange, UncatalogedKnot, UnreliableCount
from src.morse.critical import CriticalPoint, rearrangement_ordering_holds

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Homology of a knot complement: H_0 = H_1 = Z, higher groups vanish.
BETTI = [1, 1, 0, 0]
INCOMPLETE_SEARCH = "search incomplete: critical points were missed (the bound itself is a theorem)"


@dataclass
class MorseReport:
    knot: str
    m: List[int]
    cp_found: int
    betti: List[int] = field(default_factory=lambda: list(BETTI))
    euler_ok: bool = False
    lemma22_ok: bool = False
    t_known: Optional[int] = None
    bound_ok: Optional[bool] = None
    margin: Optional[int] = None
    notes: List[str] = field(default_factory=list)
    degenerate: int = 0
    morse_inequalities_ok: bool = False
    ordering_consistent: bool = True
    t_upper_bounds: Dict[str, int] = field(default_factory=dict)
    arcs: Dict[str, int] = field(default_factory=dict)

    @property
    def euler_characteristic(self) -> int:
        return sum((-1) ** i * b for i, b in enumerate(self.betti))

    @property
    def search_complete(self) -> bool:
        return self.lemma22_ok

    def to_dict(self) -> Dict:
        data = {
            "knot": self.knot,
            "m": self.m,
            "cp_found": self.cp_found,
            "betti": self.betti,
            "euler_ok": self.euler_ok,
            "lemma22_ok": self.lemma22_ok,
            "t_known": self.t_known,
            "bound_ok": self.bound_ok,
            "margin": self.margin,
            "notes": self.notes,
            "morse_inequalities_ok": self.morse_inequalities_ok,
            "ordering_consistent": self.ordering_consistent,
            "t_upper_bounds": dict(sorted(self.t_upper_bounds.items())),
        }
        if self.arcs:
            data["arcs"] = dict(sorted(self.arcs.items()))
        return data


@dataclass(frozen=True)
class BoundVerdict:
    passed: bool
    margin: int
    note: str


def assemble_report(knot: str, critical_points: Sequence[CriticalPoint]) -> MorseReport:
    """Count indices of the finite critical points and check the Euler identity and m1 - m2 = 1."""
    m = [1, 0, 0, 0]
    degenerate = 0
    for cp in critical_points:
        if cp.index is None:
            degenerate += 1
        elif cp.index in (1, 2):
            m[cp.index] += 1
        else:
            raise IndexOutOfRange(f"Finite critical point at {cp.x.tolist()} has index {cp.index}.")

    euler_ok = m[0] - m[1] + m[2] - m[3] == 1 - 1 + 0 - 0
    lemma22_ok = m[1] - m[2] == 1
    if euler_ok != lemma22_ok:
        raise IndexOutOfRange("Euler identity and m1 - m2 = 1 disagree although m0 = 1 and m3 = 0.")

    report = MorseReport(
        knot=knot,
        m=m,
        cp_found=sum(m),
        euler_ok=euler_ok,
        lemma22_ok=lemma22_ok,
        degenerate=degenerate,
        morse_inequalities_ok=all(mi >= bi for mi, bi in zip(m, BETTI)),
        ordering_consistent=rearrangement_ordering_holds(critical_points),
        t_upper_bounds={"tunneling_arcs": m[2]},
    )

    if degenerate:
        report.notes.append(f"{degenerate} degenerate critical point(s) not classified; perturb the density")
    unconverged = sum(not cp.quadrature_converged for cp in critical_points)
    if unconverged:
        report.notes.append(f"{unconverged} critical point(s) refined with unconverged quadrature")
    if not lemma22_ok:
        report.notes.append(f"m1 - m2 = {m[1] - m[2]} instead of 1: {INCOMPLETE_SEARCH}")
        logger.warning(f"{knot}: m1 - m2 = {m[1] - m[2]}, the critical point search is incomplete")
    if m[1] < BETTI[1]:
        report.notes.append("no index-1 critical point found although one always exists")
    if m[2] == 0 and knot != "unknot":
        report.notes.append("m2 = 0: no tunnel arcs, consistent only with tunnel number 0")
    if not report.ordering_consistent:
        report.notes.append("critical values are not ordered by index (diagnostic)")
    return report


class TunnelCatalog:
    """Known tunnel numbers by knot label."""

    entries: Dict[str, int] = {"unknot": 0}
    provenance: Dict[str, str] = {
        "unknot": "the unknot has tunnel number zero",
        "torus": "nontrivial torus knots have tunnel number one (the trefoil is torus(2,3))",
    }

    _torus_regex = r"torus\((-?[0-9]+),\s*(-?[0-9]+)\)"

    def lookup(self, label: str) -> int:
        if label in self.entries:
            return self.entries[label]

        match = re.fullmatch(self._torus_regex, label.strip())
        if match:
            p, q = (int(v) for v in match.groups())
            if p * q != 0 and gcd(p, q) == 1:
                return 0 if min(abs(p), abs(q)) == 1 else 1

        raise UncatalogedKnot(label)

    def note(self, label: str) -> Optional[str]:
        if label in self.provenance:
            return self.provenance[label]
        return self.provenance["torus"] if label.startswith("torus") else None


def catalog_lookup(label: str, catalog: TunnelCatalog = TunnelCatalog()) -> int:
    return catalog.lookup(label)


def verify_bound(report: MorseReport, t: int) -> BoundVerdict:
    """cp_found >= 2t + 2. A failure always means missed critical points, never a counterexample."""
    assert t >= 0, f"Tunnel number must be non-negative, got {t}."
    if not report.lemma22_ok:
        raise UnreliableCount(f"{report.knot}: m1 - m2 != 1, the critical point count is unreliable.")

    margin = report.cp_found - (2 * t + 2)
    passed = margin >= 0
    note = f"cp_found = {report.cp_found} >= {2 * t + 2} = 2t + 2" if passed else INCOMPLETE_SEARCH
    return BoundVerdict(passed=passed, margin=margin, note=note)


def apply_bound(report: MorseReport, catalog: TunnelCatalog = TunnelCatalog()) -> MorseReport:
    """Fill t_known, bound_ok and margin from the catalog when the knot is known and the count is reliable."""
    try:
        t = catalog.lookup(report.knot)
    except UncatalogedKnot:
        report.notes.append(f"{report.knot} is not in the tunnel catalog; bound check skipped")
        return report

    report.t_known = t
    if not report.search_complete:
        report.notes.append("bound check skipped: unreliable count")
        return report

    verdict = verify_bound(report, t)
    report.bound_ok = verdict.passed
    report.margin = verdict.margin
    report.notes.append(verdict.note)
    if not verdict.passed:
        logger.warning(f"{report.knot}: {verdict.note}")
    return report
