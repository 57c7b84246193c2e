"""CDCL solver with two watched literals and blocking literals.

Memory layout matters here more than usual: clauses sit in a
:class:`~thpsat.cnf.ClauseArena`, and the watch lists, values, levels,
reasons and trail are int arrays carved from the huge-page aware allocator.
Turning ``THP_ALWAYS=1`` on therefore moves everything unit propagation
touches onto huge-page eligible memory.

Watch list ``L[p]`` holds the clauses that contain ``~p``: it is visited
when ``p`` becomes true.  Each entry is a ``(clause_ref, blocker)`` pair of
int32s.  A clause watching literals ``c[0]`` and ``c[1]`` is listed in
``L[~c[0]]`` and ``L[~c[1]]``.
"""

from __future__ import annotations

import enum
import heapq
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .cnf import (
    FALSE,
    HEADER,
    NO_REASON,
    TRUE,
    UNASSIGNED,
    Assignment,
    ClauseArena,
    ClauseState,
    Formula,
    clause_state,
    lit_to_dimacs,
)
from .hugepage_alloc import BlockOwner, HugePageAllocator

WATCH_INIT_PAIRS = 4


class Attach(enum.Enum):
    ATTACHED = "Attached"
    UNIT_ENQUEUED = "UnitEnqueued"
    EMPTY_CONFLICT = "EmptyConflict"


class InvariantViolation(AssertionError):
    pass


@dataclass
class SolverStats:
    decisions: int = 0
    propagations: int = 0
    conflicts: int = 0
    learned_clauses: int = 0
    restarts: int = 0
    reductions: int = 0
    # clause/list accesses by propagation line group
    B3_list_load: int = 0
    B4_clause_scan: int = 0
    B6_B7_list_move: int = 0
    B8_unit: int = 0
    B9_conflict: int = 0
    blocker_skips: int = 0
    # clause accesses outside propagation
    analyze_clause_access: int = 0
    attach_clause_access: int = 0
    reduce_clause_access: int = 0
    invariant_checks: int = 0

    PROPAGATION_SITES = ("B3_list_load", "B4_clause_scan", "B6_B7_list_move", "B8_unit", "B9_conflict")
    OTHER_SITES = ("analyze_clause_access", "attach_clause_access", "reduce_clause_access")

    @property
    def propagation_accesses(self) -> int:
        return sum(getattr(self, k) for k in self.PROPAGATION_SITES)

    @property
    def other_accesses(self) -> int:
        return sum(getattr(self, k) for k in self.OTHER_SITES)

    def propagation_share(self) -> float:
        total = self.propagation_accesses + self.other_accesses
        return self.propagation_accesses / total if total else 0.0

    def to_dict(self) -> Dict[str, float]:
        d = asdict(self)
        d["propagation_accesses"] = self.propagation_accesses
        d["other_accesses"] = self.other_accesses
        d["propagation_share"] = round(self.propagation_share(), 6)
        return d


@dataclass
class SolveResult:
    status: str  # "SAT", "UNSAT" or "UNKNOWN"
    model: Optional[List[int]] = None
    reason: Optional[str] = None
    stats: SolverStats = field(default_factory=SolverStats)

    @property
    def exit_code(self) -> int:
        return {"SAT": 10, "UNSAT": 20}.get(self.status, 0)


class Solver(BlockOwner):
    """CDCL search over a fixed set of variables.

    ``debug=True`` re-checks the watch, two-list and propagation
    completeness invariants after every conflict-free propagation and
    raises :class:`InvariantViolation` on the first failure.
    """

    def __init__(self, formula: Optional[Formula] = None, *, num_vars: Optional[int] = None,
                 use_blockers: bool = True, debug: bool = False,
                 allocator: Optional[HugePageAllocator] = None,
                 restart_first: int = 100, restart_inc: float = 1.5,
                 reduce_interval: int = 4000, var_decay: float = 0.95,
                 clause_decay: float = 0.999, phase_saving: bool = False):
        if num_vars is None:
            num_vars = formula.num_vars if formula is not None else 0
        self._init_blocks(allocator)
        self.num_vars = num_vars
        self.use_blockers = use_blockers
        self.debug = debug
        self.stats = SolverStats()
        self.restart_first = restart_first
        self.restart_inc = restart_inc
        self.reduce_interval = reduce_interval
        self.var_decay = var_decay
        self.clause_decay = clause_decay

        self.arena = ClauseArena(self.allocator)
        self.assign = Assignment(num_vars, self.allocator)
        nlits = 2 * (num_vars + 1)
        self.wblk = [self._take(8 * WATCH_INIT_PAIRS) for _ in range(nlits)]
        self.wmem = [b.view.cast("i") for b in self.wblk]
        self.wlen = [0] * nlits
        self.trail_lim: List[int] = []
        self.qhead = 0
        self.ok = True
        self.clauses: List[int] = []
        self.learnts: List[int] = []
        self.clause_activity: Dict[int, float] = {}
        self.cla_inc = 1.0
        self.activity = [0.0] * (num_vars + 1)
        self.var_inc = 1.0
        self.order_heap = [(0.0, v) for v in range(1, num_vars + 1)]
        self.seen = bytearray(num_vars + 1)
        self.phase_saving = phase_saving
        self.polarity = bytearray([1]) * (num_vars + 1)  # 1 = negative

        if formula is not None:
            if formula.num_vars > num_vars:
                raise ValueError("formula has more variables than the solver")
            for lits in formula.clauses:
                self.add_clause(lits)

    # ------------------------------------------------------------------
    # basic state

    @property
    def decision_level(self) -> int:
        return len(self.trail_lim)

    def value(self, lit: int) -> int:
        return self.assign.value[lit]

    def enqueue(self, lit: int, reason: int = NO_REASON) -> bool:
        """Make ``lit`` true; False if it is already false."""
        val = self.assign.value[lit]
        if val == TRUE:
            return True
        if val == FALSE:
            return False
        self.assign.assign(lit, self.decision_level, reason)
        return True

    def _watch(self, lit: int, cref: int, blocker: int) -> None:
        n = self.wlen[lit]
        ws = self.wmem[lit]
        if 2 * n + 2 > len(ws):
            ws = self._grow_watch(lit)
        ws[2 * n] = cref
        ws[2 * n + 1] = blocker
        self.wlen[lit] = n + 1

    def _grow_watch(self, lit: int):
        old = self.wblk[lit]
        used = 8 * self.wlen[lit]
        block = self._take(2 * old.size)
        block.view[:used] = old.view[:used]
        self.wmem[lit].release()
        self.wblk[lit] = block
        self.wmem[lit] = ws = block.view.cast("i")
        self._give_back(old)
        return ws

    def watchers(self, lit: int) -> List[Tuple[int, int]]:
        """Contents of ``L[lit]`` as (clause_ref, blocker) pairs."""
        ws = self.wmem[lit]
        return [(ws[2 * i], ws[2 * i + 1]) for i in range(self.wlen[lit])]

    # ------------------------------------------------------------------
    # clauses

    def add_clause(self, lits: Sequence[int], learnt: bool = False) -> Attach:
        """Store a normalized clause (literal codes) and attach it at level 0."""
        if self.decision_level != 0:
            raise RuntimeError("clauses can only be added at decision level 0")
        cref = self.arena.add(lits, learnt)
        (self.learnts if learnt else self.clauses).append(cref)
        if learnt:
            self.clause_activity[cref] = 0.0
        return self.attach_clause(cref)

    def attach_clause(self, cref: int) -> Attach:
        mem = self.arena.mem
        val = self.assign.value
        base = cref + HEADER
        n = mem[cref]
        self.stats.attach_clause_access += 1
        if n == 0:
            self.ok = False
            return Attach.EMPTY_CONFLICT
        if n == 1:
            if self.enqueue(mem[base]):
                return Attach.UNIT_ENQUEUED
            self.ok = False
            return Attach.EMPTY_CONFLICT
        # move the first two non-falsified literals to the watch positions
        placed = 0
        for k in range(n):
            lit = mem[base + k]
            if val[lit] != FALSE:
                mem[base + k] = mem[base + placed]
                mem[base + placed] = lit
                placed += 1
                if placed == 2:
                    break
        if placed == 0:
            self.ok = False
            return Attach.EMPTY_CONFLICT
        c0, c1 = mem[base], mem[base + 1]
        self._watch(c0 ^ 1, cref, c1)
        self._watch(c1 ^ 1, cref, c0)
        if placed == 1 and val[c0] == UNASSIGNED:
            self.enqueue(c0, cref)
            return Attach.UNIT_ENQUEUED
        return Attach.ATTACHED

    def _locked(self, cref: int) -> bool:
        c0 = self.arena.mem[cref + HEADER]
        return self.assign.value[c0] == TRUE and self.assign.reason[c0 >> 1] == cref

    # ------------------------------------------------------------------
    # propagation

    def unit_propagate(self) -> Optional[int]:
        """Propagate every pending trail literal; return a conflict clause or None."""
        a = self.assign
        val, trail, level, reason = a.value, a.trail, a.level, a.reason
        mem = self.arena.mem
        wmem, wlen = self.wmem, self.wlen
        blockers = self.use_blockers
        lvl = len(self.trail_lim)
        qhead = self.qhead
        tl = a.trail_len
        conflict = None
        n_list = n_clause = n_move = n_unit = n_skip = 0

        while qhead < tl:                                   # B1
            p = trail[qhead]                                # B2
            qhead += 1
            false_lit = p ^ 1
            ws = wmem[p]                                    # B3
            n_list += 1
            end = 2 * wlen[p]
            i = j = 0
            while i < end:                                  # B4
                cref = ws[i]
                blocker = ws[i + 1]
                i += 2
                if blockers and val[blocker] == TRUE:
                    ws[j] = cref
                    ws[j + 1] = blocker
                    j += 2
                    n_skip += 1
                    continue
                n_clause += 1
                base = cref + HEADER
                first = mem[base]
                if first == false_lit:
                    first = mem[base + 1]
                    mem[base] = first
                    mem[base + 1] = false_lit
                if val[first] == TRUE:
                    ws[j] = cref
                    ws[j + 1] = first
                    j += 2
                    continue
                k = base + 2                                # B5
                stop = base + mem[cref]
                while k < stop:
                    lit = mem[k]
                    if val[lit] != FALSE:
                        mem[base + 1] = lit
                        mem[k] = false_lit
                        q = lit ^ 1                         # B6: dropped from L[p] by not copying
                        m = wlen[q]                         # B7
                        wq = wmem[q]
                        if 2 * m + 2 > len(wq):
                            wq = self._grow_watch(q)
                        wq[2 * m] = cref
                        wq[2 * m + 1] = first
                        wlen[q] = m + 1
                        n_move += 1
                        break
                    k += 1
                else:
                    ws[j] = cref
                    ws[j + 1] = first
                    j += 2
                    if val[first] == FALSE:                 # B9
                        while i < end:
                            ws[j] = ws[i]
                            ws[j + 1] = ws[i + 1]
                            i += 2
                            j += 2
                        conflict = cref
                    else:                                   # B8
                        val[first] = TRUE
                        val[first ^ 1] = FALSE
                        v = first >> 1
                        level[v] = lvl
                        reason[v] = cref
                        trail[tl] = first
                        tl += 1
                        n_unit += 1
            wlen[p] = j >> 1
            if conflict is not None:
                break

        st = self.stats
        st.propagations += qhead - self.qhead
        st.B3_list_load += n_list
        st.B4_clause_scan += n_clause
        st.B6_B7_list_move += n_move
        st.B8_unit += n_unit
        st.blocker_skips += n_skip
        a.trail_len = tl
        if conflict is not None:
            st.B9_conflict += 1
            self.qhead = tl
            return conflict
        self.qhead = qhead
        if self.debug:
            self.assert_invariants()
        return None

    # ------------------------------------------------------------------
    # conflict analysis

    def analyze_conflict(self, confl: int) -> Tuple[List[int], int]:
        """First-UIP learning.

        Returns ``(learnt, backjump_level)``; ``learnt[0]`` is the asserting
        literal and ``learnt[1]`` (if any) has the backjump level.  A conflict
        at level 0 yields the empty clause, i.e. unsatisfiability.
        """
        lvl = self.decision_level
        if lvl == 0:
            return [], 0
        a = self.assign
        trail, level, reason = a.trail, a.level, a.reason
        mem = self.arena.mem
        seen = self.seen
        learnt = [-1]
        path = 0
        p = -1
        idx = a.trail_len - 1
        accesses = 0
        while True:
            accesses += 1
            if mem[confl + 1] & 1:
                self._bump_clause(confl)
            base = confl + HEADER
            start = base if p == -1 else base + 1
            for k in range(start, base + mem[confl]):
                q = mem[k]
                v = q >> 1
                if not seen[v] and level[v] > 0:
                    self._bump_var(v)
                    seen[v] = 1
                    if level[v] >= lvl:
                        path += 1
                    else:
                        learnt.append(q)
            while not seen[trail[idx] >> 1]:
                idx -= 1
            p = trail[idx]
            idx -= 1
            confl = reason[p >> 1]
            seen[p >> 1] = 0
            path -= 1
            if path == 0:
                break
        learnt[0] = p ^ 1
        for q in learnt[1:]:
            seen[q >> 1] = 0
        self.stats.analyze_clause_access += accesses

        if len(learnt) == 1:
            return learnt, 0
        best = 1
        for k in range(2, len(learnt)):
            if level[learnt[k] >> 1] > level[learnt[best] >> 1]:
                best = k
        learnt[1], learnt[best] = learnt[best], learnt[1]
        return learnt, level[learnt[1] >> 1]

    def _bump_var(self, v: int) -> None:
        act = self.activity
        act[v] += self.var_inc
        if act[v] > 1e100:
            for u in range(1, self.num_vars + 1):
                act[u] *= 1e-100
            self.var_inc *= 1e-100
            self._rebuild_heap()
        else:
            heapq.heappush(self.order_heap, (-act[v], v))

    def _bump_clause(self, cref: int) -> None:
        act = self.clause_activity
        act[cref] = act.get(cref, 0.0) + self.cla_inc
        if act[cref] > 1e20:
            for c in act:
                act[c] *= 1e-20
            self.cla_inc *= 1e-20

    def _rebuild_heap(self) -> None:
        val, act = self.assign.value, self.activity
        self.order_heap = [(-act[v], v) for v in range(1, self.num_vars + 1) if val[2 * v] == UNASSIGNED]
        heapq.heapify(self.order_heap)

    # ------------------------------------------------------------------
    # search

    def decide(self) -> Optional[int]:
        """Most active unassigned variable (lowest index on ties), negated.

        With ``phase_saving`` the variable's last polarity is reused instead;
        never-assigned variables still start negative.
        """
        heap, act, val = self.order_heap, self.activity, self.assign.value
        while heap:
            neg, v = heapq.heappop(heap)
            if val[2 * v] != UNASSIGNED or -neg != act[v]:
                continue
            return 2 * v + self.polarity[v]
        return None

    def backjump(self, level: int) -> None:
        """Undo every assignment above ``level``."""
        if level >= self.decision_level:
            return
        a = self.assign
        keep = self.trail_lim[level]
        act = self.activity
        heap = self.order_heap
        trail = a.trail
        polarity = self.polarity if self.phase_saving else None
        for i in range(keep, a.trail_len):
            lit = trail[i]
            v = lit >> 1
            heapq.heappush(heap, (-act[v], v))
            if polarity is not None:
                polarity[v] = lit & 1
        a.unassign_to(keep)
        del self.trail_lim[level:]
        self.qhead = keep
        if len(heap) > 4 * self.num_vars + 1024:
            self._rebuild_heap()

    def new_decision(self, lit: int) -> None:
        self.trail_lim.append(self.assign.trail_len)
        self.stats.decisions += 1
        self.enqueue(lit)

    def _learn(self, learnt: List[int]) -> None:
        if len(learnt) == 1:
            self.enqueue(learnt[0])
            return
        cref = self.arena.add(learnt, learnt=True)
        self.learnts.append(cref)
        self.clause_activity[cref] = 0.0
        self._bump_clause(cref)
        self._watch(learnt[0] ^ 1, cref, learnt[1])
        self._watch(learnt[1] ^ 1, cref, learnt[0])
        self.enqueue(learnt[0], cref)

    def reduce_db(self) -> None:
        """Delete the less active half of the long, unlocked learnt clauses."""
        mem = self.arena.mem
        act = self.clause_activity
        keep, candidates = [], []
        for c in self.learnts:
            self.stats.reduce_clause_access += 1
            if mem[c] <= 2 or self._locked(c):
                keep.append(c)
            else:
                candidates.append(c)
        candidates.sort(key=lambda c: act.get(c, 0.0))
        half = len(candidates) // 2
        for c in candidates[:half]:
            self.arena.delete(c)
            act.pop(c, None)
        self.learnts = keep + candidates[half:]
        self.stats.reductions += 1
        if self.arena.wasted * 2 > self.arena.top:
            self._compact()
        self._rebuild_watches()

    def _compact(self) -> None:
        remap = self.arena.compact()
        self.clauses = [remap[c] for c in self.clauses if c in remap]
        self.learnts = [remap[c] for c in self.learnts]
        self.clause_activity = {remap[c]: x for c, x in self.clause_activity.items() if c in remap}
        a = self.assign
        for i in range(a.trail_len):
            v = a.trail[i] >> 1
            r = a.reason[v]
            if r != NO_REASON:
                a.reason[v] = remap.get(r, NO_REASON)

    def _rebuild_watches(self) -> None:
        mem = self.arena.mem
        for lit in range(len(self.wlen)):
            self.wlen[lit] = 0
        for cref in self.arena.refs():
            if mem[cref] >= 2:
                c0, c1 = mem[cref + HEADER], mem[cref + HEADER + 1]
                self._watch(c0 ^ 1, cref, c1)
                self._watch(c1 ^ 1, cref, c0)

    def solve(self, timeout: Optional[float] = None, conflict_limit: Optional[int] = None) -> SolveResult:
        st = self.stats
        if not self.ok:
            return SolveResult("UNSAT", stats=st)
        deadline = None if timeout is None else time.monotonic() + timeout
        restart_limit = self.restart_first
        since_restart = 0
        next_reduce = self.reduce_interval
        start_conflicts = st.conflicts
        while True:
            confl = self.unit_propagate()
            if confl is not None:
                st.conflicts += 1
                since_restart += 1
                if self.decision_level == 0:
                    self.ok = False
                    return SolveResult("UNSAT", stats=st)
                learnt, bt = self.analyze_conflict(confl)
                self.backjump(bt)
                self._learn(learnt)
                st.learned_clauses += 1
                self.var_inc /= self.var_decay
                self.cla_inc /= self.clause_decay
                if conflict_limit is not None and st.conflicts - start_conflicts >= conflict_limit:
                    self.backjump(0)
                    return SolveResult("UNKNOWN", reason="conflict limit", stats=st)
                if deadline is not None and time.monotonic() >= deadline:
                    self.backjump(0)
                    return SolveResult("UNKNOWN", reason="timeout", stats=st)
                continue
            if since_restart >= restart_limit:
                st.restarts += 1
                since_restart = 0
                restart_limit = int(restart_limit * self.restart_inc)
                self.backjump(0)
            if st.conflicts >= next_reduce:
                next_reduce += self.reduce_interval
                self.reduce_db()
            if deadline is not None and time.monotonic() >= deadline:
                self.backjump(0)
                return SolveResult("UNKNOWN", reason="timeout", stats=st)
            lit = self.decide()
            if lit is None:
                return SolveResult("SAT", model=self.model(), stats=st)
            self.new_decision(lit)

    def model(self) -> List[int]:
        val = self.assign.value
        return [v if val[2 * v] == TRUE else -v for v in range(1, self.num_vars + 1)]

    # ------------------------------------------------------------------
    # debugging

    def attached(self) -> List[int]:
        """Live clauses of length >= 2 (the watched ones)."""
        mem = self.arena.mem
        return [c for c in self.arena.refs() if mem[c] >= 2]

    def check_invariants(self) -> List[str]:
        """Full-scan check of the watch, two-list and completeness invariants."""
        self.stats.invariant_checks += 1
        mem = self.arena.mem
        val = self.assign.value
        problems = []
        where: Dict[int, List[int]] = {}
        for lit in range(len(self.wlen)):
            for cref, blocker in self.watchers(lit):
                where.setdefault(cref, []).append(lit)
                lits = self.arena.literals(cref)
                if blocker not in lits:
                    problems.append(f"blocker {lit_to_dimacs(blocker)} not in clause {cref}")
        for cref in self.attached():
            lits = self.arena.literals(cref)
            expect = sorted([lits[0] ^ 1, lits[1] ^ 1])
            if sorted(where.get(cref, [])) != expect:
                problems.append(f"clause {cref} listed in {where.get(cref)} instead of {expect}")
            state = clause_state(lits, val).state
            if val[lits[0]] == FALSE and val[lits[1]] == FALSE and state is not ClauseState.SATISFIED:
                problems.append(f"clause {cref} has both watches false and is not satisfied")
            if state in (ClauseState.UNIT, ClauseState.FALSIFIED):
                problems.append(f"clause {cref} is {state.value} after propagation")
        for cref in self.arena.refs():
            if mem[cref] == 1 and clause_state(self.arena.literals(cref), val).state is not ClauseState.SATISFIED:
                problems.append(f"unit clause {cref} not satisfied after propagation")
        return problems

    def assert_invariants(self) -> None:
        problems = self.check_invariants()
        if problems:
            raise InvariantViolation("; ".join(problems[:5]))


def solve(formula: Formula, timeout: Optional[float] = None, conflict_limit: Optional[int] = None,
          **options) -> SolveResult:
    """Solve ``formula`` with a fresh :class:`Solver`."""
    solver = Solver(formula, **options)
    try:
        return solver.solve(timeout=timeout, conflict_limit=conflict_limit)
    finally:
        solver.close()
