"""CNF data model: literal encoding, clause arena, DIMACS I/O, clause states.

Literals are encoded densely: variable ``v`` (1-based) maps to ``2v`` for the
positive and ``2v + 1`` for the negative literal, so ``lit ^ 1`` negates and
``lit >> 1`` recovers the variable.  Watch lists and value tables can then be
plain arrays indexed by literal code.
"""

from __future__ import annotations

import array
import enum
import io
from typing import Iterable, Iterator, List, NamedTuple, Optional, Sequence, Union

from .hugepage_alloc import BlockOwner, HugePageAllocator

TRUE = 1
FALSE = -1
UNASSIGNED = 0
NO_REASON = -1


def lit_from_dimacs(x: int) -> int:
    if x == 0:
        raise ValueError("0 is not a literal")
    return 2 * x if x > 0 else -2 * x + 1


def lit_to_dimacs(lit: int) -> int:
    v = lit >> 1
    return -v if lit & 1 else v


def negate(lit: int) -> int:
    return lit ^ 1


def var(lit: int) -> int:
    return lit >> 1


class DimacsError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# --------------------------------------------------------------------------
# clause arena

HEADER = 2  # size, flags
FLAG_LEARNT = 1
FLAG_DELETED = 2


class ClauseArena(BlockOwner):
    """Contiguous int32 clause store.

    Clause ``cref`` occupies ``mem[cref] = size``, ``mem[cref + 1] = flags``
    and its literals at ``mem[cref + 2 : cref + 2 + size]``.  References stay
    valid until :meth:`compact`.  ``mem`` is replaced on growth, so hot loops
    must re-read it after adding clauses.
    """

    def __init__(self, allocator: Optional[HugePageAllocator] = None, capacity: int = 1024):
        self._init_blocks(allocator)
        self._block = self._take(4 * max(capacity, 16))
        self.mem = self._block.view.cast("i")
        self.top = 0
        self.wasted = 0

    @property
    def capacity(self) -> int:
        return len(self.mem)

    def _reserve(self, words: int) -> None:
        need = self.top + words
        if need <= len(self.mem):
            return
        cap = len(self.mem)
        while cap < need:
            cap *= 2
        block = self._take(4 * cap)
        block.view[:4 * self.top] = self._block.view[:4 * self.top]
        old = self._block
        self.mem.release()
        self._block = block
        self.mem = block.view.cast("i")
        self._give_back(old)

    def add(self, lits: Sequence[int], learnt: bool = False) -> int:
        n = len(lits)
        self._reserve(HEADER + n)
        cref = self.top
        mem = self.mem
        mem[cref] = n
        mem[cref + 1] = FLAG_LEARNT if learnt else 0
        mem[cref + HEADER:cref + HEADER + n] = memoryview(_int32(lits))
        self.top = cref + HEADER + n
        return cref

    def size(self, cref: int) -> int:
        return self.mem[cref]

    def literals(self, cref: int) -> List[int]:
        n = self.mem[cref]
        return self.mem[cref + HEADER:cref + HEADER + n].tolist()

    def learnt(self, cref: int) -> bool:
        return bool(self.mem[cref + 1] & FLAG_LEARNT)

    def deleted(self, cref: int) -> bool:
        return bool(self.mem[cref + 1] & FLAG_DELETED)

    def delete(self, cref: int) -> None:
        if not self.mem[cref + 1] & FLAG_DELETED:
            self.mem[cref + 1] |= FLAG_DELETED
            self.wasted += HEADER + self.mem[cref]

    def refs(self) -> Iterator[int]:
        """All live clause references in storage order."""
        mem = self.mem
        cref = 0
        while cref < self.top:
            n = mem[cref]
            if not mem[cref + 1] & FLAG_DELETED:
                yield cref
            cref += HEADER + n

    def compact(self) -> dict:
        """Drop deleted clauses; returns the old->new reference map."""
        mem = self.mem
        remap = {}
        write = 0
        cref = 0
        top = self.top
        while cref < top:
            n = mem[cref]
            step = HEADER + n
            if not mem[cref + 1] & FLAG_DELETED:
                if write != cref:
                    mem[write:write + step] = mem[cref:cref + step]
                remap[cref] = write
                write += step
            cref += step
        self.top = write
        self.wasted = 0
        return remap


def _int32(values: Sequence[int]) -> array.array:
    return array.array("i", values)


# --------------------------------------------------------------------------
# formula


class Formula:
    """A CNF formula whose clauses live in a :class:`ClauseArena`."""

    def __init__(self, num_vars: int = 0, allocator: Optional[HugePageAllocator] = None):
        self.num_vars = num_vars
        self.arena = ClauseArena(allocator)
        self.refs: List[int] = []
        self.tautologies = 0
        self.duplicates_removed = 0
        self.declared_clauses: Optional[int] = None

    @classmethod
    def from_clauses(cls, clauses: Iterable[Iterable[int]], num_vars: Optional[int] = None,
                     allocator: Optional[HugePageAllocator] = None) -> "Formula":
        """Build from DIMACS-style integer clauses."""
        clauses = [list(c) for c in clauses]
        if num_vars is None:
            num_vars = max((abs(x) for c in clauses for x in c), default=0)
        f = cls(num_vars, allocator)
        for c in clauses:
            f.add_clause(c)
        return f

    def add_clause(self, dimacs_lits: Iterable[int]) -> Optional[int]:
        """Normalize and store a clause; tautologies are counted and dropped."""
        seen = {}
        for x in dimacs_lits:
            if x == 0 or abs(x) > self.num_vars:
                raise ValueError(f"literal {x} out of range 1..{self.num_vars}")
            if x in seen:
                self.duplicates_removed += 1
                continue
            if -x in seen:
                self.tautologies += 1
                return None
            seen[x] = None
        cref = self.arena.add([lit_from_dimacs(x) for x in seen])
        self.refs.append(cref)
        return cref

    def __len__(self) -> int:
        return len(self.refs)

    @property
    def clauses(self) -> List[List[int]]:
        """Clauses as lists of literal codes."""
        return [self.arena.literals(c) for c in self.refs]

    def dimacs_clauses(self) -> List[List[int]]:
        return [[lit_to_dimacs(l) for l in c] for c in self.clauses]

    def __eq__(self, other):
        if not isinstance(other, Formula):
            return NotImplemented
        return self.num_vars == other.num_vars and self.clauses == other.clauses

    def __repr__(self):
        return f"Formula(num_vars={self.num_vars}, clauses={len(self)})"


def parse_dimacs(text: Union[str, bytes], allocator: Optional[HugePageAllocator] = None) -> Formula:
    """Parse DIMACS CNF.

    Comment lines start with ``c``; ``p cnf V C`` must precede the first
    clause; clauses are 0-terminated and may span lines.  A ``%`` line (as
    in the SATLIB uniform random sets) ends the clause section.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    formula: Optional[Formula] = None
    pending: List[int] = []
    pending_line = 0
    lineno = 0
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line or line[0] == "c":
            continue
        if line[0] == "%":
            break
        if line[0] == "p":
            if formula is not None:
                raise DimacsError("duplicate header", lineno)
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise DimacsError(f"malformed header {line!r}", lineno)
            try:
                nv, nc = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsError(f"malformed header {line!r}", lineno) from None
            if nv < 0 or nc < 0:
                raise DimacsError(f"negative count in header {line!r}", lineno)
            formula = Formula(nv, allocator)
            formula.declared_clauses = nc
            continue
        if formula is None:
            raise DimacsError("clause before 'p cnf' header", lineno)
        for tok in line.split():
            try:
                x = int(tok)
            except ValueError:
                raise DimacsError(f"not an integer: {tok!r}", lineno) from None
            if x == 0:
                formula.add_clause(pending)
                pending = []
                continue
            if abs(x) > formula.num_vars:
                raise DimacsError(f"literal {x} exceeds declared {formula.num_vars} variables", lineno)
            if not pending:
                pending_line = lineno
            pending.append(x)
    if formula is None:
        raise DimacsError("missing 'p cnf' header", max(lineno, 1))
    if pending:
        raise DimacsError("unterminated final clause", pending_line)
    return formula


def write_dimacs(formula: Formula, comments: Sequence[str] = ()) -> str:
    out = [f"c {c}" for c in comments]
    clauses = formula.dimacs_clauses()
    out.append(f"p cnf {formula.num_vars} {len(clauses)}")
    out.extend(" ".join(map(str, c)) + " 0" for c in clauses)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# assignment


class Assignment(BlockOwner):
    """Partial truth assignment with trail, decision levels and reasons.

    ``value[lit]`` is TRUE/FALSE/UNASSIGNED per literal code, kept
    consistent for both polarities so ``value[lit ^ 1] == -value[lit]``.
    """

    def __init__(self, num_vars: int, allocator: Optional[HugePageAllocator] = None):
        self._init_blocks(allocator)
        self.num_vars = num_vars
        n = num_vars + 1
        self.value = self._take(2 * n).view.cast("b")
        self.level = self._take(4 * n).view.cast("i")
        self.reason = self._take(4 * n).view.cast("i")
        self.trail = self._take(4 * n).view.cast("i")
        self.trail_len = 0
        for v in range(n):
            self.reason[v] = NO_REASON

    @classmethod
    def from_dimacs(cls, num_vars: int, lits: Iterable[int],
                    allocator: Optional[HugePageAllocator] = None) -> "Assignment":
        a = cls(num_vars, allocator)
        for x in lits:
            a.assign(lit_from_dimacs(x))
        return a

    def value_of(self, lit: int) -> int:
        return self.value[lit]

    def assign(self, lit: int, level: int = 0, reason: int = NO_REASON) -> None:
        v = lit >> 1
        if self.value[lit] != UNASSIGNED:
            raise ValueError(f"variable {v} already assigned")
        self.value[lit] = TRUE
        self.value[lit ^ 1] = FALSE
        self.level[v] = level
        self.reason[v] = reason
        self.trail[self.trail_len] = lit
        self.trail_len += 1

    def unassign_to(self, trail_len: int) -> None:
        """Pop the trail back to ``trail_len`` entries."""
        value, reason, trail = self.value, self.reason, self.trail
        for i in range(self.trail_len - 1, trail_len - 1, -1):
            lit = trail[i]
            value[lit] = UNASSIGNED
            value[lit ^ 1] = UNASSIGNED
            reason[lit >> 1] = NO_REASON
        self.trail_len = trail_len

    def trail_literals(self) -> List[int]:
        return self.trail[:self.trail_len].tolist()

    def to_dimacs(self) -> List[int]:
        return [lit_to_dimacs(l) for l in self.trail_literals()]

    def __len__(self) -> int:
        return self.trail_len


class ClauseState(enum.Enum):
    SATISFIED = "Satisfied"
    FALSIFIED = "Falsified"
    UNIT = "Unit"
    UNRESOLVED = "Unresolved"


class Status(NamedTuple):
    state: ClauseState
    unit: Optional[int] = None


def _value(a, lit: int) -> int:
    if isinstance(a, Assignment):
        return a.value[lit]
    return a[lit]


def clause_state(clause: Sequence[int], a) -> Status:
    """Classify ``clause`` (literal codes) under assignment ``a``.

    ``a`` is an :class:`Assignment` or anything indexable by literal code
    returning TRUE/FALSE/UNASSIGNED.  The empty clause is falsified.
    Repeated literals count once, so un-normalized clauses classify the same
    as their normalized form.
    """
    unassigned = None
    n_unassigned = 0
    for lit in clause:
        val = _value(a, lit)
        if val == TRUE:
            return Status(ClauseState.SATISFIED)
        if val == UNASSIGNED and lit != unassigned:
            n_unassigned += 1
            unassigned = lit
    if n_unassigned == 0:
        return Status(ClauseState.FALSIFIED)
    if n_unassigned == 1:
        return Status(ClauseState.UNIT, unassigned)
    return Status(ClauseState.UNRESOLVED)


def is_model(formula: Formula, a) -> bool:
    return all(clause_state(c, a).state is ClauseState.SATISFIED for c in formula.clauses)


def model_satisfies(clauses: Iterable[Sequence[int]], model: Iterable[int]) -> bool:
    """Check DIMACS clauses against a DIMACS model (list of signed ints)."""
    true = set(model)
    return all(any(x in true for x in c) for c in clauses)
