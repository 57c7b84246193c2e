"""Seeded CNF generators and the small benchmark suite used for desk studies."""

from __future__ import annotations

import os
import random
from typing import List, Optional, Sequence

from .cnf import Formula, write_dimacs

Clauses = List[List[int]]


def random_kcnf(num_vars: int, num_clauses: int, k: int = 3, seed: Optional[int] = None) -> Clauses:
    """Uniform random k-CNF: each clause draws k distinct variables and random signs."""
    if k > num_vars:
        raise ValueError("clause width exceeds the number of variables")
    rng = random.Random(seed)
    out = []
    for _ in range(num_clauses):
        vs = rng.sample(range(1, num_vars + 1), k)
        out.append([v if rng.random() < 0.5 else -v for v in vs])
    return out


def pigeonhole(holes: int) -> Clauses:
    """``holes + 1`` pigeons into ``holes`` holes; unsatisfiable for holes >= 1."""
    pigeons = holes + 1

    def x(p, h):
        return p * holes + h + 1

    clauses = [[x(p, h) for h in range(holes)] for p in range(pigeons)]
    for h in range(holes):
        for p in range(pigeons):
            for q in range(p + 1, pigeons):
                clauses.append([-x(p, h), -x(q, h)])
    return clauses


def planted_kcnf(num_vars: int, num_clauses: int, k: int = 3, seed: Optional[int] = None) -> Clauses:
    """Random k-CNF kept satisfiable by a hidden assignment."""
    rng = random.Random(seed)
    hidden = [None] + [rng.random() < 0.5 for _ in range(num_vars)]
    out = []
    while len(out) < num_clauses:
        vs = rng.sample(range(1, num_vars + 1), k)
        clause = [v if rng.random() < 0.5 else -v for v in vs]
        if any((lit > 0) == hidden[abs(lit)] for lit in clause):
            out.append(clause)
    return out


def save_cnf(path: str, clauses: Sequence[Sequence[int]], num_vars: int, comment: str = "") -> None:
    formula = Formula.from_clauses(clauses, num_vars)
    with open(path, "w") as fh:
        fh.write(write_dimacs(formula, [comment] if comment else []))
    formula.arena.close()


# (file stem, generator, arguments); sizes are picked so that the in-repo
# solver needs roughly 0.1 to 10 seconds per instance
MINI_SUITE = [
    *[(f"uf100-{i}", "random", (100, 426, i)) for i in range(8)],
    *[(f"uf150-{i}", "random", (150, 639, 100 + i)) for i in range(6)],
    *[(f"uf175-{i}", "random", (175, 745, 300 + i)) for i in range(2)],
    *[(f"uf200-{i}", "random", (200, 852, 400 + i)) for i in range(4)],
    *[(f"sparse20k-{i}", "random", (20000, 40000, 500 + i)) for i in range(2)],
    ("php6", "php", (6,)),
    ("php7", "php", (7,)),
    ("php8", "php", (8,)),
]

MANIFEST_TEMPLATE = """\
# desk-scale paired THP study over the in-repo solver
name = {name}
timeout_s = {timeout}
max_parallel = {parallel}
repetitions = 1
seed = 0

[solvers]
thpsat = {{python}} -m thpsat solve {{instance}} --stats-json {{stats}}

[instances]
instances/*.cnf
"""


def generate(kind: str, args: Sequence[int]) -> tuple:
    if kind == "random":
        n, m, seed = args
        return random_kcnf(n, m, 3, seed), n
    if kind == "planted":
        n, m, seed = args
        return planted_kcnf(n, m, 3, seed), n
    if kind == "php":
        (holes,) = args
        return pigeonhole(holes), holes * (holes + 1)
    raise ValueError(f"unknown generator {kind!r}")


def default_parallel(cap: int = 5) -> int:
    try:
        n = len(os.sched_getaffinity(0))
    except (AttributeError, OSError):
        n = os.cpu_count() or 1
    return max(1, min(cap, n))


def write_mini_suite(directory: str, timeout: float = 60, parallel: Optional[int] = None,
                     name: str = "mini") -> str:
    """Write the mini suite's instances and a manifest; returns the manifest path.

    ``parallel`` defaults to the usable CPU count, capped at five.
    """
    if parallel is None:
        parallel = default_parallel()
    inst_dir = os.path.join(directory, "instances")
    os.makedirs(inst_dir, exist_ok=True)
    for stem, kind, args in MINI_SUITE:
        clauses, n = generate(kind, args)
        save_cnf(os.path.join(inst_dir, stem + ".cnf"), clauses, n, f"{kind} {' '.join(map(str, args))}")
    path = os.path.join(directory, "suite.manifest")
    with open(path, "w") as fh:
        fh.write(MANIFEST_TEMPLATE.format(name=name, timeout=timeout, parallel=parallel))
    return path
