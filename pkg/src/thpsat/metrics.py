"""Run measurement and the derived THP comparison metrics.

``s`` is the share of runtime saved by the THP variant and ``r_tlb`` the
residual dTLB load misses under THP as a percentage of the baseline's.
Both are computed over instances solved by *both* variants only.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import subprocess
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

CSV_COLUMNS = ("instance", "solver", "thp", "verdict", "wall_s", "dtlb_load_misses",
               "max_rss_bytes", "exit_code")
NA = "NA"
VERDICTS = ("sat", "unsat", "unknown", "timeout", "memout")
SOLVED = ("sat", "unsat")


@dataclass
class PerfCounters:
    wall_time: float
    dtlb_load_misses: Optional[int]  # None = counter unavailable
    max_rss: int
    exit_code: int
    limit: Optional[str] = None  # "timeout" / "memout" when the launcher killed the child
    env: Optional[Dict[str, str]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.wall_time < 0:
            raise ValueError("wall_time must be non-negative")


@dataclass
class RunRecord:
    instance: str
    solver: str
    thp: bool
    verdict: str
    counters: PerfCounters

    @property
    def solved(self) -> bool:
        return self.verdict in SOLVED

    def to_row(self) -> Dict[str, str]:
        c = self.counters
        return {
            "instance": self.instance,
            "solver": self.solver,
            "thp": "1" if self.thp else "0",
            "verdict": self.verdict,
            "wall_s": repr(float(c.wall_time)),
            "dtlb_load_misses": NA if c.dtlb_load_misses is None else str(c.dtlb_load_misses),
            "max_rss_bytes": str(c.max_rss),
            "exit_code": str(c.exit_code),
        }

    @classmethod
    def from_row(cls, row: Mapping[str, str]) -> "RunRecord":
        misses = row["dtlb_load_misses"]
        counters = PerfCounters(
            wall_time=float(row["wall_s"]),
            dtlb_load_misses=None if misses == NA else int(misses),
            max_rss=int(row["max_rss_bytes"]),
            exit_code=int(row["exit_code"]),
        )
        return cls(row["instance"], row["solver"], row["thp"] == "1", row["verdict"], counters)


def verdict_for(exit_code: int, wall_time: float, limit: Optional[str],
                timeout_s: Optional[float]) -> str:
    """Competition exit-code convention plus the launcher's limit verdicts."""
    if limit == "timeout" or (timeout_s is not None and wall_time >= timeout_s):
        return "timeout"
    if limit == "memout":
        return "memout"
    return {10: "sat", 20: "unsat"}.get(exit_code, "unknown")


# --------------------------------------------------------------------------
# measurement


def measure(command: Sequence[str], timeout_s: Optional[float] = None,
            mem_limit_bytes: Optional[int] = None, env: Optional[Mapping[str, str]] = None,
            cpu: Optional[int] = None, stdout: Optional[str] = None,
            stderr: Optional[str] = None) -> PerfCounters:
    """Run ``command`` as a child and measure it.

    Wall time comes from a monotonic clock between the child's release and
    its reaping; dTLB load misses are counted from the child's exec onwards
    where ``perf_event_open`` is permitted, and reported as None otherwise.
    Raises FileNotFoundError if the program cannot be found.
    """
    command = list(command)
    if not command:
        raise ValueError("empty command")
    if shutil.which(command[0], path=(env or os.environ).get("PATH")) is None:
        raise FileNotFoundError(f"command not found: {command[0]}")
    fd, result_path = tempfile.mkstemp(prefix="thpsat-run-", suffix=".json")
    os.close(fd)
    env_path = result_path[:-5] + ".env.json"
    child_env = dict(os.environ if env is None else env)
    try:
        with open(env_path, "w") as fh:
            json.dump(child_env, fh)
        launch = [sys.executable, "-m", "thpsat._launch", "--result", result_path,
                  "--env-file", env_path]
        if timeout_s is not None:
            launch += ["--timeout", repr(float(timeout_s))]
        if mem_limit_bytes is not None:
            launch += ["--mem-limit", str(int(mem_limit_bytes))]
        if cpu is not None:
            launch += ["--cpu", str(cpu)]
        if stdout:
            launch += ["--stdout", stdout]
        if stderr:
            launch += ["--stderr", stderr]
        launch += ["--", *command]
        # the launcher itself must import this package; the child gets child_env verbatim
        launcher_env = dict(child_env)
        launcher_env["PYTHONPATH"] = _with_own_path(child_env.get("PYTHONPATH"))
        proc = subprocess.run(launch, env=launcher_env, stdin=subprocess.DEVNULL,
                              stdout=None if stdout else subprocess.DEVNULL)
        if proc.returncode != 0:
            raise RuntimeError(f"launcher failed with exit code {proc.returncode}")
        with open(result_path) as fh:
            res = json.load(fh)
    finally:
        os.unlink(result_path)
        if os.path.exists(env_path):
            os.unlink(env_path)
    launched_env = res["env"]
    return PerfCounters(res["wall_time"], res["dtlb_load_misses"], res["max_rss"],
                        res["exit_code"], res["limit"], launched_env)


def _with_own_path(existing: Optional[str]) -> str:
    own = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    parts = [own] + ([existing] if existing else [])
    return os.pathsep.join(parts)


# --------------------------------------------------------------------------
# derived metrics


def saved_runtime_pct(t_n: float, t_thp: float) -> float:
    """Runtime saved by THP, in percent of the baseline runtime."""
    if t_n <= 0:
        raise ValueError("baseline runtime must be positive")
    return 100.0 * (1.0 - t_thp / t_n)


def tlb_miss_ratio_pct(tlb_n: float, tlb_thp: float) -> float:
    """THP-variant TLB misses as a percentage of the baseline's."""
    if tlb_n <= 0:
        raise ValueError("baseline TLB miss count must be positive")
    return 100.0 * tlb_thp / tlb_n


@dataclass
class ComparisonRow:
    solver: str
    solved_both: int
    t_n: float  # hours
    t_thp: float  # hours
    s: Optional[float]
    tlb_n: Optional[int]
    tlb_thp: Optional[int]
    r_tlb: Optional[float]
    gained: int = 0  # solved only with THP
    lost: int = 0  # solved only without THP

    @property
    def empty(self) -> bool:
        return self.solved_both == 0


def comparison_row(records: Iterable[RunRecord], solver: Optional[str] = None) -> ComparisonRow:
    """Aggregate one solver's paired records into a table row.

    Repeated runs of the same (instance, variant) are averaged first.
    """
    records = list(records)
    if solver is None:
        names = {r.solver for r in records}
        if len(names) > 1:
            raise ValueError(f"records mix solvers: {sorted(names)}")
        solver = names.pop() if names else ""
    by_cell: Dict[Tuple[str, bool], List[RunRecord]] = {}
    for r in records:
        if r.solver == solver:
            by_cell.setdefault((r.instance, r.thp), []).append(r)

    def solved(inst, thp):
        runs = by_cell.get((inst, thp), [])
        return bool(runs) and all(r.solved for r in runs)

    instances = sorted({inst for inst, _ in by_cell})
    both = [i for i in instances if solved(i, False) and solved(i, True)]
    gained = sum(1 for i in instances if solved(i, True) and not solved(i, False))
    lost = sum(1 for i in instances if solved(i, False) and not solved(i, True))

    def mean_time(inst, thp):
        runs = by_cell[(inst, thp)]
        return sum(sorted(r.counters.wall_time for r in runs)) / len(runs)

    def mean_tlb(inst, thp):
        runs = by_cell[(inst, thp)]
        vals = [r.counters.dtlb_load_misses for r in runs]
        if any(v is None for v in vals):
            return None
        return sum(sorted(vals)) / len(vals)

    t_n = sum(mean_time(i, False) for i in sorted(both)) / 3600.0
    t_thp = sum(mean_time(i, True) for i in sorted(both)) / 3600.0
    tlbs_n = [mean_tlb(i, False) for i in both]
    tlbs_thp = [mean_tlb(i, True) for i in both]
    tlb_n = tlb_thp = r_tlb = None
    if both and None not in tlbs_n and None not in tlbs_thp:
        tlb_n, tlb_thp = int(round(sum(tlbs_n))), int(round(sum(tlbs_thp)))
        r_tlb = tlb_miss_ratio_pct(tlb_n, tlb_thp) if tlb_n > 0 else None
    s = saved_runtime_pct(t_n, t_thp) if t_n > 0 else None
    return ComparisonRow(solver, len(both), t_n, t_thp, s, tlb_n, tlb_thp, r_tlb, gained, lost)


def cactus_series(records: Iterable[RunRecord]) -> Dict[str, List[float]]:
    """Ascending runtimes of solved runs, one series per solver and variant."""
    series: Dict[str, List[float]] = {}
    for r in records:
        key = series_label(r.solver, r.thp)
        series.setdefault(key, [])
        if r.solved:
            series[key].append(r.counters.wall_time)
    return {k: sorted(v) for k, v in sorted(series.items())}


def series_label(solver: str, thp: bool) -> str:
    return f"{solver}+thp" if thp else solver


# --------------------------------------------------------------------------
# persistence and rendering


def write_records(records: Iterable[RunRecord], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.to_row())


def read_records(fh) -> List[RunRecord]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}; want {CSV_COLUMNS}")
    return [RunRecord.from_row(row) for row in reader]


def append_record(path: str, record: RunRecord) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerow(record.to_row())
        fh.flush()
        os.fsync(fh.fileno())


TABLE_HEADER = ("solver", "#", "t_n", "t_thp", "s", "TLB_n", "TLB_thp", "r_tlb")


def _fmt(value, kind: str) -> str:
    if value is None:
        return NA
    if kind == "hours":
        return f"{value:.4g}"
    if kind == "pct":
        return f"{value:.2f}"
    if kind == "count":
        return f"{value:.2E}"
    return str(value)


def row_cells(row: ComparisonRow) -> List[str]:
    return [row.solver, str(row.solved_both), _fmt(row.t_n, "hours"), _fmt(row.t_thp, "hours"),
            _fmt(row.s, "pct"), _fmt(row.tlb_n, "count"), _fmt(row.tlb_thp, "count"),
            _fmt(row.r_tlb, "pct")]


def render_markdown(rows: Sequence[ComparisonRow]) -> str:
    out = ["| " + " | ".join(TABLE_HEADER) + " |",
           "|" + "|".join("---" if i == 0 else "---:" for i in range(len(TABLE_HEADER))) + "|"]
    for row in rows:
        out.append("| " + " | ".join(row_cells(row)) + " |")
    return "\n".join(out) + "\n"


def render_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER + ("gained", "lost"))
    for row in rows:
        w.writerow(row_cells(row) + [row.gained, row.lost])
    return buf.getvalue()


def render_cactus(series: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("rank", "seconds"))
    for rank, secs in enumerate(series, start=1):
        w.writerow((rank, repr(float(secs))))
    return buf.getvalue()
