"""Paired THP on/off benchmark suites.

A suite is described by a manifest file::

    # comments start with '#'
    name = mini
    timeout_s = 60
    mem_limit_bytes = 8589934592
    max_parallel = 5
    repetitions = 1
    seed = 0

    [solvers]
    thpsat = {python} -m thpsat solve {instance} --stats-json {stats}

    [instances]
    instances/*.cnf

Settings come first as ``key = value`` lines.  ``[solvers]`` maps a solver
name to a command template; ``{instance}`` is required, ``{stats}`` (a
per-run sidecar path for a stats document) and ``{python}`` (this
interpreter) are optional.  ``[instances]`` lists paths or glob patterns,
relative to the manifest's directory.

Every (solver, instance, variant, repetition) cell is one child run.  The
two variants differ only in ``THP_ALWAYS`` (``0`` or ``1``).  Results are
appended to ``runs.csv`` in the output directory as each run finishes, so a
rerun of an interrupted suite only executes the missing cells.
"""

from __future__ import annotations

import glob
import json
import logging
import os
import platform
import random
import re
import shlex
import string
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import metrics
from .metrics import ComparisonRow, RunRecord

log = logging.getLogger(__name__)

GiB = 1 << 30
THP_SYSFS = "/sys/kernel/mm/transparent_hugepage/enabled"
RUNS_CSV = "runs.csv"
FINGERPRINT = "fingerprint.json"
SIDECARS = "runs"
PLACEHOLDERS = {"instance", "stats", "python"}
THP_VARS = ("THP_ALWAYS", "GLIBC_THP_ALWAYS")

_INT_KEYS = {"mem_limit_bytes", "max_parallel", "repetitions", "seed"}
_FLOAT_KEYS = {"timeout_s"}
_STR_KEYS = {"name"}


class ManifestError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid manifest:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class SuiteManifest:
    name: str = "suite"
    solvers: Dict[str, str] = field(default_factory=dict)
    instances: List[str] = field(default_factory=list)  # absolute paths
    timeout_s: float = 900.0
    mem_limit_bytes: int = 8 * GiB
    max_parallel: int = 5
    repetitions: int = 1
    seed: int = 0
    base_dir: str = "."
    patterns: List[str] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)  # problems found while parsing

    def instance_id(self, path: str) -> str:
        rel = os.path.relpath(path, self.base_dir)
        return path if rel.startswith("..") else rel

    def validate(self) -> List[str]:
        errors = list(self.errors)
        if not self.timeout_s > 0:
            errors.append(f"timeout_s must be positive, got {self.timeout_s}")
        if self.mem_limit_bytes <= 0:
            errors.append(f"mem_limit_bytes must be positive, got {self.mem_limit_bytes}")
        if self.max_parallel < 1:
            errors.append(f"max_parallel must be at least 1, got {self.max_parallel}")
        if self.repetitions < 1:
            errors.append(f"repetitions must be at least 1, got {self.repetitions}")
        if not self.solvers:
            errors.append("no solvers given")
        for name, template in self.solvers.items():
            errors.extend(f"solver {name}: {e}" for e in _template_errors(template))
        if not self.patterns:
            errors.append("no instances given")
        for path in self.instances:
            if not os.path.isfile(path):
                errors.append(f"instance not found: {path}")
            elif not os.access(path, os.R_OK):
                errors.append(f"instance not readable: {path}")
        ids = [self.instance_id(p) for p in self.instances]
        if len(set(ids)) != len(ids):
            errors.append("duplicate instances")
        return errors

    def check(self) -> None:
        errors = self.validate()
        if errors:
            raise ManifestError(errors)


def _template_errors(template: str) -> List[str]:
    try:
        tokens = shlex.split(template)
    except ValueError as exc:
        return [f"cannot split command: {exc}"]
    if not tokens:
        return ["empty command"]
    errors = []
    names = set()
    for tok in tokens:
        try:
            names.update(f for _, f, _, _ in string.Formatter().parse(tok) if f is not None)
        except ValueError as exc:
            errors.append(f"bad placeholder syntax in {tok!r}: {exc}")
    if "instance" not in names:
        errors.append("command template lacks {instance}")
    unknown = names - PLACEHOLDERS
    if unknown:
        errors.append(f"unknown placeholders {sorted(unknown)}")
    return errors


def parse_manifest(text: str, base_dir: str = ".") -> SuiteManifest:
    """Parse manifest text; problems are collected, not raised (see ``check``)."""
    m = SuiteManifest(base_dir=os.path.abspath(base_dir))
    section = None
    seen_keys = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        header = re.fullmatch(r"\[(\w+)\]", line)
        if header:
            section = header.group(1)
            if section not in ("solvers", "instances"):
                m.errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "instances":
            m.patterns.append(line)
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            m.errors.append(f"line {lineno}: expected key = value")
            continue
        if section == "solvers":
            if key in m.solvers:
                m.errors.append(f"line {lineno}: duplicate solver {key}")
            m.solvers[key] = value
            continue
        if section is not None:
            continue
        if key in seen_keys:
            m.errors.append(f"line {lineno}: duplicate setting {key}")
        seen_keys.add(key)
        try:
            if key in _INT_KEYS:
                setattr(m, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(m, key, float(value))
            elif key in _STR_KEYS:
                setattr(m, key, value)
            else:
                m.errors.append(f"line {lineno}: unknown setting {key}")
        except ValueError:
            m.errors.append(f"line {lineno}: bad value for {key}: {value!r}")
    for pattern in m.patterns:
        full = os.path.join(m.base_dir, pattern)
        if glob.has_magic(pattern):
            hits = sorted(glob.glob(full))
            if not hits:
                m.errors.append(f"pattern matches nothing: {pattern}")
            m.instances.extend(os.path.abspath(h) for h in hits)
        else:
            m.instances.append(os.path.abspath(full))
    return m


def load_manifest(path: str) -> SuiteManifest:
    with open(path) as fh:
        return parse_manifest(fh.read(), os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------
# environment


def thp_mode(path: str = THP_SYSFS) -> str:
    """The bracketed THP system setting, or "unavailable"."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError:
        return "unavailable"
    m = re.search(r"\[(\w+)\]", text)
    return m.group(1) if m else text.strip()


def cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or "unknown"


def fingerprint() -> Dict[str, str]:
    from .perf import dtlb_available

    fp = {
        "kernel": platform.release(),
        "thp_enabled": thp_mode(),
        "cpu_model": cpu_model(),
        "python": platform.python_version(),
        "dtlb_counter": "available" if dtlb_available() else "unavailable",
    }
    if fp["thp_enabled"] == "always":
        log.warning("THP is set to 'always' system-wide; the THP-off variant is not a true control")
    return fp


def variant_env(thp: bool, base: Optional[Dict[str, str]] = None) -> Dict[str, str]:
    """Child environment for one variant: ``base`` with only the THP flag set."""
    env = dict(os.environ if base is None else base)
    for k in THP_VARS:
        env.pop(k, None)
    env["THP_ALWAYS"] = "1" if thp else "0"
    return env


# --------------------------------------------------------------------------
# running


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "x"


def _sidecar_base(out_dir: str, solver: str, instance_id: str, thp: bool, rep: int) -> str:
    d = os.path.join(out_dir, SIDECARS, _slug(solver))
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"{_slug(instance_id)}.thp{int(thp)}.rep{rep}")


def preload(path: str) -> int:
    """Read an instance fully so the timed run starts from a warm page cache."""
    with open(path, "rb") as fh:
        return len(fh.read())


def run_cell(instance: str, solver: str, template: str, manifest: SuiteManifest, thp: bool,
             out_dir: str, rep: int = 0, cpu: Optional[int] = None,
             base_env: Optional[Dict[str, str]] = None) -> RunRecord:
    """One measured child run; writes a JSON sidecar next to its logs."""
    inst_id = manifest.instance_id(instance)
    side = _sidecar_base(out_dir, solver, inst_id, thp, rep)
    stats_path = side + ".stats.json"
    if os.path.exists(stats_path):
        os.unlink(stats_path)
    command = [tok.format(instance=instance, stats=stats_path, python=sys.executable)
               for tok in shlex.split(template)]
    preload(instance)
    env = variant_env(thp, base_env)
    started = time.time()
    try:
        counters = metrics.measure(command, timeout_s=manifest.timeout_s,
                                   mem_limit_bytes=manifest.mem_limit_bytes, env=env, cpu=cpu,
                                   stdout=side + ".out", stderr=side + ".err")
    except (OSError, RuntimeError) as exc:
        # spawn failure: nothing ran
        counters = metrics.PerfCounters(0.0, None, 0, 127, None, env)
        with open(side + ".err", "w") as fh:
            fh.write(f"spawn failed: {exc}\n")
    finished = time.time()
    verdict = metrics.verdict_for(counters.exit_code, counters.wall_time, counters.limit,
                                  manifest.timeout_s)
    record = RunRecord(inst_id, solver, thp, verdict, counters)
    sidecar = {
        "instance": inst_id,
        "solver": solver,
        "thp": thp,
        "rep": rep,
        "cpu": cpu,
        "command": command,
        "started": started,
        "finished": finished,
        "verdict": verdict,
        "limit": counters.limit,
        "row": record.to_row(),
        "env": counters.env,
        "stats": _read_json(stats_path),
    }
    if counters.exit_code not in (0, 10, 20) or verdict == "unknown":
        sidecar["stderr_tail"] = _tail(side + ".err")
    with open(side + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    return record


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, ValueError):
        return None


def _tail(path: str, limit: int = 4000) -> str:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError:
        return ""
    return data[-limit:].decode(errors="replace")


def run_pair(instance: str, solver: str, template: str, manifest: SuiteManifest,
             out_dir: str, rep: int = 0, cpu: Optional[int] = None) -> Tuple[RunRecord, RunRecord]:
    """Run the THP-off then the THP-on variant of one solver on one instance."""
    off = run_cell(instance, solver, template, manifest, False, out_dir, rep, cpu)
    on = run_cell(instance, solver, template, manifest, True, out_dir, rep, cpu)
    return off, on


def load_sidecar(out_dir: str, record: RunRecord, rep: int = 0) -> Optional[dict]:
    side = os.path.join(out_dir, SIDECARS, _slug(record.solver),
                        f"{_slug(record.instance)}.thp{int(record.thp)}.rep{rep}.json")
    return _read_json(side)


Cell = Tuple[str, str, bool, int]  # (solver, instance path, thp, rep)


def plan_cells(manifest: SuiteManifest, done: Dict[Tuple[str, str, bool], int]) -> List[Cell]:
    """Cells still to run, in randomized order within each repetition."""
    cells = []
    for rep in range(manifest.repetitions):
        batch = [(s, inst, thp, rep)
                 for s in sorted(manifest.solvers)
                 for inst in manifest.instances
                 for thp in (False, True)
                 if done.get((s, manifest.instance_id(inst), thp), 0) <= rep]
        random.Random(manifest.seed * 1000003 + rep).shuffle(batch)
        cells.extend(batch)
    return cells


@dataclass
class SuiteReport:
    records: List[RunRecord]
    rows: List[ComparisonRow]
    fingerprint: Dict[str, str]
    executed: int = 0  # runs performed by this invocation


def _cpu_slots(n: int) -> List[Optional[int]]:
    try:
        cpus = sorted(os.sched_getaffinity(0))
    except (AttributeError, OSError):
        cpus = []
    if len(cpus) >= n:
        # leave the lowest core to the orchestrator when there is room
        pool = cpus[1:] if len(cpus) > n else cpus
        return pool[:n]
    return [None] * n


def read_runs(out_dir: str) -> List[RunRecord]:
    path = os.path.join(out_dir, RUNS_CSV)
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        return metrics.read_records(fh)


def run_suite(manifest: SuiteManifest, out_dir: str, limit: Optional[int] = None) -> SuiteReport:
    """Execute every missing cell of ``manifest``; resumable.

    ``limit`` caps the number of runs started by this call, which is how an
    interruption is simulated in tests.
    """
    manifest.check()
    os.makedirs(out_dir, exist_ok=True)
    fp_path = os.path.join(out_dir, FINGERPRINT)
    if not os.path.exists(fp_path):
        with open(fp_path, "w") as fh:
            json.dump(fingerprint(), fh, indent=1, sort_keys=True)
    elif thp_mode() == "always":
        log.warning("THP is set to 'always' system-wide; the THP-off variant is not a true control")
    done: Dict[Tuple[str, str, bool], int] = {}
    for r in read_runs(out_dir):
        key = (r.solver, r.instance, r.thp)
        done[key] = done.get(key, 0) + 1
    cells = plan_cells(manifest, done)
    if limit is not None:
        cells = cells[:max(limit, 0)]

    csv_path = os.path.join(out_dir, RUNS_CSV)
    lock = threading.Lock()
    slots = _cpu_slots(manifest.max_parallel)
    free = list(range(manifest.max_parallel))
    slot_cv = threading.Condition()

    def work(cell: Cell) -> None:
        solver, inst, thp, rep = cell
        with slot_cv:
            while not free:
                slot_cv.wait()
            slot = free.pop()
        try:
            rec = run_cell(inst, solver, manifest.solvers[solver], manifest, thp, out_dir, rep,
                           slots[slot])
        finally:
            with slot_cv:
                free.append(slot)
                slot_cv.notify()
        with lock:
            metrics.append_record(csv_path, rec)
        log.info("%s %s thp=%d rep=%d: %s %.3fs", solver, rec.instance, thp, rep, rec.verdict,
                 rec.counters.wall_time)

    with ThreadPoolExecutor(max_workers=manifest.max_parallel) as pool:
        for fut in [pool.submit(work, c) for c in cells]:
            fut.result()
    report = load_report(out_dir)
    report.executed = len(cells)
    return report


def expected_records(manifest: SuiteManifest) -> int:
    return len(manifest.solvers) * len(manifest.instances) * 2 * manifest.repetitions


def load_report(out_dir: str) -> SuiteReport:
    records = read_runs(out_dir)
    fp = _read_json(os.path.join(out_dir, FINGERPRINT)) or {}
    rows = [metrics.comparison_row(records, s) for s in sorted({r.solver for r in records})]
    return SuiteReport(records, rows, fp)


def render_report(report: SuiteReport, fmt: str) -> Dict[str, str]:
    """All report documents as ``{relative path: text}``."""
    if fmt not in ("md", "csv"):
        raise ValueError(f"unknown format {fmt!r}")
    docs: Dict[str, str] = {}
    fp_items = sorted(report.fingerprint.items())
    if fmt == "md":
        lines = ["# THP comparison", "", metrics.render_markdown(report.rows),
                 "| solver | gained | lost |", "|---|---:|---:|"]
        lines += [f"| {r.solver} | {r.gained} | {r.lost} |" for r in report.rows]
        lines += ["", "## Environment", ""]
        lines += [f"- {k}: {v}" for k, v in fp_items]
        docs["report.md"] = "\n".join(lines) + "\n"
    else:
        docs["report.csv"] = metrics.render_csv(report.rows)
        docs["environment.csv"] = "key,value\n" + "".join(
            f"{k},{json.dumps(v) if ',' in str(v) else v}\n" for k, v in fp_items)
    for label, series in metrics.cactus_series(report.records).items():
        docs[os.path.join("cactus", _slug(label) + ".csv")] = metrics.render_cactus(series)
    return docs


def emit_report(out_dir: str, fmt: str = "md") -> Dict[str, str]:
    """Render the report of a suite directory from its persisted CSV and write it there."""
    report = load_report(out_dir)
    if not report.records:
        raise ValueError(f"no run records in {out_dir}")
    docs = render_report(report, fmt)
    for rel, text in docs.items():
        path = os.path.join(out_dir, rel)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return docs
