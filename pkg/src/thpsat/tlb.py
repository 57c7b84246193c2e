"""Page coverage and TLB behaviour of address traces.

Pure functions for counting the pages a trace touches and replaying it
through an LRU translation cache, plus a pointer-chase workload that can be
simulated or executed on real memory from the huge-page allocator.

The model has one page size per run and uniform entries; real parts that
split entries between page sizes are not modelled.
"""

from __future__ import annotations

import os
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

from .hugepage_alloc import KiB, MiB, AllocConfig, HugePageAllocator, anon_huge_bytes
from .perf import open_dtlb_counter

CACHE_LINE = 64
SMALL_PAGE = 4 * KiB
LARGE_PAGE = 2 * MiB

AccessTrace = Union[Sequence[int], np.ndarray]


@dataclass(frozen=True)
class TlbModel:
    entries: Optional[int]  # None = unbounded
    page_size: int

    def __post_init__(self):
        if self.entries is not None and self.entries < 1:
            raise ValueError("a TLB needs at least one entry")
        if self.page_size < 1 or self.page_size & (self.page_size - 1):
            raise ValueError(f"page size must be a power of two, got {self.page_size}")


@dataclass(frozen=True)
class SimResult:
    distinct_pages: int
    hits: int
    misses: int

    @property
    def accesses(self) -> int:
        return self.hits + self.misses


def _shift(page_size: int) -> int:
    if page_size < 1 or page_size & (page_size - 1):
        raise ValueError(f"page size must be a power of two, got {page_size}")
    return page_size.bit_length() - 1


def pages_touched(trace: AccessTrace, page_size: int) -> int:
    shift = _shift(page_size)
    if isinstance(trace, np.ndarray):
        if trace.size == 0:
            return 0
        return int(np.unique(trace.astype(np.int64, copy=False) >> shift).size)
    return len({addr >> shift for addr in trace})


def simulate(trace: AccessTrace, model: TlbModel) -> SimResult:
    """Replay ``trace`` through a fully associative LRU TLB."""
    shift = _shift(model.page_size)
    cap = model.entries
    tlb: OrderedDict = OrderedDict()
    seen = set()
    hits = misses = 0
    for addr in (trace.tolist() if isinstance(trace, np.ndarray) else trace):
        page = addr >> shift
        if page in tlb:
            tlb.move_to_end(page)
            hits += 1
            continue
        misses += 1
        seen.add(page)
        if cap is not None and len(tlb) >= cap:
            tlb.popitem(last=False)
        tlb[page] = None
    return SimResult(len(seen), hits, misses)


def eviction_trace(small: int = SMALL_PAGE, factor: int = 512) -> Tuple[List[int], int, int]:
    """Access sequence spanning seven small pages inside three large pages.

    The walk visits two small pages of large page 0, two of large page 1,
    three of large page 2, then returns to the very first clause address.
    With four TLB entries and small pages the first page is evicted before
    that reuse; with large pages all three translations stay resident.
    Returns ``(trace, small, large)``.
    """
    large = small * factor
    pages = [0, 1, factor, factor + 1, 2 * factor, 2 * factor + 1, 2 * factor + 2]
    trace = [p * small + 3 * CACHE_LINE for p in pages]
    trace.append(trace[0])
    return trace, small, large


# --------------------------------------------------------------------------
# pointer chase


def chase_order(footprint: int, seed: int) -> np.ndarray:
    """Visit order of the cache-line slots in a random single-cycle chase."""
    if footprint <= 0:
        raise ValueError("footprint must be positive")
    slots = max(footprint // CACHE_LINE, 1)
    rng = np.random.default_rng(seed)
    order = np.empty(slots, dtype=np.int64)
    order[0] = 0
    order[1:] = rng.permutation(np.arange(1, slots, dtype=np.int64))
    return order


def gen_chase_trace(footprint: int, steps: int, seed: int) -> np.ndarray:
    """Byte addresses of ``steps`` hops of a pointer chase over ``footprint`` bytes.

    The chase follows one random cycle through every cache-line slot, so
    each slot is visited once per lap; longer walks wrap around.
    """
    order = chase_order(footprint, seed)
    if steps <= 0:
        return np.empty(0, dtype=np.int64)
    idx = np.arange(steps, dtype=np.int64) % order.size
    return order[idx] * CACHE_LINE


def read_trace(fh: TextIO) -> List[int]:
    out = []
    for line in fh:
        line = line.split("#", 1)[0].strip()
        if line:
            addr = int(line)
            if addr < 0:
                raise ValueError(f"negative address {addr}")
            out.append(addr)
    return out


def write_trace(trace: Iterable[int], fh: TextIO, comment: Optional[str] = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    for addr in trace:
        fh.write(f"{int(addr)}\n")


@dataclass(frozen=True)
class ChaseResult:
    mode: str
    footprint: int
    steps: int
    wall_time: float
    dtlb_load_misses: Optional[int]
    huge_bytes: Optional[int]
    advised_bytes: int


def run_chase_live(footprint: int, steps: int, seed: int, allocator: str = "hugepage",
                   cpu: Optional[int] = None) -> ChaseResult:
    """Execute a pointer chase in memory from the named allocator.

    ``allocator`` is ``"hugepage"`` (huge-page policy on) or ``"baseline"``
    (policy off).  The slots are linked into one cycle, then the chase order
    is replayed as a single gathered load stream while the dTLB load-miss
    counter runs; the loaded links are checked against the expected next
    hop.  ``huge_bytes`` is the kernel's AnonHugePages figure for the chase
    mapping.
    """
    if allocator not in ("hugepage", "baseline"):
        raise ValueError(f"unknown allocator {allocator!r}")
    if footprint <= 0:
        raise ValueError("footprint must be positive")
    alloc = HugePageAllocator(AllocConfig(enabled=allocator == "hugepage"))
    old_affinity = _pin(cpu)
    try:
        block = alloc.alloc(max(footprint, CACHE_LINE))
        words = np.frombuffer(block.view, dtype=np.int64)
        stride = CACHE_LINE // 8
        order = chase_order(footprint, seed)
        # slot i holds the word index of its successor
        words[order * stride] = np.roll(order, -1) * stride
        hops = order[np.arange(steps, dtype=np.int64) % order.size] * stride if steps > 0 else order[:0]
        counter = open_dtlb_counter()
        t0 = time.perf_counter()
        if counter is not None:
            counter.start()
        loaded = words[hops]
        misses = counter.stop() if counter is not None else None
        wall = time.perf_counter() - t0
        if counter is not None:
            counter.close()
        if steps > 1 and not np.array_equal(loaded[:-1], hops[1:]):
            raise RuntimeError("pointer chase links are corrupt")
        huge = anon_huge_bytes(block.address, block.size)
        advised = alloc.snapshot().advised_bytes
        del words, loaded
        return ChaseResult(allocator, footprint, steps, wall, misses, huge, advised)
    finally:
        alloc.close()
        _unpin(old_affinity)


def _pin(cpu: Optional[int]):
    if cpu is None or not hasattr(os, "sched_setaffinity"):
        return None
    old = os.sched_getaffinity(0)
    try:
        os.sched_setaffinity(0, {cpu})
    except OSError:
        return None
    return old


def _unpin(old) -> None:
    if old is not None:
        os.sched_setaffinity(0, old)
