"""Huge-page aware heap front-end.

Large requests get their own anonymous mapping, aligned to the huge-page
size and rounded up to a whole number of huge pages, then advised with
``MADV_HUGEPAGE`` so the kernel can back them with 2 MiB pages.  Small
requests are carved out of pooled slabs that receive the same treatment,
so many tiny allocations still land on huge-page eligible memory without
one ``madvise`` call each.

The policy is read once from the environment (``THP_ALWAYS=1`` or the
compatibility spelling ``GLIBC_THP_ALWAYS=1``).  When it is off, the
allocator takes the plain path: no alignment padding, no advice.
"""

from __future__ import annotations

import ctypes
import enum
import errno
import logging
import mmap
import os
import sys
import threading
import weakref
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Tuple

log = logging.getLogger(__name__)

KiB = 1 << 10
MiB = 1 << 20
HUGE_PAGE_SIZE = 2 * MiB
PAGE_SIZE = mmap.PAGESIZE
MIN_BLOCK = 16

ENV_FLAG = "THP_ALWAYS"
ENV_FLAG_ALIAS = "GLIBC_THP_ALWAYS"
ENV_PAGE_SIZE = "THP_PAGE_SIZE"
ENV_THRESHOLD = "THP_THRESHOLD"

# Return codes of Advisor.advise; any positive value is an errno.
ADVICE_OK = 0
ADVICE_UNSUPPORTED = -1


class Advice(enum.Enum):
    ADVISED = "Advised"
    SKIPPED = "Skipped"
    FALLBACK_OK = "FallbackOk"


class ReservationError(MemoryError):
    """The OS refused to hand out the address range."""


class InvalidFree(ValueError):
    """free() was called with a block this allocator does not own."""


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class AllocConfig:
    enabled: bool = False
    huge_page_size: int = HUGE_PAGE_SIZE
    threshold: int = HUGE_PAGE_SIZE

    def __post_init__(self):
        if not _is_pow2(self.huge_page_size):
            raise ValueError(f"huge_page_size must be a power of two, got {self.huge_page_size}")
        if self.threshold < 1:
            raise ValueError(f"threshold must be >= 1, got {self.threshold}")


def _env_bytes(env: Mapping[str, str], key: str, default: int, pow2: bool = False) -> int:
    raw = env.get(key)
    if raw is None:
        return default
    try:
        value = int(raw.strip())
    except ValueError:
        return default
    if value < 1 or (pow2 and not _is_pow2(value)):
        return default
    return value


def load_config(env: Optional[Mapping[str, str]] = None) -> AllocConfig:
    """Build the allocation policy from environment variables.

    Only the literal value ``"1"`` turns huge pages on.  ``THP_ALWAYS`` wins
    over ``GLIBC_THP_ALWAYS`` when both are present.  Malformed size
    overrides fall back to the defaults instead of raising.
    """
    if env is None:
        env = os.environ
    flag = env.get(ENV_FLAG)
    if flag is None:
        flag = env.get(ENV_FLAG_ALIAS)
    return AllocConfig(
        enabled=flag == "1",
        huge_page_size=_env_bytes(env, ENV_PAGE_SIZE, HUGE_PAGE_SIZE, pow2=True),
        threshold=_env_bytes(env, ENV_THRESHOLD, HUGE_PAGE_SIZE),
    )


def align_request(size: int, config: AllocConfig) -> Tuple[int, int]:
    """Return ``(aligned_size, alignment)`` for a request of ``size`` bytes."""
    if size <= 0:
        raise ValueError(f"allocation size must be positive, got {size}")
    if config.enabled and size >= config.threshold:
        hp = config.huge_page_size
        return -(-size // hp) * hp, hp
    return size, PAGE_SIZE


# --------------------------------------------------------------------------
# advisors


class Advisor(Protocol):
    def advise(self, base: int, length: int) -> int:
        """Mark ``[base, base+length)`` huge-page eligible.

        Returns ADVICE_OK, ADVICE_UNSUPPORTED, or a positive errno.
        """


def _check_page_aligned(base: int, length: int) -> None:
    if base % PAGE_SIZE or length % PAGE_SIZE:
        raise ValueError(f"advice range [{base:#x}, +{length:#x}) is not page aligned")


class MadviseAdvisor:
    """Production advisor: ``madvise(base, length, MADV_HUGEPAGE)``."""

    def __init__(self):
        self._libc = ctypes.CDLL(None, use_errno=True)
        self._madvise = self._libc.madvise
        self._madvise.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int]
        self._madvise.restype = ctypes.c_int

    def advise(self, base: int, length: int) -> int:
        _check_page_aligned(base, length)
        if self._madvise(base, length, mmap.MADV_HUGEPAGE) == 0:
            return ADVICE_OK
        err = ctypes.get_errno()
        # kernels built without THP reject the flag with EINVAL
        if err in (errno.EINVAL, errno.ENOSYS, errno.EOPNOTSUPP):
            return ADVICE_UNSUPPORTED
        return err


class UnsupportedAdvisor:
    """Stub for platforms without huge-page advice."""

    def advise(self, base: int, length: int) -> int:
        _check_page_aligned(base, length)
        return ADVICE_UNSUPPORTED


class RecordingAdvisor:
    """Test double that records every call and answers with a fixed reply."""

    def __init__(self, reply: int = ADVICE_OK):
        self.reply = reply
        self.calls: List[Tuple[int, int]] = []
        self._lock = threading.Lock()

    def advise(self, base: int, length: int) -> int:
        _check_page_aligned(base, length)
        with self._lock:
            self.calls.append((base, length))
        return self.reply


def default_advisor() -> Advisor:
    if sys.platform.startswith("linux") and hasattr(mmap, "MADV_HUGEPAGE"):
        try:
            return MadviseAdvisor()
        except (OSError, AttributeError):
            pass
    return UnsupportedAdvisor()


# --------------------------------------------------------------------------
# regions


def _address_of(buf) -> int:
    anchor = ctypes.c_char.from_buffer(buf)
    try:
        return ctypes.addressof(anchor)
    finally:
        del anchor


@dataclass(eq=False)
class Region:
    base: int
    length: int
    advised: Advice = Advice.SKIPPED
    eligible: bool = False
    advice_errno: int = 0
    _map: Optional[mmap.mmap] = field(default=None, repr=False)
    _offset: int = field(default=0, repr=False)
    _view: Optional[memoryview] = field(default=None, repr=False)

    @property
    def buffer(self) -> memoryview:
        """Writable byte view of exactly ``length`` bytes starting at ``base``."""
        if self._view is None:
            if self._map is None:
                raise ValueError("region has been released")
            self._view = memoryview(self._map)[self._offset:self._offset + self.length]
        return self._view

    def release(self) -> None:
        if self._view is not None:
            self._view.release()
            self._view = None
        if self._map is not None:
            try:
                self._map.close()
            except BufferError:
                # outstanding views keep the mapping alive until they die
                pass
            self._map = None


def _map_anonymous(length: int) -> mmap.mmap:
    # MAP_PRIVATE: shared anonymous memory is shmem and ignores anon THP advice
    flags = getattr(mmap, "MAP_PRIVATE", 0) | getattr(mmap, "MAP_ANONYMOUS", 0)
    try:
        if flags:
            return mmap.mmap(-1, length, flags=flags)
        return mmap.mmap(-1, length)
    except (OSError, OverflowError) as exc:
        raise ReservationError(f"could not reserve {length} bytes: {exc}") from exc


def _reserve(size: int, config: AllocConfig, advisor: Advisor, eligible: bool) -> Region:
    if size <= 0:
        raise ValueError(f"reservation size must be positive, got {size}")
    if eligible:
        hp = max(config.huge_page_size, PAGE_SIZE)
        length, alignment = -(-size // hp) * hp, hp
    else:
        length, alignment = size, PAGE_SIZE
    slack = alignment if alignment > PAGE_SIZE else 0
    m = _map_anonymous(length + slack)
    addr = _address_of(m)
    offset = (-addr) % alignment
    region = Region(base=addr + offset, length=length, eligible=eligible, _map=m, _offset=offset)
    advise_region(region, advisor)
    return region


def reserve_region(size: int, config: AllocConfig, advisor: Advisor) -> Region:
    """Reserve a zeroed anonymous range honoring :func:`align_request`.

    Eligible regions are advised before anything touches them, so the
    first fault can already be served by a huge page.
    """
    align_request(size, config)
    return _reserve(size, config, advisor, config.enabled and size >= config.threshold)


def advise_region(region: Region, advisor: Advisor) -> Advice:
    if not region.eligible:
        region.advised = Advice.SKIPPED
        return region.advised
    rc = advisor.advise(region.base, region.length)
    if rc == ADVICE_OK:
        region.advised = Advice.ADVISED
    else:
        if rc != ADVICE_UNSUPPORTED:
            region.advice_errno = rc
            log.warning("huge-page advice failed for %#x+%#x: %s",
                        region.base, region.length, os.strerror(rc))
        region.advised = Advice.FALLBACK_OK
    return region.advised


# --------------------------------------------------------------------------
# allocator


class Block:
    """A chunk of allocator memory.  ``view`` is a writable byte memoryview."""

    __slots__ = ("address", "size", "capacity", "region", "offset", "dedicated", "_view", "__weakref__")

    def __init__(self, region: Region, offset: int, size: int, capacity: int, dedicated: bool = False):
        self.region = region
        self.dedicated = dedicated
        self.offset = offset
        self.size = size
        self.capacity = capacity
        self.address = region.base + offset
        self._view: Optional[memoryview] = None

    @property
    def view(self) -> memoryview:
        if self._view is None:
            self._view = self.region.buffer[self.offset:self.offset + self.size]
        return self._view

    def _drop_view(self) -> None:
        if self._view is not None:
            self._view.release()
            self._view = None

    def __repr__(self):
        return f"Block(address={self.address:#x}, size={self.size})"


@dataclass(frozen=True)
class AllocStats:
    regions: int
    reserved_bytes: int
    advised_bytes: int
    fallback_count: int
    advice_errors: int
    live_blocks: int
    advise_calls: int


def _size_class(size: int) -> int:
    return max(MIN_BLOCK, 1 << (size - 1).bit_length())


class HugePageAllocator:
    """Thread-safe alloc/free front-end over huge-page aware regions."""

    def __init__(self, config: Optional[AllocConfig] = None, advisor: Optional[Advisor] = None):
        self.config = config if config is not None else load_config()
        self.advisor = advisor if advisor is not None else default_advisor()
        self._lock = threading.Lock()
        self._regions: Dict[int, Region] = {}
        self._live: Dict[int, Block] = {}
        self._free: Dict[int, List[Tuple[Region, int]]] = {}
        self._bump: Dict[int, Tuple[Region, int]] = {}
        self._advise_calls = 0

    def _new_region(self, size: int, slab: bool) -> Region:
        eligible = self.config.enabled and (slab or size >= self.config.threshold)
        region = _reserve(size, self.config, self.advisor, eligible)
        if eligible:
            self._advise_calls += 1
        self._regions[region.base] = region
        return region

    def alloc(self, size: int) -> Block:
        if size <= 0:
            raise ValueError(f"allocation size must be positive, got {size}")
        with self._lock:
            if size >= self.config.threshold:
                region = self._new_region(size, slab=False)
                block = Block(region, 0, size, region.length, dedicated=True)
            else:
                block = self._alloc_small(size)
            self._live[block.address] = block
            return block

    def _alloc_small(self, size: int) -> Block:
        cls = _size_class(size)
        free = self._free.get(cls)
        if free:
            region, offset = free.pop()
            block = Block(region, offset, size, cls)
            ctypes.memset(block.address, 0, cls)
            return block
        bump = self._bump.get(cls)
        if bump is None or bump[1] + cls > bump[0].length:
            slab_size = max(self.config.huge_page_size, cls)
            bump = (self._new_region(slab_size, slab=True), 0)
        region, offset = bump
        self._bump[cls] = (region, offset + cls)
        return Block(region, offset, size, cls)

    def free(self, block: Block) -> None:
        with self._lock:
            if self._live.get(block.address) is not block:
                raise InvalidFree(f"{block!r} is not a live block of this allocator")
            del self._live[block.address]
            block._drop_view()
            region = block.region
            if block.dedicated:
                del self._regions[region.base]
                region.release()
            else:
                self._free.setdefault(block.capacity, []).append((region, block.offset))

    def free_all(self, blocks: Iterable[Block]) -> None:
        for block in blocks:
            self.free(block)

    def regions(self) -> List[Region]:
        with self._lock:
            return list(self._regions.values())

    def snapshot(self) -> AllocStats:
        with self._lock:
            regions = list(self._regions.values())
            return AllocStats(
                regions=len(regions),
                reserved_bytes=sum(r.length for r in regions),
                advised_bytes=sum(r.length for r in regions if r.advised is Advice.ADVISED),
                fallback_count=sum(1 for r in regions if r.advised is Advice.FALLBACK_OK),
                advice_errors=sum(1 for r in regions if r.advice_errno),
                live_blocks=len(self._live),
                advise_calls=self._advise_calls,
            )

    def close(self) -> None:
        with self._lock:
            for block in self._live.values():
                block._drop_view()
            for region in self._regions.values():
                region.release()
            self._regions.clear()
            self._live.clear()
            self._free.clear()
            self._bump.clear()


class BlockOwner:
    """Mixin that frees every block it allocated when the owner goes away."""

    def _init_blocks(self, allocator: Optional[HugePageAllocator]) -> None:
        self.allocator = allocator if allocator is not None else get_allocator()
        self._blocks: Dict[int, Block] = {}
        self._finalizer = weakref.finalize(self, _free_blocks, self.allocator, self._blocks)

    def _take(self, nbytes: int) -> Block:
        block = self.allocator.alloc(max(nbytes, 1))
        self._blocks[id(block)] = block
        return block

    def _give_back(self, block: Block) -> None:
        del self._blocks[id(block)]
        self.allocator.free(block)

    def close(self) -> None:
        self._finalizer()


def _free_blocks(allocator: HugePageAllocator, blocks: Dict[int, Block]) -> None:
    for block in list(blocks.values()):
        try:
            allocator.free(block)
        except InvalidFree:
            pass
    blocks.clear()


_default: Optional[HugePageAllocator] = None
_default_lock = threading.Lock()


def get_allocator() -> HugePageAllocator:
    """Process-wide allocator; the environment is consulted on first use only."""
    global _default
    with _default_lock:
        if _default is None:
            _default = HugePageAllocator()
        return _default


def anon_huge_bytes(base: Optional[int] = None, length: Optional[int] = None,
                    smaps_path: str = "/proc/self/smaps") -> Optional[int]:
    """Huge-page backed anonymous bytes, per the kernel's own accounting.

    With ``base``/``length`` only mappings overlapping that range count;
    otherwise the whole process is summed.  Returns None where the kernel
    does not expose ``smaps``.
    """
    try:
        with open(smaps_path) as fh:
            lines = fh.readlines()
    except OSError:
        return None
    total = 0
    overlap = base is None
    for line in lines:
        head = line.split(None, 1)[0] if line.strip() else ""
        if "-" in head and not head.endswith(":"):
            lo, hi = (int(x, 16) for x in head.split("-"))
            overlap = base is None or (lo < base + (length or 0) and base < hi)
        elif overlap and head == "AnonHugePages:":
            total += int(line.split()[1]) * KiB
    return total
