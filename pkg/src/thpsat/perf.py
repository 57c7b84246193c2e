"""Minimal perf_event_open wrapper for the data-TLB load-miss counter."""

from __future__ import annotations

import ctypes
import fcntl
import os
import platform
import struct
from typing import Optional

PERF_TYPE_HW_CACHE = 3
PERF_COUNT_HW_CACHE_DTLB = 3
PERF_COUNT_HW_CACHE_OP_READ = 0
PERF_COUNT_HW_CACHE_RESULT_MISS = 1
DTLB_LOAD_MISSES = (PERF_COUNT_HW_CACHE_DTLB
                    | PERF_COUNT_HW_CACHE_OP_READ << 8
                    | PERF_COUNT_HW_CACHE_RESULT_MISS << 16)

# attr.flags bit positions
_DISABLED = 1 << 0
_INHERIT = 1 << 1
_EXCLUDE_KERNEL = 1 << 5
_EXCLUDE_HV = 1 << 6
_ENABLE_ON_EXEC = 1 << 12

_READ_TOTAL_TIME_ENABLED = 1
_READ_TOTAL_TIME_RUNNING = 2

_IOC_ENABLE = 0x2400
_IOC_DISABLE = 0x2401
_IOC_RESET = 0x2403

_SYSCALL_NR = {"x86_64": 298, "aarch64": 241, "i686": 336, "ppc64le": 319, "s390x": 331}


class _PerfEventAttr(ctypes.Structure):
    # PERF_ATTR_SIZE_VER0 layout; enough for counting events
    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
    ]


class CounterUnavailable(OSError):
    pass


def _perf_event_open(attr: _PerfEventAttr, pid: int) -> int:
    nr = _SYSCALL_NR.get(platform.machine())
    if nr is None or not platform.system() == "Linux":
        raise CounterUnavailable("perf_event_open is not available on this platform")
    libc = ctypes.CDLL(None, use_errno=True)
    libc.syscall.restype = ctypes.c_long
    fd = libc.syscall(ctypes.c_long(nr), ctypes.byref(attr), ctypes.c_int(pid), ctypes.c_int(-1),
                      ctypes.c_int(-1), ctypes.c_ulong(0))
    if fd < 0:
        err = ctypes.get_errno()
        raise CounterUnavailable(err, f"perf_event_open: {os.strerror(err)}")
    return fd


class DtlbCounter:
    """Counts user-space dTLB load misses of one process (and its children).

    ``pid=0`` measures the calling process between :meth:`start` and
    :meth:`stop`.  For another pid, pass ``on_exec=True`` before that process
    execs; counting then starts at its exec and follows its descendants.
    """

    def __init__(self, pid: int = 0, on_exec: bool = False):
        attr = _PerfEventAttr()
        attr.type = PERF_TYPE_HW_CACHE
        attr.size = ctypes.sizeof(attr)
        attr.config = DTLB_LOAD_MISSES
        attr.read_format = _READ_TOTAL_TIME_ENABLED | _READ_TOTAL_TIME_RUNNING
        attr.flags = _DISABLED | _INHERIT | _EXCLUDE_KERNEL | _EXCLUDE_HV
        if on_exec:
            attr.flags |= _ENABLE_ON_EXEC
        self.fd = _perf_event_open(attr, pid)

    def start(self) -> None:
        fcntl.ioctl(self.fd, _IOC_RESET, 0)
        fcntl.ioctl(self.fd, _IOC_ENABLE, 0)

    def stop(self) -> int:
        fcntl.ioctl(self.fd, _IOC_DISABLE, 0)
        return self.read()

    def read(self) -> int:
        value, enabled, running = struct.unpack("QQQ", os.read(self.fd, 24))
        if running and running < enabled:
            # multiplexed with other events: extrapolate
            return int(value * enabled / running)
        return value

    def close(self) -> None:
        if self.fd >= 0:
            os.close(self.fd)
            self.fd = -1


def open_dtlb_counter(pid: int = 0, on_exec: bool = False) -> Optional[DtlbCounter]:
    """Like :class:`DtlbCounter` but returns None when the OS refuses."""
    try:
        return DtlbCounter(pid, on_exec)
    except OSError:
        return None


def dtlb_available() -> bool:
    counter = open_dtlb_counter()
    if counter is None:
        return False
    counter.close()
    return True
