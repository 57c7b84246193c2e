"""Child-process launcher used by :func:`thpsat.metrics.measure`.

Forks the target, attaches a dTLB load-miss counter that switches on at the
child's exec, releases it, enforces wall-time and RSS limits by polling
(runsolver style), and writes a JSON result file.  Usage::

    python -m thpsat._launch --result OUT.json [--timeout S] [--mem-limit B]
        [--cpu N] [--stdout F] [--stderr F] -- command args...
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
import time

from .perf import open_dtlb_counter

POLL_S = 0.01


def _rss_bytes(pid: int) -> int:
    try:
        with open(f"/proc/{pid}/status") as fh:
            for line in fh:
                if line.startswith("VmRSS:"):
                    return int(line.split()[1]) * 1024
    except OSError:
        pass
    return 0


def _child(read_fd: int, args) -> None:
    try:
        os.setpgid(0, 0)
        os.read(read_fd, 1)
        os.close(read_fd)
        if args.cpu is not None and hasattr(os, "sched_setaffinity"):
            try:
                os.sched_setaffinity(0, {args.cpu})
            except OSError:
                pass
        for path, fd in ((args.stdout, 1), (args.stderr, 2)):
            if path:
                out = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
                os.dup2(out, fd)
                os.close(out)
        os.execvpe(args.command[0], args.command, _child_env(args))
    except BaseException as exc:  # noqa: BLE001 - must never return into the parent's code
        try:
            os.write(2, f"launch failed: {exc}\n".encode())
        finally:
            os._exit(127)


def _child_env(args) -> dict:
    # an explicit environment file keeps interpreter tweaks (such as locale
    # coercion) of this launcher out of the measured child
    path = getattr(args, "env_file", None)
    if not path:
        return dict(os.environ)
    with open(path) as fh:
        return json.load(fh)


def run(args) -> dict:
    read_fd, write_fd = os.pipe()
    pid = os.fork()
    if pid == 0:
        os.close(write_fd)
        _child(read_fd, args)
    os.close(read_fd)
    try:
        os.setpgid(pid, pid)
    except OSError:
        pass
    counter = open_dtlb_counter(pid, on_exec=True)

    reaped = {}
    done = threading.Event()

    def reap():
        _, status, usage = os.wait4(pid, 0)
        reaped["end"] = time.monotonic()
        reaped["status"] = status
        reaped["usage"] = usage
        done.set()

    waiter = threading.Thread(target=reap, daemon=True)
    start = time.monotonic()
    os.write(write_fd, b"x")
    os.close(write_fd)
    waiter.start()

    limit = None
    peak_rss = 0
    while not done.wait(POLL_S):
        elapsed = time.monotonic() - start
        if args.mem_limit is not None:
            rss = _rss_bytes(pid)
            peak_rss = max(peak_rss, rss)
            if rss > args.mem_limit:
                limit = "memout"
        if args.timeout is not None and elapsed >= args.timeout:
            limit = "timeout"
        if limit:
            try:
                os.killpg(pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            done.wait()
            break
    waiter.join()

    status = reaped["status"]
    if os.WIFEXITED(status):
        exit_code = os.WEXITSTATUS(status)
    else:
        exit_code = -os.WTERMSIG(status)
    misses = None
    if counter is not None:
        misses = counter.read()
        counter.close()
    return {
        "wall_time": reaped["end"] - start,
        "dtlb_load_misses": misses,
        "max_rss": max(reaped["usage"].ru_maxrss * 1024, peak_rss),
        "exit_code": exit_code,
        "limit": limit,
        "env": _child_env(args),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m thpsat._launch")
    ap.add_argument("--result", required=True)
    ap.add_argument("--timeout", type=float)
    ap.add_argument("--mem-limit", type=int)
    ap.add_argument("--cpu", type=int)
    ap.add_argument("--stdout")
    ap.add_argument("--stderr")
    ap.add_argument("--env-file")
    ap.add_argument("command", nargs=argparse.REMAINDER)
    args = ap.parse_args(argv)
    if args.command and args.command[0] == "--":
        args.command = args.command[1:]
    if not args.command:
        ap.error("no command given")
    result = run(args)
    tmp = args.result + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(result, fh)
    os.replace(tmp, args.result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
