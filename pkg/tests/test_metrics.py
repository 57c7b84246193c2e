import argparse
import io
import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from thpsat import _launch
from thpsat.metrics import (
    PerfCounters,
    RunRecord,
    cactus_series,
    comparison_row,
    measure,
    read_records,
    render_cactus,
    render_csv,
    render_markdown,
    saved_runtime_pct,
    tlb_miss_ratio_pct,
    verdict_for,
    write_records,
)


def rec(inst, thp, wall, tlb=1000, verdict="sat", solver="x"):
    return RunRecord(inst, solver, thp, verdict, PerfCounters(wall, tlb, 1 << 20, 10))


@pytest.mark.parametrize("t_n,t_thp,expected", [(4.58, 3.72, 18.78), (8.17, 7.03, 13.95)])
def test_saved_runtime_examples(t_n, t_thp, expected):
    assert round(saved_runtime_pct(t_n, t_thp), 2) == expected


@pytest.mark.parametrize("n,thp,expected", [(4.93e10, 5.13e8, 1.04), (2.75e11, 2.97e9, 1.08)])
def test_tlb_ratio_examples(n, thp, expected):
    assert round(tlb_miss_ratio_pct(n, thp), 2) == expected


def test_identity_and_zero_baseline():
    assert saved_runtime_pct(3.0, 3.0) == 0.0
    assert tlb_miss_ratio_pct(7, 7) == 100.0
    with pytest.raises(ValueError):
        saved_runtime_pct(0, 1)
    with pytest.raises(ValueError):
        tlb_miss_ratio_pct(0, 1)


@given(st.floats(0.01, 1e6), st.floats(0.01, 1e6))
def test_saved_runtime_sign(a, b):
    s = saved_runtime_pct(a, b)
    assert (s > 0) == (b < a)
    assert s < 100


def test_verdicts():
    assert verdict_for(10, 1.0, None, 5) == "sat"
    assert verdict_for(20, 1.0, None, 5) == "unsat"
    assert verdict_for(0, 1.0, None, 5) == "unknown"
    assert verdict_for(-9, 5.0, None, 5) == "timeout"
    assert verdict_for(-9, 1.0, "memout", 5) == "memout"
    assert verdict_for(-9, 5.0, "memout", 5) == "timeout"
    assert verdict_for(10, 1.0, "timeout", None) == "timeout"


def test_counters_validate_wall_time():
    with pytest.raises(ValueError):
        PerfCounters(-1.0, None, 0, 0)


def test_comparison_row_over_solved_by_both():
    records = [rec("a", False, 3600, 200), rec("a", True, 1800, 50),
               rec("b", False, 7200, 100), rec("b", True, 7200, 50),
               rec("c", False, 100, verdict="timeout"), rec("c", True, 50),
               rec("d", False, 10), rec("d", True, 10, verdict="memout")]
    row = comparison_row(records)
    assert row.solved_both == 2
    assert row.t_n == 3.0 and row.t_thp == 2.5
    assert row.s == pytest.approx(100 * (1 - 2.5 / 3.0))
    assert (row.tlb_n, row.tlb_thp, row.r_tlb) == (300, 100, pytest.approx(100 / 3))
    assert (row.gained, row.lost) == (1, 1)


def test_comparison_row_disjoint_solves_is_empty():
    row = comparison_row([rec("a", False, 1), rec("a", True, 1, verdict="timeout"),
                          rec("b", False, 1, verdict="unknown"), rec("b", True, 1)])
    assert row.empty and row.s is None and row.r_tlb is None and row.t_n == 0


def test_comparison_row_averages_repetitions():
    row = comparison_row([rec("a", False, 3600), rec("a", False, 7200), rec("a", True, 3600)])
    assert row.t_n == 1.5 and row.t_thp == 1.0


def test_comparison_row_with_missing_counters():
    row = comparison_row([rec("a", False, 10, None), rec("a", True, 5, 3)])
    assert row.s == pytest.approx(50.0)
    assert row.tlb_n is None and row.r_tlb is None
    assert "| NA | NA | NA |" in render_markdown([row])


def test_comparison_row_rejects_mixed_solvers():
    with pytest.raises(ValueError):
        comparison_row([rec("a", False, 1, solver="p"), rec("a", True, 1, solver="q")])
    assert comparison_row([rec("a", False, 1, solver="p"), rec("a", True, 1, solver="q")],
                          solver="p").solved_both == 0


def test_comparison_row_is_order_independent():
    rng = random.Random(5)
    records = [rec(f"i{k}", thp, rng.uniform(0.1, 900), rng.randrange(1, 10**9),
                   rng.choice(["sat", "unsat", "timeout"]))
               for k in range(12) for thp in (False, True) for _ in range(2)]
    expected = comparison_row(records)
    for _ in range(20):
        rng.shuffle(records)
        assert comparison_row(records) == expected


def test_cactus_series():
    series = cactus_series([rec("a", False, 3), rec("b", False, 1), rec("c", False, 2),
                            rec("d", False, 9, verdict="timeout"), rec("a", True, 4)])
    assert series == {"x": [1, 2, 3], "x+thp": [4]}
    assert render_cactus(series["x"]).splitlines() == ["rank,seconds", "1,1.0", "2,2.0", "3,3.0"]


def test_csv_round_trip():
    records = [rec("dir/a.cnf", False, 1.25, None), rec("dir/a.cnf", True, 0.1 + 0.2, 77)]
    buf = io.StringIO()
    write_records(records, buf)
    assert "NA" in buf.getvalue()
    buf.seek(0)
    back = read_records(buf)
    assert [r.to_row() for r in back] == [r.to_row() for r in records]
    assert back[1].counters.wall_time == 0.1 + 0.2


def test_read_records_checks_header():
    with pytest.raises(ValueError):
        read_records(io.StringIO("a,b\n1,2\n"))


def test_rendered_row_from_published_figures():
    h = 3600.0
    records = [rec("a", False, 4.58 * h, 260_000_000_000, solver="glucose"),
               rec("a", True, 3.72 * h, 6_710_000_000, solver="glucose")]
    row = comparison_row(records)
    md = render_markdown([row])
    cells = [c.strip() for c in md.splitlines()[2].strip("|").split("|")]
    assert cells == ["glucose", "1", "4.58", "3.72", "18.78", "2.60E+11", "6.71E+09", "2.58"]
    csv_text = render_csv([row])
    assert csv_text.splitlines()[0].endswith("gained,lost")
    assert csv_text.splitlines()[1].endswith(",0,0")


def test_measure_true():
    c = measure(["true"])
    assert c.exit_code == 0 and c.wall_time > 0 and c.limit is None


def test_measure_sleep_wall_time():
    c = measure(["sleep", "0.1"])
    assert c.wall_time >= 0.1


def test_measure_exit_codes_and_timeout():
    assert measure(["sh", "-c", "exit 10"]).exit_code == 10
    c = measure(["sleep", "5"], timeout_s=0.3)
    assert c.limit == "timeout" and c.wall_time < 3
    assert verdict_for(c.exit_code, c.wall_time, c.limit, 0.3) == "timeout"


def test_measure_passes_environment():
    c = measure(["true"], env={"PATH": "/usr/bin:/bin", "THP_ALWAYS": "1"})
    assert c.env == {"PATH": "/usr/bin:/bin", "THP_ALWAYS": "1"}


def test_measure_missing_program():
    with pytest.raises(FileNotFoundError):
        measure(["definitely-not-a-program-xyz"])


def test_counter_unavailable_reports_none(monkeypatch, tmp_path):
    monkeypatch.setattr(_launch, "open_dtlb_counter", lambda *a, **k: None)
    args = argparse.Namespace(result=str(tmp_path / "r.json"), timeout=None, mem_limit=None,
                              cpu=None, stdout=None, stderr=None, command=["true"])
    res = _launch.run(args)
    assert res["dtlb_load_misses"] is None and res["exit_code"] == 0


def test_group_sums_do_not_depend_on_permutation():
    base = [rec(f"i{k}", thp, 0.1 * (k + 1) + (0.3 if thp else 0.0))
            for k in range(5) for thp in (False, True)]
    rows = {repr(comparison_row(list(p))) for p in itertools.islice(itertools.permutations(base), 200)}
    assert len(rows) == 1
