import random

from hypothesis import given, settings
from hypothesis import strategies as st

from oracle import brute_force_sat
from thpsat.cnf import TRUE, FALSE, Assignment, Formula, is_model, lit_from_dimacs, negate
from thpsat.instances import pigeonhole, random_kcnf
from thpsat.solver import Attach, SolveResult, Solver, solve


def L(*xs):
    return [lit_from_dimacs(x) for x in xs]


def test_attach_watches_first_two_literals():
    s = Solver(num_vars=3)
    assert s.add_clause(L(1, 2, 3)) is Attach.ATTACHED
    cref = s.clauses[0]
    assert [c for c, _ in s.watchers(negate(lit_from_dimacs(1)))] == [cref]
    assert [c for c, _ in s.watchers(negate(lit_from_dimacs(2)))] == [cref]
    assert s.watchers(negate(lit_from_dimacs(3))) == []


def test_attach_unit_and_empty():
    s = Solver(num_vars=5)
    assert s.add_clause(L(5)) is Attach.UNIT_ENQUEUED
    assert s.value(lit_from_dimacs(5)) == TRUE
    assert s.add_clause([]) is Attach.EMPTY_CONFLICT
    assert not s.ok


def test_attach_clause_falsified_at_level_zero():
    s = Solver(num_vars=2)
    s.add_clause(L(-1))
    s.add_clause(L(-2))
    assert s.add_clause(L(1, 2)) is Attach.EMPTY_CONFLICT


def test_enqueue_examples():
    s = Solver(num_vars=3)
    assert s.enqueue(lit_from_dimacs(3), 2)
    assert s.assign.trail_len == 1 and s.assign.reason[3] == 2
    assert s.enqueue(lit_from_dimacs(3))
    assert s.assign.trail_len == 1
    assert not s.enqueue(lit_from_dimacs(-3))


def test_propagate_chain():
    s = Solver(Formula.from_clauses([[1], [-1, 2], [-2, 3]], 3))
    assert s.unit_propagate() is None
    assert all(s.value(lit_from_dimacs(v)) == TRUE for v in (1, 2, 3))


def test_propagate_conflict():
    s = Solver(Formula.from_clauses([[-1, 2], [-1, -2], [1]], 2))
    confl = s.unit_propagate()
    assert confl is not None
    assert sorted(s.arena.literals(confl)) in (sorted(L(-1, -2)), sorted(L(-1, 2)))
    assert s.stats.B9_conflict == 1


def test_propagate_with_empty_queue_touches_nothing():
    s = Solver(Formula.from_clauses([[1, 2], [-1, 2]], 2))
    s.unit_propagate()
    before = s.stats.propagation_accesses
    assert s.unit_propagate() is None
    assert s.stats.propagation_accesses == before


def test_analyze_first_uip():
    s = Solver(Formula.from_clauses([[-1, 2], [-1, 3], [-2, -3]], 3))
    assert s.unit_propagate() is None
    s.new_decision(lit_from_dimacs(1))
    confl = s.unit_propagate()
    assert confl is not None
    learnt, level = s.analyze_conflict(confl)
    assert learnt == L(-1) and level == 0


def test_analyze_decision_only_conflict():
    s = Solver(Formula.from_clauses([[-1, 2], [-1, -2]], 3))
    s.new_decision(lit_from_dimacs(3))
    assert s.unit_propagate() is None
    s.new_decision(lit_from_dimacs(1))
    confl = s.unit_propagate()
    learnt, level = s.analyze_conflict(confl)
    assert learnt == L(-1) and level == 0


def test_analyze_at_level_zero_signals_unsat():
    s = Solver(Formula.from_clauses([[-1, 2], [-1, -2], [1]], 2))
    confl = s.unit_propagate()
    assert s.analyze_conflict(confl) == ([], 0)


def test_analyze_backjump_level_is_second_highest():
    s = Solver(Formula.from_clauses([[-1, -2, 3], [-1, -2, -3]], 4))
    s.new_decision(lit_from_dimacs(1))
    s.unit_propagate()
    s.new_decision(lit_from_dimacs(4))
    s.unit_propagate()
    s.new_decision(lit_from_dimacs(2))
    learnt, level = s.analyze_conflict(s.unit_propagate())
    assert learnt[0] == lit_from_dimacs(-2) and set(learnt) == set(L(-2, -1))
    assert level == 1


def test_decide_fresh_picks_lowest_negative():
    s = Solver(num_vars=3)
    assert s.decide() == lit_from_dimacs(-1)


def test_decide_after_conflict_prefers_bumped_variable():
    s = Solver(Formula.from_clauses([[-4, 2], [-4, -2]], 4))
    s.new_decision(lit_from_dimacs(4))
    learnt, level = s.analyze_conflict(s.unit_propagate())
    s.backjump(level)
    s._learn(learnt)
    assert s.unit_propagate() is None
    assert s.decide() == lit_from_dimacs(-2)


def test_decide_none_when_all_assigned():
    s = Solver(Formula.from_clauses([[1], [2]], 2))
    s.unit_propagate()
    assert s.decide() is None


def test_backjump_restores_state():
    s = Solver(Formula.from_clauses([[-1, 2]], 3))
    s.new_decision(lit_from_dimacs(1))
    s.unit_propagate()
    s.new_decision(lit_from_dimacs(3))
    s.backjump(1)
    assert s.decision_level == 1 and s.value(lit_from_dimacs(3)) == 0
    assert s.value(lit_from_dimacs(2)) == TRUE
    s.backjump(0)
    assert s.assign.trail_len == 0 and s.qhead == 0


def test_solve_examples():
    assert solve(Formula.from_clauses([[1], [-1]], 1)).status == "UNSAT"
    res = solve(Formula(0))
    assert res.status == "SAT" and res.model == []


def test_pigeonhole_unsat():
    res = solve(Formula.from_clauses(pigeonhole(4)))
    assert res.status == "UNSAT"


def test_budgets_give_unknown():
    f = Formula.from_clauses(pigeonhole(7))
    res = solve(f, conflict_limit=10)
    assert res.status == "UNKNOWN" and res.reason == "conflict limit" and res.exit_code == 0
    res = solve(f, timeout=0.0)
    assert res.status == "UNKNOWN" and res.reason == "timeout"


def test_exit_codes():
    assert SolveResult("SAT").exit_code == 10
    assert SolveResult("UNSAT").exit_code == 20
    assert SolveResult("UNKNOWN").exit_code == 0


def _check(n, clauses, **opts):
    f = Formula.from_clauses(clauses, n)
    res = solve(f, **opts)
    expected = brute_force_sat(n, clauses)
    assert (res.status == "SAT") == (expected is not None)
    if res.model is not None:
        assert is_model(f, Assignment.from_dimacs(n, res.model))
    return res


@settings(max_examples=60)
@given(st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.lists(st.integers(1, n).flatmap(lambda v: st.sampled_from([v, -v])),
                                  min_size=0, max_size=4), max_size=40))))
def test_random_formulas_against_oracle(data):
    n, clauses = data
    _check(n, clauses, debug=True)


def test_options_keep_verdicts():
    rng = random.Random(3)
    for _ in range(60):
        n = rng.randint(10, 25)
        clauses = random_kcnf(n, round(4.3 * n), 3, rng.randrange(1 << 30))
        _check(n, clauses, use_blockers=False)
        _check(n, clauses, phase_saving=True)
        # frequent reductions exercise deletion, compaction and watch rebuilding
        _check(n, clauses, reduce_interval=5, restart_first=3, debug=True)


@settings(max_examples=80)
@given(st.integers(0, 1 << 30), st.integers(4, 14), st.lists(st.integers(-14, 14), max_size=6))
def test_blockers_do_not_change_the_fixpoint(seed, n, decisions):
    clauses = random_kcnf(n, 3 * n, 3, seed)
    results = []
    for blockers in (True, False):
        s = Solver(Formula.from_clauses(clauses, n), use_blockers=blockers)
        confl = s.unit_propagate() if s.ok else -1
        for x in decisions:
            if confl is not None or x == 0 or abs(x) > n:
                continue
            lit = lit_from_dimacs(x)
            if s.value(lit) != 0:
                continue
            s.new_decision(lit)
            confl = s.unit_propagate()
        results.append((confl is None, sorted(s.assign.trail_literals())
                        if confl is None else None))
        s.close()
    assert results[0] == results[1]


def test_access_counters_are_consistent():
    rng = random.Random(11)
    for _ in range(20):
        n = rng.randint(30, 60)
        s = Solver(Formula.from_clauses(random_kcnf(n, round(4.26 * n), 3, rng.randrange(1 << 30)), n))
        s.solve()
        st_ = s.stats
        assert st_.B4_clause_scan >= st_.B6_B7_list_move
        assert st_.propagation_accesses > st_.other_accesses
        doc = st_.to_dict()
        assert doc["propagation_share"] > 0.5 and "B3_list_load" in doc
        s.close()


def test_model_values_are_consistent():
    s = Solver(Formula.from_clauses([[1, 2], [-1]], 3))
    res = s.solve()
    assert res.model == [-1, 2, -3]
    assert s.value(lit_from_dimacs(-1)) == TRUE and s.value(lit_from_dimacs(1)) == FALSE
