import pytest
from hypothesis import given
from hypothesis import strategies as st

from thpsat.cnf import (
    FALSE,
    TRUE,
    UNASSIGNED,
    Assignment,
    ClauseArena,
    ClauseState,
    DimacsError,
    Formula,
    clause_state,
    is_model,
    lit_from_dimacs,
    lit_to_dimacs,
    model_satisfies,
    negate,
    parse_dimacs,
    var,
    write_dimacs,
)

dimacs_lits = st.integers(1, 50).flatmap(lambda v: st.sampled_from([v, -v]))


@given(dimacs_lits)
def test_literal_encoding_round_trip(x):
    lit = lit_from_dimacs(x)
    assert lit_to_dimacs(lit) == x
    assert var(lit) == abs(x)
    assert lit == 2 * abs(x) + (x < 0)


@given(st.integers(2, 10_000))
def test_negate_is_fixpoint_free_involution(lit):
    assert negate(lit) != lit
    assert negate(negate(lit)) == lit
    assert var(negate(lit)) == var(lit)


def test_parse_basic():
    f = parse_dimacs("p cnf 3 2\n1 -2 0\n2 3 0\n")
    assert f.num_vars == 3 and len(f) == 2
    assert f.dimacs_clauses() == [[1, -2], [2, 3]]


def test_parse_skips_comments():
    f = parse_dimacs("c comment\np cnf 1 1\n1 0\n")
    assert f.num_vars == 1 and f.dimacs_clauses() == [[1]]


def test_parse_whitespace_and_multiline_clauses():
    text = "c x\n\n  p  cnf   4  2 \n 1\t-2\n 3 0 -4\n   0\n"
    f = parse_dimacs(text.encode())
    assert f.dimacs_clauses() == [[1, -2, 3], [-4]]
    assert f.declared_clauses == 2


def test_parse_stops_at_percent_line():
    f = parse_dimacs("p cnf 2 1\n1 2 0\n%\n0\n")
    assert len(f) == 1


@pytest.mark.parametrize("text,line", [
    ("p cnf 2 1\n1 2\n", 2),
    ("1 2 0\n", 1),
    ("c only a comment\n", 1),
    ("p cnf 2 1\n1 x 0\n", 2),
    ("p cnf 2 1\n1 3 0\n", 2),
    ("p cnf 2\n", 1),
    ("p cnf 2 1\np cnf 2 1\n", 2),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(DimacsError) as exc:
        parse_dimacs(text)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_tautologies_and_duplicates_are_normalized():
    f = parse_dimacs("p cnf 3 3\n1 -1 2 0\n2 2 3 0\n-3 0\n")
    assert f.dimacs_clauses() == [[2, 3], [-3]]
    assert f.tautologies == 1 and f.duplicates_removed == 1


def test_add_clause_rejects_out_of_range():
    f = Formula(2)
    with pytest.raises(ValueError):
        f.add_clause([3])
    with pytest.raises(ValueError):
        f.add_clause([0])


clause_lists = st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.lists(st.integers(1, n).flatmap(lambda v: st.sampled_from([v, -v])),
                      min_size=1, max_size=5), max_size=20)))


@given(clause_lists)
def test_write_parse_round_trip(data):
    n, clauses = data
    f = Formula.from_clauses(clauses, n)
    g = parse_dimacs(write_dimacs(f, ["generated"]))
    assert g == f
    assert parse_dimacs(write_dimacs(g)) == g


def _state(clause, values):
    a = Assignment.from_dimacs(3, values)
    return clause_state([lit_from_dimacs(x) for x in clause], a)


def test_clause_state_examples():
    assert _state([1, 2], [1]).state is ClauseState.SATISFIED
    st_ = _state([1, 2], [-1])
    assert st_.state is ClauseState.UNIT and st_.unit == lit_from_dimacs(2)
    assert _state([1, 2], [-1, -2]).state is ClauseState.FALSIFIED
    assert _state([1, 2], []).state is ClauseState.UNRESOLVED
    assert _state([], [1, 2, 3]).state is ClauseState.FALSIFIED
    assert _state([2, 2], [1]).unit == lit_from_dimacs(2)


@given(st.lists(st.integers(1, 4).flatmap(lambda v: st.sampled_from([v, -v])), max_size=6),
       st.lists(st.sampled_from([TRUE, FALSE, UNASSIGNED]), min_size=4, max_size=4))
def test_clause_state_matches_direct_evaluation(clause, vals):
    assignment = [v if x == TRUE else -v for v, x in zip(range(1, 5), vals) if x != UNASSIGNED]
    res = _state_any(clause, assignment)
    true_lits = [x for x in clause if x in assignment]
    open_lits = sorted({x for x in clause if x not in assignment and -x not in assignment})
    if true_lits:
        assert res.state is ClauseState.SATISFIED
    elif not open_lits:
        assert res.state is ClauseState.FALSIFIED
    elif len(open_lits) == 1:
        assert res.state is ClauseState.UNIT and lit_to_dimacs(res.unit) == open_lits[0]
    else:
        assert res.state is ClauseState.UNRESOLVED


def _state_any(clause, assignment):
    a = Assignment.from_dimacs(4, assignment)
    return clause_state([lit_from_dimacs(x) for x in clause], a)


def test_is_model_examples():
    f = Formula.from_clauses([[1]], 1)
    assert is_model(f, Assignment.from_dimacs(1, [1]))
    assert not is_model(f, Assignment.from_dimacs(1, [-1]))
    empty = Formula(3)
    assert is_model(empty, Assignment.from_dimacs(3, []))
    assert model_satisfies([[1, -2]], [-1, -2])


def test_assignment_trail_and_undo():
    a = Assignment(3)
    a.assign(lit_from_dimacs(1), level=0)
    a.assign(lit_from_dimacs(-2), level=1, reason=5)
    assert a.value_of(lit_from_dimacs(1)) == TRUE
    assert a.value_of(lit_from_dimacs(2)) == FALSE
    assert a.level[2] == 1 and a.reason[2] == 5
    assert a.to_dimacs() == [1, -2]
    a.unassign_to(1)
    assert a.value_of(lit_from_dimacs(2)) == UNASSIGNED and a.to_dimacs() == [1]
    with pytest.raises(ValueError):
        a.assign(lit_from_dimacs(-1))


def test_arena_add_delete_compact():
    arena = ClauseArena(capacity=8)
    refs = [arena.add([2 * i + 2, 2 * i + 3, 7], learnt=i % 2 == 1) for i in range(50)]
    assert arena.literals(refs[3]) == [8, 9, 7] and arena.learnt(refs[3])
    for r in refs[::2]:
        arena.delete(r)
    assert arena.deleted(refs[0]) and arena.wasted > 0
    remap = arena.compact()
    assert set(remap) == set(refs[1::2])
    assert [arena.literals(remap[r]) for r in refs[1::2]] == \
        [[2 * i + 2, 2 * i + 3, 7] for i in range(1, 50, 2)]
    assert arena.wasted == 0 and list(arena.refs()) == sorted(remap.values())
    arena.close()
