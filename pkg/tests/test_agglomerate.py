import numpy as np
import pytest

from agglomseg.agglomerate import (AgglomConfig, agglomerate, agglomerate_delayed,
                                   agglomerate_standard, read_trace_csv)
from agglomseg.rag import build_rag
from oracles import (graph_signature, hashed_confidence, random_regions, reference_delayed,
                     reference_standard, table_confidence)


def strip(n):
    return build_rag(np.arange(1, n + 1)[None, :])


def steps(trace):
    return [tuple(s) for s in trace.steps]


def constant(c):
    return lambda g, e: c


def test_config_validation():
    with pytest.raises(ValueError):
        AgglomConfig(delta=1.5)
    with pytest.raises(ValueError):
        AgglomConfig(policy="greedy")
    with pytest.raises(ValueError):
        AgglomConfig(tie_break="random")


@pytest.mark.parametrize("policy,order", [
    ("standard", [(1, 2), (1, 3), (1, 4)]),
    # a re-keyed face never strictly exceeds its prior under constant h,
    # so it is delayed and the untouched {3,4} goes first
    ("delayed", [(1, 2), (3, 4), (1, 3)]),
])
def test_constant_chain(policy, order):
    g = strip(4)
    trace = agglomerate(g, constant(0.1), AgglomConfig(delta=0.2, policy=policy))
    assert trace.merges == order
    assert len(g.nodes) == 1


@pytest.mark.parametrize("policy", ["standard", "delayed"])
def test_nothing_below_threshold(policy):
    g = strip(5)
    trace = agglomerate(g, constant(0.5), AgglomConfig(delta=0.2, policy=policy))
    assert len(trace) == 0
    assert len(g.nodes) == 5


@pytest.mark.parametrize("policy", ["standard", "delayed"])
def test_delta_zero_merges_only_zero_confidence(policy):
    g = strip(3)
    table = {(1, 2, 1, 1): 0.0, (2, 3, 1, 1): 1e-9}
    trace = agglomerate(g, table_confidence(table, default=1e-9),
                        AgglomConfig(delta=0.0, policy=policy))
    assert trace.merges == [(1, 2)]


@pytest.mark.parametrize("bad", [-0.1, 1.1, float("nan"), "x"])
def test_invalid_confidence_rejected(bad):
    with pytest.raises(ValueError):
        agglomerate_delayed(strip(2), constant(bad))


def test_delayed_stops_when_merge_raises_confidence_past_delta():
    # h({1,2}) = 0.05, h({2,3}) = 0.15; merging 1 and 2 raises the face to 0.25
    table = {(1, 2, 1, 1): 0.05, (2, 3, 1, 1): 0.15, (1, 3, 2, 1): 0.25}
    trace = agglomerate_delayed(strip(3), table_confidence(table), AgglomConfig(delta=0.2))
    assert steps(trace) == [(0, 1, 2, 0.05, 1)]
    assert trace.sweeps == 1


def test_delayed_sets_aside_a_lowered_face_until_next_sweep():
    # the merge lowers h of the {12, 3} face from 0.18 to 0.12: DELAY, then sweep 2
    table = {(1, 2, 1, 1): 0.05, (2, 3, 1, 1): 0.18, (1, 3, 2, 1): 0.12}
    trace = agglomerate_delayed(strip(3), table_confidence(table), AgglomConfig(delta=0.2))
    assert steps(trace) == [(0, 1, 2, 0.05, 1), (1, 1, 3, 0.12, 2)]
    assert trace.sweeps == 2


def test_delayed_defers_lowered_face_behind_active_edges():
    # 1-2-3-4 strip. After merging 1 and 2 the {12,3} face drops to 0.06 and
    # is delayed, so {3,4} at 0.10 still goes first.
    table = {(1, 2, 1, 1): 0.05, (2, 3, 1, 1): 0.15, (3, 4, 1, 1): 0.10,
             (1, 3, 2, 1): 0.06, (1, 3, 2, 2): 0.07}
    g = strip(4)
    trace = agglomerate_delayed(g, table_confidence(table), AgglomConfig(delta=0.2))
    assert trace.merges == [(1, 2), (3, 4), (1, 3)]
    std = agglomerate_standard(strip(4), table_confidence(table), AgglomConfig(delta=0.2))
    # standard takes the lowered face at once; the {123,4} face is untabulated (0.9)
    assert std.merges == [(1, 2), (1, 3)]


def test_standard_matches_reference_interpreter():
    rng = np.random.default_rng(0)
    for trial in range(30):
        labels = random_regions(rng, (10, 10), int(rng.integers(2, 25)))
        delta = float(rng.uniform(0.1, 0.9))
        h = lambda g, e, s=trial: hashed_confidence(g, e, s)
        got = agglomerate_standard(build_rag(labels), h, AgglomConfig(delta=delta))
        ref = reference_standard(build_rag(labels), h, delta)
        assert steps(got) == ref


@pytest.mark.parametrize("lazy", [False, True])
def test_delayed_matches_reference_interpreter(lazy):
    rng = np.random.default_rng(1)
    for trial in range(40):
        labels = random_regions(rng, (12, 12), int(rng.integers(2, 40)))
        delta = float(rng.uniform(0.1, 0.9))
        h = lambda g, e, s=trial: hashed_confidence(g, e, s)
        g = build_rag(labels)
        got = agglomerate_delayed(g, h, AgglomConfig(delta=delta, lazy_updates=lazy))
        ref_g = build_rag(labels)
        ref = reference_delayed(ref_g, h, delta)
        assert steps(got) == ref
        assert graph_signature(g) == graph_signature(ref_g)


def test_lazy_mode_saves_work_without_changing_trace():
    rng = np.random.default_rng(2)
    total_eager = total_lazy = 0
    for trial in range(20):
        labels = random_regions(rng, (14, 14), 50)
        h = lambda g, e, s=trial: hashed_confidence(g, e, s)
        eager = agglomerate_delayed(build_rag(labels), h, AgglomConfig(delta=0.6))
        lazy = agglomerate_delayed(build_rag(labels), h, AgglomConfig(delta=0.6, lazy_updates=True))
        assert steps(eager) == steps(lazy)
        assert lazy.pushes <= eager.pushes
        total_eager += eager.recomputations
        total_lazy += lazy.recomputations
    assert total_lazy <= total_eager


def test_eligible_restricts_merges():
    g = strip(4)
    trace = agglomerate_delayed(g, constant(0.1), AgglomConfig(delta=0.5),
                                eligible=lambda g, e: e.a != 2 and e.b != 2)
    assert trace.merges == [(3, 4)]


def test_hooks_see_every_pop_and_merge():
    popped, merged = [], []
    g = strip(4)
    agglomerate_delayed(g, constant(0.1), AgglomConfig(delta=0.5),
                        on_pop=lambda g, e, c: popped.append((e.key, c)),
                        on_merge=lambda g, a, b: merged.append((a, b)))
    assert merged == [(1, 2), (3, 4), (1, 3)]
    assert [k for k, _ in popped] == merged


def test_trace_csv_round_trip(tmp_path):
    table = {(1, 2, 1, 1): 0.05, (2, 3, 1, 1): 0.18, (1, 3, 2, 1): 1 / 3}
    trace = agglomerate_delayed(strip(3), table_confidence(table), AgglomConfig(delta=0.5))
    trace.to_csv(tmp_path / "t.csv")
    back = read_trace_csv(tmp_path / "t.csv")
    assert back.steps == trace.steps
    trace.write_counters(tmp_path / "c.json")
    assert set(trace.counters()) == {"merges", "pushes", "pops", "recomputations", "sweeps"}


def test_runs_are_deterministic():
    labels = random_regions(np.random.default_rng(9), (12, 12), 30)
    h = lambda g, e: hashed_confidence(g, e, 5)
    a = agglomerate_delayed(build_rag(labels), h, AgglomConfig(delta=0.7))
    b = agglomerate_delayed(build_rag(labels), h, AgglomConfig(delta=0.7))
    assert a.steps == b.steps and a.counters() == b.counters()


@pytest.mark.parametrize("lazy", [False, True])
def test_merges_always_use_current_confidence(lazy):
    # an edge whose recomputed confidence exceeds delta can never be merged,
    # because every merge is decided on a freshly evaluated value
    rng = np.random.default_rng(12)
    for trial in range(20):
        labels = random_regions(rng, (12, 12), 40)
        h = lambda g, e, s=trial: hashed_confidence(g, e, s)
        delta = 0.5
        seen = []

        def on_pop(g, e, c):
            assert c == h(g, e)
            seen.append(c)

        trace = agglomerate_delayed(build_rag(labels), h,
                                    AgglomConfig(delta=delta, lazy_updates=lazy), on_pop=on_pop)
        assert all(s.confidence <= delta for s in trace)
        assert len(seen) >= len(trace)
