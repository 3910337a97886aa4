import functools
import itertools

import numpy as np
import pytest

from dysonring import catalog as cg
from dysonring import chainbuilder as cb
from dysonring import dispatcher as dp
from dysonring.astrokernel import CONST, T_START
from dysonring.rdvtable import RendezvousTable, TransferOpportunity


def opp(a, s, tf, m, dur=400.0):
    return TransferOpportunity(a, s, tf - dur, tf, m, np.zeros(6))


def make_table(opps):
    t = RendezvousTable()
    for o in opps:
        t.add(o)
    return t


def toy_table(ids, n_st=3, seed=0, max_opps=3, tf_range=(50, 400)):
    """Random opportunities with arrivals on a 10-day grid (so gap breakpoints are multiples of 10)."""
    rng = np.random.default_rng(seed)
    opps = []
    for a in ids:
        for s in range(1, n_st + 1):
            for tf in sorted(set(T_START + 10.0 * rng.integers(*tf_range, size=rng.integers(0, max_opps + 1)))):
                opps.append(opp(a, s, float(tf), float(rng.uniform(1e14, 5e14)), 10.0 * rng.integers(20, 60)))
    return make_table(opps)


def decision(x_S, x_NA, x_dt=90.0):
    return dp.DispatchDecision(np.asarray(x_S, float), np.asarray(x_NA), x_dt)


@functools.lru_cache(maxsize=None)
def toy_chain():
    cat = cg.synth_catalog(500, 1)
    node = cb.beam_search(cat, T_START, cb.TranscriptionParams(349.0, 180.0, 1.11), 30)
    return cat, cb.node_to_chain(node, cat)


# ---- decoding


def test_decode_identity_and_reverse():
    x = np.linspace(0, 1, 12)
    assert dp.decode_station_order(x) == tuple(range(1, 13))
    assert dp.decode_station_order(x[::-1]) == tuple(range(12, 0, -1))


def test_decode_matches_reference_sort():
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.random(12)
        if rng.random() < 0.3:
            x[rng.integers(12)] = x[0]  # ties
        ref = tuple(s for _, s in sorted((v, i + 1) for i, v in enumerate(x)))
        assert dp.decode_station_order(x) == ref


def test_decision_bounds():
    with pytest.raises(ValueError):
        decision([0.5, 1.2], [1, 1])
    with pytest.raises(ValueError):
        decision([0.5, 0.2], [1, 1], x_dt=89.0)
    d = decision([0.1, 0.2], [3, 4], 95.5)
    np.testing.assert_array_equal(dp.DispatchDecision.from_vector(d.to_vector(), 2).to_vector(), d.to_vector())


# ---- first allocation


def test_first_allocation_one_station_two_earliest():
    t = make_table([opp(1, 1, T_START + 500, 1e14), opp(2, 1, T_START + 300, 1e14), opp(3, 1, T_START + 400, 1e14)])
    a = dp.first_allocation(t, decision([0.0], [2]))
    assert sorted(o.asteroid for o in a.stations[1]) == [2, 3]


def test_first_allocation_station_two_empty():
    t = make_table([opp(1, 1, T_START + 500, 1e14), opp(2, 2, T_START + 550, 1e14), opp(2, 2, T_START + 200, 1e14)])
    a = dp.first_allocation(t, decision([0.0, 1.0], [1, 1]))
    assert [o.asteroid for o in a.stations[1]] == [1]
    assert a.stations[2] == ()


def brute_first_allocation(table, order, x_NA, x_dt):
    """Procedural oracle: literal simulation over every (asteroid, station, opportunity) triple."""
    remaining = sorted(table.asteroids())
    out, latest = {}, None
    for pos, s in enumerate(order):
        best = {}
        for o in table.opportunities():
            if o.station != s or o.asteroid not in remaining or o.tf > CONST.t_end:
                continue
            if latest is not None and o.tf < latest + x_dt:
                continue
            k = (o.tf, -o.m_f, o.t0)
            if o.asteroid not in best or k < best[o.asteroid][0]:
                best[o.asteroid] = (k, o)
        ranked = sorted((v[1] for v in best.values()), key=lambda o: (o.tf, -o.m_f, o.asteroid))[: x_NA[pos]]
        out[s] = sorted((o.asteroid, o.tf) for o in ranked)
        remaining = [a for a in remaining if a not in {o.asteroid for o in ranked}]
        if ranked:
            latest = max(o.tf for o in ranked)
    return out


def test_first_allocation_matches_procedural_oracle():
    rng = np.random.default_rng(5)
    for seed in range(40):
        t = toy_table(range(1, 9), seed=seed)
        x_S = rng.random(3)
        x_NA = rng.integers(1, 5, 3)
        x_dt = float(rng.uniform(90, 130))
        a = dp.first_allocation(t, decision(x_S, x_NA, x_dt))
        ref = brute_first_allocation(t, dp.decode_station_order(x_S), x_NA, x_dt)
        assert {s: sorted((o.asteroid, o.tf) for o in v) for s, v in a.stations.items()} == ref


# ---- rebalance


def one_move_best(assign, table, x_dt):
    """Oracle: best m_min reachable by relocating or unassigning exactly one asteroid."""
    order = assign.order
    base = {s: list(assign.stations[s]) for s in order}
    best = -np.inf
    for a in table.asteroids():
        stripped = {s: [o for o in v if o.asteroid != a] for s, v in base.items()}
        choices = [None] + [o for o in table.opportunities() if o.asteroid == a and o.tf <= CONST.t_end]
        for o in choices:
            st = {s: list(v) for s, v in stripped.items()}
            if o is not None:
                st[o.station].append(o)
            if not gap_ok(st, order, x_dt):
                continue
            best = max(best, min(sum(x.m_f for x in st[s]) for s in order))
    return best


def gap_ok(st, order, x_dt):
    prev = None
    for s in order:
        if not st[s]:
            continue
        if prev is not None and min(o.tf for o in st[s]) < prev + x_dt:
            return False
        prev = max(o.tf for o in st[s])
    return True


def test_rebalance_monotone_and_one_move_optimal():
    rng = np.random.default_rng(9)
    for seed in range(25):
        t = toy_table(range(1, 9), seed=100 + seed)
        d = decision(rng.random(3), rng.integers(1, 4, 3), 90.0)
        first = dp.first_allocation(t, d)
        hist = []
        final = dp.rebalance(first, t, d, history=hist)
        mins = [h[1] for h in hist]
        assert all(b >= a - 1e-3 for a, b in zip(mins, mins[1:]))
        assert final.m_min >= first.m_min
        assert dp.feasible(final.stations, final.order, d.x_dt)
        assert one_move_best(final, t, d.x_dt) <= final.m_min * (1 + 1e-12)


def exhaustive_best(table, order, x_dt):
    per_ast = {a: [None] + [o for o in table.opportunities() if o.asteroid == a] for a in table.asteroids()}
    best = 0.0
    for combo in itertools.product(*per_ast.values()):
        st = {s: [o for o in combo if o is not None and o.station == s] for s in order}
        if gap_ok(st, order, x_dt):
            best = max(best, min(sum(o.m_f for o in st[s]) for s in order))
    return best


def test_rebalance_two_stations_five_asteroids_vs_exhaustive():
    for seed in range(10):
        t = toy_table(range(1, 6), n_st=2, seed=200 + seed, max_opps=2)
        d = decision([0.3, 0.6], [1, 1], 90.0)
        first = dp.first_allocation(t, d)
        final = dp.rebalance(first, t, d)
        opt = exhaustive_best(t, first.order, 90.0)
        assert first.m_min <= final.m_min <= opt + 1e-3


def test_rebalance_balanced_fixed_point():
    t = make_table([opp(1, 1, T_START + 500, 2e14), opp(2, 2, T_START + 700, 2e14)])
    d = decision([0.1, 0.9], [1, 1])
    first = dp.first_allocation(t, d)
    assert dp.rebalance(first, t, d).stations == first.stations


# ---- trimming and evaluation


def test_trim_all_assigned_unchanged():
    cat, chain = toy_chain()
    t = make_table([opp(a, 1, T_START + 3000 + 10 * i, 1e14) for i, a in enumerate(chain.ids)])
    a = dp.Assignment({1: tuple(o for o in t.opportunities())}, (1,))
    assert dp.trim_chains([chain], a, cat) == [chain]


def test_trim_two_unassigned_tail():
    cat, chain = toy_chain()
    assert len(chain.legs) >= 4
    kept = chain.ids[:-2]
    a = dp.Assignment({1: tuple(opp(x, 1, T_START + 3000 + i, 1e14) for i, x in enumerate(kept))}, (1,))
    (trimmed,) = dp.trim_chains([chain], a, cat)
    assert trimmed.ids == kept
    assert trimmed.dv_total() < chain.dv_total()
    assert np.all(trimmed.legs[-1].dv2 == 0)


def test_trim_keeps_interior_unassigned():
    cat, chain = toy_chain()
    ids = chain.ids
    a = dp.Assignment({1: (opp(ids[0], 1, T_START + 3000, 1e14), opp(ids[-1], 1, T_START + 3100, 1e14))}, (1,))
    (trimmed,) = dp.trim_chains([chain], a, cat)
    assert trimmed == chain


def test_trim_empty_chain_dropped():
    cat, chain = toy_chain()
    assert dp.trim_chains([chain], dp.Assignment({1: ()}, (1,)), cat) == []


def test_evaluate_empty_station_zero():
    cat, chain = toy_chain()
    t = make_table([opp(chain.ids[0], 1, T_START + 3000, 1e14)])
    rep = dp.evaluate_decision(decision([0.1, 0.9], [1, 1]), t, [chain], cat, 1.1)
    assert rep.m_min == 0 and rep.J == 0


def test_evaluate_J_recomputed_from_fields():
    cat, chain = toy_chain()
    t = toy_table(chain.ids[:8], seed=3)
    rep = dp.evaluate_decision(decision([0.2, 0.5, 0.8], [3, 3, 3]), t, [chain], cat, 1.1)
    dvs = [c.dv_total() for c in rep.chains]
    if rep.m_min > 0:
        assert rep.J == pytest.approx(1e-10 * rep.m_min / (1.1**2 * sum((1 + v / 50) ** 2 for v in dvs)), rel=1e-14)
    assert rep.m_min == min(rep.masses.values())


def test_x_dt_sensitivity_exists():
    cat, chain = toy_chain()
    found = False
    for seed in range(30):
        t = toy_table(chain.ids[:8], seed=seed, tf_range=(50, 110))
        js = {dt: dp.evaluate_decision(decision([0.2, 0.5, 0.8], [3, 3, 3], dt), t, [chain], cat, 1.1).J
              for dt in (90.0, 100.0, 110.0, 120.0)}
        if len(set(js.values())) > 1:
            found = True
            break
    assert found


# ---- outer search


def test_dispatch_zero_width_bounds():
    cat, chain = toy_chain()
    t = toy_table(chain.ids[:8], seed=4)
    d = decision([0.5, 0.5, 0.5], [2, 2, 2], 95.0)
    direct = dp.evaluate_decision(d, t, [chain], cat, 1.1)
    rep = dp.dispatch(t, [chain], cat, 1.1, "pso", pso_params=dp.PSOParams(swarm=4, iters=3), n_stations=3,
                      bounds=dp.DispatchBounds((0.5, 0.5), (2, 2), (95.0, 95.0)), initial=[d])
    assert rep.J == direct.J


def test_dispatch_deterministic():
    cat, chain = toy_chain()
    t = toy_table(chain.ids[:8], seed=5)
    kw = dict(ga_params=dp.GAParams(pop=10, generations=4, seed=3), pso_params=dp.PSOParams(swarm=8, iters=5, seed=3),
              n_stations=3, bounds=dp.DispatchBounds(x_NA=(1, 4), x_dt=(90.0, 120.0)))
    r1 = dp.dispatch(t, [chain], cat, 1.1, **kw)
    r2 = dp.dispatch(t, [chain], cat, 1.1, **kw)
    assert r1.J == r2.J and r1.assignment == r2.assignment


def exhaustive_decision_optimum(t, chains, cat, na=(1, 4)):
    best = 0.0
    for perm in itertools.permutations(range(3)):
        x_S = np.array(perm, float) / 2
        for x_NA in itertools.product(range(na[0], na[1] + 1), repeat=3):
            for x_dt in (90.0, 100.0, 110.0, 120.0):
                best = max(best, dp.evaluate_decision(decision(x_S, x_NA, x_dt), t, chains, cat, 1.1).J)
    return best


def test_dispatch_within_5pct_of_exhaustive():
    cat, chain = toy_chain()
    t = toy_table(chain.ids[:8], seed=11)
    opt = exhaustive_decision_optimum(t, [chain], cat)
    assert opt > 0
    rep = dp.dispatch(t, [chain], cat, 1.1, ga_params=dp.GAParams(pop=30, generations=15, seed=0),
                      pso_params=dp.PSOParams(swarm=20, iters=20, seed=0), n_stations=3,
                      bounds=dp.DispatchBounds(x_NA=(1, 4), x_dt=(90.0, 120.0)))
    assert rep.J >= 0.95 * opt
