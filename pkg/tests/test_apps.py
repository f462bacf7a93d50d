import math
import random

import pytest

import rdc
from rdc.apps import kmeans, marketsim as ms, moldyn


def rel_close(a, b, tol):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


# -- k-means ---------------------------------------------------------------


def test_kmeans_matches_reference_on_two_places():
    cfg = kmeans.KMeansConfig(points_per_place=400, dim=2, k=4, iterations=4, seed=3, workers=2)
    with rdc.launch(2, workers=2):
        res = kmeans.run(cfg)
    pts, init = kmeans.generate(3, 800, 2, 4)
    ref = kmeans.reference(pts, init, 4)
    assert res["centroids"][0] == res["centroids"][1]
    for got_it, ref_it in zip(res["centroids"][0], ref):
        for gc, rc in zip(got_it, ref_it):
            assert all(rel_close(a, b, 1e-9) for a, b in zip(gc, rc))
    assert len(res["rows"]) == 4 and res["header"][0] == "iter"


def test_kmeans_single_worker_is_bitwise_reference():
    cfg = kmeans.KMeansConfig(points_per_place=300, dim=3, k=5, iterations=3, seed=9, workers=1)
    with rdc.launch(1, workers=1):
        res = kmeans.run(cfg)
    pts, init = kmeans.generate(9, 300, 3, 5)
    assert res["centroids"][0] == kmeans.reference(pts, init, 3)


def test_empty_cluster_keeps_previous_centroid():
    prev = [(0.0, 0.0), (5.0, 5.0)]
    avg = kmeans.AveragePosition(2, 2)
    p = kmeans.Point(0, (1.0, 1.0))
    p.assign(prev)
    avg.reduce(p)
    assert avg.means(prev)[1] == (5.0, 5.0)
    cp = kmeans.ClosestPoint(avg.means(prev))
    cp.reduce(p)
    assert cp.centroids(prev) == [(1.0, 1.0), (5.0, 5.0)]


def test_closest_point_ties_go_to_lowest_index():
    a = kmeans.Point(7, (1.0,))
    b = kmeans.Point(3, (3.0,))
    for p in (a, b):
        p.cluster = 0
    cp = kmeans.ClosestPoint([(2.0,)])
    other = cp.new_reducer()
    cp.reduce(a)
    other.reduce(b)
    cp.merge(other)
    assert cp.centroids([(0.0,)]) == [(3.0,)]


# -- moldyn ------------------------------------------------------------------


def test_moldyn_small_hybrid_matches_reference():
    cfg = moldyn.MolDynConfig(n=108, iterations=3, ndivide=3, seed=1, workers=2)
    with rdc.launch(2, workers=2):
        res = moldyn.run(cfg)
    ref = [p.state() for p in moldyn.reference(108, 3, 1)]
    assert res["final"][0] == res["final"][1]
    for g, r in zip(res["final"][0], ref):
        assert all(rel_close(a, b, 1e-9) or abs(a - b) < 1e-12 for a, b in zip(g, r))
    assert len(res["rows"]) == 3


def test_moldyn_cutoff_reaches_neighbours():
    box = moldyn.box_for(108)
    ps = moldyn.lattice(box, None)
    pairs = sum(1 for i in range(len(ps)) for j in range(i + 1, len(ps)) if moldyn.pair_force(ps[i], ps[j], box))
    assert pairs >= 6 * len(ps)  # at least the 12 nearest neighbours of each particle
    # once velocities perturb the lattice the forces no longer cancel
    ps = moldyn.reference(108, 1, 1)
    moldyn.reference_forces(ps, box)
    assert any(abs(p.fx) > 1e-6 for p in ps)


def test_moldyn_at_rest_net_force_zero():
    cfg = moldyn.MolDynConfig(n=108, iterations=2, ndivide=2, seed=None, workers=2)
    with rdc.launch(2, workers=2):
        res = moldyn.run(cfg)
    assert all(abs(c) <= 1e-9 for f in res["net_force"] for c in f)


def test_moldyn_lattice_counts():
    with pytest.raises(ValueError):
        moldyn.box_for(100)
    assert len(moldyn.lattice(moldyn.box_for(32), 0)) == 32


def test_nonfinite_force_names_particles():
    ps = [moldyn.Particle(0.0, 0.0, 0.0) for _ in range(3)]
    ps[2].fx = math.nan
    with pytest.raises(FloatingPointError, match=r"\[2\]"):
        moldyn._check_finite(ps)


# -- market simulation ------------------------------------------------------------


def market(places, agents=300, iters=25, lb="none", profile=None, seed=4):
    cfg = ms.MarketConfig(agents, iters, lb, 5, ms.ClusterProfile.parse(profile), seed, 50.0, 2)
    with rdc.launch(places, workers=2):
        return ms.run(cfg)


@pytest.fixture(scope="module")
def market_ref():
    return ms.reference(300, 25, 4)


@pytest.mark.parametrize("places,lb,profile", [
    (2, "none", None),
    (3, "level-extremes", "slow:1:3.0"),
    (4, "none", "disturb:1:5"),
    (4, "level-extremes", "disturb:1:5"),
])
def test_market_state_invariant(market_ref, places, lb, profile):
    res = market(places, lb=lb, profile=profile)
    assert res["hash"] == market_ref["hash"]
    assert res["updates_generated"] == res["updates_executed"] == market_ref["updates"]
    assert res["agents"] == 300
    assert res["prices"] == market_ref["prices"]


def test_market_flat_profile_never_moves():
    res = market(4, lb="level-extremes")
    assert res["moves"] == []


def test_market_moves_off_the_slow_place():
    res = market(4, lb="level-extremes", profile="slow:2:3.0")
    assert res["moves"] and all(src == 2 for _, src, _, _ in res["moves"])
    held = {p: h for it, p, _, h in res["rows"] if it == 24}
    assert held[2] < held[1] and held[2] < held[3]


def test_market_needs_master_and_agents():
    with rdc.launch(1):
        with pytest.raises(ValueError):
            ms.run(ms.MarketConfig(agents=10, iterations=1))
    with rdc.launch(4):
        with pytest.raises(ValueError):
            ms.run(ms.MarketConfig(agents=3, iterations=1))


def test_matching_ignores_arrival_order():
    agents = [ms.Agent(i, 11) for i in range(60)]
    markets = [ms.Market(i) for i in range(ms.N_MARKETS)]
    orders = [o for a in agents for o in a.submit(markets)]
    first = ms.match(list(orders), [ms.Market(i) for i in range(ms.N_MARKETS)])
    random.Random(0).shuffle(orders)
    second = ms.match(orders, [ms.Market(i) for i in range(ms.N_MARKETS)])
    assert first == second and first


def test_profile_parsing():
    p = ms.ClusterProfile.parse("slow:1:3.0,2:1.5")
    assert p.factor(1, 0, 4) == 3.0 and p.factor(2, 0, 4) == 1.5 and p.factor(3, 0, 4) == 1.0
    d = ms.ClusterProfile.parse("disturb:3:70")
    victims = [d.victim(k * 70, 4) for k in range(3)]
    assert sorted(victims) == [1, 2, 3]
    assert d.factor(victims[0], 0, 4) == 3.0 and d.factor(0, 0, 4) == 1.0
    assert ms.ClusterProfile.parse(None).factor(1, 0, 4) == 1.0
    for bad in ("slow:1:0.5", "disturb:1:0", "fast:1", "slow:x"):
        with pytest.raises(ValueError):
            ms.ClusterProfile.parse(bad)
