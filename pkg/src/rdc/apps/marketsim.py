"""Agent-based market simulation with optional dynamic load balancing.

Place 0 is the master: it owns the markets and matches orders. Agents live in a
tracked chunked list spread over the other places. One round:

1. the master's market state is broadcast to every replica;
2. every agent may submit orders, collected into a bag in parallel;
3. the orders are gathered on the master;
4. the master matches them while the places optionally rebalance agents;
5. the resulting updates are routed to the current holder of each agent.

Per-agent work is simulated: the phase-2 duration of a place is the number of
agents it holds times a per-agent cost, multiplied by the place's slowdown
factor at that iteration. The simulated outcome never depends on where agents
live, only timings do.
"""

from __future__ import annotations

import hashlib
import heapq
import time
from dataclasses import dataclass, field

from ..collections import CachableArray, DistBag, DistCol, DistMultiMap, PlaceLocal
from ..group import TeamedPlaceGroup
from ..product import splitmix64
from ..ranges import LongRange
from ..relocation import CollectiveMoveManager, perform_load_balance_level_extremes
from ..runtime import async_, at, finish, here, place, task

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
N_MARKETS = 2
INITIAL_PRICE = 100.0
INITIAL_CASH = 10_000.0
INITIAL_POSITION = 50
SUBMIT_PROBABILITY = 0.5
PRICE_SPREAD = 0.05

BUY, SELL = 0, 1


@dataclass
class Order:
    agent_id: int
    seq: int
    market: int
    side: int
    price: float
    quantity: int


@dataclass
class AgentUpdate:
    agent_id: int
    market: int
    side: int
    price: float
    quantity: int


@dataclass
class Market:
    index: int
    last_price: float = INITIAL_PRICE
    volume: int = 0
    trades: int = 0

    @staticmethod
    def pack(m: Market) -> tuple:
        return (m.last_price, m.volume, m.trades)

    @staticmethod
    def unpack(carrier: tuple, m: Market) -> None:
        m.last_price, m.volume, m.trades = carrier


class Agent:
    """Zero-intelligence trader with its own SplitMix64 stream."""

    __slots__ = ("id", "cash", "position", "rng", "executed")

    def __init__(self, agent_id: int, seed: int):
        self.id = agent_id
        self.cash = INITIAL_CASH
        self.position = [INITIAL_POSITION] * N_MARKETS
        self.rng = splitmix64((seed * 1_000_003 + agent_id) & _MASK)
        self.executed = 0

    def __getstate__(self):
        return (self.id, self.cash, list(self.position), self.rng, self.executed)

    def __setstate__(self, st):
        self.id, self.cash, self.position, self.rng, self.executed = st

    def _next(self) -> int:
        v = splitmix64(self.rng)
        self.rng = (self.rng + _GOLDEN) & _MASK
        return v

    def _uniform(self) -> float:
        return (self._next() >> 11) * (1.0 / (1 << 53))

    def submit(self, markets) -> list[Order]:
        if self._uniform() >= SUBMIT_PROBABILITY:
            return []
        m = self._next() % N_MARKETS
        side = BUY if self._next() & 1 == 0 else SELL
        last = markets[m].last_price
        price = round(last * (1.0 + PRICE_SPREAD * (2.0 * self._uniform() - 1.0)), 2)
        qty = 1 + self._next() % 10
        if side == BUY and self.cash < price * qty:
            return []
        if side == SELL and self.position[m] < qty:
            return []
        return [Order(self.id, 0, m, side, price, qty)]

    def execute(self, u: AgentUpdate) -> None:
        if u.agent_id != self.id:
            raise ValueError(f"update for agent {u.agent_id} delivered to agent {self.id}")
        if u.side == BUY:
            self.cash -= u.price * u.quantity
            self.position[u.market] += u.quantity
        else:
            self.cash += u.price * u.quantity
            self.position[u.market] -= u.quantity
        self.executed += 1

    def state(self) -> tuple:
        return (self.id, self.cash, tuple(self.position), self.rng, self.executed)


def match(orders: list[Order], markets) -> list[AgentUpdate]:
    """Price-time priority matching of one round; unfilled orders expire.

    Orders are first put in canonical ``(agent_id, seq)`` order so the outcome
    does not depend on the order in which they were gathered.
    """
    orders = sorted(orders, key=lambda o: (o.agent_id, o.seq))
    updates: list[AgentUpdate] = []
    books = [([], []) for _ in range(N_MARKETS)]
    for arrival, o in enumerate(orders):
        bids, asks = books[o.market]
        mk = markets[o.market]
        left = o.quantity
        if o.side == BUY:
            while left and asks and asks[0][0] <= o.price:
                price, t, rest = asks[0]
                q = min(left, rest[0])
                _trade(updates, mk, o.agent_id, rest[1], o.market, price, q)
                left -= q
                rest[0] -= q
                if rest[0] == 0:
                    heapq.heappop(asks)
            if left:
                heapq.heappush(bids, (-o.price, arrival, [left, o.agent_id]))
        else:
            while left and bids and -bids[0][0] >= o.price:
                negp, t, rest = bids[0]
                q = min(left, rest[0])
                _trade(updates, mk, rest[1], o.agent_id, o.market, -negp, q)
                left -= q
                rest[0] -= q
                if rest[0] == 0:
                    heapq.heappop(bids)
            if left:
                heapq.heappush(asks, (o.price, arrival, [left, o.agent_id]))
    return updates


def _trade(updates, mk: Market, buyer: int, seller: int, m: int, price: float, q: int) -> None:
    updates.append(AgentUpdate(buyer, m, BUY, price, q))
    updates.append(AgentUpdate(seller, m, SELL, price, q))
    mk.last_price = price
    mk.volume += q
    mk.trades += 1


def state_hash(states) -> str:
    h = hashlib.sha256()
    for s in sorted(states):
        h.update(repr(s).encode())
    return h.hexdigest()


def reference(n_agents: int, iterations: int, seed: int) -> dict:
    """Sequential simulation of the same rounds on plain lists."""
    agents = [Agent(i, seed) for i in range(n_agents)]
    markets = [Market(i) for i in range(N_MARKETS)]
    n_updates = 0
    for _ in range(iterations):
        view = [Market(m.index, m.last_price, m.volume, m.trades) for m in markets]
        orders = [o for a in agents for o in a.submit(view)]
        updates = match(orders, markets)
        n_updates += len(updates)
        for u in updates:
            agents[u.agent_id].execute(u)
    return {"hash": state_hash(a.state() for a in agents), "updates": n_updates,
            "prices": [m.last_price for m in markets]}


# -- cluster profiles -------------------------------------------------------------


@dataclass
class ClusterProfile:
    """Per-place slowdown factors, optionally with a moving disturbance.

    ``disturb`` is ``(seed, period, factor)``: during iterations
    ``[k*period, (k+1)*period)`` one agent place (rotating, starting from a
    seed-dependent one) runs ``factor`` times slower.
    """

    slow: dict[int, float] = field(default_factory=dict)
    disturb: tuple[int, int, float] | None = None

    def factor(self, p: int, iteration: int, n: int) -> float:
        f = self.slow.get(p, 1.0)
        if self.disturb is not None and n > 1:
            victim = self.victim(iteration, n)
            if p == victim:
                f *= self.disturb[2]
        return f

    def victim(self, iteration: int, n: int) -> int | None:
        if self.disturb is None or n < 2:
            return None
        seed, period, _ = self.disturb
        k = iteration // period
        return 1 + (splitmix64(seed) + k) % (n - 1)

    @classmethod
    def parse(cls, text: str | None) -> ClusterProfile:
        """``slow:<place>:<factor>[,<place>:<factor>...]`` or ``disturb:<seed>:<period>[:<factor>]``."""
        if not text or text in ("none", "flat"):
            return cls()
        kind, _, rest = text.partition(":")
        try:
            if kind == "slow":
                slow = {}
                for item in rest.split(","):
                    p, f = item.split(":")
                    slow[int(p)] = float(f)
                if any(f < 1 for f in slow.values()):
                    raise ValueError("slowdown factors must be >= 1")
                return cls(slow=slow)
            if kind == "disturb":
                parts = rest.split(":")
                seed, period = int(parts[0]), int(parts[1])
                factor = float(parts[2]) if len(parts) > 2 else 3.0
                if period < 1 or factor < 1:
                    raise ValueError("period must be >= 1 and factor >= 1")
                return cls(disturb=(seed, period, factor))
        except (ValueError, IndexError) as e:
            raise ValueError(f"bad profile {text!r}: {e}") from None
        raise ValueError(f"bad profile {text!r}: expected slow:... or disturb:...")


# -- distributed driver -----------------------------------------------------------


@dataclass
class MarketConfig:
    agents: int = 3000
    iterations: int = 200
    lb: str = "none"
    lb_period: int = 10
    profile: ClusterProfile = field(default_factory=ClusterProfile)
    seed: int = 0
    work_us: float = 50.0
    workers: int | None = None
    wallclock: bool = False
    hysteresis: float = 1.1


@dataclass
class PlaceTrace:
    rows: list = field(default_factory=list)
    moves: list = field(default_factory=list)
    updates_generated: int = 0
    states: list = field(default_factory=list)


def _new_trace() -> PlaceTrace:
    return PlaceTrace()


def _initial_ranges(n_agents: int, n: int) -> list[LongRange]:
    if n < 2:
        raise ValueError("the market simulation needs a master place and at least one agent place")
    if n_agents < n:
        raise ValueError(f"need at least as many agents ({n_agents}) as places ({n})")
    return LongRange(0, n_agents).split(n - 1)


@task
def _match_on_master(orders: DistBag, markets: CachableArray, contracted: DistMultiMap,
                     trace: PlaceLocal) -> None:
    batches = orders.clear()
    flat = [o for batch in batches for o in batch]
    updates = match(flat, markets)
    for u in updates:
        contracted.put(u.agent_id, u)
    trace.value.updates_generated += len(updates)


def _load_balance(agents: DistCol, times: list[int], cfg: MarketConfig, g, tr: PlaceTrace, it: int) -> None:
    mm = CollectiveMoveManager(g)
    participants = range(1, g.size)
    res = perform_load_balance_level_extremes(times, agents, mm, participants, cfg.hysteresis)
    mm.sync()
    agents.update_dist()
    if res is not None and res[2]:
        tr.moves.append((it, res[0], res[1], res[2]))


@task
def _market_place(agents: DistCol, orders: DistBag, markets: CachableArray, contracted: DistMultiMap,
                  trace: PlaceLocal, cfg: MarketConfig) -> None:
    g = agents.group
    n = g.size
    me = g.rank()
    master = place(0)
    tr: PlaceTrace = trace.value
    if me > 0:
        r = _initial_ranges(cfg.agents, n)[me - 1]
        agents.add_chunk(r, [Agent(i, cfg.seed) for i in range(r.start, r.end)])
    else:
        _initial_ranges(cfg.agents, n)
    agents.update_dist()

    for it in range(cfg.iterations):
        # (1) market state from the master
        markets.broadcast(Market.pack, Market.unpack)
        # (2) order submission; simulated cost of the agents held here
        held = len(agents)
        sim_us = held * cfg.work_us * cfg.profile.factor(me, it, n)
        view = list(markets)
        agents.parallel_to_bag(lambda a, sink: _submit(a, view, sink), orders, workers=cfg.workers)
        if cfg.wallclock and sim_us:
            time.sleep(sim_us / 1e6)
        tr.rows.append((it, me, sim_us / 1e3, held))
        # (3) orders to the master
        orders.team().gather(master)
        # (4) matching on the master, load balancing everywhere
        with finish():
            if here() == master:
                async_(_match_on_master, orders, markets, contracted, trace)
            if cfg.lb == "level-extremes" and it % cfg.lb_period == 0:
                times = g.all_gather1(int(round(sim_us)))
                _load_balance(agents, times, cfg, g, tr, it)
        # (5) route every update to the current holder of its agent
        contracted.relocate(agents.get_distribution())
        contracted.parallel_for_each(lambda aid, ups: _execute(agents, aid, ups), workers=cfg.workers)
        contracted.clear()
    tr.states = [a.state() for a in agents]


def _submit(agent: Agent, markets, sink) -> None:
    out = agent.submit(markets)
    if out:
        sink(out)


def _execute(agents: DistCol, aid: int, updates: list[AgentUpdate]) -> None:
    try:
        a = agents[aid]
    except IndexError:
        raise LookupError(f"update for agent {aid} reached place({here().id}) which does not hold it") from None
    for u in updates:
        a.execute(u)


@task
def _read_trace(trace: PlaceLocal) -> PlaceTrace:
    return trace.value


@task
def _read_markets(markets: CachableArray) -> list:
    return [Market.pack(m) for m in markets]


CSV_HEADER = ["iter", "place", "phase2_ms", "agents_held"]


def run(cfg: MarketConfig) -> dict:
    if cfg.lb not in ("none", "level-extremes"):
        raise ValueError(f"unknown load-balancing strategy {cfg.lb!r}")
    if cfg.lb_period < 1:
        raise ValueError("lb period must be >= 1")
    g = TeamedPlaceGroup.world()
    _initial_ranges(cfg.agents, g.size)
    agents = DistCol(g)
    orders = DistBag(g)
    markets = CachableArray([Market(i) for i in range(N_MARKETS)], g, owner=place(0))
    contracted = DistMultiMap(g)
    trace = PlaceLocal(_new_trace, g)
    g.broadcast_flat(_market_place, agents, orders, markets, contracted, trace, cfg)
    traces = [at(p, _read_trace, trace) for p in g.members]
    rows = sorted(r for t in traces for r in t.rows)
    per_iter: dict[int, float] = {}
    for it, _p, ms, _h in rows:
        per_iter[it] = max(per_iter.get(it, 0.0), ms)
    states = [s for t in traces for s in t.states]
    executed = sum(s[4] for s in states)
    return {
        "rows": [list(r) for r in rows],
        "header": CSV_HEADER,
        "total_sim_ms": sum(per_iter.values()),
        "per_iter_ms": [per_iter[i] for i in sorted(per_iter)],
        "hash": state_hash(states),
        "agents": len(states),
        "updates_generated": traces[0].updates_generated,
        "updates_executed": executed,
        "moves": sorted(m for t in traces for m in t.moves),
        "prices": [p[0] for p in at(place(0), _read_markets, markets)],
    }
