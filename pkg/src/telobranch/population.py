"""Simulation of the branching population and Monte Carlo estimates of its mean semigroup.

Replicates are simulated generation by generation.  Every cell draws from a
random stream keyed by (seed, replicate, genealogical label), so a cell's
division time and daughters are the same whatever order cells are processed
in; the result equals an event-driven simulation with the same streams.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import math

import numpy as np

from . import streams
from .errors import EstimationError
from .model import Alive, check_telomeres, divide

DEFAULT_CHUNK = 2000
EARLY_STOP_FACTOR = 4


@dataclass(eq=False)
class CellTable:
    """Flat arrays describing every cell created in a batch of replicates."""

    k: int
    horizon: float
    rep: np.ndarray
    parent: np.ndarray  # global index of parent, -1 for roots
    slot: np.ndarray  # 0 for roots, 1 or 2 for daughters
    x: np.ndarray  # (n, 2k)
    birth: np.ndarray
    age0: np.ndarray
    end: np.ndarray  # division time, inf when the cell outlives the horizon
    capped: np.ndarray  # per replicate
    divisions: dict = field(default_factory=dict)  # per dividing cell: bits, J, M, alive flags

    @property
    def n_replicates(self):
        return len(self.capped)

    def alive_mask(self, t=None):
        t = self.horizon if t is None else t
        return (self.birth <= t) & (self.end > t)

    def ages(self, t=None):
        t = self.horizon if t is None else t
        return t - self.birth + self.age0

    def per_replicate_sum(self, values, t=None):
        mask = self.alive_mask(t)
        return np.bincount(self.rep[mask], weights=np.asarray(values)[mask], minlength=self.n_replicates)

    def counts_at(self, times):
        """Alive count of every replicate at each time, shape (n_replicates, len(times))."""
        times = np.asarray(times, dtype=float)
        out = np.empty((self.n_replicates, len(times)))
        for j, t in enumerate(times):
            mask = self.alive_mask(t)
            out[:, j] = np.bincount(self.rep[mask], minlength=self.n_replicates)
        return out

    def labels(self):
        """Ulam-Harris labels as strings ("1", "1.2", "1.2.1", ...)."""
        out = np.empty(len(self.rep), dtype=object)
        for i in range(len(self.rep)):
            p = self.parent[i]
            out[i] = "1" if p < 0 else f"{out[p]}.{self.slot[i]}"
        return out


def _next_generation_keys(keys):
    return streams.child_keys(keys, 1), streams.child_keys(keys, 2)


def simulate_population(model, init, horizon, n_replicates, seed, cap=10**6, record=False, first_replicate=0):
    """Simulate ``n_replicates`` trees from ``init`` up to ``horizon``; returns a :class:`CellTable`.

    A replicate whose alive count exceeds ``cap`` at any time is flagged.  The
    simulation of a replicate stops early (and is flagged) once one generation
    holds more than ``EARLY_STOP_FACTOR * cap`` cells.
    """
    if not isinstance(init, Alive):
        raise ValueError("initial state must be Alive")
    if cap < 1 or not horizon >= 0 or not math.isfinite(horizon):
        raise ValueError("cap must be >= 1 and horizon finite and nonnegative")
    k = model.k
    x0 = check_telomeres(init.x, k)
    reps = np.arange(n_replicates)
    keys = streams.root_keys(seed, reps + first_replicate)
    gen = {
        "rep": reps,
        "key": keys,
        "x": np.broadcast_to(x0, (n_replicates, 2 * k)).copy(),
        "birth": np.zeros(n_replicates),
        "age0": np.full(n_replicates, float(init.age)),
        "parent": np.full(n_replicates, -1),
        "slot": np.zeros(n_replicates, dtype=np.int8),
    }
    parts = []
    div_parts = []
    offset = 0
    stopped = np.zeros(n_replicates, dtype=bool)
    while len(gen["rep"]):
        n = len(gen["rep"])
        u_time = streams.uniforms(gen["key"], 0, 1)[:, 0]
        wait = model.birth.waiting_time(gen["age0"], u_time)
        end = gen["birth"] + wait
        divides = end <= horizon
        end = np.where(divides, end, np.inf)
        parts.append({**{name: gen[name] for name in ("rep", "x", "birth", "age0", "parent", "slot")}, "end": end})
        idx = np.flatnonzero(divides)
        if not len(idx):
            break
        keys_div = gen["key"][idx]
        u = streams.uniforms(keys_div, 1, model.n_division_draws)
        batch = divide(model, gen["x"][idx], u)
        if record:
            div_parts.append({
                "cell": offset + idx,
                "time": end[idx],
                "bits": batch.bits,
                "J": batch.lengthen_set_a,
                "M": batch.lengthen_set_b,
                "alive_a": batch.alive_a,
                "alive_b": batch.alive_b,
            }
            )
        key_a, key_b = _next_generation_keys(keys_div)
        parents = offset + idx
        offset += n
        keep_a, keep_b = batch.alive_a, batch.alive_b
        nxt = {
            "rep": np.concatenate([gen["rep"][idx][keep_a], gen["rep"][idx][keep_b]]),
            "key": np.concatenate([key_a[keep_a], key_b[keep_b]]),
            "x": np.concatenate([batch.daughter_a[keep_a], batch.daughter_b[keep_b]]),
            "birth": np.concatenate([end[idx][keep_a], end[idx][keep_b]]),
            "parent": np.concatenate([parents[keep_a], parents[keep_b]]),
            "slot": np.concatenate([np.full(keep_a.sum(), 1, np.int8), np.full(keep_b.sum(), 2, np.int8)]),
        }
        nxt["age0"] = np.zeros(len(nxt["rep"]))
        sizes = np.bincount(nxt["rep"], minlength=n_replicates)
        over = sizes > EARLY_STOP_FACTOR * cap
        if over.any():
            stopped |= over
            keep = ~over[nxt["rep"]]
            nxt = {name: value[keep] for name, value in nxt.items()}
        gen = nxt
    table = {name: np.concatenate([p[name] for p in parts]) for name in parts[0]}
    capped = stopped | (_max_alive(table["rep"], table["birth"], table["end"], n_replicates) > cap)
    divisions = {}
    if record and div_parts:
        divisions = {name: np.concatenate([p[name] for p in div_parts]) for name in div_parts[0]}
    return CellTable(
        k=k, horizon=float(horizon), rep=table["rep"], parent=table["parent"], slot=table["slot"], x=table["x"],
        birth=table["birth"], age0=table["age0"], end=table["end"], capped=capped, divisions=divisions,
    )


def _max_alive(rep, birth, end, n_replicates):
    """Largest simultaneous alive count per replicate, from +1/-1 birth/death events."""
    finite = np.isfinite(end)
    times = np.concatenate([birth, end[finite]])
    steps = np.concatenate([np.ones(len(birth)), -np.ones(finite.sum())])
    owner = np.concatenate([rep, rep[finite]])
    # deaths before births at equal times: a dividing parent leaves as its daughters arrive
    order = np.lexsort((steps, times, owner))
    owner, steps = owner[order], steps[order]
    running = np.cumsum(steps)
    starts = np.searchsorted(owner, np.arange(n_replicates))
    base = np.where(starts > 0, running[np.maximum(starts - 1, 0)], 0.0)
    base[starts == 0] = 0.0
    out = np.zeros(n_replicates)
    np.maximum.at(out, owner, running - base[owner])
    return out


# ------------------------------------------------------------ single trees


@dataclass(frozen=True)
class PopulationEvent:
    time: float
    parent: str
    kind: str  # "division" or "senescence:<daughter>"
    I: tuple = ()
    J: tuple = ()
    M: tuple = ()


@dataclass(eq=False)
class SimulationResult:
    alive: list  # (label, x, age)
    events: list
    divisions: int
    senescent_daughters: int
    capped: bool

    @property
    def total_created(self):
        return 1 + 2 * self.divisions

    def accounting_holds(self):
        return len(self.alive) + self.senescent_daughters + self.divisions == self.total_created


def _index_tuple(mask):
    return tuple(int(i) + 1 for i in np.flatnonzero(mask))


def simulate_tree(model, init, horizon, seed, replicate=0, cap=10**6):
    """One replicate tree with its full event log."""
    table = simulate_population(model, init, horizon, 1, seed, cap=cap, record=True, first_replicate=replicate)
    labels = table.labels()
    k = model.k
    alive_idx = np.flatnonzero(table.alive_mask())
    ages = table.ages()
    alive = [(labels[i], table.x[i].copy(), float(ages[i])) for i in alive_idx]
    events = []
    d = table.divisions
    n_div = len(d.get("cell", ()))
    senescent = 0
    for j in range(n_div):
        parent = labels[d["cell"][j]]
        bits = d["bits"][j]
        short_a = np.concatenate([~bits, bits])
        events.append(PopulationEvent(
            float(d["time"][j]), parent, "division",
            _index_tuple(short_a), _index_tuple(d["J"][j]), _index_tuple(d["M"][j]),
        ))
        for slot, flag in ((1, d["alive_a"][j]), (2, d["alive_b"][j])):
            if not flag:
                senescent += 1
                events.append(PopulationEvent(float(d["time"][j]), parent, f"senescence:{slot}"))
    events.sort(key=lambda e: (e.time, e.parent, e.kind))
    return SimulationResult(alive, events, n_div, senescent, bool(table.capped[0]))


# -------------------------------------------------------------- estimation


def _chunks(n, size):
    return [(start, min(size, n - start)) for start in range(0, n, size)]


def replicate_sums(model, init, horizon, n_replicates, seed, f=None, times=None, cap=10**6, threads=1, chunk=DEFAULT_CHUNK):
    """Per-replicate sums over alive cells, plus capped flags.

    With ``f`` given, returns sums of ``f(x, age)`` at ``horizon``; with
    ``times`` given, alive counts at each time.  Replicates are simulated in
    chunks whose results are concatenated in replicate order.
    """

    def work(part):
        start, size = part
        table = simulate_population(model, init, horizon, size, seed, cap=cap, first_replicate=start)
        if times is not None:
            return table.counts_at(times), table.capped
        values = np.ones(len(table.rep)) if f is None else np.asarray(f(table.x, table.ages()), dtype=float)
        return table.per_replicate_sum(values), table.capped

    parts = _chunks(n_replicates, chunk)
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, parts))
    else:
        results = [work(p) for p in parts]
    sums = np.concatenate([r[0] for r in results])
    capped = np.concatenate([r[1] for r in results])
    return sums, capped


@dataclass(frozen=True)
class MonteCarloEstimate:
    mean: float
    stderr: float
    n_valid: int
    n_capped: int


def _summarize(values):
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def estimate_M_t(model, init, f, t, n_replicates, seed, cap=10**6, threads=1):
    """Mean over replicates of the sum of ``f(x, age)`` over the alive population at time ``t``.

    ``f`` takes an (n, 2k) trait array and an (n,) age array.  Capped replicates
    are excluded and counted.
    """
    sums, capped = replicate_sums(model, init, t, n_replicates, seed, f=f, cap=cap, threads=threads)
    valid = sums[~capped]
    if not len(valid):
        raise EstimationError("every replicate exceeded the population cap")
    mean, se = _summarize(valid)
    return MonteCarloEstimate(mean, se if len(valid) > 1 else 0.0, int(len(valid)), int(capped.sum()))


def mean_counts(model, init, t_grid, n_replicates, seed, cap=10**6, threads=1):
    """Estimated mean alive count at each time of ``t_grid`` (rows: t, mean, stderr, n_valid)."""
    t_grid = np.asarray(t_grid, dtype=float)
    counts, capped = replicate_sums(model, init, float(t_grid[-1]), n_replicates, seed, times=t_grid, cap=cap, threads=threads)
    valid = counts[~capped]
    if not len(valid):
        raise EstimationError("every replicate exceeded the population cap")
    se = valid.std(axis=0, ddof=1) / math.sqrt(len(valid)) if len(valid) > 1 else np.zeros(len(t_grid))
    return valid, np.column_stack([t_grid, valid.mean(axis=0), se, np.full(len(t_grid), len(valid))])


@dataclass(frozen=True)
class GrowthRateEstimate:
    rate: float
    ci_low: float
    ci_high: float
    table: np.ndarray  # rows: t, mean, stderr, n_valid
    n_capped: int


def _ols_slope(t, y):
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def estimate_growth_rate(model, init, t_grid, n_replicates, seed, burn_in=None, cap=10**6, threads=1, n_boot=200):
    """Least-squares slope of the log mean population over the tail of ``t_grid``.

    The confidence interval is a percentile bootstrap over replicates.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be increasing")
    burn_in = t_grid[len(t_grid) // 2] if burn_in is None else burn_in
    tail = t_grid >= burn_in
    if tail.sum() < 4:
        raise ValueError("t_grid needs at least 4 points past burn-in")
    valid, table = mean_counts(model, init, t_grid, n_replicates, seed, cap=cap, threads=threads)
    means = table[tail, 1]
    if np.any(means <= 0):
        raise EstimationError("nonpositive mean population on the fitting window")
    rate = _ols_slope(t_grid[tail], np.log(means))
    rng = streams.generator(seed, 0xB007)
    boot = []
    for _ in range(n_boot):
        sample = valid[rng.integers(0, len(valid), len(valid))][:, tail].mean(axis=0)
        if np.all(sample > 0):
            boot.append(_ols_slope(t_grid[tail], np.log(sample)))
    lo, hi = (np.percentile(boot, [2.5, 97.5]) if boot else (math.nan, math.nan))
    n_capped = int(n_replicates - len(valid))
    return GrowthRateEstimate(rate, float(lo), float(hi), table, n_capped)


# ---------------------------------------------------------------- writers


def write_events_csv(path, result):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "parent", "kind", "I", "J", "M"])
        for e in result.events:
            writer.writerow([repr(e.time), e.parent, e.kind, " ".join(map(str, e.I)), " ".join(map(str, e.J)), " ".join(map(str, e.M))])


def write_alive_csv(path, result, k):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x_{i + 1}" for i in range(2 * k)] + ["age"])
        for label, x, age in result.alive:
            writer.writerow([label] + [repr(float(v)) for v in x] + [repr(age)])


def write_estimates_csv(path, table):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mean", "stderr", "n_valid"])
        for t, mean, se, n in table:
            writer.writerow([repr(float(t)), repr(float(mean)), repr(float(se)), int(n)])
