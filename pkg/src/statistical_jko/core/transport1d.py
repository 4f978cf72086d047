"""
One-dimensional optimal transport between grid densities.

Densities are discretized as atoms of mass rho[i]*h at the nodes. The
monotone rearrangement of the atoms is the exact optimum for the convex cost
(i-j)^2; the min-cost flow solver on the band graph is the independent exact
method used when the solver is set to `flow`.
"""

import heapq
import logging
from typing import List, Optional, Tuple

import numpy as np

from ..config.settings import get_settings
from ..models.grids import DensityGrid
from ..models.transport import Coupling, CouplingSolver, QuantileMethod
from .exceptions import BandInfeasible
from .grid_core import check_same_grid

logger = logging.getLogger(__name__)

SEGMENT_FLOOR = 1e-15


def _atoms(rho: DensityGrid) -> np.ndarray:
    return rho.values * rho.grid.h


def monotone_segments(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    North-west corner plan of two atom vectors via merged cumulative masses.

    b is rescaled to the total of a. Returns (source index, sink index, mass)
    for every segment of positive mass.
    """
    total_a, total_b = float(np.sum(a)), float(np.sum(b))
    b = b * (total_a / total_b)
    Fa, Fb = np.cumsum(a), np.cumsum(b)
    Fb[-1] = Fa[-1]
    breaks = np.unique(np.concatenate([[0.0], Fa, Fb]))
    lengths = np.diff(breaks)
    mids = 0.5 * (breaks[1:] + breaks[:-1])
    keep = lengths > SEGMENT_FLOOR * total_a
    mids, lengths = mids[keep], lengths[keep]
    last = a.size - 1
    i = np.minimum(np.searchsorted(Fa, mids, side="left"), last)
    j = np.minimum(np.searchsorted(Fb, mids, side="left"), last)
    return i, j, lengths


def w2_quantile(
    rho1: DensityGrid,
    rho2: DensityGrid,
    method: QuantileMethod = QuantileMethod.LINEAR,
) -> float:
    """
    Squared W2 distance via quantile functions.

    LINEAR uses piecewise-linear CDFs evaluated on a shared mesh of
    max(4J, 1000) quantile midpoints. ATOMIC integrates the step quantile
    functions of the node atoms exactly over their merged breakpoints.

    Raises:
        GridMismatch: If the densities live on different grids
    """
    check_same_grid(rho1.grid, rho2.grid)
    x = rho1.grid.nodes
    if method == QuantileMethod.ATOMIC:
        a, b = _atoms(rho1), _atoms(rho2)
        i, j, mass = monotone_segments(a / a.sum(), b / b.sum())
        return float(np.sum((x[i] - x[j]) ** 2 * mass))

    count = max(4 * rho1.grid.intervals, 1000)
    u = (np.arange(count) + 0.5) / count
    q1 = np.interp(u, _linear_cdf(rho1), x)
    q2 = np.interp(u, _linear_cdf(rho2), x)
    return float(np.mean((q1 - q2) ** 2))


def _linear_cdf(rho: DensityGrid) -> np.ndarray:
    v = rho.values
    cells = 0.5 * (v[1:] + v[:-1]) * rho.grid.h
    cdf = np.concatenate([[0.0], np.cumsum(cells)])
    return cdf / cdf[-1]


def _pack_band(size: int, band: int, i: np.ndarray, j: np.ndarray, values: np.ndarray) -> np.ndarray:
    entries = np.zeros((size, 2 * band + 1))
    np.add.at(entries, (i, j - i + band), values)
    return entries


def monotone_coupling(rho_o: DensityGrid, rho_s: DensityGrid, band: Optional[int] = None) -> Coupling:
    """
    The monotone rearrangement stored as a banded coupling.

    With band=None the smallest covering band is used.

    Raises:
        BandInfeasible: If the plan does not fit inside the requested band
    """
    check_same_grid(rho_o.grid, rho_s.grid)
    h = rho_o.grid.h
    i, j, mass = monotone_segments(_atoms(rho_o), _atoms(rho_s))
    required = int(np.max(np.abs(i - j))) if mass.size else 0
    if band is None:
        band = required
    if required > band:
        raise BandInfeasible(
            f"monotone plan needs band {required}, band is {band}", band=band, required=required
        )
    entries = _pack_band(rho_o.grid.size, band, i, j, mass / (h * h))
    return Coupling(grid=rho_o.grid, band=band, entries=entries, rho_o=rho_o, rho_s=rho_s)


def required_band(rho_o: DensityGrid, rho_s: DensityGrid) -> int:
    i, j, mass = monotone_segments(_atoms(rho_o), _atoms(rho_s))
    return int(np.max(np.abs(i - j))) if mass.size else 0


class _FlowGraph:
    """Residual graph for successive shortest augmenting paths."""

    def __init__(self, node_count: int):
        self.to: List[int] = []
        self.cap: List[float] = []
        self.cost: List[int] = []
        self.adj: List[List[int]] = [[] for _ in range(node_count)]

    def add_edge(self, u: int, v: int, capacity: float, cost: int) -> int:
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.cap.append(capacity)
        self.cost.append(cost)
        self.adj[v].append(len(self.to))
        self.to.append(u)
        self.cap.append(0.0)
        self.cost.append(-cost)
        return len(self.to) - 2


def min_cost_flow_plan(a: np.ndarray, b: np.ndarray, band: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Min-cost flow from source atoms a to sink atoms b over edges |i-j| <= band
    with integer cost (i-j)^2.

    Returns (i, j, mass) for edges carrying flow.

    Raises:
        BandInfeasible: If the supply cannot be routed inside the band
    """
    total = float(np.sum(a))
    b = b * (total / float(np.sum(b)))
    floor = SEGMENT_FLOOR * total
    sources = [int(i) for i in np.nonzero(a > floor)[0]]
    sinks = [int(j) for j in np.nonzero(b > floor)[0]]
    S, T = 0, 1
    node_of_source = {i: 2 + k for k, i in enumerate(sources)}
    node_of_sink = {j: 2 + len(sources) + k for k, j in enumerate(sinks)}
    graph = _FlowGraph(2 + len(sources) + len(sinks))

    for i in sources:
        graph.add_edge(S, node_of_source[i], float(a[i]), 0)
    for j in sinks:
        graph.add_edge(node_of_sink[j], T, float(b[j]), 0)
    transport_edges = []
    for i in sources:
        for j in range(max(0, i - band), min(a.size - 1, i + band) + 1):
            if j in node_of_sink:
                e = graph.add_edge(node_of_source[i], node_of_sink[j], float(a[i]), (i - j) ** 2)
                transport_edges.append((i, j, e))

    n_nodes = len(graph.adj)
    potential = [0.0] * n_nodes
    routed_total = sum(float(a[i]) for i in sources)
    remaining = routed_total
    tol = 1e-12 * max(total, 1.0)
    augmentations = 0
    while remaining > tol:
        dist = [float("inf")] * n_nodes
        prev_edge = [-1] * n_nodes
        dist[S] = 0.0
        heap = [(0.0, S)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for e in graph.adj[u]:
                if graph.cap[e] <= floor:
                    continue
                v = graph.to[e]
                nd = d + graph.cost[e] + potential[u] - potential[v]
                if nd < dist[v]:
                    dist[v] = nd
                    prev_edge[v] = e
                    heapq.heappush(heap, (nd, v))
        if dist[T] == float("inf"):
            raise BandInfeasible(
                f"cannot route remaining mass {remaining:.3e} inside band {band}",
                band=band, remaining=remaining,
            )
        for v in range(n_nodes):
            if dist[v] < float("inf"):
                potential[v] += dist[v]

        push = remaining
        v = T
        while v != S:
            e = prev_edge[v]
            push = min(push, graph.cap[e])
            v = graph.to[e ^ 1]
        v = T
        while v != S:
            e = prev_edge[v]
            graph.cap[e] -= push
            graph.cap[e ^ 1] += push
            v = graph.to[e ^ 1]
        remaining -= push
        augmentations += 1

    logger.debug(f"Min-cost flow finished after {augmentations} augmentations (band {band})")
    flows = [(i, j, graph.cap[e ^ 1]) for i, j, e in transport_edges if graph.cap[e ^ 1] > 0.0]
    if not flows:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(0)
    i, j, mass = (np.array(col) for col in zip(*flows))
    return i.astype(int), j.astype(int), mass.astype(float)


def _solve_band(rho_o: DensityGrid, rho_s: DensityGrid, band: int, solver: CouplingSolver) -> Coupling:
    if solver == CouplingSolver.MONOTONE:
        return monotone_coupling(rho_o, rho_s, band)
    h = rho_o.grid.h
    i, j, mass = min_cost_flow_plan(_atoms(rho_o), _atoms(rho_s), band)
    entries = _pack_band(rho_o.grid.size, band, i, j, mass / (h * h))
    return Coupling(grid=rho_o.grid, band=band, entries=entries, rho_o=rho_o, rho_s=rho_s)


def banded_coupling(
    rho_o: DensityGrid,
    rho_s: DensityGrid,
    w: int = 1,
    solver: CouplingSolver = CouplingSolver.MONOTONE,
    auto_widen: bool = True,
    marginal_tol: Optional[float] = None,
) -> Coupling:
    """
    Optimal coupling with p_ij > 0 only for |i-j| <= w.

    Args:
        rho_o: Row marginal (previous JKO iterate)
        rho_s: Column marginal (candidate)
        w: Initial band width
        solver: MONOTONE (witness, optimal when it fits) or FLOW (min-cost flow)
        auto_widen: Double w on infeasibility, up to J
        marginal_tol: Marginal check tolerance, settings.marginal_tol by default

    Returns:
        The coupling; its `band` is the width that succeeded

    Raises:
        BandInfeasible: If the band cannot be widened further
        GridMismatch: If the densities live on different grids
    """
    check_same_grid(rho_o.grid, rho_s.grid)
    marginal_tol = get_settings().marginal_tol if marginal_tol is None else marginal_tol
    J = rho_o.grid.intervals
    band = w
    while True:
        try:
            coupling = _solve_band(rho_o, rho_s, band, solver)
            break
        except BandInfeasible:
            if not auto_widen or band >= J:
                raise
            widened = min(max(2 * band, 1), J)
            logger.warning(f"Coupling infeasible in band {band}, widening to {widened}")
            band = widened

    error = coupling.marginal_error()
    if error > marginal_tol:
        logger.warning(f"Coupling marginals off by {error:.3e} (tolerance {marginal_tol:.1e})")
    return coupling


def coupling_drift(c: Coupling, j: int) -> float:
    """h * sum_i (y_j - x_i) p_ij, the transport term of alpha(y_j)."""
    return float(coupling_drift_field(c)[j])


def coupling_drift_field(c: Coupling) -> np.ndarray:
    """coupling_drift at every node."""
    h = c.grid.h
    w = c.band
    size = c.grid.size
    # entries[i, k] couples i to j = i + k - w, so y_j - x_i = (k - w) h
    offsets = np.arange(-w, w + 1, dtype=float)
    weighted = c.entries * offsets[None, :] * h * h
    drift = np.zeros(size)
    rows = np.arange(size)[:, None] + offsets[None, :].astype(int)
    valid = (rows >= 0) & (rows < size)
    np.add.at(drift, rows[valid], weighted[valid])
    return drift


def monotone_drift_values(rho_o_values: np.ndarray, rho_s_values: np.ndarray, h: float) -> Tuple[np.ndarray, int]:
    """
    coupling_drift_field of the monotone plan, straight from node values.

    Returns (drift at every node, band the plan needs).
    """
    i, j, mass = monotone_segments(rho_o_values * h, rho_s_values * h)
    drift = np.bincount(j, weights=(j - i) * h * mass, minlength=rho_o_values.size) / h
    need = int(np.max(np.abs(i - j))) if mass.size else 0
    return drift, need
