"""Mutual-information-independence fault detection.

A reference correlation model holds, for every channel pair used in
monitoring, fixed histogram bin edges (from fault-free data ranges) and a
reference binned mutual information. At run time each node evaluates the
relative MI change against every neighbor,

    lambda = |omega_actual - omega_ref| / omega_actual,

aggregates per-pair indicators by median and declares itself faulty above
the decision threshold. MI is reported in nats.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

LAMBDA_MAX = 10.0  # sentinel indicator for degenerate (near-zero MI) pairs
_OMEGA_EPS = 1e-9


class DetectionError(ValueError):
    """Raised on contract violations in the detection pipeline."""


class DegenerateSignalWarning(UserWarning):
    """Signal variance or MI too small for a meaningful statistic."""


class UnreliableEstimateWarning(UserWarning):
    """Fewer samples than bins^2 / 10; the MI estimate is kept but noisy."""


def _samples(x) -> np.ndarray:
    if hasattr(x, "samples"):
        return np.asarray(x.samples, dtype=float)
    return np.asarray(x, dtype=float)


def _bin_indices(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index per sample; out-of-range values clamp into the edge bins."""
    idx = np.searchsorted(edges, x, side="right") - 1
    return np.clip(idx, 0, edges.size - 2)


def _joint_histogram(a, edges_u, b, edges_v) -> np.ndarray:
    """Joint bin counts in a canonical argument order.

    The arguments are swapped when the second bin-index stream sorts lower,
    so omega(u, v) and omega(v, u) run the identical float operations and the
    symmetry contract holds bit-exactly.
    """
    iu = _bin_indices(a, edges_u)
    iv = _bin_indices(b, edges_v)
    nu, nv = edges_u.size - 1, edges_v.size - 1
    differs = iu != iv
    if differs.any() and iu[int(np.argmax(differs))] > iv[int(np.argmax(differs))]:
        iu, iv, nu, nv = iv, iu, nv, nu
    return np.bincount(iu * nv + iv, minlength=nu * nv).astype(float).reshape(nu, nv)


def correlation_coefficient(u, v) -> float:
    """Pearson correlation in [-1, 1]; 0 (with a warning) for flat signals."""
    a, b = _samples(u), _samples(v)
    if a.size != b.size:
        raise DetectionError(f"window length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise DetectionError("need at least 2 samples")
    da, db = a - a.mean(), b - b.mean()
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
    var_a, var_b = float(da @ da) / a.size, float(db @ db) / b.size
    if var_a < 1e-12 * scale**2 or var_b < 1e-12 * scale**2:
        warnings.warn("zero-variance window in correlation", DegenerateSignalWarning)
        return 0.0
    rho = float((da @ db) / (a.size * np.sqrt(var_a * var_b)))
    return min(1.0, max(-1.0, rho))


def mutual_information_binned(u, v, edges) -> float:
    """Binned MI (nats) of two windows over fixed per-channel bin edges.

    ``edges`` is a pair (edges_u, edges_v). Samples outside the reference
    range clamp into the edge bins. Empty cells are skipped; the summation
    order is canonical so that the result is exactly symmetric in (u, v).
    """
    a, b = _samples(u), _samples(v)
    if a.size != b.size:
        raise DetectionError(f"window length mismatch: {a.size} vs {b.size}")
    edges_u, edges_v = (np.asarray(e, dtype=float) for e in edges)
    n_cells = (edges_u.size - 1) * (edges_v.size - 1)
    if a.size < n_cells / 10:
        warnings.warn(
            f"{a.size} samples for {n_cells} histogram cells; MI estimate is unreliable",
            UnreliableEstimateWarning,
        )
    hist = _joint_histogram(a, edges_u, b, edges_v)
    joint = hist / hist.sum()
    pu = joint.sum(axis=1)
    pv = joint.sum(axis=0)
    nz = joint > 0
    terms = joint[nz] * np.log(joint[nz] / np.outer(pu, pv)[nz])
    # sorted summation makes omega(u, v) == omega(v, u) bit-exact
    return max(float(np.sum(np.sort(terms))), 0.0)


def default_edges(reference: np.ndarray, bins: int) -> np.ndarray:
    """Bin edges spanning the reference data range."""
    lo, hi = float(np.min(reference)), float(np.max(reference))
    if not hi > lo:
        hi = lo + 1.0  # degenerate channel; edges still well-formed
    return np.linspace(lo, hi, bins + 1)


def fault_indicator(omega_actual: float, omega_ref: float) -> float:
    """Relative MI change |omega_actual - omega_ref| / omega_actual.

    Near-zero actual MI returns the sentinel LAMBDA_MAX (maximal deviation).
    """
    if omega_actual < 0 or omega_ref < 0:
        raise DetectionError("MI values must be non-negative")
    if omega_actual < _OMEGA_EPS:
        warnings.warn("near-zero MI; indicator saturated", DegenerateSignalWarning)
        return LAMBDA_MAX
    return abs(omega_actual - omega_ref) / omega_actual


@dataclass
class DetectionConfig:
    bins: int = 16
    R: int = 5  # consecutive windows used for training / deviation scoring
    threshold: float = 0.5
    neighborhood_radius: float | None = None

    def __post_init__(self):
        if self.bins < 4:
            raise DetectionError("bins must be >= 4")
        if not (0.0 < self.threshold):
            raise DetectionError("threshold must be positive")
        if self.R < 1:
            raise DetectionError("R must be >= 1")


@dataclass
class CorrelationModel:
    """Reference statistics trained on fault-free rounds.

    ``edges[channel]`` holds that channel's histogram edges; ``omega_ref``
    maps the unordered pair (i, j), stored with i < j, to its reference MI.
    """

    edges: dict
    omega_ref: dict
    window_length: int
    training_rounds: int
    degenerate_channels: set = field(default_factory=set)

    @staticmethod
    def pair_key(i: int, j: int) -> tuple:
        return (i, j) if i < j else (j, i)

    def reference(self, i: int, j: int) -> float:
        return self.omega_ref[self.pair_key(i, j)]

    def pair_mi(self, window_i, window_j, i: int, j: int) -> float:
        return mutual_information_binned(window_i, window_j, (self.edges[i], self.edges[j]))


def train_correlation_model(fault_free_windows: dict, config: DetectionConfig, pairs=None) -> CorrelationModel:
    """Fit bin edges and reference MI from fault-free windows.

    ``fault_free_windows`` maps channel id to a round-ordered list of
    SignalWindow objects (all channels aligned). ``pairs`` restricts training
    to the channel pairs actually monitored; by default every unordered pair
    is trained. Channels with zero variance are flagged degenerate and their
    pairs get a zero reference.
    """
    channels = sorted(fault_free_windows)
    if len(channels) < 2:
        raise DetectionError("need at least two channels to train")
    n_rounds = min(len(fault_free_windows[ch]) for ch in channels)
    if pairs is None:
        pairs = [(i, j) for a, i in enumerate(channels) for j in channels[a + 1 :]]
    pairs = sorted({CorrelationModel.pair_key(i, j) for (i, j) in pairs})
    for (i, j) in pairs:
        have = min(len(fault_free_windows[i]), len(fault_free_windows[j]))
        if have < config.R:
            raise DetectionError(
                f"pair ({i}, {j}) has {have} training windows; need at least R={config.R}"
            )
    window_length = fault_free_windows[channels[0]][0].length
    edges = {}
    degenerate = set()
    for ch in channels:
        cat = np.concatenate([_samples(w) for w in fault_free_windows[ch][:n_rounds]])
        if float(np.std(cat)) < 1e-12 * max(1.0, float(np.max(np.abs(cat)))):
            degenerate.add(ch)
            warnings.warn(f"channel {ch} is constant in training data", DegenerateSignalWarning)
        edges[ch] = default_edges(cat, config.bins)
    omega_ref = {}
    for (i, j) in pairs:
        if i in degenerate or j in degenerate:
            omega_ref[(i, j)] = 0.0
            continue
        vals = [
            mutual_information_binned(
                fault_free_windows[i][d], fault_free_windows[j][d], (edges[i], edges[j])
            )
            for d in range(n_rounds)
        ]
        omega_ref[(i, j)] = float(np.mean(vals))
    return CorrelationModel(
        edges=edges,
        omega_ref=omega_ref,
        window_length=window_length,
        training_rounds=n_rounds,
        degenerate_channels=degenerate,
    )


def _group_pair_mean(model: CorrelationModel, left: dict, right: dict, skip_same: bool) -> float:
    total, count = 0.0, 0
    for i in sorted(left):
        for j in sorted(right):
            if skip_same and i == j:
                continue
            total += model.pair_mi(left[i], right[j], i, j)
            count += 1
    if count == 0:
        raise DetectionError("no channel pairs available for group MI")
    return total / count


def deviation_score(n_windows: dict, f_windows: dict, model: CorrelationModel, R: int) -> float:
    """Group deviation Delta over R consecutive rounds.

    Delta = sum_t meanMI(N_t, N_t) - sum_t meanMI(F_t, N_t), where the group
    MI is the mean pairwise MI across the groups' channel pairs. An empty F
    contributes nothing; the non-faulty group must contain >= 2 channels.
    This is exposed as a diagnostic, not an optimization objective.
    """
    if len(n_windows) < 2:
        raise DetectionError("non-faulty group needs at least two channels")
    for ch, wins in {**n_windows, **f_windows}.items():
        if len(wins) < R:
            raise DetectionError(f"channel {ch} has fewer than R={R} windows")
    delta = 0.0
    for t in range(R):
        n_t = {ch: n_windows[ch][t] for ch in n_windows}
        half = [(i, j) for a, i in enumerate(sorted(n_t)) for j in sorted(n_t)[a + 1 :]]
        nn = float(np.mean([model.pair_mi(n_t[i], n_t[j], i, j) for (i, j) in half]))
        delta += nn
        if f_windows:
            f_t = {ch: f_windows[ch][t] for ch in f_windows}
            delta -= _group_pair_mean(model, f_t, n_t, skip_same=True)
    return delta


VERDICTS = ("non_faulty", "faulty", "missing")


@dataclass
class NodeDecision:
    """Per-node outcome of one detection round."""

    node_id: int
    round_index: int
    lambdas: dict  # neighbor id -> per-pair indicator
    lambda_agg: float
    verdict: str

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise DetectionError(f"verdict must be one of {VERDICTS}")
        if self.lambda_agg < 0:
            raise DetectionError("aggregated lambda must be >= 0")


def decide_faulty(
    node_id: int,
    neighbor_windows: dict,
    model: CorrelationModel,
    config: DetectionConfig,
    round_index: int = 0,
    exclude: set | None = None,
) -> NodeDecision:
    """Per-node faulty/non-faulty decision from neighbor pair indicators.

    ``neighbor_windows`` maps channel id -> SignalWindow (or None when that
    channel delivered nothing) and must contain this node plus >= 1 neighbor.
    A node that delivered no window is marked faulty outright (its neighbors
    cannot see it); the missing-sensor scan refines that verdict later.
    ``exclude`` drops neighbors already deemed faulty from the aggregation,
    which is how exchanged decisions feed back into a second pass.
    """
    if node_id not in neighbor_windows:
        raise DetectionError(f"windows for node {node_id} not supplied")
    neighbors = [ch for ch in neighbor_windows if ch != node_id]
    if not neighbors:
        raise DetectionError(f"node {node_id} has no neighbors (topology violation)")
    own = neighbor_windows[node_id]
    if own is None:
        return NodeDecision(
            node_id=node_id,
            round_index=round_index,
            lambdas={},
            lambda_agg=LAMBDA_MAX,
            verdict="faulty",
        )
    lambdas = {}
    for j in sorted(neighbors):
        w_j = neighbor_windows[j]
        if w_j is None:
            continue
        omega = model.pair_mi(own, w_j, node_id, j)
        lambdas[j] = fault_indicator(omega, model.reference(node_id, j))
    if not lambdas:
        # every neighbor went silent this round: the node cannot be assessed,
        # so it keeps the initial non-faulty decision
        return NodeDecision(
            node_id=node_id,
            round_index=round_index,
            lambdas={},
            lambda_agg=0.0,
            verdict="non_faulty",
        )
    usable = {j: lam for j, lam in lambdas.items() if not exclude or j not in exclude}
    if not usable:  # all neighbors excluded; fall back to the full pair set
        usable = lambdas
    lambda_agg = float(np.median(list(usable.values())))
    verdict = "faulty" if lambda_agg > config.threshold else "non_faulty"
    return NodeDecision(
        node_id=node_id,
        round_index=round_index,
        lambdas=lambdas,
        lambda_agg=lambda_agg,
        verdict=verdict,
    )


def detection_round(
    windows: dict,
    neighbor_map: dict,
    model: CorrelationModel,
    config: DetectionConfig,
    round_index: int = 0,
) -> dict:
    """Run one distributed detection round with decision exchange.

    Every node first decides from all its neighbor pairs, then the verdicts
    are exchanged and nodes re-aggregate with faulty-flagged neighbors' pairs
    dropped. Exoneration proceeds in ascending-indicator order and repeats
    until no verdict changes: a healthy node freed of a contaminated pair in
    one sweep frees its own neighbors' pair sets in the next. Nodes are only
    ever cleared by the exchange, never re-flagged. Returns node id ->
    NodeDecision.
    """

    def group_for(node):
        group = {node: windows.get(node)}
        for j in neighbor_map[node]:
            group[j] = windows.get(j)
        return group

    decisions = {}
    for node in sorted(neighbor_map):
        decisions[node] = decide_faulty(node, group_for(node), model, config, round_index)
    flagged = {n for n, d in decisions.items() if d.verdict == "faulty"}
    order = sorted(neighbor_map, key=lambda n: (decisions[n].lambda_agg, n))
    for _ in range(len(order)):
        changed = False
        for node in order:
            if node not in flagged or windows.get(node) is None:
                continue
            dec = decide_faulty(
                node, group_for(node), model, config, round_index, exclude=flagged - {node}
            )
            if dec.verdict == "non_faulty":
                flagged.discard(node)
                decisions[node] = dec
                changed = True
        if not changed:
            break
    # re-aggregate the cleared nodes against the settled flag set
    for node in sorted(neighbor_map):
        if node not in flagged and windows.get(node) is not None:
            decisions[node] = decide_faulty(
                node, group_for(node), model, config, round_index, exclude=flagged - {node}
            )
    return decisions
