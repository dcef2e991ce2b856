"""Per-sensor mode estimation, BS-side assembly, curvature damage diagnosis.

Each node runs an averaged periodogram over its round window, picks spectral
peaks inside the analysis band and reports (frequency, amplitude, sign)
triples; the sign is the cross-spectrum phase against its reference neighbor
(lowest-id node it can hear). The base station clusters the reported
frequencies, chains the pairwise signs into a globally consistent mode
vector, normalizes to unit maximum amplitude, and compares mode-shape
curvature against a fault-free baseline to localize damage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import csd, welch


class ModalError(ValueError):
    """Raised on malformed mode estimates or assembly preconditions."""


@dataclass
class ModalConfig:
    segment_length: int = 256  # Welch segment (c_r); 50% overlap
    band: tuple = (0.0, math.inf)  # analysis band in Hz
    exclude_bands: tuple = ()  # e.g. around a known forcing line
    peak_snr: float = 8.0  # peak height over the in-band median floor
    max_modes: int = 3
    damage_threshold_sigmas: float = 3.0
    frequency_tolerance_hz: float | None = None  # default: 2 FFT bins at assembly


@dataclass
class LocalModeEstimate:
    """One node's identified peaks for one round; empty when nothing clears the floor."""

    sensor_id: int
    round_index: int
    frequencies: np.ndarray
    amplitudes: np.ndarray  # signed: cross-spectrum phase vs the reference node
    reference_id: int  # node the signs are relative to (itself if none)

    @property
    def is_empty(self) -> bool:
        return self.frequencies.size == 0


def extract_local_modes(
    windows,
    config: ModalConfig,
    reference=None,
    reference_id: int | None = None,
) -> LocalModeEstimate:
    """Peak-pick the averaged periodogram of one node's round.

    ``windows`` is a SignalWindow or list of them (concatenated in order).
    ``reference`` supplies the reference node's synchronized samples for the
    sign convention; without it all signs are positive and the estimate is
    its own reference.
    """
    if not isinstance(windows, (list, tuple)):
        windows = [windows]
    if not windows or any(w is None for w in windows):
        raise ModalError("extract_local_modes needs delivered windows")
    samples = np.concatenate([np.asarray(w.samples, dtype=float) for w in windows])
    sensor_id = windows[0].sensor_id
    round_index = windows[0].round_index
    dt = windows[0].dt
    fs = 1.0 / dt
    empty = LocalModeEstimate(
        sensor_id=sensor_id,
        round_index=round_index,
        frequencies=np.empty(0),
        amplitudes=np.empty(0),
        reference_id=sensor_id if reference_id is None else reference_id,
    )
    # flat signals (stuck sensors) have no spectral peaks at all
    if float(np.std(samples)) <= 1e-12 * max(1.0, float(np.max(np.abs(samples)))):
        return empty
    nperseg = min(config.segment_length, samples.size)
    freqs, psd = welch(samples, fs=fs, nperseg=nperseg)
    in_band = (freqs >= config.band[0]) & (freqs <= config.band[1])
    for lo, hi in config.exclude_bands:
        in_band &= ~((freqs >= lo) & (freqs <= hi))
    if not in_band.any():
        raise ModalError("analysis band is empty at this resolution")
    floor = float(np.median(psd[in_band]))
    if floor <= 0.0:
        return empty
    # greedy peak picking: strongest in-band bins, at least 2 bins apart,
    # above the noise floor (band-edge peaks are legitimate)
    band_idx = np.where(in_band)[0]
    order = band_idx[np.argsort(psd[band_idx])[::-1]]
    sel = []
    for idx in order:
        if psd[idx] < config.peak_snr * floor:
            break
        if all(abs(idx - s) >= 2 for s in sel):
            sel.append(int(idx))
        if len(sel) == config.max_modes:
            break
    if not sel:
        return empty
    sel = np.sort(np.asarray(sel))
    if reference is not None:
        ref_samples = np.concatenate(
            [np.asarray(w.samples, dtype=float) for w in (reference if isinstance(reference, (list, tuple)) else [reference])]
        )
        _, cross = csd(samples, ref_samples, fs=fs, nperseg=nperseg)
        signs = np.where(np.real(cross[sel]) >= 0.0, 1.0, -1.0)
    else:
        signs = np.ones(sel.size)
    return LocalModeEstimate(
        sensor_id=sensor_id,
        round_index=round_index,
        frequencies=freqs[sel],
        amplitudes=signs * np.sqrt(psd[sel]),
        reference_id=sensor_id if reference_id is None else reference_id,
    )


@dataclass
class GlobalModeShape:
    """Assembled mode vectors over all sensor locations, unit-max normalized.

    ``vectors[:, k]`` is mode k (NaN at missing locations, flagged in
    ``missing``); ``frequencies[k]`` is the cluster mean frequency.
    """

    frequencies: np.ndarray  # (p,)
    vectors: np.ndarray  # (n_locations, p)
    missing: np.ndarray  # (n_locations, p) bool
    round_index: int
    diagnostics: list = field(default_factory=list)

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    def mode(self, k: int) -> np.ndarray:
        return self.vectors[:, k]

    def nearest_mode(self, frequency: float) -> int:
        return int(np.argmin(np.abs(self.frequencies - frequency)))


def normalize_mode(vector: np.ndarray) -> np.ndarray:
    """Scale to unit maximum amplitude; idempotent. NaNs pass through."""
    finite = np.isfinite(vector)
    if not finite.any():
        raise ModalError("mode vector has no finite entries")
    peak = float(np.max(np.abs(vector[finite])))
    if peak == 0.0:
        raise ModalError("mode vector is identically zero")
    return vector / peak


def resolve_global_signs(estimates: dict) -> dict:
    """Chain per-node relative signs into global ones.

    ``estimates[node]`` must expose ``reference_id``; a node whose reference
    is itself anchors its chain at +1. Returns node -> +/-1 multiplier for
    that node's amplitudes.
    """
    resolved = {}

    def resolve(node, trail=()):
        if node in resolved:
            return resolved[node]
        ref = estimates[node].reference_id
        if ref == node or ref not in estimates or ref in trail:
            resolved[node] = 1.0
        else:
            resolved[node] = resolve(ref, trail + (node,))
        return resolved[node]

    for node in sorted(estimates):
        resolve(node)
    return resolved


def assemble_global(
    estimates,
    tolerance_hz: float | None = None,
    n_locations: int | None = None,
    round_index: int = 0,
) -> GlobalModeShape:
    """Cluster per-node frequencies and assemble normalized mode vectors.

    Nodes reporting within ``tolerance_hz`` of a cluster's running mean join
    that cluster; a cluster must cover more than half of the reporting nodes
    to become a mode (others are dropped with a diagnostic). Locations with
    no report in a cluster are NaN and flagged, never zero-filled.
    """
    estimates = list(estimates)
    if len(estimates) < 2:
        raise ModalError("assembly needs at least two estimates")
    by_node = {e.sensor_id: e for e in estimates}
    if n_locations is None:
        n_locations = max(by_node) + 1
    reporting = [e for e in estimates if not e.is_empty]
    diagnostics = []
    if not reporting:
        raise ModalError("no node reported any mode")
    sign_fix = resolve_global_signs(by_node)
    if tolerance_hz is None:
        tolerance_hz = 2.0 * _implied_bin_width(reporting)
    entries = []  # (frequency, node, signed amplitude)
    for e in reporting:
        for f, a in zip(e.frequencies, e.amplitudes):
            entries.append((float(f), e.sensor_id, float(a) * sign_fix[e.sensor_id]))
    entries.sort()
    clusters = []
    for f, node, amp in entries:
        if clusters and f - np.mean([x[0] for x in clusters[-1]]) <= tolerance_hz:
            clusters[-1].append((f, node, amp))
        else:
            clusters.append([(f, node, amp)])
    quorum = len(reporting) / 2.0
    freqs, columns, missing_cols = [], [], []
    for cluster in clusters:
        nodes = {}
        for f, node, amp in cluster:
            if node not in nodes or abs(amp) > abs(nodes[node][1]):
                nodes[node] = (f, amp)
        if len(nodes) <= quorum:
            diagnostics.append(
                f"cluster at {np.mean([c[0] for c in cluster]):.3f} Hz covers "
                f"{len(nodes)}/{len(reporting)} reporting nodes; below quorum, omitted"
            )
            continue
        vec = np.full(n_locations, np.nan)
        for node, (f, amp) in nodes.items():
            vec[node] = amp
        freqs.append(float(np.mean([f for f, _ in nodes.values()])))
        columns.append(normalize_mode(vec))
        missing_cols.append(~np.isfinite(vec))
    if not columns:
        raise ModalError("no frequency cluster reached quorum; " + "; ".join(diagnostics))
    order = np.argsort(freqs)
    return GlobalModeShape(
        frequencies=np.asarray(freqs)[order],
        vectors=np.column_stack(columns)[:, order],
        missing=np.column_stack(missing_cols)[:, order],
        round_index=round_index,
        diagnostics=diagnostics,
    )


def _implied_bin_width(reporting) -> float:
    freqs = np.concatenate([e.frequencies for e in reporting])
    diffs = np.diff(np.unique(np.round(freqs, 9)))
    return float(diffs.min()) if diffs.size else 0.1


def curvature(mode_vector: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Second spatial difference (phi[i-1] - 2 phi[i] + phi[i+1]) / h^2.

    Endpoints use the one-sided stencil of their nearest interior point.
    Entries whose stencil touches a missing (NaN) location come out NaN.
    Accepts a GlobalModeShape (first mode) or a plain vector.
    """
    if isinstance(mode_vector, GlobalModeShape):
        mode_vector = mode_vector.mode(0)
    v = np.asarray(mode_vector, dtype=float)
    if v.size < 3:
        raise ModalError("curvature needs at least 3 locations")
    run = best = 0
    for ok in np.isfinite(v):
        run = run + 1 if ok else 0
        best = max(best, run)
    if best < 3:
        raise ModalError("curvature needs at least 3 consecutive non-missing locations")
    h2 = spacing**2
    out = np.full(v.size, np.nan)
    out[1:-1] = (v[:-2] - 2.0 * v[1:-1] + v[2:]) / h2
    out[0] = (v[0] - 2.0 * v[1] + v[2]) / h2
    out[-1] = (v[-3] - 2.0 * v[-2] + v[-1]) / h2
    return out


def modal_assurance(a: np.ndarray, b: np.ndarray) -> float:
    """Modal Assurance Criterion between two mode vectors (NaNs excluded)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ok = np.isfinite(a) & np.isfinite(b)
    if ok.sum() < 2:
        raise ModalError("too few shared locations for MAC")
    num = float(a[ok] @ b[ok]) ** 2
    den = float(a[ok] @ a[ok]) * float(b[ok] @ b[ok])
    return num / den


@dataclass
class CurvatureBaseline:
    """Fault-free reference: mean curvature and its per-location round-to-round std."""

    mean: np.ndarray
    std: np.ndarray
    frequency: float

    @classmethod
    def from_rounds(cls, curvatures, frequency: float) -> "CurvatureBaseline":
        stack = np.vstack(curvatures)
        if stack.shape[0] < 2:
            raise ModalError("baseline needs at least two fault-free rounds")
        return cls(
            mean=np.nanmean(stack, axis=0),
            std=np.nanstd(stack, axis=0, ddof=1),
            frequency=frequency,
        )


@dataclass
class DamageDiagnosis:
    damage_locations: list  # peak location of each multi-node deviation cluster
    fault_only_locations: list  # single-location deviations (sensor artifacts)
    deviations: np.ndarray
    threshold: np.ndarray
    unscored: np.ndarray  # locations whose curvature could not be evaluated


def diagnose(
    current: GlobalModeShape,
    baseline: CurvatureBaseline,
    fault_verdicts: dict | None = None,
    config: ModalConfig | None = None,
    spacing: float = 1.0,
) -> DamageDiagnosis:
    """Classify curvature deviations into damage vs sensor-fault artifacts.

    A deviation beyond ``damage_threshold_sigmas`` times the baseline
    round-to-round std at a single location is a sensor artifact; a
    contiguous deviation spanning two or more locations is damage, reported
    at the cluster's peak deviation.
    """
    if baseline is None:
        raise ModalError("diagnose requires a trained baseline")
    config = config or ModalConfig()
    k = current.nearest_mode(baseline.frequency)
    curv = curvature(current.mode(k), spacing=spacing)
    dev = np.abs(curv - baseline.mean)
    # per-location std floored at the network median: a handful of training
    # rounds underestimates sigma at individual locations
    floor = np.nanmedian(baseline.std)
    sigma = np.where(np.isfinite(baseline.std), np.maximum(baseline.std, floor), floor)
    threshold = config.damage_threshold_sigmas * sigma
    scored = np.isfinite(dev)
    exceed = scored & (dev > threshold)
    clusters = []
    run = []
    for i in range(dev.size):
        if exceed[i]:
            run.append(i)
        elif run:
            clusters.append(run)
            run = []
    if run:
        clusters.append(run)
    damage, fault_only = [], []
    n = dev.size
    for cluster in clusters:
        # endpoint curvature duplicates its neighbor's one-sided stencil, so it
        # cannot count as an independent second location
        stencil_centers = {min(max(i, 1), n - 2) for i in cluster}
        if len(stencil_centers) >= 2:
            peak = cluster[int(np.argmax(dev[cluster]))]
            damage.append(int(peak))
        else:
            # isolated deviation: sensor artifact (fault_verdicts says which are
            # confirmed by MII; unexplained singletons are still never damage)
            fault_only.append(int(cluster[int(np.argmax(dev[cluster]))]))
    return DamageDiagnosis(
        damage_locations=damage,
        fault_only_locations=fault_only,
        deviations=dev,
        threshold=threshold,
        unscored=~scored,
    )


@dataclass
class DependabilityReport:
    """Confusion counts for sensor-fault and damage verdicts, round by round."""

    rows: list = field(default_factory=list)

    def add_round(
        self,
        round_index: int,
        fault_counts: tuple,
        damage_counts: tuple,
    ):
        ftp, ffp, ffn, ftn = fault_counts
        dtp, dfp, dfn, dtn = damage_counts
        self.rows.append(
            {
                "round": round_index,
                "fault_tp": ftp, "fault_fp": ffp, "fault_fn": ffn, "fault_tn": ftn,
                "damage_tp": dtp, "damage_fp": dfp, "damage_fn": dfn, "damage_tn": dtn,
            }
        )

    @staticmethod
    def _rates(tp, fp, fn, tn):
        pos = tp + fn
        neg = fp + tn
        fpr = fp / neg if neg else 0.0
        fnr = fn / pos if pos else 0.0
        return fpr, fnr

    def detection_accuracy(self) -> float:
        tp = sum(r["fault_tp"] for r in self.rows)
        fp = sum(r["fault_fp"] for r in self.rows)
        fn = sum(r["fault_fn"] for r in self.rows)
        tn = sum(r["fault_tn"] for r in self.rows)
        all_counts = tp + fp + fn + tn
        return (tp + tn) / all_counts if all_counts else 1.0

    def event_detection_ability(self) -> float:
        """1 - (false positive rate + false negative rate), clamped to [0, 1]."""
        tp = sum(r["damage_tp"] for r in self.rows)
        fp = sum(r["damage_fp"] for r in self.rows)
        fn = sum(r["damage_fn"] for r in self.rows)
        tn = sum(r["damage_tn"] for r in self.rows)
        fpr, fnr = self._rates(tp, fp, fn, tn)
        return max(0.0, min(1.0, 1.0 - (fpr + fnr)))
