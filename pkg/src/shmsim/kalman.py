"""Kalman-filter signal reconstruction and KL-based missing-sensor detection.

The filter runs on the physical displacement/velocity state of the (sub-)
structure with the exact discrete transition from the simulator. Measured
channels are absolute accelerations, so the measurement map is the selector
composed with ``-M^-1 K`` and the filter input is zero: the unknown excitation
is absorbed by process noise shaped along the base-excitation input direction.
Channels assumed faulty get their measurement variance inflated, which makes
the filter reconstruct them from the healthy channels and the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sensing import SignalWindow
from .structure import StructureSpec, discrete_state_space


class KalmanError(ValueError):
    """Raised on dimension mismatches, singular innovations or coverage gaps."""


@dataclass
class ReconstructionConfig:
    variance_inflation: float = 1e9  # multiplier on faulty channels' noise variance
    model_scope: str = "neighborhood"  # or "full"
    scope_margin: int = 1  # extra stories kept around the neighborhood span
    input_scale_factor: float = 1.0  # process-noise input scale, x measured RMS
    scan_bins: int = 16
    scan_report_ratio: float = 0.25  # report missing iff min/median lambda below this

    def __post_init__(self):
        if self.variance_inflation < 1.0:
            raise KalmanError("variance_inflation must be >= 1")
        if self.model_scope not in ("neighborhood", "full"):
            raise KalmanError("model_scope must be 'neighborhood' or 'full'")


@dataclass
class KalmanFilterState:
    """State, covariance and the matrices of one discrete-time filter."""

    x: np.ndarray  # (2n,) displacement/velocity state
    P: np.ndarray  # (2n, 2n)
    transition: np.ndarray  # (2n, 2n)
    input_matrix: np.ndarray  # (2n, n) force input map
    measurement: np.ndarray  # (m, 2n)
    process_noise: np.ndarray  # (2n, 2n)
    measurement_noise: np.ndarray  # (m, m) diagonal, entries > 0
    gain: np.ndarray | None = None

    def __post_init__(self):
        d = np.diag(self.measurement_noise)
        if np.any(d <= 0):
            raise KalmanError("measurement noise variances must be > 0 (zero collapses the filter)")


def kf_predict(state: KalmanFilterState, u=None):
    """Prior state and covariance: x' = A x + B u, P' = A P A^T + Q."""
    a = state.transition
    x_prior = a @ state.x
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape[0] != state.input_matrix.shape[1]:
            raise KalmanError(
                f"input dimension {u.shape[0]} does not match {state.input_matrix.shape[1]}"
            )
        x_prior = x_prior + state.input_matrix @ u
    p_prior = a @ state.P @ a.T + state.process_noise
    return x_prior, p_prior


def kf_correct(state: KalmanFilterState, x_prior, p_prior, m_t) -> KalmanFilterState:
    """Measurement update; returns the state with posterior x, P and gain."""
    h = state.measurement
    m_t = np.asarray(m_t, dtype=float)
    if m_t.shape[0] != h.shape[0]:
        raise KalmanError(f"measurement dimension {m_t.shape[0]} does not match {h.shape[0]} rows")
    innov_cov = h @ p_prior @ h.T + state.measurement_noise
    try:
        gain = np.linalg.solve(innov_cov.T, (p_prior @ h.T).T).T
    except np.linalg.LinAlgError:
        gain = np.full((p_prior.shape[0], h.shape[0]), np.nan)
    if not np.all(np.isfinite(gain)):
        cond = np.linalg.cond(innov_cov)
        raise KalmanError(f"singular innovation covariance (condition number {cond:.3e})")
    x_post = x_prior + gain @ (m_t - h @ x_prior)
    p_post = (np.eye(p_prior.shape[0]) - gain @ h) @ p_prior
    p_post = 0.5 * (p_post + p_post.T)
    state.x = x_post
    state.P = p_post
    state.gain = gain
    return state


def acceleration_output(spec: StructureSpec) -> np.ndarray:
    """Output map from [x; v] to absolute accelerations: [-M^-1 K, 0]."""
    n = spec.n_dof
    out = np.zeros((n, 2 * n))
    out[:, :n] = -(spec.stiffness_matrix() / spec.masses[:, None])
    return out


def filter_for_structure(
    spec: StructureSpec,
    measured_dofs,
    noise_var,
    inflated=(),
    inflation: float = 1e9,
    input_scale: float = 1.0,
    boundary_cut: tuple = (False, False),
) -> KalmanFilterState:
    """Build a zero-input acceleration filter for the given structure.

    ``measured_dofs`` lists the DOFs with sensors (row order of the
    measurement); ``noise_var`` gives each row's healthy noise variance;
    rows whose DOF is in ``inflated`` get the variance multiplied by
    ``inflation``. ``input_scale`` sets the process-noise magnitude and
    should be of the order of the measured acceleration RMS.

    ``boundary_cut`` marks whether the (bottom, top) of ``spec`` is a cut
    through the real structure rather than a physical boundary; each cut adds
    an unknown-force direction at the cut mass so the filter can absorb the
    unmodeled neighbor-story force.
    """
    a_mat, b_mat = discrete_state_space(spec)
    out = acceleration_output(spec)
    rows = [out[d] for d in measured_dofs]
    h = np.vstack(rows)
    cv = np.diag(
        [
            float(noise_var[i]) * (inflation if d in inflated else 1.0)
            for i, d in enumerate(measured_dofs)
        ]
    )
    # unknown excitation directions, all scaled to input_scale acceleration:
    # distributed base motion plus one point force per cut boundary
    n = spec.n_dof
    patterns = [-spec.masses]
    delta1 = float(spec.eigenvalues()[0])  # cut force ~ k * x, x ~ accel / delta1
    if boundary_cut[0]:
        p = np.zeros(n)
        p[0] = spec.stiffnesses[0] / delta1  # k * x of order k * a / omega1^2
        patterns.append(p)
    if boundary_cut[1]:
        p = np.zeros(n)
        p[-1] = spec.stiffnesses[-1] / delta1
        patterns.append(p)
    q = 1e-12 * input_scale**2 * np.eye(2 * n)
    for pattern in patterns:
        direction = b_mat @ pattern
        q = q + input_scale**2 * np.outer(direction, direction)
    return KalmanFilterState(
        x=np.zeros(2 * spec.n_dof),
        P=100.0 * q,
        transition=a_mat,
        input_matrix=b_mat,
        measurement=h,
        process_noise=q,
        measurement_noise=cv,
    )


def run_filter(state: KalmanFilterState, measurements: np.ndarray, track_covariance: bool = False):
    """Filter a (rows, T) measurement block with zero input.

    Returns (estimates, innovations[, min_eigs]): estimates are the posterior
    measurement predictions H x_post per step; innovations are m_t - H x_prior.
    """
    rows, n_steps = measurements.shape
    if rows != state.measurement.shape[0]:
        raise KalmanError("measurement block row count does not match the filter")
    est = np.empty_like(measurements)
    innov = np.empty_like(measurements)
    min_eigs = [] if track_covariance else None
    h = state.measurement
    for t in range(n_steps):
        x_prior, p_prior = kf_predict(state)
        innov[:, t] = measurements[:, t] - h @ x_prior
        kf_correct(state, x_prior, p_prior, measurements[:, t])
        est[:, t] = h @ state.x
        if track_covariance:
            min_eigs.append(float(np.linalg.eigvalsh(state.P)[0]))
    if track_covariance:
        return est, innov, np.asarray(min_eigs)
    return est, innov


@dataclass
class ReconstructionResult:
    sensor_id: int
    reconstructed: SignalWindow
    residual: np.ndarray  # innovation trace at this channel
    quality: float | None = None  # correlation against ground truth, clipped to [0, 1]


def _scope_spec(structure: StructureSpec, dofs, margin: int):
    """Sub-chain covering the given DOFs plus a margin.

    Returns (sub_spec, dof_offset, boundary_cut) where boundary_cut marks
    which ends slice through the real structure.
    """
    lo = max(0, min(dofs) - margin)
    hi = min(structure.n_dof - 1, max(dofs) + margin)
    sub = StructureSpec(
        masses=structure.masses[lo : hi + 1],
        stiffnesses=structure.stiffnesses[lo : hi + 1],
        dt=structure.dt,
        duration=structure.dt * 2,
    )
    return sub, lo, (lo > 0, hi < structure.n_dof - 1)


def reconstruct_signals(
    faulty_set,
    all_windows: dict,
    structure: StructureSpec,
    round_index: int = 0,
    config: ReconstructionConfig | None = None,
    noise_var: dict | None = None,
    positions: dict | None = None,
    truth: dict | None = None,
) -> list:
    """Reconstruct faulty channels from their neighbors' signals (one round).

    ``all_windows`` maps channel id -> SignalWindow or None (missing);
    channels that delivered nothing are treated as faulty with a zero
    substitute stream. ``noise_var`` holds healthy per-channel measurement
    noise variances (bootstrapped residual variances in the harness);
    ``positions`` maps channel id -> structural DOF (identity by default).
    Returns one ReconstructionResult per faulty channel.
    """
    config = config or ReconstructionConfig()
    channels = sorted(all_windows)
    faulty = set(faulty_set) | {ch for ch in channels if all_windows[ch] is None}
    if not faulty:
        return []
    healthy = [ch for ch in channels if ch not in faulty]
    if len(faulty) >= len(healthy):
        raise KalmanError(
            f"cannot reconstruct {sorted(faulty)}: only {len(healthy)} healthy channels "
            f"({healthy}) are available for coverage"
        )
    positions = positions or {ch: ch for ch in channels}
    ref = next(w for ch, w in sorted(all_windows.items()) if w is not None)
    n_steps = ref.length
    block = np.zeros((len(channels), n_steps))
    for i, ch in enumerate(channels):
        w = all_windows[ch]
        if w is not None:
            block[i] = w.samples
    if noise_var is None:
        noise_var = {}
    healthy_rms = [float(np.sqrt(np.mean(block[channels.index(ch)] ** 2))) for ch in healthy]
    a_scale = float(np.mean(healthy_rms))
    var = {
        ch: float(noise_var.get(ch, (0.1 * a_scale) ** 2))
        for ch in channels
    }

    if config.model_scope == "full":
        scope, offset, cut = structure, 0, (False, False)
    else:
        scope, offset, cut = _scope_spec(
            structure, [positions[ch] for ch in channels], config.scope_margin
        )
    measured_dofs = [positions[ch] - offset for ch in channels]
    inflated_dofs = {positions[ch] - offset for ch in faulty}
    state = filter_for_structure(
        scope,
        measured_dofs,
        [var[ch] for ch in channels],
        inflated=inflated_dofs,
        inflation=config.variance_inflation,
        input_scale=config.input_scale_factor * a_scale,
        boundary_cut=cut,
    )
    est, innov = run_filter(state, block)
    results = []
    for ch in sorted(faulty):
        row = channels.index(ch)
        rec_window = SignalWindow(
            sensor_id=ch,
            start_time=ref.start_time,
            dt=ref.dt,
            samples=est[row],
            round_index=round_index,
        )
        quality = None
        if truth is not None and ch in truth:
            t = np.asarray(truth[ch], dtype=float)
            denom = float(np.std(est[row]) * np.std(t))
            corr = 0.0 if denom == 0 else float(np.corrcoef(est[row], t)[0, 1])
            quality = max(0.0, min(1.0, corr))
        results.append(
            ReconstructionResult(
                sensor_id=ch, reconstructed=rec_window, residual=innov[row], quality=quality
            )
        )
    return results


def kl_divergence(y, y_est, edges) -> float:
    """Symmetrized binned KL divergence in bits over shared edges.

    0.5 * sum (p - q) log2(p / q) with a 1e-12 probability floor; zero iff
    the two histograms coincide, symmetric by construction.
    """
    a = np.asarray(y.samples if hasattr(y, "samples") else y, dtype=float)
    b = np.asarray(y_est.samples if hasattr(y_est, "samples") else y_est, dtype=float)
    if a.size != b.size:
        raise KalmanError(f"window length mismatch: {a.size} vs {b.size}")
    edges = np.asarray(edges, dtype=float)
    pa = np.histogram(np.clip(a, edges[0], edges[-1]), bins=edges)[0].astype(float)
    pb = np.histogram(np.clip(b, edges[0], edges[-1]), bins=edges)[0].astype(float)
    pa /= pa.sum()
    pb /= pb.sum()
    # canonical operand order keeps the symmetrized form bit-exactly symmetric
    differs = pa != pb
    if differs.any() and pa[int(np.argmax(differs))] > pb[int(np.argmax(differs))]:
        pa, pb = pb, pa
    occupied = (pa > 0) | (pb > 0)
    pf = np.maximum(pa[occupied], 1e-12)
    qf = np.maximum(pb[occupied], 1e-12)
    return float(0.5 * np.sum((pf - qf) * np.log2(pf / qf)))


@dataclass
class MissingScanResult:
    lambdas: dict  # candidate channel -> mean KL over the remaining channels
    reported: int | None  # channel reported missing, or None
    margin: float  # min / median lambda ratio

    @property
    def best_candidate(self) -> int:
        return min(self.lambdas, key=lambda ch: (self.lambdas[ch], ch))


def missing_sensor_scan(
    node_set,
    windows: dict,
    structure: StructureSpec,
    config: ReconstructionConfig | None = None,
    noise_var: dict | None = None,
    positions: dict | None = None,
) -> MissingScanResult:
    """Locate a missing/failed sensor by leave-one-out filter agreement.

    For each candidate, the filter runs with that channel's variance inflated
    and the indicator is the mean symmetrized KL between measured and
    estimated signals over the remaining channels. The candidate whose
    exclusion gives the smallest indicator is the missing one; a report is
    issued only when the min-to-median ratio falls below the configured
    threshold, so a fault-free neighborhood stays quiet.
    """
    config = config or ReconstructionConfig()
    node_set = sorted(node_set)
    if len(node_set) < 3:
        raise KalmanError("missing-sensor scan needs at least 3 nodes")
    positions = positions or {ch: ch for ch in node_set}
    ref = next((windows[ch] for ch in node_set if windows.get(ch) is not None), None)
    if ref is None:
        raise KalmanError("no channel delivered a window")
    n_steps = ref.length
    block = np.zeros((len(node_set), n_steps))
    for i, ch in enumerate(node_set):
        w = windows.get(ch)
        if w is not None:
            block[i] = w.samples
    present = [ch for ch in node_set if windows.get(ch) is not None]
    a_scale = float(np.mean([np.sqrt(np.mean(block[node_set.index(ch)] ** 2)) for ch in present]))
    if noise_var is None:
        noise_var = {}
    var = {ch: float(noise_var.get(ch, (0.1 * a_scale) ** 2)) for ch in node_set}
    if config.model_scope == "full":
        scope, offset, cut = structure, 0, (False, False)
    else:
        scope, offset, cut = _scope_spec(
            structure, [positions[ch] for ch in node_set], config.scope_margin
        )
    measured_dofs = [positions[ch] - offset for ch in node_set]
    lambdas = {}
    for cand in node_set:
        state = filter_for_structure(
            scope,
            measured_dofs,
            [var[ch] for ch in node_set],
            inflated={positions[cand] - offset},
            inflation=config.variance_inflation,
            input_scale=config.input_scale_factor * a_scale,
            boundary_cut=cut,
        )
        est, _ = run_filter(state, block)
        kls = []
        for i, ch in enumerate(node_set):
            if ch == cand:
                continue
            lo = min(block[i].min(), est[i].min())
            hi = max(block[i].max(), est[i].max())
            if not hi > lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, config.scan_bins + 1)
            kls.append(kl_divergence(block[i], est[i], edges))
        lambdas[cand] = float(np.mean(kls))
    values = np.array([lambdas[ch] for ch in node_set])
    med = float(np.median(values))
    best = min(lambdas, key=lambda ch: (lambdas[ch], ch))
    margin = float(lambdas[best] / med) if med > 0 else 1.0
    reported = best if margin < config.scan_report_ratio else None
    return MissingScanResult(lambdas=lambdas, reported=reported, margin=margin)
