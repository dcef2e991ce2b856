"""Scenario-driven end-to-end runs, scheme comparison and plot-data export.

A scenario config (JSON-compatible dict) fully determines a run: structure,
excitation, sensors, fault/damage schedules, detection and reconstruction
settings, topology, energy constants and the monitoring plan. Every round is
one duty-cycled episode: the structure is excited afresh, sensors sample M
points, windows are exchanged, faults detected, faulty signals reconstructed,
local modes extracted and assembled at the BS, damage diagnosed and energy
charged. All randomness derives from the single scenario seed, so a re-run
produces byte-identical CSV outputs.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import detection as det
from . import kalman as kal
from . import modal as mod
from . import network as net
from . import sensing as sen
from . import structure as struct

FORMAT_VERSION = "shmsim/v1"

MODES = (
    "dependshm",
    "cshm_centralized",
    "raw_centralized",
    "no_recovery",
    "frequency_matching_baseline",
)

# seed-stream tags (SeedSequence spawn keys)
_AMBIENT, _NOISE, _FAULT, _LOSS = 1, 2, 3, 4


class ConfigError(ValueError):
    """Raised when a scenario config fails validation; carries every finding."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


DEFAULTS = {
    "mode": "dependshm",
    "structure": {"n_dof": 10, "mass": 1000.0, "stiffness": 1.769e6, "dt": 0.02},
    "excitation": {
        "kind": "sine",
        "amplitude": 1.0,
        "frequency_factor": 0.9,  # x first natural frequency
        "ambient_fraction": 0.02,
    },
    "sensors": {"noise_fraction": 0.10},
    "faults": [],
    "damage": None,
    "detection": {"bins": 16, "R": 5, "threshold": 0.5},
    "reconstruction": {
        "variance_inflation": 1e9,
        "model_scope": "neighborhood",
        "scope_margin": 1,
        "scan_report_ratio": 0.25,
    },
    "topology": {
        "field": [450.0, 50.0],
        "r_min_factor": 2.2,  # x inter-sensor spacing
        "r_max": None,  # default: max(field_x / 4.5, r_min)
        "bs": None,  # default: [0, field_y / 2]
    },
    "energy": {},  # EnergyParams field overrides
    "monitoring": {"training_rounds": 12, "rounds": 6, "n_averages": 15, "segment_length": 256},
    "modal": {"peak_snr": 8.0, "max_modes": 3, "damage_threshold_sigmas": 3.0},
}

# fault parameter defaults, in units of the target channel's fault-free RMS
FAULT_MAGNITUDE_DEFAULTS = {
    "stuck_constant": {"stuck_value": 3.0},
    "offset_bias": {"offset": 5.0},
    "debonding_gain": {"gain": 0.3, "parasite_std": 1.0},
    "noise_burst": {"burst_std": 0.3},
}


def _merge(defaults, override):
    # deep-copies throughout: resolved configs are mutated later and must
    # never alias the module-level DEFAULTS or the caller's dict
    out = copy.deepcopy(dict(defaults))
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ScenarioConfig:
    """Fully resolved scenario description (all defaults materialized)."""

    raw: dict
    mode: str
    seed: int
    spec: struct.StructureSpec
    damaged_spec: struct.StructureSpec | None
    excitation: dict
    sensors: dict
    faults: list  # resolved dicts incl. absolute magnitudes
    damage: dict | None
    detection: det.DetectionConfig
    reconstruction: kal.ReconstructionConfig
    topology: net.TopologySpec
    energy: net.EnergyParams
    window: int
    training_rounds: int
    test_rounds: int
    n_averages: int
    segment_length: int
    modal: mod.ModalConfig
    base_frequency: float  # undamaged f1
    forcing_frequency: float

    @property
    def n_nodes(self) -> int:
        return self.spec.n_dof

    @property
    def total_rounds(self) -> int:
        return self.training_rounds + self.test_rounds


def validate_config(raw: dict):
    """Resolve defaults and collect every validation error before failing.

    Returns (ScenarioConfig, resolved_dict). Raises ConfigError listing all
    problems when the config is invalid.
    """
    errors = []
    cfg = _merge(DEFAULTS, raw)

    if "seed" not in cfg or not isinstance(cfg["seed"], int):
        errors.append("seed: a mandatory integer seed is required")
        cfg["seed"] = 0
    if cfg["mode"] not in MODES:
        errors.append(f"mode: {cfg['mode']!r} is not one of {MODES}")
        cfg["mode"] = "dependshm"

    mon = cfg["monitoring"]
    for key in ("training_rounds", "rounds", "n_averages", "segment_length"):
        if not isinstance(mon.get(key), int) or mon[key] <= 0:
            errors.append(f"monitoring.{key}: positive integer required")
    training_rounds = max(1, int(mon.get("training_rounds", 8)))
    test_rounds = max(1, int(mon.get("rounds", 6)))
    try:
        window = sen.sampling_points(mon["n_averages"], mon["segment_length"])
    except Exception as exc:
        errors.append(f"monitoring: {exc}")
        window = 512

    st = cfg["structure"]
    spec = None
    try:
        if "masses" in st or "stiffnesses" in st:
            masses = st["masses"]
            stiffnesses = st["stiffnesses"]
        else:
            masses = [float(st["mass"])] * int(st["n_dof"])
            stiffnesses = [float(st["stiffness"])] * int(st["n_dof"])
        spec = struct.StructureSpec(
            masses=masses,
            stiffnesses=stiffnesses,
            dt=float(st["dt"]),
            duration=(window + 1) * float(st["dt"]),
        )
    except Exception as exc:
        errors.append(f"structure: {exc}")

    basis = struct.eigen_modes(spec) if spec is not None else None
    f1 = float(basis.frequencies[0]) if basis is not None else 1.0
    f_max = float(basis.frequencies[-1]) if basis is not None else 10.0

    exc_cfg = dict(cfg["excitation"])
    if exc_cfg.get("kind") not in struct.ExcitationSpec.KINDS:
        errors.append(f"excitation.kind: {exc_cfg.get('kind')!r} not in {struct.ExcitationSpec.KINDS}")
        exc_cfg["kind"] = "sine"
    if exc_cfg.get("frequency") is None:
        exc_cfg["frequency"] = exc_cfg.get("frequency_factor", 0.9) * f1
    if not (0.0 <= exc_cfg.get("ambient_fraction", 0.0)):
        errors.append("excitation.ambient_fraction: must be >= 0")
    forcing_frequency = float(exc_cfg["frequency"])
    if exc_cfg["kind"] == "sine" and basis is not None:
        if any(abs(forcing_frequency - f) < 1e-3 * f for f in basis.frequencies):
            errors.append(
                "excitation.frequency: coincides with an undamped natural frequency "
                "(unbounded resonance)"
            )

    damage = cfg["damage"]
    damaged_spec = None
    if damage is not None:
        try:
            if not (0 <= int(damage["location"]) < (spec.n_dof if spec else 1)):
                errors.append("damage.location: out of range")
            if not (0 < float(damage["severity"]) < 1):
                errors.append("damage.severity: must lie in (0, 1)")
            if not (training_rounds <= int(damage["onset_round"]) < training_rounds + test_rounds):
                errors.append("damage.onset_round: must fall inside the test rounds")
            if spec is not None:
                damaged_spec = struct.apply_damage(
                    spec,
                    struct.DamageSpec(
                        location=int(damage["location"]),
                        severity=float(damage["severity"]),
                        onset=0.0,
                    ),
                )
        except ConfigError:
            raise
        except Exception as exc:
            errors.append(f"damage: {exc}")

    faults = []
    for i, f in enumerate(cfg["faults"]):
        f = dict(f)
        kind = f.get("kind")
        if kind not in sen.FAULT_KINDS:
            errors.append(f"faults[{i}].kind: {kind!r} not in {sen.FAULT_KINDS}")
            continue
        if not isinstance(f.get("sensor_id"), int) or not (
            0 <= f["sensor_id"] < (spec.n_dof if spec else 1)
        ):
            errors.append(f"faults[{i}].sensor_id: out of range")
            continue
        if not isinstance(f.get("onset_round"), int) or f["onset_round"] < training_rounds:
            errors.append(
                f"faults[{i}].onset_round: must be an integer >= training_rounds "
                f"({training_rounds}); training data is fault-free by contract"
            )
            continue
        f.setdefault("duration_rounds", None)  # None: to end of run
        faults.append(f)

    top = cfg["topology"]
    topology = None
    try:
        field_size = tuple(float(v) for v in top["field"])
        n = spec.n_dof if spec else 10
        positions = net.line_positions(n, field_size)
        spacing = field_size[0] / max(1, n - 1)
        r_min = float(top.get("r_min") or top["r_min_factor"] * spacing)
        r_max = float(top.get("r_max") or max(field_size[0] / 4.5, r_min))
        bs = top.get("bs") or [0.0, field_size[1] / 2.0]
        topology = net.TopologySpec(
            positions=positions,
            r_min=r_min,
            r_max=r_max,
            bs_position=np.asarray(bs, dtype=float),
            field_size=field_size,
        )
        net.build_neighborhoods(topology)
    except Exception as exc:
        errors.append(f"topology: {exc}")

    try:
        detection = det.DetectionConfig(**cfg["detection"])
        if detection.R > training_rounds:
            errors.append("detection.R: cannot exceed monitoring.training_rounds")
        if detection.neighborhood_radius is None and topology is not None:
            detection.neighborhood_radius = topology.r_min
    except Exception as exc:
        errors.append(f"detection: {exc}")
        detection = det.DetectionConfig()
    try:
        reconstruction = kal.ReconstructionConfig(
            variance_inflation=float(cfg["reconstruction"]["variance_inflation"]),
            model_scope=cfg["reconstruction"]["model_scope"],
            scope_margin=int(cfg["reconstruction"]["scope_margin"]),
            scan_report_ratio=float(cfg["reconstruction"]["scan_report_ratio"]),
        )
    except Exception as exc:
        errors.append(f"reconstruction: {exc}")
        reconstruction = kal.ReconstructionConfig()
    try:
        energy = net.EnergyParams(**cfg["energy"])
    except Exception as exc:
        errors.append(f"energy: {exc}")
        energy = net.EnergyParams()

    if not (0 <= cfg["sensors"].get("noise_fraction", 0.1)):
        errors.append("sensors.noise_fraction: must be >= 0")

    mcfg = cfg["modal"]
    band = mcfg.get("band")
    if band is None:
        lo = forcing_frequency + 0.3 * max(f1 - forcing_frequency, 0.05 * f1)
        band = (lo, 1.15 * f_max)
    modal_config = mod.ModalConfig(
        segment_length=int(mon["segment_length"]) if isinstance(mon.get("segment_length"), int) else 256,
        band=tuple(band),
        peak_snr=float(mcfg["peak_snr"]),
        max_modes=int(mcfg["max_modes"]),
        damage_threshold_sigmas=float(mcfg["damage_threshold_sigmas"]),
    )

    if errors:
        raise ConfigError(errors)

    resolved = _merge(cfg, {})
    resolved["monitoring"]["window"] = window
    resolved["excitation"] = exc_cfg
    resolved["detection"]["neighborhood_radius"] = detection.neighborhood_radius
    resolved["topology"]["r_min"] = topology.r_min
    resolved["topology"]["r_max"] = topology.r_max
    resolved["topology"]["bs"] = [float(v) for v in topology.bs_position]
    resolved["modal"]["band"] = [float(band[0]), float(band[1])]
    resolved["faults"] = faults

    config = ScenarioConfig(
        raw=resolved,
        mode=cfg["mode"],
        seed=int(cfg["seed"]),
        spec=spec,
        damaged_spec=damaged_spec,
        excitation=exc_cfg,
        sensors=cfg["sensors"],
        faults=faults,
        damage=damage,
        detection=detection,
        reconstruction=reconstruction,
        topology=topology,
        energy=energy,
        window=window,
        training_rounds=training_rounds,
        test_rounds=test_rounds,
        n_averages=int(mon["n_averages"]),
        segment_length=int(mon["segment_length"]),
        modal=modal_config,
        base_frequency=f1,
        forcing_frequency=forcing_frequency,
    )
    return config, resolved


@dataclass
class RunManifest:
    format_version: str
    seed: int
    mode: str
    config: dict
    fault_schedule: list
    damage_schedule: list
    outputs: dict

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "seed": self.seed,
            "mode": self.mode,
            "config": self.config,
            "fault_schedule": self.fault_schedule,
            "damage_schedule": self.damage_schedule,
            "outputs": self.outputs,
        }


def _fmt(x) -> str:
    if isinstance(x, float) or isinstance(x, np.floating):
        if math.isnan(x):
            return ""
        return f"{float(x):.12g}"
    return str(x)


def _write_csv(path: str, schema: str, header: list, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {FORMAT_VERSION}/{schema}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: str):
    """Read a schema-tagged CSV back into (header, list-of-dict rows)."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return reader.fieldnames, list(reader)


class _Simulator:
    """Per-round episode generator with cached deterministic responses."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self._sine_cache = {}
        seq = np.random.SeedSequence(config.seed)
        self._ambient_root, self._noise_root, self._fault_root, self._loss_root = seq.spawn(4)
        # fault-free noise scale frozen at initialization from round-0 dynamics
        clean0 = self._clean_round(0)
        self.signal_rms = np.sqrt(np.mean(clean0**2, axis=1))
        self.noise_std = config.sensors.get("noise_fraction", 0.1) * self.signal_rms

    def spec_for_round(self, d: int) -> struct.StructureSpec:
        cfg = self.config
        if cfg.damage is not None and d >= int(cfg.damage["onset_round"]):
            return cfg.damaged_spec
        return cfg.spec

    def _sine_response(self, spec) -> np.ndarray:
        key = id(spec)
        if key not in self._sine_cache:
            exc = struct.ExcitationSpec(
                kind=self.config.excitation["kind"],
                amplitude=float(self.config.excitation["amplitude"]),
                frequency=float(self.config.excitation["frequency"]),
            )
            rec = struct.simulate_response(spec, exc)
            self._sine_cache[key] = rec.accelerations[:, : self.config.window]
        return self._sine_cache[key]

    def _clean_round(self, d: int) -> np.ndarray:
        cfg = self.config
        spec = self.spec_for_round(d)
        acc = self._sine_response(spec).copy()
        frac = float(cfg.excitation.get("ambient_fraction", 0.0))
        if frac > 0:
            seed = np.random.SeedSequence([cfg.seed, _AMBIENT, d])
            amb = struct.simulate_response(
                spec,
                struct.ExcitationSpec(
                    kind="white_noise",
                    amplitude=frac * float(cfg.excitation["amplitude"]),
                    seed=seed,
                ),
            )
            acc += amb.accelerations[:, : cfg.window]
        return acc

    def measured_round(self, d: int):
        """(clean, windows) for round d; windows carry global start times."""
        cfg = self.config
        clean = self._clean_round(d)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _NOISE, d]))
        noisy = clean + self.noise_std[:, None] * rng.standard_normal(clean.shape)
        start = d * cfg.window * cfg.spec.dt
        windows = {
            ch: sen.SignalWindow(
                sensor_id=ch,
                start_time=start,
                dt=cfg.spec.dt,
                samples=noisy[ch],
                round_index=d,
            )
            for ch in range(cfg.n_nodes)
        }
        return clean, windows


def resolve_fault_profiles(config: ScenarioConfig, signal_rms: np.ndarray):
    """Materialize fault schedules into absolute-magnitude FaultProfile objects."""
    profiles = []
    schedule = []
    window_s = config.window * config.spec.dt
    for i, f in enumerate(config.faults):
        kind = f["kind"]
        ch = int(f["sensor_id"])
        rms = float(signal_rms[ch])
        onset = float(f["onset_round"]) * window_s
        duration = (
            math.inf
            if f.get("duration_rounds") is None
            else float(f["duration_rounds"]) * window_s
        )
        params = {}
        for name, scale in FAULT_MAGNITUDE_DEFAULTS.get(kind, {}).items():
            params[name] = float(f.get(name, scale if name == "gain" else scale * rms))
        if kind == "drift":
            params["drift_rate"] = float(f.get("drift_rate", 2.0 * rms / window_s))
        if kind == "precision_degradation":
            params["quantization_step"] = float(
                f.get("quantization_step", 10.0 * (8.0 * rms) / 2**16)
            )
        profile = sen.FaultProfile(
            kind=kind, sensor_id=ch, onset=onset, duration=duration, seed=config.seed + i, **params
        )
        profiles.append(profile)
        schedule.append(
            {
                "kind": kind,
                "sensor_id": ch,
                "onset_round": int(f["onset_round"]),
                "duration_rounds": f.get("duration_rounds"),
                "onset_s": onset,
                "parameters": params,
            }
        )
    return profiles, schedule


def _fault_active(schedule_entry, d: int) -> bool:
    if d < schedule_entry["onset_round"]:
        return False
    dur = schedule_entry["duration_rounds"]
    return dur is None or d < schedule_entry["onset_round"] + dur


def _ops_mi_pair(window: int, bins: int) -> float:
    return 5.0 * window + bins * bins


def _ops_welch(window: int, segment: int) -> float:
    return 5.0 * window * max(1.0, math.log2(max(segment, 2)))


def _ops_kf(window: int, state_dim: int) -> float:
    return float(window) * state_dim**3


def run_scenario(config, out_dir: str) -> RunManifest:
    """Execute a full scenario and write the CSV artifacts into ``out_dir``."""
    if isinstance(config, dict):
        config, _ = validate_config(config)
    cfg = config
    os.makedirs(out_dir, exist_ok=True)
    sim = _Simulator(cfg)
    loss_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _LOSS]))
    graph = net.build_neighborhoods(cfg.topology)
    profiles, fault_schedule = resolve_fault_profiles(cfg, sim.signal_rms)
    damage_schedule = (
        []
        if cfg.damage is None
        else [
            {
                "location": int(cfg.damage["location"]),
                "severity": float(cfg.damage["severity"]),
                "onset_round": int(cfg.damage["onset_round"]),
            }
        ]
    )
    noise_var = {ch: float(sim.noise_std[ch] ** 2) for ch in range(cfg.n_nodes)}
    distributed = cfg.mode in ("dependshm", "no_recovery", "frequency_matching_baseline")
    recovery = cfg.mode in ("dependshm", "cshm_centralized")
    spacing = cfg.topology.field_size[0] / max(1, cfg.n_nodes - 1)

    # reference node for the cross-spectrum sign convention
    ref_of = {
        ch: min([ch] + graph.neighbors[ch]) if graph.neighbors[ch] else ch
        for ch in range(cfg.n_nodes)
    }

    cluster_tol_hz = 2.0 / (cfg.segment_length * cfg.spec.dt)  # 2 FFT bins
    detections_rows = []
    reconstruction_rows = []
    mode_rows = []
    energy = net.EnergyLedger()
    dependability = mod.DependabilityReport()
    dep_rows = []
    lambda_healthy, lambda_faulty = [], []
    raw_bits = (cfg.window * cfg.energy.bytes_per_sample + cfg.energy.header_bytes) * 8
    final_bits = (cfg.energy.mode_report_bytes + cfg.energy.header_bytes) * 8
    freqset_bits = (cfg.energy.frequency_set_bytes + cfg.energy.header_bytes) * 8
    bs_path = {
        ch: net.shortest_path_route(graph.routing, ch, net.BS) for ch in range(cfg.n_nodes)
    }

    model = None
    training_windows = {ch: [] for ch in range(cfg.n_nodes)}
    baseline_curvs = []
    baseline_freq = None
    mi_pairs = sorted(
        {det.CorrelationModel.pair_key(i, j) for i in range(cfg.n_nodes) for j in graph.neighbors[i]}
    )

    def extract_all(final_windows, d):
        estimates = {}
        for ch in range(cfg.n_nodes):
            w = final_windows.get(ch)
            ref = ref_of[ch]
            ref_w = final_windows.get(ref) if ref != ch else None
            if w is None:
                estimates[ch] = mod.LocalModeEstimate(
                    sensor_id=ch,
                    round_index=d,
                    frequencies=np.empty(0),
                    amplitudes=np.empty(0),
                    reference_id=ch,
                )
                continue
            if ref_w is None:
                ref, ref_w = ch, None
            estimates[ch] = mod.extract_local_modes(w, cfg.modal, reference=ref_w, reference_id=ref)
        return estimates

    def add_mode_rows(shape, d, stage):
        for k in range(shape.n_modes):
            for loc in range(cfg.n_nodes):
                mode_rows.append(
                    (
                        d,
                        stage,
                        k,
                        shape.frequencies[k],
                        loc,
                        shape.vectors[loc, k],
                        int(shape.missing[loc, k]),
                    )
                )

    for d in range(cfg.total_rounds):
        clean, windows = sim.measured_round(d)
        delivered = {ch: sen.apply_faults(windows[ch], profiles) for ch in windows}
        # Bernoulli transport losses; the stream is consumed identically in
        # every mode so paired-seed comparisons stay aligned
        loss_draws = loss_rng.uniform(size=(cfg.n_nodes, 2))
        active = {e["sensor_id"] for e in fault_schedule if _fault_active(e, d)}
        training = d < cfg.training_rounds
        if distributed or cfg.energy.packet_loss <= 0.0:
            view = delivered
        else:
            # raw windows lost in transit never reach the BS, unretransmitted
            view = {
                ch: (None if loss_draws[ch, 0] < cfg.energy.packet_loss else delivered[ch])
                for ch in delivered
            }

        # ---- energy: sampling + data movement -------------------------------
        for ch in range(cfg.n_nodes):
            traffic = []
            received = 0.0
            comp = 0.0
            if distributed:
                traffic.append(net.Transmission(raw_bits, cfg.topology.r_min))
                received += raw_bits * len(graph.neighbors[ch])
            else:
                path = bs_path[ch]
                for a, b in zip(path[:-1], path[1:]):
                    hop = cfg.topology.distance(a, b)
                    if a == ch:
                        traffic.append(net.Transmission(raw_bits, hop))
                    else:
                        energy.entry(d, a).e_t += cfg.energy.tx_energy(raw_bits, hop)
                    if b != net.BS:
                        energy.entry(d, b).e_t += cfg.energy.rx_energy(raw_bits)
            if distributed and not training:
                comp += 2 * len(graph.neighbors[ch]) * _ops_mi_pair(cfg.window, cfg.detection.bins)
            if training and distributed:
                comp += len(graph.neighbors[ch]) * _ops_mi_pair(cfg.window, cfg.detection.bins)
            if cfg.mode != "raw_centralized":
                comp += _ops_welch(cfg.window, cfg.segment_length)
                payload = freqset_bits if cfg.mode == "frequency_matching_baseline" else final_bits
                # mode reports get one retransmission when the first try is lost
                tries = 2 if loss_draws[ch, 1] < cfg.energy.packet_loss else 1
                for _ in range(tries):
                    path = bs_path[ch]
                    for a, b in zip(path[:-1], path[1:]):
                        hop = cfg.topology.distance(a, b)
                        if a == ch:
                            traffic.append(net.Transmission(payload, hop))
                        else:
                            energy.entry(d, a).e_t += cfg.energy.tx_energy(payload, hop)
                        if b != net.BS:
                            energy.entry(d, b).e_t += cfg.energy.rx_energy(payload)
            net.charge_round(
                energy,
                ch,
                traffic,
                comp,
                cfg.window,
                cfg.energy,
                round_index=d,
                received_bits=received,
            )

        if training:
            for ch in range(cfg.n_nodes):
                if view[ch] is not None:
                    training_windows[ch].append(view[ch])
            final_windows = dict(view)
            estimates = extract_all(final_windows, d)
            try:
                shape = mod.assemble_global(
                    estimates.values(), tolerance_hz=cluster_tol_hz,
                    n_locations=cfg.n_nodes, round_index=d,
                )
                add_mode_rows(shape, d, "baseline")
                k = shape.nearest_mode(cfg.base_frequency)
                baseline_curvs.append(mod.curvature(shape.mode(k)))
                baseline_freq = float(shape.frequencies[k])
            except mod.ModalError:
                pass
            if d == cfg.training_rounds - 1:
                model = det.train_correlation_model(
                    training_windows, cfg.detection, pairs=mi_pairs
                )
            continue

        # ---- detection -------------------------------------------------------
        if cfg.mode == "frequency_matching_baseline":
            decisions = _frequency_matching_decisions(cfg, view, d)
        else:
            decisions = det.detection_round(
                view, graph.neighbors, model, cfg.detection, round_index=d
            )

        # ---- missing-node refinement (KL-KF scan) ----------------------------
        if recovery:
            for ch in sorted(decisions):
                if view.get(ch) is not None or decisions[ch].verdict != "faulty":
                    continue
                node_set = sorted({ch, *graph.neighbors[ch]})
                if len(node_set) < 3:
                    continue
                scan = kal.missing_sensor_scan(
                    node_set,
                    {c: view.get(c) for c in node_set},
                    cfg.spec,
                    config=cfg.reconstruction,
                    noise_var=noise_var,
                )
                if scan.reported == ch:
                    decisions[ch] = replace(decisions[ch], verdict="missing")
                helper = min(c for c in node_set if c != ch)
                scan_ops = len(node_set) * _ops_kf(
                    cfg.window, 2 * min(cfg.n_nodes, len(node_set) + 2)
                )
                net.charge_round(
                    energy, helper, [], scan_ops, 0, cfg.energy, round_index=d
                )

        flagged = sorted(
            ch for ch, dec in decisions.items() if dec.verdict in ("faulty", "missing")
        )
        for ch, dec in sorted(decisions.items()):
            truth = ch in active
            (lambda_faulty if truth else lambda_healthy).append(dec.lambda_agg)
            detections_rows.append((d, ch, dec.lambda_agg, dec.verdict, int(truth)))

        # ---- reconstruction --------------------------------------------------
        final_windows = dict(view)
        if recovery and flagged:
            truth_map = {ch: clean[ch] for ch in range(cfg.n_nodes)}
            if cfg.mode == "cshm_centralized":
                batches = [(sorted(flagged), sorted(range(cfg.n_nodes)))]
            else:
                batches = []
                for ch in flagged:
                    scope = [ch] + [j for j in graph.neighbors[ch] if j not in flagged]
                    batches.append(([ch], sorted(scope)))
            for faulty, scope in batches:
                scope_windows = {c: view.get(c) for c in scope}
                try:
                    results = kal.reconstruct_signals(
                        faulty,
                        scope_windows,
                        cfg.spec,
                        round_index=d,
                        config=cfg.reconstruction,
                        noise_var=noise_var,
                        truth=truth_map,
                    )
                except kal.KalmanError:
                    continue
                helper = min(c for c in scope if c not in faulty)
                state_dim = 2 * (
                    cfg.n_nodes
                    if cfg.reconstruction.model_scope == "full"
                    else min(
                        cfg.n_nodes,
                        max(scope) - min(scope) + 1 + 2 * cfg.reconstruction.scope_margin,
                    )
                )
                if cfg.mode != "cshm_centralized":
                    net.charge_round(
                        energy,
                        helper,
                        [],
                        _ops_kf(cfg.window, state_dim),
                        0,
                        cfg.energy,
                        round_index=d,
                        reconstructions=len(faulty),
                    )
                for res in results:
                    final_windows[res.sensor_id] = res.reconstructed
                    reconstruction_rows.append(
                        (
                            d,
                            res.sensor_id,
                            res.quality if res.quality is not None else "",
                            float(np.sqrt(np.mean(res.residual**2))),
                        )
                    )

        # ---- modal monitoring and diagnosis ----------------------------------
        verdict_map = {ch: dec.verdict for ch, dec in decisions.items()}
        if cfg.mode == "frequency_matching_baseline":
            for ch in flagged:  # NFMC isolates faulty sensors instead of recovering
                final_windows[ch] = None
        damage_reports = []
        diagnosis = None
        raw_estimates = extract_all(view, d)
        try:
            raw_shape = mod.assemble_global(
                raw_estimates.values(), tolerance_hz=cluster_tol_hz,
                n_locations=cfg.n_nodes, round_index=d,
            )
            add_mode_rows(raw_shape, d, "raw")
        except mod.ModalError:
            raw_shape = None
        if recovery or cfg.mode in ("no_recovery", "frequency_matching_baseline"):
            final_estimates = extract_all(final_windows, d)
            try:
                final_shape = mod.assemble_global(
                    final_estimates.values(), tolerance_hz=cluster_tol_hz,
                    n_locations=cfg.n_nodes, round_index=d,
                )
                add_mode_rows(final_shape, d, "final")
            except mod.ModalError:
                final_shape = None
        else:
            final_shape = raw_shape
        if final_shape is not None and len(baseline_curvs) >= 2:
            baseline = mod.CurvatureBaseline.from_rounds(
                baseline_curvs, baseline_freq if baseline_freq else cfg.base_frequency
            )
            diagnosis = mod.diagnose(final_shape, baseline, verdict_map, cfg.modal)
            damage_reports = diagnosis.damage_locations

        # ---- dependability scoring -------------------------------------------
        active_damage = [
            e["location"] for e in damage_schedule if d >= e["onset_round"]
        ]
        ftp = sum(1 for ch in flagged if ch in active)
        ffp = len(flagged) - ftp
        ffn = len(active) - ftp
        ftn = cfg.n_nodes - ftp - ffp - ffn
        matched = set()
        dtp = dfn = 0
        for loc in active_damage:
            hits = [r for r in damage_reports if abs(r - loc) <= 1]
            if hits:
                dtp += 1
                matched.update(hits)
            else:
                dfn += 1
        dfp = len([r for r in damage_reports if r not in matched])
        dtn = cfg.n_nodes - dtp - dfn - dfp
        dependability.add_round(d, (ftp, ffp, ffn, ftn), (dtp, dfp, dfn, dtn))
        row_acc = (ftp + ftn) / cfg.n_nodes
        row_ability = max(
            0.0,
            1.0
            - (dfp / max(1, cfg.n_nodes - len(active_damage)))
            - (dfn / max(1, len(active_damage)) if active_damage else 0.0),
        )
        dep_rows.append(
            (d, ftp, ffp, ffn, ftn, row_acc, dtp, dfp, dfn, dtn, row_ability)
        )

    # ---- outputs ---------------------------------------------------------------
    paths = {
        "detections": os.path.join(out_dir, "detections.csv"),
        "reconstructions": os.path.join(out_dir, "reconstructions.csv"),
        "modes": os.path.join(out_dir, "modes.csv"),
        "energy": os.path.join(out_dir, "energy.csv"),
        "dependability": os.path.join(out_dir, "dependability.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
        "manifest": os.path.join(out_dir, "manifest.json"),
    }
    _write_csv(
        paths["detections"],
        "detections",
        ["round", "node", "lambda", "verdict", "truth"],
        detections_rows,
    )
    _write_csv(
        paths["reconstructions"],
        "reconstructions",
        ["round", "node", "quality", "residual_rms"],
        reconstruction_rows,
    )
    _write_csv(
        paths["modes"],
        "modes",
        ["round", "stage", "mode", "frequency", "location", "amplitude", "missing"],
        mode_rows,
    )
    _write_csv(
        paths["energy"],
        "energy",
        ["round", "node", "e_T", "e_comp", "e_samp", "e_oh", "total"],
        list(energy.rows()),
    )
    _write_csv(
        paths["dependability"],
        "dependability",
        [
            "round",
            "fault_tp", "fault_fp", "fault_fn", "fault_tn", "fault_accuracy",
            "damage_tp", "damage_fp", "damage_fn", "damage_tn", "event_ability",
        ],
        dep_rows,
    )

    fault_rounds = sorted(
        {
            d
            for d in range(cfg.training_rounds, cfg.total_rounds)
            for e in fault_schedule
            if _fault_active(e, d)
        }
    )
    clean_rounds = [
        d for d in range(cfg.training_rounds, cfg.total_rounds) if d not in fault_rounds
    ]
    surcharge = None
    if fault_rounds and clean_rounds:
        mean_fault = float(np.mean([energy.round_total(d) for d in fault_rounds]))
        mean_clean = float(np.mean([energy.round_total(d) for d in clean_rounds]))
        if mean_fault > 0:
            surcharge = (mean_fault - mean_clean) / mean_fault
    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "detection_accuracy": dependability.detection_accuracy(),
        "event_detection_ability": dependability.event_detection_ability(),
        "mean_lambda_healthy": float(np.mean(lambda_healthy)) if lambda_healthy else None,
        "mean_lambda_faulty": float(np.mean(lambda_faulty)) if lambda_faulty else None,
        "energy_total_j": energy.total,
        "energy_communication_j": energy.communication_total,
        "energy_components_j": energy.component_totals(),
        "fault_round_surcharge": surcharge,
        "n_reconstructions": len(reconstruction_rows),
        "fault_rate": len({e["sensor_id"] for e in fault_schedule}) / cfg.n_nodes,
    }
    with open(paths["summary"], "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = RunManifest(
        format_version=FORMAT_VERSION,
        seed=cfg.seed,
        mode=cfg.mode,
        config=cfg.raw,
        fault_schedule=fault_schedule,
        damage_schedule=damage_schedule,
        outputs={k: os.path.basename(v) for k, v in paths.items()},
    )
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _frequency_matching_decisions(cfg: ScenarioConfig, delivered: dict, d: int) -> dict:
    """NFMC-style baseline: flag nodes whose peak frequency mismatches the consensus."""
    peaks = {}
    for ch, w in delivered.items():
        if w is None:
            peaks[ch] = None
            continue
        est = mod.extract_local_modes(w, cfg.modal)
        peaks[ch] = None if est.is_empty else float(est.frequencies[0])
    present = [f for f in peaks.values() if f is not None]
    consensus = float(np.median(present)) if present else 0.0
    bin_width = 1.0 / (cfg.segment_length * cfg.spec.dt)
    tol = 2.0 * bin_width
    decisions = {}
    for ch, f in sorted(peaks.items()):
        bad = f is None or abs(f - consensus) > tol
        decisions[ch] = det.NodeDecision(
            node_id=ch,
            round_index=d,
            lambdas={},
            lambda_agg=det.LAMBDA_MAX if bad else 0.0,
            verdict="faulty" if bad else "non_faulty",
        )
    return decisions


def compare_schemes(config, modes, out_dir: str) -> str:
    """Run each mode on identical seeds and write a comparison table.

    Returns the path of the comparison CSV. Each mode's full artifacts land in
    ``out_dir/<mode>/``.
    """
    if isinstance(config, dict):
        base_raw = dict(config)
    else:
        base_raw = dict(config.raw)
    rows = []
    for mode in modes:
        if mode not in MODES:
            raise ConfigError([f"compare: mode {mode!r} is not one of {MODES}"])
        raw = _merge(base_raw, {"mode": mode})
        sub_dir = os.path.join(out_dir, mode)
        run_scenario(raw, sub_dir)
        with open(os.path.join(sub_dir, "summary.json")) as fh:
            s = json.load(fh)
        rows.append(
            (
                mode,
                s["detection_accuracy"],
                s["event_detection_ability"],
                s["mean_lambda_healthy"] if s["mean_lambda_healthy"] is not None else "",
                s["mean_lambda_faulty"] if s["mean_lambda_faulty"] is not None else "",
                s["energy_communication_j"],
                s["energy_total_j"],
                s["fault_round_surcharge"] if s["fault_round_surcharge"] is not None else "",
            )
        )
    path = os.path.join(out_dir, "comparison.csv")
    _write_csv(
        path,
        "comparison",
        [
            "mode",
            "detection_accuracy",
            "event_detection_ability",
            "mean_lambda_healthy",
            "mean_lambda_faulty",
            "energy_communication_j",
            "energy_total_j",
            "fault_round_surcharge",
        ],
        rows,
    )
    return path


PLOT_KEYS = ("lambda", "modeshape", "energy", "accuracy")


def emit_plotdata(run_dir: str, which: str, out_path: str | None = None) -> str:
    """Write plain columnar plot data extracted from a run directory.

    Keys: ``lambda`` (indicator per node per round), ``modeshape`` (baseline
    vs raw vs final mode 1, last round), ``energy`` (per-round component
    sums), ``accuracy`` (accuracy/ability vs fault rate across the run
    directories contained in ``run_dir``).
    """
    if which not in PLOT_KEYS:
        raise ConfigError([f"plot: unknown key {which!r}; available keys: {PLOT_KEYS}"])
    out_path = out_path or os.path.join(run_dir, f"plot_{which}.csv")

    if which == "lambda":
        _, rows = read_csv(os.path.join(run_dir, "detections.csv"))
        nodes = sorted({int(r["node"]) for r in rows})
        rounds = sorted({int(r["round"]) for r in rows})
        table = {(int(r["round"]), int(r["node"])): r["lambda"] for r in rows}
        out_rows = [[d] + [table.get((d, n), "") for n in nodes] for d in rounds]
        _write_csv(out_path, "plot-lambda", ["round"] + [f"node{n}" for n in nodes], out_rows)
        return out_path

    if which == "modeshape":
        _, rows = read_csv(os.path.join(run_dir, "modes.csv"))
        if not rows:
            raise ConfigError(["plot: modes.csv is empty"])
        freqs = {}
        for r in rows:
            if r["stage"] == "baseline" and r["amplitude"] != "":
                freqs.setdefault(r["mode"], []).append(float(r["frequency"]))
        series = {}
        for stage in ("baseline", "raw", "final"):
            stage_rows = [r for r in rows if r["stage"] == stage and r["mode"] == "0"]
            if not stage_rows:
                continue
            # last round for live stages, first for the baseline reference
            keep_round = (
                min(int(r["round"]) for r in stage_rows)
                if stage == "baseline"
                else max(int(r["round"]) for r in stage_rows)
            )
            series[stage] = {
                int(r["location"]): r["amplitude"]
                for r in stage_rows
                if int(r["round"]) == keep_round
            }
        locations = sorted({loc for s in series.values() for loc in s})
        out_rows = [
            [loc] + [series.get(st, {}).get(loc, "") for st in ("baseline", "raw", "final")]
            for loc in locations
        ]
        _write_csv(out_path, "plot-modeshape", ["location", "baseline", "raw", "final"], out_rows)
        return out_path

    if which == "energy":
        _, rows = read_csv(os.path.join(run_dir, "energy.csv"))
        per_round = {}
        for r in rows:
            d = int(r["round"])
            acc = per_round.setdefault(d, [0.0, 0.0, 0.0, 0.0, 0.0])
            acc[0] += float(r["e_T"])
            acc[1] += float(r["e_comp"])
            acc[2] += float(r["e_samp"])
            acc[3] += float(r["e_oh"])
            acc[4] += float(r["total"])
        out_rows = [[d] + per_round[d] for d in sorted(per_round)]
        _write_csv(
            out_path, "plot-energy", ["round", "e_T", "e_comp", "e_samp", "e_oh", "total"], out_rows
        )
        return out_path

    # accuracy vs fault rate over a directory of runs
    out_rows = []
    for entry in sorted(os.listdir(run_dir)):
        sub = os.path.join(run_dir, entry)
        summary_path = os.path.join(sub, "summary.json")
        if not os.path.isdir(sub) or not os.path.exists(summary_path):
            continue
        with open(summary_path) as fh:
            s = json.load(fh)
        out_rows.append(
            (s["fault_rate"], s["detection_accuracy"], s["event_detection_ability"], entry)
        )
    if not out_rows:
        raise ConfigError([f"plot: no run directories with summary.json under {run_dir}"])
    out_rows.sort()
    _write_csv(
        out_path,
        "plot-accuracy",
        ["fault_rate", "detection_accuracy", "event_detection_ability", "run"],
        out_rows,
    )
    return out_path
