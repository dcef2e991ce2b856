"""Lumped-mass shear-building dynamics: modal analysis, response simulation, damage.

The structure is a chain of point masses connected by story stiffnesses
(tridiagonal stiffness matrix, anchored at the ground). Damping is zero by
construction, so the free system conserves mechanical energy and the modal
basis is real. Time marching uses the exact zero-order-hold solution of each
modal oscillator, which keeps integrator error out of every downstream
tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh


class StructureError(ValueError):
    """Raised when a structure or damage description violates its contract."""


def _as_positive_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise StructureError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise StructureError(f"{name} entries must be finite and > 0")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StructureSpec:
    """Masses (kg), story stiffnesses (N/m), sampling step dt (s) and duration (s)."""

    masses: np.ndarray
    stiffnesses: np.ndarray
    dt: float
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "masses", _as_positive_vector(self.masses, "masses"))
        object.__setattr__(
            self, "stiffnesses", _as_positive_vector(self.stiffnesses, "stiffnesses")
        )
        if self.masses.shape != self.stiffnesses.shape:
            raise StructureError("masses and stiffnesses must have equal length")
        if not (self.dt > 0.0):
            raise StructureError("dt must be > 0")
        if not (self.duration > 0.0):
            raise StructureError("duration must be > 0")
        f_max = float(np.sqrt(self.eigenvalues()[-1]) / (2.0 * math.pi))
        if self.dt >= 1.0 / (2.0 * f_max):
            raise StructureError(
                f"dt={self.dt} violates the Nyquist bound 1/(2*f_max)={1.0 / (2.0 * f_max):.6g} s"
            )

    @property
    def n_dof(self) -> int:
        return self.masses.size

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.duration / self.dt))

    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.masses)

    def stiffness_matrix(self) -> np.ndarray:
        k = self.stiffnesses
        n = k.size
        mat = np.zeros((n, n))
        for i in range(n):
            mat[i, i] = k[i] + (k[i + 1] if i + 1 < n else 0.0)
            if i + 1 < n:
                mat[i, i + 1] = -k[i + 1]
                mat[i + 1, i] = -k[i + 1]
        return mat

    def eigenvalues(self) -> np.ndarray:
        """Generalized eigenvalues of (K, M) in rad^2/s^2, ascending."""
        vals = eigh(self.stiffness_matrix(), self.mass_matrix(), eigvals_only=True)
        return np.asarray(vals, dtype=float)


@dataclass(frozen=True)
class DamageSpec:
    """Stiffness reduction of one story: ``k -> (1 - severity) * k`` from ``onset`` on."""

    location: int
    severity: float
    onset: float

    def __post_init__(self):
        if not (0.0 < self.severity <= 1.0):
            raise StructureError("severity must lie in (0, 1]")
        if self.onset < 0.0:
            raise StructureError("onset must be >= 0")


@dataclass(frozen=True)
class ExcitationSpec:
    """Forcing description for the simulation.

    kind: "white_noise" (seeded Gaussian), "sine" or "impulse".
    location: DOF index, or None for base excitation (force -m_i * a_g(t)
    applied at every mass, the ambient-vibration case).
    amplitude: noise std (white_noise), peak force (sine) or impulse force.
    """

    kind: str
    amplitude: float
    frequency: float | None = None
    location: int | None = None
    seed: int = 0

    KINDS = ("white_noise", "sine", "impulse")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise StructureError(f"unknown excitation kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "sine" and (self.frequency is None or self.frequency <= 0.0):
            raise StructureError("sine excitation requires frequency > 0")

    def trace(self, n_samples: int, dt: float) -> np.ndarray:
        """Scalar forcing value held constant over each [t_k, t_k + dt)."""
        t = np.arange(n_samples) * dt
        if self.kind == "white_noise":
            rng = np.random.default_rng(self.seed)
            return self.amplitude * rng.standard_normal(n_samples)
        if self.kind == "sine":
            return self.amplitude * np.sin(2.0 * math.pi * self.frequency * t)
        out = np.zeros(n_samples)
        out[0] = self.amplitude
        return out


@dataclass(frozen=True)
class ModalBasis:
    """Mass-normalized modes of (K, M): ``Phi.T @ M @ Phi = I`` and
    ``Phi.T @ K @ Phi = diag(eigenvalues)``; frequencies in Hz, ascending."""

    frequencies: np.ndarray
    mode_shapes: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.frequencies.size


@dataclass
class ResponseRecord:
    """Ground-truth structural response at every DOF.

    For base excitation the displacements/velocities are relative to the
    ground and ``accelerations`` holds the absolute (accelerometer-measured)
    acceleration, which equals ``-M^-1 K x`` exactly. For a point force the
    ground is fixed, so absolute and relative coincide.
    """

    displacements: np.ndarray  # (n_dof, n_samples), m
    velocities: np.ndarray  # (n_dof, n_samples), m/s
    accelerations: np.ndarray  # (n_dof, n_samples), m/s^2
    excitation_trace: np.ndarray  # (n_samples,)
    dt: float
    damage_events: list = field(default_factory=list)  # (time, location, severity)

    @property
    def n_dof(self) -> int:
        return self.accelerations.shape[0]

    @property
    def n_samples(self) -> int:
        return self.accelerations.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt


def eigen_modes(spec: StructureSpec) -> ModalBasis:
    """Solve K phi = delta M phi, mass-normalized, sorted by ascending frequency."""
    try:
        vals, vecs = eigh(spec.stiffness_matrix(), spec.mass_matrix())
    except np.linalg.LinAlgError as exc:  # pragma: no cover - defensive
        raise StructureError(f"eigen-solve failed for spec {spec!r}: {exc}") from exc
    order = np.argsort(vals)
    vals = np.asarray(vals, dtype=float)[order]
    vecs = np.asarray(vecs, dtype=float)[:, order]
    if np.any(vals <= 0.0):
        raise StructureError(f"non-positive eigenvalue encountered for spec {spec!r}")
    # sign convention: largest-magnitude entry of each mode is positive
    for j in range(vecs.shape[1]):
        k = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[k, j] < 0.0:
            vecs[:, j] = -vecs[:, j]
    freqs = np.sqrt(vals) / (2.0 * math.pi)
    return ModalBasis(frequencies=freqs, mode_shapes=vecs, eigenvalues=vals)


def apply_damage(spec: StructureSpec, damage: DamageSpec) -> StructureSpec:
    """Return a copy of ``spec`` with one story stiffness scaled by (1 - severity)."""
    if not (0 <= damage.location < spec.n_dof):
        raise StructureError(
            f"damage location {damage.location} out of range for {spec.n_dof} stories"
        )
    k = spec.stiffnesses.copy()
    k[damage.location] *= 1.0 - damage.severity
    if k[damage.location] <= 0.0:
        raise StructureError("damage would zero out a story stiffness")
    return replace(spec, stiffnesses=k)


def _zoh_march(
    basis: ModalBasis,
    modal_force: np.ndarray,
    q0: np.ndarray,
    qd0: np.ndarray,
    dt: float,
):
    """Exact zero-order-hold march of decoupled modal oscillators.

    modal_force: (p, n_steps) forcing per mode, held constant over each step.
    Returns modal displacement/velocity histories sampled at step starts,
    plus the state after the final step.
    """
    delta = basis.eigenvalues
    omega = np.sqrt(delta)
    c = np.cos(omega * dt)
    s = np.sin(omega * dt)
    s_w = s / omega
    n_steps = modal_force.shape[1]
    q_hist = np.empty((delta.size, n_steps))
    qd_hist = np.empty((delta.size, n_steps))
    q, qd = q0.copy(), qd0.copy()
    for k in range(n_steps):
        q_hist[:, k] = q
        qd_hist[:, k] = qd
        qp = modal_force[:, k] / delta
        dq = q - qp
        q = qp + dq * c + qd * s_w
        qd = -dq * omega * s + qd * c
    return q_hist, qd_hist, q, qd


def simulate_response(
    spec: StructureSpec,
    excitation: ExcitationSpec,
    damage: DamageSpec | None = None,
) -> ResponseRecord:
    """Time-march the undamped system from rest under the given excitation.

    The linear state-space is discretized exactly (zero-order hold on the
    forcing) in modal coordinates. If ``damage`` is given, the stiffness
    matrix is rebuilt at the onset sample and the modes recomputed from there
    onward; the physical state carries over continuously.
    """
    if excitation.location is not None and not (0 <= excitation.location < spec.n_dof):
        raise StructureError("excitation location out of range")
    n = spec.n_dof
    n_samples = spec.n_samples
    force_scalar = excitation.trace(n_samples, spec.dt)
    if excitation.location is None:
        pattern = -spec.masses  # base acceleration enters as -M @ ones * a_g
    else:
        pattern = np.zeros(n)
        pattern[excitation.location] = 1.0

    segments = []  # (start_index, spec_for_segment)
    events = []
    if damage is None:
        segments.append((0, spec))
    else:
        damaged = apply_damage(spec, damage)  # validates location/severity
        k_onset = min(n_samples, max(0, int(round(damage.onset / spec.dt))))
        if damage.onset >= spec.duration:
            raise StructureError("damage onset must fall before the end of the run")
        if k_onset > 0:
            segments.append((0, spec))
        segments.append((k_onset, damaged))
        events.append((k_onset * spec.dt, damage.location, damage.severity))

    disp = np.empty((n, n_samples))
    vel = np.empty((n, n_samples))
    acc = np.empty((n, n_samples))
    x = np.zeros(n)
    v = np.zeros(n)
    mass = spec.masses
    for idx, (start, seg_spec) in enumerate(segments):
        stop = segments[idx + 1][0] if idx + 1 < len(segments) else n_samples
        if stop <= start:
            continue
        basis = eigen_modes(seg_spec)
        phi = basis.mode_shapes
        # mass-normalized basis: q = Phi^T M x
        q0 = phi.T @ (mass * x)
        qd0 = phi.T @ (mass * v)
        gamma = phi.T @ pattern  # modal forcing amplitudes
        modal_force = gamma[:, None] * force_scalar[None, start:stop]
        q_hist, qd_hist, q_end, qd_end = _zoh_march(basis, modal_force, q0, qd0, spec.dt)
        disp[:, start:stop] = phi @ q_hist
        vel[:, start:stop] = phi @ qd_hist
        if excitation.location is None:
            # absolute acceleration under base motion: xdd_abs = -M^-1 K x
            acc[:, start:stop] = phi @ (-basis.eigenvalues[:, None] * q_hist)
        else:
            # qdd = H - delta q, so acceleration superposes exactly
            acc[:, start:stop] = phi @ (modal_force - basis.eigenvalues[:, None] * q_hist)
        x = phi @ q_end
        v = phi @ qd_end
    return ResponseRecord(
        displacements=disp,
        velocities=vel,
        accelerations=acc,
        excitation_trace=force_scalar,
        dt=spec.dt,
        damage_events=events,
    )


def mechanical_energy(spec: StructureSpec, record: ResponseRecord) -> np.ndarray:
    """Total mechanical energy 0.5 v'Mv + 0.5 x'Kx at every sample (J)."""
    m = spec.masses
    kmat = spec.stiffness_matrix()
    kinetic = 0.5 * np.einsum("it,i,it->t", record.velocities, m, record.velocities)
    potential = 0.5 * np.einsum("it,ij,jt->t", record.displacements, kmat, record.displacements)
    return kinetic + potential


def free_vibration(
    spec: StructureSpec, x0: np.ndarray, v0: np.ndarray
) -> ResponseRecord:
    """Unforced response from an initial state (used for conservation checks)."""
    basis = eigen_modes(spec)
    phi = basis.mode_shapes
    q0 = phi.T @ (spec.masses * np.asarray(x0, dtype=float))
    qd0 = phi.T @ (spec.masses * np.asarray(v0, dtype=float))
    n_samples = spec.n_samples
    modal_force = np.zeros((basis.n_modes, n_samples))
    q_hist, qd_hist, _, _ = _zoh_march(basis, modal_force, q0, qd0, spec.dt)
    disp = phi @ q_hist
    vel = phi @ qd_hist
    acc = phi @ (-basis.eigenvalues[:, None] * q_hist)
    return ResponseRecord(
        displacements=disp,
        velocities=vel,
        accelerations=acc,
        excitation_trace=np.zeros(n_samples),
        dt=spec.dt,
    )


def uniform_chain(
    n_dof: int,
    mass: float,
    stiffness: float,
    dt: float,
    duration: float,
) -> StructureSpec:
    """Convenience constructor for a uniform n-story chain."""
    return StructureSpec(
        masses=np.full(n_dof, float(mass)),
        stiffnesses=np.full(n_dof, float(stiffness)),
        dt=dt,
        duration=duration,
    )


def discrete_state_space(spec: StructureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Exact ZOH discrete transition/input matrices for the state [x; v].

    Continuous dynamics: d/dt [x; v] = A [x; v] + B f with
    A = [[0, I], [-M^-1 K, 0]], B = [[0], [M^-1]].
    """
    n = spec.n_dof
    minv_k = spec.stiffness_matrix() / spec.masses[:, None]
    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -minv_k
    b = np.zeros((2 * n, n))
    b[n:, :] = np.diag(1.0 / spec.masses)
    from scipy.linalg import expm

    aug = np.zeros((3 * n, 3 * n))
    aug[: 2 * n, : 2 * n] = a
    aug[: 2 * n, 2 * n :] = b
    exp_aug = expm(aug * spec.dt)
    return exp_aug[: 2 * n, : 2 * n], exp_aug[: 2 * n, 2 * n :]
