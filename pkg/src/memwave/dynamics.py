"""Time integration of the memory wave equation in spectral form.

Each mode solves u_k'' + lam_k u_k = F_k exactly over a step, withF_k
(forcing minus nonlinearity minus memory force) frozen at the step
midpoint via one predictor pass.  The linear oscillator part is therefore
exact per mode and step error never masquerades as dissipation, which is
what the energy and decay checks downstream rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .history import (
    HistoryBuffer,
    InitialHistory,
    SQuadrature,
    build_s_quadrature,
    matrix_memory_norm2,
    validate_quadrature_mass,
)
from .kernels import TimeDependentKernel
from .spectral import ModeBasis, Nonlinearity, apply_nonlinearity

SIGMAS = (0.0, 1.0 / 3.0, 1.0)

SPLIT_CLIPPED = "clipped"  # decaying part carries the outer nonlinearity f0
SPLIT_LINEAR = "linear"    # decaying part is fully linear, f0 = 0 and f1 = f


class InstabilityError(RuntimeError):
    """State norm crossed the blow-up threshold or went non-finite."""


@dataclass
class ProcessConfig:
    """Everything the solution process needs besides initial data."""

    basis: ModeBasis
    kernel: TimeDependentKernel | None
    nl: Nonlinearity
    g: np.ndarray
    dt: float = 1e-3
    tail_tol: float = 1e-8
    blowup_threshold: float = 1e8

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.blowup_threshold <= 0:
            raise ValueError("blowup_threshold must be positive")


@dataclass
class ExtendedState:
    """Snapshot (u, du/dt, history access) at a time stamp."""

    t: float
    u: np.ndarray
    v: np.ndarray
    history: HistoryBuffer | None


@dataclass
class Trajectory:
    """Sampled scalar records along one run; fields keyed by sigma."""

    times: np.ndarray
    u_norm2: dict = field(default_factory=dict)    # ||u||_{sigma+1}^2
    v_norm2: dict = field(default_factory=dict)    # ||v||_sigma^2
    mem_norm2: dict = field(default_factory=dict)  # ||eta||_{M_t^sigma}^2
    phi: dict = field(default_factory=dict)
    psi: dict = field(default_factory=dict)
    gamma_term: dict = field(default_factory=dict)  # 2<A^(s/2)(f(u)-g), A^(s/2)u>
    monitor: "MemoryMonitor | None" = None
    final: ExtendedState | None = None

    def energy(self, sigma: float) -> np.ndarray:
        """E_sigma(t) = half the squared extended-state norm."""
        return 0.5 * (self.u_norm2[sigma] + self.v_norm2[sigma] + self.mem_norm2[sigma])

    def state_norm2(self, sigma: float) -> np.ndarray:
        return self.u_norm2[sigma] + self.v_norm2[sigma] + self.mem_norm2[sigma]


@dataclass
class MemoryMonitor:
    """Fine-stride memory records for integral inequality checks."""

    times: np.ndarray
    norm2: dict          # sigma -> ||eta^t||_{M_t^sigma}^2
    inner_v: dict        # sigma -> <v(t), eta^t>_{M_t^sigma}
    dissipation: dict    # sigma -> integral (dmu_dt+dmu_ds)||eta(s)||_{sigma+1}^2 ds


@dataclass
class SplitRun:
    full: Trajectory
    u0_part: Trajectory
    u1_part: Trajectory
    mode: str


@dataclass
class DifferenceRun:
    """Distance records between two runs sharing a configuration."""

    times: np.ndarray
    dist2: np.ndarray        # ||z1(t) - z2(t)||^2 in the product norm at sigma=0
    accum: np.ndarray        # running integral of ||u1 - u2||_{L^2}^2
    initial_dist2: float


class _Propagator:
    """Exact per-mode propagation of u'' + lam u = F over fixed substeps."""

    def __init__(self, basis: ModeBasis, dt: float):
        lam = basis.eigenvalues
        self.lam = lam
        omega = np.sqrt(lam)
        self.tables = {}
        for name, h in (("half", 0.5 * dt), ("full", dt)):
            self.tables[name] = (
                np.cos(omega * h),
                np.sin(omega * h) / omega,
                -omega * np.sin(omega * h),
            )

    def advance(self, u, v, force, which):
        cos_t, sinc_t, msin_t = self.tables[which]
        u_eq = force / self.lam
        du = u - u_eq
        return u_eq + du * cos_t + v * sinc_t, du * msin_t + v * cos_t


class _System:
    """One trajectory being stepped: state plus its history buffer."""

    def __init__(self, u, v, buffer):
        self.u = np.array(u, dtype=float)
        self.v = np.array(v, dtype=float)
        self.buffer = buffer

    def eta_now(self):
        return self.buffer.eta_on_grid(False)

    def eta_mid(self, u_pred):
        return self.buffer.eta_on_grid(True, u_pred)


def _make_buffer(config: ProcessConfig, tau: float, t_end: float, u0: np.ndarray,
                 initial: InitialHistory | None, quad: SQuadrature | None):
    if config.kernel is None:
        return None, None
    if quad is None:
        quad = build_s_quadrature(config.kernel, tau, max(t_end, tau + config.dt),
                                  tail_tol=config.tail_tol)
    if initial is None:
        initial = InitialHistory.zero(config.basis.n_modes)
    buf = HistoryBuffer(config.dt, quad.s_max, tau, u0, initial, quad=quad)
    return buf, quad


def _check_finite(config: ProcessConfig, u, v, t):
    basis = config.basis
    size = basis.sigma_norm(u, 1.0) + basis.sigma_norm(v, 0.0)
    if not np.isfinite(size) or size > config.blowup_threshold:
        raise InstabilityError(f"state norm {size!r} at t={t}")


class _Recorder:
    """Accumulates per-sample scalars; one history matrix per event."""

    def __init__(self, config, quad, sigmas, want_functionals=True):
        self.config = config
        self.quad = quad
        self.sigmas = tuple(sigmas)
        self.want_functionals = want_functionals
        self.rows = {name: {s: [] for s in self.sigmas}
                     for name in ("u_norm2", "v_norm2", "mem_norm2",
                                  "phi", "psi", "gamma_term")}
        self.times = []

    def record(self, t, system: _System):
        basis, kernel = self.config.basis, self.config.kernel
        lam = basis.eigenvalues
        self.times.append(t)
        H = wmu = None
        if kernel is not None:
            H = system.eta_now()
            wmu = self.quad.weights * kernel.mu(t, self.quad.nodes)
            kappa = kernel.total_mass(t)
        if self.want_functionals and self.config.nl.name != "zero":
            fu = apply_nonlinearity(basis, self.config.nl, "full", system.u)
        else:
            fu = np.zeros_like(system.u)
        gamma = fu - self.config.g
        for s in self.sigmas:
            r = self.rows
            r["u_norm2"][s].append(basis.sigma_norm2(system.u, s + 1.0))
            r["v_norm2"][s].append(basis.sigma_norm2(system.v, s))
            r["phi"][s].append(2.0 * basis.sigma_inner(system.u, system.v, s))
            r["gamma_term"][s].append(2.0 * basis.sigma_inner(gamma, system.u, s))
            if kernel is None:
                r["mem_norm2"][s].append(0.0)
                r["psi"][s].append(0.0)
            else:
                r["mem_norm2"][s].append(matrix_memory_norm2(basis, wmu, H, s))
                r["psi"][s].append(-2.0 / kappa * float(wmu @ (H @ (basis.lam_pow(s) * system.v))))

    def build(self, final_state, monitor=None) -> Trajectory:
        traj = Trajectory(times=np.array(self.times), monitor=monitor, final=final_state)
        for name, per_sigma in self.rows.items():
            getattr(traj, name).update({s: np.array(vals) for s, vals in per_sigma.items()})
        return traj


class _MonitorRecorder:
    def __init__(self, config, quad, sigmas):
        self.config = config
        self.quad = quad
        self.sigmas = tuple(sigmas)
        self.times = []
        self.norm2 = {s: [] for s in self.sigmas}
        self.inner_v = {s: [] for s in self.sigmas}
        self.dissipation = {s: [] for s in self.sigmas}

    def record(self, t, system: _System):
        basis, kernel = self.config.basis, self.config.kernel
        lam = basis.eigenvalues
        H = system.eta_now()
        mu = kernel.mu(t, self.quad.nodes)
        wmu = self.quad.weights * mu
        wd = self.quad.weights * (kernel.dmu_dt(t, self.quad.nodes)
                                  + kernel.dmu_ds(t, self.quad.nodes))
        H2 = H * H
        self.times.append(t)
        for s in self.sigmas:
            w = basis.lam_pow(s + 1.0)
            self.norm2[s].append(float(wmu @ (H2 @ w)))
            self.inner_v[s].append(float(wmu @ (H @ (w * system.v))))
            self.dissipation[s].append(float(wd @ (H2 @ w)))

    def build(self) -> MemoryMonitor:
        pack = lambda d: {s: np.array(v) for s, v in d.items()}
        return MemoryMonitor(times=np.array(self.times), norm2=pack(self.norm2),
                             inner_v=pack(self.inner_v), dissipation=pack(self.dissipation))


def _stage_forces(prop, systems, force_fns, t, dt):
    """One predictor-corrector step shared by all coupled systems."""
    forces_now = force_fns(t, [sys.u for sys in systems], head=None)
    predictors = [prop.advance(sys.u, sys.v, forces_now[i], "half")[0]
                  for i, sys in enumerate(systems)]
    forces_mid = force_fns(t + 0.5 * dt, predictors, head=predictors)
    for i, sys in enumerate(systems):
        sys.u, sys.v = prop.advance(sys.u, sys.v, forces_mid[i], "full")
        if sys.buffer is not None:
            sys.buffer.push(sys.u)


def _single_force_fn(config: ProcessConfig, quad):
    basis, kernel, nl, g = config.basis, config.kernel, config.nl, config.g
    lam = basis.eigenvalues

    def forces(t, us, head, systems):
        u = us[0]
        f_term = apply_nonlinearity(basis, nl, "full", u) if nl.name != "zero" else 0.0
        mem = 0.0
        if kernel is not None:
            H = systems[0].eta_now() if head is None else systems[0].eta_mid(head[0])
            mem = lam * ((quad.weights * kernel.mu(t, quad.nodes)) @ H)
        return [g - f_term - mem]

    return forces


def _coerce_initial(z_tau, config: ProcessConfig):
    """Accept an ExtendedState (continuation) or a (u, v, initial_history) triple."""
    if isinstance(z_tau, ExtendedState):
        return z_tau.u, z_tau.v, None, z_tau.history
    u, v, hist = z_tau
    if hist is None:
        hist = InitialHistory.zero(config.basis.n_modes)
    return np.asarray(u, dtype=float), np.asarray(v, dtype=float), hist, None


def step(state: ExtendedState, config: ProcessConfig) -> ExtendedState:
    """Advance one dt.  Convenience wrapper; evolve() is the fast path."""
    traj = evolve(state, state.t, state.t + config.dt, config, sample_every=10**9)
    return traj.final


def evolve(z_tau, tau: float, t_end: float, config: ProcessConfig, *,
           sample_every: int = 10, record_sigmas=SIGMAS,
           monitor_sigmas=None, monitor_every: int = 1,
           quad: SQuadrature | None = None, want_functionals: bool = True) -> Trajectory:
    """Run the process from tau to t_end and sample the trajectory.

    ``z_tau`` is a (u, v, initial_history) triple, or an ExtendedState from
    a previous run to continue (its history buffer is reused, so chaining
    runs reproduces a single longer run exactly).
    """
    if t_end < tau:
        raise ValueError("t_end must be >= tau")
    u0, v0, initial, buffer = _coerce_initial(z_tau, config)
    if buffer is None:
        buffer, quad = _make_buffer(config, tau, t_end, u0, initial, quad)
    else:
        quad = buffer.quad
        if abs(buffer.t_head - tau) > 1e-9:
            raise ValueError("continuation state time does not match tau")
    system = _System(u0, v0, buffer)
    prop = _Propagator(config.basis, config.dt)
    raw_force = _single_force_fn(config, quad)
    force_fns = lambda t, us, head: raw_force(t, us, head, [system])

    recorder = _Recorder(config, quad, record_sigmas, want_functionals)
    mon = _MonitorRecorder(config, quad, monitor_sigmas) \
        if (monitor_sigmas and config.kernel is not None) else None

    n_steps = int(round((t_end - tau) / config.dt))
    recorder.record(tau, system)
    if mon:
        mon.record(tau, system)
    for j in range(1, n_steps + 1):
        t_prev = tau + (j - 1) * config.dt
        _stage_forces(prop, [system], force_fns, t_prev, config.dt)
        t_now = tau + j * config.dt
        _check_finite(config, system.u, system.v, t_now)
        if j % sample_every == 0 or j == n_steps:
            recorder.record(t_now, system)
            if config.kernel is not None and j % (50 * sample_every) == 0:
                validate_quadrature_mass(config.kernel, t_now, quad)
        if mon and (j % monitor_every == 0 or j == n_steps):
            mon.record(t_now, system)
    final = ExtendedState(tau + n_steps * config.dt, system.u.copy(), system.v.copy(),
                          system.buffer)
    return recorder.build(final, mon.build() if mon else None)


def evolve_split(z_tau, tau: float, t_end: float, config: ProcessConfig,
                 mode: str = SPLIT_LINEAR, *, sample_every: int = 10,
                 record_sigmas=SIGMAS, quad: SQuadrature | None = None) -> SplitRun:
    """Run the solution splitting: full = decaying part + bounded part.

    In ``clipped`` mode the decaying part keeps the outer nonlinearity f0 of
    the splitting f = f0 + f1; in ``linear`` mode it is fully linear and the
    bounded part carries all of f.  The decaying part starts from the full
    initial data, the bounded part from zero.
    """
    if mode not in (SPLIT_CLIPPED, SPLIT_LINEAR):
        raise ValueError(f"unknown split mode {mode!r}")
    if config.kernel is None:
        quad = None
    u0, v0, initial, buffer = _coerce_initial(z_tau, config)
    if buffer is not None:
        raise ValueError("evolve_split needs explicit initial data, not a continuation")
    basis, kernel, nl, g = config.basis, config.kernel, config.nl, config.g
    lam = basis.eigenvalues
    buf_full, quad = _make_buffer(config, tau, t_end, u0, initial, quad)
    buf_u0, _ = _make_buffer(config, tau, t_end, u0, initial, quad)
    buf_u1, _ = _make_buffer(config, tau, t_end, np.zeros_like(u0),
                             InitialHistory.zero(basis.n_modes), quad)
    systems = [_System(u0, v0, buf_full), _System(u0, v0, buf_u0),
               _System(np.zeros_like(u0), np.zeros_like(v0), buf_u1)]
    prop = _Propagator(basis, config.dt)
    zero = np.zeros_like(u0)

    def forces(t, us, head):
        uf, u0p, _ = us
        if kernel is not None:
            wmu = quad.weights * kernel.mu(t, quad.nodes)
            if head is None:
                mems = [lam * (wmu @ systems[i].eta_now()) for i in range(3)]
            else:
                mems = [lam * (wmu @ systems[i].eta_mid(head[i])) for i in range(3)]
        else:
            mems = [0.0, 0.0, 0.0]
        if mode == SPLIT_CLIPPED:
            f0_full = apply_nonlinearity(basis, nl, "f0", uf)
            f1_full = apply_nonlinearity(basis, nl, "f1", uf)
            f0_part = apply_nonlinearity(basis, nl, "f0", u0p)
            return [g - f0_full - f1_full - mems[0],
                    -f0_part - mems[1],
                    g - (f0_full - f0_part + f1_full) - mems[2]]
        f_full = apply_nonlinearity(basis, nl, "full", uf) if nl.name != "zero" else zero
        return [g - f_full - mems[0], -mems[1], g - f_full - mems[2]]

    recorders = [_Recorder(config, quad, record_sigmas) for _ in range(3)]
    n_steps = int(round((t_end - tau) / config.dt))
    for rec, sys in zip(recorders, systems):
        rec.record(tau, sys)
    for j in range(1, n_steps + 1):
        _stage_forces(prop, systems, forces, tau + (j - 1) * config.dt, config.dt)
        t_now = tau + j * config.dt
        _check_finite(config, systems[0].u, systems[0].v, t_now)
        if j % sample_every == 0 or j == n_steps:
            for rec, sys in zip(recorders, systems):
                rec.record(t_now, sys)
    t_fin = tau + n_steps * config.dt
    trajs = [rec.build(ExtendedState(t_fin, sys.u.copy(), sys.v.copy(), sys.buffer))
             for rec, sys in zip(recorders, systems)]
    return SplitRun(full=trajs[0], u0_part=trajs[1], u1_part=trajs[2], mode=mode)


def difference_run(z1, z2, tau: float, t_end: float, config: ProcessConfig, *,
                   sample_every: int = 10, quad: SQuadrature | None = None) -> DifferenceRun:
    """Run two initial states in lockstep and record their separation.

    Returns the squared product-space distance at sample times together
    with the running (trapezoidal, per-step) integral of the squared L^2
    distance of the displacement components.
    """
    basis, kernel = config.basis, config.kernel
    lam = basis.eigenvalues
    u1, v1, hist1, b1 = _coerce_initial(z1, config)
    u2, v2, hist2, b2 = _coerce_initial(z2, config)
    if b1 is not None or b2 is not None:
        raise ValueError("difference_run needs explicit initial data")
    buf1, quad = _make_buffer(config, tau, t_end, u1, hist1, quad)
    buf2, _ = _make_buffer(config, tau, t_end, u2, hist2, quad)
    systems = [_System(u1, v1, buf1), _System(u2, v2, buf2)]
    prop = _Propagator(basis, config.dt)
    raw = _single_force_fn(config, quad)

    def forces(t, us, head):
        out = []
        for i in range(2):
            h = None if head is None else [head[i]]
            out.extend(raw(t, [us[i]], h, [systems[i]]))
        return out

    def dist2_now(t):
        du = systems[0].u - systems[1].u
        dv = systems[0].v - systems[1].v
        total = basis.sigma_norm2(du, 1.0) + basis.sigma_norm2(dv, 0.0)
        if kernel is not None:
            Hd = systems[0].eta_now() - systems[1].eta_now()
            wmu = quad.weights * kernel.mu(t, quad.nodes)
            total += matrix_memory_norm2(basis, wmu, Hd, 0.0)
        return total

    def u_gap2():
        du = systems[0].u - systems[1].u
        return float(du @ du)

    n_steps = int(round((t_end - tau) / config.dt))
    times, dist2, accum_samples = [tau], [dist2_now(tau)], [0.0]
    accum = 0.0
    gap_prev = u_gap2()
    for j in range(1, n_steps + 1):
        _stage_forces(prop, systems, forces, tau + (j - 1) * config.dt, config.dt)
        t_now = tau + j * config.dt
        _check_finite(config, systems[0].u, systems[0].v, t_now)
        gap_now = u_gap2()
        accum += 0.5 * config.dt * (gap_prev + gap_now)
        gap_prev = gap_now
        if j % sample_every == 0 or j == n_steps:
            times.append(t_now)
            dist2.append(dist2_now(t_now))
            accum_samples.append(accum)
    return DifferenceRun(times=np.array(times), dist2=np.array(dist2),
                         accum=np.array(accum_samples), initial_dist2=dist2[0])


def state_norm2(config: ProcessConfig, state: ExtendedState, sigma: float) -> float:
    """Squared extended-state norm ||z||^2 at level sigma."""
    basis = config.basis
    total = basis.sigma_norm2(state.u, sigma + 1.0) + basis.sigma_norm2(state.v, sigma)
    if config.kernel is not None and state.history is not None:
        from .history import memory_norm2
        total += memory_norm2(basis, state.history, config.kernel, sigma)
    return total
