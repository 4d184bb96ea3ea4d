"""History variable and memory-space quadrature.

The history eta^t(s) = u(t) - u(t-s) is never evolved as a field of its
own: it is reconstructed on demand from a ring of past snapshots of u plus
an assigned initial history for ages reaching behind the start time,

    eta^t(s) = u(t) - u(t-s)                          for s <= t - tau,
    eta^t(s) = eta_tau(s - t + tau) + u(t) - u_tau    for s >  t - tau.

Memory integrals over s use two-point Gauss panels on a geometric grid
(64 nodes per decade), which keeps the kernel mass correct to better than
1e-6 relative while the grid tracks the kernel's shrinking decay scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import KernelTailError, TimeDependentKernel, gauss_panels
from .spectral import ModeBasis


class WindowUnderrunError(RuntimeError):
    """Requested past value older than the retained snapshot window."""


class InitialHistory:
    """Assigned history eta_tau on memory-age nodes, piecewise linear in s.

    Values beyond the last node extrapolate as a constant (fading tail);
    below the first node the profile interpolates to ``value_at_zero``
    (zero by default, matching histories that vanish at age 0+).
    """

    def __init__(self, s_nodes: np.ndarray, values: np.ndarray,
                 value_at_zero: np.ndarray | None = None):
        s_nodes = np.asarray(s_nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if s_nodes.ndim != 1 or np.any(np.diff(s_nodes) <= 0) or s_nodes[0] <= 0:
            raise ValueError("s_nodes must be increasing and positive")
        if values.shape[0] != s_nodes.size:
            raise ValueError("one value row per s node required")
        self.s_nodes = s_nodes
        self.values = values
        self.n_modes = values.shape[1]
        v0 = np.zeros(self.n_modes) if value_at_zero is None else np.asarray(value_at_zero)
        self._ext_s = np.concatenate([[0.0], s_nodes])
        self._ext_v = np.vstack([v0, values])
        self._is_zero = not np.any(self._ext_v)

    @classmethod
    def zero(cls, n_modes: int) -> "InitialHistory":
        return cls(np.array([1.0]), np.zeros((1, n_modes)))

    def eval(self, s) -> np.ndarray:
        """History values at ages s >= 0, shape (len(s), n_modes)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if self._is_zero:
            return np.zeros((s.size, self.n_modes))
        idx = np.clip(np.searchsorted(self._ext_s, s, side="right") - 1,
                      0, self._ext_s.size - 2)
        span = self._ext_s[idx + 1] - self._ext_s[idx]
        frac = np.clip((s - self._ext_s[idx]) / span, 0.0, 1.0)
        out = (1.0 - frac)[:, None] * self._ext_v[idx] + frac[:, None] * self._ext_v[idx + 1]
        tail = s >= self.s_nodes[-1]
        if np.any(tail):
            out[tail] = self.values[-1]
        return out


@dataclass
class SQuadrature:
    """Gauss nodes/weights over memory ages (0, s_max]."""

    nodes: np.ndarray
    weights: np.ndarray
    s_max: float

    def mass(self, kernel: TimeDependentKernel, t: float) -> float:
        return float(self.weights @ kernel.mu(t, self.nodes))


def build_s_quadrature(kernel: TimeDependentKernel, t_start: float, t_end: float,
                       tail_tol: float = 1e-8, panels_per_decade: int = 32,
                       s_min_factor: float = 1e-3) -> SQuadrature:
    """Quadrature adapted to the kernel over the simulated time range.

    s_max is chosen so the kernel tail mass stays below tail_tol * kappa at
    both ends of the range; the leading panel covers (0, s_min] where the
    kernel is bounded.  Raises KernelTailError if the built rule cannot
    reproduce the total mass to 1e-6 relative.
    """
    scale_lo = min(kernel.memory_scale(t_start), kernel.memory_scale(t_end))
    s_max = max(kernel.tail_cutoff(t_start, tail_tol), kernel.tail_cutoff(t_end, tail_tol))
    s_min = s_min_factor * scale_lo
    n_panels = max(int(np.ceil(np.log10(s_max / s_min) * panels_per_decade)), 8)
    edges = np.concatenate([[0.0], np.geomspace(s_min, s_max, n_panels + 1)])
    nodes, weights = gauss_panels(edges)
    quad = SQuadrature(nodes=nodes, weights=weights, s_max=s_max)
    for t in (t_start, t_end):
        kappa = kernel.total_mass(t)
        if abs(quad.mass(kernel, t) - kappa) > 1e-6 * kappa:
            raise KernelTailError(f"quadrature mass off by >1e-6 at t={t}")
    return quad


class HistoryBuffer:
    """Uniformly sampled past trajectory realizing the history variable.

    Owns a ring of snapshots u(tau + j*dt); ages beyond the retained window
    but inside t - tau raise WindowUnderrunError, while ages beyond t - tau
    fall through to the assigned initial history.
    """

    def __init__(self, dt: float, window: float, tau: float, u_tau: np.ndarray,
                 initial: InitialHistory, quad: SQuadrature | None = None):
        if dt <= 0 or window <= 0:
            raise ValueError("dt and window must be positive")
        self.dt = dt
        self.window = window
        self.tau = tau
        self.u_tau = np.array(u_tau, dtype=float)
        self.n_modes = self.u_tau.size
        self.initial = initial
        self.quad = quad
        self._cap = int(np.ceil(window / dt)) + 8
        self._ring = np.zeros((self._cap, self.n_modes))
        self._ring[0] = self.u_tau
        self._head = 0
        self._plans = {}

    @property
    def t_head(self) -> float:
        return self.tau + self._head * self.dt

    @property
    def u_head(self) -> np.ndarray:
        return self._ring[self._head % self._cap]

    def push(self, u: np.ndarray) -> None:
        self._head += 1
        self._ring[self._head % self._cap] = u

    def eta_matrix(self, s, t: float | None = None,
                   u_head: np.ndarray | None = None) -> np.ndarray:
        """History coefficients eta^t(s_i), shape (len(s), n_modes).

        ``t``/``u_head`` may override the buffer head (used for predictor
        evaluations between snapshots); t must lie in [t_head, t_head + dt].
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if t is None:
            t = self.t_head
        if u_head is None:
            u_head = self.u_head
        age_max = t - self.tau
        out = np.empty((s.size, self.n_modes))
        recon = s <= age_max * (1.0 + 1e-12)
        if not np.all(recon):
            assigned = ~recon
            out[assigned] = self.initial.eval(s[assigned] - age_max) + (u_head - self.u_tau)
        if np.any(recon):
            jf = (t - s[recon] - self.tau) / self.dt
            j = np.floor(jf).astype(np.int64)
            if np.any(self._head - j >= self._cap - 1):
                raise WindowUnderrunError("requested age outside retained window")
            past_head = j >= self._head
            j = np.clip(j, 0, self._head - 1) if self._head > 0 else np.zeros_like(j)
            frac = np.clip(jf - j, 0.0, 1.0)
            lo = self._ring[j % self._cap]
            hi = self._ring[(j + 1) % self._cap]
            u_past = (1.0 - frac)[:, None] * lo + frac[:, None] * hi
            if np.any(past_head):
                if t > self.t_head:
                    w = (t - s[recon][past_head] - self.t_head) / (t - self.t_head)
                    w = np.clip(w, 0.0, 1.0)
                    u_past[past_head] = ((1.0 - w)[:, None] * self.u_head
                                         + w[:, None] * np.asarray(u_head))
                else:
                    u_past[past_head] = self.u_head
            out[recon] = u_head - u_past
        return out

    def eta_at(self, t: float, s: float) -> np.ndarray:
        """Single history value eta^t(s) as a coefficient vector."""
        return self.eta_matrix(np.array([s]), t=t)[0]

    def _plan(self, half_step: bool):
        """Constant interpolation lags/fractions for the quadrature ages.

        On the step grid the past times t - s_j fall at fixed offsets from
        the snapshot grid, so the linear-interpolation stencil of every
        quadrature node can be precomputed once per buffer.  Ages are
        increasing, so the three regimes (ahead of the newest snapshot,
        reconstructed, assigned) are always contiguous prefixes/suffixes.
        """
        key = bool(half_step)
        plan = self._plans.get(key)
        if plan is None:
            if self.quad is None:
                raise ValueError("buffer carries no quadrature")
            offset = 0.5 if half_step else 0.0
            lag_f = self.quad.nodes / self.dt - offset
            lag = np.ceil(lag_f).astype(np.int64)
            if np.max(lag) > self._cap - 2:
                raise WindowUnderrunError("quadrature ages exceed the snapshot window")
            n_ahead = int(np.searchsorted(lag_f, 0.0, side="right"))
            head_w = (-lag_f[:n_ahead] / max(offset, 1.0))[:, None]
            frac = (lag - lag_f)[:, None]
            plan = (lag, frac, lag_f, n_ahead, head_w)
            self._plans[key] = plan
        return plan

    def eta_on_grid(self, half_step: bool = False,
                    u_head: np.ndarray | None = None) -> np.ndarray:
        """History matrix at the quadrature ages for t = t_head (+ dt/2).

        Fast path for the integrator and recorders: equivalent to
        eta_matrix(quad.nodes, t, u_head) when t sits on the step grid or
        exactly halfway (with ``u_head`` the predictor value there).
        """
        lag, frac, lag_f, n_ahead, head_w = self._plan(half_step)
        head = self._head
        ring = self._ring
        u_now = self.u_head if u_head is None else np.asarray(u_head)
        n_recon = int(np.searchsorted(lag, head, side="right"))
        out = np.empty((lag.size, self.n_modes))
        if n_ahead:
            # past time between the newest snapshot and the override head
            out[:n_ahead] = (1.0 - head_w) * (u_now - ring[head % self._cap])
        sl = slice(n_ahead, n_recon)
        idx = head - lag[sl]
        f = frac[sl]
        out[sl] = u_now - ((1.0 - f) * ring[idx % self._cap]
                           + f * ring[(idx + 1) % self._cap])
        if n_recon < lag.size:
            base = u_now - self.u_tau
            if self.initial._is_zero:
                out[n_recon:] = base
            else:
                ages = (lag_f[n_recon:] - head) * self.dt
                out[n_recon:] = self.initial.eval(ages) + base
        return out

    def export_rows(self):
        """(t, mode, coefficient) rows for the retained snapshots."""
        first = max(0, self._head - self._cap + 1)
        for j in range(first, self._head + 1):
            u = self._ring[j % self._cap]
            t = self.tau + j * self.dt
            for k in range(self.n_modes):
                yield (t, k + 1, u[k])


def _weighted_mu(kernel: TimeDependentKernel, t: float, quad: SQuadrature) -> np.ndarray:
    return quad.weights * kernel.mu(t, quad.nodes)


def memory_force(basis: ModeBasis, buffer: HistoryBuffer, kernel: TimeDependentKernel,
                 t: float | None = None, u_head: np.ndarray | None = None,
                 quad: SQuadrature | None = None) -> np.ndarray:
    """Modewise memory force: lam_k * integral mu_t(s) eta_k^t(s) ds."""
    quad = quad if quad is not None else buffer.quad
    if t is None:
        t = buffer.t_head
    H = buffer.eta_matrix(quad.nodes, t=t, u_head=u_head)
    return basis.eigenvalues * (_weighted_mu(kernel, t, quad) @ H)


def memory_norm2(basis: ModeBasis, buffer: HistoryBuffer, kernel: TimeDependentKernel,
                 sigma: float, t: float | None = None,
                 quad: SQuadrature | None = None) -> float:
    """Squared memory norm: integral mu_t(s) ||eta^t(s)||_{sigma+1}^2 ds."""
    quad = quad if quad is not None else buffer.quad
    if t is None:
        t = buffer.t_head
    H = buffer.eta_matrix(quad.nodes, t=t)
    return matrix_memory_norm2(basis, _weighted_mu(kernel, t, quad), H, sigma)


def memory_inner(basis: ModeBasis, buffer: HistoryBuffer, kernel: TimeDependentKernel,
                 other: np.ndarray, sigma: float, t: float | None = None,
                 quad: SQuadrature | None = None) -> float:
    """Memory-space pairing integral mu_t(s) <eta^t(s), other>_{sigma+1} ds."""
    quad = quad if quad is not None else buffer.quad
    if t is None:
        t = buffer.t_head
    H = buffer.eta_matrix(quad.nodes, t=t)
    wmu = _weighted_mu(kernel, t, quad)
    return float(wmu @ (H @ (basis.lam_pow(sigma + 1.0) * other)))


def memory_dissipation(basis: ModeBasis, buffer: HistoryBuffer,
                       kernel: TimeDependentKernel, sigma: float,
                       t: float | None = None,
                       quad: SQuadrature | None = None) -> float:
    """integral [dmu/dt + dmu/ds](t, s) ||eta^t(s)||_{sigma+1}^2 ds (nonpositive for admissible kernels)."""
    quad = quad if quad is not None else buffer.quad
    if t is None:
        t = buffer.t_head
    H = buffer.eta_matrix(quad.nodes, t=t)
    wd = quad.weights * (kernel.dmu_dt(t, quad.nodes) + kernel.dmu_ds(t, quad.nodes))
    return matrix_memory_norm2(basis, wd, H, sigma)


def matrix_memory_norm2(basis: ModeBasis, weighted: np.ndarray, H: np.ndarray,
                        sigma: float) -> float:
    """Reduce an explicit history matrix against precomputed s-weights."""
    return float(weighted @ ((H * H) @ basis.lam_pow(sigma + 1.0)))


def frozen_history_norm2(basis: ModeBasis, kernel: TimeDependentKernel, t: float,
                         history: InitialHistory, sigma: float,
                         quad: SQuadrature) -> float:
    """Memory norm of a frozen (assigned) history under the kernel at time t."""
    H = history.eval(quad.nodes)
    return matrix_memory_norm2(basis, _weighted_mu(kernel, t, quad), H, sigma)


def validate_quadrature_mass(kernel: TimeDependentKernel, t: float, quad: SQuadrature,
                             rtol: float = 1e-6) -> None:
    kappa = kernel.total_mass(t)
    if abs(quad.mass(kernel, t) - kappa) > rtol * kappa:
        raise KernelTailError(f"quadrature mass drifted beyond {rtol} at t={t}")
