"""Time-dependent memory kernels and their admissibility audit.

A kernel is the map (t, s) -> mu_t(s) weighting the influence of the
deformation history at age s on the stress at time t, together with its t-
and s-derivatives and total mass kappa(t).  The audit certifies, on finite
grids, the admissibility conditions the analysis needs:

    monotone_summable   mu >= 0, nonincreasing and summable in s
    domination          mu_t(s) <= K_tau(t) mu_tau(s) for t >= tau
    locally_bounded     mu and dmu/dt bounded on compact (t, s) boxes
    decay_margin        dmu/dt + dmu/ds + delta*kappa*mu <= 0 for some delta > 0
    mass_floor          inf_t kappa(t) > 0
    drift_ratio         sup_t kappa^-2 * integral |dmu/dt| ds finite
    zero_limit_ratio    sup_t mu_t(0+) / kappa^2 finite
    core_mass           some nu > 0 keeps half the mass inside [nu, 1/nu]

Audits certify grid points only; the conditions hold a.e. in the continuum
and the grid is the testable surrogate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

CONDITIONS = (
    "monotone_summable",
    "domination",
    "locally_bounded",
    "decay_margin",
    "mass_floor",
    "drift_ratio",
    "zero_limit_ratio",
    "core_mass",
)


class KernelTailError(RuntimeError):
    """Raised when a kernel quadrature cannot resolve the tail mass."""


class UnboundedRatioError(ValueError):
    """Raised when mu_tau vanishes where mu_t does not (no domination factor)."""


def gauss_panels(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-point Gauss-Legendre nodes/weights on each panel [edges_i, edges_i+1]."""
    edges = np.asarray(edges, dtype=float)
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    off = half / np.sqrt(3.0)
    nodes = np.concatenate([mid - off, mid + off])
    weights = np.concatenate([half, half])
    order = np.argsort(nodes)
    return nodes[order], weights[order]


class TimeDependentKernel:
    """Base kernel interface; subclasses supply mu and optionally derivatives.

    ``mu(t, s)`` must accept a scalar t and vectorized s.  Derivative
    fallbacks use central finite differences with relative step 1e-5; the
    total-mass fallback integrates on geometric Gauss panels, extending the
    horizon until the tail estimate drops below tolerance.
    """

    deriv_step = 1e-5

    def mu(self, t: float, s):
        raise NotImplementedError

    def dmu_dt(self, t: float, s):
        h = self.deriv_step * max(1.0, abs(t))
        return (self.mu(t + h, s) - self.mu(t - h, s)) / (2.0 * h)

    def dmu_ds(self, t: float, s):
        s = np.asarray(s, dtype=float)
        h = self.deriv_step * np.maximum(s, 1e-12)
        return (self.mu(t, s + h) - self.mu(t, np.maximum(s - h, 1e-300))) / (2.0 * h)

    def memory_scale(self, t: float) -> float:
        """Characteristic decay scale in s (kappa / mu(0+) for exponential-type kernels)."""
        m0 = float(self.mu(t, np.array([1e-12]))[0])
        if m0 <= 0.0:
            raise KernelTailError("kernel vanishes near s=0, no natural scale")
        return self.total_mass(t) / m0

    def total_mass(self, t: float) -> float:
        return self._quadrature_mass(t)

    def _quadrature_mass(self, t: float, rtol: float = 1e-11) -> float:
        m0 = float(self.mu(t, np.array([1e-12]))[0])
        if m0 == 0.0:
            return 0.0
        # crude scale from the 1/e point of mu to split off the head region
        s_probe = np.geomspace(1e-10, 1e6, 321)
        vals = self.mu(t, s_probe)
        below = np.nonzero(vals <= m0 / np.e)[0]
        scale = float(s_probe[below[0]]) if below.size else 1.0
        f = lambda s: float(self.mu(t, np.array([s]))[0])
        head, head_err = integrate.quad(f, 0.0, 50.0 * scale, limit=200,
                                        epsabs=0.0, epsrel=rtol)
        tail, tail_err = integrate.quad(f, 50.0 * scale, np.inf, limit=200)
        total = head + tail
        if head_err + tail_err > 100.0 * rtol * max(total, 1e-300):
            raise KernelTailError(f"tail mass did not converge for t={t}")
        return total

    def tail_cutoff(self, t: float, tol: float) -> float:
        """Smallest s_max with tail mass below tol * kappa(t) (bisection)."""
        kappa = self.total_mass(t)
        scale = self.memory_scale(t)
        hi = scale
        for _ in range(200):
            tail = self._tail_mass(t, hi)
            if tail < tol * kappa:
                break
            hi *= 1.5
        else:
            raise KernelTailError(f"no tail cutoff below tolerance at t={t}")
        lo = hi / 1.5
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self._tail_mass(t, mid) < tol * kappa:
                hi = mid
            else:
                lo = mid
        return hi

    def _tail_mass(self, t: float, s_from: float) -> float:
        nodes, weights = gauss_panels(np.geomspace(s_from, s_from * 1e6, 161))
        return float(weights @ self.mu(t, nodes))


class ArctanExponentialKernel(TimeDependentKernel):
    """Exponential kernel with slowly shrinking width eps(t).

    mu_t(s) = eps(t)^-2 exp(-s / eps(t)) with eps(t) = (pi/2 - arctan t)/4,
    so eps decreases from pi/4 to 0 and the total mass 1/eps(t) grows: the
    material stiffens with age.  All derivatives and the mass are closed
    form.
    """

    def eps(self, t: float) -> float:
        return 0.25 * (0.5 * np.pi - np.arctan(t))

    def deps_dt(self, t: float) -> float:
        return -0.25 / (1.0 + t * t)

    def mu(self, t: float, s):
        e = self.eps(t)
        return np.exp(-np.asarray(s, dtype=float) / e) / (e * e)

    def dmu_dt(self, t: float, s):
        s = np.asarray(s, dtype=float)
        e = self.eps(t)
        return self.mu(t, s) * self.deps_dt(t) * (s - 2.0 * e) / (e * e)

    def dmu_ds(self, t: float, s):
        return -self.mu(t, s) / self.eps(t)

    def total_mass(self, t: float) -> float:
        return 1.0 / self.eps(t)

    def memory_scale(self, t: float) -> float:
        return self.eps(t)

    def tail_cutoff(self, t: float, tol: float) -> float:
        return self.eps(t) * np.log(1.0 / tol)


class CallableKernel(TimeDependentKernel):
    """Kernel assembled from user callbacks, with numeric fallbacks."""

    def __init__(self, mu, dmu_dt=None, dmu_ds=None, total_mass=None, scale=None):
        self._mu = mu
        self._dmu_dt = dmu_dt
        self._dmu_ds = dmu_ds
        self._total_mass = total_mass
        self._scale = scale

    def mu(self, t, s):
        return np.asarray(self._mu(t, np.asarray(s, dtype=float)), dtype=float)

    def dmu_dt(self, t, s):
        if self._dmu_dt is not None:
            return np.asarray(self._dmu_dt(t, np.asarray(s, dtype=float)), dtype=float)
        return super().dmu_dt(t, s)

    def dmu_ds(self, t, s):
        if self._dmu_ds is not None:
            return np.asarray(self._dmu_ds(t, np.asarray(s, dtype=float)), dtype=float)
        return super().dmu_ds(t, s)

    def total_mass(self, t):
        if self._total_mass is not None:
            return float(self._total_mass(t))
        return super().total_mass(t)

    def memory_scale(self, t):
        if self._scale is not None:
            return float(self._scale(t))
        return super().memory_scale(t)


def autonomous_exponential_kernel() -> CallableKernel:
    """The time-frozen unit kernel mu(s) = exp(-s), kappa = 1."""
    return CallableKernel(
        mu=lambda t, s: np.exp(-s),
        dmu_dt=lambda t, s: np.zeros_like(s),
        dmu_ds=lambda t, s: -np.exp(-s),
        total_mass=lambda t: 1.0,
        scale=lambda t: 1.0,
    )


def eval_mu(kernel: TimeDependentKernel, t: float, s):
    """Evaluate mu_t(s); memory ages must be positive."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0.0):
        raise ValueError("memory age s must be > 0")
    out = kernel.mu(t, s_arr)
    return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def total_mass(kernel: TimeDependentKernel, t: float) -> float:
    """Total mass kappa(t) of the kernel at time t."""
    return kernel.total_mass(t)


def default_s_grid(kernel: TimeDependentKernel, t: float, n: int = 201,
                   lo_factor: float = 1e-4, hi_factor: float = 40.0) -> np.ndarray:
    scale = kernel.memory_scale(t)
    return np.geomspace(lo_factor * scale, hi_factor * scale, n)


@dataclass
class KernelAudit:
    """Grid certificate for the admissibility conditions."""

    t_grid: np.ndarray
    s_grids: np.ndarray  # one row of memory ages per t node
    pass_flags: dict = field(default_factory=dict)
    delta_star: float = 0.0
    m6_sup: float = np.inf
    m7_sup: float = np.inf
    nu_found: dict = field(default_factory=dict)
    K_bound: dict = field(default_factory=dict)
    mass_inf: float = 0.0
    mass_quad_err: float = np.inf
    decay_residual: np.ndarray | None = None

    @property
    def all_pass(self) -> bool:
        return all(self.pass_flags.get(c, False) for c in CONDITIONS)

    def to_csv(self, path) -> None:
        """Emit rows (condition, t, s, residual, pass)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["condition", "t", "s", "residual", "pass"])
            if self.decay_residual is not None:
                for i, t in enumerate(self.t_grid):
                    j = int(np.argmax(self.decay_residual[i]))
                    writer.writerow(["decay_margin", t, self.s_grids[i, j],
                                     self.decay_residual[i, j],
                                     self.decay_residual[i, j] <= 0.0])
            for cond in CONDITIONS:
                writer.writerow([cond, "", "", "", self.pass_flags.get(cond, False)])
            writer.writerow(["delta_star", "", "", self.delta_star, self.delta_star > 0])
            writer.writerow(["drift_ratio_sup", "", "", self.m6_sup, np.isfinite(self.m6_sup)])
            writer.writerow(["zero_limit_ratio_sup", "", "", self.m7_sup, np.isfinite(self.m7_sup)])


def embedding_bound(kernel: TimeDependentKernel, tau: float, t: float,
                    s_grid: np.ndarray | None = None) -> float:
    """Domination factor K_tau(t) = sup_s mu_t(s) / mu_tau(s) on the grid."""
    if t < tau:
        raise ValueError("need t >= tau")
    if s_grid is None:
        s_grid = default_s_grid(kernel, tau)
    mu_tau = kernel.mu(tau, s_grid)
    mu_t = kernel.mu(t, s_grid)
    dead = mu_tau <= 0.0
    if np.any(dead & (mu_t > 0.0)):
        raise UnboundedRatioError("mu_tau vanishes where mu_t does not")
    ratio = np.where(dead, 0.0, mu_t / np.where(dead, 1.0, mu_tau))
    sup = float(np.max(ratio))
    return max(sup, 1.0) if t == tau else sup


def _condition_decay(kernel, t_grid, s_grids, mu_rows, kappa, rel_tol=1e-10):
    """Largest delta with dmu/dt + dmu/ds + delta*kappa*mu <= 0 on the grid."""
    drift = np.empty_like(mu_rows)
    slope = np.empty_like(mu_rows)
    for i, t in enumerate(t_grid):
        drift[i] = kernel.dmu_dt(t, s_grids[i])
        slope[i] = kernel.dmu_ds(t, s_grids[i])
    base = drift + slope
    km = kappa[:, None] * mu_rows

    def admissible(delta):
        return bool(np.all(base + delta * km <= rel_tol * km))

    if not admissible(1e-12):
        return 0.0, base
    if admissible(2.0):
        return 2.0, base + 2.0 * km
    lo, hi = 1e-12, 2.0
    while hi - lo > 1e-4:
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            lo = mid
        else:
            hi = mid
    return lo, base + lo * km


def _condition_core_mass(kernel, t_sub, kappa_sub, nu_candidates):
    """Scan nu for integral over [nu, 1/nu] >= kappa/2 at every t in the range."""
    best_nu, best_margin = None, -np.inf
    for nu in nu_candidates:
        hi = 1.0 / nu
        if hi <= nu:
            continue
        edges = np.geomspace(nu, hi, max(int(16 * np.log10(hi / nu)), 8) + 1)
        nodes, weights = gauss_panels(edges)
        margin = np.inf
        for t, kap in zip(t_sub, kappa_sub):
            core = float(weights @ kernel.mu(t, nodes))
            margin = min(margin, core - 0.5 * kap)
            if margin < 0:
                break
        if margin > best_margin:
            best_margin, best_nu = margin, nu
    return best_nu, best_margin


def audit(kernel: TimeDependentKernel, t_grid: np.ndarray | None = None,
          s_grid: np.ndarray | None = None, tolerances: dict | None = None) -> KernelAudit:
    """Certify the admissibility conditions on finite grids.

    Failures are reported through ``pass_flags``, never raised.  With
    ``s_grid=None`` each t node gets 201 log-spaced ages over
    [1e-4, 40] times the kernel's local memory scale.
    """
    tol = {"mass_rtol": 1e-8, "mono_rtol": 1e-12, "decay_rtol": 1e-10}
    if tolerances:
        tol.update(tolerances)
    if t_grid is None:
        t_grid = np.linspace(-10.0, 10.0, 101)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValueError("t_grid must be nonempty")
    if s_grid is not None:
        s_grid = np.asarray(s_grid, dtype=float)
        if s_grid.size == 0 or np.any(s_grid <= 0.0):
            raise ValueError("s_grid must be nonempty and positive")
        s_grids = np.tile(s_grid, (t_grid.size, 1))
    else:
        s_grids = np.stack([default_s_grid(kernel, t) for t in t_grid])

    mu_rows = np.stack([kernel.mu(t, s_grids[i]) for i, t in enumerate(t_grid)])
    kappa = np.array([kernel.total_mass(t) for t in t_grid])
    out = KernelAudit(t_grid=t_grid, s_grids=s_grids)

    # monotone_summable: sign, monotonicity, and quadrature mass agreement
    nonneg = bool(np.all(mu_rows >= -tol["mono_rtol"]))
    mono = bool(np.all(np.diff(mu_rows, axis=1)
                       <= tol["mono_rtol"] * np.max(mu_rows, axis=1, keepdims=True)))
    mass_err = 0.0
    for i, t in enumerate(t_grid):
        head = np.array([0.0, s_grids[i, 0]])
        nodes_h, weights_h = gauss_panels(head)
        tail_edge = max(s_grids[i, -1], kernel.tail_cutoff(t, 1e-12))
        nodes_b, weights_b = gauss_panels(np.geomspace(s_grids[i, 0], tail_edge, 481))
        quad = float(weights_h @ kernel.mu(t, nodes_h) + weights_b @ kernel.mu(t, nodes_b))
        mass_err = max(mass_err, abs(quad - kappa[i]) / max(kappa[i], 1e-300))
    out.mass_quad_err = mass_err
    out.pass_flags["monotone_summable"] = (
        nonneg and mono and np.all(kappa > 0.0) and mass_err <= tol["mass_rtol"]
    )

    # domination on a decimated pair set
    stride = max(1, t_grid.size // 20)
    idx = np.arange(0, t_grid.size, stride)
    dom_ok = True
    for a in idx:
        for b in idx[idx >= a]:
            try:
                k_ab = embedding_bound(kernel, t_grid[a], t_grid[b], s_grids[a])
            except UnboundedRatioError:
                dom_ok = False
                continue
            out.K_bound[(t_grid[a], t_grid[b])] = k_ab
            if not np.isfinite(k_ab):
                dom_ok = False
    out.pass_flags["domination"] = dom_ok

    # locally_bounded: mu and dmu/dt finite on the audited box
    drift_rows = np.stack([kernel.dmu_dt(t, s_grids[i]) for i, t in enumerate(t_grid)])
    out.pass_flags["locally_bounded"] = bool(
        np.all(np.isfinite(mu_rows)) and np.all(np.isfinite(drift_rows))
    )

    out.delta_star, out.decay_residual = _condition_decay(
        kernel, t_grid, s_grids, mu_rows, kappa, tol["decay_rtol"]
    )
    out.pass_flags["decay_margin"] = out.delta_star > 0.0

    out.mass_inf = float(np.min(kappa))
    out.pass_flags["mass_floor"] = out.mass_inf > 0.0

    # drift_ratio: integral |dmu/dt| ds / kappa^2, Gauss panels on the grid edges
    m6 = 0.0
    for i, t in enumerate(t_grid):
        nodes, weights = gauss_panels(s_grids[i])
        m6 = max(m6, float(weights @ np.abs(kernel.dmu_dt(t, nodes))) / kappa[i] ** 2)
    out.m6_sup = m6
    out.pass_flags["drift_ratio"] = np.isfinite(m6)

    # zero_limit_ratio: probe mu at ages shrinking toward 0+
    m7 = 0.0
    bounded = True
    for i, t in enumerate(t_grid):
        probes = s_grids[i, 0] * 4.0 ** -np.arange(0, 24)
        vals = kernel.mu(t, probes)
        bounded &= bool(np.all(np.isfinite(vals)))
        m7 = max(m7, float(vals[-1]) / kappa[i] ** 2)
    out.m7_sup = m7
    out.pass_flags["zero_limit_ratio"] = bounded and np.isfinite(m7)

    # core_mass over the full range and its two halves
    sub = np.arange(0, t_grid.size, max(1, t_grid.size // 20))
    nu_candidates = np.geomspace(1e-6, 0.99, 120)
    spans = [(0, t_grid.size - 1)]
    if t_grid.size > 2:
        half = t_grid.size // 2
        spans += [(0, half), (half, t_grid.size - 1)]
    core_ok = True
    for a, b in spans:
        sel = sub[(sub >= a) & (sub <= b)]
        if sel.size == 0:
            sel = np.array([a, b])
        nu, margin = _condition_core_mass(kernel, t_grid[sel], kappa[sel], nu_candidates)
        if nu is None or margin < 0:
            core_ok = False
        else:
            out.nu_found[(t_grid[a], t_grid[b])] = nu
    out.pass_flags["core_mass"] = core_ok

    return out
