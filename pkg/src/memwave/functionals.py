"""Energy and Lyapunov functionals, integral inequality checkers, rate fits.

Everything here consumes either a live extended state (with history access)
or the scalar records collected along a trajectory.  The integral
inequalities are checked in cumulative form: for each the pairwise
statement "for all a < b" reduces to monotonicity of a single running
quantity, so all sampled pairs are covered in O(n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .dynamics import ExtendedState, Trajectory
from .history import memory_norm2 as _memory_norm2
from .kernels import TimeDependentKernel
from .spectral import ModeBasis, Nonlinearity, apply_nonlinearity


@dataclass
class EnergyRecord:
    """One sampled row of the energy ladder and Lyapunov pieces."""

    t: float
    energy: dict        # sigma -> E_sigma(t)
    phi: float
    psi: float
    l_functional: float
    lambda_functional: float
    memory_norms: dict  # sigma -> ||eta||^2_{M_t^sigma}


@dataclass
class DecayFit:
    """Exponential-plus-plateau fit E(t) ~ amplitude*exp(-omega*(t-t0)) + plateau."""

    omega: float
    amplitude: float
    plateau: float
    rms_residual: float
    window: tuple
    flagged: bool = False


@dataclass
class GronwallReport:
    hypothesis_ok: bool
    hypothesis_violation: float
    q1_side_ok: bool
    q1_violation: float
    q2_side_ok: bool
    q2_violation: float
    conclusion_ok: bool
    conclusion_violation: float
    scale: float


@dataclass
class InequalityReport:
    """Worst pairwise margin of an integral inequality along a trajectory."""

    worst_margin: float       # min over pairs of (rhs - lhs) / scale
    worst_pair: tuple
    n_pairs: int
    sigma: float
    rows: list                # (a, b, lhs, rhs, margin) for the worst few pairs


def phi(basis: ModeBasis, state: ExtendedState, sigma_weight: float) -> float:
    """2 <A^(s/2) u, A^(s/2) v> at weight s = sigma_weight."""
    return 2.0 * basis.sigma_inner(state.u, state.v, sigma_weight)


def psi(basis: ModeBasis, state: ExtendedState, kernel: TimeDependentKernel,
        sigma_weight: float) -> float:
    """-(2/kappa) integral mu_t(s) <A^(s/2) eta^t(s), A^(s/2) v> ds."""
    buf = state.history
    if buf is None or kernel is None:
        return 0.0
    quad = buf.quad
    H = buf.eta_matrix(quad.nodes, t=state.t)
    wmu = quad.weights * kernel.mu(state.t, quad.nodes)
    weighted_v = basis.eigenvalues**sigma_weight * state.v
    return float(-2.0 / kernel.total_mass(state.t) * (wmu @ (H @ weighted_v)))


def lambda_functional(basis: ModeBasis, state: ExtendedState,
                      kernel: TimeDependentKernel | None, sigma: float, eps: float,
                      g: np.ndarray, nl: Nonlinearity) -> float:
    """Perturbed energy functional at level sigma.

    Builds ||u||_{sigma+1}^2 + ||v||_sigma^2 + 2<A^(s/2)(f(u) - g), A^(s/2)u>,
    adds the memory norm at the same level and the cross terms
    2*eps*(phi + 4*psi).
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError("eps must lie in (0, 1]")
    fu = apply_nonlinearity(basis, nl, "full", state.u) if nl.name != "zero" \
        else np.zeros_like(state.u)
    value = (basis.sigma_norm2(state.u, sigma + 1.0)
             + basis.sigma_norm2(state.v, sigma)
             + 2.0 * basis.sigma_inner(fu - g, state.u, sigma))
    if kernel is not None and state.history is not None:
        value += _memory_norm2(basis, state.history, kernel, sigma, t=state.t)
    return value + 2.0 * eps * (phi(basis, state, sigma)
                                + 4.0 * psi(basis, state, kernel, sigma))


def lambda_series(traj: Trajectory, sigma: float, eps: float) -> np.ndarray:
    """The same functional assembled from recorded trajectory scalars."""
    return (traj.u_norm2[sigma] + traj.v_norm2[sigma] + traj.gamma_term[sigma]
            + traj.mem_norm2[sigma]
            + 2.0 * eps * (traj.phi[sigma] + 4.0 * traj.psi[sigma]))


def energy_records(traj: Trajectory, sigma: float, eps: float) -> list[EnergyRecord]:
    lam = lambda_series(traj, sigma, eps)
    l_fn = traj.u_norm2[sigma] + traj.v_norm2[sigma] + traj.gamma_term[sigma]
    out = []
    for i, t in enumerate(traj.times):
        out.append(EnergyRecord(
            t=float(t),
            energy={s: float(traj.energy(s)[i]) for s in traj.u_norm2},
            phi=float(traj.phi[sigma][i]),
            psi=float(traj.psi[sigma][i]),
            l_functional=float(l_fn[i]),
            lambda_functional=float(lam[i]),
            memory_norms={s: float(traj.mem_norm2[s][i]) for s in traj.mem_norm2},
        ))
    return out


def _lagged_increase(values: np.ndarray, lag: int) -> tuple[float, tuple]:
    """max over pairs i + lag <= j of values[j] - values[i], with argmax pair."""
    if values.size <= lag:
        return -np.inf, (0, 0)
    best, best_pair = -np.inf, (0, lag)
    run_min, run_arg = values[0], 0
    for j in range(lag, values.size):
        i = j - lag
        if values[i] < run_min:
            run_min, run_arg = values[i], i
        gain = values[j] - run_min
        if gain > best:
            best, best_pair = gain, (run_arg, j)
    return best, best_pair


def gronwall_check(times: np.ndarray, lam: np.ndarray, q1: np.ndarray, q2: np.ndarray,
                   eps: float, c1: float, c2: float, *, min_gap: int = 5,
                   rtol: float = 1e-9) -> GronwallReport:
    """Verify the integral decay inequality machinery on sampled data.

    Checks, on a uniform time grid, (a) the hypothesis
    lam(b) + 2 eps int_a^b lam <= lam(a) + int q1*lam + int q2 on all
    pairs a < b at least min_gap samples apart, (b) the side conditions
    int_a^b q1 <= eps (b-a) + c1 and sup_t int_t^{t+1} q2 <= c2, and
    (c) the decay conclusion
    lam(t) <= e^c1 [ |lam(t0)| e^{-eps (t-t0)} + c2 e^eps / (1 - e^{-eps}) ].
    """
    times = np.asarray(times, dtype=float)
    lam = np.asarray(lam, dtype=float)
    steps = np.diff(times)
    if steps.size == 0 or np.max(np.abs(steps - steps[0])) > 1e-9 * max(steps[0], 1e-300):
        raise ValueError("gronwall_check requires a uniform time grid")
    scale = float(np.max(np.abs(lam))) or 1.0
    tol = rtol * scale

    cum_lam = cumulative_trapezoid(lam, times, initial=0.0)
    cum_q1l = cumulative_trapezoid(q1 * lam, times, initial=0.0)
    cum_q1 = cumulative_trapezoid(q1, times, initial=0.0)
    cum_q2 = cumulative_trapezoid(q2, times, initial=0.0)

    hyp_running = lam + 2.0 * eps * cum_lam - cum_q1l - cum_q2
    hyp_violation, _ = _lagged_increase(hyp_running, min_gap)

    q1_running = cum_q1 - eps * times
    q1_violation, _ = _lagged_increase(q1_running, 1)
    q1_violation -= c1

    # sliding unit-window integral of q2
    upper = np.interp(times + 1.0, times, cum_q2, right=cum_q2[-1])
    window = min(1.0, times[-1] - times[0])
    q2_violation = float(np.max(upper - cum_q2)) - c2 if window >= 1.0 else \
        float(cum_q2[-1] - cum_q2[0]) - c2

    decay = np.exp(-eps * (times - times[0]))
    bound = np.exp(c1) * (abs(lam[0]) * decay + c2 * np.e**eps / (1.0 - np.exp(-eps)))
    conclusion_violation = float(np.max(lam - bound))

    return GronwallReport(
        hypothesis_ok=hyp_violation <= tol,
        hypothesis_violation=hyp_violation,
        q1_side_ok=q1_violation <= tol,
        q1_violation=q1_violation,
        q2_side_ok=q2_violation <= tol,
        q2_violation=q2_violation,
        conclusion_ok=conclusion_violation <= tol,
        conclusion_violation=conclusion_violation,
        scale=scale,
    )


def memory_inequality_check(traj: Trajectory, sigma: float, *, min_gap_time: float = 0.0,
                            max_pairs_side: int = 900) -> InequalityReport:
    """Pairwise check of the memory-space evolution inequality.

    For all sampled a < b the squared memory norm at b minus the kernel
    dissipation integral must stay below the norm at a plus twice the
    integrated pairing of the velocity with the history.  Margins are
    reported relative to the larger side; cumulative integrals use the full
    monitor resolution while pairs are evaluated on a decimated index set.
    """
    mon = traj.monitor
    if mon is None or sigma not in mon.norm2:
        raise ValueError(f"trajectory carries no memory monitor at sigma={sigma}")
    times = mon.times
    m = mon.norm2[sigma]
    cum_d = cumulative_trapezoid(mon.dissipation[sigma], times, initial=0.0)
    cum_c = cumulative_trapezoid(mon.inner_v[sigma], times, initial=0.0)

    stride = max(1, times.size // max_pairs_side)
    idx = np.arange(0, times.size, stride)
    if idx[-1] != times.size - 1:
        idx = np.append(idx, times.size - 1)
    t_s, m_s, d_s, c_s = times[idx], m[idx], cum_d[idx], cum_c[idx]

    lhs = (m_s - d_s)[None, :] + d_s[:, None]          # lhs(a, b), rows = a
    rhs = m_s[:, None] + 2.0 * (c_s[None, :] - c_s[:, None])
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), 1e-30)
    margin = (rhs - lhs) / scale
    valid = (t_s[None, :] - t_s[:, None]) >= max(min_gap_time, 1e-12)
    margin = np.where(valid, margin, np.inf)
    worst_flat = int(np.argmin(margin))
    a_i, b_i = np.unravel_index(worst_flat, margin.shape)
    order = np.argsort(margin, axis=None)[:5]
    rows = []
    for flat in order:
        i, j = np.unravel_index(flat, margin.shape)
        if not valid[i, j]:
            continue
        rows.append((float(t_s[i]), float(t_s[j]), float(lhs[i, j]), float(rhs[i, j]),
                     float(margin[i, j])))
    return InequalityReport(
        worst_margin=float(margin[a_i, b_i]),
        worst_pair=(float(t_s[a_i]), float(t_s[b_i])),
        n_pairs=int(np.count_nonzero(valid)),
        sigma=sigma,
        rows=rows,
    )


def fit_decay(times: np.ndarray, values: np.ndarray,
              window: tuple | None = None, n_plateau: int = 200) -> DecayFit:
    """Fit values(t) ~ amplitude * exp(-omega (t - t[0])) + plateau.

    The plateau is grid-searched over [0, min values) on a log-spaced
    candidate set scaled by the data (so the fit is scale-equivariant),
    then omega and amplitude come from least squares on log(values -
    plateau) inside the window.  All-flat data returns omega = 0, flagged.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if window is None:
        window = (times[0], times[-1])
    mask = (times >= window[0]) & (times <= window[1])
    t_w, v_w = times[mask], values[mask]
    if t_w.size < 20:
        raise ValueError("need at least 20 samples inside the fit window")
    v_min, v_max = float(np.min(v_w)), float(np.max(v_w))
    if v_max - v_min <= 1e-12 * max(abs(v_max), 1e-300):
        return DecayFit(0.0, 0.0, v_min, 0.0, window, flagged=True)
    candidates = np.concatenate([[0.0],
                                 v_min * (1.0 - np.geomspace(1e-9, 1.0, n_plateau - 1))])
    t_rel = t_w - times[0]
    best = None
    for r0 in candidates:
        y = v_w - r0
        if np.any(y <= 0.0):
            continue
        logy = np.log(y)
        slope, intercept = np.polyfit(t_rel, logy, 1)
        rms = float(np.sqrt(np.mean((logy - (slope * t_rel + intercept)) ** 2)))
        if best is None or rms < best[0]:
            best = (rms, slope, intercept, r0)
    rms, slope, intercept, r0 = best
    omega = max(-slope, 0.0)
    return DecayFit(omega=float(omega), amplitude=float(np.exp(intercept)),
                    plateau=float(r0), rms_residual=rms, window=window,
                    flagged=omega == 0.0)


def dimension_bound(eta: float, L: float, m_z_value: float) -> float:
    """Fractal dimension cap ln(m_Z) / ln(1/(2 eta)) of the covering scheme.

    L is the smoothing Lipschitz constant carried along for provenance of
    m_z_value = m_Z(2L/eta); it does not enter the formula.
    """
    if not 0.0 < eta < 0.5:
        raise ValueError("contraction factor must lie in (0, 1/2)")
    if m_z_value < 1:
        raise ValueError("packing count must be >= 1")
    return float(np.log(m_z_value) / np.log(1.0 / (2.0 * eta)))


def rate_compose(T: float, kappa: float, beta: float, L1: float) -> tuple[float, float]:
    """Compose an attraction rate through a Lipschitz re-indexing step.

    Returns (theta, beta') with theta = T k / (2 (ln L1 + T k)) in (0, 1)
    and beta' = min(k/2, T k beta / (2 (ln L1 + T k))).
    """
    if T <= 0 or kappa <= 0 or beta <= 0:
        raise ValueError("T, kappa, beta must be positive")
    if L1 < 1.0:
        raise ValueError("Lipschitz constant below 1 is out of range (ln would be negative)")
    log_l1 = np.log(L1)
    theta = T * kappa / (2.0 * (log_l1 + T * kappa))
    beta_prime = min(kappa / 2.0, T * kappa * beta / (2.0 * (log_l1 + T * kappa)))
    return float(theta), float(beta_prime)


def phi_psi_bound_constant(kappa_min: float) -> float:
    """Cauchy-Schwarz constant C with |phi| + |psi| <= C * E along states."""
    if kappa_min <= 0:
        raise ValueError("kappa_min must be positive")
    return 2.0 + 2.0 / np.sqrt(kappa_min)
