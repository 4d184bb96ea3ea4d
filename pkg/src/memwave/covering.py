"""Finite-dimensional covering lab for quasi-stable processes.

Runs the exponential-attractor covering construction on toy step maps
x -> eta0 * x + phi(x) in R^d, where the contraction eta0 < 1/2 and the
bounded Lipschitz part phi double as the smoothing map.  Sets are sample
clouds; the construction packs smoothed images at a geometrically
shrinking scale, splits cells by nearest packed center and pushes them
through the step map, so cell diameters contract by 2*eta0 per level
while the per-cell split count stays below the packing number of the
smoothing space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STRICT_GAP = 1e-9  # packing separation realizes "greater than" as >= 1 + gap


class ProcessInvalidError(RuntimeError):
    """The sampled process violated the contraction-plus-seminorm decomposition."""


@dataclass
class EuclideanSeminorm:
    """Euclidean norm on R^d used both as ball norm and compact seminorm."""

    dim: int

    def __call__(self, diffs: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(diffs), axis=-1)


class ToyProcess:
    """Discrete-time process U(n, n-1) x = eta0 x + phi_n(x) on a ball.

    ``phi`` takes (n, points) so coefficients may drift with the step index;
    it must be bounded by (1 - eta0) * R0 on the ball and L-Lipschitz.  The
    smoothing map defaults to phi itself.
    """

    def __init__(self, dim: int, eta0: float, phi, L: float, R0: float,
                 name: str = "toy"):
        if not 0.0 < eta0 < 0.5:
            raise ValueError("eta0 must lie in (0, 1/2)")
        self.dim = dim
        self.eta0 = eta0
        self.phi = phi
        self.L = L
        self.R0 = R0
        self.L1 = eta0 + L
        self.name = name
        self.n_Z = EuclideanSeminorm(dim)

    def step_map(self, n: int, x: np.ndarray) -> np.ndarray:
        """U(n, n-1): points at time n-1 to points at time n."""
        return self.eta0 * x + self.phi(n, x)

    def smooth_map(self, n: int, x: np.ndarray) -> np.ndarray:
        """K_n: the compact-seminorm side of the decomposition."""
        return self.phi(n, x)

    def sample_ball(self, n_points: int, rng: np.random.Generator) -> np.ndarray:
        raw = rng.normal(size=(n_points, self.dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        radii = self.R0 * rng.random(n_points) ** (1.0 / self.dim)
        return raw * radii[:, None]

    def verify(self, rng: np.random.Generator, n: int = 0, n_samples: int = 400,
               tol: float = 1e-10) -> None:
        """Spot-check semi-invariance and the decomposition inequality."""
        x = self.sample_ball(n_samples, rng)
        y = self.sample_ball(n_samples, rng)
        ux, uy = self.step_map(n, x), self.step_map(n, y)
        if np.any(np.linalg.norm(ux, axis=1) > self.R0 * (1.0 + tol)):
            raise ProcessInvalidError("step map leaves the invariant ball")
        lhs = np.linalg.norm(ux - uy, axis=1)
        rhs = (self.eta0 * np.linalg.norm(x - y, axis=1)
               + self.n_Z(self.smooth_map(n, x) - self.smooth_map(n, y)))
        if np.any(lhs > rhs * (1.0 + tol) + tol):
            raise ProcessInvalidError("decomposition inequality violated on samples")


def default_toy_2d() -> ToyProcess:
    """Autonomous 2D toy: phi(x) = 0.5 tanh componentwise, L = 0.5, R0 = 1."""
    return ToyProcess(dim=2, eta0=0.25, phi=lambda n, x: 0.5 * np.tanh(x),
                      L=0.5, R0=1.0, name="tanh-2d")


def drifting_toy_2d() -> ToyProcess:
    """Time-varying 2D toy with a drifting offset in the smoothing map."""

    def phi(n, x):
        return 0.5 * np.tanh(x - 0.2 * np.sin(0.7 * n))

    return ToyProcess(dim=2, eta0=0.25, phi=phi, L=0.5, R0=1.0, name="tanh-2d-drift")


def greedy_pack(points: np.ndarray, separation: float, n_Z=None,
                order: np.ndarray | None = None) -> list[int]:
    """Indices of a maximal subset with pairwise n_Z distance > separation."""
    points = np.atleast_2d(points)
    if n_Z is None:
        n_Z = EuclideanSeminorm(points.shape[1])
    scan = range(points.shape[0]) if order is None else order
    kept: list[int] = []
    kept_pts = np.empty((0, points.shape[1]))
    threshold = separation * (1.0 + STRICT_GAP)
    for i in scan:
        if kept and np.min(n_Z(kept_pts - points[i])) < threshold:
            continue
        kept.append(int(i))
        kept_pts = np.vstack([kept_pts, points[i]])
    return kept


def _ball_grid(dim: int, radius: float, step: float) -> np.ndarray:
    axes = [np.arange(-radius, radius + step / 2, step)] * dim
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    return mesh[np.linalg.norm(mesh, axis=1) <= radius]


def packing_number(n_Z, radius: float, dim: int, *, grid_step: float | None = None,
                   restarts: int = 0, rng: np.random.Generator | None = None) -> int:
    """Greedy count of points in the radius ball pairwise n_Z-separated > 1.

    A deterministic lexicographic scan over a fine grid; optional random
    restarts keep the best count found (a lower bound for the true maximal
    packing).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if grid_step is None:
        grid_step = min(0.1, radius / 8.0)
    grid = _ball_grid(dim, radius, grid_step)
    best = len(greedy_pack(grid, 1.0, n_Z))
    if restarts and rng is None:
        rng = np.random.default_rng(0)
    for _ in range(restarts):
        order = rng.permutation(grid.shape[0])
        best = max(best, len(greedy_pack(grid, 1.0, n_Z, order=order)))
    return best


def packing_number_oracle(dim: int, radius: float, *, grid_step: float = 0.05,
                          restarts: int = 24, seed: int = 0) -> int:
    """Brute-force fine-grid packing estimate for low dimensions (d <= 2)."""
    if dim > 2:
        raise ValueError("oracle is for d <= 2 only")
    rng = np.random.default_rng(seed)
    return packing_number(EuclideanSeminorm(dim), radius, dim,
                          grid_step=min(grid_step, radius / 10.0),
                          restarts=restarts, rng=rng)


@dataclass
class CoveringCell:
    level: int
    cell_id: int
    parent: int
    center: np.ndarray
    points: np.ndarray
    stated_radius: float
    measured_radius: float


@dataclass
class CoveringTree:
    """Per-level covering cells of the pushed-forward ball cloud."""

    eta0: float
    R0: float
    target_time: int
    depth: int
    levels: list = field(default_factory=list)  # levels[k] = list of CoveringCell

    @property
    def counts(self) -> list[int]:
        return [len(cells) for cells in self.levels]

    def centers(self, level: int) -> np.ndarray:
        return np.stack([c.center for c in self.levels[level]])

    def csv_rows(self):
        for cells in self.levels:
            for c in cells:
                yield (c.level, c.cell_id, *np.asarray(c.center).tolist(),
                       c.stated_radius, c.parent)


def _choose_center(points: np.ndarray, preferred: np.ndarray) -> tuple[np.ndarray, float]:
    """Pick the candidate minimizing the max distance to the cell cloud."""
    candidates = [preferred]
    if points.shape[0] > 1:
        stride = max(1, points.shape[0] // 16)
        candidates.extend(points[::stride][:16])
        centroid = points.mean(axis=0)
        candidates.append(points[np.argmin(np.linalg.norm(points - centroid, axis=1))])
    best, best_r = None, np.inf
    for cand in candidates:
        r = float(np.max(np.linalg.norm(points - cand, axis=1)))
        if r < best_r:
            best, best_r = cand, r
    return best, best_r


def build_covering(process: ToyProcess, n: int, k: int, *, n_samples: int = 10_000,
                   seed: int = 0) -> CoveringTree:
    """Run the covering induction for the image of the ball k steps back.

    Starting from a sample cloud of the ball at time n - k, each level
    packs the smoothed images at scale eta0 (2 eta0)^j R0, splits by
    nearest packed center and pushes through the step map, so level-j cells
    have diameter at most 2 (2 eta0)^j R0 and their count is bounded by the
    packing number of a fixed ball in the smoothing space.
    """
    if k < 1:
        raise ValueError("need at least one level")
    rng = np.random.default_rng(seed)
    process.verify(rng, n=n)
    cloud = process.sample_ball(n_samples, rng)
    tree = CoveringTree(eta0=process.eta0, R0=process.R0, target_time=n, depth=k)
    root = CoveringCell(level=0, cell_id=0, parent=-1,
                        center=np.zeros(process.dim), points=cloud,
                        stated_radius=process.R0,
                        measured_radius=float(np.max(np.linalg.norm(cloud, axis=1))))
    tree.levels.append([root])
    for j in range(k):
        m_next = n - k + j + 1  # cells move from time m_next - 1 to m_next
        scale = process.eta0 * (2.0 * process.eta0) ** j * process.R0
        new_cells: list[CoveringCell] = []
        for cell in tree.levels[j]:
            smoothed = process.smooth_map(m_next, cell.points)
            pack_idx = greedy_pack(smoothed, scale, process.n_Z)
            packed = smoothed[pack_idx]
            assign = np.argmin(np.linalg.norm(smoothed[:, None, :] - packed[None, :, :],
                                              axis=-1), axis=1)
            for ci, pi in enumerate(pack_idx):
                members = cell.points[assign == ci]
                mapped = process.step_map(m_next, members)
                preferred = process.step_map(m_next, cell.points[pi][None, :])[0]
                center, measured = _choose_center(mapped, preferred)
                new_cells.append(CoveringCell(
                    level=j + 1, cell_id=len(new_cells), parent=cell.cell_id,
                    center=center, points=mapped,
                    stated_radius=(2.0 * process.eta0) ** (j + 1) * process.R0,
                    measured_radius=measured))
        tree.levels.append(new_cells)
    return tree


@dataclass
class EAFamily:
    """Discrete attractor germ: nets V_k and the accumulated sets E_k.

    ``e_sets[k]`` holds E_k at time (target_time - depth + k); the last one
    lives at the target time.  The recursion is
    E_1 = V_1 and E_k = V_k joined with the step image of E_{k-1}.
    """

    target_time: int
    depth: int
    v_sets: dict = field(default_factory=dict)   # (k, time) -> centers
    e_sets: dict = field(default_factory=dict)   # k -> accumulated point set
    e_times: dict = field(default_factory=dict)  # k -> time stamp of e_sets[k]

    def accumulated(self) -> np.ndarray:
        """Union of all E_k point sets (the attractor sample at target time
        uses the deepest set; shallower ones live at earlier times)."""
        return np.vstack([self.e_sets[k] for k in sorted(self.e_sets)])


def build_E(process: ToyProcess, n: int, k_max: int, *, n_samples: int = 10_000,
            seed: int = 0) -> EAFamily:
    """Assemble the discrete semi-invariant family ending at time n."""
    fam = EAFamily(target_time=n, depth=k_max)
    e_prev = None
    for k in range(1, k_max + 1):
        m = n - k_max + k
        tree = build_covering(process, m, k, n_samples=n_samples, seed=seed)
        v_k = tree.centers(k)
        fam.v_sets[(k, m)] = v_k
        if e_prev is None:
            e_k = v_k
        else:
            pushed = process.step_map(m, e_prev)
            e_k = np.vstack([v_k, pushed])
        fam.e_sets[k] = e_k
        fam.e_times[k] = m
        e_prev = e_k
    return fam


@dataclass
class BoxDimensionFit:
    dimension: float
    scales: np.ndarray
    counts: np.ndarray
    degenerate: bool


def box_dimension(points: np.ndarray, scales) -> BoxDimensionFit:
    """Box-counting slope of ln N(eps) against ln(1/eps).

    Scales must halve: each entry is (close to) half the previous.  With
    fewer than two distinct occupied-box counts the slope is undefined and
    the result is flagged degenerate with dimension 0.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    scales = np.asarray(sorted(scales, reverse=True), dtype=float)
    if scales.size < 2:
        raise ValueError("need at least two scales")
    ratios = scales[1:] / scales[:-1]
    if np.any(np.abs(ratios - 0.5) > 0.01):
        raise ValueError("scales must halve the previous one")
    origin = points.min(axis=0)
    counts = []
    for eps in scales:
        cells = np.floor((points - origin) / eps).astype(np.int64)
        counts.append(np.unique(cells, axis=0).shape[0])
    counts = np.array(counts)
    if np.unique(counts).size < 2:
        return BoxDimensionFit(0.0, scales, counts, degenerate=True)
    slope = np.polyfit(np.log(1.0 / scales), np.log(counts), 1)[0]
    return BoxDimensionFit(float(slope), scales, counts, degenerate=False)
