"""Local weak observability of the static pose from stacked field/gravity data.

With a static robot only the zeroth-order Lie derivatives of the output
survive, so the codistribution is assembled block by block from the field,
its spatial gradient and the gravity direction.  Rows are
``[norms | fields | gravity]``; columns ``[position | orientation]``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .liegroups import Pose
from .magnetics import PhysicalConstants
from .scenario import SceneSpec, Workspace, sample_batch
from .sensing import MeasurementBatch, measurement_std

RANK_TOL = 1e-8
PLANES = {"xy": (0, 1, 2), "xz": (0, 2, 1), "yz": (1, 2, 0)}


@dataclass(frozen=True)
class Whitening:
    """Row and column scaling applied before the SVD.

    Rows are divided by the nominal noise std of their sensor.  Columns are
    multiplied by a characteristic error scale of each state component, by
    default the convergence tolerances (5 mm per axis; ``e_R = 0.1``, i.e.
    about ``sqrt(0.1)`` rad), so the condition number compares modes at the
    resolution the filter must reach rather than metres against radians.
    Any field set to ``None`` disables that part of the scaling.
    """

    mag_std: float | None = 1e-6
    accel_std: float | None = 1e-2
    norm_scale: float = 1.0
    position_scale: float | None = 0.005
    orientation_scale: float | None = math.sqrt(0.1)

    @classmethod
    def none(cls) -> "Whitening":
        return cls(None, None, 1.0, None, None)

    @classmethod
    def rows_only(cls, mag_std: float = 1e-6, accel_std: float = 1e-2) -> "Whitening":
        return cls(mag_std, accel_std, 1.0, None, None)

    def row_scale(self, n: int) -> np.ndarray:
        if self.mag_std is None or self.accel_std is None:
            return np.ones(4 * n + 3)
        return 1.0 / measurement_std(n, self.mag_std, self.accel_std, self.norm_scale)

    def column_scale(self) -> np.ndarray:
        if self.position_scale is None or self.orientation_scale is None:
            return np.ones(6)
        return np.array([self.position_scale] * 3 + [self.orientation_scale] * 3)

    def apply(self, M: np.ndarray, n: int) -> np.ndarray:
        """Scale a ``(4n+3) x 6`` matrix with this rule."""
        return M * self.row_scale(n)[:, None] * self.column_scale()[None, :]


@dataclass(frozen=True, eq=False)
class Codistribution:
    matrix: np.ndarray
    n: int

    @property
    def position_block(self) -> np.ndarray:
        return self.matrix[:, :3]

    @property
    def orientation_block(self) -> np.ndarray:
        return self.matrix[:, 3:]

    @property
    def norm_rows(self) -> np.ndarray:
        return self.matrix[: self.n]

    @property
    def field_rows(self) -> np.ndarray:
        return self.matrix[self.n : 4 * self.n]

    @property
    def gravity_rows(self) -> np.ndarray:
        return self.matrix[4 * self.n :]


@dataclass(frozen=True)
class ConditioningReport:
    rank: int
    condition_number: float
    singular_values: np.ndarray

    @property
    def observable(self) -> bool:
        return self.rank == 6


def _column_cross(R, v):
    """Matrices whose entries are the dot products ``R[:, k] . v`` laid out as
    ``[[0, -c3, c2], [c3, 0, -c1], [-c2, c1, 0]]`` with ``c = R^T v``.

    ``v`` may be a single 3-vector or a stack ``(n, 3)``.
    """
    c = np.asarray(v) @ R
    out = np.zeros(c.shape[:-1] + (3, 3))
    c1, c2, c3 = c[..., 0], c[..., 1], c[..., 2]
    out[..., 0, 1], out[..., 0, 2] = -c3, c2
    out[..., 1, 0], out[..., 1, 2] = c3, -c1
    out[..., 2, 0], out[..., 2, 1] = -c2, c1
    return out


def codistribution(
    T: Pose,
    configs,
    constants: PhysicalConstants | None = None,
    whitening: Whitening | None = None,
    *,
    position_frame: str = "world",
) -> Codistribution:
    """Observability codistribution at pose ``T``.

    ``configs`` is a :class:`MeasurementBatch` or a sequence of
    :class:`~magloc.sensing.EpmConfiguration` (``n = 1`` allowed).
    Position columns are derivatives with respect to the world-frame
    position (``position_frame="world"``) or the body-frame translation
    perturbation (``"body"``), which is the convention of
    :func:`magloc.sensing.measurement_jacobian`.  Both carry the same
    singular values since they differ by an orthogonal column transform.
    ``whitening=None`` leaves the matrix unscaled.
    """
    if isinstance(configs, MeasurementBatch):
        batch = configs
        if constants is not None:
            batch = MeasurementBatch.from_arrays(batch.positions, batch.moments, constants, min_configs=1)
    else:
        batch = MeasurementBatch(tuple(configs), constants, min_configs=1)
    if position_frame not in ("world", "body"):
        raise ValueError("position_frame must be 'world' or 'body'")
    R = T.rotation
    n = batch.n
    b, D = batch.world_fields(T.position)

    O = np.zeros((4 * n + 3, 6))
    # norm rows: world gradient of |b_i|; no orientation content
    O[:n, :3] = np.einsum("ni,nij->nj", b / np.linalg.norm(b, axis=1, keepdims=True), D)
    # field rows: R^T dB/dx and the R-column/field dot-product block
    O[n : 4 * n, :3] = np.einsum("ji,njk->nik", R, D).reshape(3 * n, 3)
    O[n : 4 * n, 3:] = _column_cross(R, b).reshape(3 * n, 3)
    # gravity rows: no position content
    O[4 * n :, 3:] = _column_cross(R, batch.constants.g)
    if position_frame == "body":
        O[:, :3] = O[:, :3] @ R
    if whitening is not None:
        O = whitening.apply(O, n)
    return Codistribution(O, n)


def analyze(c, rank_tol: float = RANK_TOL) -> ConditioningReport:
    """SVD rank and condition number ``sigma_max / sigma_min``.

    The condition number is ``inf`` whenever the matrix is rank deficient.
    """
    M = c.matrix if isinstance(c, Codistribution) else np.asarray(c, dtype=float)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return ConditioningReport(0, math.inf, s)
    rank = int(np.sum(s > rank_tol * s[0]))
    cond = float(s[0] / s[-1]) if rank == M.shape[1] and s.size == M.shape[1] else math.inf
    return ConditioningReport(rank, cond, s)


@dataclass(frozen=True)
class ConditionMap:
    plane: str
    coord1: np.ndarray  # grid coordinates along the first in-plane axis
    coord2: np.ndarray
    values: np.ndarray  # (len(coord2), len(coord1)), row-major over coord2 then coord1

    def rows(self):
        """``(c1, c2, N_c)`` triples in row-major grid order."""
        for j, c2 in enumerate(self.coord2):
            for i, c1 in enumerate(self.coord1):
                yield float(c1), float(c2), float(self.values[j, i])

    def median(self) -> float:
        v = self.values[np.isfinite(self.values)]
        return float(np.median(v)) if v.size else math.nan


def grid_points(plane: str, resolution: int, workspace=None):
    """Grid coordinates and 3-D points on an axis-aligned plane through the
    workspace centre."""
    workspace = workspace or Workspace()
    if plane not in PLANES:
        raise ValueError(f"plane must be one of {sorted(PLANES)}")
    if resolution < 1:
        raise ValueError("grid resolution must be at least 1")
    a, b, _ = PLANES[plane]
    center = np.asarray(workspace.center)
    if resolution == 1:
        lin = np.zeros(1)
    else:
        lin = np.linspace(-workspace.half, workspace.half, resolution)
    c1 = center[a] + lin
    c2 = center[b] + lin
    pts = np.tile(center, (resolution, resolution, 1))
    pts[:, :, a] = c1[None, :]
    pts[:, :, b] = c2[:, None]
    return c1, c2, pts


def _cell_condition(args):
    seed, cell, point, R, planes, moment, n, trials, constants, whitening, rank_tol = args
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(cell)]))
    T = Pose(R, point)
    acc = 0.0
    try:
        for _ in range(trials):
            batch = sample_batch(planes, moment, n, rng, constants, min_configs=1)
            acc += analyze(codistribution(T, batch, whitening=whitening), rank_tol).condition_number
    except (ValueError, np.linalg.LinAlgError):
        return math.nan
    return acc / trials


def workspace_condition_map(
    plane: str,
    grid: int,
    m: int,
    n: int,
    trials: int = 10,
    seed: int | np.random.Generator = 0,
    *,
    scene: SceneSpec | None = None,
    whitening: Whitening | None = None,
    rotation=None,
    rank_tol: float = RANK_TOL,
    threads: int = 1,
) -> ConditionMap:
    """Mean condition number over ``trials`` random configuration draws at
    every cell of a ``grid x grid`` plane.

    Each cell draws from its own generator seeded by ``(seed, cell index)``
    so the map does not depend on evaluation order.  Cells where analysis
    fails hold ``nan``.
    """
    if m < 1 or n < 1 or trials < 1:
        raise ValueError("m, n and trials must all be at least 1")
    if isinstance(seed, np.random.Generator):
        seed = int(seed.integers(2**63))
    scene = replace(scene or SceneSpec(), m=m, n=n)
    planes = scene.planes
    whitening = whitening if whitening is not None else Whitening()
    R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)
    c1, c2, pts = grid_points(plane, grid, scene.workspace)
    jobs = [
        (seed, j * grid + i, pts[j, i], R, planes, scene.moment, n, trials, scene.constants, whitening, rank_tol)
        for j in range(grid)
        for i in range(grid)
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            flat = list(pool.map(_cell_condition, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        flat = [_cell_condition(job) for job in jobs]
    return ConditionMap(plane, c1, c2, np.array(flat).reshape(grid, grid))
