"""Simulation engine: workspace geometry, random scenes, trials and Monte Carlo.

Every trial owns a generator derived from ``(master_seed, trial_index)`` so
results never depend on execution order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .ekf import DynamicsInput, FilterDivergence, FilterParams, FilterState, predict, update
from .liegroups import Pose
from .magnetics import DEFAULT_MOMENT, PhysicalConstants
from .sensing import MIN_CONFIGS, EpmConfiguration, MeasurementBatch, NoiseSpec, synthesize_measurement

# cube faces in assignment order: (axis, sign)
FACE_ORDER = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))
FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")


class ObservabilityError(ValueError):
    pass


@dataclass(frozen=True)
class Workspace:
    center: tuple = (0.0, 0.0, 0.0)
    side: float = 0.2

    def __post_init__(self):
        if not self.side > 0:
            raise ValueError("workspace side must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def half(self) -> float:
        return 0.5 * self.side

    def contains(self, p) -> bool:
        return bool(np.all(np.abs(np.asarray(p) - np.asarray(self.center)) <= self.half))


@dataclass(frozen=True)
class EpmPlane:
    """Square patch parallel to a cube face, ``offset`` metres outside it."""

    axis: int
    sign: int
    offset: float
    half_extent: float
    workspace: Workspace = field(default_factory=Workspace)

    def __post_init__(self):
        if self.axis not in (0, 1, 2) or self.sign not in (1, -1):
            raise ValueError("plane normal must be one of +-x, +-y, +-z")
        if not (self.offset > 0 and self.half_extent > 0):
            raise ValueError("plane offset and half extent must be positive")

    @property
    def name(self) -> str:
        return FACE_NAMES[FACE_ORDER.index((self.axis, self.sign))]

    @property
    def center(self) -> np.ndarray:
        c = np.array(self.workspace.center)
        c[self.axis] += self.sign * (self.workspace.half + self.offset)
        return c

    @property
    def inward_normal(self) -> np.ndarray:
        v = np.zeros(3)
        v[self.axis] = -self.sign
        return v

    @property
    def distance(self) -> float:
        return self.workspace.half + self.offset


@dataclass(frozen=True)
class ConvergenceCriteria:
    pos_tol_per_axis: float = 0.005
    orient_tol_trace: float = 0.1
    hold_steps: int = 150
    max_iterations: int = 1000

    def __post_init__(self):
        if min(self.pos_tol_per_axis, self.orient_tol_trace) <= 0 or min(self.hold_steps, self.max_iterations) < 1:
            raise ValueError("convergence criteria must all be positive")


class StreakDetector:
    """Counts consecutive in-tolerance iterations; any miss resets it."""

    def __init__(self, hold_steps: int):
        self.hold_steps = hold_steps
        self.streak = 0
        self.start = None
        self.converged_at = None

    def step(self, k: int, ok: bool) -> bool:
        if self.converged_at is not None:
            return True
        if ok:
            if self.streak == 0:
                self.start = k
            self.streak += 1
            if self.streak >= self.hold_steps:
                self.converged_at = self.start
        else:
            self.streak = 0
            self.start = None
        return self.converged_at is not None


@dataclass
class TrialResult:
    converged: bool
    n: int
    convergence_iter: int | None
    configs_to_convergence: int | None
    final_e_p: float
    final_e_R: float
    pos_convergence_iter: int | None
    orient_convergence_iter: int | None
    k: np.ndarray
    e_p: np.ndarray
    e_R: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray  # (w, x, y, z)
    rejected_updates: int = 0
    diverged: bool = False
    truth: Pose | None = None


def epm_planes(workspace: Workspace, m: int, offset: float = 0.15, half_extent: float | None = None):
    """Planes for ``m`` EPMs, filling faces in ``+x, -x, +y, -y, +z, -z`` order."""
    if not 1 <= m <= len(FACE_ORDER):
        raise ValueError(f"EPM count must be between 1 and 6, got {m}")
    if half_extent is None:
        half_extent = workspace.half + 0.05
    return [EpmPlane(a, s, offset, half_extent, workspace) for a, s in FACE_ORDER[:m]]


def sample_configuration_arrays(planes: Sequence[EpmPlane], moment_mag: float, n: int, rng: np.random.Generator):
    """``n`` random configurations as ``(n, m, 3)`` position and moment arrays.

    Positions are uniform on each EPM's patch; moment directions are uniform
    on the hemisphere facing the workspace.
    """
    m = len(planes)
    centers = np.stack([pl.center for pl in planes])
    inward = np.stack([pl.inward_normal for pl in planes])
    spread = np.stack([pl.half_extent * (1.0 - np.abs(pl.inward_normal)) for pl in planes])
    pos = centers + spread * rng.uniform(-1.0, 1.0, size=(n, m, 3))
    d = rng.standard_normal((n, m, 3))
    d /= np.linalg.norm(d, axis=2, keepdims=True)
    d *= np.where(np.einsum("nmi,mi->nm", d, inward) < 0.0, -1.0, 1.0)[..., None]
    return pos, moment_mag * d


def sample_epm_configuration(planes: Sequence[EpmPlane], moment_mag: float, rng: np.random.Generator):
    """One random configuration of all EPMs on their planes."""
    pos, mom = sample_configuration_arrays(planes, moment_mag, 1, rng)
    return EpmConfiguration.from_arrays(pos[0], mom[0])


def sample_batch(planes, moment_mag, n, rng, constants=None, min_configs=MIN_CONFIGS) -> MeasurementBatch:
    pos, mom = sample_configuration_arrays(planes, moment_mag, n, rng)
    return MeasurementBatch.from_arrays(pos, mom, constants, min_configs=min_configs)


def sample_pose(workspace: Workspace, rng: np.random.Generator) -> Pose:
    p = np.asarray(workspace.center) + rng.uniform(-workspace.half, workspace.half, size=3)
    R = Rotation.random(random_state=rng).as_matrix()
    return Pose(R, p)


def pose_errors(truth: Pose, estimate: Pose):
    """``(||p - p_hat||, tr(I - R_hat^T R))``."""
    e_p = float(np.linalg.norm(truth.position - estimate.position))
    e_R = float(3.0 - np.sum(estimate.rotation * truth.rotation))
    # rounding can push the trace a few ulps outside [0, 4]
    return e_p, min(max(e_R, 0.0), 4.0)


@dataclass(frozen=True)
class SceneSpec:
    """Everything a trial needs besides the truth pose and generator."""

    m: int = 2
    n: int = 20
    workspace: Workspace = field(default_factory=Workspace)
    plane_offset: float = 0.15
    half_extent: float | None = None
    moment: float = DEFAULT_MOMENT
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    @property
    def planes(self):
        return epm_planes(self.workspace, self.m, self.plane_offset, self.half_extent)


def run_trial(
    truth: Pose,
    m: int,
    n: int,
    params: FilterParams,
    noise: NoiseSpec,
    criteria: ConvergenceCriteria,
    rng: np.random.Generator,
    *,
    scene: SceneSpec | None = None,
    initial: Pose | None = None,
    stop_on_convergence: bool = False,
) -> TrialResult:
    """Static-robot run: each iteration draws ``n`` fresh configurations,
    synthesises a measurement at ``truth`` and applies one predict/update."""
    if n < MIN_CONFIGS:
        raise ObservabilityError(
            f"n = {n}: at least {MIN_CONFIGS} field measurements are required for observability"
        )
    scene = replace(scene or SceneSpec(), m=m, n=n)
    planes = scene.planes
    if initial is None:
        initial = Pose.identity(scene.workspace.center)
    state = FilterState.initial(params, initial)
    still = DynamicsInput()

    K = criteria.max_iterations
    ks, eps, eRs = [], [], []
    positions, rotations = [], []
    both = StreakDetector(criteria.hold_steps)
    pos_first = orient_first = None
    rejected = 0
    diverged = False
    for k in range(1, K + 1):
        batch = sample_batch(planes, scene.moment, n, rng, scene.constants)
        y = synthesize_measurement(truth, batch, noise, rng)
        try:
            state = predict(state, still, params)
            res = update(state, batch, y, params)
        except FilterDivergence:
            diverged = True
            break
        if not res.accepted:
            rejected += 1
        state = res.state
        e_p, e_R = pose_errors(truth, state.estimate)
        err_axes = np.abs(truth.position - state.estimate.position)
        pos_ok = bool(np.all(err_axes < criteria.pos_tol_per_axis))
        orient_ok = e_R < criteria.orient_tol_trace
        if pos_ok and pos_first is None:
            pos_first = k
        if orient_ok and orient_first is None:
            orient_first = k
        ks.append(k)
        eps.append(e_p)
        eRs.append(e_R)
        positions.append(state.estimate.position)
        rotations.append(state.estimate.rotation)
        if both.step(k, pos_ok and orient_ok) and stop_on_convergence:
            break

    k_conv = both.converged_at
    return TrialResult(
        converged=k_conv is not None,
        n=n,
        convergence_iter=k_conv,
        configs_to_convergence=None if k_conv is None else n * k_conv,
        final_e_p=eps[-1] if eps else math.nan,
        final_e_R=eRs[-1] if eRs else math.nan,
        pos_convergence_iter=pos_first,
        orient_convergence_iter=orient_first,
        k=np.array(ks, dtype=int),
        e_p=np.array(eps),
        e_R=np.array(eRs),
        positions=np.array(positions).reshape(-1, 3),
        quaternions=rotations_to_quaternions(rotations),
        rejected_updates=rejected,
        diverged=diverged,
        truth=truth,
    )


def rotations_to_quaternions(rotations) -> np.ndarray:
    """Unit quaternions ``(w, x, y, z)`` with ``w >= 0``, one row per matrix."""
    if len(rotations) == 0:
        return np.zeros((0, 4))
    q = Rotation.from_matrix(np.asarray(rotations)).as_quat()
    q = q[:, [3, 0, 1, 2]]
    q[q[:, 0] < 0] *= -1.0
    return q


def trial_seed(master_seed: int, index: int) -> int:
    """64-bit seed of trial ``index``; ``default_rng(trial_seed(s, i))``
    replays that trial on its own."""
    hi, lo = np.random.SeedSequence([int(master_seed), int(index)]).generate_state(2)
    return (int(hi) << 32) | int(lo)


@dataclass
class MonteCarloSummary:
    m: int
    n: int
    trials: list  # TrialResult, in trial-index order
    seeds: list  # per-trial integer seeds, see trial_seed

    @property
    def count(self) -> int:
        return len(self.trials)

    @property
    def converged(self) -> np.ndarray:
        return np.array([t.converged for t in self.trials])

    @property
    def convergence_fraction(self) -> float:
        return float(self.converged.mean())

    @property
    def configs_to_convergence(self) -> np.ndarray:
        """Per-trial ``n*k``; ``inf`` for trials that never converged."""
        return np.array([np.inf if t.configs_to_convergence is None else t.configs_to_convergence for t in self.trials])

    @property
    def final_e_p(self) -> np.ndarray:
        return np.array([t.final_e_p for t in self.trials])

    @property
    def final_e_R(self) -> np.ndarray:
        return np.array([t.final_e_R for t in self.trials])

    @property
    def pos_convergence_iter(self) -> np.ndarray:
        return np.array([np.nan if t.pos_convergence_iter is None else t.pos_convergence_iter for t in self.trials])

    @property
    def orient_convergence_iter(self) -> np.ndarray:
        return np.array(
            [np.nan if t.orient_convergence_iter is None else t.orient_convergence_iter for t in self.trials]
        )

    def fraction_below(self, e_p_tol: float) -> float:
        return float(np.mean(self.final_e_p < e_p_tol))

    def median_configs(self) -> float:
        return float(np.median(self.configs_to_convergence))

    def histogram(self, which: str, bins):
        data = self.pos_convergence_iter if which == "position" else self.orient_convergence_iter
        data = data[np.isfinite(data)]
        return np.histogram(data, bins=bins)

    def aggregate(self) -> dict:
        def _median(a):
            a = a[np.isfinite(a)]
            return float(np.median(a)) if a.size else math.nan

        return {
            "trials": self.count,
            "m": self.m,
            "n": self.n,
            "convergence_fraction": self.convergence_fraction,
            "median_configs_to_convergence": self.median_configs(),
            "median_final_e_p": float(np.median(self.final_e_p)),
            "median_final_e_R": float(np.median(self.final_e_R)),
            "fraction_e_p_below_1mm": self.fraction_below(1e-3),
            "median_pos_convergence_iter": _median(self.pos_convergence_iter),
            "median_orient_convergence_iter": _median(self.orient_convergence_iter),
        }


def seeded_trial(seed: int, m, n, params, noise, criteria, *, scene=None, stop_on_convergence=False):
    """Trial whose truth pose and configurations all come from ``seed``."""
    scene = scene or SceneSpec()
    rng = np.random.default_rng(seed)
    truth = sample_pose(scene.workspace, rng)
    return run_trial(truth, m, n, params, noise, criteria, rng, scene=scene, stop_on_convergence=stop_on_convergence)


def _run_indexed(args):
    seed, m, n, params, noise, criteria, scene, keep_traces, stop = args
    result = seeded_trial(seed, m, n, params, noise, criteria, scene=scene, stop_on_convergence=stop)
    if not keep_traces:
        result.positions = result.positions[-1:]
        result.quaternions = result.quaternions[-1:]
    return result


def monte_carlo(
    trials: int,
    m: int,
    n: int,
    params: FilterParams,
    noise: NoiseSpec,
    criteria: ConvergenceCriteria,
    master_seed: int,
    *,
    scene: SceneSpec | None = None,
    threads: int = 1,
    keep_traces: bool = False,
    stop_on_convergence: bool = True,
) -> MonteCarloSummary:
    """Independent random-pose trials aggregated in trial-index order.

    With ``stop_on_convergence`` a trial ends once its convergence streak
    completes, otherwise it runs all ``criteria.max_iterations``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    scene = scene or SceneSpec()
    seeds = [trial_seed(master_seed, i) for i in range(trials)]
    jobs = [(sd, m, n, params, noise, criteria, scene, keep_traces, stop_on_convergence) for sd in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_indexed, jobs, chunksize=max(1, trials // (4 * threads))))
    else:
        results = [_run_indexed(j) for j in jobs]
    return MonteCarloSummary(m, n, results, seeds)
