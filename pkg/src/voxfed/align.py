"""Global pose alignment of a client field against the global model.

Target views share a centre ``t*`` above the overlap of both models and
differ in orientation ``R*_j``.  A candidate correction ``G`` rotates by
``R`` about ``t*`` and shifts by ``t``, so the local model is rendered from
``(t* + t, R R*_j)``.  The loss averages, over views and sampled rays,
``lam * |C_g - C_l|_1 + (1 - lam) * |D_g - D_l|``.  The corrected
local-to-global pose is ``G^-1 o noisy``.

The search is an annealed, elitist particle search: sample corrections
around the elites, keep the best, shrink the spread each round.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .field import RegionBounds, VoxelField, occupied_bounds
from .geometry import Camera, Pose, look_rotation, perturb, random_pose_noise, rotation_error_deg, translation_error
from .io import JsonlLog
from .render import clip_box, ray_box, render_rays
from scipy.spatial.transform import Rotation


class AlignmentError(RuntimeError):
    """The client cannot be aligned (no overlap, or a non-finite loss)."""


@dataclass
class ViewConfig:
    j_views: int = 4
    height: float = 9.0
    tilt_deg: float = 30.0
    fov_deg: float = 70.0
    width: int = 48
    height_px: int = 48
    mode: str = "synth"  # synth | nearest
    margin: float = 1.0  # horizontal shrink of the overlap before clipping


@dataclass
class AlignmentProblem:
    global_field: VoxelField
    local_field: VoxelField
    noisy_pose: Pose
    target_views: list
    intrinsics: Camera
    lam: float = 0.75
    rays_per_view: int = 1024
    n_samples: int = 64
    global_bounds: RegionBounds | None = None
    centre: np.ndarray | None = None
    weight_skip: float = 1e-4
    seed: int = 0
    clip: RegionBounds | None = None
    pivot: np.ndarray | None = None
    view_cfg: ViewConfig | None = None
    training_poses: list | None = None

    def __post_init__(self):
        if not self.target_views:
            raise ValueError("need at least one target view")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.centre is None:
            self.centre = np.mean([p.translation for p in self.target_views], axis=0)
        self.centre = np.asarray(self.centre, dtype=np.float64)
        if self.pivot is None:
            self.pivot = self.clip.center if self.clip is not None else self.centre
        self.pivot = np.asarray(self.pivot, dtype=np.float64)
        self._prepared = None

    def prepare(self):
        """Fix the sampled pixels, their world-space sampling intervals and
        the global targets.  Both models are sampled over the same stretch of
        each ray: the clip box in world space, whatever the candidate pose."""
        if self._prepared is not None:
            return self._prepared
        rng = np.random.default_rng(self.seed)
        cam = self.intrinsics
        n_pix = cam.width * cam.height
        os, ds = [], []
        for pose in self.target_views:
            sel = rng.choice(n_pix, size=min(self.rays_per_view, n_pix), replace=False)
            o, d = cam.with_pose(pose).rays(sel % cam.width, sel // cam.width)
            os.append(o)
            ds.append(d)
        origins = np.concatenate(os)
        dirs = np.concatenate(ds)
        box = clip_box(self.global_field, self.global_bounds)
        if self.clip is not None:
            box = box.intersect(self.clip)
        if box.is_empty:
            raise AlignmentError("empty clip box")
        near, far = ray_box(origins, dirs, box)
        far = np.maximum(far, near)
        out = render_rays(
            self.global_field, origins, dirs, self.n_samples, weight_skip=self.weight_skip, near_far=(near, far)
        )
        self._prepared = (origins, dirs, out.color, out.depth, near, far)
        return self._prepared


def corrections(x: np.ndarray, pivot: np.ndarray) -> list[Pose]:
    """Rows (tx, ty, tz, rx, ry, rz) -> world corrections rotating about ``pivot``."""
    out = []
    for row in np.atleast_2d(x):
        rot = Rotation.from_rotvec(row[3:]).as_matrix()
        out.append(Pose(rot, pivot + row[:3] - rot @ pivot))
    return out


def corrected_pose(problem: AlignmentProblem, x) -> Pose:
    g = corrections(np.asarray(x, float), problem.pivot)[0]
    return g.inverse().compose(problem.noisy_pose)


def evaluate(problem: AlignmentProblem, x: np.ndarray, chunk_particles: int = 8) -> np.ndarray:
    """Alignment loss for each correction row of ``x``."""
    origins, dirs, tgt_c, tgt_d, near, far = problem.prepare()
    inv_noisy = problem.noisy_pose.inverse()
    gs = corrections(x, problem.pivot)
    losses = np.empty(len(gs))
    lam = problem.lam
    for a in range(0, len(gs), chunk_particles):
        group = gs[a : a + chunk_particles]
        lo, ld = [], []
        for g in group:
            lp = inv_noisy.compose(g)
            lo.append(lp.apply(origins))
            ld.append(lp.apply_dir(dirs))
        k = len(group)
        out = render_rays(
            problem.local_field,
            np.concatenate(lo),
            np.concatenate(ld),
            problem.n_samples,
            weight_skip=problem.weight_skip,
            near_far=(np.tile(near, k), np.tile(far, k)),
        )
        n = len(origins)
        for i in range(len(group)):
            c = out.color[i * n : (i + 1) * n]
            d = out.depth[i * n : (i + 1) * n]
            rgb = np.abs(c - tgt_c).sum(axis=1).mean() if lam > 0 else 0.0
            dep = np.abs(d - tgt_d).mean() if lam < 1 else 0.0
            losses[a + i] = lam * rgb + (1.0 - lam) * dep
    if not np.all(np.isfinite(losses)):
        raise AlignmentError("non-finite alignment loss")
    return losses


def alignment_loss(problem: AlignmentProblem, candidate: Pose) -> float:
    """Loss of a candidate correction ``G`` (identity = keep the noisy pose)."""
    x = np.concatenate([candidate.translation + candidate.rotation @ problem.pivot - problem.pivot, candidate.rotvec()])
    return float(evaluate(problem, x[None])[0])


def correction_for(problem: AlignmentProblem, pose: Pose) -> np.ndarray:
    """Correction vector that turns the noisy pose into ``pose``."""
    g = problem.noisy_pose.compose(pose.inverse())
    t = g.translation + g.rotation @ problem.pivot - problem.pivot
    return np.concatenate([t, g.rotvec()])


def select_target_views(
    global_field: VoxelField,
    local_field: VoxelField,
    claimed_pose: Pose,
    cfg: ViewConfig,
    training_poses: list[Pose] | None = None,
) -> tuple[list[Pose], np.ndarray, RegionBounds]:
    """Target camera poses, their shared centre and the clip box over the
    models' overlap.

    ``synth`` mode spreads ``j_views`` bearings evenly (one nadir view when
    ``j_views == 1``); ``nearest`` borrows the orientations of the training
    poses closest to the centre.
    """
    g_box = occupied_bounds(global_field)
    l_box = occupied_bounds(local_field)
    if g_box.is_empty or l_box.is_empty or g_box.intersect(l_box.transformed(claimed_pose)).is_empty:
        raise AlignmentError("global and local models do not overlap")
    overlap = inscribed_clip(g_box, l_box, claimed_pose, cfg.margin)
    if overlap.is_empty:
        raise AlignmentError("global and local models do not overlap")
    c = overlap.center
    centre = np.array([c[0], c[1], overlap.min[2] + cfg.height])
    if cfg.mode == "nearest":
        if not training_poses:
            raise ValueError("nearest mode needs training poses")
        dist = [np.linalg.norm(p.translation - centre) for p in training_poses]
        order = np.argsort(dist, kind="stable")[: cfg.j_views]
        rots = [training_poses[i].rotation for i in order]
    elif cfg.j_views == 1:
        rots = [np.eye(3)]
    else:
        tilt = np.deg2rad(cfg.tilt_deg)
        rots = []
        for k in range(cfg.j_views):
            b = 2 * np.pi * k / cfg.j_views
            rots.append(look_rotation([np.sin(tilt) * np.cos(b), np.sin(tilt) * np.sin(b), -np.cos(tilt)]))
    return [Pose(r, centre) for r in rots], centre, overlap


def inscribed_clip(global_box: RegionBounds, local_box: RegionBounds, pose: Pose, margin: float) -> RegionBounds:
    """World box, centred on the claimed local region, whose corners map under
    ``pose`` inverse into ``local_box`` (in x and y); clipped to ``global_box``
    and pulled in horizontally by ``margin``."""
    mid = pose.apply(local_box.center)
    half = local_box.extent / 2
    z_lo, z_hi = global_box.lo[2], global_box.hi[2]
    inv = pose.inverse()

    def box(f):
        h = half[:2] * f
        return RegionBounds((mid[0] - h[0], mid[1] - h[1], z_lo), (mid[0] + h[0], mid[1] + h[1], z_hi))

    def fits(f):
        pts = inv.apply(box(f).corners())
        return np.all((pts[:, :2] >= local_box.lo[:2] - 1e-9) & (pts[:, :2] <= local_box.hi[:2] + 1e-9))

    lo_f, hi_f = 0.0, 1.0
    for _ in range(30):
        f = (lo_f + hi_f) / 2
        lo_f, hi_f = (f, hi_f) if fits(f) else (lo_f, f)
    out = box(lo_f).intersect(global_box)
    if out.is_empty:
        return out
    c, h = out.center, out.extent / 2
    h[:2] = np.maximum(h[:2] - margin, 0.25 * h[:2])
    return RegionBounds(c - h, c + h)


def build_problem(
    global_field: VoxelField,
    local_field: VoxelField,
    noisy_pose: Pose,
    view_cfg: ViewConfig | None = None,
    lam: float = 0.75,
    rays_per_view: int = 1024,
    n_samples: int = 64,
    global_bounds: RegionBounds | None = None,
    seed: int = 0,
    training_poses: list[Pose] | None = None,
) -> AlignmentProblem:
    view_cfg = view_cfg or ViewConfig()
    views, centre, overlap = select_target_views(global_field, local_field, noisy_pose, view_cfg, training_poses)
    intr = Camera.from_fov(view_cfg.width, view_cfg.height_px, view_cfg.fov_deg)
    clip = overlap
    return AlignmentProblem(
        global_field, local_field, noisy_pose, views, intr, lam, rays_per_view, n_samples, global_bounds, centre,
        seed=seed, clip=clip, view_cfg=view_cfg, training_poses=training_poses,
    )


def rebuild(
    problem: AlignmentProblem, pose: Pose, rays_per_view: int | None = None, extra_margin: float = 0.0, seed: int | None = None
) -> AlignmentProblem:
    """The same problem posed around ``pose``: new target views and clip box."""
    view_cfg = replace(problem.view_cfg, margin=problem.view_cfg.margin + extra_margin)
    out = build_problem(
        problem.global_field, problem.local_field, pose, view_cfg, problem.lam,
        rays_per_view or problem.rays_per_view, problem.n_samples, problem.global_bounds,
        problem.seed + 1 if seed is None else seed, problem.training_poses,
    )
    out.view_cfg = problem.view_cfg
    return out


@dataclass
class MCConfig:
    particles: int = 64
    rounds: int = 30
    spread_trans: float = 3.2
    spread_rot: float = 20.0
    anneal: float = 0.85
    elite_frac: float = 0.25
    floor_trans: float = 0.005
    floor_rot: float = 0.05
    seed: int = 0
    initial_particles: int | None = None
    probe: bool = True
    probe_directions: int = 6
    probe_radius: float | None = None
    probe_rounds: int = 10
    probe_particles: int = 24
    ambiguity_tol: float = 0.1
    polish_steps: int = 0
    adaptive: bool = True
    elite_scale: float = 1.5
    refine_rays: int = 0
    refine_rounds: int = 8
    refine_particles: int = 16
    guard_clip: bool = False
    recentre_stages: int = 2
    recentre_rounds: int = 15
    recentre_particles: int = 32
    recentre_spread: tuple = (0.5, 3.0)

    def __post_init__(self):
        if self.particles < 8 or self.rounds < 1:
            raise ValueError("need particles >= 8 and rounds >= 1")
        if not 0 < self.elite_frac < 1 or not 0 < self.anneal <= 1:
            raise ValueError("elite_frac must lie in (0, 1) and anneal in (0, 1]")


@dataclass
class Particle:
    delta: np.ndarray
    score: float

    @property
    def loss(self) -> float:
        return -self.score


@dataclass
class AlignmentResult:
    corrected_pose: Pose
    final_loss: float
    initial_loss: float
    iterations: int
    converged: bool
    ambiguous: bool = False
    delta: np.ndarray = dc_field(default_factory=lambda: np.zeros(6))
    trace: list = dc_field(default_factory=list)
    problem: AlignmentProblem | None = None


def _rng(seed: int, rnd: int, idx: int) -> np.random.Generator:
    return np.random.default_rng([seed, rnd, idx])


def _initial(cfg: MCConfig, n: int) -> np.ndarray:
    x = np.zeros((n, 6))
    rmax = np.deg2rad(cfg.spread_rot)
    for i in range(1, n):
        g = _rng(cfg.seed, 0, i)
        x[i, :3] = g.uniform(-cfg.spread_trans, cfg.spread_trans, 3)
        axis = g.normal(size=3)
        axis /= np.linalg.norm(axis)
        x[i, 3:] = axis * g.uniform(-rmax, rmax)
    return x


def _search(problem, cfg: MCConfig, x0: np.ndarray, s0: np.ndarray, rounds: int, particles: int,
            sig_t: float, sig_r: float, seed_offset: int, log: JsonlLog | None = None, stage: str = "search"):
    """Elitist annealed search from an evaluated population.

    The per-axis spread in round r is the elites' spread (times
    ``elite_scale``) capped by ``sig * anneal**r`` and floored by the
    resample noise floor.
    """
    pop_x, pop_s = x0, s0
    n_elite = max(1, int(round(cfg.elite_frac * particles)))
    cap0 = np.array([sig_t] * 3 + [sig_r] * 3)
    floor = np.array([cfg.floor_trans] * 3 + [np.deg2rad(cfg.floor_rot)] * 3)
    trace = []
    for r in range(1, rounds + 1):
        order = np.argsort(pop_s, kind="stable")[:n_elite]
        elite_x, elite_s = pop_x[order], pop_s[order]
        sig = cap0 * cfg.anneal**r
        if cfg.adaptive and len(elite_x) > 1:
            sig = np.minimum(sig, cfg.elite_scale * elite_x.std(axis=0))
        sig = np.maximum(sig, floor)
        kids = np.empty((particles - len(elite_x), 6))
        for i in range(len(kids)):
            g = _rng(cfg.seed + seed_offset, r, i)
            kids[i] = elite_x[i % len(elite_x)] + g.normal(0.0, 1.0, 6) * sig
        kid_s = evaluate(problem, kids)
        pop_x = np.concatenate([elite_x, kids])
        pop_s = np.concatenate([elite_s, kid_s])
        b = int(np.argmin(pop_s))
        rec = {"stage": stage, "round": r, "best_loss": float(pop_s[b]), "best_delta": pop_x[b].tolist(),
               "sigma_t": float(sig[:3].max()), "sigma_r_deg": float(np.rad2deg(sig[3:].max()))}
        trace.append(rec)
        if log is not None:
            log.write(**rec)
    order = np.argsort(pop_s, kind="stable")
    return pop_x[order], pop_s[order], trace


def _polish(problem, x, loss, steps: int, h_t=0.01, h_r=np.deg2rad(0.05)):
    """Central-difference gradient steps with backtracking."""
    h = np.array([h_t] * 3 + [h_r] * 3)
    for _ in range(steps):
        probes = np.concatenate([x + np.diag(h), x - np.diag(h)])
        vals = evaluate(problem, probes)
        grad = (vals[:6] - vals[6:]) / (2 * h)
        step = 1.0
        improved = False
        for _ in range(8):
            cand = x - step * grad * h * h / (np.abs(grad * h) + 1e-12)
            v = float(evaluate(problem, cand[None])[0])
            if v < loss:
                x, loss, improved = cand, v, True
                break
            step *= 0.5
        if not improved:
            break
    return x, loss


def align(problem: AlignmentProblem, cfg: MCConfig | None = None, log: JsonlLog | None = None) -> AlignmentResult:
    """Annealed particle search for the correction minimising the loss.

    With ``refine_rays`` set, the elites are re-scored on a denser ray set
    and searched further there; the reported losses are on that set.
    """
    cfg = cfg or MCConfig()
    if cfg.guard_clip and problem.view_cfg is not None:
        # until the pose is known to within the spread, clip well inside the claimed region
        problem = rebuild(problem, problem.noisy_pose, extra_margin=cfg.spread_trans, seed=problem.seed)
    n0 = cfg.initial_particles or 4 * cfg.particles
    x0 = _initial(cfg, n0)
    s0 = evaluate(problem, x0)
    initial_loss = float(s0[0])
    pop_x, pop_s, trace = _search(
        problem, cfg, x0, s0, cfg.rounds, cfg.particles, cfg.spread_trans, np.deg2rad(cfg.spread_rot), 0, log
    )
    rounds = cfg.rounds
    for k in range(cfg.recentre_stages):
        # the clip box and views follow the estimate, which removes the bias of a far-off claimed pose
        est = corrected_pose(problem, pop_x[0])
        moved = rebuild(problem, est)
        n_elite = max(1, int(round(cfg.elite_frac * cfg.recentre_particles)))
        keep = np.array([correction_for(moved, corrected_pose(problem, x)) for x in pop_x[:n_elite]])
        problem = moved
        pop_x, pop_s, tr = _search(
            problem, cfg, keep, evaluate(problem, keep), cfg.recentre_rounds, cfg.recentre_particles,
            cfg.recentre_spread[0], np.deg2rad(cfg.recentre_spread[1]), 200 + k, log, f"recentre{k + 1}",
        )
        trace += tr
        rounds += cfg.recentre_rounds
    if cfg.refine_rays:
        # re-centre views and clip on the coarse estimate, then search on a denser ray set
        fine = rebuild(problem, corrected_pose(problem, pop_x[0]), cfg.refine_rays)
        n_elite = max(1, int(round(cfg.elite_frac * cfg.refine_particles)))
        keep = np.array([correction_for(fine, corrected_pose(problem, x)) for x in pop_x[:n_elite]])
        start = np.concatenate([correction_for(fine, problem.noisy_pose)[None], keep])
        s_start = evaluate(fine, start)
        initial_loss = float(s_start[0])
        problem = fine
        sig = cfg.anneal**cfg.rounds
        pop_x, pop_s, tr = _search(
            problem, cfg, keep, s_start[1:], cfg.refine_rounds, cfg.refine_particles,
            max(cfg.spread_trans * sig, cfg.floor_trans), max(np.deg2rad(cfg.spread_rot) * sig, np.deg2rad(cfg.floor_rot)),
            500, log, "refine",
        )
        trace += tr
        rounds += cfg.refine_rounds
    best_x, best_loss = pop_x[0], float(pop_s[0])
    if cfg.polish_steps:
        best_x, best_loss = _polish(problem, best_x, best_loss, cfg.polish_steps)
    ambiguous = False
    if cfg.probe:
        ambiguous = _ambiguous(problem, cfg, best_x, best_loss, initial_loss)
    converged = bool(best_loss <= initial_loss and not ambiguous)
    return AlignmentResult(
        corrected_pose(problem, best_x), best_loss, initial_loss, rounds, converged, ambiguous, best_x, trace, problem
    )


def _ambiguous(problem, cfg: MCConfig, best_x, best_loss, initial_loss) -> bool:
    """Search again from horizontal offsets around the optimum and report
    whether a distinct, equally good minimum turns up.

    Each probe is posed around its own start, so it sees a clip box the
    local model fills, and its optimum is re-scored on views posed around
    it.  A distinct optimum counts as equally good when it sits within
    ``ambiguity_tol`` of the best loss, measured against the loss contrast
    between the probe start and the best.
    """
    radius = cfg.probe_radius if cfg.probe_radius is not None else 0.5 * cfg.spread_trans
    sep = 0.25 * radius
    best_pose = corrected_pose(problem, best_x)
    for k in range(cfg.probe_directions):
        b = 2 * np.pi * k / cfg.probe_directions
        start = best_x.copy()
        start[:3] += radius * np.array([np.cos(b), np.sin(b), 0.0])
        try:
            sub = rebuild(problem, corrected_pose(problem, start))
        except AlignmentError:
            continue
        x0 = correction_for(sub, corrected_pose(problem, start))[None]
        s0 = evaluate(sub, x0)
        xs, ls, _ = _search(
            sub, cfg, x0, s0, cfg.probe_rounds, cfg.probe_particles, radius / 2, np.deg2rad(2.0), 1000 + k,
            stage="probe",
        )
        found = corrected_pose(sub, xs[0])
        if translation_error(found, best_pose) <= sep:
            continue
        # score the probe optimum on views posed around it, as the best was
        try:
            there = rebuild(problem, found)
        except AlignmentError:
            continue
        loss = float(evaluate(there, correction_for(there, found)[None])[0])
        contrast = max(float(s0[0]) - best_loss, 1e-12)
        if loss <= best_loss + cfg.ambiguity_tol * contrast:
            return True
    return False


# experiment protocol --------------------------------------------------------

OK = "ok"
WRONG_MINIMUM = "wrong_minimum"
NOT_CONVERGED = "not_converged"


@dataclass
class TrialResult:
    init_trans: float
    init_rot: float
    final_trans: float
    final_rot: float
    converged: bool
    final_loss: float
    truth_loss: float
    initial_loss: float
    status: str

    @property
    def flagged(self) -> bool:
        return self.status != OK or not self.converged


def classify(final_trans, final_rot, final_loss, truth_loss, initial_loss, tol_trans, tol_rot, wm_tol=0.1) -> str:
    """``ok`` within tolerance; ``wrong_minimum`` when the pose is off but the
    loss is as low as at the truth; otherwise ``not_converged``."""
    if final_trans <= tol_trans and final_rot <= tol_rot:
        return OK
    if final_loss <= truth_loss + wm_tol * max(initial_loss - truth_loss, 0.0):
        return WRONG_MINIMUM
    return NOT_CONVERGED


def inject_and_recover(
    global_field: VoxelField,
    local_field: VoxelField,
    true_pose: Pose,
    noise_bounds: tuple[float, float],
    rng: np.random.Generator,
    mc: MCConfig | None = None,
    view_cfg: ViewConfig | None = None,
    lam: float = 0.75,
    rays_per_view: int = 1024,
    n_samples: int = 64,
    tol: tuple[float, float] = (0.16, 1.0),
    global_bounds: RegionBounds | None = None,
    noise: Pose | None = None,
) -> TrialResult:
    """Perturb the true pose (by ``noise`` if given, else a random draw
    within ``noise_bounds``), align, and report errors before and after."""
    mc = mc or MCConfig()
    noisy = perturb(true_pose, noise if noise is not None else random_pose_noise(rng, *noise_bounds))
    problem = build_problem(global_field, local_field, noisy, view_cfg, lam, rays_per_view, n_samples, global_bounds, seed=mc.seed)
    res = align(problem, mc)
    # the truth scored on views posed around it, like the search's final estimate
    try:
        at_truth = rebuild(res.problem, true_pose)
    except AlignmentError:
        at_truth = res.problem
    truth_loss = float(evaluate(at_truth, correction_for(at_truth, true_pose)[None])[0])
    ft = translation_error(res.corrected_pose, true_pose)
    fr = rotation_error_deg(res.corrected_pose, true_pose)
    status = classify(ft, fr, res.final_loss, truth_loss, res.initial_loss, *tol)
    return TrialResult(
        translation_error(noisy, true_pose),
        rotation_error_deg(noisy, true_pose),
        ft,
        fr,
        res.converged,
        res.final_loss,
        truth_loss,
        res.initial_loss,
        status,
    )
