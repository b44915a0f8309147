"""Scene randomization, synthetic top-down depth rendering in clean ("sim")
and degraded ("real") sensor styles, the sensor depth-normalization
pipeline, and planner-labeled dataset generation.

Rendering is a height raster: each entity class sits at a fixed height
above the table, a virtual overhead camera converts height to a raw
nonlinear sensor value, and the sensor pipeline maps raw values to the
normalized depth images the models consume. "Real" style corrupts the raw
values (blur, noise, dropout patches, row jitter) before conversion, so a
zero-corruption real render equals the sim render exactly.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .kinematics import (JointConfig, check_collision, end_effector,
                         forward_kinematics, ik_solve, point_clear,
                         within_limits)
from .planner import (config_at_arclength, extract_waypoints,
                      goal_joint_config, plan_birrt_star, shortcut_smooth)

log = logging.getLogger(__name__)

DATASET_MAGIC = b"RPDS0001"

# raster geometry: view box covers the base and the whole workspace
VIEW_BOX = ((-0.25, 1.00), (-0.85, 0.85))
TABLE_HEIGHT = 0.0
GOAL_HEIGHT = 0.10
ARM_HEIGHT = 0.25
OBSTACLE_HEIGHT = 0.45
CAMERA_HEIGHT = 1.4
GOAL_DISC_RADIUS = 0.05


class UnsatisfiableSpecError(RuntimeError):
    """Rejection sampling exhausted its budget."""


@dataclass(frozen=True)
class Obstacle:
    kind: str                    # "circle" | "rect"
    center: tuple
    radius: float = 0.0
    width: float = 0.0
    height: float = 0.0
    id: int = 0

    def __post_init__(self):
        if self.kind == "circle":
            if self.radius <= 0:
                raise ValueError("circle obstacle needs radius > 0")
        elif self.kind == "rect":
            if self.width <= 0 or self.height <= 0:
                raise ValueError("rect obstacle needs width, height > 0")
        else:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")


@dataclass
class Scene:
    obstacles: list
    goal: np.ndarray
    workspace: tuple = ((0.2, 0.9), (-0.8, 0.8))

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=np.float64)
        (xlo, xhi), (ylo, yhi) = self.workspace
        if not (xlo <= self.goal[0] <= xhi and ylo <= self.goal[1] <= yhi):
            raise ValueError(f"goal {self.goal} outside workspace")
        for ob in self.obstacles:
            cx, cy = ob.center
            if not (xlo <= cx <= xhi and ylo <= cy <= yhi):
                raise ValueError(f"obstacle {ob.id} center outside workspace")
        if not point_clear(self.goal, self.obstacles):
            raise ValueError("goal lies inside an obstacle")

    @property
    def n_obs(self):
        return len(self.obstacles)


@dataclass(frozen=True)
class RandomizationSpec:
    workspace: tuple = ((0.2, 0.9), (-0.8, 0.8))
    goal_x: tuple = (0.2, 0.9)
    goal_y: tuple = (-0.8, 0.8)
    goal_grid: tuple = None          # optional discrete goal points
    n_obs_choices: tuple = (0, 1, 2)
    obstacle_x: tuple = (0.2, 0.9)
    obstacle_y: tuple = (-0.8, 0.8)
    obstacle_size: tuple = (0.12, 0.25)
    start_points: tuple = None       # optional ee start cells (IK'd)

    def __post_init__(self):
        for name in ("goal_x", "goal_y", "obstacle_x", "obstacle_y"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")
        if any(n < 0 for n in self.n_obs_choices):
            raise ValueError("n_obs must be >= 0")
        if self.obstacle_size[0] <= 0 or self.obstacle_size[1] <= 0:
            raise ValueError("obstacle_size must be positive")


@dataclass(frozen=True)
class SensorParams:
    p_near: float = 0.1
    p_far: float = 3.0
    d_min: float = 0.5
    d_max: float = 1.5
    noise_sigma: float = 0.004
    blur_radius: float = 1.0
    dropout_rate: float = 0.01
    jitter_px: int = 1

    def __post_init__(self):
        if not 0 < self.p_near < self.p_far:
            raise ValueError("need 0 < p_near < p_far")
        if self.d_min >= self.d_max:
            raise ValueError("need d_min < d_max")


@dataclass
class DepthImage:
    width: int
    height: int
    data: np.ndarray             # (height, width) float32 in [0, 1]
    style: str                   # "sim" | "real"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.shape != (self.height, self.width):
            raise ValueError(f"data shape {self.data.shape} != ({self.height}, {self.width})")
        if self.style not in ("sim", "real"):
            raise ValueError(f"unknown style {self.style!r}")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("depth values must lie in [0, 1]")


# ---------------------------------------------------------------------------
# scene sampling

GOAL_CLEAR_MARGIN = 0.06         # free space needed around a goal point
# obstacles stay clear of the first link's full swing circle (0.4 + link
# radius + slack); otherwise joint limits at +-pi can disconnect the free
# space and make scenes unsolvable
BASE_CLEAR_MARGIN = 0.47
REACH_MARGIN = 0.02              # goals must be IK-reachable with slack


def _sample_goal(spec, arm, rng):
    if spec.goal_grid is not None:
        pts = np.asarray(spec.goal_grid, dtype=np.float64)
        return pts[rng.integers(0, len(pts))].copy()
    return np.array([rng.uniform(*spec.goal_x), rng.uniform(*spec.goal_y)])


def _sample_obstacle(spec, rng, idx):
    center = (float(rng.uniform(*spec.obstacle_x)), float(rng.uniform(*spec.obstacle_y)))
    w, h = spec.obstacle_size
    if rng.random() < 0.5:       # quarter-turn orientation choice
        w, h = h, w
    return Obstacle(kind="rect", center=center, width=w, height=h, id=idx)


def sample_scene(arm, spec, seed, max_rejections=1000):
    """Draw a (Scene, start JointConfig) pair satisfying all constraints.

    Rejection rules: goal within the arm's reach (minus margin) and clear of
    obstacles; obstacles off the base; start collision-free (uniform in
    joint limits, or IK onto one of spec.start_points when given).
    Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    rejections = 0

    def reject():
        nonlocal rejections
        rejections += 1
        if rejections > max_rejections:
            raise UnsatisfiableSpecError(
                f"scene sampling exceeded {max_rejections} rejections (seed {seed})")

    while True:
        goal = _sample_goal(spec, arm, rng)
        if np.linalg.norm(goal - np.asarray(arm.base)) > arm.reach - REACH_MARGIN:
            reject()
            continue

        n = int(rng.choice(spec.n_obs_choices))
        obstacles = []
        ok = True
        for i in range(n):
            placed = False
            for _ in range(50):
                ob = _sample_obstacle(spec, rng, i)
                if not point_clear(goal, [ob], margin=GOAL_CLEAR_MARGIN):
                    reject()
                    continue
                if not point_clear(np.asarray(arm.base), [ob], margin=BASE_CLEAR_MARGIN):
                    reject()
                    continue
                obstacles.append(ob)
                placed = True
                break
            if not placed:
                ok = False
                break
        if not ok:
            continue

        start = _sample_start(arm, spec, obstacles, rng, reject)
        if start is None:
            continue
        scene = Scene(obstacles=obstacles, goal=goal, workspace=spec.workspace)
        return scene, start


def _sample_start(arm, spec, obstacles, rng, reject):
    lo, hi = arm.limits_lo(), arm.limits_hi()
    for _ in range(50):
        if spec.start_points is not None:
            pts = np.asarray(spec.start_points, dtype=np.float64)
            target = pts[rng.integers(0, len(pts))]
            q = ik_solve(arm, target, rng)
            if q is None:
                reject()
                continue
        else:
            q = rng.uniform(lo, hi)
        if check_collision(arm, q, obstacles)[0]:
            reject()
            continue
        return JointConfig(q)
    return None


# ---------------------------------------------------------------------------
# rendering

def _height_to_raw(heights, params):
    dist = CAMERA_HEIGHT - heights
    return (1.0 - params.p_near / dist) / (1.0 - params.p_near / params.p_far)


def depth_convert(raw, params):
    """Sensor raw values -> clipped metric distance -> normalized [0, 1]."""
    raw = np.clip(np.asarray(raw, dtype=np.float64), 0.0, 1.0)
    k = 1.0 - params.p_near / params.p_far
    dist = params.p_near / (1.0 - raw * k)
    dist = np.clip(dist, params.d_min, params.d_max)
    return ((dist - params.d_min) / (params.d_max - params.d_min)).astype(np.float32)


class SceneRenderer:
    """Rasterizes scenes into depth images with a reusable pixel grid.

    The static layer (table + goal + obstacles) can be cached per scene and
    combined with the per-step arm layer, which is the hot path in the
    control loop.
    """

    def __init__(self, arm, params=SensorParams(), width=64, height=64,
                 view=VIEW_BOX):
        self.arm = arm
        self.params = params
        self.width = width
        self.height = height
        (xlo, xhi), (ylo, yhi) = view
        xs = xlo + (np.arange(width) + 0.5) * (xhi - xlo) / width
        ys = yhi - (np.arange(height) + 0.5) * (yhi - ylo) / height   # row 0 on top
        self.px, self.py = np.meshgrid(xs, ys)
        self.aa = 0.5 * ((xhi - xlo) / width + (yhi - ylo) / height)

    def _coverage(self, sdf):
        return np.clip(0.5 - sdf / self.aa, 0.0, 1.0)

    def _disc_sdf(self, center, radius):
        return np.hypot(self.px - center[0], self.py - center[1]) - radius

    def _rect_sdf(self, center, width, height):
        qx = np.abs(self.px - center[0]) - width / 2.0
        qy = np.abs(self.py - center[1]) - height / 2.0
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        return outside + inside

    def _capsule_sdf(self, a, b, radius):
        abx, aby = b[0] - a[0], b[1] - a[1]
        denom = abx * abx + aby * aby
        if denom == 0.0:
            return np.hypot(self.px - a[0], self.py - a[1]) - radius
        t = np.clip(((self.px - a[0]) * abx + (self.py - a[1]) * aby) / denom, 0.0, 1.0)
        return np.hypot(self.px - (a[0] + t * abx), self.py - (a[1] + t * aby)) - radius

    def static_heights(self, scene):
        """Height raster of everything except the arm."""
        heights = np.full((self.height, self.width), TABLE_HEIGHT)
        np.maximum(heights, GOAL_HEIGHT * self._coverage(
            self._disc_sdf(scene.goal, GOAL_DISC_RADIUS)), out=heights)
        for ob in scene.obstacles:
            if ob.kind == "circle":
                sdf = self._disc_sdf(ob.center, ob.radius)
            else:
                sdf = self._rect_sdf(ob.center, ob.width, ob.height)
            np.maximum(heights, OBSTACLE_HEIGHT * self._coverage(sdf), out=heights)
        return heights

    def heights(self, scene, angles, static=None):
        heights = (self.static_heights(scene) if static is None else static).copy()
        if angles is not None:
            points, _ = forward_kinematics(self.arm, angles)
            for i in range(self.arm.n_joints):
                sdf = self._capsule_sdf(points[i], points[i + 1], self.arm.link_radius * 2)
                np.maximum(heights, ARM_HEIGHT * self._coverage(sdf), out=heights)
        return heights

    def render(self, scene, angles, style="sim", seed=0, static=None):
        """Depth image of the scene; angles may be None (arm absent)."""
        raw = _height_to_raw(self.heights(scene, angles, static), self.params)
        if style == "real":
            raw = corrupt(raw, self.params, np.random.default_rng(seed))
        elif style != "sim":
            raise ValueError(f"unknown style {style!r}")
        data = depth_convert(raw, self.params)
        return DepthImage(self.width, self.height, data, style)


def render(scene, angles, arm, style="sim", params=SensorParams(), seed=0):
    """One-shot rendering helper (builds a fresh SceneRenderer)."""
    return SceneRenderer(arm, params).render(scene, angles, style, seed)


# ---------------------------------------------------------------------------
# sensor corruption (applied to raw values, before depth conversion)

def _separable_blur(img, sigma):
    r = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-r, r + 1)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()
    pad = np.pad(img, ((r, r), (0, 0)), mode="edge")
    img = sum(kernel[i] * pad[i:i + img.shape[0], :] for i in range(2 * r + 1))
    pad = np.pad(img, ((0, 0), (r, r)), mode="edge")
    return sum(kernel[i] * pad[:, i:i + img.shape[1]] for i in range(2 * r + 1))


def corrupt(raw, params, rng):
    """Blur -> additive noise -> dropout patches -> per-row jitter.

    All knobs at zero leave the input untouched. Dropout patches emulate
    invalid far readings (raw value 1).
    """
    img = np.asarray(raw, dtype=np.float64).copy()
    h, w = img.shape
    if params.blur_radius > 0:
        img = _separable_blur(img, params.blur_radius)
    if params.noise_sigma > 0:
        img = img + rng.normal(0.0, params.noise_sigma, size=img.shape)
    if params.dropout_rate > 0:
        area = 0.0
        target = params.dropout_rate * h * w
        while area < target:
            ph = int(rng.integers(2, 7))
            pw = int(rng.integers(2, 7))
            r0 = int(rng.integers(0, h - ph + 1))
            c0 = int(rng.integers(0, w - pw + 1))
            img[r0:r0 + ph, c0:c0 + pw] = 1.0
            area += ph * pw
    if params.jitter_px > 0:
        shifts = rng.integers(-params.jitter_px, params.jitter_px + 1, size=h)
        cols = (np.arange(w)[None, :] - shifts[:, None]) % w
        img = img[np.arange(h)[:, None], cols]
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# dataset container and file format

MAX_OBSTACLE_SLOTS = 4
_OB_KIND_NONE, _OB_KIND_CIRCLE, _OB_KIND_RECT = 0.0, 1.0, 2.0


def pack_obstacles(obstacles, slots=MAX_OBSTACLE_SLOTS):
    """Fixed-width float encoding: rows [kind, cx, cy, a, b] (a,b = radius
    or width/height), padded with kind=0 rows."""
    out = np.zeros((slots, 5), dtype=np.float32)
    if len(obstacles) > slots:
        raise ValueError(f"more than {slots} obstacles")
    for i, ob in enumerate(obstacles):
        if ob.kind == "circle":
            out[i] = (_OB_KIND_CIRCLE, ob.center[0], ob.center[1], ob.radius, 0.0)
        else:
            out[i] = (_OB_KIND_RECT, ob.center[0], ob.center[1], ob.width, ob.height)
    return out


def unpack_obstacles(rows):
    obstacles = []
    for i, row in enumerate(np.asarray(rows)):
        kind = int(round(float(row[0])))
        if kind == 0:
            continue
        if kind == 1:
            obstacles.append(Obstacle(kind="circle", center=(float(row[1]), float(row[2])),
                                      radius=float(row[3]), id=i))
        else:
            obstacles.append(Obstacle(kind="rect", center=(float(row[1]), float(row[2])),
                                      width=float(row[3]), height=float(row[4]), id=i))
    return obstacles


class PlanningDataset:
    """Columnar dataset: named float32 arrays with equal leading length.

    On disk: a directory holding meta.json plus one little-endian float32
    blob per field, each prefixed with an 8-byte magic header.
    """

    def __init__(self, fields, meta=None):
        self.fields = {k: np.asarray(v, dtype=np.float32) for k, v in fields.items()}
        lengths = {len(v) for v in self.fields.values()}
        if len(lengths) > 1:
            raise ValueError(f"field lengths differ: { {k: len(v) for k, v in self.fields.items()} }")
        self.meta = dict(meta or {})

    def __len__(self):
        if not self.fields:
            return 0
        return len(next(iter(self.fields.values())))

    def __getitem__(self, name):
        return self.fields[name]

    def subset(self, indices):
        return PlanningDataset({k: v[indices] for k, v in self.fields.items()},
                               dict(self.meta, subset_of=self.meta.get("seed")))

    @staticmethod
    def concatenate(parts):
        parts = list(parts)
        keys = parts[0].fields.keys()
        if any(p.fields.keys() != keys for p in parts):
            raise ValueError("datasets have different fields")
        fields = {k: np.concatenate([p.fields[k] for p in parts]) for k in keys}
        return PlanningDataset(fields, dict(parts[0].meta))

    def save(self, path):
        path = FsPath(path)
        path.mkdir(parents=True, exist_ok=True)
        table = []
        for name in sorted(self.fields):
            arr = np.ascontiguousarray(self.fields[name], dtype="<f4")
            (path / f"{name}.bin").write_bytes(DATASET_MAGIC + arr.tobytes())
            table.append({"name": name, "shape": list(arr.shape), "dtype": "float32"})
        meta = {"magic": DATASET_MAGIC.decode(), "count": len(self),
                "fields": table, "meta": self.meta}
        with open(path / "meta.json", "w") as f:
            json.dump(meta, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        path = FsPath(path)
        with open(path / "meta.json") as f:
            meta = json.load(f)
        if meta.get("magic") != DATASET_MAGIC.decode():
            raise ValueError(f"bad dataset magic in {path}")
        fields = {}
        for entry in meta["fields"]:
            raw = (path / f"{entry['name']}.bin").read_bytes()
            if raw[:8] != DATASET_MAGIC:
                raise ValueError(f"bad blob magic for field {entry['name']}")
            arr = np.frombuffer(raw, dtype="<f4", offset=8).reshape(entry["shape"])
            fields[entry["name"]] = arr.copy()
        return cls(fields, meta.get("meta", {}))


# ---------------------------------------------------------------------------
# dataset generation

def generate_dataset(arm, spec, planner_cfg, sensor, n_scenes,
                     samples_per_path, seed, frame="cartesian", k=5,
                     spacing=0.15, smooth_iterations=100):
    """Plan scenes and emit (I_sim, I_real, s_robot, w_truth) tuples.

    Each scene is planned once; robot states are sampled uniformly along
    the smoothed path and labeled with the K waypoints ahead. Scenes whose
    planning fails are skipped (logged); a failure rate above 50% aborts.
    Deterministic per seed.
    """
    renderer = SceneRenderer(arm, sensor)
    rows = {name: [] for name in
            ("sim", "real", "robot_state", "waypoints", "angles", "goal",
             "obstacles", "n_obs")}
    failed = 0
    for i in range(n_scenes):
        scene_seed = seed * 1000003 + i
        rng = np.random.default_rng(scene_seed)
        scene, start = sample_scene(arm, spec, scene_seed)
        goal_cfg = goal_joint_config(arm, scene.obstacles, scene.goal, rng)
        if goal_cfg is None:
            failed += 1
            log.info("scene %d: no collision-free goal config", i)
            continue
        path = plan_birrt_star(arm, scene.obstacles, start.angles, goal_cfg,
                               planner_cfg, seed=scene_seed)
        if path is None:
            failed += 1
            log.info("scene %d: planning failed", i)
            continue
        path = shortcut_smooth(path, arm, scene.obstacles,
                               iterations=smooth_iterations, seed=scene_seed)
        static = renderer.static_heights(scene)
        total = path.length
        packed = pack_obstacles(scene.obstacles)
        for j in range(samples_per_path):
            q = config_at_arclength(path, rng.uniform(0.0, total))
            wset = extract_waypoints(path, q, arm, k=k, spacing=spacing, frame=frame)
            sim = renderer.render(scene, q, "sim", static=static)
            real = renderer.render(scene, q, "real", seed=scene_seed * 31 + j,
                                   static=static)
            s_robot = end_effector(arm, q) if frame == "cartesian" else q
            rows["sim"].append(sim.data)
            rows["real"].append(real.data)
            rows["robot_state"].append(np.asarray(s_robot, dtype=np.float32))
            rows["waypoints"].append(wset.offsets.astype(np.float32))
            rows["angles"].append(q.astype(np.float32))
            rows["goal"].append(scene.goal.astype(np.float32))
            rows["obstacles"].append(packed)
            rows["n_obs"].append(np.float32(scene.n_obs))

    if n_scenes > 0 and failed / n_scenes > 0.5:
        raise RuntimeError(
            f"planner failed on {failed}/{n_scenes} scenes; "
            "randomization spec or planner config is off")

    n_state = 2 if frame == "cartesian" else arm.n_joints
    fields = {name: (np.stack(vals) if vals else _empty_field(name, arm, k, n_state))
              for name, vals in rows.items()}
    meta = {"seed": seed, "frame": frame, "k": k, "spacing": spacing,
            "n_scenes": n_scenes, "samples_per_path": samples_per_path,
            "scenes_failed": failed, "spec": _spec_as_json(spec),
            "sensor": asdict(sensor)}
    return PlanningDataset(fields, meta)


def _empty_field(name, arm, k, n_state):
    shapes = {"sim": (0, 64, 64), "real": (0, 64, 64),
              "robot_state": (0, n_state), "waypoints": (0, k, n_state),
              "angles": (0, arm.n_joints), "goal": (0, 2),
              "obstacles": (0, MAX_OBSTACLE_SLOTS, 5), "n_obs": (0,)}
    return np.zeros(shapes[name], dtype=np.float32)


def _spec_as_json(spec):
    d = asdict(spec)
    return json.loads(json.dumps(d))     # tuples -> lists for stable storage
