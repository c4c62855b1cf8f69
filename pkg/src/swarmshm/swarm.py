"""Robot mission loop: uncertainty-driven sampling on the vibrating plate.

Robots alternate between navigating to the most uncertain nearby target,
stopping to acquire a spectrum sample, and broadcasting it to the swarm.
Targets come from a polar candidate grid filtered by a GP variance
threshold; when no admissible target exists the search radii are doubled
once, and if the retry also fails the robot proceeds to estimation. A
single coordinator advances all robots on a fixed tick, so runs are
deterministic for a given seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .gp import EXPLORATION_HYPER, GPHyper, IncrementalGP, posterior_variance
from .oma import BandProtocol, SampleSet, make_sample
from .vibration import SensorModel, VibrationField, sample_at


@dataclass(frozen=True)
class NavParams:
    """Navigation, communication, and budget parameters."""

    r_t: float = 0.15            # m, target radius
    r_e: float = None            # m, estimation radius; defaults to r_t + 0.1
    s_t: int = 10                # polar steps (radial and tangential)
    theta_sigma: float = 0.025   # variance threshold for target admission
    theta_x: float = 0.01        # m, minimum sample spacing
    speed: float = 0.05          # m/s
    turn_rate: float = math.pi / 2  # rad/s
    body_length: float = 0.04    # m; avoidance triggers at 1.5 body lengths
    max_avoidances: int = 5      # per navigation leg before retargeting
    sample_duration: float = 15.0  # s per acquisition stop
    battery: float = 1800.0      # s of operation
    dt: float = 0.1              # s, coordinator tick
    drop_prob: float = 0.0       # per-message per-receiver broadcast loss
    window_policy: str = "shared"  # or "per_robot", "per_sample"

    def __post_init__(self):
        if self.r_e is None:
            object.__setattr__(self, "r_e", self.r_t + 0.1)
        if not self.r_t < self.r_e:
            raise ValueError("r_t must be smaller than r_e")
        if self.s_t < 2:
            raise ValueError("s_t must be >= 2")
        if self.theta_x <= 0 or self.speed <= 0 or self.turn_rate <= 0:
            raise ValueError("theta_x, speed, turn_rate must be positive")
        if self.window_policy not in ("shared", "per_robot", "per_sample"):
            raise ValueError("window_policy must be shared, per_robot, or per_sample")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")

    @property
    def avoid_trigger_dist(self):
        return 1.5 * self.body_length


PHASES = ("navigating", "sampling", "estimating", "done")


@dataclass
class RobotState:
    id: int
    position: np.ndarray
    heading: float
    battery: float
    dataset: SampleSet
    phase: str = "navigating"
    collision_count_this_leg: int = 0
    target: np.ndarray = None
    avoid_waypoint: np.ndarray = None
    sampling_remaining: float = 0.0
    window_start: float = 0.0
    retarget_requested: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")


def candidate_targets(x_k, r_t: float, s_t: int, scale: int = 1,
                      side: float = 1.0) -> np.ndarray:
    """Polar candidate grid around x_k, clipped to the plate bounds.

    Radii are scale * m * r_t / s_t for m = 1..s_t and angles 2 pi n /
    s_t for n = 1..s_t, enumerated radius-major so the argmax tie-break
    is reproducible.
    """
    if s_t < 2:
        raise ValueError("s_t must be >= 2")
    x_k = np.asarray(x_k, dtype=float)
    m = np.arange(1, s_t + 1)
    ang = 2.0 * np.pi * np.arange(1, s_t + 1) / s_t
    r = (scale * m * r_t / s_t)[:, None]
    pts = np.stack([x_k[0] + r * np.cos(ang)[None, :],
                    x_k[1] + r * np.sin(ang)[None, :]], axis=-1).reshape(-1, 2)
    inside = np.all((pts >= 0.0) & (pts <= side), axis=1)
    return pts[inside]


def select_target(sset: SampleSet, x_k, params: NavParams,
                  hyper: GPHyper = EXPLORATION_HYPER, side: float = 1.0):
    """Most uncertain admissible candidate near x_k, or None.

    GP inputs are the shared samples within the estimation radius; a
    candidate is admissible when its posterior variance exceeds
    theta_sigma and it keeps theta_x clearance to every stored sample.
    If no candidate passes, both radii are doubled once and the search
    repeats; None means the robot should proceed to estimation.
    """
    x_k = np.asarray(x_k, dtype=float)
    locs = sset.locations
    for scale in (1, 2):
        cands = candidate_targets(x_k, params.r_t, params.s_t, scale=scale, side=side)
        if cands.size == 0:
            continue
        if len(sset):
            near = locs[np.linalg.norm(locs - x_k, axis=1) < scale * params.r_e]
        else:
            near = np.zeros((0, 2))
        var = posterior_variance(near, cands, hyper)
        ok = var > params.theta_sigma
        if len(sset):
            dmin = np.min(np.linalg.norm(cands[:, None, :] - locs[None, :, :], axis=2), axis=1)
            ok &= dmin >= params.theta_x
        if np.any(ok):
            var = np.where(ok, var, -np.inf)
            return cands[int(np.argmax(var))]
    return None


def _wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def step_motion(state: RobotState, target, dt: float, neighbors,
                params: NavParams, rng, side: float = 1.0) -> RobotState:
    """One kinematic tick toward the target: turn first, then drive.

    A neighbor or wall inside the forward detection cone at 1.5 body
    lengths triggers the randomized avoidance maneuver (turn by
    U(-pi, pi), drive U(0.05, 0.2) m). The maneuver itself runs without
    further triggers; battery drains by dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    state.battery -= dt
    goal = state.avoid_waypoint if state.avoid_waypoint is not None else np.asarray(target, dtype=float)

    if state.avoid_waypoint is None and _obstacle_ahead(state, goal, neighbors, params, side):
        ang = rng.uniform(-math.pi, math.pi)
        dist = rng.uniform(0.05, 0.2)
        state.heading = _wrap_angle(state.heading + ang)
        wp = state.position + dist * np.array([math.cos(state.heading), math.sin(state.heading)])
        state.avoid_waypoint = np.clip(wp, 0.0, side)
        state.collision_count_this_leg += 1
        return state

    delta = goal - state.position
    dist = float(np.hypot(delta[0], delta[1]))
    if dist < 1e-9:
        state.avoid_waypoint = None
        return state
    want = math.atan2(delta[1], delta[0])
    err = _wrap_angle(want - state.heading)
    max_turn = params.turn_rate * dt
    if abs(err) > 1e-6:
        state.heading = _wrap_angle(state.heading + np.clip(err, -max_turn, max_turn))
        if abs(err) > max_turn:
            return state  # still turning
    step = min(params.speed * dt, dist)
    state.position = np.clip(
        state.position + step * np.array([math.cos(state.heading), math.sin(state.heading)]),
        0.0, side)
    if state.avoid_waypoint is not None and \
            float(np.hypot(*(state.avoid_waypoint - state.position))) < 1e-6:
        state.avoid_waypoint = None
    return state


def _obstacle_ahead(state: RobotState, neighbors, params: NavParams, side: float) -> bool:
    trig = params.avoid_trigger_dist
    hx, hy = math.cos(state.heading), math.sin(state.heading)
    ahead = state.position + trig * np.array([hx, hy])
    if np.any(ahead < 0.0) or np.any(ahead > side):
        return True
    for nb in neighbors:
        d = nb - state.position
        dist = float(np.hypot(d[0], d[1]))
        if dist < 1e-12 or dist >= trig:
            continue
        if (d[0] * hx + d[1] * hy) / dist > math.cos(math.pi / 4):  # 90 deg cone
            return True
    return False


@dataclass
class MissionResult:
    robots: list
    events: list                 # dicts with "t" and "event"
    variance_log: list           # (t, max probe variance) after each accepted sample
    probe_grid: np.ndarray
    protocol: BandProtocol
    duration: float

    @property
    def sample_set(self) -> SampleSet:
        """The largest robot dataset (all identical under lossless broadcast)."""
        return max((r.dataset for r in self.robots), key=len)

    def final_max_variance(self) -> float:
        return self.variance_log[-1][1] if self.variance_log else float("nan")

    def events_jsonl(self) -> str:
        return "\n".join(json.dumps(e, sort_keys=True) for e in self.events) + "\n"


def run_mission(field: VibrationField, params: NavParams, seed: int,
                n_robots: int = 5, sensor: SensorModel = None,
                hyper: GPHyper = EXPLORATION_HYPER, protocol: BandProtocol = None,
                probe_grid_n: int = 21, initial_positions=None) -> MissionResult:
    """Simulate the full mission until every robot is done.

    Every acquired sample is broadcast to all robots (subject to
    ``params.drop_prob``); the sender discards its own acquisition in the
    rare race where a sample closer than theta_x arrived during the
    acquisition stop, which keeps every dataset spacing-consistent. The
    variance log records the max GP variance over a fixed probe grid
    after each accepted sample.
    """
    if n_robots < 1:
        raise ValueError("n_robots must be >= 1")
    side = field.basis.side_length
    sensor = sensor or SensorModel(sample_rate=field.sample_rate)
    if protocol is None:
        protocol = BandProtocol(mode_freqs=tuple(float(f) for f in field.basis.frequencies),
                                sample_rate=field.sample_rate)

    root = np.random.SeedSequence(seed)
    ss_init, ss_windows, ss_noise, ss_comm, *ss_robots = root.spawn(4 + n_robots)
    rng_init = np.random.default_rng(ss_init)
    rng_windows = np.random.default_rng(ss_windows)
    rng_noise = np.random.default_rng(ss_noise)
    rng_comm = np.random.default_rng(ss_comm)
    robot_rngs = [np.random.default_rng(s) for s in ss_robots]

    max_start = field.duration - params.sample_duration
    shared_start = rng_windows.uniform(0.0, max_start)
    robot_starts = rng_windows.uniform(0.0, max_start, size=n_robots)

    robots = []
    for i in range(n_robots):
        pos = initial_positions[i] if initial_positions is not None \
            else rng_init.uniform(0.05, side - 0.05, size=2)
        heading = rng_init.uniform(-math.pi, math.pi)
        if params.window_policy == "shared":
            wstart = shared_start
        elif params.window_policy == "per_robot":
            wstart = robot_starts[i]
        else:
            wstart = 0.0  # drawn per sample below
        robots.append(RobotState(id=i, position=np.asarray(pos, dtype=float),
                                 heading=heading, battery=params.battery,
                                 dataset=SampleSet(params.theta_x),
                                 target=np.asarray(pos, dtype=float),
                                 window_start=wstart))

    probes_1d = np.linspace(0.0, side, probe_grid_n)
    probe_grid = np.array([(a, b) for a in probes_1d for b in probes_1d])
    tracker = IncrementalGP(hyper, probe_grid)

    events = []
    variance_log = []
    t = 0.0

    def log(event, robot=None, **extra):
        rec = {"t": round(t, 6), "event": event}
        if robot is not None:
            rec["robot"] = robot
        rec.update(extra)
        events.append(rec)

    def choose_next(robot):
        nxt = select_target(robot.dataset, robot.position, params, hyper, side)
        robot.collision_count_this_leg = 0
        robot.avoid_waypoint = None
        robot.retarget_requested = False
        if nxt is None:
            robot.phase = "estimating"
            robot.target = None
            log("estimate", robot.id)
        else:
            robot.phase = "navigating"
            robot.target = nxt
            log("retarget", robot.id, target=[round(float(v), 6) for v in nxt])

    while any(r.phase != "done" for r in robots):
        for robot in robots:
            if robot.phase == "done":
                continue
            robot.battery -= 0.0  # battery handled per-branch below
            if robot.phase == "estimating":
                # estimation is post-mission number crunching; the robot
                # has stopped acquiring and is finished here
                robot.phase = "done"
                log("done", robot.id, reason="coverage")
                continue
            if robot.battery <= 0.0:
                robot.phase = "done"
                log("done", robot.id, reason="battery")
                continue

            if robot.phase == "sampling":
                robot.battery -= params.dt
                robot.sampling_remaining -= params.dt
                if robot.sampling_remaining > 1e-9:
                    continue
                # acquisition complete at the stored window
                if params.window_policy == "per_sample":
                    wstart = rng_windows.uniform(0.0, max_start)
                else:
                    wstart = robot.window_start
                wid = field.window_start_index(wstart)
                a = sample_at(field, robot.position, (wstart, params.sample_duration),
                              sensor, seed=int(rng_noise.integers(2**32)))
                sample = make_sample(a, robot.position.copy(), wid, protocol)
                if robot.dataset.would_violate_spacing(sample.location):
                    # a broadcast landed within theta_x during this stop
                    log("discard", robot.id, reason="spacing")
                else:
                    log("sample", robot.id,
                        x=[round(float(v), 6) for v in sample.location], window_id=wid)
                    for other in robots:
                        if other.id != robot.id and params.drop_prob > 0.0 \
                                and rng_comm.random() < params.drop_prob:
                            continue
                        if not other.dataset.would_violate_spacing(sample.location):
                            other.dataset.add(sample)
                        if other.id != robot.id and other.phase == "navigating" \
                                and other.target is not None \
                                and float(np.hypot(*(other.target - sample.location))) < params.theta_x:
                            other.retarget_requested = True
                    log("broadcast", robot.id, size=len(robots) - 1)
                    tracker.add(sample.location)
                    variance_log.append((round(t, 6), tracker.max_probe_variance()))
                choose_next(robot)
                continue

            # navigating
            robot.battery -= params.dt
            if robot.retarget_requested or \
                    robot.collision_count_this_leg >= params.max_avoidances:
                choose_next(robot)
                continue
            neighbors = [r.position for r in robots if r.id != robot.id and r.phase != "done"]
            step_motion(robot, robot.target, params.dt, neighbors, params,
                        robot_rngs[robot.id], side)
            if robot.collision_count_this_leg > 0 and robot.avoid_waypoint is not None:
                log("avoid", robot.id, count=robot.collision_count_this_leg)
            if robot.avoid_waypoint is None and \
                    float(np.hypot(*(robot.target - robot.position))) < 1e-6:
                robot.phase = "sampling"
                robot.sampling_remaining = params.sample_duration
        t += params.dt

    log("mission_end", duration=round(t, 6), samples=len(max((r.dataset for r in robots), key=len)))
    return MissionResult(robots=robots, events=events, variance_log=variance_log,
                         probe_grid=probe_grid, protocol=protocol, duration=t)
