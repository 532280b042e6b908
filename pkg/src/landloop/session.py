"""Interaction loop with hold-to-intervene arbitration and the online trainer.

Two roles cooperate: the interaction loop owns the simulator and appends
human-sourced rows to the dataset; the trainer owns a private copy of the
policy, fine-tunes it in bursts whenever unconsumed rows exist, and
publishes immutable snapshots that the loop reads before every step.

A burst repeatedly draws a 64-row minibatch, checks its loss, and applies
one RMSProp update, ending as soon as a minibatch comes in at or under the
loss threshold (0.005) or after 2000 updates. Rows appended while a burst
runs are picked up by the next burst (the watermark marks consumed rows).

The trainer can be driven two ways with identical burst semantics:

* lockstep - the loop grants the trainer a fixed epoch budget per agent
  step (``epochs_per_step``), emulating a concurrent worker at a fixed
  compute ratio. Fully deterministic; used for experiment grids.
* threaded - a real background thread trains continuously while the loop
  runs at wall-clock rate; used for live teleoperation sessions.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .camera import (
    CameraConfig,
    ObservationScales,
    PadTracker,
    assemble_observation,
    check_pad_in_initial_fov,
)
from .dataset import HumanDataset, HumanSample, SampleSource
from .errors import DatasetError
from .mlp import (
    Minibatch,
    OptimizerState,
    PolicyParams,
    forward,
    init_policy,
    mse_loss_and_grads,
    rmsprop_step,
    save_checkpoint,
)
from .sim import ActionCommand, EpisodeStatus, Simulator, TaskConfig

HOVER_ACTION = ActionCommand(0.0, 0.0, 0.0, 0.0)

# Stable sub-stream tags hung off the session seed.
STREAM_RESET = 1
STREAM_POLICY_INIT = 2
STREAM_TRAINER = 3
STREAM_PILOT = 4
STREAM_EVAL = 5


def rng_stream(seed: int, *tags: int) -> np.random.Generator:
    """Independent, reproducible generator derived from (seed, tags)."""
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


class ControlSource(Enum):
    AGENT = "agent"
    HUMAN = "human"


class SessionMode(Enum):
    DEMO_ONLY = "demo"
    INTERVENTION_ONLY = "intervene"
    CYCLE_OF_LEARNING = "col"


class ActorKind(Enum):
    LIVE_HUMAN = "live_human"
    SYNTHETIC = "synthetic"


class ActorDisconnected(Exception):
    """The human input source vanished mid-step; treated as trigger release."""


@dataclass(frozen=True)
class SessionConfig:
    mode: SessionMode = SessionMode.CYCLE_OF_LEARNING
    n_episodes: int = 4
    actor: ActorKind = ActorKind.SYNTHETIC
    alpha: float = 1.0
    checkpoint_dir: str = "checkpoints"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")

    def demo_episodes(self) -> int:
        """Leading episodes flown entirely by the human under this mode."""
        if self.mode is SessionMode.DEMO_ONLY:
            return self.n_episodes
        if self.mode is SessionMode.INTERVENTION_ONLY:
            return 0
        return math.ceil(self.n_episodes / 2)


@dataclass(frozen=True)
class TrainerConfig:
    minibatch_size: int = 64
    loss_threshold: float = 0.005
    max_epochs_per_burst: int = 2000
    epochs_per_step: int = 16
    learning_rate: float = 1e-4
    decay: float = 0.9
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainerStatus:
    watermark: int
    last_loss: float | None
    epochs_run_last_burst: int
    busy: bool


@dataclass(frozen=True)
class PolicySnapshot:
    """Immutable published policy; arrays are read-only views."""

    version: int
    params: PolicyParams
    fingerprint: int


class BurstTrainer:
    """Burst-training engine over the shared dataset.

    Single-owner: exactly one driver (the loop in lockstep mode, or the
    wrapping thread) calls run_epochs/drain. Snapshot publication is one
    attribute assignment of a frozen object, so loop-side reads are never
    torn.
    """

    def __init__(self, ds: HumanDataset, params: PolicyParams, cfg: TrainerConfig,
                 rng: np.random.Generator) -> None:
        self.ds = ds
        self.params = params
        self.cfg = cfg
        self.rng = rng
        self.opt = OptimizerState.for_params(
            params, learning_rate=cfg.learning_rate, decay=cfg.decay, eps=cfg.eps)
        self.watermark = 0
        self.last_loss: float | None = None
        self.epochs_run_last_burst = 0
        self.diverged = False
        self._in_burst = False
        self._burst_target = 0
        self._burst_epochs = 0
        self._version = 0
        self.snapshot = PolicySnapshot(0, params.frozen(), params.fingerprint())

    @property
    def busy(self) -> bool:
        return (not self.diverged) and (
            self._in_burst or self.ds.new_samples_since(self.watermark) > 0)

    def status(self) -> TrainerStatus:
        return TrainerStatus(
            watermark=self.watermark,
            last_loss=self.last_loss,
            epochs_run_last_burst=self.epochs_run_last_burst,
            busy=self.busy,
        )

    def _publish(self) -> None:
        self._version += 1
        self.snapshot = PolicySnapshot(
            self._version, self.params.frozen(), self.params.fingerprint())

    def _end_burst(self) -> None:
        self.watermark = self._burst_target
        self.epochs_run_last_burst = self._burst_epochs
        self._in_burst = False
        self._publish()

    def run_epochs(self, max_epochs: int) -> int:
        """Advance up to max_epochs update steps, crossing burst boundaries as needed."""
        if self.diverged:
            return 0
        ran = 0
        while ran < max_epochs:
            if not self._in_burst:
                if self.ds.new_samples_since(self.watermark) <= 0:
                    break
                self._burst_target = self.ds.count
                self._burst_epochs = 0
                self._in_burst = True
            batch = self.ds.sample_minibatch(self.cfg.minibatch_size, self.rng)
            loss, grads = mse_loss_and_grads(self.params, batch)
            if not math.isfinite(loss):
                # Keep the last good snapshot; the session surfaces the flag.
                self.diverged = True
                self._in_burst = False
                return ran
            self.last_loss = loss
            if loss <= self.cfg.loss_threshold:
                self._end_burst()
                continue
            rmsprop_step(self.params, grads, self.opt)
            self._burst_epochs += 1
            ran += 1
            if self._burst_epochs >= self.cfg.max_epochs_per_burst:
                self._end_burst()
        return ran

    def drain(self) -> None:
        """Train until every appended row has been consumed by some burst."""
        while self.busy:
            if self.run_epochs(self.cfg.max_epochs_per_burst) == 0 and not self._in_burst:
                break


class ThreadedTrainer:
    """Runs a BurstTrainer on a background thread for live sessions."""

    def __init__(self, core: BurstTrainer, chunk: int = 64, idle_sleep: float = 0.002) -> None:
        self.core = core
        self.chunk = chunk
        self.idle_sleep = idle_sleep
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="burst-trainer", daemon=True)

    def _run(self) -> None:
        while not self._stop.is_set():
            ran = self.core.run_epochs(self.chunk)
            if ran == 0:
                time.sleep(self.idle_sleep)

    def start(self) -> "ThreadedTrainer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=10.0)

    @property
    def snapshot(self) -> PolicySnapshot:
        return self.core.snapshot

    def status(self) -> TrainerStatus:
        return self.core.status()

    def drain(self, timeout: float = 120.0) -> None:
        deadline = time.monotonic() + timeout
        while self.core.busy and time.monotonic() < deadline:
            time.sleep(0.005)


@dataclass(frozen=True)
class StepOutcome:
    executed: ActionCommand
    source: ControlSource
    observation: np.ndarray
    agent_action: ActionCommand
    state_after: object
    status: EpisodeStatus


def interaction_step(
    sim: Simulator,
    tracker: PadTracker,
    scales: ObservationScales,
    snapshot: PolicySnapshot,
    actor,
    ds: HumanDataset,
    episode_id: int,
    source_tag: SampleSource,
    force_override: bool = False,
) -> StepOutcome:
    """One arbitrated step: exactly one action reaches the simulator.

    The human action is executed and recorded iff the override is active
    (forced during demonstrations, else the actor's trigger); agent actions
    are never recorded. Actor disconnects count as a released trigger.
    """
    state = sim.state
    det = tracker.observe(state)
    obs = assemble_observation(state, det, scales)
    agent_action = ActionCommand.from_array(forward(snapshot.params, obs))

    override = False
    human_action: ActionCommand | None = None
    if actor is not None:
        try:
            override = True if force_override else bool(actor.wants_control(state, det))
            if override:
                human_action = actor.act(state, det).clamped()
        except ActorDisconnected:
            override = False
            human_action = None

    if override and human_action is not None:
        try:
            ds.append(HumanSample(
                episode_id=episode_id,
                step=state.time_step,
                source=source_tag,
                observation=tuple(float(x) for x in obs),
                action=(human_action.roll, human_action.pitch,
                        human_action.yaw, human_action.throttle),
            ))
        except DatasetError:
            # Storage failed: hold position and let the session halt safely.
            sim.step(HOVER_ACTION)
            raise
        executed, source = human_action, ControlSource.HUMAN
    else:
        executed, source = agent_action, ControlSource.AGENT

    state_after, status = sim.step(executed)
    return StepOutcome(
        executed=executed, source=source, observation=obs,
        agent_action=agent_action, state_after=state_after, status=status,
    )


@dataclass(frozen=True)
class EpisodeRecord:
    episode_id: int
    phase: SampleSource
    steps: int
    status: str
    success: bool
    samples_recorded: int
    dataset_total: int
    checkpoint_path: str
    trainer_epochs_last_burst: int
    rolling_success: float


@dataclass
class SessionResult:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    dataset_path: str = ""
    log_path: str = ""
    stopped_early: bool = False
    trainer_diverged: bool = False

    @property
    def total_human_samples(self) -> int:
        return self.episodes[-1].dataset_total if self.episodes else 0


def run_session(
    cfg: SessionConfig,
    task: TaskConfig,
    actor,
    trainer_cfg: TrainerConfig = TrainerConfig(),
    cam: CameraConfig = CameraConfig(),
    out_dir: str | None = None,
    threaded: bool = False,
    config_hash: str = "",
) -> SessionResult:
    """Run a full multi-episode session and checkpoint the policy after each episode.

    Demonstration episodes force the override on for every step; in
    intervention episodes the actor decides. The trainer is drained at each
    episode boundary (the vehicle is on the ground, the human repositions),
    so per-episode checkpoints reflect all data recorded so far.
    """
    check_pad_in_initial_fov(task, cam)
    out_dir = out_dir or cfg.checkpoint_dir
    os.makedirs(out_dir, exist_ok=True)
    ds = HumanDataset(os.path.join(out_dir, "dataset.csv"))
    log_path = os.path.join(out_dir, "session_log.ndjson")
    scales = ObservationScales.from_configs(task, cam)
    sim = Simulator(cfg=task, rng=rng_stream(cfg.seed, STREAM_RESET))
    tracker = PadTracker(cam, task.pad_radius)
    params = init_policy(rng_stream(cfg.seed, STREAM_POLICY_INIT))
    core = BurstTrainer(ds, params, trainer_cfg, rng_stream(cfg.seed, STREAM_TRAINER))
    trainer = ThreadedTrainer(core).start() if threaded else core

    result = SessionResult(dataset_path=ds.path, log_path=log_path)
    demo_count = cfg.demo_episodes()
    successes = 0
    try:
        with open(log_path, "w") as log:
            for ep in range(1, cfg.n_episodes + 1):
                is_demo = ep <= demo_count
                source_tag = SampleSource.DEMONSTRATION if is_demo else SampleSource.INTERVENTION
                sim.reset()
                tracker.reset()
                if hasattr(actor, "begin_episode"):
                    actor.begin_episode(is_demo)
                samples_before = ds.count
                status = sim.status()
                while status.running:
                    outcome = interaction_step(
                        sim, tracker, scales, trainer.snapshot, actor, ds,
                        episode_id=ep, source_tag=source_tag, force_override=is_demo,
                    )
                    status = outcome.status
                    if not threaded:
                        core.run_epochs(trainer_cfg.epochs_per_step)
                    st = trainer.status()
                    log.write(json.dumps({
                        "episode": ep,
                        "step": outcome.state_after.time_step,
                        "source": outcome.source.value,
                        "loss": st.last_loss,
                        "status": status.tag.value,
                    }) + "\n")

                trainer.drain()
                if core.diverged:
                    result.trainer_diverged = True
                ckpt_path = os.path.join(out_dir, f"ep{ep:03d}.ckpt")
                save_checkpoint(ckpt_path, core.params, core.opt, config_hash=config_hash)

                successes += 1 if status.landed_success else 0
                rolling = successes / ep
                rec = EpisodeRecord(
                    episode_id=ep,
                    phase=source_tag,
                    steps=sim.state.time_step,
                    status=status.tag.value,
                    success=status.landed_success,
                    samples_recorded=ds.count - samples_before,
                    dataset_total=ds.count,
                    checkpoint_path=ckpt_path,
                    trainer_epochs_last_burst=trainer.status().epochs_run_last_burst,
                    rolling_success=rolling,
                )
                result.episodes.append(rec)
                log.write(json.dumps({
                    "episode": ep,
                    "event": "episode_end",
                    "status": status.tag.value,
                    "steps": rec.steps,
                    "samples": rec.samples_recorded,
                    "rolling_success": rolling,
                }) + "\n")
                if cfg.alpha < 1.0 and rolling >= cfg.alpha:
                    result.stopped_early = True
                    break
    finally:
        if threaded:
            trainer.stop()
        ds.close()
    return result
