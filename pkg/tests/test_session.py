"""Interaction loop, burst trainer, snapshot publication, full sessions."""

import json
import threading
import zlib

import numpy as np
import pytest

import landloop.session as session_mod
from landloop.camera import CameraConfig, ObservationScales, PadTracker
from landloop.dataset import HumanDataset, HumanSample, SampleSource
from landloop.errors import DatasetError
from landloop.mlp import Minibatch, init_policy, load_checkpoint
from landloop.pilot import PilotConfig, ScriptedPilot
from landloop.session import (
    STREAM_TRAINER,
    ActorDisconnected,
    BurstTrainer,
    ControlSource,
    SessionConfig,
    SessionMode,
    ThreadedTrainer,
    TrainerConfig,
    interaction_step,
    rng_stream,
    run_session,
)
from landloop.sim import ActionCommand, Simulator, TaskConfig

TASK = TaskConfig()
CAM = CameraConfig()
SCALES = ObservationScales.from_configs(TASK, CAM)


class FixedActor:
    """Deterministic stand-in for a human: fixed sticks, scripted trigger."""

    def __init__(self, action=ActionCommand(0.1, -0.2, 0.0, -0.5), holds=None):
        self.action = action
        self.holds = holds  # None: never; "always"; or a set of step indices
        self.disconnect_on_act = False

    def begin_episode(self, demonstration=False):
        pass

    def act(self, state, det):
        if self.disconnect_on_act:
            raise ActorDisconnected()
        return self.action

    def wants_control(self, state, det):
        if self.holds == "always":
            return True
        return bool(self.holds) and state.time_step in self.holds


def fresh_loop(tmp_path, seed=0):
    sim = Simulator(cfg=TaskConfig(rng_seed=seed))
    sim.reset()
    tracker = PadTracker(CAM, TASK.pad_radius)
    ds = HumanDataset(tmp_path / "d.csv")
    params = init_policy(np.random.default_rng(seed))
    trainer = BurstTrainer(ds, params, TrainerConfig(), rng_stream(seed, STREAM_TRAINER))
    return sim, tracker, ds, trainer


class TestInteractionStep:
    def test_override_executes_and_records_human_action(self, tmp_path):
        sim, tracker, ds, trainer = fresh_loop(tmp_path)
        actor = FixedActor(holds="always")
        out = interaction_step(sim, tracker, SCALES, trainer.snapshot, actor, ds,
                               episode_id=1, source_tag=SampleSource.INTERVENTION)
        assert out.source is ControlSource.HUMAN
        assert out.executed == actor.action
        assert ds.count == 1
        assert ds.row(0).action == (0.1, -0.2, 0.0, -0.5)

    def test_released_override_executes_agent_action_unrecorded(self, tmp_path):
        sim, tracker, ds, trainer = fresh_loop(tmp_path)
        actor = FixedActor(holds=None)
        out = interaction_step(sim, tracker, SCALES, trainer.snapshot, actor, ds,
                               episode_id=1, source_tag=SampleSource.INTERVENTION)
        assert out.source is ControlSource.AGENT
        assert out.executed == out.agent_action
        assert ds.count == 0

    def test_force_override_records_every_step(self, tmp_path):
        sim, tracker, ds, trainer = fresh_loop(tmp_path)
        actor = FixedActor(holds=None)
        for _ in range(25):
            interaction_step(sim, tracker, SCALES, trainer.snapshot, actor, ds,
                             episode_id=1, source_tag=SampleSource.DEMONSTRATION,
                             force_override=True)
        assert ds.count == 25

    def test_disconnect_mid_override_falls_back_to_agent(self, tmp_path):
        sim, tracker, ds, trainer = fresh_loop(tmp_path)
        actor = FixedActor(holds="always")
        actor.disconnect_on_act = True
        out = interaction_step(sim, tracker, SCALES, trainer.snapshot, actor, ds,
                               episode_id=1, source_tag=SampleSource.INTERVENTION)
        assert out.source is ControlSource.AGENT
        assert ds.count == 0

    def test_no_actor_is_pure_agent(self, tmp_path):
        sim, tracker, ds, trainer = fresh_loop(tmp_path)
        out = interaction_step(sim, tracker, SCALES, trainer.snapshot, None, ds,
                               episode_id=1, source_tag=SampleSource.INTERVENTION)
        assert out.source is ControlSource.AGENT
        assert ds.count == 0

    def test_storage_failure_halts_with_hover(self, tmp_path):
        sim, tracker, ds, trainer = fresh_loop(tmp_path)
        ds._fh.close()
        steps_before = sim.state.time_step
        actor = FixedActor(holds="always")
        with pytest.raises(DatasetError):
            interaction_step(sim, tracker, SCALES, trainer.snapshot, actor, ds,
                             episode_id=1, source_tag=SampleSource.INTERVENTION)
        # The vehicle was stepped exactly once, under a hover command.
        assert sim.state.time_step == steps_before + 1


def append_fixed_sample(ds, obs_seed=5, action=(0.3, -0.2, 0.0, -0.4), episode=1, step=0):
    rng = np.random.default_rng(obs_seed)
    ds.append(HumanSample(episode_id=episode, step=step,
                          source=SampleSource.DEMONSTRATION,
                          observation=tuple(rng.uniform(-1, 1, 15)),
                          action=action))


class TestBurstTrainer:
    def test_no_new_samples_no_updates(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path)
        before = trainer.params.fingerprint()
        assert trainer.run_epochs(500) == 0
        assert trainer.params.fingerprint() == before
        assert trainer.snapshot.version == 0

    def test_single_sample_burst_converges_under_threshold(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path, seed=1)
        append_fixed_sample(ds)
        trainer.drain()
        st = trainer.status()
        assert st.last_loss is not None and st.last_loss <= 0.005
        assert st.epochs_run_last_burst < 2000
        assert st.watermark == 1
        assert not st.busy

    def test_inconsistent_dataset_hits_epoch_cap_at_variance_floor(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path, seed=2)
        rng = np.random.default_rng(0)
        obs = tuple(rng.uniform(-1, 1, 15))
        ds.append(HumanSample(1, 0, SampleSource.DEMONSTRATION, obs, (0.5, 0.5, 0.5, 0.5)))
        ds.append(HumanSample(1, 1, SampleSource.DEMONSTRATION, obs, (-0.5, -0.5, -0.5, -0.5)))
        trainer.drain()
        st = trainer.status()
        # Irreducible per-element MSE is 0.25 (targets +-0.5 around mean 0).
        assert st.epochs_run_last_burst == 2000
        assert st.last_loss == pytest.approx(0.25, abs=0.05)

    def test_rows_added_during_burst_feed_the_next_burst(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path, seed=3)
        append_fixed_sample(ds)
        trainer.run_epochs(1)  # opens the burst at count=1
        append_fixed_sample(ds, obs_seed=6, episode=1, step=1)
        trainer.drain()
        assert trainer.status().watermark == 2

    def test_snapshot_version_advances_per_burst(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path, seed=4)
        append_fixed_sample(ds)
        trainer.drain()
        v1 = trainer.snapshot.version
        append_fixed_sample(ds, obs_seed=7, step=1)
        trainer.drain()
        assert trainer.snapshot.version > v1

    def test_snapshot_fingerprint_consistent(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path, seed=5)
        append_fixed_sample(ds)
        trainer.drain()
        snap = trainer.snapshot
        crc = 0
        for a in snap.params.weights + snap.params.biases:
            crc = zlib.crc32(np.ascontiguousarray(a).tobytes(), crc)
        assert crc == snap.fingerprint

    def test_snapshot_arrays_read_only(self, tmp_path):
        _, _, ds, trainer = fresh_loop(tmp_path)
        with pytest.raises(ValueError):
            trainer.snapshot.params.weights[0][0, 0] = 1.0

    def test_divergence_halts_and_keeps_last_snapshot(self, tmp_path, monkeypatch):
        _, _, ds, trainer = fresh_loop(tmp_path, seed=6)
        append_fixed_sample(ds)
        trainer.drain()
        good = trainer.snapshot
        monkeypatch.setattr(session_mod, "mse_loss_and_grads",
                            lambda p, b: (float("nan"), None))
        append_fixed_sample(ds, obs_seed=8, step=1)
        trainer.run_epochs(100)
        assert trainer.diverged
        assert trainer.snapshot is good
        assert trainer.run_epochs(100) == 0

    def test_deterministic_given_dataset_and_seed(self, tmp_path):
        fps = []
        for run in range(2):
            ds = HumanDataset(tmp_path / f"d{run}.csv")
            params = init_policy(np.random.default_rng(9))
            trainer = BurstTrainer(ds, params, TrainerConfig(), rng_stream(9, STREAM_TRAINER))
            for i in range(5):
                append_fixed_sample(ds, obs_seed=i, step=i,
                                    action=(0.1 * i - 0.2, 0.0, 0.0, -0.3))
            trainer.drain()
            fps.append(trainer.params.fingerprint())
        assert fps[0] == fps[1]


class TestThreadedTrainer:
    def test_concurrent_snapshot_reads_never_torn(self, tmp_path):
        ds = HumanDataset(tmp_path / "d.csv")
        params = init_policy(np.random.default_rng(0))
        # Opposite-action rows keep the trainer churning (never converges).
        rng = np.random.default_rng(1)
        obs = tuple(rng.uniform(-1, 1, 15))
        core = BurstTrainer(ds, params, TrainerConfig(), rng_stream(0, STREAM_TRAINER))
        trainer = ThreadedTrainer(core, chunk=8).start()
        bad = []
        stop = threading.Event()

        def reader():
            while not stop.is_set():
                snap = trainer.snapshot
                crc = 0
                for a in snap.params.weights + snap.params.biases:
                    crc = zlib.crc32(np.ascontiguousarray(a).tobytes(), crc)
                if crc != snap.fingerprint:
                    bad.append(snap.version)

        threads = [threading.Thread(target=reader) for _ in range(2)]
        for t in threads:
            t.start()
        for i in range(40):
            sign = 1.0 if i % 2 == 0 else -1.0
            ds.append(HumanSample(1, i, SampleSource.DEMONSTRATION, obs,
                                  (0.5 * sign,) * 4))
        trainer.drain(timeout=60)
        stop.set()
        for t in threads:
            t.join()
        trainer.stop()
        assert not bad
        assert trainer.snapshot.version >= 1


def oracle_session(tmp_path, mode, n_episodes, seed=0, subdir="run",
                   trainer_cfg=TrainerConfig(), noise=0.05):
    cfg = SessionConfig(mode=mode, n_episodes=n_episodes, seed=seed,
                        checkpoint_dir=str(tmp_path / subdir))
    task = TaskConfig(rng_seed=seed)
    pilot = ScriptedPilot(PilotConfig(seed=seed, action_noise_std=noise), task)
    return run_session(cfg, task, pilot, trainer_cfg=trainer_cfg)


class TestRunSession:
    def test_col_schedule_demos_then_interventions(self, tmp_path):
        result = oracle_session(tmp_path, SessionMode.CYCLE_OF_LEARNING, 4)
        phases = [r.phase for r in result.episodes]
        assert phases == [SampleSource.DEMONSTRATION, SampleSource.DEMONSTRATION,
                          SampleSource.INTERVENTION, SampleSource.INTERVENTION]

    def test_demo_only_session_checkpoints_and_tags(self, tmp_path):
        result = oracle_session(tmp_path, SessionMode.DEMO_ONLY, 3, subdir="demo")
        assert len(result.episodes) == 3
        for rec in result.episodes:
            assert rec.phase is SampleSource.DEMONSTRATION
            # Every step of a demonstration is recorded.
            assert rec.samples_recorded == rec.steps
            params, opt, _ = load_checkpoint(rec.checkpoint_path)
            assert params.layer_sizes == (15, 130, 72, 40, 4)
            assert opt is not None
        ds = HumanDataset.open(result.dataset_path)
        assert all(s.source is SampleSource.DEMONSTRATION for s in ds._samples)

    def test_intervention_only_records_fewer_samples_than_demo(self, tmp_path):
        demo = oracle_session(tmp_path, SessionMode.DEMO_ONLY, 4, subdir="d4")
        intr = oracle_session(tmp_path, SessionMode.INTERVENTION_ONLY, 4, subdir="i4")
        assert 0 < intr.total_human_samples < demo.total_human_samples

    def test_session_log_structure(self, tmp_path):
        result = oracle_session(tmp_path, SessionMode.DEMO_ONLY, 1, subdir="log")
        lines = [json.loads(l) for l in open(result.log_path)]
        step_lines = [l for l in lines if "source" in l]
        end_lines = [l for l in lines if l.get("event") == "episode_end"]
        assert len(step_lines) == result.episodes[0].steps
        assert len(end_lines) == 1
        assert all(l["source"] == "human" for l in step_lines)

    def test_early_stop_below_alpha_one(self, tmp_path):
        cfg = SessionConfig(mode=SessionMode.DEMO_ONLY, n_episodes=10, seed=0,
                            alpha=0.5, checkpoint_dir=str(tmp_path / "early"))
        task = TaskConfig(rng_seed=0)
        pilot = ScriptedPilot(PilotConfig(seed=0, action_noise_std=0.0), task)
        result = run_session(cfg, task, pilot)
        assert result.stopped_early
        assert len(result.episodes) < 10

    def test_alpha_one_runs_all_episodes(self, tmp_path):
        result = oracle_session(tmp_path, SessionMode.DEMO_ONLY, 2, subdir="full", noise=0.0)
        assert len(result.episodes) == 2
        assert not result.stopped_early
        assert result.episodes[0].rolling_success == 1.0

    def test_session_reproducible(self, tmp_path):
        a = oracle_session(tmp_path, SessionMode.CYCLE_OF_LEARNING, 2, subdir="a")
        b = oracle_session(tmp_path, SessionMode.CYCLE_OF_LEARNING, 2, subdir="b")
        assert [r.steps for r in a.episodes] == [r.steps for r in b.episodes]
        assert a.total_human_samples == b.total_human_samples
        ca = open(a.dataset_path).read()
        cb = open(b.dataset_path).read()
        assert ca == cb
