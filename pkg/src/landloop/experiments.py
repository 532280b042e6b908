"""Experiment grid: train under each condition, evaluate checkpoints, emit reports.

Conditions cover the three human-interaction modes (driven by the scripted
pilot), PPO at three action-space sizes, and a random agent. Each
(condition, budget, seed) cell owns its simulator, dataset file, and rng
streams, so cells are independent and grids re-run byte-identically under
fixed seeds. Human conditions evaluate the final-episode checkpoint over
``eval_runs`` fresh episodes of pure agent control; sample counts come
straight from the recorded dataset.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraConfig, ObservationScales, PadTracker, assemble_observation
from .config import config_hash
from .errors import CheckpointError, ConfigError
from .mlp import PolicyParams, forward, load_checkpoint
from .pilot import PilotConfig, ScriptedPilot
from .ppo import PPOConfig, random_agent_action, restrict_action, train_ppo
from .session import STREAM_EVAL, SessionConfig, SessionMode, TrainerConfig, rng_stream, run_session
from .sim import ActionCommand, Simulator, TaskConfig

HUMAN_CONDITIONS = {
    "DemonstrationOnly": SessionMode.DEMO_ONLY,
    "InterventionOnly": SessionMode.INTERVENTION_ONLY,
    "CycleOfLearning": SessionMode.CYCLE_OF_LEARNING,
}
PPO_CONDITIONS = {"PPO-2": 2, "PPO-3": 3, "PPO-4": 4}
ALL_CONDITIONS = tuple(HUMAN_CONDITIONS) + tuple(PPO_CONDITIONS) + ("Random",)

RESULTS_HEADER = "condition,budget,seed,completion,human_samples"
SUMMARY_HEADER = (
    "condition,budget,completion_mean,completion_stderr,"
    "samples_mean,samples_stderr,completion_per_sample,ratio_vs_demo"
)


@dataclass(frozen=True)
class ExperimentGrid:
    conditions: tuple[str, ...] = tuple(HUMAN_CONDITIONS)
    budgets: tuple[int, ...] = (4, 8, 12, 20)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    eval_runs: int = 100
    curve_eval_runs: int = 0  # >0 also evaluates every per-episode checkpoint
    ppo_episode_budget: int = 1000

    def __post_init__(self) -> None:
        if not self.conditions or not self.budgets or not self.seeds:
            raise ConfigError("grid needs at least one condition, budget, and seed")
        unknown = set(self.conditions) - set(ALL_CONDITIONS)
        if unknown:
            raise ConfigError(f"unknown conditions: {sorted(unknown)}")
        if self.eval_runs < 1:
            raise ConfigError("eval_runs must be >= 1")


def grid_from_ini(path) -> ExperimentGrid:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read grid file {path}: {exc}") from exc
    if not parser.has_section("grid"):
        return ExperimentGrid()
    kwargs = {}
    for name, raw in parser.items("grid"):
        if name == "conditions":
            kwargs["conditions"] = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif name in ("budgets", "seeds"):
            kwargs[name] = tuple(int(s) for s in raw.split(",") if s.strip())
        elif name in ("eval_runs", "curve_eval_runs", "ppo_episode_budget"):
            kwargs[name] = int(raw)
        else:
            raise ConfigError(f"[grid] unknown key {name!r}")
    return ExperimentGrid(**kwargs)


def evaluate_policy(act_fn, task: TaskConfig, cam: CameraConfig, n_runs: int,
                    seed: int) -> float:
    """Fraction of n_runs seeded episodes that land on the pad under act_fn."""
    sim = Simulator(cfg=task, rng=rng_stream(seed, STREAM_EVAL))
    tracker = PadTracker(cam, task.pad_radius)
    scales = ObservationScales.from_configs(task, cam)
    wins = 0
    for _ in range(n_runs):
        sim.reset()
        tracker.reset()
        status = sim.status()
        while status.running:
            obs = assemble_observation(sim.state, tracker.observe(sim.state), scales)
            _, status = sim.step(act_fn(obs))
        wins += int(status.landed_success)
    return wins / n_runs


def evaluate_checkpoint(checkpoint, n_runs: int, seed: int,
                        task: TaskConfig = TaskConfig(),
                        cam: CameraConfig = CameraConfig()) -> float:
    """Evaluate saved or in-memory policy params over n_runs pure-agent episodes."""
    if isinstance(checkpoint, PolicyParams):
        params = checkpoint
    else:
        try:
            params, _, _ = load_checkpoint(checkpoint)
        except CheckpointError:
            raise
    return evaluate_policy(
        lambda obs: ActionCommand.from_array(forward(params, obs)),
        task, cam, n_runs, seed,
    )


@dataclass
class CellResult:
    condition: str
    budget: int
    seed: int
    completion: float
    human_samples: int | None = None
    checkpoint_path: str = ""
    error: str = ""


@dataclass
class GridResult:
    grid: ExperimentGrid
    cells: list[CellResult] = field(default_factory=list)
    curves: dict = field(default_factory=dict)  # (condition, budget, seed) -> list[rows]

    def cell(self, condition: str, budget: int, seed: int) -> CellResult:
        for c in self.cells:
            if (c.condition, c.budget, c.seed) == (condition, budget, seed):
                return c
        raise KeyError((condition, budget, seed))


def _run_human_cell(condition: str, budget: int, seed: int, task_base: TaskConfig,
                    cam: CameraConfig, pilot_base: PilotConfig,
                    trainer_cfg: TrainerConfig, grid: ExperimentGrid,
                    out_dir: str) -> tuple[CellResult, list]:
    task = dataclasses.replace(task_base, rng_seed=seed)
    cell_dir = os.path.join(out_dir, "sessions", condition, f"b{budget:02d}_s{seed}")
    session_cfg = SessionConfig(
        mode=HUMAN_CONDITIONS[condition], n_episodes=budget, seed=seed,
        checkpoint_dir=cell_dir,
    )
    pilot = ScriptedPilot(dataclasses.replace(pilot_base, seed=seed), task)
    chash = config_hash(task=task, camera=cam, pilot=pilot.cfg,
                        trainer=trainer_cfg, session=session_cfg)
    result = run_session(session_cfg, task, pilot, trainer_cfg=trainer_cfg,
                         cam=cam, config_hash=chash)
    final = result.episodes[-1]
    completion = evaluate_checkpoint(final.checkpoint_path, grid.eval_runs, seed, task, cam)
    curve = []
    if grid.curve_eval_runs > 0:
        for rec in result.episodes:
            frac = evaluate_checkpoint(rec.checkpoint_path, grid.curve_eval_runs,
                                       seed, task, cam)
            curve.append((rec.episode_id, frac))
    cell = CellResult(condition=condition, budget=budget, seed=seed,
                      completion=completion, human_samples=result.total_human_samples,
                      checkpoint_path=final.checkpoint_path)
    return cell, curve


def _run_ppo_cell(condition: str, seed: int, task_base: TaskConfig, cam: CameraConfig,
                  grid: ExperimentGrid) -> tuple[CellResult, list]:
    task = dataclasses.replace(task_base, rng_seed=seed)
    cfg = PPOConfig(action_dims=PPO_CONDITIONS[condition], seed=seed,
                    episode_budget=grid.ppo_episode_budget)
    policy, ppo_result = train_ppo(cfg, task, cam)
    completion = evaluate_policy(
        lambda obs: restrict_action(policy.deterministic_action(obs), cfg.action_dims),
        task, cam, grid.eval_runs, seed,
    )
    curve = [(i + 1, s, r) for i, (s, r) in
             enumerate(zip(ppo_result.episode_successes, ppo_result.rolling_success))]
    cell = CellResult(condition=condition, budget=cfg.episode_budget, seed=seed,
                      completion=completion)
    return cell, curve


def _run_random_cell(condition: str, seed: int, task_base: TaskConfig,
                     cam: CameraConfig, grid: ExperimentGrid) -> CellResult:
    task = dataclasses.replace(task_base, rng_seed=seed)
    rng = rng_stream(seed, STREAM_EVAL, 99)
    completion = evaluate_policy(lambda obs: random_agent_action(rng),
                                 task, cam, grid.eval_runs, seed)
    return CellResult(condition=condition, budget=0, seed=seed, completion=completion)


def run_grid(
    grid: ExperimentGrid,
    out_dir: str,
    task: TaskConfig = TaskConfig(),
    cam: CameraConfig = CameraConfig(),
    pilot: PilotConfig = PilotConfig(),
    trainer: TrainerConfig = TrainerConfig(),
    progress=None,
) -> GridResult:
    """Run every grid cell; failures are recorded per cell and the grid continues."""
    os.makedirs(out_dir, exist_ok=True)
    result = GridResult(grid=grid)
    for condition in grid.conditions:
        budgets = grid.budgets if condition in HUMAN_CONDITIONS else (None,)
        for budget in budgets:
            for seed in grid.seeds:
                try:
                    if condition in HUMAN_CONDITIONS:
                        cell, curve = _run_human_cell(
                            condition, budget, seed, task, cam, pilot, trainer,
                            grid, out_dir)
                        if curve:
                            result.curves[(condition, budget, seed)] = curve
                    elif condition in PPO_CONDITIONS:
                        cell, curve = _run_ppo_cell(condition, seed, task, cam, grid)
                        result.curves[(condition, cell.budget, seed)] = curve
                    else:
                        cell = _run_random_cell(condition, seed, task, cam, grid)
                except Exception as exc:  # cell isolation: record and continue
                    cell = CellResult(condition=condition, budget=budget or 0,
                                      seed=seed, completion=float("nan"),
                                      error=f"{type(exc).__name__}: {exc}")
                result.cells.append(cell)
                if progress is not None:
                    progress(cell)
    return result


def _mean_stderr(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return mean, stderr


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def summarize(result: GridResult) -> list[dict]:
    """Aggregate mean/stderr per (condition, budget) plus efficiency ratios."""
    groups: dict[tuple[str, int], list[CellResult]] = {}
    for c in result.cells:
        if c.error:
            continue
        groups.setdefault((c.condition, c.budget), []).append(c)

    rows = []
    efficiency: dict[tuple[str, int], float] = {}
    for (condition, budget), cells in groups.items():
        comp_mean, comp_err = _mean_stderr([c.completion for c in cells])
        samples = [c.human_samples for c in cells if c.human_samples is not None]
        if samples:
            s_mean, s_err = _mean_stderr([float(s) for s in samples])
            eff = comp_mean / s_mean if s_mean > 0 else None
        else:
            s_mean = s_err = eff = None
        if eff is not None:
            efficiency[(condition, budget)] = eff
        rows.append({
            "condition": condition, "budget": budget,
            "completion_mean": comp_mean, "completion_stderr": comp_err,
            "samples_mean": s_mean, "samples_stderr": s_err,
            "completion_per_sample": eff,
        })
    for row in rows:
        demo_eff = efficiency.get(("DemonstrationOnly", row["budget"]))
        own = row["completion_per_sample"]
        row["ratio_vs_demo"] = (own / demo_eff) if (own and demo_eff) else None
    rows.sort(key=lambda r: (ALL_CONDITIONS.index(r["condition"]), r["budget"]))
    return rows


def emit_report(result: GridResult, out_dir: str) -> dict[str, str]:
    """Write results.csv, summary.csv, and curve files. Deterministic bytes."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    results_path = os.path.join(out_dir, "results.csv")
    order = {c: i for i, c in enumerate(ALL_CONDITIONS)}
    cells = sorted(result.cells, key=lambda c: (order[c.condition], c.budget, c.seed))
    with open(results_path, "w") as fh:
        fh.write(RESULTS_HEADER + "\n")
        for c in cells:
            comp = "" if c.error else _fmt(c.completion)
            fh.write(f"{c.condition},{c.budget},{c.seed},{comp},{_fmt(c.human_samples)}\n")
    paths["results"] = results_path

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for row in summarize(result):
            fh.write(",".join(_fmt(row[k]) for k in (
                "condition", "budget", "completion_mean", "completion_stderr",
                "samples_mean", "samples_stderr", "completion_per_sample",
                "ratio_vs_demo")) + "\n")
    paths["summary"] = summary_path

    if result.curves:
        curve_dir = os.path.join(out_dir, "curves")
        os.makedirs(curve_dir, exist_ok=True)
        for (condition, budget, seed), rows in sorted(result.curves.items()):
            path = os.path.join(curve_dir, f"{condition}_b{budget}_s{seed}.csv")
            with open(path, "w") as fh:
                if condition in PPO_CONDITIONS:
                    fh.write("episode,success,rolling_success\n")
                    for ep, success, rolling in rows:
                        fh.write(f"{ep},{success},{_fmt(rolling)}\n")
                else:
                    fh.write("episode,completion\n")
                    for ep, frac in rows:
                        fh.write(f"{ep},{_fmt(frac)}\n")
        paths["curves"] = curve_dir

    failures = [c for c in result.cells if c.error]
    if failures:
        fail_path = os.path.join(out_dir, "failures.csv")
        with open(fail_path, "w") as fh:
            fh.write("condition,budget,seed,error\n")
            for c in failures:
                fh.write(f"{c.condition},{c.budget},{c.seed},{c.error!r}\n")
        paths["failures"] = fail_path
    return paths
