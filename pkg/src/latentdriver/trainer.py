"""Imitation training from expert rollouts and batched closed-loop evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .diffnum import Adam, clip_grad_norm, cosine_lr
from .encoder import Observation, build_observation, stack_observations
from .model import LatentDriver, ModelConfig, PlanMemory
from .scenegen.types import DT, EGO_LENGTH, EGO_WIDTH, Scenario
from .simulator import EgoAction, EpisodeResult, MetricsReport, Simulator, aggregate, finish_episode

log = logging.getLogger(__name__)

LOG_HEADER = "step,lr,L_world,L_gmm,total"


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``diagnostics`` holds batch ids and gradient norms."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 10
    lr: float = 2e-4
    world_weight: float = 0.001
    max_steps: int = 0  # 0 trains for the full epoch count
    grad_clip: float = 0.0  # 0 disables clipping
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.world_weight < 0 or self.max_steps < 0 or self.grad_clip < 0:
            raise ValueError("world_weight, max_steps and grad_clip must be non-negative")


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str) -> tuple[TrainConfig, ModelConfig]:
    """Read flat ``key=value`` lines (``#`` comments) into training and model settings."""
    train_f = {f.name: f.type for f in fields(TrainConfig)}
    model_f = {f.name: f.type for f in fields(ModelConfig)}
    tkw, mkw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value")
        if key in train_f:
            tkw[key] = _coerce(train_f[key], val)
        elif key in model_f:
            mkw[key] = _coerce(model_f[key], val)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if "seed" in tkw and "seed" not in mkw:
        mkw["seed"] = tkw["seed"]
    return TrainConfig(**tkw), ModelConfig(**mkw)


def format_config(train: TrainConfig, model: ModelConfig) -> str:
    lines = [f"{k}={v}" for k, v in asdict(train).items()]
    lines += [f"{k}={v}" for k, v in asdict(model).items() if k != "seed"]
    return "\n".join(lines) + "\n"


# -- samples -----------------------------------------------------------------

def warmup_action(scenario: Scenario) -> np.ndarray:
    """Action assumed to precede the first frame: cruising straight at the initial speed."""
    return np.array([scenario.initial_speed * DT, 0.0, 0.0])


def expert_observations(scenario: Scenario, n_max: int) -> list[Observation]:
    sim = Simulator(scenario, "replay")
    acts = scenario.expert_actions()
    state = sim.reset()
    obs = [build_observation(state, scenario, n_max)]
    while not sim.done(state):
        state = sim.step(state, EgoAction.from_array(acts[state.step]))
        obs.append(build_observation(state, scenario, n_max))
    return obs


@dataclass
class TrainingSample:
    """Observation window ending at ``step`` with the matching expert actions.

    ``actions[i]`` is the expert action taken from window frame ``i``;
    ``prev_actions[i]`` is the one that led into it.
    """

    scenario_id: str
    step: int
    observations: list[Observation]
    actions: np.ndarray
    prev_actions: np.ndarray

    @property
    def target(self) -> np.ndarray:
        return self.actions[-1]


def extract_samples(scenario: Scenario, context: int = 2, n_max: int = 64) -> list[TrainingSample]:
    obs = expert_observations(scenario, n_max)
    acts = scenario.expert_actions()
    lead_in = np.vstack([warmup_action(scenario)[None], acts])
    out = []
    for k in range(context - 1, len(acts)):
        w = range(k - context + 1, k + 1)
        out.append(TrainingSample(scenario.id, k, [obs[i] for i in w], acts[list(w)], lead_in[list(w)]))
    return out


class SampleBank:
    """Compact storage of all training windows from a set of scenarios.

    Observations are kept once per frame, trimmed to each scenario's widest
    frame, and windows are assembled at batch time.
    """

    def __init__(self, scenarios: Sequence[Scenario], context: int = 2, n_max: int = 64):
        if not scenarios:
            raise ValueError("no scenarios")
        self.context = context
        self.ids = [sc.id for sc in scenarios]
        self.frames, self.masks, self.actions, self.lead_in = [], [], [], []
        index = []
        for si, sc in enumerate(scenarios):
            obs = expert_observations(sc, n_max)
            mask = np.stack([o.mask for o in obs])
            width = int(np.flatnonzero(mask.any(axis=0)).max()) + 1
            self.frames.append(np.stack([o.features[:width] for o in obs]))
            self.masks.append(mask[:, :width])
            acts = sc.expert_actions()
            self.actions.append(acts)
            self.lead_in.append(np.vstack([warmup_action(sc)[None], acts]))
            index += [(si, k) for k in range(context - 1, len(acts))]
        self.index = np.array(index, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.index)

    def batch(self, rows: np.ndarray):
        """Return (features (B, C, n, 6), masks (B, C, n), targets (B, 3), lead-in actions (B, C, 3))."""
        c = self.context
        sel = self.index[rows]
        width = max(self.frames[si].shape[1] for si, _ in sel)
        feats = np.zeros((len(sel), c, width, 6))
        masks = np.zeros((len(sel), c, width), dtype=bool)
        tgt = np.zeros((len(sel), 3))
        prev = np.zeros((len(sel), c, 3))
        for b, (si, k) in enumerate(sel):
            f = self.frames[si][k - c + 1:k + 1]
            feats[b, :, :f.shape[1]] = f
            masks[b, :, :f.shape[1]] = self.masks[si][k - c + 1:k + 1]
            tgt[b] = self.actions[si][k]
            prev[b] = self.lead_in[si][k - c + 1:k + 1]
        return feats, masks, tgt, prev

    def describe(self, rows: np.ndarray) -> list[str]:
        return [f"{self.ids[si]}@{k}" for si, k in self.index[rows]]


# -- training ----------------------------------------------------------------

@dataclass
class StepStats:
    step: int
    lr: float
    l_world: float
    l_gmm: float
    total: float

    def line(self) -> str:
        return f"{self.step},{self.lr:.6e},{self.l_world:.6f},{self.l_gmm:.6f},{self.total:.6f}"


def module_grad_norms(model: LatentDriver) -> dict[str, float]:
    out = {}
    for name in ("encoder", "adapter", "lwm", "planner"):
        sq = sum(float((p.grad ** 2).sum()) for p in getattr(model, name).parameters() if p.grad is not None)
        out[name] = math.sqrt(sq)
    return out


def train_step(model: LatentDriver, optimizer: Adam, batch, lr: float, world_weight: float,
               rng: np.random.Generator, grad_clip: float = 0.0, batch_ids: list[str] | None = None):
    feats, masks, tgt, prev = batch
    out = model.forward_train(feats, masks, tgt, prev, rng=rng, world_weight=world_weight,
                              extent=(EGO_LENGTH, EGO_WIDTH))
    model.zero_grad()
    total = out.total.item()
    if not math.isfinite(total):
        raise TrainingDiverged(f"non-finite loss {total}", {
            "batch": batch_ids or [], "L_world": out.l_world.item(), "L_gmm": out.l_gmm.item()})
    out.total.backward()
    norms = module_grad_norms(model)
    if not all(math.isfinite(v) for v in norms.values()):
        raise TrainingDiverged("non-finite gradient", {"batch": batch_ids or [], "grad_norms": norms})
    if grad_clip > 0:
        clip_grad_norm(model.parameters(), grad_clip)
    optimizer.step(lr=lr)
    return out


@dataclass
class FitResult:
    model: LatentDriver
    history: list[StepStats] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def fit(bank: SampleBank, train_cfg: TrainConfig, model_cfg: ModelConfig, out_dir=None,
        model: LatentDriver | None = None, on_step: Callable[[StepStats], None] | None = None) -> FitResult:
    """Train with Adam and a cosine schedule; an epoch is one shuffled pass over the bank."""
    model = model or LatentDriver(model_cfg)
    opt = Adam(model.parameters(), lr=train_cfg.lr)
    n = len(bank)
    per_epoch = math.ceil(n / train_cfg.batch_size)
    total = train_cfg.max_steps or per_epoch * train_cfg.epochs
    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_file = (out_dir / "train_log.csv").open("w")
        log_file.write(LOG_HEADER + "\n")
    result = FitResult(model)
    order_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 1]))
    step = 0
    epoch = 0
    try:
        while step < total:
            perm = order_rng.permutation(n)
            for start in range(0, n, train_cfg.batch_size):
                if step >= total:
                    break
                rows = perm[start:start + train_cfg.batch_size]
                lr = cosine_lr(step, total, train_cfg.lr)
                rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, 2, step]))
                try:
                    out = train_step(model, opt, bank.batch(rows), lr, train_cfg.world_weight, rng,
                                     train_cfg.grad_clip, bank.describe(rows))
                except TrainingDiverged as exc:
                    if out_dir is not None:
                        (out_dir / "diverged.txt").write_text(
                            f"step={step}\nerror={exc}\n" + "".join(f"{k}={v}\n" for k, v in exc.diagnostics.items()))
                    raise
                stats = StepStats(step, lr, out.l_world.item(), out.l_gmm.item(), out.total.item())
                result.history.append(stats)
                if log_file is not None and step % train_cfg.log_every == 0:
                    log_file.write(stats.line() + "\n")
                    log_file.flush()
                if on_step is not None:
                    on_step(stats)
                step += 1
            epoch += 1
            if out_dir is not None:
                path = out_dir / f"epoch{epoch:03d}.ckpt"
                model.save(path, {"epoch": str(epoch), "step": str(step)})
                result.checkpoints.append(path)
    finally:
        if log_file is not None:
            log_file.close()
    if out_dir is not None:
        model.save(out_dir / "model.ckpt", {"epoch": str(epoch), "step": str(step)})
    return result


# -- closed-loop evaluation --------------------------------------------------

def episode_generators(seed: int, scenarios: Sequence[Scenario]) -> list[np.random.Generator]:
    """One generator per episode, keyed by the master seed and the scenario id."""
    out = []
    for sc in scenarios:
        key = [int(b) for b in sc.id.encode()]
        out.append(np.random.default_rng(np.random.SeedSequence([seed, 3] + key)))
    return out


def rollout_batch(model: LatentDriver, scenarios: Sequence[Scenario], seed: int = 0,
                  agents: str = "replay", record_agents: bool = False) -> list[EpisodeResult]:
    """Drive all episodes in lockstep with one batched network call per step."""
    if not scenarios:
        return []
    steps = len(scenarios[0].expert)
    if any(len(sc.expert) != steps for sc in scenarios):
        raise ValueError("lockstep rollout needs equal episode lengths")
    n_max = model.config.n_max
    sims = [Simulator(sc, agents) for sc in scenarios]
    states = [s.reset() for s in sims]
    traces = [[st.ego.as_array()] for st in states]
    agent_traces = [[st.agent_poses.copy()] for st in states]
    memory = PlanMemory(np.stack([warmup_action(sc) for sc in scenarios]))
    rngs = episode_generators(seed, scenarios)
    while not sims[0].done(states[0]):
        obs = [build_observation(st, sc, n_max) for st, sc in zip(states, scenarios)]
        feats, masks = stack_observations(obs)
        _, _, actions = model.plan(feats, masks, memory, rngs)
        memory.push_action(actions)
        for i, (sim, st) in enumerate(zip(sims, states)):
            states[i] = sim.step(st, EgoAction.from_array(actions[i]))
            traces[i].append(states[i].ego.as_array())
            if record_agents:
                agent_traces[i].append(states[i].agent_poses.copy())
    return [finish_episode(sc, st, np.array(tr), np.array(at) if record_agents else None)
            for sc, st, tr, at in zip(scenarios, states, traces, agent_traces)]


def evaluate_closed_loop(model: LatentDriver, scenarios: Sequence[Scenario], seed: int = 0,
                         agents: str = "replay", chunk: int = 256) -> tuple[MetricsReport, list[EpisodeResult]]:
    groups: dict[int, list[Scenario]] = {}
    for sc in scenarios:
        groups.setdefault(len(sc.expert), []).append(sc)
    results: dict[str, EpisodeResult] = {}
    for group in groups.values():
        for i in range(0, len(group), chunk):
            for r in rollout_batch(model, group[i:i + chunk], seed, agents):
                results[r.scenario_id] = r
    ordered = [results[sc.id] for sc in scenarios]
    return aggregate(ordered), ordered
