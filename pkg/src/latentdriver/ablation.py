"""Three-way ablation: full model, planner without world model, world model fed logged actions."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .model import ModelConfig
from .records import read_results, write_results
from .scenegen import SceneType, counts_for, generate_dataset
from .trainer import SampleBank, TrainConfig, evaluate_closed_loop, fit, format_config

VARIANTS = ("full", "mpp_only", "lwm_naive")

# held-out split with the rare types boosted so per-type arrival rates are not single episodes
EVAL_COUNTS = {SceneType.STATIONARY: 120, SceneType.STRAIGHT: 280, SceneType.TURN_LEFT: 40,
               SceneType.TURN_RIGHT: 40, SceneType.U_TURN: 20}


def desk_model_config(**overrides) -> ModelConfig:
    """Reduced widths and depths that train in minutes on one core."""
    base = dict(d_model=32, enc_layers=2, enc_heads=4, n_queries=8, adapter_layers=2, adapter_heads=4,
                lwm_layers=2, lwm_heads=4, planner_heads=4)
    base.update(overrides)
    return ModelConfig(**base)


def desk_train_config(**overrides) -> TrainConfig:
    base = dict(batch_size=64, max_steps=1800, lr=1e-3, world_weight=0.001)
    base.update(overrides)
    return TrainConfig(**base)


def variant_configs(name: str, model: ModelConfig, train: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    if name == "full":
        return replace(model, use_lwm=True, action_source="intermediate"), train
    if name == "mpp_only":
        return replace(model, use_lwm=False), replace(train, world_weight=0.0)
    if name == "lwm_naive":
        return replace(model, use_lwm=True, action_source="ground_truth"), train
    raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")


@dataclass
class AblationPlan:
    n_train: int = 2000
    train_seed: int = 0
    eval_counts: dict = field(default_factory=lambda: dict(EVAL_COUNTS))
    eval_seed: int = 1
    seeds: tuple[int, ...] = (0, 1, 2)
    variants: tuple[str, ...] = VARIANTS
    model: ModelConfig = field(default_factory=desk_model_config)
    train: TrainConfig = field(default_factory=desk_train_config)
    agents: str = "replay"

    def describe(self) -> str:
        lines = [f"n_train={self.n_train}", f"train_seed={self.train_seed}",
                 "eval_counts=" + ",".join(f"{k.value}={v}" for k, v in self.eval_counts.items()),
                 f"eval_seed={self.eval_seed}", "seeds=" + ",".join(map(str, self.seeds)),
                 f"agents={self.agents}"]
        return "\n".join(lines) + "\n" + format_config(self.train, self.model)


def run_ablation(out_dir, plan: AblationPlan | None = None, log=print) -> dict[str, dict[str, str]]:
    """Train and evaluate every (variant, seed) pair; writes ``<variant>.results`` under ``out_dir``.

    The training seed doubles as the evaluation seed of the same run.
    """
    plan = plan or AblationPlan()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    train_set = generate_dataset(counts_for(plan.n_train), plan.train_seed)
    eval_set = generate_dataset(plan.eval_counts, plan.eval_seed)
    bank = SampleBank(train_set, plan.model.context, plan.model.n_max)
    log(f"# data: {len(train_set)} train scenarios ({len(bank)} samples), {len(eval_set)} eval "
        f"[{time.time() - t0:.0f}s]")
    (out / "plan.txt").write_text(plan.describe())
    timings = []
    for name in plan.variants:
        reports = {}
        for seed in plan.seeds:
            mcfg, tcfg = variant_configs(name, replace(plan.model, seed=seed), replace(plan.train, seed=seed))
            run_dir = out / name / f"seed{seed}"
            t1 = time.time()
            res = fit(bank, tcfg, mcfg, run_dir)
            t2 = time.time()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                reports[seed], _ = evaluate_closed_loop(res.model, eval_set, seed, plan.agents)
            t3 = time.time()
            timings.append(f"{name}.seed{seed}.train_s={t2 - t1:.1f}\n{name}.seed{seed}.eval_s={t3 - t2:.1f}\n")
            d = reports[seed].as_dict()
            log(f"{name} seed={seed} AR[95:75]={d['AR[95:75]']:.2f} mAR[95:75]={d['mAR[95:75]']:.2f} "
                f"OR={d['OR']:.2f} CR={d['CR']:.2f} PR={d['PR']:.2f} [train {t2 - t1:.0f}s, eval {t3 - t2:.0f}s]")
        write_results(out / f"{name}.results", name, reports,
                      format_config(*variant_configs(name, plan.model, plan.train)[::-1]) + f"agents={plan.agents}\n")
    total = time.time() - t0
    (out / "timing.txt").write_text("".join(timings) + f"total_s={total:.1f}\n")
    log(f"# total {total / 60:.1f} min")
    return {name: read_results(out / f"{name}.results") for name in plan.variants}


def ordering_holds(results: dict[str, dict[str, str]]) -> dict[str, bool]:
    """The directional claims, on seed means."""
    def m(name, key):
        return float(results[name][f"mean.{key}"])

    return {
        "full>mpp_only AR": m("full", "AR[95:75]") > m("mpp_only", "AR[95:75]"),
        "full>mpp_only mAR": m("full", "mAR[95:75]") > m("mpp_only", "mAR[95:75]"),
        "full>lwm_naive AR": m("full", "AR[95:75]") > m("lwm_naive", "AR[95:75]"),
        "full>lwm_naive mAR": m("full", "mAR[95:75]") > m("lwm_naive", "mAR[95:75]"),
        "lwm_naive worst AR": m("lwm_naive", "AR[95:75]") < min(m("full", "AR[95:75]"), m("mpp_only", "AR[95:75]")),
    }
