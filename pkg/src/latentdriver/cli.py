"""Command-line entry point: ``latentdriver <command> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .diffnum.checkpoint import CheckpointError
from .model import LatentDriver
from .records import (
    EpisodeLog,
    RecordFormatError,
    comparison_table,
    format_mean_std,
    read_episode_log,
    read_results,
    summarize,
    write_episode_log,
    write_results,
)
from .render import episode_svg, table_svg
from .scenegen import SceneType, counts_for, generate_dataset
from .scenegen.io import ScenarioFormatError, load_scenario, load_split, read_manifest, write_dataset
from .simulator import expert_policy, rollout, stationary_policy
from .trainer import SampleBank, TrainingDiverged, evaluate_closed_loop, fit, format_config, parse_config

log = logging.getLogger("latentdriver")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_counts(text: str) -> dict[SceneType, int]:
    if text in ("default", "mix"):
        return counts_for(100)
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, val = part.partition("=")
        if not sep:
            raise UsageError(f"bad count {part!r}; expected type=N")
        try:
            kind = SceneType.parse(key)
            n = int(val)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if n < 0:
            raise UsageError(f"negative count for {key}")
        out[kind] = out.get(kind, 0) + n
    return out


def parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _print_resolved(cmd: str, **kw) -> None:
    print(f"# {cmd} " + " ".join(f"{k}={v}" for k, v in kw.items()))


# -- commands ---------------------------------------------------------------

def cmd_gen_data(a) -> int:
    counts = parse_counts(a.counts)
    _print_resolved("gen-data", out=a.out, split=a.split, seed=a.seed,
                    counts=",".join(f"{k.value}={counts.get(k, 0)}" for k in SceneType))
    scenarios = generate_dataset(counts, a.seed)
    write_dataset(a.out, scenarios, a.split)
    rows = [r for r in read_manifest(a.out) if r["split"] == a.split]
    total = len(rows)
    for kind in SceneType:
        n = sum(r["scene_type"] == kind.value for r in rows)
        share = 100.0 * n / total if total else 0.0
        print(f"{kind.value:<12}{n:>7}{share:>8.1f}%")
    print(f"{'total':<12}{total:>7}")
    return 0


def cmd_train(a) -> int:
    text = Path(a.config).read_text() if a.config else ""
    if a.seed is not None:
        text += f"\nseed={a.seed}\n"
    tcfg, mcfg = parse_config(text)
    _print_resolved("train", data=a.data, split=a.split, out=a.out, seed=tcfg.seed)
    print(format_config(tcfg, mcfg), end="")
    scenarios = load_split(a.data, a.split)
    if not scenarios:
        raise RuntimeError(f"no scenarios in split {a.split!r}")
    bank = SampleBank(scenarios, mcfg.context, mcfg.n_max)
    print(f"# samples={len(bank)} scenarios={len(scenarios)}")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(tcfg, mcfg))
    every = max(1, a.print_every)
    print("step,lr,L_world,L_gmm,total")
    fit(bank, tcfg, mcfg, out, on_step=lambda s: print(s.line(), flush=True) if s.step % every == 0 else None)
    print(f"# wrote {out / 'model.ckpt'}")
    return 0


def cmd_eval(a) -> int:
    seeds = parse_seeds(a.seeds)
    model, meta = LatentDriver.load(a.ckpt)
    _print_resolved("eval", data=a.data, split=a.split, ckpt=a.ckpt, agents=a.agents,
                    seeds=",".join(map(str, seeds)))
    scenarios = load_split(a.data, a.split)
    if not scenarios:
        raise RuntimeError(f"no scenarios in split {a.split!r}")
    reports = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in seeds:
            reports[s], _ = evaluate_closed_loop(model, scenarios, s, a.agents)
            print(f"## seed {s}")
            print(reports[s].table())
    summary = summarize(reports)
    print("## mean±std over seeds")
    print(format_mean_std(summary))
    if a.out:
        cfg = "".join(f"{k}={v}\n" for k, v in sorted(meta.items()))
        write_results(a.out, a.name or Path(a.ckpt).stem, reports, cfg + f"agents={a.agents}\n")
        print(f"# wrote {a.out}")
    return 0


def cmd_rollout(a) -> int:
    sc = load_scenario(a.scenario)
    _print_resolved("rollout", scenario=a.scenario, policy=a.policy, ckpt=a.ckpt, agents=a.agents, seed=a.seed)
    if a.policy == "model":
        if not a.ckpt:
            raise UsageError("--ckpt is required with --policy model")
        from .trainer import rollout_batch

        model, _ = LatentDriver.load(a.ckpt)
        result = rollout_batch(model, [sc], a.seed, a.agents, record_agents=True)[0]
    else:
        pol = expert_policy(sc) if a.policy == "expert" else stationary_policy
        result = rollout(sc, pol, a.agents, record_agents=True)
    print(f"scenario_id={result.scenario_id} scene_type={result.scene_type.value} "
          f"progress_ratio={result.progress_ratio:.4f} collided={result.collided} offroad={result.offroad}")
    if a.out:
        write_episode_log(EpisodeLog.from_result(sc, result), a.out)
        print(f"# wrote {a.out}")
    return 0


def cmd_render(a) -> int:
    ep = read_episode_log(a.episode_log)
    _print_resolved("render", episode_log=a.episode_log, out=a.out, frame=a.frame, every=a.every)
    Path(a.out).write_text(episode_svg(ep, frame=a.frame, every=a.every))
    if a.frames_dir:
        d = Path(a.frames_dir)
        d.mkdir(parents=True, exist_ok=True)
        for k in range(0, len(ep.trace), a.every):
            (d / f"frame_{k:03d}.svg").write_text(episode_svg(ep, frame=k))
    print(f"# wrote {a.out}")
    return 0


def cmd_report(a) -> int:
    _print_resolved("report", results=",".join(a.results))
    results = [read_results(p) for p in a.results]
    table = comparison_table(results)
    print(table)
    if a.svg:
        lines = table.splitlines()
        header = ["run", "AR[95:75]", "mAR[95:75]", "OR", "CR", "PR"]
        rows = [[r.get("name", "")] + [f"{float(r[f'mean.{c}']):.2f}±{float(r[f'std.{c}']):.2f}"
                                       for c in header[1:]] for r in results]
        Path(a.svg).write_text(table_svg(header, rows))
        print(f"# wrote {a.svg} ({len(lines) - 2} rows)")
    return 0


def cmd_ablate(a) -> int:
    from .ablation import AblationPlan, VARIANTS, desk_model_config, desk_train_config, ordering_holds, run_ablation

    seeds = tuple(parse_seeds(a.seeds))
    variants = tuple(v.strip() for v in a.variants.split(",") if v.strip())
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise UsageError(f"unknown variant(s) {','.join(bad)}; choose from {','.join(VARIANTS)}")
    plan = AblationPlan(n_train=a.n_train, seeds=seeds, variants=variants,
                        model=desk_model_config(), train=desk_train_config(max_steps=a.steps), agents=a.agents)
    _print_resolved("ablate", out=a.out, n_train=a.n_train, steps=a.steps, seeds=a.seeds, variants=",".join(variants))
    results = run_ablation(a.out, plan, log=lambda m: print(m, flush=True))
    print(comparison_table([results[v] for v in variants]))
    if set(VARIANTS) <= set(variants):
        for claim, ok in ordering_holds(results).items():
            print(f"{claim}: {'yes' if ok else 'no'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentdriver", description="Desk-scale latent world model planner.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic scenario dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--counts", default="default",
                   help="per-type counts, e.g. straight=59,stationary=25,turnl=7,turnr=8,uturn=1")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", default="train")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="flat key=value file")
    t.add_argument("--out", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--seed", type=int)
    t.add_argument("--print-every", type=int, default=10)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="closed-loop evaluation over one or more seeds")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--agents", choices=("replay", "idm"), default="replay")
    e.add_argument("--seeds", default="0")
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="results file for `report`")
    e.add_argument("--name")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="run one episode and write its log")
    r.add_argument("--scenario", required=True)
    r.add_argument("--ckpt")
    r.add_argument("--policy", choices=("model", "expert", "stationary"), default="model")
    r.add_argument("--agents", choices=("replay", "idm"), default="replay")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_rollout)

    v = sub.add_parser("render", help="draw an episode log as SVG")
    v.add_argument("--episode-log", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--frame", type=int)
    v.add_argument("--every", type=int, default=10)
    v.add_argument("--frames-dir")
    v.set_defaults(func=cmd_render)

    q = sub.add_parser("report", help="comparison table of result files")
    q.add_argument("--results", nargs="+", required=True)
    q.add_argument("--svg")
    q.set_defaults(func=cmd_report)

    x = sub.add_parser("ablate", help="train and evaluate the three-way ablation")
    x.add_argument("--out", required=True)
    x.add_argument("--n-train", type=int, default=2000)
    x.add_argument("--steps", type=int, default=1800)
    x.add_argument("--seeds", default="0,1,2")
    x.add_argument("--variants", default="full,mpp_only,lwm_naive")
    x.add_argument("--agents", choices=("replay", "idm"), default="replay")
    x.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    level = os.environ.get("LATENTDRIVER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, KeyError, CheckpointError, ScenarioFormatError,
            RecordFormatError, TrainingDiverged) as exc:
        print(f"latentdriver: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
