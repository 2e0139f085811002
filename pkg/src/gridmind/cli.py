"""Command-line entry points: gen-maps, train, eval, ablate, trace.

Every command takes --config and writes its outputs (plus a resolved copy of
the configuration) into the output directory.  Exit codes: 0 success,
1 validation problem, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import yaml

from .ablation import ablation_run, format_ablation_table
from .config import (RunConfig, apply_split, build_plan_suite,
                     default_class_embeddings, load_class_embeddings,
                     load_config, make_eval_suite, make_task_split, save_config,
                     write_class_embeddings)
from .env import save_plans
from .errors import ConfigError, GenerationError, TaskError
from .figures import (render_ablation_bars, render_activation_profile,
                      render_metrics_bars, render_plan_map,
                      render_training_curve)
from .metrics import evaluate, export_traces, format_report
from .model import Model
from .nn import RngStream, load_checkpoint
from .training import _config_meta, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridmind",
        description="object-goal navigation on procedurally generated grids")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, checkpoint=False, workers=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration YAML")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="weights to load")
        if workers:
            p.add_argument("--workers", type=int, default=None,
                           help="override the training worker count")
        return p

    add("gen-maps", "generate and save the floor-plan suite")
    add("train", "run the actor-critic training loop", workers=True)
    add("eval", "evaluate a checkpoint on the held-out suite", checkpoint=True)
    add("ablate", "train and compare component-removal variants", workers=True)
    add("trace", "export per-step traces for a checkpoint", checkpoint=True)
    return parser


def _prepare(args) -> tuple:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    save_config(cfg, os.path.join(out, "config_resolved.yaml"))
    return cfg, out


def _zero_shot_setup(cfg: RunConfig) -> tuple:
    """(task split, embedding matrix); (None, None) outside zero-shot mode."""
    zs = cfg.zero_shot
    if not zs.enabled:
        return None, None
    split = make_task_split(cfg.suite.num_classes, zs.split, zs.split_seed)
    if zs.embedding_file:
        _, matrix = load_class_embeddings(zs.embedding_file)
        if matrix.shape[0] != cfg.suite.num_classes:
            raise ConfigError(
                f"embedding file has {matrix.shape[0]} rows for "
                f"{cfg.suite.num_classes} classes")
    else:
        _, matrix = default_class_embeddings(cfg.suite.num_classes)
    return split, matrix


def _load_model(cfg: RunConfig, checkpoint_path) -> Model:
    if not os.path.exists(checkpoint_path):
        raise ConfigError(f"checkpoint not found: {checkpoint_path}")
    arrays, meta, _ = load_checkpoint(checkpoint_path)
    model_cfg = cfg.model_config()
    want = _config_meta(model_cfg)
    have = (meta or {}).get("model")
    if have is not None and have != want:
        diffs = sorted(k for k in want if have.get(k) != want[k])
        raise ConfigError("checkpoint was trained with a different model "
                          "configuration; differing fields: " + ", ".join(diffs))
    model = Model(model_cfg, RngStream(cfg.seed))
    model.params.load_arrays(arrays)
    return model


def _held_out_suite(cfg: RunConfig, split) -> tuple:
    train_plans, held = build_plan_suite(cfg.suite)
    if split is not None:
        targets, _ = apply_split(split, "eval", cfg.eval.targets)
    else:
        targets = tuple(range(cfg.suite.num_classes))
    suite = make_eval_suite(held, targets, cfg.eval.episodes_per_plan,
                            cfg.eval.suite_seed)
    return suite, train_plans, held


def cmd_gen_maps(args) -> int:
    cfg, out = _prepare(args)
    train_plans, held = build_plan_suite(cfg.suite)
    plans_path = os.path.join(out, "plans.txt")
    save_plans(plans_path, train_plans + held)
    names, matrix = default_class_embeddings(cfg.suite.num_classes)
    emb_path = os.path.join(out, "class_embeddings.txt")
    write_class_embeddings(emb_path, names, matrix)
    print(f"wrote {len(train_plans)} training and {len(held)} held-out plans "
          f"to {plans_path}")
    print(f"wrote {len(names)} class embeddings to {emb_path}")
    return 0


def cmd_train(args) -> int:
    cfg, out = _prepare(args)
    train_plans, _ = build_plan_suite(cfg.suite)
    split, embeddings = _zero_shot_setup(cfg)
    allowed = detectable = None
    if split is not None:
        allowed, detectable = apply_split(split, "train")
    log_path = os.path.join(out, "train_log.jsonl")
    ckpt_path = os.path.join(out, "checkpoint.gmck")
    result = train(cfg.model_config(), cfg.train_config(args.workers),
                   cfg.rewards, train_plans, log_path=log_path,
                   checkpoint_path=ckpt_path, allowed_targets=allowed,
                   detectable=detectable, embeddings=embeddings)
    curve = render_training_curve(log_path, os.path.join(out, "training_curve.png"))
    print(f"trained {result.episodes} episodes "
          f"({result.batches_applied} updates, {result.batches_dropped} dropped) "
          f"in {result.wall_seconds:.1f}s wall / {result.cpu_seconds:.1f}s cpu")
    print(f"checkpoint: {ckpt_path}")
    print(f"figures: {curve}")
    return 0


def cmd_eval(args) -> int:
    cfg, out = _prepare(args)
    split, embeddings = _zero_shot_setup(cfg)
    model = _load_model(cfg, args.checkpoint)
    suite, _, held = _held_out_suite(cfg, split)
    report, traces = evaluate(model, suite, max_steps=cfg.eval.max_steps,
                              greedy=cfg.eval.greedy, embeddings=embeddings)
    text = format_report(report)
    report_path = os.path.join(out, "report.txt")
    with open(report_path, "w") as fh:
        fh.write(text + "\n")
    traces_path = os.path.join(out, "traces.jsonl")
    export_traces(traces, traces_path)
    figures = [render_metrics_bars(report, os.path.join(out, "metrics.png")),
               render_activation_profile(traces, os.path.join(out, "activations.png"))]
    plan_by_id = {p.room_id: p for p in held}
    figures.append(render_plan_map(plan_by_id[traces[0].plan_id], traces[0],
                                   os.path.join(out, "path_map.png")))
    print(text)
    print(f"report: {report_path}")
    print(f"traces: {traces_path}")
    print("figures: " + ", ".join(figures))
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _prepare(args)
    split, _ = _zero_shot_setup(cfg)
    allowed = None
    if split is not None:
        allowed, _ = apply_split(split, "train")
    suite, train_plans, _ = _held_out_suite(cfg, split)
    train_cfg = cfg.train_config(args.workers)
    result = ablation_run(cfg.model_config(), train_cfg, cfg.rewards,
                          train_plans, suite, toggles=cfg.ablation.toggles,
                          seeds=cfg.ablation.seeds,
                          max_eval_steps=cfg.eval.max_steps,
                          allowed_targets=allowed, log_dir=out)
    table = format_ablation_table(result)
    table_path = os.path.join(out, "ablation.txt")
    with open(table_path, "w") as fh:
        fh.write(table + "\n")
    figure = render_ablation_bars(result.means, os.path.join(out, "ablation.png"))
    print(table)
    print(f"table: {table_path}")
    print(f"figures: {figure}")
    return 0


def cmd_trace(args) -> int:
    cfg, out = _prepare(args)
    split, embeddings = _zero_shot_setup(cfg)
    model = _load_model(cfg, args.checkpoint)
    suite, _, held = _held_out_suite(cfg, split)
    _, traces = evaluate(model, suite, max_steps=cfg.eval.max_steps,
                         greedy=cfg.eval.greedy, embeddings=embeddings)
    traces_path = os.path.join(out, "traces.jsonl")
    export_traces(traces, traces_path)
    figures = [render_activation_profile(traces, os.path.join(out, "activations.png"))]
    plan_by_id = {p.room_id: p for p in held}
    for i, trace in enumerate(traces[:4]):
        figures.append(render_plan_map(plan_by_id[trace.plan_id], trace,
                                       os.path.join(out, f"path_map_{i}.png")))
    print(f"exported {len(traces)} traces to {traces_path}")
    print("figures: " + ", ".join(figures))
    return 0


_COMMANDS = {
    "gen-maps": cmd_gen_maps,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage problems; those are validation errors here
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, TaskError, GenerationError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
