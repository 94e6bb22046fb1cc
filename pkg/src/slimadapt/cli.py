"""Command-line harness tying the pipeline together.

Subcommands: gen-data, train, search, correlate, eval.  One experiment
config JSON fully determines a run; all outputs land in the configured
output directory as CSV/JSON files.  Exit codes: 0 success, 2 config
error, 3 numeric error, 4 IO error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import jsonio
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import ShiftSpec, load_dataset, make_dataset, save_dataset
from .errors import ConfigError, NumericError, SearchError, UsageError
from .search import (
    SearchPlan,
    anchor_discrepancy,
    config_accuracy,
    correlate,
    inherited_greedy_search,
    random_search,
    sample_config_at_budget,
)
from .seeding import named_rng
from .slimnet import Architecture
from .trainer import ConfidencePolicy, TrainerConfig, deploy_head, init_bank, train

DATASET_FILE = "dataset.json"
CHECKPOINT_FILE = "checkpoint.json"
METRICS_FILE = "metrics.csv"
SEARCH_FILE = "search.csv"
CORR_SCATTER_FILE = "correlate_scatter.csv"
CORR_SUMMARY_FILE = "correlate_summary.csv"
EVAL_FILE = "eval.csv"

METRICS_HEADER = "epoch,mode,loss_task,loss_dd,loss_conf,loss_ent,loss_seed,probe_acc_1,probe_acc_64th,seconds"


@dataclass
class Experiment:
    seed: int
    out_dir: Path
    dataset_fields: dict
    arch: Architecture
    trainer: TrainerConfig
    plan: SearchPlan
    n_random: int


def _require(doc: dict, field: str, where: str):
    if field not in doc:
        raise ConfigError(f"config missing field {where}.{field}" if where else
                          f"config missing field {field}")
    return doc[field]


def parse_experiment(doc: dict, seed_override: int | None = None,
                     out_override: str | None = None,
                     mode_override: str | None = None) -> Experiment:
    seed = int(seed_override if seed_override is not None else _require(doc, "seed", ""))
    out_dir = Path(out_override if out_override is not None else _require(doc, "out_dir", ""))

    ds = _require(doc, "dataset", "")
    dataset_fields = dict(
        spec=ShiftSpec(kind=_require(ds, "kind", "dataset"),
                       magnitude=float(_require(ds, "magnitude", "dataset")),
                       noise_std=float(ds.get("noise_std", 1.0))),
        K=int(_require(ds, "K", "dataset")),
        d=int(_require(ds, "d", "dataset")),
        n_s=int(_require(ds, "n_s", "dataset")),
        n_t=int(_require(ds, "n_t", "dataset")),
    )

    a = _require(doc, "architecture", "")
    arch = Architecture(
        input_dim=int(_require(a, "input_dim", "architecture")),
        block_max_widths=tuple(_require(a, "block_max_widths", "architecture")),
        layers_per_block=int(a.get("layers_per_block", 1)),
        class_count=dataset_fields["K"],
    )

    t = _require(doc, "trainer", "")
    policy = ConfidencePolicy(lam=float(t.get("lam", 0.5)), s=float(t.get("confidence_s", 0.0)),
                              mode=t.get("confidence_mode", "hard"))
    trainer_cfg = TrainerConfig(
        mode=mode_override or t.get("mode", "slimda"),
        epochs=int(_require(t, "epochs", "trainer")),
        batch_size=int(_require(t, "batch_size", "trainer")),
        model_batch_size=int(t.get("model_batch_size", 10)),
        w_ent=float(t.get("w_ent", 0.1)),
        tau=float(t.get("tau", 0.5)),
        policy=policy,
        seed=seed,
    )

    s = doc.get("search", {})
    plan = SearchPlan(
        k=int(s.get("k", 6)),
        q=int(s.get("q", 20)),
        seed=seed,
        tolerance=float(s.get("tolerance", 0.02)),
        budget_ratios=tuple(s["budgets"]) if s.get("budgets") else None,
    )
    return Experiment(seed=seed, out_dir=out_dir, dataset_fields=dataset_fields, arch=arch,
                      trainer=trainer_cfg, plan=plan, n_random=int(s.get("n_random", 100)))


def _load_experiment(args) -> Experiment:
    doc = jsonio.load(args.config)
    return parse_experiment(doc, seed_override=args.seed, out_override=args.out,
                            mode_override=getattr(args, "mode", None))


def _f(x, digits=6) -> str:
    return "" if x is None else format(float(x), f".{digits}f")


def _widths_str(config) -> str:
    return "|".join(str(w) for w in config.widths)


def _parse_widths(text: str) -> list[tuple[int, ...]]:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if chunk:
            out.append(tuple(int(w) for w in chunk.split(",")))
    if not out:
        raise ConfigError("--widths given but empty")
    return out


def _write_csv(path: Path, header: str, rows: list[str]) -> None:
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8", newline="\n")


# -- subcommands ----------------------------------------------------------


def cmd_gen_data(args) -> int:
    exp = _load_experiment(args)
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(seed=exp.seed, **exp.dataset_fields)
    save_dataset(exp.out_dir / DATASET_FILE, ds)
    counts = np.bincount(ds.ys, minlength=ds.K)
    print(f"wrote {exp.out_dir / DATASET_FILE}")
    print(f"classes: {ds.K}, dim: {ds.d}, shift: {ds.spec.kind} magnitude {ds.spec.magnitude}")
    print(f"source class counts: {counts.tolist()} (n_s={ds.n_s}, n_t={ds.n_t})")
    return 0


def cmd_train(args) -> int:
    exp = _load_experiment(args)
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(exp.out_dir / DATASET_FILE)  # blind: no label section
    try:
        labels = load_dataset(exp.out_dir / DATASET_FILE, evaluation=True) \
            .target_labels(evaluation=True)
    except UsageError:
        labels = None

    bank = init_bank(exp.arch, exp.seed)
    ckpt_tmp = exp.out_dir / (CHECKPOINT_FILE + ".tmp")
    try:
        log = train(bank, ds, exp.trainer, eval_labels=labels)
        steps = exp.trainer.epochs * max(1, -(-max(ds.n_s, ds.n_t) // exp.trainer.batch_size))
        save_checkpoint(ckpt_tmp, bank, exp.seed, steps, exp.trainer.mode)
        os.replace(ckpt_tmp, exp.out_dir / CHECKPOINT_FILE)
    except Exception:
        ckpt_tmp.unlink(missing_ok=True)
        (exp.out_dir / CHECKPOINT_FILE).unlink(missing_ok=True)
        raise
    rows = [
        ",".join([str(r["epoch"]), r["mode"], _f(r["loss_task"]), _f(r["loss_dd"]),
                  _f(r["loss_conf"]), _f(r["loss_ent"]), _f(r["loss_seed"]),
                  _f(r["probe_acc_1"], 4), _f(r["probe_acc_64th"], 4),
                  _f(r["seconds"], 3)])
        for r in log
    ]
    _write_csv(exp.out_dir / METRICS_FILE, METRICS_HEADER, rows)
    print(f"wrote {exp.out_dir / CHECKPOINT_FILE} and {exp.out_dir / METRICS_FILE}")
    return 0


def cmd_search(args) -> int:
    exp = _load_experiment(args)
    bank, meta = load_checkpoint(exp.out_dir / CHECKPOINT_FILE)
    if bank.arch != exp.arch:
        raise ConfigError("checkpoint architecture does not match the experiment config")
    ds = load_dataset(exp.out_dir / DATASET_FILE, evaluation=args.reveal_labels)
    labels = ds.target_labels(evaluation=True) if args.reveal_labels else None
    head = deploy_head(meta["mode"])
    plan = exp.plan
    if args.budgets:
        plan = SearchPlan(k=plan.k, q=plan.q, seed=plan.seed, tolerance=plan.tolerance,
                          budget_ratios=tuple(float(b) for b in args.budgets.split(",")))

    header = "step,budget_ratio,widths,delta,flops"
    if labels is not None:
        header += ",accuracy"
    rows = []
    if args.strategy == "greedy":
        for i, step in enumerate(inherited_greedy_search(bank, plan, ds.xt)):
            row = [str(i), _f(step.budget_ratio), _widths_str(step.config),
                   _f(step.delta), _f(step.config.flops, 1)]
            if labels is not None:
                row.append(_f(config_accuracy(bank, step.config, ds.xt, labels, head), 4))
            rows.append(",".join(row))
    else:
        rng = named_rng(exp.seed, "search")
        full = bank.arch.full_config().flops
        for i, ratio in enumerate(plan.budgets(bank.arch)):
            _, scores = random_search(bank, ratio * full, exp.n_random, ds.xt, rng,
                                      tolerance=plan.tolerance)
            for s in scores:
                row = [str(i), _f(ratio), _widths_str(s.config), _f(s.delta),
                       _f(s.config.flops, 1)]
                if labels is not None:
                    row.append(_f(config_accuracy(bank, s.config, ds.xt, labels, head), 4))
                rows.append(",".join(row))
    _write_csv(exp.out_dir / SEARCH_FILE, header, rows)
    print(f"wrote {exp.out_dir / SEARCH_FILE} ({len(rows)} rows, strategy={args.strategy})")
    return 0


def cmd_correlate(args) -> int:
    exp = _load_experiment(args)
    bank, meta = load_checkpoint(exp.out_dir / CHECKPOINT_FILE)
    ds = load_dataset(exp.out_dir / DATASET_FILE, evaluation=True)
    labels = ds.target_labels(evaluation=True)  # correlation is evaluation-only
    head = deploy_head(meta["mode"])
    rng = named_rng(exp.seed, "search")
    full = bank.arch.full_config().flops

    scatter_rows, summary_rows = [], []
    from .search import _anchor_probs
    anchor_probs = _anchor_probs(bank, ds.xt)
    for ratio in exp.plan.budgets(bank.arch):
        deltas, accs = [], []
        for _ in range(args.n):
            cfg = sample_config_at_budget(rng, bank.arch, ratio * full, exp.plan.tolerance)
            deltas.append(anchor_discrepancy(bank, cfg, ds.xt, anchor_probs=anchor_probs).delta)
            accs.append(config_accuracy(bank, cfg, ds.xt, labels, head))
            scatter_rows.append(",".join([_f(ratio), _f(deltas[-1]), _f(accs[-1], 4)]))
        deltas, accs = np.array(deltas), np.array(accs)
        if np.ptp(deltas) == 0 or np.ptp(accs) == 0:
            raise UsageError(f"correlation undefined at budget {ratio:.4f}: zero variance")
        from scipy import stats as scipy_stats
        pearson = float(scipy_stats.pearsonr(deltas, accs).statistic)
        spearman = float(scipy_stats.spearmanr(deltas, accs).statistic)
        summary_rows.append(",".join([_f(ratio), _f(pearson, 4), _f(spearman, 4), str(args.n)]))
    _write_csv(exp.out_dir / CORR_SCATTER_FILE, "budget_ratio,delta,accuracy", scatter_rows)
    _write_csv(exp.out_dir / CORR_SUMMARY_FILE, "budget_ratio,pearson,spearman,n", summary_rows)
    print(f"wrote {exp.out_dir / CORR_SCATTER_FILE} and {exp.out_dir / CORR_SUMMARY_FILE}")
    return 0


def cmd_eval(args) -> int:
    exp = _load_experiment(args)
    bank, meta = load_checkpoint(exp.out_dir / CHECKPOINT_FILE)
    ds = load_dataset(exp.out_dir / DATASET_FILE, evaluation=True)
    labels = ds.target_labels(evaluation=True)
    head = deploy_head(meta["mode"])
    arch = bank.arch
    if args.widths:
        configs = [arch.make_config(w) for w in _parse_widths(args.widths)]
    else:
        configs = [arch.full_config(), arch.smallest_config()]
    full_acc = config_accuracy(bank, arch.full_config(), ds.xt, labels, head)
    rows = []
    for cfg in configs:
        acc = config_accuracy(bank, cfg, ds.xt, labels, head)
        rows.append(",".join([_widths_str(cfg), _f(cfg.flops / arch.full_config().flops),
                              _f(acc, 4), _f(full_acc - acc, 4)]))
    _write_csv(exp.out_dir / EVAL_FILE, "widths,flops_ratio,accuracy,delta_vs_full", rows)
    print(f"wrote {exp.out_dir / EVAL_FILE}")
    for row in rows:
        print(row)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slimadapt",
                                     description="Train, search, and evaluate width-slimmable "
                                                 "domain-adaptive model banks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p = sub.add_parser("gen-data", help="generate the paired-domain dataset file")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the model bank and write a checkpoint")
    common(p)
    p.add_argument("--mode", choices=("slimda", "baseline", "inplaced"), default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("search", help="architecture search under FLOPs budgets")
    common(p)
    p.add_argument("--strategy", choices=("greedy", "random"), default="greedy")
    p.add_argument("--budgets", default=None, help="comma-separated FLOPs ratios")
    p.add_argument("--reveal-labels", action="store_true",
                   help="add a true-accuracy column (evaluation only)")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("correlate", help="score-vs-accuracy correlation per budget band")
    common(p)
    p.add_argument("--n", type=int, default=100, help="configs sampled per budget band")
    p.set_defaults(fn=cmd_correlate)

    p = sub.add_parser("eval", help="per-width target accuracy report")
    common(p)
    p.add_argument("--widths", default=None,
                   help="semicolon-separated width configs, e.g. '8,16,32,64;4,8,16,32'")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, UsageError, SearchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
