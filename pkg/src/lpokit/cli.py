"""Command-line entry point: ``lpokit <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 bad input or usage.
Primary outputs are written to a temporary file and renamed into place, so
a failed run never leaves a truncated file behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import preference_graph as pg
from .config import ConfigFileError, dump_config, load_config
from .diffusion import dumps_checkpoint, loads_checkpoint
from .gradients import LOSS_NAMES
from .synthetic import generate_synthetic_preferences
from .trainer import (
    TrainingDiverged,
    eval_ranking_accuracy,
    metrics_csv,
    run_experiment,
    seed_streams,
)
from .verify import SUITES, run_suite

# Pick-a-Pic v1 split reported for the full dataset, for side-by-side display.
PICKAPIC_V1_REFERENCE = {"total_pairs": 511_840, "size2": 44.09, "larger": 53.71, "inconsistent": 2.20}

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def atomic_write_many(files: dict[Path, str | bytes]) -> None:
    """Write every file to a sibling temp file first, then rename them all."""
    staged = []
    try:
        for path, data in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data.encode("utf-8") if isinstance(data, str) else data)
            staged.append((tmp, path))
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


def _compile(args) -> pg.CompiledLists:
    text = _read_text(args.input)
    try:
        records = list(pg.iter_judgments(text.splitlines()))
    except pg.InputFormatError as exc:
        raise InputError(f"{args.input}: {exc}") from None
    return pg.compile_lists(records, args.max_len, args.max_lists_per_group, args.workers)


def _stats_json(stats: pg.DatasetStats) -> str:
    return json.dumps(stats.to_dict(), indent=2) + "\n"


def _stats_summary(stats: pg.DatasetStats) -> str:
    p = stats.percentage
    return (f"pairs {stats.total_pairs}: size-2 {stats.pairs_in_size2_lists} ({p(stats.pairs_in_size2_lists):.2f}%), "
            f"larger {stats.pairs_in_larger_lists} ({p(stats.pairs_in_larger_lists):.2f}%), "
            f"inconsistent {stats.inconsistent_pairs} ({p(stats.inconsistent_pairs):.2f}%); "
            f"{stats.group_count} groups, {stats.list_count} lists, {stats.ties_dropped} ties dropped")


def cmd_lists(args) -> int:
    result = _compile(args)
    out = Path(args.output)
    stats_path = Path(args.stats_output) if args.stats_output else out.with_name(out.name + ".stats.json")
    body = "".join(lst.to_json() + "\n" for lst in result.lists)
    atomic_write_many({out: body, stats_path: _stats_json(result.stats)})
    print(f"wrote {len(result.lists)} lists to {out}")
    print(_stats_summary(result.stats))
    return EXIT_OK


def cmd_stats(args) -> int:
    result = _compile(args)
    text = _stats_json(result.stats)
    if args.output:
        atomic_write_many({Path(args.output): text})
    sys.stdout.write(text)
    print(_stats_summary(result.stats))
    if args.compare_pickapic:
        s, ref = result.stats, PICKAPIC_V1_REFERENCE
        print(f"{'bucket':<14}{'this input':>12}{'Pick-a-Pic v1':>16}")
        for label, n, r in (("size-2", s.pairs_in_size2_lists, ref["size2"]),
                            ("larger", s.pairs_in_larger_lists, ref["larger"]),
                            ("inconsistent", s.inconsistent_pairs, ref["inconsistent"])):
            print(f"{label:<14}{s.percentage(n):>11.2f}%{r:>15.2f}%")
        print(f"{'total pairs':<14}{s.total_pairs:>12}{ref['total_pairs']:>16}")
    return EXIT_OK


def _load_cfg(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except ConfigFileError as exc:
        raise InputError(f"config: {exc}") from None


def cmd_train(args) -> int:
    from .plotting import read_metrics, render_svg

    task, cfg = _load_cfg(args.config)
    if args.loss:
        cfg = replace(cfg, loss=args.loss)
    try:
        result = run_experiment(task, cfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    csv_text = metrics_csv(result.records)
    meta = {"loss": cfg.loss, "seed": cfg.seed}
    atomic_write_many({
        out / "metrics.csv": csv_text,
        out / "theta.ckpt.json": dumps_checkpoint(result.theta, meta),
        out / "reference.ckpt.json": dumps_checkpoint(result.reference, {"seed": cfg.seed}),
        out / "config.ini": dump_config(task, cfg),
        out / "curves.svg": render_svg(read_metrics(csv_text), f"{cfg.loss} (seed {cfg.seed})"),
    })
    last = result.records[-1]
    print(f"{cfg.loss}: step {last.step} adj_acc={last.adj_acc:.4f} kendall_tau={last.kendall_tau:.4f} "
          f"reward_gap={last.reward_gap:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(args.suite, args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_eval(args) -> int:
    task, cfg = _load_cfg(args.config)
    try:
        theta, _ = loads_checkpoint(_read_text(args.checkpoint))
        ref, _ = loads_checkpoint(_read_text(args.reference))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad checkpoint: {exc}") from None
    if theta.spec != ref.spec:
        raise InputError("checkpoint and reference architectures differ")
    if theta.spec != cfg.denoiser_spec(task):
        raise InputError("checkpoint architecture does not match the config")
    streams = seed_streams(cfg.seed)
    data = generate_synthetic_preferences(task, int(streams["data"].integers(2**31)))
    eval_seed = int(streams["eval"].integers(2**31))
    acc, tau, gap = eval_ranking_accuracy(theta, ref, data.heldout, cfg.schedule(), cfg.beta,
                                          cfg.eval_draws, eval_seed)
    report = {"adj_acc": acc, "kendall_tau": tau, "reward_gap": gap, "heldout_lists": len(data.heldout)}
    if args.out:
        atomic_write_many({Path(args.out): json.dumps(report, indent=2) + "\n"})
    print(f"adj_acc={acc:.4f} kendall_tau={tau:.4f} reward_gap={gap:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import read_metrics, render_svg

    text = _read_text(args.metrics)
    try:
        cols = read_metrics(text)
    except ValueError as exc:
        raise InputError(f"{args.metrics}: {exc}") from None
    out = Path(args.out)
    csv_out = out.with_suffix(".csv")
    files = {out: render_svg(cols, args.title or "")}
    if csv_out.resolve() != Path(args.metrics).resolve():
        files[csv_out] = text
    atomic_write_many(files)
    print(f"wrote {out} ({len(cols['step'])} points)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lpokit",
        description="Ranked-list compilation, listwise preference losses and desk-scale diffusion training.",
        epilog="Exit codes: 0 success, 1 runtime failure, 2 bad input or usage.")
    sub = p.add_subparsers(dest="command", required=True)

    def graph_opts(sp):
        sp.add_argument("--input", required=True, help="pairwise judgments, JSONL")
        sp.add_argument("--max-len", type=int, default=pg.DEFAULT_MAX_LEN)
        sp.add_argument("--max-lists-per-group", type=int, default=pg.DEFAULT_MAX_LISTS_PER_GROUP)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("lists", help="compile judgments into ranked lists")
    graph_opts(sp)
    sp.add_argument("--output", required=True)
    sp.add_argument("--stats-output", help="default: <output>.stats.json")
    sp.set_defaults(func=cmd_lists)

    sp = sub.add_parser("stats", help="pair-bucket statistics")
    graph_opts(sp)
    sp.add_argument("--output")
    sp.add_argument("--compare-pickapic", action="store_true",
                    help="print the published Pick-a-Pic v1 split next to the computed one")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("train", help="pretrain a reference and fine-tune on synthetic ranked lists")
    sp.add_argument("--config")
    sp.add_argument("--loss", choices=LOSS_NAMES)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("verify", help="randomized property suites")
    sp.add_argument("--suite", choices=SUITES + ("all",), default="all")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("eval", help="held-out ranking metrics of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--reference", required=True)
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("plot", help="render a metrics CSV as SVG curves")
    sp.add_argument("--metrics", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--title")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
