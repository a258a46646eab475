"""Experiment driver: ``generate``, ``train``, ``evaluate``, ``sweep``, ``dump-params``.

Exit codes: 0 ok, 1 config error, 2 runtime failure, 3 partial sweep failure.
Outputs go to ``--out-root`` (or ``$GLANCE_SIMT_OUT``, default ``./runs``)
under the experiment name unless the config sets ``out_dir``.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import itertools
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import checkpoint as ckpt
from . import config as C
from . import model as M
from .data import Corpus, Vocab, generate, load_corpus, split, write_corpus
from .decode import TranslationTrace, batch_decode
from .metrics import CSV_COLUMNS, EvalReport, average_lagging, corpus_bleu, hallucination_rate, token_accuracy
from .plot import line_plot
from .policy import wait_k
from .train import Adam, Trainer, TrainingDiverged, train

log = logging.getLogger("glance_simt")

OUT_ENV = "GLANCE_SIMT_OUT"
EVAL_COLUMNS = ("k_test", *CSV_COLUMNS, "accuracy")
TRAIN_LOG_COLUMNS = ("step", "loss", "alpha", "config_hash", "seed")


class RuntimeFailure(RuntimeError):
    pass


def out_root(cli_value: Optional[str] = None) -> Path:
    return Path(cli_value or os.environ.get(OUT_ENV) or "runs")


def run_dir(cfg: C.ExperimentConfig, root: Optional[Path] = None) -> Path:
    return Path(cfg.out_dir) if cfg.out_dir else out_root(root and str(root)) / cfg.name


def data_dir(cfg: C.ExperimentConfig, root: Optional[Path] = None) -> Path:
    return Path(cfg.data_dir) if cfg.data_dir else run_dir(cfg, root) / "data"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _echo_config(cfg: C.ExperimentConfig, path: Path) -> None:
    data = cfg.to_dict()
    data["config_hash"] = C.fingerprint(cfg)
    _write_text(path, json.dumps(data, sort_keys=True, indent=2) + "\n")


# -- generate ------------------------------------------------------------------


def cmd_generate(cfg: C.ExperimentConfig, root: Optional[Path] = None) -> dict[str, Path]:
    """Write ``train.*`` / ``test.*`` corpus files and vocabularies for a synthetic task."""
    if cfg.task is None:
        raise C.ConfigError("generate needs a 'task' section")
    spec = copy.deepcopy(cfg.task)
    spec.size = cfg.task.size + cfg.n_test
    corpus = generate(spec)
    train_c, test_c = split(corpus, cfg.n_test)
    out = data_dir(cfg, root)
    paths = {}
    for name, part in (("train", train_c), ("test", test_c)):
        for kind, p in write_corpus(part, out, name).items():
            paths[f"{name}.{kind}"] = p
    corpus.src_vocab.save(out / "vocab.src.txt")
    corpus.tgt_vocab.save(out / "vocab.tgt.txt")
    paths["vocab.src"] = out / "vocab.src.txt"
    paths["vocab.tgt"] = out / "vocab.tgt.txt"
    return paths


def load_part(cfg: C.ExperimentConfig, part: str, vocabs=None, root: Optional[Path] = None) -> Corpus:
    if cfg.corpus is not None:
        c = cfg.corpus
        src, tgt, align = (getattr(c, f"{part}_src"), getattr(c, f"{part}_tgt"), getattr(c, f"{part}_align"))
        return load_corpus(src, tgt, align, min_freq=c.min_freq, vocabs=vocabs)
    d = data_dir(cfg, root)
    if not (d / f"{part}.src").exists():
        raise RuntimeFailure(f"corpus {d / part}.* not found; run 'generate' first")
    if vocabs is None:
        vocabs = (Vocab.load(d / "vocab.src.txt"), Vocab.load(d / "vocab.tgt.txt"))
    align = d / f"{part}.align"
    return load_corpus(d / f"{part}.src", d / f"{part}.tgt", align if align.exists() else None, vocabs=vocabs)


# -- train ---------------------------------------------------------------------


def cmd_train(cfg: C.ExperimentConfig, root: Optional[Path] = None) -> Path:
    """Train from scratch; writes ``checkpoint.bin``, ``train_log.csv`` and ``config.json``."""
    corpus = load_part(cfg, "train", root=root)
    rdir = run_dir(cfg, root)
    rdir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, rdir / "config.json")
    fp = C.fingerprint(cfg)

    mcfg = copy.deepcopy(cfg.model)
    mcfg.src_vocab, mcfg.tgt_vocab = len(corpus.src_vocab), len(corpus.tgt_vocab)
    params = M.init_params(mcfg, cfg.seed)
    tc = cfg.train
    trainer = Trainer(
        params,
        mcfg,
        Adam(lr=tc.lr, warmup=tc.warmup, clip_norm=tc.clip_norm),
        cfg.curriculum.schedule(),
        cfg.policy_fn(),
        seed=cfg.seed,
    )
    meta = {
        "config_hash": fp,
        "seed": cfg.seed,
        "src_vocab": corpus.src_vocab.itos,
        "tgt_vocab": corpus.tgt_vocab.itos,
        "policy": cfg.policy,
        "curriculum": cfg.to_dict()["curriculum"],
    }
    ckpt_path = rdir / "checkpoint.bin"
    log_path = rdir / "train_log.csv"

    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_LOG_COLUMNS)

        def on_log(step, loss, alpha):
            writer.writerow([step, f"{loss:.6f}", repr(alpha), fp, cfg.seed])
            fh.flush()
            if step and tc.save_every and step % tc.save_every == 0:
                ckpt.save(ckpt_path, trainer.params, mcfg, {**meta, "updates": trainer.n_update})

        try:
            train(trainer, corpus.pairs, tc.steps, tc.batch_tokens, cfg.seed, tc.log_every, on_log)
        except TrainingDiverged as exc:
            raise RuntimeFailure(f"{exc}; last good checkpoint kept at {ckpt_path}") from exc
    ckpt.save(ckpt_path, trainer.params, mcfg, {**meta, "updates": trainer.n_update})
    return ckpt_path


# -- evaluate ------------------------------------------------------------------


@dataclass
class Decoded:
    traces: list[TranslationTrace]
    report: EvalReport


def score(traces: Sequence[TranslationTrace], corpus: Corpus, config_hash: str = "", seed: int = 0) -> EvalReport:
    hyps = [t.tokens for t in traces]
    refs = [p.tgt for p in corpus.pairs]
    tv = corpus.tgt_vocab
    bleu = corpus_bleu([tv.decode(h) for h in hyps], [tv.decode(r) for r in refs])
    lags = [average_lagging(t.token_reads, len(p.src)) for t, p in zip(traces, corpus.pairs) if t.tokens]
    hr = hallucination_rate([t.token_reads for t in traces], hyps, [p.alignment for p in corpus.pairs], refs)
    return EvalReport(
        bleu=bleu,
        al=sum(lags) / len(lags) if lags else 0.0,
        hr=hr,
        sentences=len(traces),
        tokens=sum(len(h) for h in hyps),
        config_hash=config_hash,
        seed=seed,
        accuracy=token_accuracy(hyps, refs),
        ref_tokens=sum(len(r) for r in refs),
    )


def decode_and_score(params, mcfg, corpus: Corpus, k: int, ecfg: C.EvalConfig, config_hash="", seed=0) -> Decoded:
    traces = batch_decode(
        params, mcfg, [p.src for p in corpus.pairs], wait_k(k), ecfg.max_len_ratio, ecfg.max_len_extra
    )
    if not traces:
        return Decoded([], EvalReport(0.0, 0.0, 0.0, 0, 0, config_hash, seed))
    return Decoded(traces, score(traces, corpus, config_hash, seed))


def cmd_evaluate(
    cfg: C.ExperimentConfig,
    checkpoint_path=None,
    k_test: Optional[Sequence[int]] = None,
    root: Optional[Path] = None,
) -> list[tuple[int, EvalReport]]:
    """Decode the test split under each wait-k_test policy; writes ``eval.csv``,
    ``hyp.k<k>.txt`` and ``trace.k<k>.txt``."""
    rdir = run_dir(cfg, root)
    checkpoint_path = Path(checkpoint_path) if checkpoint_path else rdir / "checkpoint.bin"
    try:
        params, mcfg, meta = ckpt.load(checkpoint_path)
    except FileNotFoundError:
        raise RuntimeFailure(f"checkpoint {checkpoint_path} not found") from None
    vocabs = (Vocab(meta["src_vocab"][4:]), Vocab(meta["tgt_vocab"][4:]))
    if cfg.corpus is None:
        d = data_dir(cfg, root)
        for side, v in zip(("src", "tgt"), vocabs):
            vf = d / f"vocab.{side}.txt"
            if vf.exists() and Vocab.load(vf) != v:
                raise RuntimeFailure(f"{side} vocabulary of {checkpoint_path} does not match {vf}")
    corpus = load_part(cfg, "test", vocabs=vocabs, root=root)
    fp, seed = meta.get("config_hash", ""), int(meta.get("seed", 0))
    results = []
    for k in k_test or cfg.eval.k_test:
        k = int(k)
        dec = decode_and_score(params, mcfg, corpus, k, cfg.eval, fp, seed)
        tv = corpus.tgt_vocab
        _write_text(rdir / f"hyp.k{k}.txt", "".join(" ".join(tv.decode(t.tokens)) + "\n" for t in dec.traces))
        _write_text(rdir / f"trace.k{k}.txt", "".join(t.to_line() + "\n" for t in dec.traces))
        results.append((k, dec.report))
    rows = [[k, *r.csv_values(), f"{r.accuracy:.6f}"] for k, r in results]
    _write_text(rdir / "eval.csv", _csv_text(EVAL_COLUMNS, rows))
    return results


# -- sweep ---------------------------------------------------------------------


@dataclass
class SweepCell:
    name: str
    overrides: dict
    config: dict


def expand_grid(grid_cfg: dict) -> list[SweepCell]:
    """Cross-product of ``grid`` values applied as dotted overrides onto ``base``."""
    base = grid_cfg.get("base")
    grid = grid_cfg.get("grid") or {}
    if not isinstance(base, dict):
        raise C.ConfigError("sweep config needs a 'base' experiment object")
    if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
        raise C.ConfigError("'grid' must map dotted keys to nonempty lists")
    keys = sorted(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        data = copy.deepcopy(base)
        ov = dict(zip(keys, values))
        for k, v in ov.items():
            C.set_dotted(data, k, v)
        label = ",".join(f"{k}={json.dumps(v, sort_keys=True)}" for k, v in ov.items()) or "base"
        data["name"] = f"{base.get('name', 'sweep')}__{len(cells):03d}"
        cells.append(SweepCell(label, ov, data))
    return cells


def _run_cell(cell: SweepCell, sweep_dir: str, k_test: list[int]) -> dict:
    try:
        cfg = C.from_dict(cell.config)
        cfg.out_dir = str(Path(sweep_dir) / cfg.name)
        if cfg.task is not None:
            cfg.data_dir = str(Path(sweep_dir) / f"data_{C.task_fingerprint(cfg)}")
            if not (Path(cfg.data_dir) / "test.src").exists():
                cmd_generate(cfg)
        cmd_train(cfg)
        results = cmd_evaluate(cfg, k_test=k_test)
        return {"ok": True, "results": [(k, r.csv_values(), r.accuracy) for k, r in results]}
    except Exception as exc:  # recorded per cell; the sweep goes on
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}", "tb": traceback.format_exc()}


def cmd_sweep(grid_cfg: dict, out_dir: Path, workers: int = 1, plot: Optional[bool] = None) -> tuple[Path, int]:
    """Run every grid cell, then write ``sweep.csv`` (and SVG plots).

    Returns the CSV path and the number of failed cells.
    """
    cells = expand_grid(grid_cfg)
    for cell in cells:  # surface config errors before any training
        C.from_dict(cell.config)
    k_test = [int(k) for k in grid_cfg.get("k_test") or C.from_dict(cells[0].config).eval.k_test]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # generate shared corpora up front so parallel cells never race on them
    for cell in cells:
        cfg = C.from_dict(cell.config)
        if cfg.task is not None:
            cfg.data_dir = str(out_dir / f"data_{C.task_fingerprint(cfg)}")
            if not (Path(cfg.data_dir) / "test.src").exists():
                cmd_generate(cfg)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, cells, [str(out_dir)] * len(cells), [k_test] * len(cells)))
    else:
        outcomes = [_run_cell(c, str(out_dir), k_test) for c in cells]

    keys = sorted({k for c in cells for k in c.overrides})
    header = ("cell", *keys, *EVAL_COLUMNS, "status")
    rows, failed = [], 0
    series_bleu: dict[str, list] = {}
    series_hr: dict[str, list] = {}
    for cell, res in zip(cells, outcomes):
        ov = [json.dumps(cell.overrides.get(k), sort_keys=True) for k in keys]
        if not res["ok"]:
            failed += 1
            log.error("cell %s failed: %s", cell.name, res["error"])
            _write_text(out_dir / cell.config["name"] / "error.txt", res["tb"])
            rows.append([cell.config["name"], *ov, *[""] * len(EVAL_COLUMNS), "failed: " + res["error"]])
            continue
        for k, values, acc in res["results"]:
            rows.append([cell.config["name"], *ov, k, *values, f"{acc:.6f}", "ok"])
            al, bleu, hr = float(values[1]), float(values[0]), float(values[2])
            series_bleu.setdefault(cell.name, []).append((al, bleu))
            series_hr.setdefault(cell.name, []).append((al, hr))
    csv_path = out_dir / "sweep.csv"
    _write_text(csv_path, _csv_text(header, rows))
    n_points = sum(len(s) for s in series_bleu.values())
    if plot or (plot is None and n_points > 1):
        if series_bleu:
            _write_text(out_dir / "bleu_vs_al.svg", line_plot(series_bleu, "AL (tokens)", "BLEU", "Quality vs latency"))
            _write_text(out_dir / "hr_vs_al.svg", line_plot(series_hr, "AL (tokens)", "HR", "Hallucination vs latency"))
    return csv_path, failed


# -- entry point ------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glance-simt", description=__doc__.splitlines()[0])
    ap.add_argument("--out-root", help=f"output root (default ${OUT_ENV} or ./runs)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="experiment config (JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config value")
        p.add_argument("--seed", type=int)
        return p

    with_config(sub.add_parser("generate", help="write synthetic corpus files"))
    t = with_config(sub.add_parser("train", help="train a model"))
    t.add_argument("--steps", type=int)
    e = with_config(sub.add_parser("evaluate", help="decode and score the test split"))
    e.add_argument("--checkpoint")
    e.add_argument("--k-test", type=lambda s: [int(x) for x in s.split(",")], help="comma-separated k values")
    s = sub.add_parser("sweep", help="train/evaluate a grid of configs")
    s.add_argument("grid", help="sweep config (JSON with 'base', 'grid', 'k_test')")
    s.add_argument("--out", help="sweep directory (default <out-root>/<base name>)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--plot", action=argparse.BooleanOptionalAction, default=None)
    d = sub.add_parser("dump-params", help="print parameter shapes and norms")
    d.add_argument("checkpoint")
    return ap


def _load_cfg(args) -> C.ExperimentConfig:
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"train.steps={args.steps}")
    return C.load(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    root = Path(args.out_root) if args.out_root else None
    try:
        if args.command == "dump-params":
            params, mcfg, meta = ckpt.load(args.checkpoint)
            print(json.dumps({"config": mcfg.to_dict(), "updates": meta.get("updates")}, sort_keys=True))
            print(ckpt.describe(params), end="")
            return 0
        if args.command == "sweep":
            try:
                grid_cfg = json.loads(Path(args.grid).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise C.ConfigError(f"cannot read sweep config {args.grid}: {exc}") from None
            name = (grid_cfg.get("base") or {}).get("name", "sweep")
            out = Path(args.out) if args.out else out_root(args.out_root) / name
            csv_path, failed = cmd_sweep(grid_cfg, out, args.workers, args.plot)
            print(csv_path)
            return 3 if failed else 0
        cfg = _load_cfg(args)
        if args.command == "generate":
            for key, path in cmd_generate(cfg, root).items():
                print(f"{key}\t{path}")
        elif args.command == "train":
            print(cmd_train(cfg, root))
        elif args.command == "evaluate":
            for k, report in cmd_evaluate(cfg, args.checkpoint, args.k_test, root):
                print(f"k_test={k}")
                print(report.to_text(), end="")
        return 0
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
