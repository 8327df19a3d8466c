"""Command-line entry point: ``verify``, ``synth``, ``train``, ``sample``, ``eval``.

Exit codes: 0 success, 1 verification or runtime failure, 2 usage or
configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import evaldata as D
from . import process, sampler, verify
from . import scorenet as sn
from . import train as T
from .errors import ConfigError, DegenerateReverse, FadeGrowError, MagnitudeError, NumericalError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
FAULT_ENV = "FADEGROW_INJECT_FAULT"

DATA_FILE = "data.txt"
CHECKPOINT_FILE = "checkpoint.npz"
LOG_FILE = "train_log.csv"
METRICS_FILE = "metrics.csv"
TOPK_FILE = "topk.csv"
CONFIG_FILE = "config.txt"

# checkpoint keys that must come from training, not from the eval-time config
MODEL_KEYS = [k for k in C.KEYS if k.split(".")[0] in ("schedule", "loss", "model")]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--setting", choices=["pointwise", "pairwise", "hybrid", "adaptive"])
    p.add_argument("--w", type=float, help="guidance strength")
    p.add_argument("--steps", type=int, help="reverse sampling steps")
    p.add_argument("--threads", type=int)
    p.add_argument("--data", help="dataset file")
    p.add_argument("--checkpoint", help="checkpoint file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fadegrow", description="Preference fading and growing recommender.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", help="run numerical property suites")
    v.add_argument("filter", nargs="?", help="run only suites whose name contains this")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--list", action="store_true", help="list suite names")

    s = sub.add_parser("synth", help="write a synthetic cycle dataset")
    _common(s)
    s.add_argument("--n", type=int)
    s.add_argument("--count", type=int)
    s.add_argument("--noise", type=float)

    for name, text in (("train", "train a score network"), ("sample", "write top-K lists"),
                       ("eval", "write all-rank metrics")):
        c = sub.add_parser(name, help=text)
        _common(c)
        if name != "train":
            c.add_argument("--split", choices=["train", "valid", "test"], default="test")
    return ap


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = C.parse_value(k.strip(), v)
    flags = {"seed": "seed", "out_dir": "out_dir", "setting": "loss.setting", "w": "sampler.w",
             "steps": "sampler.steps", "threads": "threads", "data": "data_path",
             "checkpoint": "checkpoint_path", "n": "synth.n", "count": "synth.count", "noise": "synth.noise"}
    for attr, key in flags.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    return out


def resolve_args(args) -> C.RunConfig:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else None
    return C.resolve(text, _overrides(args))


def _write(path: Path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _out(cfg) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    _write(out / CONFIG_FILE, C.dump(cfg))
    return out


def _data_path(cfg) -> Path:
    p = Path(cfg["data_path"] or Path(cfg["out_dir"]) / DATA_FILE)
    if not p.exists():
        raise ConfigError(f"dataset {p} not found")
    return p


def _load_model(cfg):
    p = Path(cfg["checkpoint_path"] or Path(cfg["out_dir"]) / CHECKPOINT_FILE)
    if not p.exists():
        raise ConfigError(f"checkpoint {p} not found")
    field_, extra = sn.load(p)
    model_cfg = C.resolve(extra.get("config", ""))
    return field_, model_cfg


# -- commands -----------------------------------------------------------------


def cmd_verify(filter_: str | None = None, seed: int = 0, stream=sys.stdout) -> int:
    names = [n for n in verify.SUITES if filter_ is None or filter_ in n]
    if not names:
        print(f"no suite matches {filter_!r}", file=stream)
        return EXIT_USAGE
    fault = os.environ.get(FAULT_ENV, "") not in ("", "0")
    saved = process._FAULT_FLIP_SIGN
    process._FAULT_FLIP_SIGN = fault
    try:
        results = [verify.run_suite(n, seed) for n in names]
    finally:
        process._FAULT_FLIP_SIGN = saved
    for r in results:
        print(r.line(), file=stream)
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} suites passed", file=stream)
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_synth(cfg) -> int:
    out = _out(cfg)
    data = D.synth_cycle(cfg["synth.n"], cfg["synth.count"], cfg["synth.noise"],
                         np.random.default_rng(cfg["seed"]))
    D.save(data, out / DATA_FILE)
    print(f"wrote {len(data)} sequences to {out / DATA_FILE}")
    return EXIT_OK


def cmd_train(cfg) -> int:
    out = _out(cfg)
    data = D.load(_data_path(cfg))
    tc = cfg.train()

    def report(epoch, row, m):
        print(f"epoch {epoch:3d}  loss {row[1]:.5f}  val HR@5 {row[2]:.4f}  NDCG@5 {row[3]:.4f}", flush=True)

    res = T.train(data, tc, on_epoch=report)
    _write(out / LOG_FILE, res.log_csv())
    model_text = "".join(f"{k} = {C._fmt(cfg[k])}\n" for k in MODEL_KEYS)
    sn.save(res.field, out / CHECKPOINT_FILE, extra={"config": model_text, "best_epoch": res.best_epoch})
    print(f"best epoch {res.best_epoch}; checkpoint at {out / CHECKPOINT_FILE}")
    return EXIT_OK


def _generation(cfg, split_name):
    field_, model_cfg = _load_model(cfg)
    data = D.load(_data_path(cfg))
    if data.n_items != field_.config.n_items:
        raise ConfigError(f"dataset has {data.n_items} items but the model has {field_.config.n_items}")
    split = data.split(split_name)
    return field_, model_cfg, split


def cmd_eval(cfg, split_name="test") -> int:
    out = _out(cfg)
    field_, model_cfg, split = _generation(cfg, split_name)
    m = T.evaluate_model(field_, split, cfg.sampler(), model_cfg.schedule(), model_cfg.setting(),
                         cfg["train.eval_ks"], cfg["threads"])
    _write(out / METRICS_FILE, m.to_csv())
    print(m.to_csv(), end="")
    print(f"clamp_rate {m.clamp_rate:.6f}")
    return EXIT_OK


def cmd_sample(cfg, split_name="test") -> int:
    out = _out(cfg)
    field_, model_cfg, split = _generation(cfg, split_name)
    pT, E = T.fading_matrix(field_, model_cfg.setting())
    ids = np.sort(split.indices)
    hist = D.SplitView(split.data, ids).padded(field_.config.history_len)
    g = sampler.generate_batch(field_, hist, ids, cfg.sampler(), model_cfg.schedule(),
                               pT.normalized, E, cfg["threads"])
    k = min(cfg["sampler.top_k"], field_.config.n_items)
    lines = ["user_index,rank,item,score"]
    for u, ranking, probs in zip(ids, g.ranking, g.probs):
        for r, item in enumerate(ranking[:k], start=1):
            lines.append(f"{u},{r},{item},{probs[item]:.10g}")
    _write(out / TOPK_FILE, "\n".join(lines) + "\n")
    print(f"wrote top-{k} lists for {len(ids)} users to {out / TOPK_FILE}")
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    try:
        if args.cmd == "verify":
            if args.list:
                print("\n".join(verify.SUITES))
                return EXIT_OK
            return cmd_verify(args.filter, args.seed)
        cfg = resolve_args(args)
        if args.cmd == "synth":
            return cmd_synth(cfg)
        if args.cmd == "train":
            return cmd_train(cfg)
        if args.cmd == "sample":
            return cmd_sample(cfg, args.split)
        return cmd_eval(cfg, args.split)
    except (NumericalError, DegenerateReverse, MagnitudeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FadeGrowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
