"""Command-line entry point: ``xmhash {gen-data,train,encode,eval,selfcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import retrieval, synthetic, trainer
from .dataset import load_dataset, save_dataset
from .errors import ContractError, DatasetParseError, SingularSystemError
from .objective import GRAD_NORMS, HyperParams
from .selfcheck import run_selfcheck
from .solvers import save_codes

log = logging.getLogger("xmhash")

# flag name -> (HyperParams field, type)
HP_FLAGS = {
    "--k": ("k", int), "--alpha": ("alpha", float), "--beta": ("beta", float),
    "--gamma": ("gamma", float), "--eta": ("eta", float), "--mu": ("mu", float),
    "--m": ("m", int), "--t-out": ("t_out", int), "--t-in": ("t_in", int),
    "--batch": ("batch", int), "--lr-img": ("lr_img", float), "--lr-txt": ("lr_txt", float),
    "--img-hidden": ("img_hidden", int), "--txt-hidden": ("txt_hidden", int),
}

DATABASE_FILE = "database.jsonl"
QUERY_FILE = "queries.jsonl"


def _setup_logging() -> None:
    level = os.environ.get("XMHASH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def resolve_hyperparams(config_path: str | None, overrides: dict) -> HyperParams:
    """Defaults, then the JSON config file, then command-line flags."""
    values = {}
    if config_path:
        values.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return HyperParams.from_dict(values)


def cmd_gen_data(args) -> int:
    n_query = int(round(args.holdout * args.n / (1.0 - args.holdout))) if args.holdout > 0 else 0
    spec = synthetic.SyntheticSpec(n=args.n, n_query=n_query, d_x=args.d_x, d_y=args.d_y, c=args.c,
                                   noise=args.noise, mix_prob=args.mix_prob)
    db, queries = synthetic.generate(spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(db, out / DATABASE_FILE)
    save_dataset(queries, out / QUERY_FILE)
    print(f"wrote {db.n} database and {queries.n} query instances to {out}")
    return 0


def cmd_train(args) -> int:
    overrides = {field: getattr(args, flag[2:].replace("-", "_")) for flag, (field, _) in HP_FLAGS.items()}
    overrides["grad_norm"] = args.grad_norm
    hp = resolve_hyperparams(args.config, overrides)
    dataset = load_dataset(args.data)
    state, train_log = None, None
    if args.resume:
        ckpt = trainer.load_checkpoint(args.resume)
        state, train_log = ckpt.state, ckpt.train_log
        if ckpt.state.seed != args.seed:
            raise ContractError(f"checkpoint was trained with seed {ckpt.state.seed}, not {args.seed}")
    state, train_log = trainer.train(dataset, hp, args.seed, state=state, train_log=train_log)
    trainer.save_checkpoint(args.out, state, train_log, hp, dataset.labels)
    final = train_log.totals()[-1] if train_log.records else float("nan")
    print(f"trained {len(train_log.records)} outer iterations; final objective {final:.6g}; checkpoint in {args.out}")
    return 0


def cmd_encode(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_codes(out / "image_codes.bin", retrieval.hash_codes(ckpt.state.theta, data.images))
    save_codes(out / "text_codes.bin", retrieval.hash_codes(ckpt.state.psi, data.text_rows(np.arange(data.n))))
    print(f"wrote codes for {data.n} instances to {out}")
    return 0


def evaluate_checkpoint(ckpt: trainer.Checkpoint, queries, p_cuts) -> dict:
    """Metrics for both retrieval directions against the unified database codes."""
    index = retrieval.RetrievalIndex(ckpt.state.b, ckpt.labels)
    cuts = sorted({min(int(c), index.n) for c in p_cuts})
    text_codes = retrieval.hash_codes(ckpt.state.psi, queries.text_rows(np.arange(queries.n)))
    image_codes = retrieval.hash_codes(ckpt.state.theta, queries.images)
    return {
        "T->I": retrieval.evaluate(index, retrieval.make_queries(text_codes, queries.labels), cuts),
        "I->T": retrieval.evaluate(index, retrieval.make_queries(image_codes, queries.labels), cuts),
    }


def cmd_eval(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    queries = load_dataset(args.data)
    if queries.n == 0:
        raise ContractError(f"{args.data} holds no query instances")
    metrics = evaluate_checkpoint(ckpt, queries, [int(x) for x in args.p_at.split(",")])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(retrieval.metrics_json(metrics), encoding="utf-8")
    for key, tag in (("T->I", "t2i"), ("I->T", "i2t")):
        (out / f"pr_{tag}.csv").write_text(retrieval.pr_curve_csv(metrics[key]["pr_curve"]), encoding="utf-8")
        print(f"{key}: MAP {metrics[key]['map']:.4f}")
    return 0


def cmd_selfcheck(args) -> int:
    results = run_selfcheck()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xmhash", description="Cross-modal hashing with unified codes.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic database and held-out query set")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n", type=int, default=2000, help="database size")
    g.add_argument("--holdout", type=float, default=0.1, help="fraction of all instances held out as queries")
    g.add_argument("--d-x", type=int, default=32)
    g.add_argument("--d-y", type=int, default=100)
    g.add_argument("--c", type=int, default=3)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--mix-prob", type=float, default=0.15)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="learn codes and encoders; writes a checkpoint directory")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    t.add_argument("--config", help="JSON file with hyper-parameters")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--grad-norm", choices=GRAD_NORMS, default=None)
    for flag, (_, typ) in HP_FLAGS.items():
        t.add_argument(flag, type=typ, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="hash a dataset file with the trained encoders")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    v = sub.add_parser("eval", help="cross-modal retrieval metrics on a query file")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--data", required=True, help="query dataset file")
    v.add_argument("--out", required=True)
    v.add_argument("--p-at", default="100", help="comma-separated P@n cutoffs")
    v.set_defaults(func=cmd_eval)

    s = sub.add_parser("selfcheck", help="run the built-in oracle checks")
    s.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ContractError, DatasetParseError, SingularSystemError, FileNotFoundError,
            json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
