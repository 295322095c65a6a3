"""Command-line entry point: ``kgalign {train,evaluate,generate,gradcheck}``.

Exit codes: 0 success, 2 configuration or input error, 3 training
divergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import DivergenceError, KGAlignError
from .evaluator import dump_predictions, format_reports, predict_alignment
from .model import load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("kgalign")


def cmd_train(args) -> int:
    from .pipeline import run_training

    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    result = run_training(cfg, out)
    h = result.history
    print(f"trained {len(h)} epochs (best epoch {h.best_epoch}); outputs in {out}")
    if result.report is not None:
        print(format_reports([result.report]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_run, load_dataset, prepare

    cfg = load_config(args.config)
    if args.similarity:
        cfg.eval = dataclasses.replace(cfg.eval, similarity=args.similarity)
    data = load_dataset(cfg)
    params, _, _ = load_checkpoint(args.checkpoint, expected=cfg.model, num_entities=data.pair.num_entities)
    prepared = prepare(cfg, data)
    trace, reports = evaluate_run(params, cfg, data, prepared, per_layer=args.per_layer)
    print(format_reports(reports))
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "_layers" if args.per_layer else ""
    path = out / f"report_{cfg.eval.similarity}{suffix}.json"
    body = reports[0].to_json() if len(reports) == 1 else "[\n" + ",\n".join(r.to_json() for r in reports) + "\n]"
    path.write_text(body + "\n", encoding="utf-8")
    if cfg.output.dump_predictions:
        from .model import select_representation

        emb = select_representation(trace, cfg.eval.layer_selector)
        ranked = predict_alignment(emb, data.test.sources, data.test.targets, cfg.eval, top_n=10)
        dump_predictions(out / f"predictions_{cfg.eval.similarity}.tsv", ranked, data.test.sources,
                         data.pair.entity_names)
    return EXIT_OK


def cmd_generate(args) -> int:
    from .pipeline import write_dataset

    cfg = load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    for f in write_dataset(cfg, out):
        print(f)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    cfg = load_config(args.config)
    gc = cfg.gradcheck
    result = run_gradcheck(gc, cfg.model, cfg.loss)
    width = max(len(n) for n in result.per_param)
    for name, err in result.per_param.items():
        flag = "ok" if err < gc.tolerance else "FAIL"
        print(f"{name.ljust(width)}  {err:.3e}  {flag}")
    print(f"max relative error {result.max_error:.3e} (tolerance {gc.tolerance:g})")
    if result.max_error >= gc.tolerance:
        print(f"gradient check failed for {result.worst()}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgalign", description="Entity alignment with a gated multi-hop GNN.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write checkpoint, history and report")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test alignment")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out")
    p.add_argument("--similarity", choices=["euclidean", "cosine", "csls"])
    p.add_argument("--per-layer", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("generate", help="write a synthetic graph pair as TSV files")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="check analytic gradients against finite differences")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (KGAlignError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
