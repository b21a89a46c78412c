"""``ivgn`` command line: synth, train, generate, eval, ablate, params.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ivgn.accounting import checkpoint_param_count, count_params_flops
from ivgn.autodiff.checkpoint import load_checkpoint
from ivgn.config import PRESETS, RunConfig, apply_overrides, resolve_config
from ivgn.data import build_vocab, generate_synthetic, load_manifest, split_studies, write_manifest
from ivgn.errors import CompatibilityError, ConfigError, DataError, NumericError, UsageError
from ivgn.gia import ABLATION_SCHEMES, parse_scheme, render_scheme
from ivgn.metrics import evaluate_corpus, load_rules
from ivgn.model import load_model
from ivgn.training import decode_studies, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ABLATE_COLUMNS = ("scheme", "BL-1", "BL-2", "BL-3", "BL-4", "MTR-simplified", "RG-L", "params",
                  "flops", "error")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _manifest_path(data: str) -> Path:
    p = Path(data)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.is_file():
        raise DataError(f"no manifest found at {data}")
    return p


def _run_config(args, extra: Optional[Dict[str, object]] = None) -> RunConfig:
    overrides = dict(_pairs(getattr(args, "set", None) or []))
    if getattr(args, "gia_scheme", None) is not None:
        overrides["gia.scheme"] = args.gia_scheme
    for flag, key in (("epochs", "train.epochs"), ("seed", "train.seed"),
                      ("beam_size", "train.beam_size"), ("max_len", "train.max_len"),
                      ("length_norm_alpha", "train.length_norm_alpha"),
                      ("clip_norm", "train.clip_norm")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    overrides.update(extra or {})
    return resolve_config(args.preset, args.config, overrides)


def _pairs(items: Sequence[str]):
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        yield key.strip(), value.strip()


def _read_reports(path) -> List[str]:
    """One report per line; JSON-lines objects contribute their ``report`` field."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    out = []
    for line in lines:
        if line.startswith("{"):
            try:
                out.append(str(json.loads(line)["report"]))
                continue
            except (json.JSONDecodeError, KeyError):
                pass
        out.append(line)
    return out


# --- commands ------------------------------------------------------------
def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    studies = generate_synthetic(args.count, args.seed, side=args.side, views=args.views)
    try:
        manifest = write_manifest(studies, args.out)
    except OSError as exc:
        raise DataError(f"cannot write corpus to {args.out}: {exc}") from exc
    counts = {s: len(split_studies(studies, s)) for s in ("train", "val", "test")}
    print(f"wrote {len(studies)} studies to {manifest} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    studies = load_manifest(_manifest_path(args.data))
    res = train(cfg, studies, args.out, log=None if args.quiet else print)
    print(json.dumps({"best_epoch": res.best_epoch, "best_checkpoint": str(res.best_path),
                      "final_train_loss": res.history[-1]["train_loss"]}))
    return EXIT_OK


def cmd_generate(args) -> int:
    model, vocab, meta = load_model(args.checkpoint)
    studies = load_manifest(_manifest_path(args.data))
    train_set = split_studies(studies, "train")
    if train_set:
        data_vocab = build_vocab(train_set, vocab.min_freq)
        if data_vocab != vocab:
            raise CompatibilityError(
                f"checkpoint vocabulary ({len(vocab)} tokens) does not match the training split "
                f"of {args.data} ({len(data_vocab)} tokens)"
            )
    chosen = split_studies(studies, args.split)
    if not chosen:
        raise DataError(f"split {args.split!r} is empty")
    max_len = args.max_len if args.max_len is not None else 60
    reports = decode_studies(model, chosen, vocab, args.beam_size, max_len, args.length_norm_alpha)
    lines = [json.dumps({"id": s.id, "report": r}) for s, r in zip(chosen, reports)]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {len(lines)} reports to {args.out}")
    else:
        print("\n".join(lines))
    return EXIT_OK


def cmd_eval(args) -> int:
    cands = _read_reports(args.candidates)
    refs = _read_reports(args.references)
    if len(cands) != len(refs):
        raise UsageError(f"{len(cands)} candidates vs {len(refs)} references")
    rules = None
    if args.ce_rules:
        rules = load_rules(None if args.ce_rules == "builtin" else args.ce_rules)
    report = evaluate_corpus(cands, refs, rules, sentence_bleu=args.sentence_bleu,
                             with_ce=rules is not None)
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK


def _resolve_schemes(text: str) -> List[str]:
    if text == "all":
        return list(ABLATION_SCHEMES)
    # commas separate schemes; a bracketed group may itself never contain a comma
    return [s.strip() for s in text.split(",") if s.strip()]


def ablate_row(scheme: str, base: RunConfig, studies, vocab_size: int) -> Dict[str, object]:
    row: Dict[str, object] = {"scheme": scheme}
    try:
        spec = parse_scheme(scheme)
        cfg = resolve_config_like(base, {"gia.scheme": render_scheme(spec)})
        acc = count_params_flops(cfg.model_config(vocab_size))
        row.update(params=acc.total_params, flops=acc.total_flops)
        res = train(cfg, studies)
        best = max((h for h in res.history if "val" in h), key=lambda h: (h["val"]["bleu4"], -h["epoch"]))
        v = best["val"]
        row.update({"BL-1": v["bleu1"], "BL-2": v["bleu2"], "BL-3": v["bleu3"], "BL-4": v["bleu4"],
                    "MTR-simplified": v["meteor_simplified"], "RG-L": v["rouge_l"], "error": ""})
    except (ConfigError, DataError, NumericError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def resolve_config_like(base: RunConfig, overrides: Dict[str, object]) -> RunConfig:
    return apply_overrides(copy.deepcopy(base), overrides).validate()


def cmd_ablate(args) -> int:
    base = _run_config(args)
    studies = load_manifest(_manifest_path(args.data))
    vocab = build_vocab(split_studies(studies, "train"), base.data.min_freq)
    schemes = _resolve_schemes(args.schemes)
    rows = []
    for scheme in schemes:
        row = ablate_row(scheme, base, studies, len(vocab))
        rows.append(row)
        if not args.quiet:
            status = row["error"] or f"BL-4 {row['BL-4']:.4f}"
            print(f"{scheme:>6}  {status}", flush=True)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in ABLATE_COLUMNS})
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _run_config(args)
    vocab_size = args.vocab_size
    if args.data:
        vocab_size = len(build_vocab(split_studies(load_manifest(_manifest_path(args.data)), "train"),
                                     cfg.data.min_freq))
    acc = count_params_flops(cfg.model_config(vocab_size))
    result = {"vocab_size": vocab_size, "params": acc.params, "flops": acc.flops,
              "total_params": acc.total_params, "total_flops": acc.total_flops}
    if args.checkpoint:
        arrays, meta = load_checkpoint(args.checkpoint)
        result["checkpoint_params"] = checkpoint_param_count(arrays, meta.get("buffers", []))
    width = max(len(k) for k in acc.params) + 2
    print(f"{'module':<{width}}{'params':>12}{'flops':>16}")
    for key in acc.params:
        print(f"{key:<{width}}{acc.params[key]:>12}{acc.flops[key]:>16}")
    print(f"{'total':<{width}}{acc.total_params:>12}{acc.total_flops:>16}")
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=1) + "\n", encoding="utf-8")
    print(json.dumps(result))
    return EXIT_OK


# --- parser --------------------------------------------------------------
def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or key=value config file (overrides the preset)")
    p.add_argument("--preset", default="toy", choices=sorted(PRESETS),
                   help="base configuration (default: toy)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one dotted config key, e.g. train.epochs=5 (repeatable)")
    p.add_argument("--gia-scheme", help="GIA arrangement such as dsp, [dsp], p[ds]; 'none' disables GIA")
    p.add_argument("--seed", type=int, help="training seed (default: IVGN_SEED env, then preset)")
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ivgn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic corpus (PNG images + manifest.json)")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=32, help="image side in pixels")
    p.add_argument("--views", type=int, default=1, help="images per study")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model; writes checkpoints and history.jsonl")
    _config_flags(p)
    p.add_argument("--data", required=True, help="corpus directory or manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--beam-size", type=int, help="beam width for validation decoding")
    p.add_argument("--max-len", type=int)
    p.add_argument("--length-norm-alpha", type=float)
    p.add_argument("--clip-norm", type=float, help="clip the global gradient norm (off by default)")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode reports for one split as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--beam-size", type=int, default=3, help="beam width (default 3; 1 = greedy)")
    p.add_argument("--max-len", type=int, default=60)
    p.add_argument("--length-norm-alpha", type=float, default=0.0,
                   help="final ranking uses logprob / len**alpha (default 0)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score candidate reports against references")
    p.add_argument("--candidates", required=True, help="text (one report per line) or JSON lines")
    p.add_argument("--references", required=True)
    p.add_argument("--ce-rules", help="CE rule table (TSV) or 'builtin'; CE is omitted without it")
    p.add_argument("--sentence-bleu", action="store_true", help="mean sentence BLEU instead of corpus")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and score a list of GIA schemes; writes CSV")
    _config_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schemes", default="all", help="'all' or a comma list such as d,s,p")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("params", help="parameter and FLOP table for a configuration")
    _config_flags(p)
    p.add_argument("--vocab-size", type=int, default=36)
    p.add_argument("--data", help="take the vocabulary size from this corpus")
    p.add_argument("--checkpoint", help="also report the parameter count stored in a checkpoint")
    p.add_argument("--json", help="write the JSON summary to this path")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
