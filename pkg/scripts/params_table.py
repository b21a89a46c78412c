#!/usr/bin/env python3
"""Print parameter and FLOP counts for every GIA scheme under one preset."""

import argparse

from ivgn.accounting import count_params_flops
from ivgn.config import resolve_config
from ivgn.gia import ABLATION_SCHEMES, scheme_mode


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="toy")
    ap.add_argument("--vocab-size", type=int, default=36)
    args = ap.parse_args()

    base = count_params_flops(
        resolve_config(args.preset, overrides={"gia.scheme": "none"}).model_config(args.vocab_size))
    print(f"{'scheme':>7} {'mode':>9} {'params':>10} {'gia params':>11} {'flops':>14}")
    print(f"{'none':>7} {'-':>9} {base.total_params:>10} {0:>11} {base.total_flops:>14}")
    for scheme in ABLATION_SCHEMES:
        cfg = resolve_config(args.preset, overrides={"gia.scheme": scheme}).model_config(args.vocab_size)
        acc = count_params_flops(cfg)
        print(f"{scheme:>7} {scheme_mode(scheme):>9} {acc.total_params:>10} "
              f"{acc.params.get('gia', 0):>11} {acc.total_flops:>14}")


if __name__ == "__main__":
    main()
