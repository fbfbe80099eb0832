"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as E
from .checkpoint import FingerprintMismatch
from .config import PRESETS, ConfigError, resolve
from .data import DOMAIN_IDS, FormatError
from .tensor import NonFiniteError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("reettt")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help=f"config file or preset name ({', '.join(PRESETS)})")
    p.add_argument("--seed", type=int, help="override [training] seed")
    p.add_argument("-v", "--verbose", action="store_true")


def _domain(p: argparse.ArgumentParser) -> None:
    p.add_argument("--domain", choices=sorted(DOMAIN_IDS), help="regime to read from the manifest")
    p.add_argument("--split", choices=E.SPLITS, default="test")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="reettt", description="Desk-scale radar echo extrapolation with test-time training.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic RSEQ datasets and a manifest")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train from scratch, keeping the best validation-ETS checkpoint")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (RTTC)")

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest slice")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=E.MODES, default="ttt_on")
    _domain(p)
    p.add_argument("--out", help="report path (JSON); printed when omitted")

    p = sub.add_parser("predict", help="forecast from the last T frames of an RSEQ file")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="RSEQ sequence")
    p.add_argument("--mode", choices=E.MODES, default="ttt_on")
    p.add_argument("--out", required=True, help="RSEQ forecast")

    p = sub.add_parser("adapt", help="fine-tune adaptation parameters with a frozen backbone")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="adapted checkpoint path")

    p = sub.add_parser("compare-ttt", help="paired ttt_on / ttt_off comparison on shifted data")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    _domain(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--emit-csv", help="per-lead CSI25 curves (CSV)")
    p.add_argument("--out", help="comparison path (JSON); printed when omitted")
    return ap


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def run(args: argparse.Namespace) -> int:
    cfg = resolve(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    cmd = args.command
    if cmd == "gen-data":
        m = E.cmd_gen_data(cfg, args.out)
        print(f"wrote {len(m.entries)} sequences to {args.out}")
    elif cmd == "train":
        rec = E.cmd_train(cfg, args.manifest, args.out)
        print(json.dumps({"selected_epoch": rec.selected_epoch, "val_ets": rec.criterion}))
    elif cmd == "evaluate":
        dom = DOMAIN_IDS[args.domain] if args.domain else None
        report = E.cmd_evaluate(cfg, args.checkpoint, args.manifest, args.mode, args.split, dom)
        _emit(report.to_json(), args.out)
    elif cmd == "predict":
        seq = E.cmd_predict(cfg, args.checkpoint, args.input, args.out, args.mode)
        print(f"wrote {seq.frames.shape[0]} frames to {args.out}")
    elif cmd == "adapt":
        rec = E.cmd_adapt(cfg, args.checkpoint, args.manifest, args.out)
        print(json.dumps({"selected_epoch": rec.selected_epoch, "val_ets": rec.criterion,
                          "zero_shot_val_ets": rec.initial.get("val_ets")}))
    elif cmd == "compare-ttt":
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        dom = DOMAIN_IDS[args.domain] if args.domain else None
        comp = E.cmd_compare_ttt(cfg, args.checkpoint, args.manifest, args.split, dom,
                                 args.threads, args.emit_csv)
        _emit(comp.to_json(), args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, FingerprintMismatch) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (E.DivergenceError, NonFiniteError) as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except ValueError as exc:
        # remaining value errors are incompatible settings (shapes, windows, splits)
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
