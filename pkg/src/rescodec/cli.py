"""``rescodec`` command line."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import container as ct
from .autograd.checkpoint import CheckpointError
from .codec import CheckpointMismatchError, decode_array, encode_array
from .imageio import ImageReadError, read_image, write_image
from .lossy import BpgError, get_backend
from .qc import BackendFailure, QcConfig, build_labels, load_qc, save_qc, train_qc, within_one_accuracy
from .rc import (
    MAX_PIXELS,
    RcConfig,
    TrainingDivergedError,
    load_model,
    parse_kv,
    prepare_samples,
    save_model,
    train_rc,
)
from .rangecoder import DecodeError
from .tau import TauError

log = logging.getLogger("rescodec")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_CHECKPOINT = 4
EXIT_MISMATCH = 5
EXIT_CORRUPT = 6
EXIT_BACKEND = 7
EXIT_DIVERGED = 8


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_rc(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise CliError(f"RC checkpoint not found: {path} (decoding needs the exact weights used to encode)", EXIT_CHECKPOINT)
    except (CheckpointError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load RC checkpoint {path}: {exc}", EXIT_CHECKPOINT)


def _load_qc(path):
    try:
        return load_qc(path)
    except FileNotFoundError:
        raise CliError(f"QC checkpoint not found: {path}", EXIT_CHECKPOINT)
    except (CheckpointError, KeyError, ValueError) as exc:
        raise CliError(f"cannot load QC checkpoint {path}: {exc}", EXIT_CHECKPOINT)


def _read(path):
    try:
        return read_image(path)
    except (ImageReadError, ValueError) as exc:
        raise CliError(str(exc), EXIT_INPUT)


def _mode(args):
    if args.optimal_q:
        return "optimal"
    if args.qc:
        return "qc"
    return "fixed"


def _images_in(directory):
    from .tools import list_images

    out = []
    for p in list_images(directory):
        try:
            out.append((p.stem, read_image(p)))
        except ImageReadError as exc:
            log.warning("skipped %s: %s", p.name, exc)
    if not out:
        raise CliError(f"no readable images in {directory}", EXIT_INPUT)
    return out


def _config(cls, kv: dict, preset_default="paper", **extra):
    """Dataclass config from ``key=value`` pairs; tuples are comma separated, unknown keys ignored."""
    defaults = cls()
    known = {}
    for f in fields(cls):
        if f.name not in kv:
            continue
        raw, d = kv[f.name], getattr(defaults, f.name)
        if isinstance(d, tuple):
            known[f.name] = tuple(type(d[0])(t) for t in raw.replace(",", " ").split())
        elif isinstance(d, bool):
            known[f.name] = raw.lower() in ("1", "true", "yes")
        else:
            known[f.name] = type(d)(float(raw)) if isinstance(d, int) else type(d)(raw)
    known.update(extra)
    preset = kv.get("preset", preset_default)
    return cls.desk(**known) if preset == "desk" else cls.paper(**known)


def _read_kv(path):
    try:
        return parse_kv(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}", EXIT_INPUT)


# ---------------------------------------------------------------------------
# commands


def cmd_encode(args):
    rc = _load_rc(args.model)
    qc = _load_qc(args.qc) if args.qc else None
    x = _read(args.input)
    backend = get_backend(args.backend)
    data, stats = encode_array(x, rc, _mode(args), args.q, qc, backend, not args.no_tau, args.max_pixels)
    Path(args.output).write_bytes(data)
    print(stats.line())


def cmd_decode(args):
    rc = _load_rc(args.model)
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc.strerror}", EXIT_INPUT)
    x = decode_array(data, rc)
    write_image(args.output, x)


def cmd_train_rc(args):
    kv = _read_kv(args.config)
    extra = {"seed": args.seed} if args.seed is not None else {}
    config = _config(RcConfig, kv, **extra)
    backend = get_backend(kv.get("backend", "fallback"))
    train_imgs = _images_in(kv.get("train_dir", "train"))
    val_imgs = _images_in(kv["val_dir"]) if "val_dir" in kv else []
    train = prepare_samples([x for _, x in train_imgs], backend, config.train_q, [i for i, _ in train_imgs])
    val = prepare_samples([x for _, x in val_imgs], backend, config.train_q, [i for i, _ in val_imgs])
    out = kv.get("out", "rc.rcw")
    res = train_rc(train, config, val, metrics_path=kv.get("metrics"), checkpoint_path=out)
    save_model(res.model, out)
    last = res.history[-1] if res.history else None
    print(f"steps={len(res.history)} last_loss={last[1] if last else float('nan'):.4f} "
          f"best_val={res.best_val:.4f} best_step={res.best_step} out={out}")


def cmd_train_qc(args):
    kv = _read_kv(args.config)
    extra = {"seed": args.seed} if args.seed is not None else {}
    config = _config(QcConfig, kv, **extra)
    rc = _load_rc(args.rc)
    backend = get_backend(kv.get("backend", "fallback"))
    train_imgs = _images_in(kv.get("train_dir", "train"))
    ids = [i for i, _ in train_imgs]
    labels = build_labels([x for _, x in train_imgs], ids, rc, backend, kv.get("labels"))
    res = train_qc([x for _, x in train_imgs], [labels[i][0] for i in ids], config)
    out = kv.get("out", "qc.rcw")
    save_qc(res.model, out)
    msg = f"steps={len(res.history)} out={out}"
    if "val_dir" in kv:
        val_imgs = _images_in(kv["val_dir"])
        vids = [i for i, _ in val_imgs]
        vl = build_labels([x for _, x in val_imgs], vids, rc, backend, kv.get("val_labels"))
        acc = within_one_accuracy(res.model, [x for _, x in val_imgs], [vl[i][0] for i in vids])
        msg += f" val_within_one={acc:.3f}"
    print(msg)


def cmd_eval(args):
    from .tools import EvalConfig, evaluate_bpsp

    rc = _load_rc(args.model)
    qc = _load_qc(args.qc) if args.qc else None
    config = EvalConfig(_mode(args), args.q, args.backend, not args.no_tau, args.max_pixels, args.workers)
    s = evaluate_bpsp(args.directory, rc, config, out_dir=args.out_dir, csv_path=args.csv, qc=qc)
    png = "n/a" if s.mean_png_bpsp is None else f"{s.mean_png_bpsp:.4f}"
    print(f"images={len(s.rows)} skipped={len(s.skipped)} mean_bpsp={s.mean_bpsp:.4f} "
          f"mean_png_bpsp_full_image={png} mean_lossy_fraction={s.mean_lossy_fraction:.3f}")
    for msg in s.skipped:
        print(f"skipped: {msg}", file=sys.stderr)


def cmd_prep(args):
    from .tools import prep_dataset

    written = prep_dataset(args.directory, args.output, seed=0 if args.seed is None else args.seed)
    print(f"wrote {len(written)} images to {args.output}")


def cmd_sample(args):
    from .tools import sample_visualization

    rc = _load_rc(args.model)
    x = _read(args.input)
    grid, _, _ = sample_visualization(x, rc, get_backend(args.backend), args.q, args.n, 0 if args.seed is None else args.seed)
    write_image(args.output, grid)
    print(f"wrote {3 + args.n} panels to {args.output}")


def cmd_hist(args):
    from .tools import residual_histogram, write_histogram_csv

    qc = _load_qc(args.qc) if args.qc else None
    imgs = [x for _, x in _images_in(args.directory)]
    h = residual_histogram(imgs, get_backend(args.backend), args.q, qc)
    if args.csv:
        write_histogram_csv(h, args.csv)
    print(f"values={h.total} mass_in_-6..6={h.restricted_mass():.4f}")


# ---------------------------------------------------------------------------


def _add_q_mode(p, optimal=True):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--qc", help="Q-classifier checkpoint")
    g.add_argument("--q", type=int, default=14, help="fixed Q in 11..17 (default 14)")
    if optimal:
        g.add_argument("--optimal-q", action="store_true", help="search all 7 Q values")
    p.add_argument("--backend", default="fallback", choices=("fallback", "bpg"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rescodec", description="Lossless image codec on a lossy base layer.")
    ap.add_argument("--seed", type=int, default=None, help="seed for every random choice of the command")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="compress an image")
    p.add_argument("--model", required=True)
    _add_q_mode(p)
    p.add_argument("--no-tau", action="store_true")
    p.add_argument("--max-pixels", type=int, default=MAX_PIXELS)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="reconstruct an image")
    p.add_argument("--model", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("train-rc", help="train the residual compressor")
    p.add_argument("config")
    p.set_defaults(func=cmd_train_rc)

    p = sub.add_parser("train-qc", help="train the Q-classifier")
    p.add_argument("config")
    p.add_argument("--rc", required=True)
    p.set_defaults(func=cmd_train_qc)

    p = sub.add_parser("eval", help="bpsp table for a directory")
    p.add_argument("directory")
    p.add_argument("--model", required=True)
    _add_q_mode(p)
    p.add_argument("--no-tau", action="store_true")
    p.add_argument("--max-pixels", type=int, default=MAX_PIXELS)
    p.add_argument("--csv")
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prep", help="downscale training images")
    p.add_argument("directory")
    p.add_argument("output")
    p.add_argument("--seed", type=int, default=None, dest="seed_local")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("sample", help="grid of residual samples")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--model", required=True)
    p.add_argument("--q", type=int, default=14)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--backend", default="fallback", choices=("fallback", "bpg"))
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("hist", help="residual histogram of a directory")
    p.add_argument("directory")
    _add_q_mode(p, optimal=False)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_hist)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed_local", None) is not None:
        args.seed = args.seed_local
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None:
        np.random.seed(args.seed)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ct.ContainerError, DecodeError, TauError) as exc:
        print(f"error: corrupt or unsupported container: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (BpgError, BackendFailure) as exc:
        print(f"error: lossy backend: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (NotADirectoryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
