"""``lsno`` command-line entry point: gen, train, eval, verify, plot."""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from contextlib import nullcontext
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import checkpoint_bytes, load_checkpoint
from .config import format_kv, from_kv, parse_kv, to_kv
from .data.burgers import BurgersSpec
from .data.dataset import Dataset
from .data.generate import gen_burgers, gen_spirals
from .data.io import dataset_bytes, load_dataset, save_dataset
from .data.spirals import IEKernelSpec
from .errors import DimensionError, LsnoError, ParameterError
from .model import ModelConfig, evaluate, train
from .verify import run_suite

log = logging.getLogger("lsno")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"error:usage:{message}", file=sys.stderr)
        raise SystemExit(2)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def git_blob_hash(content: bytes) -> str:
    """Content hash in git's blob convention: sha1 of ``blob <size>\\0<content>``."""
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def thread_count(args) -> int:
    if getattr(args, "deterministic", False):
        return 1
    if args.threads is not None:
        n = args.threads
    else:
        raw = os.environ.get("LSNO_THREADS", "1")
        try:
            n = int(raw)
        except ValueError:
            raise ParameterError(f"LSNO_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError("thread count must be >= 1")
    return n


def blas_limit(threads: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return nullcontext()
    return threadpool_limits(limits=threads)


def _write_atomic(path, data: bytes | str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp.write_bytes(data)
    tmp.replace(path)


# gen


def cmd_gen(args) -> int:
    threads = thread_count(args)
    with blas_limit(1):
        if args.kind == "spirals":
            spec = IEKernelSpec(args.n_time, args.z0_low, args.z0_high, args.tol, args.max_iter)
            ds = gen_spirals(args.count, spec, args.seed, threads)
        else:
            spec = BurgersSpec(args.s, args.nt, args.nu, args.tau, args.decay, args.amplitude, args.cutoff)
            ds = gen_burgers(args.count, spec, args.seed, threads)
    _write_atomic(args.out, dataset_bytes(ds))
    g = ds.grid
    print(f"wrote {args.out}: {len(ds)} {args.kind} samples, grid S={g.n_space} T={g.n_time} M={g.channels}, "
          f"seed={args.seed}")
    return 0


# train


def load_config(args) -> ModelConfig:
    pairs = {}
    if args.config:
        pairs.update(parse_kv(Path(args.config).read_text()))
    for item in args.set or []:
        if "=" not in item:
            raise ParameterError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    for key in ("epochs", "seed", "n_basis", "mode", "mask", "lr", "batch_size"):
        value = getattr(args, key, None)
        if value is not None:
            pairs[key] = str(value)
    return from_kv(ModelConfig, pairs)


def cmd_train(args) -> int:
    start = _now()
    config = load_config(args)
    data = load_dataset(args.data)
    out = Path(args.out)

    def report(epoch, train_mse, val_mse):
        if args.verbose or epoch == config.epochs:
            print(f"epoch {epoch} train_mse={train_mse:.6g} val_mse={val_mse:.6g}")

    with blas_limit(thread_count(args)):
        model, history = train(config, data, callback=report)
    ckpt = checkpoint_bytes(model)
    _write_atomic(out, ckpt)
    history_path = Path(args.history) if args.history else out.with_suffix(".history.csv")
    _write_atomic(history_path, history.to_csv())
    manifest = {
        "command": " ".join(["lsno", *sys.argv[1:]]) if args.argv is None else " ".join(args.argv),
        "config_digest": hashlib.sha256(format_kv(to_kv(model.config)).encode()).hexdigest(),
        "dataset": str(args.data),
        "dataset_digest": sha256_file(args.data),
        "seed": str(model.config.seed),
        "checkpoint": str(out),
        "checkpoint_hash": git_blob_hash(ckpt),
        "history": str(history_path),
        "start": start,
        "end": _now(),
    }
    manifest_path = Path(args.manifest) if args.manifest else out.with_suffix(".manifest")
    _write_atomic(manifest_path, format_kv(manifest))
    print(f"wrote {out}, {history_path}, {manifest_path}")
    return 0


def verify_manifest(path) -> list[str]:
    """Names of manifest digests that no longer match their files."""
    m = parse_kv(Path(path).read_text())
    bad = []
    if sha256_file(m["dataset"]) != m["dataset_digest"]:
        bad.append("dataset_digest")
    ckpt = Path(m["checkpoint"]).read_bytes()
    if git_blob_hash(ckpt) != m["checkpoint_hash"]:
        return bad + ["checkpoint_hash"]
    model = load_checkpoint(m["checkpoint"])
    if hashlib.sha256(format_kv(to_kv(model.config)).encode()).hexdigest() != m["config_digest"]:
        bad.append("config_digest")
    return bad


# eval


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data)
    if data.grid != model.grid:
        raise DimensionError(f"dataset grid {data.grid} does not match checkpoint grid {model.grid}")
    with blas_limit(thread_count(args)):
        if args.upsample and args.upsample > 1:
            fine = model.grid.refine(args.upsample)
            pred = model.predict(data.initial, data.final, fine)
            if args.truth:
                truth = load_dataset(args.truth)
                if truth.grid != fine or len(truth) != len(data):
                    raise DimensionError(f"truth dataset must hold {len(data)} samples on {fine}")
                report = evaluate(model, truth, pred)
            else:
                coarse = np.stack([model.grid.restrict(p, args.upsample) for p in pred])
                report = evaluate(model, data, coarse)
            export = Dataset(pred, fine, "prediction", data.seed, data.params)
        else:
            pred = model.predict_dataset(data)
            report = evaluate(model, data, pred)
            export = Dataset(pred, data.grid, "prediction", data.seed, data.params)
    print(f"mse {report.summary()} (n={len(report.per_sample)}, mean={report.mean:.6g}, std={report.std:.6g})")
    if args.per_sample:
        rows = ["sample,mse"] + [f"{i},{v!r}" for i, v in enumerate(report.per_sample)]
        _write_atomic(args.per_sample, "\n".join(rows) + "\n")
    if args.export_pred:
        save_dataset(export, args.export_pred)
    return 0


# verify


def cmd_verify(args) -> int:
    results = run_suite(args.seed, args.eps)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return 1 if failed else 0


# plot


def to_ppm(matrix: np.ndarray, lo: float, hi: float) -> bytes:
    """Binary PPM (P6) with equal RGB channels, linear grayscale; a constant image is mid-gray."""
    if hi > lo:
        levels = np.round((matrix - lo) / (hi - lo) * 255)
    else:
        levels = np.full(matrix.shape, 128.0)
    rows, cols = matrix.shape
    gray = np.clip(levels, 0, 255).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (cols, rows) + np.repeat(gray[..., None], 3, axis=-1).tobytes()


def matrix_csv(matrix: np.ndarray) -> str:
    header = ",".join(f"t{j}" for j in range(matrix.shape[1]))
    return header + "\n" + "\n".join(",".join(repr(float(v)) for v in row) for row in matrix) + "\n"


def cmd_plot(args) -> int:
    data = load_dataset(args.data)
    pred = load_dataset(args.pred) if args.pred else None
    if pred is not None and (pred.grid != data.grid or len(pred) != len(data)):
        raise DimensionError("prediction file does not match the dataset grid")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    picks = range(len(data)) if args.samples is None else [int(s) for s in args.samples.split(",")]
    written = 0
    for i in picks:
        if not 0 <= i < len(data):
            raise ParameterError(f"sample {i} out of range")
        for c in range(data.grid.channels):
            frames = {"truth": data.trajectories[i, :, :, c]}
            if pred is not None:
                frames["pred"] = pred.trajectories[i, :, :, c]
            lo = min(float(f.min()) for f in frames.values())
            hi = max(float(f.max()) for f in frames.values())
            for name, matrix in frames.items():
                stem = out / f"{name}_s{i}_c{c}"
                _write_atomic(stem.with_suffix(".csv"), matrix_csv(matrix))
                if args.ppm:
                    _write_atomic(stem.with_suffix(".ppm"), to_ppm(matrix, lo, hi))
                written += 1
    print(f"wrote {written} matrices to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lsno", description="Leray-Schauder neural operator toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def threading(sp):
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: $LSNO_THREADS or 1)")
        sp.add_argument("--deterministic", action="store_true", help="force single-thread execution")

    g = sub.add_parser("gen", help="generate a dataset")
    g.add_argument("--kind", choices=("spirals", "burgers"), required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    ie, bu = IEKernelSpec(), BurgersSpec()
    g.add_argument("--n-time", type=int, default=ie.n_time)
    g.add_argument("--z0-low", type=float, default=ie.z0_low)
    g.add_argument("--z0-high", type=float, default=ie.z0_high)
    g.add_argument("--tol", type=float, default=ie.tol)
    g.add_argument("--max-iter", type=int, default=ie.max_iter)
    g.add_argument("--s", type=int, default=bu.s)
    g.add_argument("--nt", type=int, default=bu.nt)
    g.add_argument("--nu", type=float, default=bu.nu)
    g.add_argument("--tau", type=float, default=bu.tau)
    g.add_argument("--decay", type=float, default=bu.decay)
    g.add_argument("--amplitude", type=float, default=bu.amplitude)
    g.add_argument("--cutoff", type=int, default=bu.cutoff)
    threading(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--config", help="key=value model configuration file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--n-basis", dest="n_basis", type=int)
    t.add_argument("--mode", choices=("learned_mu", "fixed_mu"))
    t.add_argument("--mask", choices=("none", "alternate"))
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    t.add_argument("--manifest", help="manifest path (default: <out>.manifest)")
    threading(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--per-sample", help="write per-sample MSE CSV")
    e.add_argument("--export-pred", help="write predictions as an LSNO file")
    e.add_argument("--upsample", type=int, default=1, help="evaluate on a grid F times finer")
    e.add_argument("--truth", help="ground truth on the upsampled grid")
    threading(e)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--eps", type=float, default=None, help="epsilon-net radius (default: distance quantile)")
    v.set_defaults(func=cmd_verify)

    pl = sub.add_parser("plot", help="export space x time matrices and heatmaps")
    pl.add_argument("--data", required=True)
    pl.add_argument("--pred", help="prediction LSNO file from eval --export-pred")
    pl.add_argument("--out-dir", required=True)
    pl.add_argument("--samples", help="comma separated sample indices (default: all)")
    pl.add_argument("--ppm", action="store_true", help="also write binary grayscale heatmaps")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = None if argv is None else ["lsno", *argv]
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LsnoError as exc:
        print(f"error:{exc.category}:{exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error:io:{exc}", file=sys.stderr)
    except KeyError as exc:
        print(f"error:format:missing field {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
