"""Command-line interface: ``scstream generate | fit | report``.

Exit codes are a stable contract: 0 success, 1 I/O failure, 2 invalid
input or configuration, 3 numerical failure (a snapshot of the last good
state is written first).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import DRIFT_KINDS, DriftSpec, gen_gaussian_stream, gen_multinomial_stream, gen_recurring_wrapper
from .engine import Batch, BatchResult, EngineConfig, ScStream, run_stream
from .errors import ConfigurationError, FormatError, InputError, NumericalError, ScStreamError
from .gaussian import GaussianNIW
from .metrics import batch_metrics, full_nmi
from .multinomial import MultinomialDirichlet

log = logging.getLogger("scstream")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2, 3
METRIC_COLUMNS = ["batch_index", "ari", "nmi", "purity", "pairwise_f", "k"]
FORMAT_VERSION = 1


class UsageError(ScStreamError):
    """Bad command-line input; maps to exit code 2."""


# -- stream files -----------------------------------------------------------

def write_stream_csv(path: Path, batches) -> int:
    """Write batches as ``f0..f{D-1}, label, t, batch_id`` rows; returns the row count."""
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = None
        for b in batches:
            D = b.points.shape[1]
            if writer is None:
                writer = csv.writer(fh)
                writer.writerow([f"f{j}" for j in range(D)] + ["label", "t", "batch_id"])
            for x, y in zip(b.points, b.labels):
                writer.writerow([repr(float(v)) for v in x] + [int(y), repr(b.timestamp), b.index])
            rows += len(b)
    return rows


def read_stream_csv(path: Path, batch_size: int) -> tuple[list[Batch], bool]:
    """Parse a stream file into batches; the flag says whether truth labels exist."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"{path}: empty stream file") from None
        body = list(reader)
    features = [c for c in header if c.startswith("f") and c[1:].isdigit()]
    expected = [f"f{j}" for j in range(len(features))]
    if not features or features != expected:
        raise UsageError(f"{path}: feature columns must be f0..f{{D-1}}, got {header}")
    if not body:
        raise UsageError(f"{path}: stream has no rows")
    col = {name: i for i, name in enumerate(header)}
    try:
        data = np.array([[float(r[col[c]]) for c in features] for r in body])
        labels = np.array([int(r[col["label"]]) for r in body]) if "label" in col else None
        times = np.array([float(r[col["t"]]) for r in body]) if "t" in col else None
        ids = np.array([int(r[col["batch_id"]]) for r in body]) if "batch_id" in col else None
    except (ValueError, IndexError) as exc:
        raise UsageError(f"{path}: malformed row ({exc})") from None
    if ids is not None:
        if np.any(np.diff(ids) < 0):
            raise UsageError(f"{path}: batch_id must be non-decreasing")
        cuts = np.flatnonzero(np.diff(ids)) + 1
    else:
        cuts = np.arange(batch_size, len(data), batch_size)
    batches = []
    for i, idx in enumerate(np.split(np.arange(len(data)), cuts)):
        t = None
        if times is not None:
            t = float(times[idx[0]])
            if np.any(times[idx] != t):
                raise UsageError(f"{path}: rows of batch {i} carry different timestamps")
        batches.append(Batch(data[idx], t, None if labels is None else labels[idx], i))
    return batches, labels is not None


# -- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    family: str = "gaussian"
    stream: str = ""
    out: str = "run"
    batch: int = 1000
    alpha: float = 1.0
    lam: float = 1.0
    eps: float = 1e-8
    T: int = 1
    seed: int = 0
    threads: int = 1
    strict: bool = False
    deterministic_pass: bool = True
    kappa: float = 1.0
    mean: float = 0.0
    nu: float | None = None
    psi: float = 1.0
    dirichlet: float = 1.0
    extra: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.family not in ("gaussian", "multinomial"):
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.batch < 1:
            raise ConfigurationError("--batch must be >= 1")
        if self.extra:
            raise ConfigurationError(f"unknown config keys: {sorted(self.extra)}")
        self.engine_config()
        return self

    def engine_config(self) -> EngineConfig:
        return EngineConfig(alpha=self.alpha, lam=self.lam, eps=self.eps, T=self.T, seed=self.seed,
                            threads=self.threads, strict=self.strict,
                            deterministic_pass=self.deterministic_pass).validate()

    def build_family(self, dim: int):
        if self.family == "gaussian":
            nu = self.nu if self.nu is not None else dim + 2.0
            return GaussianNIW.from_config(dim, kappa=self.kappa, mean=self.mean, nu=nu, psi=self.psi)
        return MultinomialDirichlet.from_config(dim, d=self.dirichlet)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


FIT_KEYS = [f for f in RunConfig.__dataclass_fields__ if f != "extra"]


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Built-in defaults, overlaid by the config file, overlaid by explicit flags."""
    values: dict = {}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.config}: config must be a JSON object")
        values.update(loaded)
    for key in FIT_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    known = {k: v for k, v in values.items() if k in FIT_KEYS}
    extra = {k: v for k, v in values.items() if k not in FIT_KEYS}
    return RunConfig(**known, extra=extra).validate()


# -- commands -----------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    if args.k < 1 or args.d < 1 or args.n < 1 or args.batch < 1:
        raise UsageError("--k, --d, --n and --batch must be >= 1")
    drift = DriftSpec(kind=args.drift, magnitude=args.magnitude, ramp=args.ramp, period=args.period)
    gen_kind = "none" if args.drift == "recurring" else args.drift
    base_drift = DriftSpec(kind=gen_kind, magnitude=args.magnitude, ramp=args.ramp)
    if args.family == "gaussian":
        stream = gen_gaussian_stream(args.k, args.d, args.n, args.batch, base_drift, args.seed,
                                     separation=args.separation)
    else:
        stream = gen_multinomial_stream(args.k, args.d, args.trials, args.n, args.batch, base_drift,
                                        args.seed)
    if args.drift == "recurring":
        # inactive classes are dropped, so the file holds fewer than --n rows
        stream = gen_recurring_wrapper(stream, args.period, batch_size=args.batch)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = write_stream_csv(out, stream)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "generator": args.family,
        "k": args.k, "d": args.d, "n": args.n, "batch": args.batch, "rows": rows,
        "drift": asdict(drift), "seed": args.seed,
        "separation": args.separation if args.family == "gaussian" else None,
        "trials": args.trials if args.family == "multinomial" else None,
        "version": __version__,
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {rows} rows to {out}")
    return EXIT_OK


def _metrics_rows(results: list[BatchResult], truths: list[np.ndarray]):
    rows, preds, labels = [], [], []
    for r, y in zip(results, truths):
        if r.predicted is None:
            rows.append({"batch_index": r.batch_index, "k": r.K})
            continue
        rows.append({"batch_index": r.batch_index, **batch_metrics(r.predicted, y), "k": r.K})
        preds.append(r.predicted)
        labels.append(y)
    return rows, preds, labels


def write_metrics_csv(path: Path, rows: list[dict], full: float | None) -> None:
    """Per-batch rows, then a ``mean`` row over scored batches, then ``full_nmi``."""
    scored = [r for r in rows if "ari" in r]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([r.get(c, "") for c in METRIC_COLUMNS])
        if scored:
            means = [np.mean([r[c] for r in scored]) for c in METRIC_COLUMNS[1:]]
            w.writerow(["mean"] + [repr(float(v)) for v in means])
        w.writerow(["full_nmi", "" if full is None else repr(full), "", "", "", ""])


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = resolve_run_config(args)
    if not cfg.stream:
        raise UsageError("fit needs a stream file")
    batches, has_truth = read_stream_csv(Path(cfg.stream), cfg.batch)
    dim = batches[0].points.shape[1]
    family = cfg.build_family(dim)
    engine = ScStream(family, cfg.engine_config())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot_path = out / "snapshot.bin"
    provenance = {
        "format_version": FORMAT_VERSION, "version": __version__, "seed": cfg.seed,
        "config_hash": cfg.digest(), "config": asdict(cfg), "argv": sys.argv[1:],
        "numpy": np.__version__,
    }
    (out / "run.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")

    results: list[BatchResult] = []
    with open(out / "diagnostics.jsonl", "w") as diag, open(out / "labels.csv", "w", newline="") as lab:
        lw = csv.writer(lab)
        lw.writerow(["batch_index", "point_index", "predicted", "final"])

        def sink(r: BatchResult) -> None:
            results.append(r)
            rec = r.to_record(inline_labels=False)
            truth = batches[r.batch_index].labels
            if truth is not None and r.predicted is not None:
                rec["metrics"] = batch_metrics(r.predicted, truth)
            diag.write(json.dumps(rec) + "\n")
            pred = r.predicted if r.predicted is not None else [""] * len(r.final)
            for i, (p, f) in enumerate(zip(pred, r.final)):
                lw.writerow([r.batch_index, i, p, f])
            log.info("batch %d: K=%d %.0f ms", r.batch_index, r.K, r.wall_ms)

        try:
            run_stream(engine, batches, sink)
        except NumericalError as exc:
            snapshot_path.write_bytes(engine.snapshot())
            print(f"numerical failure: {exc}; state written to {snapshot_path}", file=sys.stderr)
            return EXIT_NUMERICAL
    snapshot_path.write_bytes(engine.snapshot())
    if has_truth:
        rows, preds, labels = _metrics_rows(results, [b.labels for b in batches])
        full = full_nmi(preds, labels) if preds else None
        write_metrics_csv(out / "metrics.csv", rows, full)
    ks = [r.K for r in results]
    print(f"{len(results)} batches, final K={ks[-1]}, outputs in {out}")
    return EXIT_OK


def read_metrics_csv(path: Path) -> list[dict]:
    """Per-batch rows of a metrics file (summary rows skipped); UsageError if malformed."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != METRIC_COLUMNS:
                raise UsageError(f"{path}: not a metrics file (header {header})")
            rows = []
            for rec in reader:
                if not rec or rec[0] in ("mean", "full_nmi"):
                    continue
                if len(rec) != len(METRIC_COLUMNS):
                    raise UsageError(f"{path}: wrong column count in {rec}")
                row = {"batch_index": int(rec[0]), "k": int(rec[5])}
                for c, v in zip(METRIC_COLUMNS[1:5], rec[1:5]):
                    if v != "":
                        row[c] = float(v)
                rows.append(row)
    except ValueError as exc:
        raise UsageError(f"{path}: malformed value ({exc})") from None
    if not rows:
        raise UsageError(f"{path}: no batch rows")
    return rows


def cmd_report(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = [(str(p), read_metrics_csv(Path(p))) for p in args.metrics]
    names = ["ari", "nmi", "purity", "pairwise_f", "k"]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run"] + [f"{m}_{s}" for m in names for s in ("mean", "std")])
        for run, rows in runs:
            cells = []
            for m in names:
                vals = np.array([r[m] for r in rows if m in r], dtype=float)
                cells += [repr(float(vals.mean())), repr(float(vals.std()))] if len(vals) else ["", ""]
            w.writerow([run] + cells)
    with open(out / "timeseries.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "batch_index", "metric", "value"])
        for run, rows in runs:
            for r in rows:
                for m in names:
                    if m in r:
                        w.writerow([run, r["batch_index"], m, r[m]])
    print(f"summarised {len(runs)} run(s) into {out}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scstream", description="Streaming DPMM clustering.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-batch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic drifting stream as CSV")
    g.add_argument("family", choices=["gaussian", "multinomial"])
    g.add_argument("--k", type=int, default=20, help="number of generating clusters")
    g.add_argument("--d", type=int, default=2, help="dimension")
    g.add_argument("--n", type=int, default=100_000, help="total number of points")
    g.add_argument("--batch", type=int, default=1000)
    g.add_argument("--drift", choices=DRIFT_KINDS, default="none")
    g.add_argument("--magnitude", type=float, default=0.05,
                   help="incremental step as a fraction of the cluster separation")
    g.add_argument("--ramp", type=int, default=20, help="gradual drift ramp length in batches")
    g.add_argument("--period", type=int, default=2, help="recurring drift period")
    g.add_argument("--separation", type=float, default=12.0, help="gaussian grid spacing")
    g.add_argument("--trials", type=int, default=100, help="multinomial draws per point")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="stream.csv")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="predict-then-update over a stream file")
    f.add_argument("stream", nargs="?", default=None)
    f.add_argument("--config", help="JSON file with fit settings; explicit flags win")
    f.add_argument("--family", choices=["gaussian", "multinomial"])
    f.add_argument("--out", help="output directory (default: run)")
    f.add_argument("--batch", type=int, help="batch size when the file has no batch_id column")
    f.add_argument("--alpha", type=float)
    f.add_argument("--lam", "--lambda", dest="lam", type=float)
    f.add_argument("--eps", type=float)
    f.add_argument("--t", "--iterations", dest="T", type=int, help="restricted iterations per batch")
    f.add_argument("--seed", type=int)
    f.add_argument("--threads", type=int)
    f.add_argument("--strict", action="store_true", default=None,
                   help="strict determinism (single thread, bit-reproducible)")
    f.add_argument("--no-deterministic-pass", dest="deterministic_pass", action="store_false",
                   default=None, help="replace the mode/argmax pass by a stochastic iteration")
    f.add_argument("--kappa", type=float)
    f.add_argument("--mean", type=float, help="NIW prior mean (same value in every coordinate)")
    f.add_argument("--nu", type=float, help="NIW degrees of freedom (default D+2)")
    f.add_argument("--psi", type=float, help="NIW scale: Psi = psi * I")
    f.add_argument("--dirichlet", type=float, help="symmetric Dirichlet prior parameter")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("report", help="summarise metrics files")
    r.add_argument("metrics", nargs="+")
    r.add_argument("--out", default="report")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InputError, ConfigurationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
