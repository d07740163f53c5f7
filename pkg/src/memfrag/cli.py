"""Command line front end.

Every subcommand reads and writes files only, so runs compose into
pipelines::

    memfrag profile snap.kpf -o m.profile
    memfrag synthesize m.profile --pages 1048576 --seed 7 -o synth.snap
    memfrag score m.profile synth.snap

Exit status is 0 on success, 1 for bad input and 2 when an internal check
fails.
"""

import argparse
import secrets
import sys

import numpy as np

from . import __version__
from .errors import DegenerateCorrelationError, InputError, InvariantViolation, MemfragError
from .files import (
    atomic_write, dumps, read_layout, read_manifest, read_profile, read_snapshot,
    write_layout, write_profile, write_snapshot,
)
from .markov import DEFAULT_EPSILON, DEFAULT_THRESHOLD, build_profile, solve
from .regions import (
    DEFAULT_MAX_ORDER, free_block_histogram, homogeneity_histogram, homogeneity_metric,
    hugepage_feasibility, segment, usage_breakdown,
)
from .render import GIB, RenderSpec, render_memory_map
from .score import (
    NORMS, accuracy_score, class_distribution, contributions, distribution_score,
    ideal_distribution, score_band,
)
from .snapshot import PageUsage
from .synth import StartMode, WalkConfig, shrink, synthesize, synthesize_partitioned
from .timeseries import (
    change_counts, free_homogeneity_correlation, interchange_skewness,
    pooled_interchange_skewness,
)
REPORT_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; bad flags are input errors here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _report(kind, **fields):
    return {"schema": f"memfrag.{kind}", "version": REPORT_VERSION, **fields}


def _emit(doc, output):
    data = dumps(doc)
    if output:
        atomic_write(output, data)
    else:
        sys.stdout.write(data.decode("utf-8"))


def _usage_name(usage):
    return PageUsage(usage).name.lower()


def _class_name(cls):
    return {"size": cls.size, "usage": _usage_name(cls.usage)}


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args):
    snap = read_snapshot(args.input, args.format, args.page_size, args.machine, args.timestamp)
    write_snapshot(args.output, snap)
    print(f"{args.output}: {len(snap)} pages", file=sys.stderr)


def cmd_analyze(args):
    snap = read_snapshot(args.snapshot, args.format)
    seq = segment(snap)
    doc = _report(
        "analyze",
        machine=snap.machine,
        pages=len(snap),
        page_size_bytes=snap.page_size_bytes,
        regions=len(seq),
        usage_breakdown={_usage_name(u): f for u, f in usage_breakdown(snap).items()},
        homogeneity={
            "all": homogeneity_histogram(seq),
            **{_usage_name(u): homogeneity_histogram(seq, u) for u in PageUsage},
        },
        hugepage_feasibility={
            "aligned": hugepage_feasibility(snap, aligned=True),
            "runs": hugepage_feasibility(snap, aligned=False),
        },
        free_block_histogram=free_block_histogram(snap, args.max_order),
        homogeneity_metric=homogeneity_metric(snap),
    )
    _emit(doc, args.output)


def cmd_profile(args):
    snap = read_snapshot(args.snapshot, args.format)
    profile = build_profile(
        snap, args.threshold, args.epsilon, args.reconnect, args.seed,
        source=snap.machine, timestamp=snap.timestamp,
    )
    write_profile(args.output, profile)
    print(f"{args.output}: {len(profile)} states, {profile.matrix.nnz} edges", file=sys.stderr)


def cmd_stationary(args):
    profile = read_profile(args.profile)
    dist = solve(profile, args.solver)
    sizes = profile.sizes
    mass = sizes * dist.probs / float(np.dot(sizes, dist.probs))
    doc = _report(
        "stationary",
        solver=dist.method,
        iterations=dist.iterations,
        residual=dist.residual,
        states=[
            {**_class_name(cls), "probability": float(p), "memory_fraction": float(m)}
            for cls, p, m in zip(profile.states, dist.probs, mass)
        ],
    )
    _emit(doc, args.output)


def _parse_partition(text):
    path, sep, fraction = text.rpartition(":")
    if not sep or not path:
        raise InputError(f"partition {text!r} must look like PROFILE:FRACTION")
    try:
        return path, float(fraction)
    except ValueError:
        raise InputError(f"partition fraction {fraction!r} is not a number") from None


def cmd_synthesize(args):
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(64)
        print(f"seed: {seed}", file=sys.stderr)
    config = WalkConfig(args.pages, seed, StartMode(args.start), args.reserved)
    if args.partition:
        if args.profile:
            raise InputError("give either a profile or --partition, not both")
        parts = [(read_profile(p), f) for p, f in map(_parse_partition, args.partition)]
        layout = synthesize_partitioned(parts, config)
    elif args.profile:
        layout = synthesize(read_profile(args.profile), config)
    else:
        raise InputError("synthesize needs a profile or --partition")
    layout.check_conservation()
    write_layout(args.output, layout)
    print(f"{args.output}: {layout.total_pages} pages, seed {seed}", file=sys.stderr)


def cmd_shrink(args):
    layout, snap = read_layout(args.layout)
    result = shrink(layout, args.demand, args.seed)
    layout.check_conservation()
    layout.meta.setdefault("shrinks", []).append(
        {"demand": args.demand, "seed": args.seed, "released": int(result.released.size)}
    )
    write_layout(args.output, layout, snap.page_size_bytes)
    log = _report(
        "release",
        demand=args.demand,
        seed=args.seed,
        released=int(result.released.size),
        shortfall=result.shortfall,
        frames=result.released.tolist(),
    )
    _emit(log, args.log)


def cmd_score(args):
    profile = read_profile(args.profile)
    snap = read_snapshot(args.snapshot, args.format)
    norms = NORMS if args.norm == "all" else (args.norm,)
    scores = {
        norm: accuracy_score(profile, snap, norm, args.include_reserved, solver=args.solver)
        for norm in norms
    }
    expected = ideal_distribution(profile, "memory", args.solver)
    observed = class_distribution(snap, args.include_reserved)
    rows = contributions(expected, observed)
    headline = scores[norms[0]]
    doc = _report(
        "score",
        scores=scores,
        band=score_band(headline),
        include_reserved=args.include_reserved,
        classes=[
            {**_class_name(r.cls), "expected": r.expected, "observed": r.observed,
             "difference": r.difference}
            for r in (rows[: args.top] if args.top else rows)
        ],
    )
    if abs(distribution_score(expected, observed, norms[0]) - headline) > 1e-12:
        raise InvariantViolation("score table disagrees with the accuracy score")
    _emit(doc, args.output)
    print(" ".join(f"{norm}={value:.6f}" for norm, value in scores.items()), file=sys.stderr)


def _quantiles(values):
    if len(values) == 0:
        return None
    q = np.quantile(np.asarray(values, dtype=np.float64), [0.0, 0.25, 0.5, 0.75, 0.95, 1.0])
    return dict(zip(("min", "p25", "median", "p75", "p95", "max"), map(float, q)))


def cmd_series(args):
    series = read_manifest(args.manifest)
    counts = change_counts(series)
    values, freq = np.unique(counts, return_counts=True)
    skews = []
    for frame in np.flatnonzero(counts >= 4):
        g = interchange_skewness(series, int(frame), bias=not args.unbiased)
        if g is not None:
            skews.append(g)
    points = [
        (usage_breakdown(s)[PageUsage.FREE], homogeneity_metric(s, args.min_run))
        for s in series.snapshots
    ]
    try:
        r, r2 = free_homogeneity_correlation(points)
        correlation = {"r": r, "r_squared": r2}
    except DegenerateCorrelationError as exc:
        correlation = {"r": None, "r_squared": None, "reason": str(exc)}
    doc = _report(
        "series",
        snapshots=len(series),
        pages=series.npages,
        change_counts={"histogram": {int(v): int(f) for v, f in zip(values, freq)},
                       "unchanged_fraction": float(np.mean(counts == 0)),
                       "total_changes": int(counts.sum())},
        skewness={
            "estimator": "adjusted" if args.unbiased else "g1",
            "per_page": _quantiles(skews),
            "pages_with_defined_skewness": len(skews),
            "pooled": pooled_interchange_skewness(series, bias=not args.unbiased),
        },
        free_homogeneity={"min_run_pages": args.min_run, "points": points, **correlation},
    )
    if args.frame is not None:
        doc["frame"] = {"frame": args.frame, "changes": int(counts[args.frame]),
                        "skewness": interchange_skewness(series, args.frame,
                                                         bias=not args.unbiased)}
    _emit(doc, args.output)


def cmd_render(args):
    snap = read_snapshot(args.snapshot, args.format)
    spec = RenderSpec.for_row_size(args.row_gib * GIB, snap.page_size_bytes, args.width)
    atomic_write(args.output, render_memory_map(snap, spec))


# ---------------------------------------------------------------------------


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not a 64-bit unsigned seed")
    return value


def build_parser():
    parser = _Parser(prog="memfrag", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"memfrag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def snapshot_arg(p, name="snapshot"):
        p.add_argument(name)
        p.add_argument("--format", choices=("auto", "kpageflags", "usage"), default="auto")

    p = sub.add_parser("ingest", help="convert a dump or usage map to a canonical snapshot")
    snapshot_arg(p, "input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--page-size", type=int, default=None)
    p.add_argument("--machine", default=None)
    p.add_argument("--timestamp", type=float, default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("analyze", help="contiguity analytics report")
    snapshot_arg(p)
    p.add_argument("-o", "--output")
    p.add_argument("--max-order", type=int, default=DEFAULT_MAX_ORDER,
                   choices=range(DEFAULT_MAX_ORDER + 1), metavar="0..10")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("profile", help="build a Markov fragmentation profile")
    snapshot_arg(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threshold", type=_probability, default=DEFAULT_THRESHOLD)
    p.add_argument("--epsilon", type=_probability, default=DEFAULT_EPSILON)
    p.add_argument("--reconnect", choices=("mass", "random"), default="mass")
    p.add_argument("--seed", type=_seed, default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("stationary", help="stationary distribution of a profile")
    p.add_argument("profile")
    p.add_argument("--solver", choices=("power", "direct"), default="power")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_stationary)

    p = sub.add_parser("synthesize", help="fragment a simulated address space")
    p.add_argument("profile", nargs="?")
    p.add_argument("--pages", type=int, required=True)
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--start", choices=[m.value for m in StartMode],
                   default=StartMode.STATIONARY.value)
    p.add_argument("--reserved", type=float, default=0.0)
    p.add_argument("--partition", action="append", metavar="PROFILE:FRACTION")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("shrink", help="release pages from a synthesized layout")
    p.add_argument("layout")
    p.add_argument("--demand", type=int, required=True)
    p.add_argument("--seed", type=_seed, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--log", help="release log path (default: stdout)")
    p.set_defaults(func=cmd_shrink)

    p = sub.add_parser("score", help="accuracy score of a snapshot against a profile")
    p.add_argument("profile")
    snapshot_arg(p)
    p.add_argument("--norm", choices=NORMS + ("all",), default="l2")
    p.add_argument("--include-reserved", action="store_true")
    p.add_argument("--solver", choices=("power", "direct"), default="power")
    p.add_argument("--top", type=int, default=0, help="only report the N largest rows")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("series", help="change-over-time analytics")
    p.add_argument("manifest")
    p.add_argument("--frame", type=int, default=None)
    p.add_argument("--unbiased", action="store_true")
    p.add_argument("--min-run", type=int, default=64)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_series)

    p = sub.add_parser("render", help="draw a memory map as a P6 image")
    snapshot_arg(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--width", type=int, default=1024)
    p.add_argument("--row-gib", type=float, default=1.0)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except InvariantViolation as exc:
        print(f"memfrag: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (MemfragError, OSError, ValueError, IndexError) as exc:
        print(f"memfrag: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AssertionError as exc:
        print(f"memfrag: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
