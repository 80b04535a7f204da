"""Command-line interface.

Exit codes: 0 success, 1 statistical check failed, 2 bad input,
3 numerical failure (series non-convergence, enumeration cap).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .estimator import EnumerationCapError, conditional_estimate_series, full_estimate
from .model import ModelParams, RngSeed, draw_samples, MaskPattern, Sample
from .montecarlo import McConfig, compare, worker_count
from .mse import mmse_closed_form, mmse_large_n_bound, mmse_limit_sigma_inf, mmse_limit_sigma_zero
from .specfun import ConvergenceError, SeriesControl

EXIT_OK, EXIT_STAT_FAIL, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

FIG2_K_VALUES = (1, 2, 4, 6, 8, 10)
FIG2_NORM_GRID = np.arange(0, 8 + 1e-9, 0.25)
FIG3_N_VALUES = tuple(range(2, 25, 2))
FIG3_POLICIES = (("K=ceil(n/4)", lambda n: math.ceil(n / 4)),
                 ("K=ceil(n/2)", lambda n: math.ceil(n / 2)),
                 ("K=n", lambda n: n))


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class OutputSpec:
    format: str = "csv"
    destination: str | None = None
    precision: int = 10

    def __post_init__(self):
        if self.format not in ("csv", "json"):
            raise ValueError(f"format must be csv or json, got {self.format!r}")
        if not 1 <= self.precision <= 17:
            raise ValueError(f"precision must be in [1, 17], got {self.precision}")

    def fmt(self, value):
        if isinstance(value, (float, np.floating)):
            return format(float(value), f".{self.precision}g")
        return value

    def write(self, header: list[str], rows: list[list], comments: list[str] = ()):
        stream = open(self.destination, "w", newline="") if self.destination else sys.stdout
        try:
            if self.format == "json":
                records = [{h: _jsonable(v, self.precision) for h, v in zip(header, row)} for row in rows]
                json.dump(records, stream, indent=2)
                stream.write("\n")
            else:
                for c in comments:
                    stream.write(f"# {c}\n")
                writer = csv.writer(stream, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([self.fmt(v) for v in row])
        finally:
            if self.destination:
                stream.close()


def _jsonable(v, precision):
    if isinstance(v, (float, np.floating)):
        return float(format(float(v), f".{precision}g"))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _output(args) -> OutputSpec:
    return OutputSpec(args.format, args.out, args.precision)


def _ctrl(args) -> SeriesControl:
    return SeriesControl(rel_tol=args.rel_tol, max_terms=args.max_terms)


def _parse_mode(text: str) -> tuple[str, int | None]:
    if text == "exact":
        return "exact", None
    if text.startswith("sampled:"):
        m = int(text.split(":", 1)[1])
        if m < 1:
            raise argparse.ArgumentTypeError("sampled:<m> needs m >= 1")
        return "sampled", m
    raise argparse.ArgumentTypeError(f"mode must be 'exact' or 'sampled:<m>', got {text!r}")


def _int_list(text: str) -> list[int]:
    """``"2,4,6"`` or an inclusive range ``"2:12:2"``; empty string is an empty list."""
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        if ":" in part:
            bits = [int(b) for b in part.split(":")]
            start, stop = bits[0], bits[1]
            step = bits[2] if len(bits) > 2 else 1
            out.extend(range(start, stop + 1, step))
        else:
            out.append(int(part))
    return out


def _float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _k_tokens(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _resolve_k(token: str, n: int) -> int:
    """K from an integer or a ratio policy: ``n``, ``n/2``, ``n/4`` (ceilings)."""
    if token == "n":
        return n
    if token.startswith("n/"):
        return math.ceil(n / int(token[2:]))
    return int(token)


def _read_vectors(path: str, n: int) -> list[np.ndarray]:
    stream = sys.stdin if path == "-" else open(path)
    rows = []
    try:
        for lineno, line in enumerate(stream, start=1):
            if not line.strip():
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != n:
                raise InputError(f"line {lineno}: expected {n} columns, found {len(fields)}")
            try:
                rows.append(np.array([float(f) for f in fields]))
            except ValueError:
                raise InputError(f"line {lineno}: non-numeric value in {line.strip()!r}") from None
    finally:
        if stream is not sys.stdin:
            stream.close()
    return rows


def cmd_estimate(args) -> int:
    params = ModelParams(args.n, args.k, args.sigma)
    ctrl = _ctrl(args)
    mode, m = args.mode
    rows = _read_vectors(args.input, params.n)
    rng = RngSeed(args.seed).generator()
    out = []
    for i, y in enumerate(rows, start=1):
        res = full_estimate(y, params, ctrl, mode=mode, n_subsets=m, rng=rng, weighting=args.weighting)
        out.append([i, res.value, res.terms_used, args.mode_text])
    _output(args).write(["row", "estimate", "terms_used", "mode"], out)
    return EXIT_OK


def _mse_row(point, ctrl, method):
    n, k, sigma = point
    try:
        res = mmse_closed_form(ModelParams(n, k, sigma), ctrl, method=method)
    except ConvergenceError as exc:
        raise ConvergenceError(f"grid point n={n}, K={k}, sigma={sigma}: {exc}") from exc
    return [n, k, sigma, res.value, res.value / n, res.i_max, res.tail_bound]


def _parallel_map(fn, items):
    items = list(items)
    threads = worker_count()
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def cmd_mse(args) -> int:
    ctrl = _ctrl(args)
    points = []
    for n in sorted(set(args.n)):
        if n < 1:
            raise InputError(f"n must be positive, got {n}")
        ks = sorted({_resolve_k(t, n) for t in args.k})
        for k in ks:
            if not 0 <= k <= n:
                continue
            for sigma in args.sigma:
                if not sigma > 0:
                    raise InputError(f"sigma must be positive, got {sigma}")
                points.append((n, k, sigma))
    rows = _parallel_map(lambda p: _mse_row(p, ctrl, args.method), points)
    _output(args).write(["n", "K", "sigma", "mmse", "mmse_over_n", "i_max", "tail_bound"], rows)
    return EXIT_OK


def _dump_samples(params, cfg, path, precision):
    n_batches = -(-cfg.n_samples // cfg.batch)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for b in range(n_batches):
            size = min(cfg.batch, cfg.n_samples - b * cfg.batch)
            x, mask, y = draw_samples(params, size, cfg.seed.batch_generator(b))
            for xi, mi, yi in zip(x, mask, y):
                sample = Sample(xi, MaskPattern.from_indices(np.flatnonzero(mi), params.n), yi)
                writer.writerow(sample.to_csv_fields(precision))


def cmd_simulate(args) -> int:
    params = ModelParams(args.n, args.k, args.sigma)
    ctrl = _ctrl(args)
    mode, m = args.mode
    cfg = McConfig(args.samples, seed=RngSeed(args.seed), estimator_mode=mode, n_subsets=m,
                   batch=args.batch)
    progress = None
    if args.progress:
        def progress(b, mean, se):
            print(f"batch={b} mean={mean:.{args.precision}g} se={se:.{args.precision}g}",
                  file=sys.stderr)
    result = compare(params, cfg, ctrl, progress=progress)
    if args.dump:
        _dump_samples(params, cfg, args.dump, args.precision)
    passed = abs(result.z_score) <= args.z_threshold
    header = ["n", "K", "sigma", "samples", "seed", "closed_form", "empirical_mean",
              "std_error", "z_score", "z_threshold", "pass"]
    row = [params.n, params.k_retained, params.sigma, cfg.n_samples, args.seed,
           result.closed_form, result.empirical.mean, result.empirical.std_error,
           result.z_score, args.z_threshold, "yes" if passed else "no"]
    _output(args).write(header, [row])
    return EXIT_OK if passed else EXIT_STAT_FAIL


def cmd_limits(args) -> int:
    if args.n < 1 or not 0 <= args.k <= args.n:
        raise InputError(f"need n >= 1 and 0 <= K <= n, got n={args.n}, K={args.k}")
    ctrl = _ctrl(args)
    header = ["n", "K", "mmse_sigma_to_0", "mmse_sigma_to_inf"]
    row = [args.n, args.k, mmse_limit_sigma_zero(args.n, args.k, ctrl), mmse_limit_sigma_inf(args.n)]
    if args.sigma is not None:
        if not args.sigma > 0:
            raise InputError("sigma must be positive")
        bound = mmse_large_n_bound(args.n, args.sigma)
        header += ["sigma", "large_n_bound_mmse_over_n", "bound_saturated"]
        row += [args.sigma, bound.value, "yes" if bound.saturated else "no"]
    _output(args).write(header, [row])
    return EXIT_OK


def figure2_rows(ctrl: SeriesControl) -> tuple[list[str], list[list]]:
    header = ["norm_y_s"] + [f"K={k}" for k in FIG2_K_VALUES]

    def row(norm):
        return [float(norm)] + [conditional_estimate_series(norm * norm, ModelParams(10, k, 2.0), ctrl).value
                                for k in FIG2_K_VALUES]
    return header, _parallel_map(row, FIG2_NORM_GRID)


def figure3_rows(ctrl: SeriesControl) -> tuple[list[str], list[list]]:
    header = ["n"] + [f"mmse_over_n[{name}]" for name, _ in FIG3_POLICIES]

    def row(n):
        return [n] + [mmse_closed_form(ModelParams(n, policy(n), 1.0), ctrl).value / n
                      for _, policy in FIG3_POLICIES]
    return header, _parallel_map(row, FIG3_N_VALUES)


def cmd_figure(args) -> int:
    ctrl = _ctrl(args)
    if args.which == "fig2":
        header, rows = figure2_rows(ctrl)
        comments = ["conditional estimate E[||X|| | y, S] at n=10, sigma=2",
                    "norm_y_s grid 0..8 step 0.25 (window chosen here, not taken from the figure)"]
    else:
        header, rows = figure3_rows(ctrl)
        comments = ["closed-form mmse/n at sigma=1",
                    "K policies are ceilings of fixed ratios: " + ", ".join(n for n, _ in FIG3_POLICIES)]
    _output(args).write(header, rows, comments)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--precision", type=int, default=10)
    common.add_argument("--rel-tol", "--ctrl.rel-tol", dest="rel_tol", type=float, default=1e-12)
    common.add_argument("--max-terms", dest="max_terms", type=int, default=10_000)

    parser = argparse.ArgumentParser(prog="norm-mmse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", parents=[common], help="estimate ||x|| for each input row")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--input", default="-", help="CSV file of y vectors, '-' for stdin")
    p.add_argument("--mode", default="exact")
    p.add_argument("--weighting", choices=("uniform", "posterior"), default="uniform")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("mse", parents=[common], help="tabulate the closed-form MSE on a grid")
    p.add_argument("--n", type=_int_list, required=True, help="e.g. 2,4,8 or 2:12:2")
    p.add_argument("--k", type=_k_tokens, required=True, help="integers or n, n/2, n/4")
    p.add_argument("--sigma", type=_float_list, required=True)
    p.add_argument("--method", choices=("auto", "series", "integral"), default="auto")
    p.set_defaults(func=cmd_mse)

    p = sub.add_parser("simulate", parents=[common], help="compare Monte-Carlo MSE with the closed form")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--mode", default="exact")
    p.add_argument("--batch", type=int, default=10_000)
    p.add_argument("--z-threshold", dest="z_threshold", type=float, default=4.0)
    p.add_argument("--progress", action="store_true", help="per-batch progress lines on stderr")
    p.add_argument("--dump", default=None, help="write the simulated samples as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("limits", parents=[common], help="noise-limit values of the MSE")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma", type=float, default=None, help="also report the large-n bound")
    p.set_defaults(func=cmd_limits)

    p = sub.add_parser("figure", parents=[common], help="figure data as CSV")
    p.add_argument("which", choices=("fig2", "fig3"))
    p.set_defaults(func=cmd_figure)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "mode"):
            args.mode_text = args.mode
            args.mode = _parse_mode(args.mode)
        OutputSpec(args.format, args.out, args.precision)
        return args.func(args)
    except (InputError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, EnumerationCapError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
