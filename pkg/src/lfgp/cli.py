"""``lfgp`` command-line front end.

Subcommands: ``generate``, ``fit``, ``predict``, ``bench``, ``rates`` and
``backtest``.  Every subcommand accepts ``--config FILE``, a JSON object
whose keys are long flag names (``n0``, ``target_dim``...); explicit flags
on the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import backtest as bt
from .datasets import FAMILIES, generate, read_csv, test_grid, true_curve, write_csv
from .errors import LfgpError
from .estimators import StatisticKind
from .manifold import METHODS, EmbeddingConfig
from .model import load_model, predict_batch, save_model
from .svg import write_line_chart
from .trainer import REPORT_COLUMNS, FitConfig, fit

logger = logging.getLogger("lfgp")


class UsageError(Exception):
    """Bad paths or flags; exits with status 2."""


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(float(v)) for v in text.split(",") if v.strip()]


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _writable(path) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


# --- subcommands ------------------------------------------------------------


def cmd_generate(args) -> int:
    out = _writable(args.out)
    dataset = generate(args.kind, args.n, args.seed)
    write_csv(dataset, out)
    print(f"wrote {dataset.n} rows to {out}")
    return 0


def _query_points(args, d: int) -> np.ndarray | None:
    if args.points:
        pts = np.loadtxt(_existing(args.points), delimiter=",", skiprows=1, ndmin=2)
        return pts[:, :d]
    if args.grid:
        return test_grid(args.grid, args.n_star)
    return None


def cmd_fit(args) -> int:
    data = read_csv(_existing(args.data))
    model_out = _writable(args.model_out)
    report_out = _writable(args.report_out) if args.report_out else None
    embedding = EmbeddingConfig(args.embedding, args.k, args.target_dim)
    config = FitConfig(
        n0=args.n0,
        epsilon=args.epsilon,
        statistic=StatisticKind.parse(args.statistic),
        max_outer_iters=args.max_outer_iters,
        seed=args.seed,
        baseline=args.baseline,
        embedding=embedding,
        estimator_noise=not args.noise_free,
    )
    queries = _query_points(args, data.d) if embedding.active else None
    model, report = fit(data.X, data.y, config, X_query=queries)
    save_model(model, model_out)
    if report_out is not None:
        _atomic_text(report_out, _csv_text(REPORT_COLUMNS, [report.csv_row()]))
    print(f"m={report.cluster_count} reps={report.repetition_count} "
          f"lml={report.final_lml:.6g} time={report.wall_time:.2f}s -> {model_out}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(_existing(args.model))
    out = _writable(args.out)
    X_star = _query_points(args, model.input_dim)
    if X_star is None:
        raise UsageError("predict needs --grid or --points")
    pred = predict_batch(model, X_star)
    truth = true_curve(len(X_star), model.statistic) if args.grid and not args.points else None
    header = ["x1", "mean", "variance"] + (["true"] if truth is not None else [])
    rows = []
    for i in range(len(X_star)):
        row = [repr(float(X_star[i, 0])), repr(float(pred.mean[i])), repr(float(pred.variance[i]))]
        if truth is not None:
            row.append(repr(float(truth[i])))
        rows.append(row)
    _atomic_text(out, _csv_text(header, rows))
    if args.plot:
        from .figures import prediction_figure

        x = X_star[:, 0]
        series = [("posterior mean", x, pred.mean)]
        if truth is not None:
            series.append(("true value", x, truth))
        write_line_chart(out.with_suffix(".svg"), series, title=model.statistic.label,
                         xlabel="x1*", ylabel=model.statistic.label)
        prediction_figure(x, pred.mean, pred.variance, out.with_suffix(".png"), truth=truth,
                          ylabel=model.statistic.label)
    print(f"wrote {len(rows)} predictions to {out}")
    return 0


BENCH_COLUMNS = ("n", "n0", "time_mean_s", "time_sd_s", "reps_mean", "reps_sd", "reps_max", "m_mean", "runs")


def run_bench(ns, n0s, reps: int, seed: int = 0, family: str = "cube", statistic: str = "mean"):
    """Fit grid timings; one summary dict per ``(n, n0)`` pair."""
    kind = StatisticKind.parse(statistic)
    out = []
    for n in ns:
        for n0 in n0s:
            times, counts, ms = [], [], []
            for r in range(reps):
                data = generate(family, n, seed + r)
                _, report = fit(data.X, data.y, FitConfig(n0=n0, statistic=kind, seed=seed + r))
                times.append(report.wall_time)
                counts.append(report.repetition_count)
                ms.append(report.cluster_count)
            sd = (lambda v: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
            out.append({
                "n": n, "n0": n0,
                "time_mean_s": float(np.mean(times)), "time_sd_s": sd(times),
                "reps_mean": float(np.mean(counts)), "reps_sd": sd(counts), "reps_max": max(counts),
                "m_mean": float(np.mean(ms)), "runs": reps,
            })
            logger.info("bench n=%d n0=%d: %.2fs reps=%.1f", n, n0, out[-1]["time_mean_s"], out[-1]["reps_mean"])
    return out


def cmd_bench(args) -> int:
    out = _writable(args.out) if args.out else None
    rows = run_bench(args.n, args.n0, args.reps, args.seed, args.family, args.statistic)
    table = []
    for row in rows:
        table.append([row["n"], row["n0"], f"{row['time_mean_s']:.3f}", f"{row['time_sd_s']:.3f}",
                      f"{row['reps_mean']:.2f}", f"{row['reps_sd']:.2f}", row["reps_max"],
                      f"{row['m_mean']:.1f}", row["runs"]])
    text = _csv_text(BENCH_COLUMNS, table)
    if out is not None:
        _atomic_text(out, text)
    sys.stdout.write(text)
    return 0


def cmd_rates(args) -> int:
    out = _writable(args.out)
    series = bt.synthetic_rates(args.start, args.days, args.seed, volatility_pips=args.volatility,
                                momentum=args.momentum)
    tmp = out.with_name(out.name + ".tmp")
    try:
        bt.write_rates_csv(series, tmp)
        os.replace(tmp, out)
    finally:
        if tmp.exists():
            tmp.unlink()
    print(f"wrote {len(series)} quotes to {out}")
    return 0


SUMMARY_COLUMNS = ("alpha", "mode", "rounds", "dropped_rounds", "entries", "wins", "win_rate", "total_profit")


def cmd_backtest(args) -> int:
    series = bt.read_rates_csv(_existing(args.rates), pip_size=args.pip_size)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = bt.StrategyParams.from_json(_existing(args.strategy).read_text()) if args.strategy else bt.StrategyParams()
    overrides = {"mode": args.mode}
    if args.lag is not None:
        overrides["feature_lag"] = args.lag
    if args.n0 is not None:
        overrides["n0"] = args.n0
    if args.holidays:
        overrides["holidays"] = bt.load_holidays(_existing(args.holidays))
    params = bt.StrategyParams(**{**params.__dict__, **overrides})

    if args.split_at:
        split = bt.parse_timestamp(args.split_at)
    else:
        split = int(series.timestamps[0] + (series.timestamps[-1] - series.timestamps[0]) // 2)
    train = bt.build_rounds(series.between(None, split), params.feature_lag, params)
    evaluation = bt.build_rounds(series.between(split, None), params.feature_lag, params)
    print(f"train rounds={len(train)} (dropped {train.dropped}); "
          f"eval rounds={len(evaluation)} (dropped {evaluation.dropped})")
    models = bt.fit_strategy_models(train, params, seed=args.seed)

    ledgers = []
    summary = []
    for alpha in args.alpha:
        ledger = bt.run_backtest(evaluation, models, params.with_alpha(alpha))
        ledgers.append(ledger)
        bt.write_ledger_csv(ledger, out_dir / f"ledger_alpha_{alpha:g}.csv")
        wr = ledger.win_rate
        summary.append([f"{alpha:g}", params.mode, ledger.rounds, ledger.dropped_rounds, ledger.entry_count,
                        int(ledger.wins.sum()), "nan" if math.isnan(wr) else f"{wr:.4f}",
                        f"{ledger.total_profit:.2f}"])
    text = _csv_text(SUMMARY_COLUMNS, summary)
    _atomic_text(out_dir / "summary.csv", text)

    series_pts = [(f"alpha={lg.alpha:g}", np.arange(1, lg.entry_count + 1), lg.cumulative) for lg in ledgers]
    write_line_chart(out_dir / "cumulative_profit.svg", series_pts, title=f"{params.mode} cumulative profit",
                     xlabel="entry count", ylabel="cumulative profit")
    if args.plot:
        from .figures import cumulative_profit_figure

        cumulative_profit_figure(ledgers, out_dir / "cumulative_profit.png", title=f"{params.mode} cumulative profit")
    sys.stdout.write(text)
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="lfgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of flag defaults")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("generate", cmd_generate, "write a Cube or Roll dataset CSV")
    p.add_argument("--kind", choices=FAMILIES, default="cube")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("fit", cmd_fit, "fit a model to a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--statistic", default="mean", help="mean, median, variance, skew or percentile:q")
    p.add_argument("--n0", type=int, default=1000)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--max-outer-iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline", action="store_true", help="plain Euclidean clustering, fitted once")
    p.add_argument("--noise-free", action="store_true", help="omit estimator variances from the kernel diagonal")
    p.add_argument("--embedding", choices=METHODS, default="none")
    p.add_argument("--k", type=int, default=50, help="neighbours for LLE/Isomap")
    p.add_argument("--target-dim", type=int, default=2)
    p.add_argument("--grid", choices=FAMILIES, help="query grid embedded with the data")
    p.add_argument("--n-star", type=int, default=30)
    p.add_argument("--points", help="CSV of query points embedded with the data")
    p.add_argument("--model-out", required=True)
    p.add_argument("--report-out")

    p = add("predict", cmd_predict, "posterior mean and variance on query points")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", choices=FAMILIES)
    p.add_argument("--n-star", type=int, default=30)
    p.add_argument("--points", help="CSV with a header row; the first d columns are used")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true", help="also write .svg and .png next to --out")

    p = add("bench", cmd_bench, "time fits over an (n, n0) grid")
    p.add_argument("--n", type=_int_list, default=[100000])
    p.add_argument("--n0", type=_int_list, default=[1000])
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--family", choices=FAMILIES, default="cube")
    p.add_argument("--statistic", default="mean")
    p.add_argument("--out")

    p = add("rates", cmd_rates, "write a synthetic 30-second rate CSV")
    p.add_argument("--start", default="2019-09-02T00:00:00Z")
    p.add_argument("--days", type=float, default=14.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--volatility", type=float, default=1.5, help="sd of one 30 s move in pips")
    p.add_argument("--momentum", type=float, default=0.0, help="AR(1) coefficient of successive moves")
    p.add_argument("--out", required=True)

    p = add("backtest", cmd_backtest, "fit on the first window, replay the second")
    p.add_argument("--rates", required=True)
    p.add_argument("--mode", choices=bt.MODES, default="proposal")
    p.add_argument("--alpha", type=_float_list, default=[0.5, 0.3, 0.1])
    p.add_argument("--strategy", help="strategy JSON (schema lfgp-strategy/1)")
    p.add_argument("--holidays", help="file of excluded YYYY-MM-DD dates")
    p.add_argument("--split-at", help="ISO timestamp separating train and evaluation")
    p.add_argument("--lag", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--pip-size", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", action="store_true", help="also write a PNG")
    p.add_argument("--out-dir", required=True)
    return parser, subs


def _apply_config(parser, subs, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("-v", "--verbose", action="store_true")
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command in subs:
        path = _existing(known.config)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: expected a JSON object")
        sp = subs[known.command]
        known_dests = {a.dest for a in sp._actions} - {"help", "config", "func"}
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(doc) - known_dests)
        if unknown:
            raise UsageError(f"{path}: unknown keys {unknown} for '{known.command}'")
        for action in sp._actions:
            if action.dest in doc:
                action.required = False
        sp.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser, subs = build_parser()
    try:
        args = _apply_config(parser, subs, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"lfgp: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"lfgp: error: no such file: {exc.filename}", file=sys.stderr)
        return 2
    except (LfgpError, ValueError, OSError) as exc:
        print(f"lfgp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
