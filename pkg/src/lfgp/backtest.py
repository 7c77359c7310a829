"""Offline binary-option backtest on 30-second rate moves.

Each eligible minute ``t`` becomes a round: the features are the ``d``
preceding 30-second rate differences, the target is the move from ``t``
to ``t + 30 s``, all in pips rounded to 0.1 pip.  Two LFGP models give
either the High/Low breakeven percentiles of the move (proposal) or the
High/Low frequencies (baseline); a stress level ``alpha`` shifts their
posteriors toward caution before the entry rule is applied.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm

from .errors import DataIntegrityError
from .estimators import MEAN, StatisticKind
from .gp import PosteriorPrediction
from .model import LfgpModel, predict_batch
from .trainer import FitConfig, fit

logger = logging.getLogger(__name__)

HORIZON_S = 30
ROUND_SPACING_S = 60
MAX_SAMPLE_GAP_S = 30
CONFIG_SCHEMA = "lfgp-strategy/1"
MODES = ("proposal", "baseline")

WIN_PROFIT = 0.95
LOSS_PROFIT = -1.0


def to_pips(delta, pip_size: float) -> np.ndarray:
    """Rate difference in pips, rounded to 0.1 pip."""
    return np.round(np.asarray(delta, dtype=float) / pip_size * 10.0) / 10.0


def _iso(ts: int) -> str:
    return dt.datetime.fromtimestamp(int(ts), tz=dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_timestamp(text: str) -> int:
    """ISO-8601 timestamp to integer UTC epoch seconds (naive stamps are read as UTC)."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    return int(stamp.timestamp())


@dataclass(frozen=True)
class RateSeries:
    timestamps: np.ndarray
    rates: np.ndarray
    instrument: str = "GBP_JPY"
    pip_size: float = 0.01

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64).ravel()
        rates = np.asarray(self.rates, dtype=float).ravel()
        if ts.size != rates.size:
            raise DataIntegrityError("timestamps and rates differ in length")
        bad = np.flatnonzero(np.diff(ts) <= 0)
        if bad.size:
            raise DataIntegrityError(
                f"timestamps must be strictly increasing; violation at {_iso(ts[bad[0] + 1])}"
            )
        nonpos = np.flatnonzero(~(rates > 0))
        if nonpos.size:
            raise DataIntegrityError(f"non-positive rate at {_iso(ts[nonpos[0]])}")
        if not self.pip_size > 0:
            raise ValueError("pip_size must be positive")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "rates", rates)

    def __len__(self):
        return self.timestamps.size

    def between(self, start: int | None = None, stop: int | None = None) -> "RateSeries":
        """Sub-series with ``start <= t < stop``."""
        mask = np.ones(len(self), dtype=bool)
        if start is not None:
            mask &= self.timestamps >= start
        if stop is not None:
            mask &= self.timestamps < stop
        return RateSeries(self.timestamps[mask], self.rates[mask], self.instrument, self.pip_size)


def synthetic_rates(
    start: str | int = "2019-09-02T00:00:00Z",
    days: float = 7.0,
    seed: int = 0,
    *,
    initial_rate: float = 140.0,
    volatility_pips: float = 1.5,
    momentum: float = 0.0,
    pip_size: float = 0.01,
    instrument: str = "GBP_JPY",
) -> RateSeries:
    """Seeded geometric random walk sampled every 30 s, quoted to 0.1 pip.

    ``volatility_pips`` is the standard deviation of one 30-second move
    near ``initial_rate``.  A non-zero ``momentum`` makes consecutive log
    returns AR(1) with that coefficient (same marginal volatility), which
    gives the strategy something to learn.
    """
    if not -1.0 < momentum < 1.0:
        raise ValueError("momentum must lie in (-1, 1)")
    t0 = parse_timestamp(start) if isinstance(start, str) else int(start)
    steps = int(days * 86400 // HORIZON_S) + 1
    rng = np.random.default_rng(seed)
    sigma = volatility_pips * pip_size / initial_rate
    shocks = rng.normal(0.0, sigma, steps - 1)
    if momentum:
        shocks *= math.sqrt(1.0 - momentum**2)
        shocks = lfilter([1.0], [1.0, -momentum], shocks)
    log_path = np.cumsum(np.r_[0.0, shocks - 0.5 * sigma**2])
    tick = pip_size / 10.0
    rates = np.round(initial_rate * np.exp(log_path) / tick) * tick
    return RateSeries(t0 + HORIZON_S * np.arange(steps, dtype=np.int64), rates, instrument, pip_size)


def read_rates_csv(path, instrument: str = "GBP_JPY", pip_size: float = 0.01) -> RateSeries:
    """Read a ``timestamp,rate`` CSV with ISO-8601 UTC timestamps."""
    ts, rates = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["timestamp", "rate"]:
            raise DataIntegrityError(f"{path}: expected header 'timestamp,rate', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ts.append(parse_timestamp(row[0]))
                rates.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise DataIntegrityError(f"{path}:{lineno}: malformed row {row!r}") from exc
    return RateSeries(np.array(ts, dtype=np.int64), np.array(rates), instrument, pip_size)


def write_rates_csv(series: RateSeries, path) -> None:
    tick_digits = max(0, -int(math.floor(math.log10(series.pip_size / 10.0))))
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,rate\n")
        for t, r in zip(series.timestamps, series.rates):
            fh.write(f"{_iso(t)},{r:.{tick_digits}f}\n")


def load_holidays(path) -> tuple[str, ...]:
    """Excluded session dates, one ``YYYY-MM-DD`` per line; ``#`` starts a comment."""
    days = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            days.append(dt.date.fromisoformat(line).isoformat())
    return tuple(sorted(set(days)))


@dataclass(frozen=True)
class StrategyParams:
    alpha: float = 0.5
    feature_lag: int = 10
    n0: int = 100
    epsilon: float = 1.0
    entry_threshold: float = 0.05
    payout: float = 1.95
    mode: str = "proposal"
    utc_offset_hours: float = 9.0
    session_start_hour: float = 8.0
    session_hours: float = 21.0
    holidays: tuple = ()
    horizon_s: int = HORIZON_S

    def __post_init__(self):
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError("alpha must lie in (0, 0.5]")
        if not self.payout > 1.0:
            raise ValueError("payout must exceed 1")
        if self.feature_lag < 1:
            raise ValueError("feature_lag must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.horizon_s != HORIZON_S:
            raise ValueError("the horizon is fixed at 30 seconds")
        object.__setattr__(self, "holidays", tuple(self.holidays))

    def with_alpha(self, alpha: float) -> "StrategyParams":
        return StrategyParams(**{**asdict(self), "alpha": alpha})

    @property
    def breakeven_win_rate(self) -> float:
        return 1.0 / self.payout

    @property
    def high_level(self) -> float:
        """Percentile level whose exceedance probability equals the breakeven win rate."""
        return (self.payout - 1.0) / self.payout

    @property
    def low_level(self) -> float:
        return 1.0 / self.payout

    def to_json(self) -> str:
        doc = {"schema": CONFIG_SCHEMA, **asdict(self)}
        doc["holidays"] = list(self.holidays)
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StrategyParams":
        doc = json.loads(text)
        if doc.pop("schema", None) != CONFIG_SCHEMA:
            raise ValueError(f"strategy config must declare schema {CONFIG_SCHEMA!r}")
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown strategy config keys: {sorted(unknown)}")
        return cls(**doc)


def session_mask(timestamps: np.ndarray, params: StrategyParams) -> np.ndarray:
    """True where a UTC timestamp falls inside a weekday trading session.

    Sessions open at ``session_start_hour`` local time Monday to Friday and
    last ``session_hours`` (8:00 to 29:00, i.e. 05:00 the next morning).
    A holiday removes the whole session that starts on that local date.
    """
    ts = np.asarray(timestamps, dtype=np.int64)
    local = ts + int(round(params.utc_offset_hours * 3600))
    since_open = local - int(round(params.session_start_hour * 3600))
    day = np.floor_divide(since_open, 86400)
    within = np.mod(since_open, 86400) < int(round(params.session_hours * 3600))
    weekday = np.mod(day + 3, 7)  # 1970-01-01 was a Thursday
    mask = within & (weekday < 5)
    if params.holidays:
        epoch = dt.date(1970, 1, 1)
        holiday_days = np.array([(dt.date.fromisoformat(h) - epoch).days for h in params.holidays])
        mask &= ~np.isin(day, holiday_days)
    return mask


@dataclass
class Rounds:
    """Feature/target pairs, one per eligible minute."""

    timestamps: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_times: np.ndarray
    target_times: np.ndarray
    dropped: int = 0

    def __len__(self):
        return self.y.size


def build_rounds(series: RateSeries, lag_d: int, params: StrategyParams | None = None) -> Rounds:
    """Turn a rate series into per-minute rounds inside the trading sessions.

    Rounds whose window ``[t - 30 d, t + 30]`` meets a sampling gap wider
    than 30 s, or leaves the series, are dropped and counted.
    """
    params = params or StrategyParams(feature_lag=lag_d)
    ts, rates = series.timestamps, series.rates
    empty = Rounds(np.empty(0, np.int64), np.empty((0, lag_d)), np.empty(0),
                   np.empty((0, lag_d + 1), np.int64), np.empty(0, np.int64))
    if ts.size < 2:
        logger.warning("rate series too short to form rounds")
        return empty

    first = -(-(ts[0] + HORIZON_S * lag_d) // ROUND_SPACING_S) * ROUND_SPACING_S
    candidates = np.arange(first, ts[-1] - HORIZON_S + 1, ROUND_SPACING_S, dtype=np.int64)
    candidates = candidates[session_mask(candidates, params)]
    if candidates.size == 0:
        logger.warning("no session minutes overlap the rate series")
        return empty

    gaps = np.flatnonzero(np.diff(ts) > MAX_SAMPLE_GAP_S)
    lo = candidates - HORIZON_S * lag_d
    hi = candidates + HORIZON_S
    crossing = np.searchsorted(ts[gaps], hi, side="left") - np.searchsorted(ts[gaps + 1], lo, side="right")
    keep = crossing <= 0
    dropped = int(np.count_nonzero(~keep))
    t = candidates[keep]

    # sample times t - 30d, ..., t - 30, t, then t + 30
    offsets = HORIZON_S * np.arange(-lag_d, 2, dtype=np.int64)
    when = t[:, None] + offsets[None, :]
    src = np.searchsorted(ts, when, side="right") - 1
    level = rates[src]
    X = to_pips(np.diff(level[:, :-1], axis=1), series.pip_size)
    y = to_pips(level[:, -1] - level[:, -2], series.pip_size)
    if dropped:
        logger.info("dropped %d rounds crossing data gaps", dropped)
    return Rounds(t, X, y, ts[src[:, :-1]], ts[src[:, -1]], dropped)


def fit_strategy_models(train: Rounds, params: StrategyParams, seed: int = 0, **fit_options):
    """Fit the High and Low models on training rounds.

    Proposal: the breakeven percentiles of the move (levels 95/195 and
    100/195 at payout 1.95).  Baseline: frequencies of moves beyond
    ``+threshold`` and below ``-threshold``.
    """
    if len(train) == 0:
        raise ValueError("no training rounds")
    if params.mode == "proposal":
        jobs = [(StatisticKind.percentile(params.high_level), train.y),
                (StatisticKind.percentile(params.low_level), train.y)]
    else:
        jobs = [(MEAN, (train.y > params.entry_threshold).astype(float)),
                (MEAN, (train.y < -params.entry_threshold).astype(float))]
    models = []
    for kind, target in jobs:
        config = FitConfig(n0=params.n0, epsilon=params.epsilon, statistic=kind, seed=seed, **fit_options)
        model, report = fit(train.X, target, config)
        logger.info("fitted %s model: m=%d reps=%d", kind.label, report.cluster_count, report.repetition_count)
        models.append(model)
    return tuple(models)


def stress_quantiles(pred_H: PosteriorPrediction, pred_L: PosteriorPrediction, alpha: float):
    """``alpha`` quantile of the High posterior and ``1 - alpha`` quantile of the Low posterior."""
    if not 0.0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    z = norm.ppf(alpha)
    f_H = np.asarray(pred_H.mean) + z * np.sqrt(np.asarray(pred_H.variance))
    f_L = np.asarray(pred_L.mean) - z * np.sqrt(np.asarray(pred_L.variance))
    if f_H.ndim == 0:
        return float(f_H), float(f_L)
    return f_H, f_L


@dataclass
class BacktestLedger:
    timestamps: np.ndarray
    sides: np.ndarray
    signals: np.ndarray
    realized_pips: np.ndarray
    wins: np.ndarray
    profits: np.ndarray
    cumulative: np.ndarray
    alpha: float = 0.5
    mode: str = "proposal"
    rounds: int = 0
    dropped_rounds: int = 0
    payout: float = 1.95

    @property
    def entry_count(self) -> int:
        return int(self.profits.size)

    @property
    def total_profit(self) -> float:
        return float(self.cumulative[-1]) if self.cumulative.size else 0.0

    @property
    def win_rate(self) -> float:
        return float(self.wins.mean()) if self.wins.size else float("nan")

    @property
    def breakeven_win_rate(self) -> float:
        return 1.0 / self.payout


def decide(f_high: np.ndarray, f_low: np.ndarray, params: StrategyParams) -> np.ndarray:
    """Side per round: ``'H'``, ``'L'`` or ``''`` (no entry).

    Proposal enters High when the stressed High percentile exceeds the
    threshold and Low when the stressed Low percentile is below minus the
    threshold.  Baseline enters when a stressed probability exceeds 0.5.
    When both fire, the larger absolute signal wins.
    """
    if params.mode == "proposal":
        high = f_high > params.entry_threshold
        low = f_low < -params.entry_threshold
    else:
        high = f_high > 0.5
        low = f_low > 0.5
    both = high & low
    prefer_high = np.abs(f_high) >= np.abs(f_low)
    sides = np.full(f_high.shape, "", dtype="<U1")
    sides[high & ~(both & ~prefer_high)] = "H"
    sides[low & ~(both & prefer_high)] = "L"
    return sides


def settle(sides: np.ndarray, realized_pips: np.ndarray, payout: float = 1.95):
    """Win flags and per-unit profits; a draw counts as a loss."""
    wins = ((sides == "H") & (realized_pips > 0)) | ((sides == "L") & (realized_pips < 0))
    profits = np.where(wins, payout - 1.0, -1.0)
    return wins, profits


def run_backtest(
    eval_series: RateSeries | Rounds,
    models: tuple[LfgpModel, LfgpModel],
    params: StrategyParams,
) -> BacktestLedger:
    """Replay the strategy minute by minute and account profit per unit stake."""
    model_H, model_L = models
    for model in models:
        if model.input_dim != params.feature_lag:
            raise ValueError(
                f"model expects {model.input_dim} lagged returns but feature_lag is {params.feature_lag}"
            )
    rounds = eval_series if isinstance(eval_series, Rounds) else build_rounds(eval_series, params.feature_lag, params)
    if len(rounds):
        late = np.flatnonzero(rounds.feature_times.max(axis=1) > rounds.timestamps)
        if late.size:
            raise DataIntegrityError(f"round at {_iso(rounds.timestamps[late[0]])} uses future quotes")
    pred_H = predict_batch(model_H, rounds.X)
    pred_L = predict_batch(model_L, rounds.X)
    if params.mode == "proposal":
        f_high, f_low = stress_quantiles(pred_H, pred_L, params.alpha)
    else:
        # both probabilities are shrunk toward their lower tail
        z = norm.ppf(params.alpha)
        f_high = np.asarray(pred_H.mean) + z * np.sqrt(np.asarray(pred_H.variance))
        f_low = np.asarray(pred_L.mean) + z * np.sqrt(np.asarray(pred_L.variance))
    f_high = np.atleast_1d(f_high)
    f_low = np.atleast_1d(f_low)
    sides = decide(f_high, f_low, params)
    entered = sides != ""
    signals = np.where(sides == "H", f_high, f_low)[entered]
    wins, profits = settle(sides[entered], rounds.y[entered], params.payout)
    return BacktestLedger(
        timestamps=rounds.timestamps[entered],
        sides=sides[entered],
        signals=signals,
        realized_pips=rounds.y[entered],
        wins=wins,
        profits=profits,
        cumulative=np.cumsum(profits),
        alpha=params.alpha,
        mode=params.mode,
        rounds=len(rounds),
        dropped_rounds=rounds.dropped,
        payout=params.payout,
    )


LEDGER_COLUMNS = ("timestamp", "side", "signal", "realized_pips", "outcome", "profit", "cumulative")


def write_ledger_csv(ledger: BacktestLedger, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LEDGER_COLUMNS)
            for i in range(ledger.entry_count):
                writer.writerow([
                    _iso(ledger.timestamps[i]),
                    "High" if ledger.sides[i] == "H" else "Low",
                    repr(float(ledger.signals[i])),
                    f"{ledger.realized_pips[i]:.1f}",
                    "win" if ledger.wins[i] else "loss",
                    f"{ledger.profits[i]:.2f}",
                    repr(float(ledger.cumulative[i])),
                ])
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
