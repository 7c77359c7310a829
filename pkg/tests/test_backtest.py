import math

import numpy as np
import pytest
from scipy.stats import norm

from lfgp import backtest as bt
from lfgp.errors import DataIntegrityError
from lfgp.estimators import MEAN
from lfgp.gp import PosteriorPrediction, RbfHyperparams
from lfgp.model import LfgpModel

MONDAY_10_JST = bt.parse_timestamp("2019-09-02T01:00:00Z")


def series_from_increments(increments_pips, start=MONDAY_10_JST, base=140.0, pip=0.01):
    rates = base + pip * np.cumsum(np.r_[0.0, increments_pips])
    return bt.RateSeries(start + 30 * np.arange(rates.size), rates, pip_size=pip)


def step_models():
    """High model fires for a +1 pip lag, Low model for a -1 pip lag."""
    Z = np.array([[-1.0], [0.0], [1.0]])
    params = RbfHyperparams(1.0, [0.2])
    high = LfgpModel(params, Z, np.array([-1.0, -1.0, 1.0]), 1e-10, MEAN)
    low = LfgpModel(params, Z, np.array([-1.0, 1.0, 1.0]), 1e-10, MEAN)
    return high, low


def ten_minute_fixture():
    inc = np.zeros(20)
    inc[5], inc[6] = 1.0, 0.5     # minute 3: lag +1 pip, then +0.5 pip -> High wins
    inc[13], inc[14] = -1.0, 0.3  # minute 7: lag -1 pip, then +0.3 pip -> Low loses
    return series_from_increments(inc)


class TestRounds:
    def test_constant_series(self):
        rounds = bt.build_rounds(series_from_increments(np.zeros(200)), 3)
        assert len(rounds) > 0
        assert np.all(rounds.X == 0) and np.all(rounds.y == 0)

    def test_rising_series(self):
        rounds = bt.build_rounds(series_from_increments(np.full(200, 0.1)), 3)
        assert np.all(rounds.X == 0.1) and np.all(rounds.y == 0.1)

    def test_round_spacing_and_causality(self):
        rounds = bt.build_rounds(series_from_increments(np.zeros(400)), 5)
        assert np.all(np.diff(rounds.timestamps) == 60)
        assert np.all(rounds.feature_times.max(axis=1) <= rounds.timestamps)
        assert np.all(rounds.feature_times.min(axis=1) == rounds.timestamps - 150)
        assert np.all(rounds.target_times == rounds.timestamps + 30)

    def test_gap_rounds_dropped(self):
        s = series_from_increments(np.zeros(400))
        keep = np.ones(len(s), dtype=bool)
        keep[100:104] = False
        gapped = bt.RateSeries(s.timestamps[keep], s.rates[keep])
        full = bt.build_rounds(s, 3)
        rounds = bt.build_rounds(gapped, 3)
        assert rounds.dropped > 0
        assert len(rounds) + rounds.dropped == len(full)

    def test_no_session_overlap_is_empty(self, caplog):
        saturday_noon = bt.parse_timestamp("2019-09-07T03:00:00Z")  # 12:00 JST Saturday
        rounds = bt.build_rounds(series_from_increments(np.zeros(100), start=saturday_noon), 3)
        assert len(rounds) == 0
        assert "no session" in caplog.text

    def test_pip_rounding(self):
        assert bt.to_pips(0.00123, 0.01).item() == 0.1
        assert bt.to_pips(-0.0151, 0.01).item() == -1.5


class TestSession:
    @pytest.mark.parametrize("stamp,inside", [
        ("2019-09-01T23:00:00Z", True),    # Mon 08:00 JST opens
        ("2019-09-01T22:59:00Z", False),   # Mon 07:59 JST
        ("2019-09-02T19:59:00Z", True),    # Tue 04:59 JST, still Monday's session
        ("2019-09-02T20:00:00Z", False),   # Tue 05:00 JST closes
        ("2019-09-06T19:00:00Z", True),    # Sat 04:00 JST, Friday's session
        ("2019-09-07T03:00:00Z", False),   # Sat 12:00 JST
        ("2019-09-01T18:00:00Z", False),   # Mon 03:00 JST belongs to Sunday
    ])
    def test_calendar(self, stamp, inside):
        assert bt.session_mask(np.array([bt.parse_timestamp(stamp)]), bt.StrategyParams())[0] == inside

    def test_holiday(self):
        t = np.array([bt.parse_timestamp("2019-09-02T01:00:00Z")])
        assert bt.session_mask(t, bt.StrategyParams(holidays=("2019-09-02",)))[0] == False  # noqa: E712

    def test_holiday_file(self, tmp_path):
        path = tmp_path / "h.txt"
        path.write_text("# list\n2019-12-31\n2019-01-01  # new year\n")
        assert bt.load_holidays(path) == ("2019-01-01", "2019-12-31")


class TestStress:
    def test_half_is_mean(self):
        p = PosteriorPrediction(0.3, 4.0)
        assert bt.stress_quantiles(p, PosteriorPrediction(-0.2, 1.0), 0.5) == (pytest.approx(0.3), pytest.approx(-0.2))

    def test_one_sigma(self):
        f_h, f_l = bt.stress_quantiles(PosteriorPrediction(2.0, 1.0), PosteriorPrediction(-1.0, 1.0), norm.cdf(-1.0))
        assert f_h == pytest.approx(1.0, abs=1e-6)
        assert f_l == pytest.approx(0.0, abs=1e-6)

    def test_zero_variance(self):
        for alpha in (0.01, 0.2, 0.5):
            assert bt.stress_quantiles(PosteriorPrediction(0.7, 0.0), PosteriorPrediction(0.0, 0.0), alpha)[0] == 0.7

    def test_tiny_alpha_kills_high(self):
        f_h, _ = bt.stress_quantiles(PosteriorPrediction(5.0, 1.0), PosteriorPrediction(0.0, 1.0), 1e-300)
        assert f_h < -30

    @pytest.mark.parametrize("alpha", [0.0, 0.6, -0.1])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            bt.stress_quantiles(PosteriorPrediction(0, 1), PosteriorPrediction(0, 1), alpha)


class TestDecisions:
    def test_tie_goes_to_larger_signal(self):
        params = bt.StrategyParams()
        sides = bt.decide(np.array([0.3, 0.1, 0.2]), np.array([-0.1, -0.4, -0.2]), params)
        assert sides.tolist() == ["H", "L", "H"]

    def test_baseline_threshold(self):
        params = bt.StrategyParams(mode="baseline")
        sides = bt.decide(np.array([0.6, 0.4, 0.2]), np.array([0.1, 0.45, 0.7]), params)
        assert sides.tolist() == ["H", "", "L"]

    def test_draw_is_loss(self):
        wins, profits = bt.settle(np.array(["H", "L", "H", "L"]), np.array([0.0, 0.0, 0.1, -0.1]))
        assert wins.tolist() == [False, False, True, True]
        assert profits.tolist() == [-1.0, -1.0, 0.95, 0.95]

    def test_breakeven(self):
        params = bt.StrategyParams()
        assert params.breakeven_win_rate == pytest.approx(0.5128205128, abs=1e-10)
        assert params.high_level == pytest.approx(95 / 195) and params.low_level == pytest.approx(100 / 195)
        # expected profit at the breakeven rate is zero
        p = params.breakeven_win_rate
        assert p * 0.95 - (1 - p) == pytest.approx(0.0, abs=1e-15)


class TestFixture:
    def test_hand_built_ledger(self):
        params = bt.StrategyParams(feature_lag=1, alpha=0.5)
        ledger = bt.run_backtest(ten_minute_fixture(), step_models(), params)
        assert ledger.rounds == 9
        assert ledger.sides.tolist() == ["H", "L"]
        assert bt._iso(ledger.timestamps[0]) == "2019-09-02T01:03:00Z"
        assert ledger.realized_pips.tolist() == [0.5, 0.3]
        assert ledger.profits.tolist() == [0.95, -1.0]
        assert ledger.cumulative[-1] == pytest.approx(-0.05, abs=1e-15)

    def test_ledger_csv(self, tmp_path):
        ledger = bt.run_backtest(ten_minute_fixture(), step_models(), bt.StrategyParams(feature_lag=1))
        path = tmp_path / "ledger.csv"
        bt.write_ledger_csv(ledger, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(bt.LEDGER_COLUMNS)
        assert lines[1].split(",")[1:2] == ["High"] and lines[2].split(",")[4:6] == ["loss", "-1.00"]

    def test_lag_mismatch(self):
        with pytest.raises(ValueError, match="lagged"):
            bt.run_backtest(ten_minute_fixture(), step_models(), bt.StrategyParams(feature_lag=2))

    def test_future_feature_rejected(self):
        rounds = bt.build_rounds(ten_minute_fixture(), 1, bt.StrategyParams(feature_lag=1))
        rounds.feature_times[4, -1] = rounds.timestamps[4] + 30
        with pytest.raises(DataIntegrityError, match="2019-09-02T01:05:00Z"):
            bt.run_backtest(rounds, step_models(), bt.StrategyParams(feature_lag=1))


@pytest.fixture(scope="module")
def synthetic_setup():
    params = bt.StrategyParams(feature_lag=3, n0=200)
    series = bt.synthetic_rates(days=21, seed=3)
    split = int(series.timestamps[0] + 14 * 86400)
    train = bt.build_rounds(series.between(None, split), 3, params)
    evaluation = bt.build_rounds(series.between(split, None), 3, params)
    return params, train, evaluation, bt.fit_strategy_models(train, params, seed=0)


class TestStrategy:
    def test_symmetric_percentiles(self, synthetic_setup):
        params, train, _, (high, low) = synthetic_setup
        grid = np.array([[a, b, c] for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)], dtype=float)
        f_h = bt.predict_batch(high, grid).mean
        f_l = bt.predict_batch(low, grid).mean
        # zero drift: f_H and f_L mirror each other up to sampling noise
        assert np.mean(np.abs(f_h + f_l)) < 0.1
        assert np.all(f_h <= f_l + 0.05)

    def test_baseline_probabilities(self, synthetic_setup):
        params, train, _, _ = synthetic_setup
        base = bt.StrategyParams(**{**params.__dict__, "mode": "baseline"})
        high, low = bt.fit_strategy_models(train, base, seed=0)
        half = np.mean(np.abs(train.y) > 0.05) / 2
        grid = train.X[:500]
        assert np.mean(bt.predict_batch(high, grid).mean) == pytest.approx(half, abs=0.05)
        assert np.mean(bt.predict_batch(low, grid).mean) == pytest.approx(half, abs=0.05)

    def test_alpha_monotone(self, synthetic_setup):
        params, _, evaluation, models = synthetic_setup
        counts = [bt.run_backtest(evaluation, models, params.with_alpha(a)).entry_count
                  for a in (0.5, 0.4, 0.3, 0.2, 0.1, 0.01)]
        assert all(b <= a for a, b in zip(counts, counts[1:]))

    def test_ledger_arithmetic(self, synthetic_setup):
        params, _, evaluation, models = synthetic_setup
        ledger = bt.run_backtest(evaluation, models, params)
        assert set(np.unique(ledger.profits)) <= {0.95, -1.0}
        assert np.array_equal(ledger.cumulative, np.cumsum(ledger.profits))

    def test_deterministic(self, synthetic_setup):
        params, train, evaluation, models = synthetic_setup
        again = bt.fit_strategy_models(train, params, seed=0)
        a = bt.run_backtest(evaluation, models, params)
        b = bt.run_backtest(evaluation, again, params)
        assert np.array_equal(a.timestamps, b.timestamps) and np.array_equal(a.signals, b.signals)


class TestIo:
    def test_rates_round_trip(self, tmp_path):
        s = bt.synthetic_rates(days=0.1, seed=1)
        path = tmp_path / "r.csv"
        bt.write_rates_csv(s, path)
        back = bt.read_rates_csv(path)
        assert np.array_equal(back.timestamps, s.timestamps)
        np.testing.assert_allclose(back.rates, s.rates, rtol=0, atol=1e-9)

    def test_unordered_timestamps(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("timestamp,rate\n2019-09-02T00:00:30Z,140.0\n2019-09-02T00:00:00Z,140.1\n")
        with pytest.raises(DataIntegrityError, match="2019-09-02T00:00:00Z"):
            bt.read_rates_csv(path)

    def test_nonpositive_rate(self):
        with pytest.raises(DataIntegrityError):
            bt.RateSeries(np.array([0, 30]), np.array([1.0, 0.0]))

    def test_strategy_json(self):
        params = bt.StrategyParams(alpha=0.2, holidays=("2020-01-01",), mode="baseline")
        assert bt.StrategyParams.from_json(params.to_json()) == params
        with pytest.raises(ValueError, match="unknown"):
            bt.StrategyParams.from_json('{"schema": "lfgp-strategy/1", "speed": 3}')
        with pytest.raises(ValueError, match="schema"):
            bt.StrategyParams.from_json('{"alpha": 0.2}')

    @pytest.mark.parametrize("kwargs", [{"alpha": 0.0}, {"alpha": 0.7}, {"payout": 1.0}, {"mode": "x"}, {"feature_lag": 0}])
    def test_params_validated(self, kwargs):
        with pytest.raises(ValueError):
            bt.StrategyParams(**kwargs)


def test_year_round_count_and_causality():
    series = bt.synthetic_rates(start="2019-01-07T00:00:00Z", days=364, seed=0)
    rounds = bt.build_rounds(series, 10)
    assert 2.8e5 < len(rounds) < 3.45e5
    assert math.isclose(len(rounds), 313_794, rel_tol=0.1)
    assert np.all(rounds.feature_times < rounds.target_times[:, None])
    assert np.all(rounds.feature_times.max(axis=1) <= rounds.timestamps)
