import numpy as np
import pytest

from lunaloc.uwb import (SPEED_OF_LIGHT as C, ClockModel, RangeNegative, TwrExchange, ds_twr_range,
                         exchange_timestamps, simulate_ping, ss_twr_bias, ss_twr_range)

IDEAL = ClockModel()


def test_ss_twr_inverts_definition():
    x = TwrExchange(t_round=500e-6 + 2 * 30.0 / C, t_reply=500e-6)
    assert ss_twr_range(x) == pytest.approx(30.0, abs=1e-6)
    assert ss_twr_range(exchange_timestamps(30.0, IDEAL, IDEAL)) == pytest.approx(30.0, abs=1e-6)


def test_ss_twr_zero_flight():
    assert ss_twr_range(TwrExchange(1e-3, 1e-3)) == 0.0


def test_ss_twr_negative_flight_raises():
    with pytest.raises(RangeNegative):
        ss_twr_range(TwrExchange(1e-3, 2e-3))


def test_ss_twr_bias_10ppm_500us():
    # responder clock runs fast by 10 ppm
    x = exchange_timestamps(30.0, IDEAL, ClockModel(10.0), t_reply=500e-6)
    bias = ss_twr_range(x) - 30.0
    analytic = C * 10e-6 * 500e-6 / 2
    assert analytic == pytest.approx(0.7495, abs=1e-4)
    assert abs(bias) == pytest.approx(analytic, rel=0.01)
    assert ss_twr_bias(IDEAL, ClockModel(10.0), 500e-6) == pytest.approx(bias, rel=0.01)


def test_ss_twr_bias_linear_in_reply_time():
    e = 10.0
    replies = np.linspace(0.1e-3, 1e-3, 10)
    bias = [ss_twr_range(exchange_timestamps(30.0, ClockModel(e), IDEAL, t_reply=tr)) - 30.0 for tr in replies]
    slope = np.polyfit(replies, bias, 1)[0]
    assert slope == pytest.approx(C * e * 1e-6 / 2, rel=0.02)


def test_ds_twr_no_drift_exact():
    x = exchange_timestamps(30.0, IDEAL, IDEAL, t_reply=500e-6, t_reply2=500e-6)
    assert ds_twr_range(x) == pytest.approx(30.0, abs=1e-6)


def test_ds_twr_cancels_drift():
    x = exchange_timestamps(30.0, IDEAL, ClockModel(10.0), t_reply=500e-6, t_reply2=500e-6)
    assert abs(ds_twr_range(x) - 30.0) < 1e-3


def test_ds_twr_error_second_order_in_drift():
    # asymmetric replies so the residual error is not identically zero
    def err(ppm):
        x = exchange_timestamps(30.0, ClockModel(ppm), ClockModel(-ppm), t_reply=200e-6, t_reply2=900e-6)
        return abs(ds_twr_range(x) - 30.0)

    for ppm in (40.0, 20.0, 10.0):
        assert err(ppm) / err(ppm / 2) >= 3.5


def test_ds_twr_degenerate_raises():
    with pytest.raises(ValueError):
        ds_twr_range(TwrExchange(0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        ds_twr_range(TwrExchange(1e-3, 5e-4))


def test_clock_model_validation():
    with pytest.raises(ValueError):
        ClockModel(100.0)
    with pytest.raises(ValueError):
        ClockModel(0.0, -1e-9)


def test_simulate_ping_dropout_and_exact():
    rng = np.random.default_rng(0)
    assert all(simulate_ping(10.0, (IDEAL, IDEAL), 500e-6, 0.1, 1.0, rng) is None for _ in range(100))
    z = simulate_ping(12.5, (IDEAL, IDEAL), 500e-6, 0.0, 0.0, rng)
    assert z == pytest.approx(12.5, abs=1e-6)


def test_simulate_ping_noise_std():
    rng = np.random.default_rng(1)
    z = np.array([simulate_ping(20.0, (IDEAL, IDEAL), 500e-6, 0.1, 0.0, rng) for _ in range(10_000)])
    assert z.std(ddof=1) == pytest.approx(0.1, rel=0.05)


def test_ranges_nonnegative_for_physical_exchanges():
    rng = np.random.default_rng(2)
    for _ in range(500):
        d = rng.uniform(0, 500)
        a, b = ClockModel(rng.uniform(-50, 50)), ClockModel(rng.uniform(-50, 50))
        tr = rng.uniform(1e-5, 1e-3)
        # consistent only while the drift bias does not exceed the distance itself
        if d > 1.01 * abs(ss_twr_bias(a, b, tr)):
            assert ss_twr_range(exchange_timestamps(d, a, b, tr)) >= 0.0
        x = exchange_timestamps(d, a, b, tr, rng.uniform(1e-5, 1e-3))
        assert ds_twr_range(x) >= 0.0
