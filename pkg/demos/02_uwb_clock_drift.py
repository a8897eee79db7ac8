"""Why single-sided two-way ranging is biased, and how double-sided ranging fixes it.

Run with ``python3 demos/02_uwb_clock_drift.py``.
"""

# %% [markdown]
# In single-sided two-way ranging (SS-TWR) the initiator measures the round
# trip and the responder reports how long it held the packet. If the
# responder's clock runs fast by ``e`` (a fraction, e.g. 10 ppm = 1e-5), its
# reported reply time is off by ``e * t_reply`` and the range is off by
# ``c * e * t_reply / 2``. At 10 ppm and a 500 us reply that is 0.75 m.

# %%
import numpy as np

from lunaloc.uwb import SPEED_OF_LIGHT, ClockModel, ds_twr_range, exchange_timestamps, simulate_ping, ss_twr_range

d = 30.0
ideal = ClockModel()
print(" ppm   t_reply   SS error    c*e*t/2    DS error")
for ppm in (1.0, 10.0, 50.0):
    for t_reply in (200e-6, 500e-6, 1000e-6):
        x_ss = exchange_timestamps(d, ideal, ClockModel(ppm), t_reply=t_reply)
        x_ds = exchange_timestamps(d, ideal, ClockModel(ppm), t_reply=t_reply, t_reply2=900e-6)
        ss, ds = ss_twr_range(x_ss) - d, ds_twr_range(x_ds) - d
        analytic = SPEED_OF_LIGHT * ppm * 1e-6 * t_reply / 2
        print(f"{ppm:4.0f} {t_reply * 1e6:7.0f} us {ss:+9.4f} m {analytic:9.4f} m {ds:+10.2e} m")

# %% [markdown]
# Double-sided ranging (DS-TWR) adds a second round trip in the other direction
# and the reply-time terms cancel. With only the responder drifting, what is
# left is the drift acting on the flight time itself, ``e * d / 2``: 0.15 mm at
# 10 ppm over 30 m, whatever the reply time.
#
# When both clocks drift in opposite directions and the two replies differ,
# the leftover reply-time term is second order in the drift: halving the drift
# quarters the error.

# %%
def ds_error(ppm):
    x = exchange_timestamps(d, ClockModel(ppm), ClockModel(-ppm), t_reply=200e-6, t_reply2=900e-6)
    return abs(ds_twr_range(x) - d)


for ppm in (5.0, 10.0, 20.0, 40.0):
    print(f"{ppm:4.0f} ppm: DS error {ds_error(ppm):.3e} m, ratio to half the drift {ds_error(ppm) / ds_error(ppm / 2):.2f}")

# %% [markdown]
# The simulator draws noisy pings with dropouts. The spread matches the
# requested sigma; dropped pings return ``None``.

# %%
rng = np.random.default_rng(0)
pings = [simulate_ping(d, (ideal, ideal), 500e-6, 0.1, 0.05, rng) for _ in range(5000)]
got = np.array([p for p in pings if p is not None])
print(f"{len(got)} of {len(pings)} pings received, mean {got.mean():.3f} m, std {got.std():.3f} m")
