"""
How quickly does the link degrade after a beam realignment?
===========================================================

Each application profile drives a drift walk of the beam centre.  The
channel turns the angular offset into received power, and the time for the
smoothed power to drop 3 dB or 10 dB below its starting value is the
fall time.  Run with ``python3 demos/fall_times.py``.
"""
import numpy as np

from beamsense.channel import GainModel, power_corpus
from beamsense.features import ensemble_stats, fall_time_summary
from beamsense.mobility import synth_corpus
from beamsense.profiles import APPS, table_profiles

profiles = table_profiles()
model = GainModel()
print(f"half-power beamwidth {model.hpbw:.3f} deg, p0 {model.p0} dB")

traces, labels = [], []
for i, app in enumerate(APPS):
    beams = synth_corpus(profiles[app], 100, 6000, 1.0, seed=(42, i))
    traces += power_corpus(beams, model, seed=(42, i, 1))
    labels += [app] * len(beams)

summary = fall_time_summary(traces, [3, 10], labels=labels)
for th in (3, 10):
    print(f"\n{th} dB drop")
    for app in APPS:
        row = summary.row(app, th)
        mean = "N/A" if row.mean is None else f"{row.mean:7.1f}"
        print(f"  {app:7s} crossed {row.crossing_fraction:4.0%}  mean {mean} ms  "
              f"q0.95 survival {row.survival_quantile(0.95)}")

# ensemble mean power, the slow decay of the average hides fast individual drops
grid = [0, 500, 2000, 6000]
print("\nensemble mean power (dB) at", grid, "ms")
for app in APPS:
    group = [t for t, lab in zip(traces, labels) if lab == app]
    mean, _ = ensemble_stats(group, grid)
    print(f"  {app:7s}", np.round(mean, 2))
