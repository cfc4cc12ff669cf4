"""
Adaptive beam-tracking interval in closed loop
==============================================

The controller warms up at a 20 ms interval, identifies the mobility class
from ten slope measurements, then stretches the interval to a pessimistic
time-to-outage estimate.  Halfway through, the user switches from video to
a racing game.  Run with ``python3 demos/tracker_loop.py``.
"""
from collections import Counter

from beamsense.channel import GainModel
from beamsense.profiles import APPS, table_profiles
from beamsense.tracker import IntervalSource, Population, TrackerConfig, simulate

profiles, model, config = table_profiles(), GainModel(), TrackerConfig()
reference = IntervalSource(profiles, model, config.max_interval, seed=(7, 0), batch=400)
population = Population({a: [reference.next(a) for _ in range(400)] for a in APPS}, config)

n = 400
source = IntervalSource(profiles, model, config.max_interval, seed=(7, 1))
result = simulate(config, population, source, lambda i: "video" if i < n // 2 else "racing", n)

for i, e in enumerate(result.log):
    if e.action != "maintain" or i in (0, n // 2):
        print(f"#{i:4d} t={e.t_ms / 1000:7.2f} s  {e.app:6s} {e.phase:6s} "
              f"{e.interval_ms:5.0f} ms  {e.action:15s} {e.detected_label}")
print("\nactions:", dict(Counter(e.action for e in result.log)))
print("outages in active phase:", result.outages)
