"""
How alignment and distance change the score
===========================================

Train one attention model, then slide the positive window earlier than it
was trained on and group records by epicentral distance.
"""

import math

from pwave_vae.experiments import (
    SynthParams,
    distance_analysis,
    make_synthetic_dataset,
    prepare_data,
    shift_sweep,
)
from pwave_vae.models import ModelConfig
from pwave_vae.trainer import TrainParams, train

# Far events arrive weaker here, so distance bins should order by AUC.
params = SynthParams(snr=(0.5, 6.0), snr_follows_distance=True, distance_km=(5.0, 250.0))
records = make_synthetic_dataset(100, seed=3, params=params)
data = prepare_data(records, axes=(0, 1, 2), seed=0)
model = train(ModelConfig("attention", 128, 2, 4, beta=1e-3), data.split, TrainParams(epochs=15, seed=0))
test = data.records_in("test")

# %%
series = shift_sweep(model, test, max_shift_s=4.5, step_ms=100)
for s, auc in list(zip(series.shifts_s, series.auc))[::5]:
    print("shift %5.1f s  AUC %.3f" % (s, auc))

# %%
for b in distance_analysis(model, test, [0, 40, 150, math.inf]):
    auc = "n/a" if b.auc is None else "%.3f" % b.auc
    print("%6.0f-%-6s km  n=%-3d AUC %s" % (b.lo_km, "inf" if math.isinf(b.hi_km) else "%.0f" % b.hi_km, b.n, auc))
