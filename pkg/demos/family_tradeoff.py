"""
Reconstruction fidelity against detection
=========================================

Train the four model families briefly on the same data and compare how
well they reconstruct P windows with how well their NCC score separates P
windows from noise. Takes a few minutes on a CPU; raise EPOCHS for
steadier numbers.
"""

from pwave_vae.experiments import evaluate, make_synthetic_dataset, prepare_data
from pwave_vae.models import FAMILIES, ModelConfig
from pwave_vae.trainer import TrainParams, train

EPOCHS = 20

records = make_synthetic_dataset(80, seed=7)
data = prepare_data(records, axes=(0, 1, 2), seed=0)
print("train %d / eval %d P windows, test %d windows"
      % (len(data.split.train), len(data.split.eval), len(data.split.test)))

# %%
# Same latent size for every family so only the wiring differs.
rows = []
for family in FAMILIES:
    cfg = ModelConfig(family, latent_dim=128, attn_depth=2, attn_heads=4, beta=1e-3)
    model = train(cfg, data.split, TrainParams(epochs=EPOCHS, seed=0))
    res = evaluate(model, data.split.test)
    rows.append((family, res["auc"], res["mae"], res["ncc_p"] - res["ncc_noise"]))

print("%-10s %8s %8s %8s" % ("family", "AUC", "MAE", "NCC gap"))
for family, auc, mae, gap in rows:
    print("%-10s %8.4f %8.4f %8.4f" % (family, auc, mae, gap))

# %%
# Skip connections hand the decoder full-resolution encoder features, so it
# copies noise windows about as well as P windows. Look for the smallest MAE
# together with the smallest NCC gap in the skip row.
