# Pretreatment walk-through: difference, remove the daily profile, z-score,
# then rebuild the raw series from the residuals.

import numpy as np

from hdsrnn.pipeline import difference, fit_seasonal, inverse_transform, prepare, transform
from hdsrnn.synthdata import GeneratorConfig, default_wds_spec, generate_panel

spec = default_wds_spec()
panel = generate_panel(spec, GeneratorConfig(length=48 * 20, seed=0))
print(f"panel: {panel.n_sensors} sensors x {panel.length} half-hour steps")
print(f"splits: train [0, {panel.train_end}), val [{panel.train_end}, {panel.val_end}), test [{panel.val_end}, {panel.length})")

# the profile is fitted on the training split only
diff = difference(panel)
model = fit_seasonal(diff, period=48)
f8 = spec.index("F8")
print("\nF8 daily profile of the differenced series (every 6th slot):")
print(np.round(model.profile[f8, ::6], 3))

z = transform(panel, model)
train = z.split_values("train")
print(f"\nz-scored training residuals: mean {train.mean():+.2e}, std {train.std():.6f}")

# exact inverse: residual -> add profile -> integrate from the first raw value
back = inverse_transform(z, model, panel.values[:, 0])
print(f"round-trip max error: {np.max(np.abs(back - panel.values)):.2e}")

# how much of the variance the pretreatment removes
raw_var = panel.split_values("train")[f8].var()
diff_var = diff.split_values("train")[f8].var()
resid_var = (diff.split_values("train")[f8] - model.seasonal(diff.timestamps[: diff.train_end])[f8]).var()
print(f"\nF8 variance: raw {raw_var:.1f}, differenced {diff_var:.2f}, residual {resid_var:.2f}")

# windows for a model with T=12 inputs and a 4-step horizon
data = prepare(panel, T=12, tau=4, target="F8")
print(f"\nwindows: train {len(data.train)}, val {len(data.val)}, test {len(data.test)}")
print(f"X shape {data.train.X.shape}, Y shape {data.train.Y.shape}")

# truth on the original scale comes back exactly from true residuals
w = data.test
err = np.max(np.abs(data.reconstruct(w, w.Y) - data.raw_truth(w)))
print(f"reconstructing test targets from their residuals: max error {err:.2e}")
