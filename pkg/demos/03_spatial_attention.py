# Which sensors does the hybrid spatial attention look at?
# F4 is one short pipe from the target F8 and drives it; F6 lies outside
# every coupling radius and carries only its own noise.

import numpy as np

from hdsrnn.evaluation import export_spatial_weights
from hdsrnn.model import ModelConfig
from hdsrnn.pipeline import prepare
from hdsrnn.synthdata import GeneratorConfig, default_wds_spec, generate_panel
from hdsrnn.training import TrainConfig, fit

spec = default_wds_spec()
target = spec.index("F8")
print("coupling into F8:", {s: round(float(spec.coupling[target, spec.index(s)]), 3) for s in ("F4", "F3", "F5", "F6")})

panel = generate_panel(spec, GeneratorConfig(length=48 * 40, seed=0))
data = prepare(panel, 10, 1, target)
mc = ModelConfig(n_sensors=spec.n, encoder_length=10, decoder_length=1, hidden_dim=16, dropout=0.0,
                 target_sensor=target, spatial_variant="hybrid")
_, model = fit(mc, TrainConfig(max_epochs=40, patience=15, learning_rate=0.005, rng_seed=0), data,
               deterministic=True)

summary = export_spatial_weights(model, data, spec, path="fig4_attention_weights.csv")
order = np.argsort(-summary.mean_weights)
print(f"\n{'sensor':<8}{'weight x n':>12}{'distance':>10}")
for k in order:
    print(f"{summary.sensor_ids[k]:<8}{summary.mean_weights[k] * spec.n:>12.3f}{summary.distances[k]:>10.2f}")
print(f"\nF4 / F6 weight ratio: {summary.weight('F4') / summary.weight('F6'):.3f}")
print("wrote fig4_attention_weights.csv")
