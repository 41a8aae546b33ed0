# Train the hybrid model on the synthetic network and compare it with the
# reference forecasters on the same test windows.

import time

from hdsrnn.baselines import KINDS, BaselineSpec, run_baseline
from hdsrnn.model import ModelConfig
from hdsrnn.pipeline import prepare
from hdsrnn.synthdata import GeneratorConfig, default_wds_spec, generate_panel
from hdsrnn.training import TrainConfig, fit

spec = default_wds_spec()
panel = generate_panel(spec, GeneratorConfig(length=48 * 30, seed=1))
T, tau = 12, 2
data = prepare(panel, T, tau, target="F8")

mc = ModelConfig(n_sensors=spec.n, encoder_length=T, decoder_length=tau, hidden_dim=16, dropout=0.0,
                 target_sensor=spec.index("F8"), spatial_variant="hybrid")
tc = TrainConfig(max_epochs=30, patience=8, learning_rate=0.005, rng_seed=0)

start = time.perf_counter()
report, model = fit(mc, tc, data, deterministic=True)
print(f"hybrid: {report.epochs_run} epochs, best epoch {report.best_epoch}, {time.perf_counter() - start:.0f}s")

rows = [("hybrid", report.test_metrics)]
for kind in KINDS:
    bs = BaselineSpec(kind, hidden=(32, 32), model_config=mc, train_config=tc)
    res = run_baseline(bs, data, T, tau, deterministic=True)
    rows.append((kind, res.test_metrics))

# residual scale is what the networks predict; reconstructed is the raw flow
print(f"\n{'model':<16}{'res MSE':>10}{'res MAE':>10}{'raw MSE':>10}{'raw MAE':>10}")
for name, m in rows:
    r, c = m["residual"], m["reconstructed"]
    print(f"{name:<16}{r['mse']:>10.3f}{r['mae']:>10.3f}{c['mse']:>10.3f}{c['mae']:>10.3f}")
