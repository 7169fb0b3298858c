"""
Loss and derivative-order ablation
==================================

Same data, same seed, one model per (order, loss) cell. The table is
written as CSV to stdout.
"""
from tdm_rppg.synth import SynthSubjectSpec, generate_cohort
from tdm_rppg.train import TrainConfig, ablate, table_to_csv

tmpl = SynthSubjectSpec("t", modulation_depth=0.01, noise_sigma=0.02, skin_mask=0.6, pulse_rgb=(0.4, 1.0, 0.6))
train_set = generate_cohort(5, 2, tmpl, n_frames=512, height=8, width=8, seed=1, offsets=[-6, -3, 0, 2, 5])
test_set = generate_cohort(5, 1, tmpl, n_frames=512, height=8, width=8, seed=2, offsets=[-6, -3, 0, 2, 5])

rows = ablate(train_set, test_set, TrainConfig(loss="talos", epochs=30, batch_size=4, sgd_lr=10.0),
              orders=[0, 2], losses=["mse", "mcc", "talos"])
print(table_to_csv(rows))
