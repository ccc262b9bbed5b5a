"""How the minimum subpopulation size ``alpha`` trades accuracy for parity.

Run with ``python3 demos/alpha_sweep.py``. Small alpha protects smaller
subpopulations; alpha = 1 recovers ordinary training.
"""

from drocox.data import SyntheticConfig, generate_synthetic, split_dataset
from drocox.dro import dro_constants
from drocox.harness import format_sweep, sweep_alpha
from drocox.train import TrainConfig

ds = generate_synthetic(SyntheticConfig(
    3000, (0.8, 0.2), ((1.0, 1.0, 0.0, 0.0), (-1.0, 0.5, 1.0, 0.0)), censoring_rate=0.5, seed=3))
train_ds, test_ds = split_dataset(ds, (0.8, 0.2), seed=7)

alphas = [0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 1.0]
for a in alphas:
    r_max, C = dro_constants(a)
    print(f"alpha={a:<5} radius={r_max:8.3f}  C={C:.3f}")

rows = sweep_alpha(train_ds, test_ds, alphas, TrainConfig(kind="dro", lr=0.01),
                   group_attr="latent_group", intersect_attrs=("latent_group",))
print(format_sweep(rows))
