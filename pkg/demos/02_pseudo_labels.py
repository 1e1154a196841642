"""How well does the semi-supervised VAE guess the cell of a fingerprint?

Trains the M2 model twice on the same labeled bundles, once with the
unlabeled ones and once without, and compares held-out accuracy. Takes
about a minute.
"""
import numpy as np

from ssdrl.agent import TrainConfig, pretrain_vae
from ssdrl.environment import GridWorld, generate_dataset
from ssdrl.features import FeatureConfig, featurize_array
from ssdrl.nn_core import make_rng
from ssdrl.vae import classify

world = GridWorld()
fc = FeatureConfig()
data = generate_dataset(world, 2, 1000, make_rng(0))
test = generate_dataset(world, 2, 0, make_rng(1))

x_test = featurize_array(fc, np.array([s.readings for s in test])).mean(axis=1)
y_test = np.array([world.cell_index(s.label) for s in test])

cfg = TrainConfig(mode="semi_supervised")
for name, samples in [("labeled only", [s for s in data if s.labeled]), ("with unlabeled", data)]:
    vae, history = pretrain_vae(samples, world, fc, cfg, make_rng(2))
    pred = np.argmax(classify(vae, x_test), axis=1)
    exact = np.mean(pred == y_test)
    # near misses still give the agent a useful goal
    err = [world.cell_distance(world.index_cell(p), world.index_cell(t)) for p, t in zip(pred, y_test)]
    print(f"{name:>15}: exact cell {exact:.2f}, mean error {np.mean(err):.2f} m, final J {history[-1].total:.0f}")
