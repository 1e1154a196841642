"""Walk through the localisation world: beacons, readings, moves and rewards."""
import numpy as np

from ssdrl.environment import ACTIONS, GridWorld, apply_action, generate_dataset, reward, synth_rssi
from ssdrl.features import FeatureConfig, featurize
from ssdrl.nn_core import make_rng

world = GridWorld()  # 8 x 8 cells of 3.048 m, 13 beacons
print(f"floor {world.width:.1f} x {world.height:.1f} m, {world.n_cells} cells, {world.n_beacons} beacons")

# noiseless readings fall off with log distance; far beacons go silent (-200)
for cell in [(0, 0), (3, 4), (7, 7)]:
    r = synth_rssi(world, world.cell_center(cell), noise=False)
    print(cell, np.round(r, 1))

# the same spot with shadowing noise, three scans per bundle
rng = make_rng(0)
bundle = np.array([synth_rssi(world, world.cell_center((3, 4)), rng) for _ in range(3)])
print("noisy bundle spread (dB):", np.round(bundle.std(axis=0).mean(), 2))

# features: 13 scaled readings + a 12-way range one-hot per beacon
fv = featurize(FeatureConfig(), bundle[0])
print("feature length", len(fv), "| beacon 0 bucket", int(np.argmax(fv.block("s2-beacon-0"))))

# eight moves, clamped at the walls
for i, (name, _, _) in enumerate(ACTIONS):
    print(f"{name:>2} from (0, 0) -> {apply_action(world, (0, 0), i)}")

# reward: capped bonus on the goal, 1/d inside delta, -d beyond it
goal = (4, 4)
for cell in [(4, 4), (4, 5), (5, 5), (4, 7), (0, 0)]:
    d = world.cell_distance(cell, goal)
    print(f"at {cell}: distance {d:5.2f} m  reward {reward(world, cell, goal):7.3f}")

# a desk-scale dataset: 2 labeled bundles per cell, 1000 unlabeled
data = generate_dataset(world, 2, 1000, make_rng(1))
print(len(data), "bundles,", sum(s.labeled for s in data), "labeled")
