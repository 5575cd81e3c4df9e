"""One scripted straight-down slice through each default item.

Prints the peak force in the food and on the board, and writes the
co-simulation traces to slice_<item>.csv.
"""

import numpy as np

from cutlearn.harness import commands
from cutlearn.harness.config import resolve
from cutlearn.harness.io import write_csv
from cutlearn.rl.env import SliceEnv, encode_action, Item
from cutlearn.bridge import TRACE_COLUMNS
from cutlearn.cutsim import SimParams
from cutlearn.rl.train import phase_labels

cfg = resolve()
items = [
    Item(name, commands.food_spec(name, spec), SimParams.from_array(spec["truth"]))
    for name, spec in cfg["items"].items()
]
env_cfg = commands.env_config(cfg, items)
# full downward step with mid-range gains
action = encode_action([0.0, -1.6e-3, 800.0, 800.0, 4.0, 0.0], env_cfg)

env = SliceEnv(env_cfg, record=True)
rng = np.random.default_rng(0)
for item in items:
    env.reset(rng, item=item, noise=0.0)
    steps = 0
    while True:
        _, _, done, info = env.step(action)
        steps += 1
        if done:
            break
    arr = env.trace.as_array()
    labels = phase_labels(arr[:, 2], arr[:, 5:7])
    mag = np.hypot(arr[:, 5], arr[:, 6])
    food = mag[labels == "food"].max(initial=0.0)
    board = mag[labels == "board"].max(initial=0.0)
    print(f"{item.name:9s} {info.terminal:9s} {steps:3d} steps  food peak {food:6.2f} N  board peak {board:6.2f} N")
    write_csv(f"slice_{item.name}.csv", (*TRACE_COLUMNS, "phase"),
              [(*row, lab) for row, lab in zip(arr.tolist(), labels)])
