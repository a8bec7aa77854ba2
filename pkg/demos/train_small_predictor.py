#!/usr/bin/env python3
# Generate a small dataset, train the GRU predictor and score it.
# Takes about a minute.  Run from the repository root.

# In[1]:

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from beamtrack import Config, ModelConfig, TrainConfig, evaluate, predict, train
from beamtrack.dataset import generate_dataset, load_split

# In[2]:

# one short episode keeps this quick
cfg = Config()
cfg = replace(cfg, dataset=replace(cfg.dataset, episodes=1, scenes=120, write_images=False))
out = Path(tempfile.mkdtemp())
manifest = generate_dataset(cfg, out)
print({k: v["counts"] for k, v in manifest["splits"].items()})

# In[3]:

# train the two-layer model for the next beam, then the next three
for n in (1, 3):
    tr, va = load_split(out / f"N{n}", "train"), load_split(out / f"N{n}", "val")
    model, history = train(tr, va, ModelConfig(N=n), TrainConfig(epochs=15, batch_size=256,
                                                                 learning_rate=3e-3))
    report = evaluate(predict(va.beams, model), va.future)
    print(f"N={n}: top-1 {report.top1:.3f}, score {report.score:.3f}")

# In[4]:

# the repeat-last-beam baseline for comparison; on this little data it is hard to beat
guess = np.repeat(va.beams[:, -1:], va.future.shape[1], axis=1)
print("repeat last beam:", evaluate(guess, va.future))
