#!/usr/bin/env python3
# Walk one user from a traffic scene to its best codebook beam.
# Run from the repository root: python3 demos/scene_to_beam.py

# In[1]:

import numpy as np

from beamtrack import (OracleConfig, PropagationConfig, beam_rates, build_channel,
                       build_codebook, default_layout, init_scene, step_scene, trace_paths)
from beamtrack.channel import OFDMConfig
from beamtrack.dataset import render_schematic
from beamtrack.scene import receiver_position

# In[2]:

# the default street grid with 85 movers and two base stations
layout = default_layout()
scene = init_scene(layout, {"car": 35, "truck": 5, "bus": 25, "human": 20}, rng_seed=0)
print(len(scene.objects), "objects,", len(layout.basestations), "base stations")

# In[3]:

# pick the first car and trace paths from each base station to its antenna
car = next(o for o in scene.objects if o.kind == "car")
rx = receiver_position(car, layout)
ofdm = OFDMConfig()
prop = PropagationConfig(max_delay=ofdm.max_delay)
for i, bs in enumerate(layout.basestations):
    paths = trace_paths(scene, bs, rx, receiver_id=car.id, cfg=prop)
    print(f"BS {i}:", [(p.kind, round(p.delay * 1e9, 1)) for p in paths] or "blocked")

# In[4]:

# channel per subcarrier, then the rate of every beam in a 128-beam codebook
bs = layout.basestations[0]
ch = build_channel(trace_paths(scene, bs, rx, car.id, prop), ofdm, bs)
cb = build_codebook(bs.num_antennas, 128)
rates = beam_rates(ch, cb, OracleConfig())
print("channel", ch.h.shape, "best beam", int(np.argmax(rates)) + 1,
      f"rate {rates.max():.3g} bit/s/Hz")

# In[5]:

# follow the car for two seconds; the label changes as it drives
for _ in range(20):
    scene = step_scene(scene, 0.1)
    car = next(o for o in scene.objects if o.id == car.id)
    rx = receiver_position(car, layout)
    ch = build_channel(trace_paths(scene, bs, rx, car.id, prop), ofdm, bs)
    print(scene.time_index, int(np.argmax(beam_rates(ch, cb, OracleConfig()))) + 1)

# In[6]:

# the top-view schematic that accompanies every scene
img = render_schematic(scene, 160, 90)
print("image", img.pixels.shape, "classes", np.unique(img.pixels))
