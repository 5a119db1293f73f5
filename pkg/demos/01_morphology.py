"""
Cleaning a noisy detection mask
===============================

A thresholded heatmap rarely gives a clean object.  It gives the object,
ragged, plus a sprinkling of false alarms.  This walk-through builds such a
mask by hand and cleans it with the two post-processing pipelines.
"""
import numpy as np

from vitsplice import morphology as mo


def show(m, title):
    print(title)
    for row in m:
        print("".join("#" if v else "." for v in row))
    print()


rng = np.random.default_rng(0)

# one 14x14 object with a bite taken out and a couple of holes
mask = np.zeros((28, 40), bool)
mask[6:20, 14:28] = True
mask[6:9, 14:18] = False
mask[11, 19] = mask[15, 23] = False
# speckle elsewhere
speckle = rng.random(mask.shape) < 0.03
speckle[4:22, 12:30] = False
mask |= speckle
show(mask, "raw mask")

# The workhorse is ErodeIsolated(a, b): a pixel survives only if some other
# foreground pixel sits on the square ring a < distance <= b around it.
ring = mo.make_erode_isolated_element(1, 2)
show(ring.grid, "ring element for a=1, b=2 (16 cells)")

single = mo.erode_isolated(mask, 1, 2)
show(single, "after one ErodeIsolated(1, 2)")

# V1: 2x2 opening, 2x2 closing, hole filling
show(mo.postprocess_v1(mask), "V1")

# V2: 3x3 closing, hole filling, then the ErodeIsolated schedule until nothing changes
v2, passes = mo.postprocess_v2(mask)
show(v2, f"V2 ({passes} passes)")

labels, stats = mo.connected_components(v2)
for s in stats:
    print(f"component {s.label}: area {s.area}, bbox {s.bbox}, max side {s.max_side}")
