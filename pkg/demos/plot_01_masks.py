"""
Label masks, one-hot grids and the 256x256 frame
=================================================

Masks carry integer labels in a fixed class order together with the pixel
spacing in mm. The autoencoder sees them as one-hot grids on a fixed canvas.
"""
import numpy as np

from segqc import CARDIAC_CLASSES, LabelMask, center_fit, decode_argmax, encode_one_hot
from segqc.synth import synth_generate

print("class order:", CARDIAC_CLASSES.names)

# a synthetic short-axis slice: LV disk, myocardial ring, RV crescent
mask = synth_generate(1, size=96, seed=3, spacing=(1.4, 1.4))[0]
print("labels present:", np.unique(mask.labels), "spacing:", mask.spacing)

# one channel per class; every pixel sums to one
grid = encode_one_hot(mask)
print("one-hot grid:", grid.shape, "per-pixel sums all 1:", bool(np.all(grid.sum(axis=0) == 1)))

# argmax decoding undoes the encoding exactly
assert decode_argmax(grid, mask.spacing) == mask

# smaller masks are padded with background around the center, larger ones cropped
framed = center_fit(mask)
print("framed:", framed.shape, "foreground pixels kept:",
      int((framed.labels > 0).sum()) == int((mask.labels > 0).sum()))

big = LabelMask(np.pad(mask.labels, 120), mask.spacing)
print("cropped from", big.shape, "to", center_fit(big).shape)
