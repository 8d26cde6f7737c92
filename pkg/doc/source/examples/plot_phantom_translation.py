"""
Translating a pseudo-CBCT phantom
===============================================
On this page, you will find a small end-to-end run: a synthetic phantom, the structure-preserving
losses evaluated on it, and a few epochs of training on a handful of slices.
"""

##############################################################################
# Introduction
# -----------------------
# A planning-CT phantom is drawn from ellipses of known tissue HU, then degraded into a pseudo-CBCT
# with a per-tissue HU bias, cupping, rings, streaks and noise. The two volumes share the same
# anatomy, which is what makes the evaluation possible, but training never uses them as pairs.

import numpy as np
import tensorly as tl
import matplotlib.pyplot as plt

from ctxlate.data import PhantomSpec, DegradationSpec, generate_truth, degrade_to_cbct
from ctxlate.preprocess import preprocess_volume, unscale
from ctxlate.utils import loss_air, loss_grad, loss_tv, LossWeights
from ctxlate.networks import GeneratorSpec, DiscriminatorSpec
from ctxlate.training import StructurePreservingCycleGAN

truth, labels = generate_truth(PhantomSpec(canvas=(96, 128), n_slices=8, seed=1), return_labels=True)
cbct = degrade_to_cbct(truth, DegradationSpec(seed=2), labels)

fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
for axis, volume, title in zip(axes, (truth, cbct), ('planning CT', 'pseudo-CBCT')):
    axis.imshow(volume.slice(4), cmap='gray', vmin=-500, vmax=200)
    axis.set_title(title)
    axis.set_axis_off()

##############################################################################
# Structure-preserving losses
# ---------------------------
# The losses are TensorLy code. On NumPy arrays they are handy to inspect what a translation does
# to air and edges. Here the "translation" is the planning CT itself: the air regions match, so the
# air loss is small, while the gradient loss sees the artifacts and tissue contrast that differ.

x, _ = preprocess_volume(cbct)
y, _ = preprocess_volume(truth)
threshold = LossWeights().air_threshold_scaled
with tl.backend_context('numpy'):
    x, y = x[:, None].astype(np.float64), y[:, None].astype(np.float64)
    print('air  {:.4f}'.format(float(loss_air(x, y, y, y, threshold))))
    print('grad {:.4f}'.format(float(loss_grad(x, y, y, y))))
    print('tv of the planning CT {:.4f}, of the CBCT {:.4f}'.format(float(loss_tv(y)), float(loss_tv(x))))

##############################################################################
# A small training run
# --------------------
# Full-size networks need hours; a reduced generator and discriminator trained for a few epochs on
# 96 x 128 slices already move the CBCT intensities towards planning-CT values.

model = StructurePreservingCycleGAN(
    epochs_constant=3, epochs_decay=3, seed=0,
    crop={'height': 80, 'width': 112, 'jitter': 8},
    generator=GeneratorSpec(stem_channels=8, encoder_channels=(8, 16, 32), decoder_channels=(16, 8, 8),
                            n_residual_blocks=3, noise_after_block=1),
    discriminator=DiscriminatorSpec(channels=(8, 16, 32, 32, 32, 1)))
model.fit(x[:, 0], y[:, 0])

fig, axis = plt.subplots(figsize=(5, 3.5))
axis.plot(model.epoch_cycle_losses_, marker='o')
axis.set_xlabel('epoch')
axis.set_ylabel('mean cycle loss (CBCT)')

##############################################################################
# Translating the CBCT slices
# ---------------------------
# The generator works on scaled slices; ``unscale`` maps the result back to HU.

synthetic = unscale(np.clip(model.transform(x[:, 0]), -1, 1))
fig, axes = plt.subplots(1, 3, figsize=(11, 3.5))
for axis, image, title in zip(axes, (cbct.slice(4), synthetic[4], truth.slice(4)),
                              ('pseudo-CBCT', 'translated', 'planning CT')):
    axis.imshow(image, cmap='gray', vmin=-500, vmax=200)
    axis.set_title(title)
    axis.set_axis_off()
plt.show()
