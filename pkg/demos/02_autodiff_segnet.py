"""
Autodiff and the LV segmenter
=============================

A small reverse-mode engine drives a 3D U-Net.  First a gradient by hand, then
a few epochs of training on phantom videos.
"""
import numpy as np

from echolatent import ops, segnet
from echolatent.phantom import PhantomConfig, generate_dataset
from echolatent.tensor import backward, parameter

x = parameter([1.0, -2.0, 3.0])
y = ops.reduce_sum(ops.mul(ops.relu(x), x))  # sum relu(x) * x
backward(y)
print("d/dx:", x.grad)  # 2x where x > 0, else 0

cases = generate_dataset(PhantomConfig(frames=8, height=32, width=32), 8)
net = segnet.build(levels=3, base_channels=8, seed=0)
print("bottleneck channels:", net.bottleneck_channels)

res = segnet.train([c.video for c in cases[:6]], [c.mask for c in cases[:6]], net,
                   segnet.TrainConfig(epochs=15, batch_size=2))
print("loss by epoch:", np.round(res.loss_history, 3))

for c in cases[6:]:
    prob = segnet.segment(res.params, c.video)
    print(c.case_id, "held-out dice %.3f" % segnet.dice(prob > 0.5, c.mask))

feats = segnet.extract_bottleneck(res.params, cases[0].video)
print("bottleneck features:", feats.shape)
