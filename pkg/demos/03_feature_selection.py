"""
Kernel ranking and LASSO selection
==================================

Two ways to shrink the 32-kernel bottleneck: count how often a kernel lands in
the per-case GradCAM top 5 (FSR), or keep the LASSO support over the flattened
features (FSL).
"""
import numpy as np

from echolatent import featsel, segnet
from echolatent.phantom import PhantomConfig, generate_dataset

cases = generate_dataset(PhantomConfig(frames=8, height=32, width=32, seed=1), 12)
labels = np.array([c.label for c in cases])
net = segnet.build(seed=1)

weights = [featsel.kernel_weights(net, c.video) for c in cases]
print("top-5 of case 0:", featsel.top_kernels(weights[0].alpha))
fsr = featsel.fsr_select(weights)
print("FSR keeps kernels", fsr.indices, "reduction %.3f" % fsr.reduction_ratio)

feats = segnet.extract_bottleneck(net, cases[0].video)
cam = featsel.gradcam_map(feats, weights[0], upsample_to=(8, 32, 32))
print("gradcam", cam.map.shape, "->", cam.upsampled.shape, "min", cam.map.min())

flat = np.stack([featsel.flatten_features(segnet.extract_bottleneck(net, c.video)) for c in cases])
print("flattened features:", flat.shape)
fsl = featsel.fsl_select(flat, labels, target_keep_fraction=0.10)
print("FSL keeps", len(fsl.indices), "of", fsl.n_features, "alpha %.4g" % fsl.alpha)

# plain LASSO on a toy problem: only the first column matters
rng = np.random.default_rng(0)
X = rng.normal(size=(40, 6))
fit = featsel.lasso_fit(X, X[:, 0] + 0.1 * rng.normal(size=40), alpha=0.1)
print("support", fit.support, "converged", fit.converged)
