# Walk a synthetic lesion through every segmentation stage and save each
# intermediate image next to this script (demo_out/stages/).
from pathlib import Path

import numpy as np

from octabio import phantom
from octabio.imgcore import BinaryMask, CropRect, GrayImage, write_pgm
from octabio.metrics import overlap
from octabio.segmentation import STAGE_NAMES, PipelineConfig, label_components, otsu_threshold, pipeline_stages

out = Path(__file__).parent / "demo_out" / "stages"
out.mkdir(parents=True, exist_ok=True)

# A 510x510 phantom: bright curvy blob with holes, dim background, speckle.
img, truth = phantom.lesion_phantom(seed=0)
print("image", img.width, "x", img.height, "scan", img.scan_size_um, "um")
print("truth pixels", truth.count)

# Crop away a 5 px frame, as one would trim scanner borders.
rect = CropRect(5, 5, img.width - 10, img.height - 10)
cfg = PipelineConfig()
stages, mask = pipeline_stages(img, cfg, rect)

for k, name in enumerate(STAGE_NAMES, 1):
    a = stages[name]
    write_pgm(out / f"{k:02d}_{name}.pgm", a)
    print(f"{k:02d} {name:<11} shape={a.shape} distinct levels={len(np.unique(a))}")

# The Otsu threshold of the smoothed image decides what gets capped at 170.
print("otsu threshold of gaussian stage:", otsu_threshold(GrayImage(stages["gaussian"])))

# How many components survived the salt-and-pepper filter?
lm = label_components(BinaryMask(stages["saltpepper"] > 0), cfg.connectivity)
print("components after filtering:", lm.n_components, "largest:", max(lm.component_sizes.values(), default=0))

# Compare the final mask with the (cropped) ground truth.
t = truth.pixels[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w]
rep = overlap(mask, BinaryMask(t))
print(f"dice {rep.dice:.4f}  jaccard {rep.jaccard_index:.4f}")
print("stage images written to", out)
