"""
The file-based pipeline, end to end
===================================

Everything the library does is also reachable from the ``vitsplice``
command.  This script drives it through ``main()`` on a deliberately tiny
model so it finishes in seconds.  Swap in the default config (just
``seed = ...``) and a 500-step run for real results.
"""
import tempfile
from pathlib import Path

from vitsplice.harness.cli import main

TINY = """\
seed = 3
vit.image_size = 32
vit.patch_size = 16
vit.model_dim = 16
vit.depth = 2
vit.heads = 2
vit.mlp_hidden = 32
vit.head_hidden = 32
train.steps = 40
train.batch_size = 8
"""

work = Path(tempfile.mkdtemp(prefix="vitsplice_demo_"))
cfg = work / "tiny.cfg"
cfg.write_text(TINY)
print(f"working in {work}")


def run(*argv):
    print("$ vitsplice", " ".join(str(a) for a in argv))
    code = main([str(a) for a in argv])
    print(f"  -> exit {code}")
    return code


# pristine images for training, spliced images with masks for testing
run("gen-data", "--seed", 3, "--out", work / "data", "--n-pristine", 4, "--n-spliced", 4, "--image-size", 96, "--sizes", "16,32")
run("train", "--config", cfg, "--data", work / "data" / "pristine", "--out", work / "run", "--deterministic")
run("detect", "--config", cfg, "--checkpoint", work / "run" / "model.ckpt", work / "data" / "spliced", "--out", work / "detect")
print("  files per image:", sorted(p.name.split("_", 2)[-1] for p in (work / "detect").glob("spliced_0000_*")))

# score only the spliced images: point --gt at a folder holding their masks
gt = work / "gt"
gt.mkdir()
for p in (work / "data" / "masks").glob("spliced_*.png"):
    (gt / p.name).write_bytes(p.read_bytes())
run("eval", "--config", cfg, "--pred", work / "detect", "--gt", gt, "--pred-suffix", "_mask_v2", "--out", work / "eval")
print((work / "eval" / "report.csv").read_text())

# a config typo is an error, not a silent default
run("train", "--config", cfg, "--set", "train.stpes=10", "--out", work / "bad")
