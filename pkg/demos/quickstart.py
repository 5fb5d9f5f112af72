"""Minimal end-to-end walkthrough: synthesize, train, segment, score.

Runs in about a minute on one CPU core by using a small corpus and a
narrow model. Artifacts land in ./quickstart_out.
"""

from pathlib import Path

import numpy as np

from flynet import synth, training
from flynet.checkpoint import load_checkpoint, save_checkpoint
from flynet.data import stack_images, stack_masks
from flynet.metrics import binarize, hard_iou
from flynet.optim import AdamHyper

out = Path("quickstart_out")
out.mkdir(exist_ok=True)

# a stage-balanced corpus of 6 tiny recordings, fully deterministic
corpus = synth.make_corpus(datasets_per_stage=2, n_frames=12, resolution=32,
                           seed=7)
test_set = corpus[1]                       # hold out one larva recording
val_sets = [corpus[4]]                     # validate on one adult
train_sets = [ds for ds in corpus if ds not in (test_set, val_sets[0])]
print(f"corpus: {[ds.id for ds in corpus]}")

config = training.TrainConfig(
    arch="flynet", base_width=2, input_size=32, batch_size=4,
    adam=AdamHyper(lr=3e-3), max_epochs=8, patience=5, min_delta=0.001,
    seed=0, augment=False)
ckpt, history = training.train(config, train_sets, val_sets, log=print)

save_checkpoint(ckpt, out / "model.ckpt")
ckpt = load_checkpoint(out / "model.ckpt")  # bit-exact roundtrip

# segment the held-out recording and score each frame
probs = training.predict_probs(ckpt.spec, ckpt.params,
                               stack_images(test_set.frames),
                               config.batch_size)
masks = binarize(probs, config.binarize_threshold)
truth = stack_masks(test_set.frames)
ious = [hard_iou(masks[i, 0], truth[i, 0].astype(np.uint8))
        for i in range(masks.shape[0])]
print(f"\nheld-out {test_set.id}: mean IOU {np.mean(ious):.4f} "
      f"(best epoch {history.best_epoch})")
print(f"checkpoint: {out / 'model.ckpt'}")
