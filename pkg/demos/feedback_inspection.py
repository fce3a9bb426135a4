"""Watch which class pairs the feedback signal singles out during training.

After each task the prototype bank holds one vector per seen class.  The
feedback matrix is their pairwise cosine similarity; the most similar pairs
are the ones the model is most likely to confuse, and their rows are what
gets fed back into the gates and the head.
"""
import numpy as np

from protossm import (PrototypeBank, ReplayBuffer, SdsmConfig, SdsmModel, SyntheticSpec,
                      TaskSchedule, TrainConfig, XorShiftRng, gen_synthetic, refresh, train_step)

train, _ = gen_synthetic(SyntheticSpec(6, 16, 100, separation=3.0, stddev=1.0, seed=1))
cfg = TrainConfig(lr=1e-2, alpha=0.99, m=2)
model = SdsmModel(SdsmConfig(16, 4, 16, 6), XorShiftRng(0))
bank = PrototypeBank(6, 16, cfg.alpha, cfg.tau)
buf, rng = ReplayBuffer(cfg.buffer_capacity), XorShiftRng(1)

for t, classes in enumerate(TaskSchedule.split(6, 2).tasks):
    idx = [i for k in classes for i in train.per_class[k]]
    order = rng.permutation(len(idx))
    for s in range(0, len(idx), 10):
        chunk = [idx[j] for j in order[s:s + 10]]
        train_step(model, bank, cfg, (train.inputs[chunk], train.labels[chunk]), buf, rng)
    state = refresh(bank, cfg.m)
    np.set_printoptions(precision=2, suppress=True)
    print(f"after task {t} (classes {classes}): top pairs {state.top_pairs}")
    print("  signal", state.signal)
