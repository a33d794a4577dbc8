#!/usr/bin/env python3
"""Anatomy of one task-to-task expansion, step by step.

Runs the real trainer on a tiny two-task stream and then inspects what it
left behind: the second-moment accumulators, the residual basis split, the
closed-form band coordinates, and the pairwise discriminants.  Useful as a
map of which object holds what.
"""

import numpy as np

from ffnb.config import validate
from ffnb.metrics import advance, fresh_state, materialize_stream


def main():
    raw = {
        "stream": {
            "synth": {
                "n_tasks": 2,
                "classes_per_task": 2,
                "d0": 8,
                "n_per_class": 25,
                "separation": 5.0,
                "seed": 3,
            }
        },
        "train": {"epochs": 5, "batch_size": 10, "band_size": 2},
        "save_checkpoint": False,
        "seed": 3,
    }
    config = validate(raw)
    stream = materialize_stream(config)
    state = fresh_state(config, stream)
    tc = config.train_config()

    advance(state, stream, tc)
    print("=== after task 0 ===")
    for layer in state.net.feature_layers:
        band = layer.bands[-1]
        print(
            f"layer {layer.index}: band for task 0 is {band.alpha.shape[0]}x"
            f"{band.alpha.shape[1]} alpha coordinates, frozen={band.frozen}, "
            f"basis p={band.basis.p} of d={band.basis.dim}"
        )
    print(f"classifier knows classes {state.classifier.visited}, "
          f"{len(state.classifier.pairs)} pair(s)")

    advance(state, stream, tc)
    print()
    print("=== after task 1 ===")
    for layer in state.net.feature_layers:
        print(f"layer {layer.index}: out_dim {layer.out_dim}, "
              f"{len(layer.bands)} bands")
        for band in layer.bands:
            w = band.weights()
            print(
                f"   task {band.task}: alpha {band.alpha.shape}, basis keeps "
                f"p={band.basis.p}/{band.basis.dim} principal axes, "
                f"effective weights {w.shape}, |W|={np.linalg.norm(w):.3f}"
            )

    # the second band's rows were regressed onto a task-indicator target
    # spanning everything visited, so they stay quiet on task-0 data
    x0 = stream.tasks[0].train_matrix()
    x1 = stream.tasks[1].train_matrix()
    first = state.net.feature_layers[0]
    new_band = first.bands[-1]
    resp0 = np.linalg.norm(new_band.weights() @ x0) / np.sqrt(x0.shape[1])
    resp1 = np.linalg.norm(new_band.weights() @ x1) / np.sqrt(x1.shape[1])
    print()
    print(f"new layer-1 band response (rms) on old data {resp0:.4f} "
          f"vs own data {resp1:.4f}")

    print()
    print("pairwise discriminants (w dim, bias):")
    for (pos, neg), h in sorted(state.classifier.pairs.items()):
        print(f"  class {pos} vs {neg}: w in R^{h.w.shape[0]}, bias {h.bias:+.3f}")

    from ffnb.metrics import union_accuracy

    acc = union_accuracy(state.net, state.classifier, stream, after_task=1)
    print()
    print(f"union test accuracy over both tasks: {acc:.2f}%")


if __name__ == "__main__":
    main()
