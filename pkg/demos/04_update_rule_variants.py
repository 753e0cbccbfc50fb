#!/usr/bin/env python3
"""
Compare the two weight-decay placements in the adaptive optimizer on a single
scalar weight, then show why the coupled placement destroys parameters whose
gradient is exactly zero — the failure mode that makes whole-model fine-tuning
diverge when embedding rows sit out a few steps.
"""

import numpy as np

from ipsdm.optim import OptimizerHyperparams, adamw_step, init_state


def run_trace(z0, grads, hyper):
    tensors = {"z": np.array([z0], dtype=np.float64)}
    state = init_state(tensors)
    trace = [z0]
    for g in grads:
        adamw_step(tensors, {"z": np.array([g], dtype=np.float64)}, state, hyper)
        trace.append(float(tensors["z"][0]))
    return trace


def main():
    grads = [1.0, -0.5, 0.25, -0.125]
    print("same gradients, both decay placements (z0 = 0.3):")
    for variant in ("paper", "decoupled"):
        hyper = OptimizerHyperparams(
            learning_rate=1e-3, weight_decay=0.01, variant=variant
        )
        trace = run_trace(0.3, grads, hyper)
        steps = "  ".join(f"{z:+.6f}" for z in trace)
        print(f"  {variant:>9}: {steps}")
    print("with real gradients the two variants differ only slightly.\n")

    # Zero gradient is where they part ways. With g = 0 the moment estimates
    # stay exactly zero, so the coupled update divides the decay term by
    # (sqrt(0) + eps) and each step multiplies the weight by -(lr*wd/eps).
    hyper = OptimizerHyperparams(
        learning_rate=1e-3, weight_decay=0.01, epsilon=1e-8, variant="paper"
    )
    factor = hyper.learning_rate * hyper.weight_decay / hyper.epsilon
    print(f"coupled variant, gradient exactly 0: each step multiplies by "
          f"-(lr*wd/eps) = -{factor:.0f}")
    zeros = [0.0] * 6
    paper = run_trace(0.02, zeros, hyper)
    for step, z in enumerate(paper):
        print(f"  step {step}: z = {z:+.3e}")

    decoupled = run_trace(
        0.02, zeros,
        OptimizerHyperparams(learning_rate=1e-3, weight_decay=0.01, variant="decoupled"),
    )
    print("decoupled variant instead shrinks the weight geometrically toward 0:")
    print("  " + "  ".join(f"{z:+.6f}" for z in decoupled))
    assert abs(decoupled[-1]) < abs(decoupled[0])
    assert abs(paper[-1]) > 1e10 * abs(paper[0])
    print("\nthis is why the training pipeline defaults to the decoupled rule;")
    print("the coupled rule is kept for fidelity and can be selected in the config.")


if __name__ == "__main__":
    main()
