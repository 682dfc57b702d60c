"""navrl: goal-conditioned maze navigation with a batched actor-critic.

A self-contained stack: procedural maze worlds rendered by a software
raycaster (RGB + depth + segmentation), a recurrent actor-critic with
pixel-control / reward-prediction / vision auxiliary heads, replay-based
off-policy losses, curriculum start sampling, supervised pre-training of the
convolutional base, and a CLI harness for training, evaluation, and
ablation suites.
"""

__version__ = "0.1.0"
