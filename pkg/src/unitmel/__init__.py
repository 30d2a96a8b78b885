"""unitmel: expressive unit-to-Mel synthesis with noise-robust expressivity embeddings.

The pipeline turns discrete speech units (plus per-unit durations, a language
tag, and a reference-audio expressivity embedding) into 80-band log-Mel
spectrograms.  The expressivity encoder is trained in two stages: plain
reconstruction pretraining, then teacher/student self-distillation with noise
augmentation so that the embedding ignores additive background noise.
"""

__version__ = "0.1.0"
