"""Multi-view tensor fusion for audio-visual target speaker extraction.

A desk-scale, trainable pipeline: synthetic two-speaker mixtures, per-view
lip-embedding sequences, pairwise outer-product fusion, a dual-path
separator, and an SI-SDR training loop — all on a small reverse-mode
autodiff core.
"""

__version__ = "0.1.0"
