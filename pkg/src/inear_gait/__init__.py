"""Gait identification from in-ear microphone recordings.

The pipeline turns raw in-ear audio into fixed-length gait cycles
(:mod:`inear_gait.dsp`), describes each cycle with spectral features
(:mod:`inear_gait.features`), enrolls a legitimate user with an SVM
(:mod:`inear_gait.classify`) and scores the result with the FAR/FRR/BAC
protocols in :mod:`inear_gait.evaluate`.  :mod:`inear_gait.synth` generates
ground-truth walks for testing and :mod:`inear_gait.cost` models the energy
and latency of on-device versus offloaded identification.
"""

__version__ = "0.1.0"
