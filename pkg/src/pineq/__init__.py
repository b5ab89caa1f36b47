"""pineq: shelf-life grading of pineapples from tap audio and photos.

A numpy-backed library covering the full desk-scale pipeline: WAV/PPM
ingestion, tap-centered audio DSP down to log-Mel maps, image
preparation, corpus management with stratified splits and audio/visual
pair sampling, and two classifier families (CNN ensemble and a
cross-modal token encoder) trained with a small reverse-mode autodiff
core.
"""

__version__ = "0.1.0"
