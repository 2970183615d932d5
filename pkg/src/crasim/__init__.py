"""Simulation and reconstruction toolkit for compressive reflector antenna (CRA) mm-wave imaging.

Modules
-------
geometry   offset-parabolic reflector meshes and their pseudo-random perturbation
forward    physical-optics aperture synthesis, RoI propagation and sensing matrices
scene      RoI voxel grids, targets and noisy measurement synthesis
solver     row-split consensus ADMM for norm-1 regularised least squares
postproc   cross-range averaging, thresholding and image / diversity metrics
config     INI experiment configuration
pipeline   staged end-to-end runs with on-disk artifacts
cli        ``crasim`` command-line entry point
"""
__version__ = "0.1.0"
