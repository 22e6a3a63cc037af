"""Lung nodule characterization toolkit.

Fuses 3D shape descriptors (spherical-harmonic coefficients of a conformally
sphere-mapped surface mesh) with appearance descriptors (tri-planar intensity
patches) and rates malignancy 1-5 with a random forest.
"""

__version__ = "0.1.0"
