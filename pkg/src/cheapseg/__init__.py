"""Fast semantic segmentation: texton forests, decorrelated specialists,
image-level priors, location potentials and a Potts CRF."""

__version__ = "0.1.0"
