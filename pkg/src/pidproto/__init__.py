"""Dynamic prototype learning (birth and death of vMF mixture prototypes) for OOD detection."""

__version__ = "0.1.0"
