"""Guided Complement Entropy training, adversarial attacks and loss landscapes on a NumPy autodiff core."""

__version__ = "0.1.0"
