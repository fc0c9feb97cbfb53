"""pinnflow: physics-informed neural networks for steady incompressible flow."""

__version__ = "0.1.0"
