"""Reference scorer adapter and transform parity fixture generator.

Speaks the harness's newline-delimited JSON protocol over stdio around a
TorchScript model, and renders golden perturbation outputs with the
torchvision functional transforms for the harness's parity suite.
"""

__version__ = "0.1.0"
