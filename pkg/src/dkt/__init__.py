"""Deep knowledge tracing with hand-written recurrent cells and optimizers."""

__version__ = "0.1.0"
