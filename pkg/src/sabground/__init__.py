"""Answer grounding with sentence-conditioned channel attention, on a small numpy autodiff core."""

__version__ = "0.1.0"
