"""Bridge service: real language models behind the adlm wire protocol."""

__version__ = "0.1.0"

__all__ = ["__version__"]
