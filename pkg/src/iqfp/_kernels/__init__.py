"""Biquad cascade kernel with import-time implementation selection.

Prefers the compiled extension; falls back to the pure-NumPy version
when the extension was not built. Both expose the same `apply_sos`
contract and produce bit-identical float64 output.
"""

try:
    from ._biquad import IMPLEMENTATION, apply_sos
except ImportError:  # extension not built; NumPy path
    from .fallback import IMPLEMENTATION, apply_sos

__all__ = ["apply_sos", "IMPLEMENTATION"]
