"""Cross-lingual transfer learning for NMT without shared vocabularies."""

__version__ = "0.1.0"
