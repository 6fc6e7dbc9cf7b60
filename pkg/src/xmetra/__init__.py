"""Cross-lingual meta-transfer learning (two-stage first-order MAML) at desk scale."""

__version__ = "0.1.0"
