"""
satlab - Self-adaptive training at desk scale.
Per-sample moving-average targets and confidence weights for learning from
corrupted data, with selective-classification and adversarial extensions.
"""

__version__ = "0.3.0"
