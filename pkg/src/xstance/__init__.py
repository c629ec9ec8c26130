"""Zero-shot cross-lingual stance detection: translation augmentation,
adversarial language adaptation with distillation, and evaluation."""

__version__ = "0.1.0"
