"""Meta-learned class reweighting for imbalanced multi-label training.

Thin wrapper over the C++ core; see ``metabalance._metabalance`` for the
compiled entry points.
"""

from ._metabalance import (
    ArgumentError,
    ConfigError,
    Error,
    FormatError,
    GenerationError,
    MissingClassError,
    ShapeError,
    apply_constraint,
    bce_per_class,
    compare,
    generate,
    generate_dataset,
    imbalance_ratio,
    imbalance_ratio_counts,
    inv_freq_meta_loss,
    load_dataset,
    recall_at_k,
    train,
    weighted_train_loss,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "Error",
    "FormatError",
    "GenerationError",
    "MissingClassError",
    "ShapeError",
    "apply_constraint",
    "bce_per_class",
    "compare",
    "generate",
    "generate_dataset",
    "imbalance_ratio",
    "imbalance_ratio_counts",
    "inv_freq_meta_loss",
    "load_dataset",
    "recall_at_k",
    "train",
    "weighted_train_loss",
]
