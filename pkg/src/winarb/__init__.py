"""Two-stage windowed classification with label-inheritance diagnostics."""

__version__ = "0.1.0"

ABNORMAL = "abnormal"
NORMAL = "normal"
LABELS = (NORMAL, ABNORMAL)


def label_to_int(label: str) -> int:
    """Map a recording label to its class index (abnormal is the positive class)."""
    if label == ABNORMAL:
        return 1
    if label == NORMAL:
        return 0
    raise ValueError(f"unknown label {label!r}")


def int_to_label(value: int) -> str:
    return ABNORMAL if int(value) == 1 else NORMAL
