from ._bced import (
    Network,
    build,
    default_config_text,
    fit,
    load_dataset,
    load_model,
    op_counts,
    pixel_accuracy,
    render_dataset,
    render_sample,
)

__all__ = [
    "Network",
    "build",
    "default_config_text",
    "fit",
    "load_dataset",
    "load_model",
    "op_counts",
    "pixel_accuracy",
    "render_dataset",
    "render_sample",
]
