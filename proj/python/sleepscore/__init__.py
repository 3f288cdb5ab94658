"""Sleep-stage scoring for raw single-channel EEG.

The heavy lifting lives in the compiled ``_core`` extension; this package
re-exports its surface.
"""

from ._core import (
    Config,
    Model,
    hypnogram_svg,
    hypnogram_text,
    load_model,
    make_config,
    parse_hypnogram,
    read_edf_annotations,
    read_edf_channel,
    score,
    stage_names,
)

__all__ = [
    "Config",
    "Model",
    "hypnogram_svg",
    "hypnogram_text",
    "load_model",
    "make_config",
    "parse_hypnogram",
    "read_edf_annotations",
    "read_edf_channel",
    "score",
    "stage_names",
]
