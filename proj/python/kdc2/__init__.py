"""Python bindings for the kdc2 EEG contrastive pipeline."""

from ._kdc2 import (
    ContractError,
    DimensionError,
    Error,
    LookupError,
    MontageError,
    NumericError,
    OracleError,
    ParseError,
    ValidationError,
    barlow_twins_loss,
    cli,
    cross_correlation,
    cross_view_infonce,
    decode_recording,
    default_montage_names,
    differential_entropy,
    encode_recording,
    laplacian,
    load_checkpoint,
    montage_channels,
    preliminary_features,
    pretrain_loss,
    run_oracle_suite,
    save_checkpoint,
    scalp_view,
    synth_generate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
