"""Spectral diagnostics for neural activations.

Thin Python layer over the native core: Marchenko-Pastur and Tracy-Widom
baselines, the 22-slot window descriptor, the SPAC activation container and
trained detection heads.
"""

from ._core import (
    FEATURE_COUNT,
    FEATURE_SCHEMA_VERSION,
    DataError,
    FormatError,
    Head,
    auroc,
    bbp_outlier_location,
    bbp_threshold,
    decode_container,
    descriptor,
    descriptor_series,
    eigenspectrum,
    encode_container,
    encode_frame,
    expected_window_count,
    feature_names,
    fit_mp,
    mp_cdf,
    mp_density,
    mp_quantile,
    mp_support,
    read_container,
    select_outliers,
    tw_standardize,
    tw_tail_probability,
    write_container,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
