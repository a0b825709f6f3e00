from radiogan.data.build import BuildReport, ProtocolConfig, build_dataset
from radiogan.data.manifest import (
    BackgroundRef,
    CorpusData,
    DatasetManifest,
    ManifestError,
    SampleRef,
)
from radiogan.data.patches import (
    ImagePatch,
    SamplingError,
    SegMask,
    VoiBoundsError,
    extract_voi,
    resample_square,
    sample_background_centers,
    sample_nodule_slices,
    voi_slices,
    window_intensity,
)
from radiogan.data.synthetic import SyntheticCorpusConfig, generate_synthetic_corpus

__all__ = [
    "BackgroundRef",
    "BuildReport",
    "CorpusData",
    "DatasetManifest",
    "ProtocolConfig",
    "build_dataset",
    "ImagePatch",
    "ManifestError",
    "SampleRef",
    "SamplingError",
    "SegMask",
    "SyntheticCorpusConfig",
    "VoiBoundsError",
    "extract_voi",
    "generate_synthetic_corpus",
    "resample_square",
    "sample_background_centers",
    "sample_nodule_slices",
    "voi_slices",
    "window_intensity",
]
