"""Writer-dependent online signature verification on numpy.

Modules: ``signals`` (formats, dataset model, synthetic generator),
``features`` (catalogues, extraction, normalisation), ``reduce`` (k-means
feature clustering and max-MAD selection), ``nn`` (hand-written CNN-LSTM
verifier), ``metrics`` and ``protocol`` (few-shot evaluation) and ``cli``.
"""

from . import errors
from .signals import (
    Dataset,
    Label,
    SignaturePoint,
    SignatureSample,
    SynthConfig,
    WriterRecord,
    generate_synthetic_dataset,
    parse_canonical,
    parse_svc,
    write_canonical,
)
from .features import FeatureCatalogue, FeatureSignatureMatrix, FeatureVector, catalogue, extract_features
from .reduce import ReducedFeatureIndexSet, kmeans, mad, reduce_features, select_representatives
from .metrics import compute_aer, compute_curves, compute_eer
from .protocol import EvalReport, ProtocolConfig, run_protocol, split_trial

__version__ = "0.1.0"
