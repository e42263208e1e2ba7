"""Ear-canal-scan biometric keys with fuzzy-commitment authentication."""

from .config import DatasetConfig, FeatureConfig, KeygenConfig, SynthConfig
from .ecc import BchCode, DecodeFailure, bch_decode, bch_encode, get_code
from .features import CepstrumFeature, SpectrumFeature, extract_features
from .keygen import BiometricKey, HelperData, PopulationStats, enroll, extract_key, population_stats
from .protocol import Commitment, CredentialStore, EnrolledCredential, commit, verify

__version__ = "0.1.0"

__all__ = [
    "BchCode",
    "BiometricKey",
    "CepstrumFeature",
    "Commitment",
    "CredentialStore",
    "DatasetConfig",
    "DecodeFailure",
    "EnrolledCredential",
    "FeatureConfig",
    "HelperData",
    "KeygenConfig",
    "PopulationStats",
    "SpectrumFeature",
    "SynthConfig",
    "bch_decode",
    "bch_encode",
    "commit",
    "enroll",
    "extract_features",
    "extract_key",
    "get_code",
    "population_stats",
    "verify",
]
