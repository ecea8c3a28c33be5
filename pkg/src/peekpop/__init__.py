"""Peeking-based popularity prediction for information cascades."""
from .corpus import AdoptionLog, IdTable, SocialGraph, UserMeta, load_adoptions, load_graph, load_meta
from .features import FeatureMatrix, FeatureSchema, feature_schema, featurize_cohort
from .learner import LogisticRegressionGD, Standardizer, cross_validate
from .synth import SynthConfig, generate_graph, simulate_adoptions
from .windows import CohortSpec, build_fixed_k_cohort, build_kt_cohort

__version__ = "0.1.0"

__all__ = [
    "AdoptionLog", "IdTable", "SocialGraph", "UserMeta", "load_adoptions", "load_graph", "load_meta",
    "FeatureMatrix", "FeatureSchema", "feature_schema", "featurize_cohort",
    "LogisticRegressionGD", "Standardizer", "cross_validate",
    "SynthConfig", "generate_graph", "simulate_adoptions",
    "CohortSpec", "build_fixed_k_cohort", "build_kt_cohort",
]
