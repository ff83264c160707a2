"""Claim-level verification and grounded regeneration for financial QA."""

from .claims import AtomicClaim, ClaimType, decompose_answer
from .corpus import Corpus
from .fixtures import generate_fixture_corpus
from .pipeline import Pipeline, PipelineConfig
from .regeneration import GroundedAnswer, apply_regeneration
from .retrieval import EvidenceSet, Retriever
from .verification import VerdictLabel, VerificationOutcome, verify_claims

__version__ = "0.1.0"

__all__ = [
    "AtomicClaim", "ClaimType", "Corpus", "EvidenceSet", "GroundedAnswer", "Pipeline", "PipelineConfig", "Retriever",
    "VerdictLabel", "VerificationOutcome", "apply_regeneration", "decompose_answer", "generate_fixture_corpus",
    "verify_claims",
]
