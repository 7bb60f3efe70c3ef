"""Attack scenario reconstruction over system provenance graphs."""
from .anomaly import AnomalyReport, EmbeddingConfig, IForestConfig, detect
from .pattern import AttSpt, PatternTree, build_technique_pt, derive_tactic_pt
from .provenance import Entity, EntityKind, Event, ProvenanceGraph, degrees, ingest_events
from .reasoning import CandidatePath, ConfidenceParams, ScenarioGraph, filter_and_merge, traverse
from .scoring import EdgeScoreBreakdown, ScoringParams, score_edges
from .subgraph import AnomalySubgraph, SynthEdge, compress
from .ttp import TacticMap, TtpAnnotation

__version__ = "0.1.0"
