"""fedhub: a single-binary federated knowledge-hub node.

An ontology-governed, provenance-rich fact store with fact-level visibility
control, declarative ingestion, entity linking, cross-node federated query,
and a compliance-rule engine that gates investigation workflow steps.
"""

__version__ = "0.1.0"
