"""mapbench: benchmark-campaign orchestration for mapping runs.

Submodules
----------
trajeval   trajectory parsing, association, alignment, error metrics
config     algorithm/dataset/configuration models and combination expansion
dataprep   frame-rate/resolution dataset derivation with content-addressed cache
executor   sandboxed run execution with resource profiling
store      embedded persistence, ingest, evaluation, search
analysis   analysis-spec parsing, selection algebra, the analysis modes
scheduler  cluster/cloud planning, transfer cost model, campaign simulator
service    HTTP API and CLI with deployment-mode gating
"""

__version__ = "0.1.0"
