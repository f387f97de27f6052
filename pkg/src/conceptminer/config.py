"""Pipeline configuration with YAML overrides.

Every tunable threshold lives here with its default; a config file only
needs the keys it wants to change. Unknown keys are rejected so typos
fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import yaml


@dataclass(frozen=True)
class PipelineConfig:
    # query log ingestion
    min_clicks: int = 5
    window_days: int = 30
    # bootstrap pattern filter
    alpha: float = 0.6
    beta: float = 0.8
    delta: int = 2
    max_iters: int = 5
    # query-title alignment
    min_len: int = 2
    max_span: int = 12
    # sequence labeler
    crf_l2: float = 0.1
    crf_epochs: int = 200
    crf_tol: float = 1e-3
    # quality gate
    gate_threshold: float = 0.5
    gate_l2: float = 0.1
    gate_stumps: int = 0
    # key instance extraction
    top_k: int = 10
    delta_w: float = 0.5
    damping: float = 0.85
    # tagging
    delta_u: float = 0.58
    top_m: int = 3
    n_titles: int = 5
    # taxonomy
    delta_t: float = 0.3
    instance_threshold: float = 0.5
    # query rewriting
    budget: int = 10
    # embeddings
    emb_dim: int = 32
    emb_window: int = 2
    emb_min_count: int = 1
    # run control
    seed: int = 0
    threads: int = 1


def load_config(path: str | None) -> PipelineConfig:
    """Defaults overlaid with the YAML file's keys, if a path is given."""
    config = PipelineConfig()
    if path is None:
        return config
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return replace(config, **raw)
