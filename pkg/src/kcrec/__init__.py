"""Knowledge concept recommendation over heterogeneous information networks.

Explicit (one-hop, relation-aware GCN) and implicit (soft meta-path) views of
the graph are learned jointly, sharpened by prototype-based contrastive
learning, fused by dual-head attention and trained with BPR.
"""
from kcrec.config import RunConfig
from kcrec.hin import Hin, Schema, load_dataset, split_interactions, synth_hin
from kcrec.model import KCRec
from kcrec.train import evaluate, train

__version__ = "0.1.0"

__all__ = ["RunConfig", "Hin", "Schema", "KCRec", "load_dataset", "split_interactions",
           "synth_hin", "train", "evaluate", "__version__"]
