"""Check-in aware POI embedding toolkit.

The pieces, bottom to top: corpus ingestion and derived matrices, four
neighborhood sampling strategies, per-edge geography / co-occurrence / text
encoders, an edge-conditioned multi-head attention block, a noisy top-k
mixture over the four per-strategy outputs, masked reconstruction
pretraining, a Weisfeiler-Leman expressivity lab, and a leave-last-out
ranking probe.  Everything runs on float64 numpy with a small tape-based
reverse-mode engine; no deep-learning framework is involved.
"""

__version__ = "0.1.0"

from .config import RunConfig  # noqa: F401
from .corpus import CheckinCorpus, ingest  # noqa: F401
