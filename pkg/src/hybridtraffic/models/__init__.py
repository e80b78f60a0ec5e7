from .base import DemandRequest, TrafficModel
from .ctm import CtmModel
from .newell import NewellModel
from .twoqueue import TwoQueueModel

__all__ = [
    "DemandRequest",
    "TrafficModel",
    "CtmModel",
    "NewellModel",
    "TwoQueueModel",
]
