"""Bundle-based distributed Davidson matvec with out-of-core Krylov storage."""

from .channels import (Bundle, ChannelCensus, LocalSource, MiniTask, MissingInput, aggregate,
                       build_channels, bundle_matvec, execute_bundle, pack)
from .factory import BundleQueue, FactoryConfig, FactoryNode, ReduceHub, factory_serve, run_hash
from .ooc import (CheckpointMismatch, CheckpointWriter, IntegrityError, OOCStore, RitzCheckpoint,
                  checkpoint_read, checkpoint_resume, checkpoint_write, layer_bytes)
from .worker import WorkerConfig, WorkerStats, worker_loop

__all__ = [
    "Bundle", "BundleQueue", "ChannelCensus", "CheckpointMismatch", "CheckpointWriter",
    "FactoryConfig", "FactoryNode", "IntegrityError", "LocalSource", "MiniTask", "MissingInput",
    "OOCStore", "ReduceHub", "RitzCheckpoint", "WorkerConfig", "WorkerStats", "aggregate",
    "build_channels", "bundle_matvec", "checkpoint_read", "checkpoint_resume", "checkpoint_write",
    "execute_bundle", "factory_serve", "layer_bytes", "pack", "run_hash", "worker_loop",
]
