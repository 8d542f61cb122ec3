"""Simulated multi-level checkpoint/restart for a Cluster-Booster machine."""

from .cluster_model import ClusterSpec, build_cluster, default_spec, load_config
from .ckpt_engine import Checkpointer, CkptDb, FlushMode, SetState, Strategy, price_checkpoint
from .recovery import FailureEvent, FailureKind, inject_failure, plan_recovery, restart
from .simnet import Engine

__version__ = "0.1.0"

__all__ = [
    "ClusterSpec",
    "build_cluster",
    "default_spec",
    "load_config",
    "Checkpointer",
    "CkptDb",
    "FlushMode",
    "SetState",
    "Strategy",
    "price_checkpoint",
    "FailureEvent",
    "FailureKind",
    "inject_failure",
    "plan_recovery",
    "restart",
    "Engine",
]
