"""Partition-wise full-graph GNN training over a simulated memory hierarchy.

The package splits a graph with a switching-aware partitioner, trains a
GCN partition by partition with exact regathered gradients, and meters
every byte the schedule moves across a GPU / host / storage hierarchy so
the measured ledgers can be checked against closed-form expectations.
"""

from .dataset import LabeledDataset, load_dataset, make_random_dataset
from .graph import (
    CsrGraph,
    build_csr,
    generate_kronecker,
    generate_watts_strogatz,
)
from .hierarchy import (
    CACHE_GRANULARITIES,
    HierarchyConfig,
    IoLedger,
    POLICY_KINDS,
    PolicySpec,
    TierSession,
    schedule_partitions,
)
from .model import ModelState, create_model
from .partition import (
    PartitionerParams,
    PartitionQuality,
    PartitionResult,
    expansion_ratio,
    partition_objective,
    partitioner_memory_report,
    random_partition,
    switching_aware_partition,
)
from .plan import PartitionPlan, build_partition_plan
from .simulate import (
    crossover_sweep,
    crossover_threshold,
    ledger_csv,
    ledger_summary,
    modeled_time,
    parse_ratio_range,
    per_partition_traffic,
    predicted_peak_memory,
    predicted_traffic,
    read_amplification_report,
    simulate_epoch,
)
from .training import (
    finite_difference_check,
    partitioned_train,
    reference_train,
)

__all__ = [
    "CACHE_GRANULARITIES",
    "CsrGraph",
    "HierarchyConfig",
    "IoLedger",
    "LabeledDataset",
    "ModelState",
    "POLICY_KINDS",
    "PartitionPlan",
    "PartitionQuality",
    "PartitionResult",
    "PartitionerParams",
    "PolicySpec",
    "TierSession",
    "build_csr",
    "build_partition_plan",
    "create_model",
    "crossover_sweep",
    "crossover_threshold",
    "expansion_ratio",
    "finite_difference_check",
    "generate_kronecker",
    "generate_watts_strogatz",
    "ledger_csv",
    "ledger_summary",
    "load_dataset",
    "make_random_dataset",
    "modeled_time",
    "parse_ratio_range",
    "partition_objective",
    "partitioned_train",
    "partitioner_memory_report",
    "per_partition_traffic",
    "predicted_peak_memory",
    "predicted_traffic",
    "random_partition",
    "read_amplification_report",
    "reference_train",
    "schedule_partitions",
    "simulate_epoch",
    "switching_aware_partition",
]
