from streamcnn.streaming.engine import (
    CycleStats,
    DeadlockError,
    PipelineStats,
    conv2d_stream,
    pool_stream,
    run_stream,
)
from streamcnn.streaming.fifo import FifoChannel, FifoOverflow, FifoUnderflow
from streamcnn.streaming.instructions import (
    InstructionArray,
    PoolLookup,
    build_instruction_array,
    build_pool_lookup,
    compute_mask,
)

__all__ = [
    "CycleStats",
    "DeadlockError",
    "FifoChannel",
    "FifoOverflow",
    "FifoUnderflow",
    "InstructionArray",
    "PipelineStats",
    "PoolLookup",
    "build_instruction_array",
    "build_pool_lookup",
    "compute_mask",
    "conv2d_stream",
    "pool_stream",
    "run_stream",
]
