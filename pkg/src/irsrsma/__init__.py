"""Max-min fair uplink rate-splitting with an IRS-aided channel.

Library layout: `channel` synthesizes multipath channels and the CSIT error
model, `rates` evaluates successive-group-decoding rates, `beamform_gpi`,
`phase_opt`, `power_alloc`, and `grouping` optimize one variable block each,
`ao` alternates them, and `harness` runs seeded experiment sweeps.
"""

from .ao import AoResult, run_ao
from .channel import ChannelSet, CsitModel, SystemConfig, sample_channels
from .rates import GroupPartition, SolutionState

__version__ = "0.1.0"

__all__ = [
    "AoResult", "ChannelSet", "CsitModel", "GroupPartition", "SolutionState",
    "SystemConfig", "run_ao", "sample_channels", "__version__",
]
