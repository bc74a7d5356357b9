"""Slotted simulator for load balancing dynamic flows across fading wireless APs."""
from flowbal.model import (ArrivalLaw, ChannelLaw, ConfigError, Flow, FlowSizeLaw, SystemConfig,
                           SystemState, default_setup, step, workload)
from flowbal.engine import RunConfig, RunResult, RunSummary, run

__version__ = "0.1.0"
