"""Monte Carlo verification suites with persisted, replayable replica records."""

from .config import (DEFAULT_PARAMS, DEFAULT_THRESHOLDS, SUITES, ConfigError, ExperimentConfig,
                     MethodOptions, TwOptions)
from .records import ReplicaRecord, RecordWriter, read_records, repair, same_content
from .suites import (KERNELS, ReplicaRejected, Unit, load_sidecar_config, plan_units, run_suite,
                     run_unit)
from .summary import Check, SuiteSummary, summarize, tw_reference_for, write_summary


def run_transition(config, **kw):
    return run_suite(config, **kw)


def run_clt(config, which=None, **kw):
    if which is not None and which != config.suite:
        raise ConfigError(f"config suite is {config.suite!r}, not {which!r}")
    return run_suite(config, **kw)


run_independence = run_edge_suite = run_corner_accuracy = run_stickiness = run_universality = run_suite

__all__ = [
    "DEFAULT_PARAMS", "DEFAULT_THRESHOLDS", "SUITES", "ConfigError", "ExperimentConfig",
    "MethodOptions", "TwOptions", "ReplicaRecord", "RecordWriter", "read_records", "repair",
    "same_content", "KERNELS", "ReplicaRejected", "Unit", "load_sidecar_config", "plan_units",
    "run_suite", "run_unit", "Check", "SuiteSummary", "summarize", "tw_reference_for",
    "write_summary", "run_transition", "run_clt", "run_independence", "run_edge_suite",
    "run_corner_accuracy", "run_stickiness", "run_universality",
]
