"""Command-line entry point, run configuration and report figures."""
from .config import (
    OUT_ENV,
    SCHEMA,
    ConfigError,
    RunConfig,
    append_record,
    derive_seed,
    make_record,
    parse_config,
    read_records,
)
from .main import COMMANDS, build_parser, dispatch, main
