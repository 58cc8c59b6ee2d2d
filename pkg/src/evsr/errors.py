"""Error taxonomy shared by the library and the CLI.

Each class carries a machine-parseable category string and the process exit
code the CLI maps it to: 1 usage/config, 2 data, 3 resource ceiling,
4 numerical failure.
"""


class EvsrError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(EvsrError):
    category = "config_error"
    exit_code = 1


class DataError(EvsrError):
    category = "data_error"
    exit_code = 2


class CheckpointNotFoundError(DataError):
    category = "checkpoint_not_found"


class ResourceError(EvsrError):
    category = "resource_ceiling"
    exit_code = 3


class NumericalError(EvsrError):
    category = "numerical_failure"
    exit_code = 4
